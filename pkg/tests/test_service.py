import json

import numpy as np
import pytest

pytest.importorskip("fastapi")
from fastapi.testclient import TestClient

from gshead.aucode import AUCode
from gshead.pipeline import render_au_code, write_session
from gshead.pipeline.service import create_app
from gshead.rig import render_rig

from test_pipeline import bundle, staged_workdir  # fixtures


@pytest.fixture(scope="module")
def client(bundle, tmp_path_factory):
    sessions = tmp_path_factory.mktemp("sessions")
    from gshead.pipeline.animate import AnimationResult
    result = AnimationResult(frames=[np.zeros((8, 8, 3))],
                             au_trace=[AUCode.zeros()],
                             modulated_trace=[AUCode.zeros()])
    write_session(sessions / "demo", result)
    app = create_app(bundle, sessions_dir=sessions)
    return TestClient(app)


def test_health(client):
    doc = client.get("/health").json()
    assert doc["status"] == "ok"
    assert doc["kernel"] in ("cython", "python")


def test_text2au_endpoint(client):
    r = client.post("/text2au", json={"prompt": "A happy person"})
    assert r.status_code == 200
    doc = r.json()
    assert len(doc["mask"]) == 17 and len(doc["probs"]) == 17
    assert set(doc["mask"]) <= {0, 1}


def test_text2au_rejects_empty_prompt(client):
    assert client.post("/text2au", json={"prompt": "  "}).status_code == 400


def test_modulate_endpoint(client):
    r = client.post("/aucode/modulate", json={
        "codes": [[1.0] * 17], "mask": [1] * 17, "alpha": 0.5, "beta": 0.3})
    assert r.status_code == 200
    np.testing.assert_allclose(r.json()["codes"][0], 1.5)


def test_modulate_validates_inputs(client):
    bad_len = client.post("/aucode/modulate", json={
        "codes": [[1.0] * 16], "mask": [1] * 17})
    assert bad_len.status_code == 400
    bad_range = client.post("/aucode/modulate", json={
        "codes": [[9.0] * 17], "mask": [1] * 17})
    assert bad_range.status_code == 400
    bad_beta = client.post("/aucode/modulate", json={
        "codes": [[1.0] * 17], "mask": [1] * 17, "beta": 1.0})
    assert bad_beta.status_code == 400


def test_render_zero_code_returns_canonical(client, bundle):
    r = client.post("/render", json={"au_code": [0.0] * 17, "camera_id": 0,
                                     "frame": 0})
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    from gshead.splat.render import image_to_png_bytes
    canonical = render_rig(bundle.rig, bundle.cameras[0], bundle.render_options())
    assert r.content == image_to_png_bytes(canonical)


def test_render_byte_stable(client):
    body = {"au_code": [1.5] * 17, "camera_id": 0, "frame": 2}
    a = client.post("/render", json=body)
    b = client.post("/render", json=body)
    assert a.status_code == 200
    assert a.content == b.content


def test_render_validates_au_vector(client):
    assert client.post("/render", json={"au_code": [0.0] * 16}).status_code == 400
    assert client.post("/render", json={"au_code": [7.0] * 17}).status_code == 400


def test_render_unknown_camera_404(client):
    r = client.post("/render", json={"au_code": [0.0] * 17, "camera_id": 42})
    assert r.status_code == 404


def test_session_trace(client):
    doc = client.get("/session/demo/trace").json()
    assert doc["au_order"][0] == "AU01"
    assert client.get("/session/missing/trace").status_code == 404


def test_cli_parser_covers_spec_surface():
    from gshead.pipeline.cli import build_parser
    parser = build_parser()
    args = parser.parse_args(["train", "--stage", "2", "--config", "c.toml"])
    assert args.stage == 2
    args = parser.parse_args(["animate", "--audio", "f.wav", "--prompt", "hi",
                              "--out", "d/"])
    assert args.prompt == "hi"
    args = parser.parse_args(["eval", "--suite", "gradients"])
    assert args.suite == "gradients"
    args = parser.parse_args(["serve", "--port", "9001"])
    assert args.port == 9001


def test_cli_synth_writes_scenario(tmp_path):
    from gshead.pipeline.cli import main
    assert main(["synth", "--out", str(tmp_path / "scn")]) == 0
    assert (tmp_path / "scn" / "corpus" / "manifest.json").exists()
    assert (tmp_path / "scn" / "text_au_dataset.json").exists()
    assert (tmp_path / "scn" / "config.toml").exists()
    doc = json.loads((tmp_path / "scn" / "text_au_dataset.json").read_text())
    assert len(doc["entries"]) == 50
