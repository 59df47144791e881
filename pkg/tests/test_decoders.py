import numpy as np
import pytest
import torch

from gshead.aucode import AUCode, NUM_AUS
from gshead.decoders import (FEATURE_DIM, AdaptationEvent, FeatureLine, OPCNet,
                             RotNet, adapt_featureline, aggregate_feature,
                             aggregate_features, append_event,
                             axis_angle_to_quat_torch, decode_frame,
                             default_tau, distance_loss, featureline_reg,
                             load_events, modulate_opacity, opcmotion_loss,
                             replay_events)

from conftest import assert_grad_matches


@pytest.fixture
def fl():
    return FeatureLine(gaussian_count=12, seed=3)


def rand_code(rng):
    return AUCode(rng.uniform(0, 5, NUM_AUS))


# --- feature aggregation -------------------------------------------------------

def test_bank_shape_and_init_range(fl):
    bank = fl.numpy_bank()
    assert bank.shape == (17, 12, FEATURE_DIM)
    assert np.abs(bank).max() <= 0.01


def test_aggregate_zero_code_gives_zero(fl):
    out = aggregate_feature(fl, AUCode.zeros(), 4)
    np.testing.assert_array_equal(out, np.zeros(FEATURE_DIM))


def test_aggregate_one_hot_recovers_slice(fl):
    vals = np.zeros(NUM_AUS)
    vals[6] = 5.0
    out = aggregate_feature(fl, AUCode(vals), 2)
    expected = fl.numpy_bank()[6, 2] * (5.0 / (5.0 + 1e-6))
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_aggregate_matches_17_term_oracle(fl):
    rng = np.random.default_rng(4)
    code = rand_code(rng)
    i = 7
    got = aggregate_feature(fl, code, i)
    w = code.values / (code.values.sum() + 1e-6)
    expected = sum(w[k] * fl.numpy_bank()[k, i] for k in range(17))
    np.testing.assert_allclose(got, expected, atol=1e-9)


def test_aggregate_index_out_of_range(fl):
    with pytest.raises(IndexError):
        aggregate_feature(fl, AUCode.zeros(), 12)


# --- RotNet ---------------------------------------------------------------------

def test_axis_angle_identity_is_exact():
    q = axis_angle_to_quat_torch(torch.zeros(5, 3, dtype=torch.float64))
    np.testing.assert_array_equal(q.numpy(),
                                  np.tile([1.0, 0.0, 0.0, 0.0], (5, 1)))


def test_rotnet_untrained_returns_canonical_exactly():
    rng = np.random.default_rng(5)
    q0 = rng.normal(0, 1, (9, 4))
    q0 /= np.linalg.norm(q0, axis=1, keepdims=True)
    net = RotNet()
    out = net(torch.tensor(q0), torch.tensor(rng.uniform(0, 5, NUM_AUS)),
              torch.tensor(rng.normal(0, 1, (9, 3))))
    np.testing.assert_array_equal(out.detach().numpy(), q0)


def test_rotnet_deterministic_and_unit_norm():
    torch.manual_seed(7)
    net = RotNet()
    with torch.no_grad():  # randomize the zero-initialized output layer
        net.net[-1].weight.normal_(0, 0.5)
        net.net[-1].bias.normal_(0, 0.5)
    rng = np.random.default_rng(6)
    q0 = rng.normal(0, 1, (20, 4))
    q0 /= np.linalg.norm(q0, axis=1, keepdims=True)
    code = torch.tensor(rng.uniform(0, 5, NUM_AUS))
    pos = torch.tensor(rng.normal(0, 1, (20, 3)))
    a = net(torch.tensor(q0), code, pos).detach().numpy()
    b = net(torch.tensor(q0), code, pos).detach().numpy()
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-6)


# --- OPCNet and opacity modulation ------------------------------------------------

def test_opcnet_zero_init_outputs_zero():
    rng = np.random.default_rng(8)
    net = OPCNet()
    out = net(torch.tensor(rng.normal(0, 1, (6, FEATURE_DIM))),
              torch.tensor(rng.uniform(0, 5, NUM_AUS)),
              torch.tensor(rng.normal(0, 1, (6, 3))))
    np.testing.assert_array_equal(out.detach().numpy(), np.zeros(6))


def test_opcnet_batch_matches_per_point_loop():
    torch.manual_seed(9)
    net = OPCNet()
    with torch.no_grad():
        net.net[-1].weight.normal_(0, 0.5)
        net.net[-1].bias.normal_(0, 0.5)
    rng = np.random.default_rng(9)
    feats = torch.tensor(rng.normal(0, 1, (5, FEATURE_DIM)))
    code = torch.tensor(rng.uniform(0, 5, NUM_AUS))
    pos = torch.tensor(rng.normal(0, 1, (5, 3)))
    batch = net(feats, code, pos).detach().numpy()
    for i in range(5):
        single = net(feats[i:i + 1], code, pos[i:i + 1]).detach().numpy()
        np.testing.assert_allclose(batch[i], single[0], atol=1e-12)


def test_modulate_opacity_identity_at_zero():
    assert modulate_opacity(0.37, 0.0) == pytest.approx(0.37, abs=1e-15)


def test_modulate_opacity_saturation_bound():
    # alpha0 = 0.5 -> logit 0; delta -> +inf saturates at sigmoid(0.5)
    limit = 1.0 / (1.0 + np.exp(-0.5))
    assert modulate_opacity(0.5, 1e9) == pytest.approx(limit, abs=1e-12)
    assert limit == pytest.approx(0.62246, abs=1e-5)
    # strict interior of the band for finite deltas
    val = modulate_opacity(0.5, 3.0)
    assert 1.0 / (1.0 + np.exp(0.5)) < val < limit


def test_modulate_opacity_monotone():
    deltas = np.linspace(-4, 4, 21)
    vals = modulate_opacity(np.full(21, 0.3), deltas)
    assert np.all(np.diff(vals) > 0)


def test_modulate_opacity_rejects_boundary_alpha():
    with pytest.raises(ValueError):
        modulate_opacity(1.0, 0.0)


# --- losses -----------------------------------------------------------------------

def test_opcmotion_zero_case():
    assert float(opcmotion_loss(np.zeros((5, 3)), np.zeros(5))) == 0.0


def test_opcmotion_exact_balance():
    dmu = np.array([[2.0, 0.0, 0.0]])
    dalpha = np.array([2.0])
    assert float(opcmotion_loss(dmu, dalpha, gamma=1.0)) == pytest.approx(0.0)


def test_opcmotion_matches_loop_oracle():
    rng = np.random.default_rng(10)
    dmu = rng.normal(0, 1, (8, 3))
    dalpha = rng.normal(0, 1, 8)
    gamma, lam = 1.7, 0.001
    expected = lam * sum((np.linalg.norm(dmu[i]) - gamma * abs(dalpha[i])) ** 2
                         for i in range(8))
    assert float(opcmotion_loss(dmu, dalpha, gamma, lam)) == pytest.approx(expected, rel=1e-12)


def test_featureline_reg_zero_bank():
    fl0 = FeatureLine(gaussian_count=4, bank=np.zeros((17, 4, FEATURE_DIM)))
    assert float(featureline_reg(fl0)) == 0.0


def test_featureline_reg_constant_bank_kills_smoothness():
    bank = np.tile(np.random.default_rng(11).normal(0, 1, (1, 4, FEATURE_DIM)),
                   (17, 1, 1))
    fl_const = FeatureLine(gaussian_count=4, bank=bank)
    got = float(featureline_reg(fl_const, lambda_sparse=0.0, lambda_smooth=1.0))
    assert got == pytest.approx(0.0, abs=1e-18)


def test_featureline_reg_matches_oracle(fl):
    bank = fl.numpy_bank()
    expected = 0.01 * np.abs(bank).sum() + 0.001 * sum(
        np.sum((bank[k] - bank[k + 1]) ** 2) for k in range(16))
    assert float(featureline_reg(fl)) == pytest.approx(expected, rel=1e-12)


def test_distance_loss_zero_and_saturation():
    assert float(distance_loss(np.zeros((4, 3)), tau=0.1)) == 0.0
    one = np.array([[10.0, 0.0, 0.0]])  # displaced 10x beyond tau=1
    assert float(distance_loss(one, tau=1.0, lam_move=0.1)) == pytest.approx(0.1)


def test_distance_loss_matches_oracle():
    rng = np.random.default_rng(12)
    dmu = rng.normal(0, 0.5, (9, 3))
    tau = 0.4
    expected = 0.1 * sum(min(np.linalg.norm(dmu[i]), tau) for i in range(9))
    assert float(distance_loss(dmu, tau)) == pytest.approx(expected, rel=1e-12)


def test_default_tau_fraction_of_diagonal():
    assert default_tau(2.0) == pytest.approx(0.1)


def test_decoder_loss_gradients_match_fd():
    rng = np.random.default_rng(13)
    dmu0 = torch.tensor(rng.normal(0, 0.5, (6, 3)))
    dalpha = torch.tensor(rng.normal(0, 1, 6))
    assert_grad_matches(lambda m: opcmotion_loss(m, dalpha, gamma=1.3), dmu0)

    bank0 = torch.tensor(rng.normal(0, 0.5, (17, 3, FEATURE_DIM)))
    assert_grad_matches(featureline_reg, bank0)

    # keep every norm away from the tau kink so central differences are valid
    dmu1 = torch.tensor(rng.normal(0, 1.0, (6, 3)))
    norms = torch.linalg.norm(dmu1, dim=-1).numpy()
    tau = float((norms.min() + norms.max()) / 2)
    assert abs(norms - tau).min() > 1e-3
    assert_grad_matches(lambda m: distance_loss(m, tau), dmu1)


# --- frame decode ------------------------------------------------------------------

def test_untrained_decoders_reproduce_canonical_frame():
    from gshead.mesh import head_template
    from gshead.rig import init_rig_from_mesh
    rig = init_rig_from_mesh(head_template(rings=6, segments=8), nonfacial_count=10)
    v = rig.facial_count
    fl = FeatureLine(gaussian_count=v)
    attrs = decode_frame(rig, np.zeros((v, 3)),
                         AUCode(np.random.default_rng(14).uniform(0, 5, 17)),
                         fl, RotNet(), OPCNet())
    np.testing.assert_array_equal(attrs.positions, rig.positions[:v])
    np.testing.assert_array_equal(attrs.rotations, rig.quats[:v])
    np.testing.assert_array_equal(attrs.opacities, rig.opacities[:v])


# --- densify/prune bookkeeping -------------------------------------------------------

def test_adapt_clone_appends_copy(fl):
    out = adapt_featureline(fl, AdaptationEvent("clone", 3))
    assert out.gaussian_count == 13
    np.testing.assert_array_equal(out.numpy_bank()[:, -1], fl.numpy_bank()[:, 3])
    np.testing.assert_array_equal(out.numpy_bank()[:, :12], fl.numpy_bank())


def test_adapt_prune_single_column():
    fl1 = FeatureLine(gaussian_count=1, seed=1)
    out = adapt_featureline(fl1, AdaptationEvent("prune", 0))
    assert out.gaussian_count == 0


def test_adapt_clone_then_prune_is_identity(fl):
    cloned = adapt_featureline(fl, AdaptationEvent("clone", 5))
    back = adapt_featureline(cloned, AdaptationEvent("prune", 12))
    np.testing.assert_array_equal(back.numpy_bank(), fl.numpy_bank())


def test_adapt_rejects_bad_events(fl):
    with pytest.raises(ValueError):
        AdaptationEvent("merge", 0)
    with pytest.raises(IndexError):
        adapt_featureline(fl, AdaptationEvent("prune", 99))


def test_event_log_round_trip(tmp_path, fl):
    path = tmp_path / "events.jsonl"
    events = [AdaptationEvent("clone", 2), AdaptationEvent("split", 5),
              AdaptationEvent("prune", 0)]
    for e in events:
        append_event(path, e)
    assert load_events(path) == events
    replayed = replay_events(fl, events)
    assert replayed.gaussian_count == 12 + 2 - 1


def test_adapt_fuzz_matches_list_oracle(fl):
    rng = np.random.default_rng(15)
    current = fl
    oracle = [fl.numpy_bank()[:, i].copy() for i in range(fl.gaussian_count)]
    for _ in range(300):
        q = current.gaussian_count
        kind = rng.choice(["clone", "split", "prune"]) if q > 0 else "clone"
        if q == 0:
            break
        idx = int(rng.integers(q))
        event = AdaptationEvent(str(kind), idx)
        current = adapt_featureline(current, event)
        if event.kind in ("clone", "split"):
            oracle.append(oracle[idx].copy())
        else:
            oracle.pop(idx)
        assert current.gaussian_count == len(oracle)
    got = current.numpy_bank()
    for i, col in enumerate(oracle):
        np.testing.assert_array_equal(got[:, i], col)
