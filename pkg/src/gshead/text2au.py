"""Text-to-AU emotion controller.

Maps an emotion prompt to a binary AU activation mask through a small MLP over
text embeddings, trained with weighted focal BCE plus an InfoNCE term over
each entry's positive/negative paraphrases. The desk-scale embedder is a
hashed bag-of-words (offline, deterministic); a CLIP-style provider can be
slotted in behind the same interface.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .aucode import AU_ORDER, NUM_AUS, AUActivationMask

EMBED_DIM = 512
ENTRY_TYPES = ("simple expression", "complex combination", "emotion")


@dataclass
class TextAUEntry:
    description: str
    kind: str                  # one of ENTRY_TYPES, serialized as "type"
    labels: np.ndarray         # (17,) 0/1
    positives: list[str]
    negatives: list[str]

    def __post_init__(self):
        if self.kind not in ENTRY_TYPES:
            raise ValueError(f"unknown entry type {self.kind!r}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (NUM_AUS,) or not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be a 17-dim 0/1 vector")
        if len(self.positives) != 3 or len(self.negatives) != 3:
            raise ValueError("each entry carries exactly 3 positives and 3 negatives")
        if not self.description.strip():
            raise ValueError("empty description")


def entries_to_json(entries: list[TextAUEntry]) -> str:
    return json.dumps({
        "au_order": list(AU_ORDER),
        "entries": [{
            "description": e.description, "type": e.kind,
            "labels": e.labels.tolist(), "positives": e.positives,
            "negatives": e.negatives,
        } for e in entries],
    }, indent=1)


def entries_from_json(text: str) -> list[TextAUEntry]:
    doc = json.loads(text)
    if tuple(doc.get("au_order") or ()) != AU_ORDER:
        raise ValueError("au_order header mismatch in dataset")
    return [TextAUEntry(description=e["description"], kind=e["type"],
                        labels=np.asarray(e["labels"]), positives=list(e["positives"]),
                        negatives=list(e["negatives"]))
            for e in doc["entries"]]


def validate_dataset_file(path: str | Path) -> list[TextAUEntry]:
    """Parse + validate a user-supplied dataset; raises on any schema violation."""
    entries = entries_from_json(Path(path).read_text())
    seen = set()
    for e in entries:
        if e.description in seen:
            raise ValueError(f"duplicate description: {e.description!r}")
        seen.add(e.description)
    return entries


# ---------------------------------------------------------------------------
# embedding provider


class HashedBowEmbedder:
    """Deterministic bag-of-words embedding: each token hits 4 signed buckets."""

    def __init__(self, dim: int = EMBED_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.md5(f"{self.seed}:{token}".encode()).digest()
        vec = np.zeros(self.dim)
        for k in range(4):
            chunk = int.from_bytes(digest[4 * k:4 * k + 4], "little")
            idx = chunk % self.dim
            sign = 1.0 if (chunk >> 31) & 1 else -1.0
            vec[idx] += sign
        return vec

    def embed(self, prompt: str) -> np.ndarray:
        tokens = re.findall(r"[a-z0-9]+", prompt.lower())
        if not tokens:
            raise ValueError("empty prompt")
        vec = np.zeros(self.dim)
        for tok in tokens:
            vec += self.token_vector(tok)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise ValueError("prompt embedded to the zero vector")
        return vec / norm


# ---------------------------------------------------------------------------
# model and losses


@dataclass
class ControllerConfig:
    focal_alpha: float = 0.35
    focal_gamma: float = 3.0
    infonce_temperature: float = 0.07
    lambda_bce: float = 1.0
    lambda_infonce: float = 0.005
    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 300
    batch_size: int = 128
    hidden: int = 256
    contrast_dim: int = 128

    def __post_init__(self):
        if self.infonce_temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.focal_alpha < 1.0:
            raise ValueError("focal alpha must lie in (0, 1)")


class TextToAUController(nn.Module):
    def __init__(self, config: ControllerConfig | None = None,
                 embed_dim: int = EMBED_DIM, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.config = config or ControllerConfig()
        h = self.config.hidden
        self.trunk = nn.Sequential(nn.Linear(embed_dim, h, dtype=dtype), nn.ReLU())
        self.head = nn.Linear(h, NUM_AUS, dtype=dtype)
        self.contrast = nn.Linear(h, self.config.contrast_dim, dtype=dtype)

    def logits(self, embeddings: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(embeddings))

    def contrast_features(self, embeddings: torch.Tensor) -> torch.Tensor:
        z = self.contrast(self.trunk(embeddings))
        return z / z.norm(dim=-1, keepdim=True)


def focal_bce(probs: torch.Tensor, labels: torch.Tensor, alpha: float = 0.35,
              gamma: float = 3.0, eps: float = 1e-12) -> torch.Tensor:
    """Weighted focal binary cross-entropy, averaged over every element."""
    p = probs if torch.is_tensor(probs) else torch.tensor(np.asarray(probs, dtype=np.float64))
    y = labels if torch.is_tensor(labels) else torch.tensor(np.asarray(labels, dtype=np.float64))
    y = y.to(p.dtype)
    p = p.clamp(eps, 1.0 - eps)
    pos = -alpha * y * (1.0 - p) ** gamma * torch.log(p)
    neg = -(1.0 - alpha) * (1.0 - y) * p ** gamma * torch.log(1.0 - p)
    return (pos + neg).mean()


def infonce(anchor: torch.Tensor, positive: torch.Tensor, negatives: torch.Tensor,
            temperature: float = 0.07) -> torch.Tensor:
    """Contrastive loss over dot-product similarities (inputs already normalized)."""
    a = anchor if torch.is_tensor(anchor) else torch.tensor(np.asarray(anchor, dtype=np.float64))
    p = positive if torch.is_tensor(positive) else torch.tensor(np.asarray(positive, dtype=np.float64))
    n = negatives if torch.is_tensor(negatives) else torch.tensor(np.asarray(negatives, dtype=np.float64))
    sim_p = (a * p).sum(-1) / temperature
    sim_n = (n @ a) / temperature
    logits = torch.cat([sim_p.reshape(1), sim_n])
    return -torch.log_softmax(logits, dim=0)[0]


def controller_loss(model: TextToAUController, desc_emb: torch.Tensor,
                    labels: torch.Tensor, pos_emb: torch.Tensor,
                    neg_emb: torch.Tensor) -> torch.Tensor:
    """lambda_bce * focal BCE + lambda_infonce * per-entry InfoNCE."""
    cfg = model.config
    probs = torch.sigmoid(model.logits(desc_emb))
    bce = focal_bce(probs, labels, cfg.focal_alpha, cfg.focal_gamma)
    anchors = model.contrast_features(desc_emb)
    pos = model.contrast_features(pos_emb)
    contrast = torch.zeros((), dtype=desc_emb.dtype)
    for i in range(desc_emb.shape[0]):
        negs = model.contrast_features(neg_emb[i])
        contrast = contrast + infonce(anchors[i], pos[i], negs,
                                      cfg.infonce_temperature)
    contrast = contrast / desc_emb.shape[0]
    return cfg.lambda_bce * bce + cfg.lambda_infonce * contrast


def train_controller(model: TextToAUController, entries: list[TextAUEntry],
                     embedder: HashedBowEmbedder | None = None,
                     epochs: int | None = None, seed: int = 0) -> list[float]:
    """AdamW training on the entry set; one positive paraphrase per entry per epoch."""
    cfg = model.config
    embedder = embedder or HashedBowEmbedder()
    desc = torch.tensor(np.stack([embedder.embed(e.description) for e in entries]))
    labels = torch.tensor(np.stack([e.labels for e in entries]).astype(np.float64))
    pos = torch.tensor(np.stack([[embedder.embed(p) for p in e.positives]
                                 for e in entries]))
    neg = torch.tensor(np.stack([[embedder.embed(n) for n in e.negatives]
                                 for e in entries]))
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas,
                            weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(seed)
    curve = []
    n = len(entries)
    for epoch in range(epochs if epochs is not None else cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            pick = rng.integers(3, size=len(batch))
            loss = controller_loss(model, desc[batch], labels[batch],
                                   pos[batch, pick], neg[batch])
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(batch)
        curve.append(epoch_loss / n)
    return curve


def predict_mask(prompt: str, model: TextToAUController,
                 embedder: HashedBowEmbedder | None = None,
                 threshold: float = 0.5) -> tuple[AUActivationMask, np.ndarray]:
    """Probabilities and the >= threshold activation mask for one prompt."""
    embedder = embedder or HashedBowEmbedder()
    emb = torch.tensor(embedder.embed(prompt)).unsqueeze(0)
    with torch.no_grad():
        probs = torch.sigmoid(model.logits(emb)).squeeze(0).numpy()
    return AUActivationMask((probs >= threshold).astype(np.int64)), probs


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvaluationReport:
    overall_accuracy: float
    per_au: dict[str, dict[str, float]]
    mean_precision: float
    mean_recall: float
    mean_f1: float
    mean_accuracy: float


def evaluate(model: TextToAUController, entries: list[TextAUEntry],
             embedder: HashedBowEmbedder | None = None,
             threshold: float = 0.5) -> EvaluationReport:
    """Standard binary metrics over all (entry, AU) pairs, per-AU and macro."""
    preds = np.stack([predict_mask(e.description, model, embedder, threshold)[0].flags
                      for e in entries])
    labels = np.stack([e.labels for e in entries])
    per_au = {}
    for k, au in enumerate(AU_ORDER):
        per_au[au] = binary_metrics(labels[:, k], preds[:, k])
    return EvaluationReport(
        overall_accuracy=float((preds == labels).mean()),
        per_au=per_au,
        mean_precision=float(np.mean([m["precision"] for m in per_au.values()])),
        mean_recall=float(np.mean([m["recall"] for m in per_au.values()])),
        mean_f1=float(np.mean([m["f1"] for m in per_au.values()])),
        mean_accuracy=float(np.mean([m["accuracy"] for m in per_au.values()])),
    )


def binary_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> dict[str, float]:
    tp = float(np.sum((y_true == 1) & (y_pred == 1)))
    fp = float(np.sum((y_true == 0) & (y_pred == 1)))
    fn = float(np.sum((y_true == 1) & (y_pred == 0)))
    tn = float(np.sum((y_true == 0) & (y_pred == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / max(tp + fp + fn + tn, 1.0)
    return {"precision": precision, "recall": recall, "f1": f1, "accuracy": accuracy}


# ---------------------------------------------------------------------------
# seed dataset


def _aus(*names: str) -> np.ndarray:
    labels = np.zeros(NUM_AUS, dtype=np.int64)
    for name in names:
        labels[AU_ORDER.index(name)] = 1
    return labels


@dataclass
class _Concept:
    word: str
    kind: str
    labels: np.ndarray
    opposite: str
    phrasings: list[str]
    extras: list[str] = field(default_factory=list)


_EMOTION_TEMPLATES = ["A {w} person", "The person looks {w}",
                      "a person with a {w} expression"]
_EMOTION_POSITIVES = ["someone feeling {w}", "a very {w} face",
                      "this person seems {w}"]


def _emotion(word: str, labels: np.ndarray, opposite: str) -> _Concept:
    return _Concept(word=word, kind="emotion", labels=labels, opposite=opposite,
                    phrasings=[t.format(w=word) for t in _EMOTION_TEMPLATES],
                    extras=[t.format(w=word) for t in _EMOTION_POSITIVES])


def _expression(word: str, labels: np.ndarray, opposite: str,
                phrasings: list[str], extras: list[str],
                kind: str = "simple expression") -> _Concept:
    return _Concept(word=word, kind=kind, labels=labels, opposite=opposite,
                    phrasings=phrasings, extras=extras)


def _concepts() -> list[_Concept]:
    return [
        _emotion("sad", _aus("AU01", "AU02", "AU04", "AU15"), "happy"),
        _emotion("happy", _aus("AU06", "AU12"), "sad"),
        _emotion("happy-surprised",
                 _aus("AU01", "AU02", "AU05", "AU06", "AU12", "AU25"), "angry"),
        _emotion("surprised", _aus("AU01", "AU02", "AU05", "AU26"), "calm"),
        _emotion("angry", _aus("AU04", "AU05", "AU07", "AU23"), "happy"),
        _emotion("fearful", _aus("AU01", "AU02", "AU04", "AU05", "AU07", "AU25"),
                 "calm"),
        _emotion("disgusted", _aus("AU09", "AU10", "AU17"), "happy"),
        _emotion("contemptuous", _aus("AU12", "AU14"), "fearful"),
        _emotion("calm", np.zeros(NUM_AUS, dtype=np.int64), "surprised"),
        _expression("raised eyebrows", _aus("AU01", "AU02"), "frowning",
                    ["A person with raised eyebrows", "raised eyebrows on the face",
                     "the person raises both eyebrows"],
                    ["someone lifting their eyebrows", "eyebrows raised high",
                     "a face with raised eyebrows"]),
        _expression("concerned frown", _aus("AU01", "AU04"), "smiling",
                    ["A person with concerned frown", "a concerned frown",
                     "the person frowns with concern"],
                    ["a worried frowning face", "someone frowning with worry",
                     "concerned frown on the brow"]),
        _expression("winking", _aus("AU45"), "surprised",
                    ["a person is winking", "the person winks one eye",
                     "a winking face"],
                    ["someone winking playfully", "a quick wink",
                     "the person winks"]),
        _expression("smiling", _aus("AU06", "AU12"), "frowning",
                    ["the person is smiling", "a smiling person",
                     "a smile on the face"],
                    ["someone with a warm smile", "a gentle smiling face",
                     "the person smiles"]),
        _expression("frowning", _aus("AU04"), "smiling",
                    ["the person is frowning", "a frowning person",
                     "a deep frown"],
                    ["someone with a stern frown", "brows pulled into a frown",
                     "the person frowns"]),
        _expression("open mouth", _aus("AU25", "AU26"), "pressed lips",
                    ["a person with open mouth", "the mouth hangs open",
                     "an open-mouthed face"],
                    ["someone with parted lips and open jaw", "mouth wide open",
                     "the person opens their mouth"]),
        _expression("pressed lips", _aus("AU23", "AU24"), "open mouth",
                    ["a person with pressed lips", "the lips are pressed tight",
                     "a tight-lipped face"],
                    ["someone pressing their lips together", "lips pressed firmly",
                     "the person tightens their lips"]),
        _expression("wrinkled nose", _aus("AU09"), "calm",
                    ["a person with wrinkled nose", "the nose is wrinkled",
                     "a nose-wrinkling face"],
                    ["someone wrinkling their nose", "nose scrunched up",
                     "the person wrinkles their nose"]),
        _expression("incredulous", _aus("AU01", "AU02", "AU24", "AU25"), "calm",
                    ["An incredulous person with raised brows and open mouth",
                     "an incredulous face with raised brows",
                     "the person looks incredulous with open mouth"],
                    ["someone incredulous with lifted brows",
                     "a disbelieving face with raised brows and parted lips",
                     "the person stares in disbelief"],
                    kind="complex combination"),
    ]


def build_seed_dataset(size: int = 50) -> list[TextAUEntry]:
    """Rule-generated entries: each concept appears under several phrasings.

    Includes the canonical "A sad person" and "A happy person" rows verbatim.
    """
    concepts = _concepts()
    by_word = {c.word: c for c in concepts}
    entries: list[TextAUEntry] = []
    for c in concepts:
        pool = c.phrasings + c.extras
        for k, desc in enumerate(c.phrasings):
            positives = [p for p in pool if p != desc][:3]
            opp = by_word[c.opposite]
            negatives = (opp.phrasings + opp.extras)[:3]
            entries.append(TextAUEntry(description=desc, kind=c.kind,
                                       labels=c.labels.copy(),
                                       positives=positives, negatives=negatives))
    if len(entries) < size:
        raise ValueError(f"only {len(entries)} entries available")
    return entries[:size]


def save_seed_dataset(path: str | Path, size: int = 50) -> list[TextAUEntry]:
    entries = build_seed_dataset(size)
    Path(path).write_text(entries_to_json(entries))
    return entries


def save_controller(path: str | Path, model: TextToAUController) -> None:
    torch.save({"config": model.config.__dict__, "state": model.state_dict()}, path)


def load_controller(path: str | Path) -> TextToAUController:
    payload = torch.load(path, weights_only=False)
    cfg_dict = dict(payload["config"])
    cfg_dict["betas"] = tuple(cfg_dict["betas"])
    model = TextToAUController(ControllerConfig(**cfg_dict))
    model.load_state_dict(payload["state"])
    return model
