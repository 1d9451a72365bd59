"""Targets, losses and the Adam training loop."""

from __future__ import annotations

import csv
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn
from .tensor import BCE_EPS, Tape, Tensor

DEFAULT_THETA = {"bow": 0.4, "visual": 0.5}

LOG_COLUMNS = (
    "epoch",
    "train_loss",
    "dev_detection_P",
    "dev_detection_R",
    "dev_detection_F1",
    "dev_localisation_P",
    "dev_localisation_R",
    "dev_localisation_F1",
    "wall_seconds",
)


class DivergenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Targets
# --------------------------------------------------------------------------


@dataclass
class VisualNoiseConfig:
    """Beta parameters of the simulated image tagger.

    Present keywords score ~Beta(a_hi, b_hi), absent ones ~Beta(a_lo, b_lo),
    and absent keywords with a semantic sibling in the utterance
    ~Beta(a_mid, b_mid). ``noiseless`` returns the hard labels unchanged.
    """

    a_hi: float = 8.0
    b_hi: float = 2.0
    a_lo: float = 1.0
    b_lo: float = 12.0
    a_mid: float = 3.0
    b_mid: float = 3.0
    noiseless: bool = False

    def __post_init__(self):
        for name in ("a_hi", "b_hi", "a_lo", "b_lo", "a_mid", "b_mid"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


def simulate_visual_tagger(
    y_bow: np.ndarray,
    noise: VisualNoiseConfig,
    rng: np.random.Generator,
    vocab=None,
    present_words: set[str] | None = None,
) -> np.ndarray:
    """Soft keyword probabilities standing in for an image tagger's output."""
    y_bow = np.asarray(y_bow)
    if noise.noiseless:
        return y_bow.astype(np.float32)
    W = y_bow.shape[0]
    hi = rng.beta(noise.a_hi, noise.b_hi, size=W)
    lo = rng.beta(noise.a_lo, noise.b_lo, size=W)
    mid = rng.beta(noise.a_mid, noise.b_mid, size=W)
    confused = np.zeros(W, dtype=bool)
    if vocab is not None and present_words:
        for w, kw in enumerate(vocab.keywords):
            if not y_bow[w] and vocab.siblings(kw) & present_words:
                confused[w] = True
    out = np.where(y_bow > 0, hi, np.where(confused, mid, lo))
    return out.astype(np.float32)


class TargetSource:
    """Hands out training targets of one kind and counts every read."""

    def __init__(self, kind: str):
        if kind not in ("bow", "visual"):
            raise ValueError(f"supervision must be 'bow' or 'visual', got {kind!r}")
        self.kind = kind
        self.reads: Counter = Counter()

    def __call__(self, utt) -> np.ndarray:
        self.reads[self.kind] += 1
        if self.kind == "bow":
            return np.asarray(utt.y_bow, dtype=np.float32)
        return np.asarray(utt.y_vis, dtype=np.float32)


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------


def _check_targets(y: np.ndarray) -> None:
    if np.any((y < 0) | (y > 1)):
        raise ValueError("targets must lie in [0, 1]")


def bce_single(p: float, y: float) -> float:
    """Binary cross-entropy of one probability against a (possibly soft) target."""
    _check_targets(np.asarray(y))
    pc = min(max(float(p), BCE_EPS), 1 - BCE_EPS)
    return float(-(y * np.log(pc) + (1 - y) * np.log1p(-pc)))


def bce_multilabel(y_hat, y) -> float | Tensor:
    """Summed per-keyword binary cross-entropy.

    Tensors in, tensor out (differentiable); arrays in, float out.
    """
    if isinstance(y_hat, Tensor):
        if y_hat.shape != np.shape(y):
            raise tn.ShapeError(f"length mismatch: {y_hat.shape} vs {np.shape(y)}")
        return tn.binary_cross_entropy(y_hat, y)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise tn.ShapeError(f"length mismatch: {y_hat.shape} vs {y.shape}")
    _check_targets(y)
    pc = np.clip(y_hat, BCE_EPS, 1 - BCE_EPS)
    return float(-(y * np.log(pc) + (1 - y) * np.log1p(-pc)).sum())


def utterance_loss(model, X, y: np.ndarray, keywords: Sequence[int] | None = None) -> Tensor:
    """Training loss for one utterance; must run under an active tape.

    Attention models query each selected keyword once and sum the
    single-keyword losses; the multi-label models use all W outputs.
    """
    from .models import ATTENTION_VARIANTS, attention_forward, cnnpool_forward, psc_forward

    if model.variant in ATTENTION_VARIANTS:
        idx = np.arange(model.num_keywords) if keywords is None else np.asarray(keywords, dtype=np.intp)
        p, _, _ = attention_forward(model, X, idx)
        return tn.binary_cross_entropy(p, y[idx])
    if model.variant == "psc":
        y_hat, _ = psc_forward(model, X)
    else:
        y_hat, _ = cnnpool_forward(model, X)
    return tn.binary_cross_entropy(y_hat, y)


# --------------------------------------------------------------------------
# Optimiser
# --------------------------------------------------------------------------


class Adam:
    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1 - self.beta1**self.t
        bc2 = 1 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 25
    seed: int = 0
    theta: float | None = None  # None: 0.4 for bow, 0.5 for visual
    keyword_sampling: str = "all"  # or "sampled": positives plus k negatives each
    negatives_per_positive: int = 3
    max_batches: int | None = None  # cap on batches per epoch

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.keyword_sampling not in ("all", "sampled"):
            raise ValueError("keyword_sampling must be 'all' or 'sampled'")
        if self.theta is not None and not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Optimiser settings for the scaled-down models on the default corpus.

        The general defaults of 1e-4 with batch 32 barely move the
        small desk models in 25 epochs; 1e-3 with batch 16 converges.
        """
        base = dict(lr=1e-3, batch_size=16, epochs=25)
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainResult:
    model: object
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    theta: float = 0.5
    target_reads: Counter = field(default_factory=Counter)


def _sample_keywords(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    pos = np.flatnonzero(y >= 0.5)
    neg = np.flatnonzero(y < 0.5)
    n_neg = min(len(neg), max(k * len(pos), k))
    picked = rng.choice(neg, size=n_neg, replace=False) if n_neg else np.empty(0, np.intp)
    return np.sort(np.concatenate([pos, picked]).astype(np.intp))


def train(
    model,
    train_utts: Sequence,
    dev_utts: Sequence = (),
    supervision: str = "bow",
    config: TrainConfig | None = None,
    log_path=None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adam training with per-epoch dev evaluation.

    The returned model carries the parameters of the epoch with the best
    dev detection F1 at ``theta`` (the final epoch if there is no dev set).
    """
    from .evaluate import detection_from_table, localisation_from_table, score_utterances

    config = config or TrainConfig()
    if not train_utts:
        raise ValueError("training corpus is empty")
    dims = {u.features.shape[1] for u in train_utts}
    if len(dims) != 1:
        raise ValueError(f"utterances disagree on feature dimension: {sorted(dims)}")
    theta = config.theta if config.theta is not None else DEFAULT_THETA[supervision]
    targets = TargetSource(supervision)
    opt = Adam(config.lr, config.beta1, config.beta2, config.eps)
    params = model.params

    result = TrainResult(model=model, theta=theta, target_reads=targets.reads)
    best_f1 = -1.0
    best_params = {n: p.data.copy() for n, p in params.items()}
    start = time.perf_counter()
    n = len(train_utts)
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch]))
        order = rng.permutation(n)
        batches = [order[i : i + config.batch_size] for i in range(0, n, config.batch_size)]
        if config.max_batches is not None:
            batches = batches[: config.max_batches]
        total, count = 0.0, 0
        for batch in batches:
            acc = {name: np.zeros_like(p.data) for name, p in params.items()}
            for i in batch:
                utt = train_utts[int(i)]
                y = targets(utt)
                kws = None
                if config.keyword_sampling == "sampled" and model.variant in ("cnn-attend", "cnn-poolattend"):
                    kws = _sample_keywords(y, config.negatives_per_positive, rng)
                with Tape() as tape:
                    loss = utterance_loss(model, utt.features, y, kws)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise DivergenceError(f"non-finite loss at epoch {epoch} on utterance {utt.id}")
                grads = tn.backward(loss, tape)
                for name, p in params.items():
                    if p in grads:
                        acc[name] += grads[p]
                total += value
                count += 1
            scale = 1.0 / len(batch)
            opt.step(params, {name: g * scale for name, g in acc.items()})
            # ReLU masks NaN activations, so a finite loss does not prove finite weights
            bad = [name for name, p in params.items() if not np.all(np.isfinite(p.data))]
            if bad:
                raise DivergenceError(f"non-finite parameters {bad} at epoch {epoch}")

        row = {"epoch": epoch, "train_loss": total / count if count else float("nan")}
        if dev_utts:
            table = score_utterances(model, dev_utts)
            det = detection_from_table(table, theta)
            loc = localisation_from_table(table, theta)
            row.update(
                dev_detection_P=det.precision,
                dev_detection_R=det.recall,
                dev_detection_F1=det.f1,
                dev_localisation_P=loc.precision,
                dev_localisation_R=loc.recall,
                dev_localisation_F1=loc.f1,
            )
            f1 = det.f1
        else:
            f1 = float(epoch)  # no dev data: keep the latest epoch
        row["wall_seconds"] = round(time.perf_counter() - start, 3)
        result.log.append(row)
        if progress:
            progress(row)
        if f1 > best_f1:
            best_f1 = f1
            result.best_epoch = epoch
            best_params = {name: p.data.copy() for name, p in params.items()}

    for name, p in params.items():
        p.data = best_params[name]
    if log_path is not None:
        write_log(result.log, log_path)
    return result


def write_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in LOG_COLUMNS})
