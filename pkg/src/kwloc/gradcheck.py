"""Finite-difference suite over every tensor op and all four models.

Runs in float64 with central differences (step 1e-3). Each case builds a
random instance from the seed, so a failure is reproducible from
``(case, seed)`` alone.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable
from unittest import mock

import numpy as np

from . import tensor as tn
from .models import ConvLayer, KeywordModel, ModelConfig, Vocabulary
from .supervision import utterance_loss
from .tensor import Tape, Tensor

TOLERANCE = 1e-4
STEP = 1e-3


@dataclass
class GradcheckReport:
    errors: dict[str, float] = field(default_factory=dict)  # "case/param" -> worst rel err

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE

    def record(self, case: str, errs: dict[str, float]) -> None:
        for name, e in errs.items():
            key = f"{case}/{name}"
            self.errors[key] = max(self.errors.get(key, 0.0), e)


def _leaf(rng, shape, name, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True, name=name)


def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[Tensor]]]:
    """case name -> (function of leaves producing a tensor, leaves)."""
    cases = {}

    def add_case(name, fn, leaves):
        cases[name] = (fn, leaves)

    x = _leaf(rng, (8, 2), "x")
    k = _leaf(rng, (3, 3, 2), "kernels")
    b = _leaf(rng, (3,), "bias")
    add_case("conv1d_same", lambda: tn.conv1d(x, k, b, "same"), [x, k, b])
    xv = _leaf(rng, (8, 2), "x")
    kv = _leaf(rng, (3, 3, 2), "kernels")
    bv = _leaf(rng, (3,), "bias")
    add_case("conv1d_valid", lambda: tn.conv1d(xv, kv, bv, "valid"), [xv, kv, bv])
    xp = _leaf(rng, (10, 4), "x")
    add_case("maxpool1d", lambda: tn.maxpool1d(xp, 3), [xp])
    xm = _leaf(rng, (7, 3), "x")
    add_case("max_over_time", lambda: tn.max_over_time(xm), [xm])
    xd = _leaf(rng, (4,), "x")
    wd = _leaf(rng, (3, 4), "weights")
    bd = _leaf(rng, (3,), "bias")
    add_case("dense", lambda: tn.dense(xd, wd, bd), [xd, wd, bd])
    xb = _leaf(rng, (5, 4), "x")
    wb = _leaf(rng, (3, 4), "weights")
    bb = _leaf(rng, (3,), "bias")
    add_case("dense_batch", lambda: tn.dense(xb, wb, bb), [xb, wb, bb])
    a = _leaf(rng, (4, 3), "a")
    m = _leaf(rng, (3, 5), "b")
    add_case("matmul", lambda: tn.matmul(a, m), [a, m])
    at = _leaf(rng, (4, 3), "a")
    add_case("transpose", lambda: tn.transpose(at), [at])
    xr = _leaf(rng, (6, 3), "x")
    add_case("relu", lambda: tn.relu(xr), [xr])
    xs = _leaf(rng, (6, 3), "x", -3, 3)
    add_case("sigmoid", lambda: tn.sigmoid(xs), [xs])
    xsm = _leaf(rng, (6, 3), "x", -2, 2)
    add_case("softmax", lambda: tn.softmax(xsm, axis=0), [xsm])
    xl = _leaf(rng, (6, 3), "x")
    r = float(rng.uniform(0.5, 3.0))
    add_case("logsumexp_pool", lambda: tn.logsumexp_pool(xl, r), [xl])
    tbl = _leaf(rng, (5, 3), "table")
    idx = rng.integers(0, 5, size=4)
    add_case("take_rows", lambda: tn.take_rows(tbl, idx), [tbl])
    p = _leaf(rng, (4, 3), "a")
    q = _leaf(rng, (4, 3), "b")
    add_case("add", lambda: tn.add(p, q), [p, q])
    xc = _leaf(rng, (4, 3), "x")
    c = float(rng.uniform(-2, 2))
    add_case("scale", lambda: tn.scale(xc, c), [xc])
    xsum = _leaf(rng, (4, 3), "x")
    add_case("sum_all", lambda: tn.sum_all(xsum), [xsum])
    pb = _leaf(rng, (5,), "p", 0.2, 0.8)
    yb = rng.uniform(0, 1, size=5)
    add_case("binary_cross_entropy", lambda: tn.binary_cross_entropy(pb, yb), [pb])
    return cases


def _scalarise(out: Tensor, weights: np.ndarray) -> Tensor:
    """Generic scalar loss: sum of the op output times a fixed random array."""
    w = weights.reshape(out.shape)
    return tn.sum_all(tn._record(out.data * w, (out,), lambda g: (g * w,)))


def tiny_config(variant: str) -> ModelConfig:
    if variant in ("cnn-attend", "psc"):
        conv = (ConvLayer(4, 3), ConvLayer(4, 3), ConvLayer(5, 3))
    else:
        conv = (ConvLayer(4, 3, pool=3), ConvLayer(4, 3, pool=3), ConvLayer(5, 3))
    return ModelConfig(variant=variant, conv=conv, embed_dim=5, mlp_hidden=6, feature_dim=4, r=1.5)


def model_case(variant: str, seed: int, T: int = 20, W: int = 3):
    """Float64 model, input and soft targets for an end-to-end check."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAD]))
    vocab = Vocabulary([f"k{i}" for i in range(W)])
    cfg = tiny_config(variant)
    cfg.init_seed = seed
    model = KeywordModel(cfg, vocab).astype(np.float64)
    # glorot init on tiny layers gives small activations; widen the biases so ReLUs are mixed
    for name, p in model.params.items():
        if name.endswith(".b"):
            p.data = rng.uniform(-0.2, 0.2, size=p.shape)
        elif name == "embed":
            p.data = rng.uniform(-1, 1, size=p.shape)
    X = rng.uniform(-1, 1, size=(T, cfg.feature_dim))
    y = rng.uniform(0, 1, size=W)
    return model, X, y


def run_suite(seeds=range(20), variants=("cnn-attend", "cnn-poolattend", "psc", "cnn-pool")) -> GradcheckReport:
    report = GradcheckReport()
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0F]))
        for case, (fn, leaves) in _op_cases(rng).items():
            out_shape = fn().shape
            proj = rng.uniform(-1, 1, size=out_shape)

            def loss_fn(fn=fn, proj=proj):
                with Tape() as tape:
                    loss = _scalarise(fn(), proj)
                return loss, tape

            report.record(case, tn.check_gradients(loss_fn, leaves, step=STEP))
        for variant in variants:
            model, X, y = model_case(variant, seed)

            def loss_fn(model=model, X=X, y=y):
                with Tape() as tape:
                    loss = utterance_loss(model, X, y)
                return loss, tape

            report.record(variant, tn.check_gradients(loss_fn, model.parameters(), step=STEP))
    return report


@contextlib.contextmanager
def corrupted_sigmoid(factor: float = 1.01):
    """Test hook: scale the sigmoid backward pass by ``factor``."""
    real = tn.sigmoid

    def faulty(x):
        x = tn._as_tensor(x)
        y = tn._sigmoid(x.data)
        return tn._record(y, (x,), lambda g: (factor * g * y * (1 - y),))

    with mock.patch.object(tn, "sigmoid", faulty):
        yield
    assert tn.sigmoid is real
