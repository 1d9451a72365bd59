"""The four keyword models: CNN-Attend, CNN-PoolAttend, PSC and CNN-Pool.

All variants share a 1-D convolutional trunk. The attention variants add a
keyword embedding table, dot-product attention and an MLP detector; PSC
aggregates per-frame keyword scores with log-sum-exp pooling; CNN-Pool uses
global max-pooling and a fully connected head (localised with GradCAM, see
:mod:`kwloc.saliency`).
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as tn
from .tensor import Tensor

VARIANTS = ("cnn-attend", "cnn-poolattend", "psc", "cnn-pool")
ATTENTION_VARIANTS = ("cnn-attend", "cnn-poolattend")

MODEL_MAGIC = b"KWLM"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


class VariantError(ValueError):
    pass


@dataclass
class Vocabulary:
    """Keyword vocabulary plus the full word list and semantic groups.

    ``keywords`` fixes the model output order (index 0..W-1). ``words`` is
    every word type the corpus can produce; ``groups`` lists semantically
    related word types.
    """

    keywords: list[str]
    words: list[str] = field(default_factory=list)
    groups: list[list[str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.keywords:
            raise ValueError("vocabulary needs at least one keyword")
        if len(set(self.keywords)) != len(self.keywords):
            raise ValueError("duplicate keywords")
        if not self.words:
            self.words = list(self.keywords)
        self._kw_index = {k: i for i, k in enumerate(self.keywords)}
        self._group_of: dict[str, list[int]] = {}
        for gi, group in enumerate(self.groups):
            for word in group:
                self._group_of.setdefault(word, []).append(gi)

    def __len__(self) -> int:
        return len(self.keywords)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.to_dict() == other.to_dict()

    def index(self, keyword: str) -> int:
        try:
            return self._kw_index[keyword]
        except KeyError:
            raise KeyError(f"unknown keyword {keyword!r}") from None

    def keyword_index(self, word: str) -> int | None:
        """Keyword index of a word type, or None for non-keywords."""
        return self._kw_index.get(word)

    def group_ids(self, word: str) -> list[int]:
        return self._group_of.get(word, [])

    def siblings(self, word: str) -> set[str]:
        """Other words sharing a semantic group with ``word``."""
        out: set[str] = set()
        for gi in self._group_of.get(word, []):
            out.update(self.groups[gi])
        out.discard(word)
        return out

    def to_dict(self) -> dict:
        return {"keywords": list(self.keywords), "words": list(self.words), "groups": [list(g) for g in self.groups]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(keywords=list(d["keywords"]), words=list(d.get("words", [])), groups=[list(g) for g in d.get("groups", [])])


@dataclass(frozen=True)
class ConvLayer:
    filters: int
    width: int
    pool: int = 1


@dataclass
class ModelConfig:
    """Architecture hyper-parameters.

    ``embed_dim`` is U for the attention variants (it overrides the filter
    count of the last conv layer). ``output_width`` of None builds the
    output layer at exactly W units; an integer builds that many units and
    uses the first W (the 1000-wide layer of the original models).
    """

    variant: str
    conv: tuple[ConvLayer, ...]
    embed_dim: int = 0
    mlp_hidden: int = 4096
    output_width: int | None = None
    r: float = 1.0
    feature_dim: int = 13
    padding: str = "same"
    psc_final_relu: bool = False
    init_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise VariantError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.conv = tuple(c if isinstance(c, ConvLayer) else ConvLayer(**c) for c in self.conv)
        if not self.conv:
            raise ValueError("at least one conv layer required")
        if not self.r > 0:
            raise ValueError("aggregation sharpness r must be > 0")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.variant in ATTENTION_VARIANTS and self.embed_dim < 1:
            raise ValueError("attention variants need embed_dim >= 1")

    @classmethod
    def full(cls, variant: str, **overrides) -> "ModelConfig":
        """Full-size layer sizes (1000-wide final layers)."""
        if variant in ("cnn-attend", "psc"):
            conv = (ConvLayer(96, 9),) + (ConvLayer(96, 11),) * 4 + (ConvLayer(1000, 11),)
            base = dict(conv=conv, embed_dim=1000 if variant == "cnn-attend" else 0)
            if variant == "psc":
                base["output_width"] = 1000
        else:
            conv = (ConvLayer(64, 9, pool=3), ConvLayer(256, 11, pool=3), ConvLayer(1024, 11))
            base = dict(conv=conv, embed_dim=1024 if variant == "cnn-poolattend" else 0)
            if variant == "cnn-pool":
                base["output_width"] = 1000
        base.update(overrides)
        return cls(variant=variant, mlp_hidden=base.pop("mlp_hidden", 4096), **base)

    @classmethod
    def desk(cls, variant: str, **overrides) -> "ModelConfig":
        """Scaled-down layer sizes that train on one CPU core in minutes."""
        hidden = 128
        if variant in ("cnn-attend", "psc"):
            conv = (ConvLayer(32, 9),) + (ConvLayer(32, 5),) * 4 + (ConvLayer(64, 5),)
        elif variant == "cnn-pool":
            # the narrow pooling trunk underfits detection on its own; keep the full first two widths
            conv = (ConvLayer(64, 9, pool=3), ConvLayer(256, 5, pool=3), ConvLayer(512, 5))
            hidden = 512
        else:
            conv = (ConvLayer(32, 9, pool=3), ConvLayer(64, 5, pool=3), ConvLayer(64, 5))
        base = dict(conv=conv, embed_dim=64 if variant in ATTENTION_VARIANTS else 0, mlp_hidden=hidden)
        base.update(overrides)
        return cls(variant=variant, **base)

    @classmethod
    def preset(cls, name: str, variant: str, **overrides) -> "ModelConfig":
        if name == "full":
            return cls.full(variant, **overrides)
        if name == "desk":
            return cls.desk(variant, **overrides)
        raise ValueError(f"unknown preset {name!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["conv"] = [dataclasses.asdict(c) for c in self.conv]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv"] = tuple(ConvLayer(**c) for c in d["conv"])
        return cls(**d)

    @property
    def pools(self) -> bool:
        return any(c.pool > 1 for c in self.conv)


@dataclass
class AttentionTrace:
    scores: np.ndarray  # e_t, length T'
    weights: np.ndarray  # alpha_t
    context: np.ndarray  # c, length U
    frame_map: np.ndarray  # trunk index -> input frame


@dataclass
class Prediction:
    """Scores for every keyword on one utterance.

    ``frame_scores[t, w]`` is the localisation score used for the argmax,
    ``weights[t, w]`` the same evidence as a distribution over trunk frames
    (attention weights, or a normalised stand-in for the baselines).
    """

    scores: np.ndarray  # [W]
    frame_scores: np.ndarray  # [T', W]
    weights: np.ndarray  # [T', W]
    frame_map: np.ndarray  # [T']

    @property
    def taus(self) -> np.ndarray:
        return self.frame_map[self.frame_scores.argmax(axis=0)]


@dataclass
class LocalisationOutcome:
    utterance_id: str
    keyword: int
    score: float
    tau: int | None
    category: str = "no-proposal"


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class KeywordModel:
    """Parameters plus config and vocabulary for one of the four variants."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, params: dict[str, Tensor] | None = None):
        self.config = config
        self.vocab = vocab
        self.params: dict[str, Tensor] = params if params is not None else self._init_params()

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def num_keywords(self) -> int:
        return len(self.vocab)

    @property
    def output_width(self) -> int:
        ow = self.config.output_width
        if ow is None:
            return self.num_keywords
        if ow < self.num_keywords:
            raise ValueError(f"output_width {ow} smaller than W={self.num_keywords}")
        return ow

    def conv_filters(self) -> list[int]:
        cfg = self.config
        filters = [c.filters for c in cfg.conv]
        if cfg.variant in ATTENTION_VARIANTS:
            filters[-1] = cfg.embed_dim
        elif cfg.variant == "psc":
            filters[-1] = self.output_width
        return filters

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        cfg = self.config
        shapes: dict[str, tuple[int, ...]] = {}
        c_in = cfg.feature_dim
        for i, (layer, c_out) in enumerate(zip(cfg.conv, self.conv_filters())):
            shapes[f"conv{i}.w"] = (c_out, layer.width, c_in)
            shapes[f"conv{i}.b"] = (c_out,)
            c_in = c_out
        if cfg.variant in ATTENTION_VARIANTS:
            U = cfg.embed_dim
            shapes["embed"] = (self.num_keywords, U)
            shapes["mlp0.w"] = (cfg.mlp_hidden, U)
            shapes["mlp0.b"] = (cfg.mlp_hidden,)
            shapes["out.w"] = (1, cfg.mlp_hidden)
            shapes["out.b"] = (1,)
        elif cfg.variant == "cnn-pool":
            shapes["mlp0.w"] = (cfg.mlp_hidden, c_in)
            shapes["mlp0.b"] = (cfg.mlp_hidden,)
            shapes["out.w"] = (self.output_width, cfg.mlp_hidden)
            shapes["out.b"] = (self.output_width,)
        return shapes

    def _init_params(self) -> dict[str, Tensor]:
        """Glorot-uniform weights, zero biases, embeddings uniform in +-0.05."""
        rng = np.random.default_rng(self.config.init_seed)
        params = {}
        for name, shape in self.param_shapes().items():
            if name == "embed":
                arr = rng.uniform(-0.05, 0.05, size=shape).astype(np.float32)
            elif name.endswith(".b"):
                arr = np.zeros(shape, np.float32)
            elif len(shape) == 3:
                c_out, width, c_in = shape
                arr = _glorot(rng, shape, width * c_in, width * c_out)
            else:
                arr = _glorot(rng, shape, shape[1], shape[0])
            params[name] = Tensor(arr, requires_grad=True, name=name)
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def astype(self, dtype) -> "KeywordModel":
        """Copy with parameters cast to ``dtype`` (float64 for gradient checks)."""
        params = {n: Tensor(p.data.astype(dtype), requires_grad=True, name=n) for n, p in self.params.items()}
        return KeywordModel(self.config, self.vocab, params)

    def copy(self) -> "KeywordModel":
        return self.astype(next(iter(self.params.values())).dtype)

    def frame_map(self, T: int) -> np.ndarray:
        return frame_map(self.config, T)

    def __repr__(self) -> str:
        n = sum(p.data.size for p in self.params.values())
        return f"KeywordModel({self.variant}, W={self.num_keywords}, params={n})"


def trunk_length(config: ModelConfig, T: int) -> int:
    n = T
    for layer in config.conv:
        if config.padding == "valid":
            n = n - layer.width + 1
        if layer.pool > 1:
            n = -(-n // layer.pool)
    return n


def frame_map(config: ModelConfig, T: int) -> np.ndarray:
    """Input frame for each trunk output index (centre of its source window)."""
    lengths = [T]
    for layer in config.conv:
        n = lengths[-1]
        if config.padding == "valid":
            n = n - layer.width + 1
            lengths.append(n)
        if layer.pool > 1:
            n = -(-n // layer.pool)
            lengths.append(n)
    pos = np.arange(lengths[-1], dtype=np.float64)
    # walk back through the layers, mapping positions to the previous index space
    stage = len(lengths) - 1
    for layer in reversed(config.conv):
        if layer.pool > 1:
            prev_len = lengths[stage - 1]
            lo = pos * layer.pool
            hi = np.minimum(lo + layer.pool - 1, prev_len - 1)
            pos = (lo + hi) / 2
            stage -= 1
        if config.padding == "valid":
            pos = pos + (layer.width - 1) / 2
            stage -= 1
    return np.clip(np.floor(pos), 0, T - 1).astype(np.int64)


# --------------------------------------------------------------------------
# Forward building blocks
# --------------------------------------------------------------------------


def _as_features(model: KeywordModel, X) -> Tensor:
    X = X if isinstance(X, Tensor) else Tensor(np.asarray(X, dtype=np.float32))
    if X.data.ndim != 2:
        raise tn.ShapeError(f"features must be [T, F], got {X.shape}")
    if X.shape[0] < 1:
        raise ValueError("utterance must have at least one frame")
    if X.shape[1] != model.config.feature_dim:
        raise tn.ShapeError(f"features have {X.shape[1]} columns, model expects {model.config.feature_dim}")
    dtype = next(iter(model.params.values())).dtype
    if X.dtype != dtype:
        X = Tensor(X.data.astype(dtype))
    return X


def conv_trunk(model: KeywordModel, X) -> Tensor:
    """Convolutional features ``h[T', C]`` for an input ``X[T, F]``."""
    cfg = model.config
    h = _as_features(model, X)
    last = len(cfg.conv) - 1
    for i, layer in enumerate(cfg.conv):
        h = tn.conv1d(h, model.params[f"conv{i}.w"], model.params[f"conv{i}.b"], padding=cfg.padding)
        if i < last or cfg.variant != "psc" or cfg.psc_final_relu:
            h = tn.relu(h)
        if layer.pool > 1:
            h = tn.maxpool1d(h, layer.pool)
    return h


def embed_query(model: KeywordModel, w) -> Tensor:
    """Query vectors for keyword index ``w`` (int -> [U], sequence -> [n, U])."""
    if model.variant not in ATTENTION_VARIANTS:
        raise VariantError(f"{model.variant} has no keyword embedding")
    idx = np.asarray(w)
    if np.any(idx < 0) or np.any(idx >= model.num_keywords):
        raise IndexError(f"keyword index {w} out of range for W={model.num_keywords}")
    return tn.take_rows(model.params["embed"], idx)


def attend_all(h: Tensor, queries: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Attention for several queries at once.

    ``h[T', U]``, ``queries[n, U]`` -> scores ``e[T', n]``, weights ``alpha[T', n]``
    (softmax over time) and contexts ``c[n, U]``.
    """
    if h.shape[1] != queries.shape[1]:
        raise tn.ShapeError(f"feature dim {h.shape[1]} != query dim {queries.shape[1]}")
    e = tn.matmul(h, tn.transpose(queries))
    alpha = tn.softmax(e, axis=0)
    c = tn.matmul(tn.transpose(alpha), h)
    return e, alpha, c


def attend(h: Tensor, q: Tensor) -> AttentionTrace:
    """Single-query attention: ``e_t = q.h_t``, ``alpha = softmax(e)``, ``c = sum alpha_t h_t``."""
    q2 = Tensor(q.data.reshape(1, -1)) if q.data.ndim == 1 else q
    e, alpha, c = attend_all(h, q2)
    T = h.shape[0]
    return AttentionTrace(e.data[:, 0].copy(), alpha.data[:, 0].copy(), c.data[0].copy(), np.arange(T))


def mlp_logits(model: KeywordModel, c: Tensor) -> Tensor:
    """Detector head of the attention models: dense + ReLU, dense to one logit per row."""
    z = tn.relu(tn.dense(c, model.params["mlp0.w"], model.params["mlp0.b"]))
    return tn.dense(z, model.params["out.w"], model.params["out.b"])  # [n, 1]


def attention_forward(model: KeywordModel, X, keywords=None):
    """Probabilities for the given keyword indices (all by default).

    Returns ``(p[n], alpha[T', n], e[T', n])`` as tensors.
    """
    if model.variant not in ATTENTION_VARIANTS:
        raise VariantError(f"attention detection needs cnn-attend or cnn-poolattend, got {model.variant}")
    h = conv_trunk(model, X)
    idx = np.arange(model.num_keywords) if keywords is None else np.asarray(keywords, dtype=np.intp)
    q = embed_query(model, idx)
    e, alpha, c = attend_all(h, q)
    logits = mlp_logits(model, c)
    n = len(idx)
    p = tn.sigmoid(_reshape(logits, (n,)))
    return p, alpha, e


def _reshape(x: Tensor, shape) -> Tensor:
    return tn._record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def detect_attention(model: KeywordModel, X, w: int) -> float:
    p, _, _ = attention_forward(model, X, [w])
    return float(p.data[0])


def attention_trace(model: KeywordModel, X, w: int) -> AttentionTrace:
    if model.variant not in ATTENTION_VARIANTS:
        raise VariantError(f"{model.variant} has no attention")
    h = conv_trunk(model, X)
    tr = attend(h, embed_query(model, int(w)))
    tr.frame_map = model.frame_map(np.asarray(X.data if isinstance(X, Tensor) else X).shape[0])
    return tr


def aggregate_logsumexp(scores, r: float):
    """``(1/r) log[(1/T') sum_t exp(r s_t)]`` over axis 0, computed stably."""
    if isinstance(scores, Tensor):
        return tn.logsumexp_pool(scores, r)
    return tn.logsumexp_pool(Tensor(np.asarray(scores, dtype=np.float64)), r).data


def psc_forward(model: KeywordModel, X) -> tuple[Tensor, Tensor]:
    """``(y_hat[W], h[T', W])`` for PSC."""
    if model.variant != "psc":
        raise VariantError(f"PSC detection needs variant psc, got {model.variant}")
    h = conv_trunk(model, X)
    W = model.num_keywords
    if h.shape[1] != W:
        h = _take_cols(h, W)
    g = tn.logsumexp_pool(h, model.config.r)
    return tn.sigmoid(g), h


def _take_cols(x: Tensor, n: int) -> Tensor:
    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[..., :n] = g
        return (gx,)

    return tn._record(x.data[..., :n].copy(), (x,), grad_fn)


def detect_psc(model: KeywordModel, X) -> tuple[np.ndarray, np.ndarray]:
    y, h = psc_forward(model, X)
    return y.data, h.data


def cnnpool_head(model: KeywordModel, h: Tensor) -> Tensor:
    """Global max over time, dense + ReLU, dense, cut to W, sigmoid."""
    m = tn.max_over_time(h)
    z = tn.relu(tn.dense(m, model.params["mlp0.w"], model.params["mlp0.b"]))
    logits = tn.dense(z, model.params["out.w"], model.params["out.b"])
    W = model.num_keywords
    if logits.shape[0] != W:
        logits = _take_cols(logits, W)
    return tn.sigmoid(logits)


def cnnpool_forward(model: KeywordModel, X) -> tuple[Tensor, Tensor]:
    """``(y_hat[W], h[T', K])`` for CNN-Pool; ``h`` is the post-ReLU last conv layer."""
    if model.variant != "cnn-pool":
        raise VariantError(f"CNN-Pool detection needs variant cnn-pool, got {model.variant}")
    h = conv_trunk(model, X)
    return cnnpool_head(model, h), h


def detect_cnnpool(model: KeywordModel, X) -> np.ndarray:
    y, _ = cnnpool_forward(model, X)
    return y.data


def detection_scores(model: KeywordModel, X) -> np.ndarray:
    """Detection probability for every keyword."""
    if model.variant in ATTENTION_VARIANTS:
        return attention_forward(model, X)[0].data
    if model.variant == "psc":
        return psc_forward(model, X)[0].data
    return cnnpool_forward(model, X)[0].data


def _softmax_cols(a: np.ndarray) -> np.ndarray:
    z = np.exp(a - a.max(axis=0, keepdims=True))
    return z / z.sum(axis=0, keepdims=True)


def predict(model: KeywordModel, X) -> Prediction:
    """Detection scores and localisation evidence for all keywords."""
    T = np.asarray(X.data if isinstance(X, Tensor) else X).shape[0]
    fmap = model.frame_map(T)
    if model.variant in ATTENTION_VARIANTS:
        p, alpha, _ = attention_forward(model, X)
        return Prediction(p.data.copy(), alpha.data.copy(), alpha.data.copy(), fmap)
    if model.variant == "psc":
        y, h = psc_forward(model, X)
        return Prediction(y.data.copy(), h.data.copy(), _softmax_cols(h.data.astype(np.float64)), fmap)
    from .saliency import gradcam_all

    y, cams = gradcam_all(model, X)
    total = cams.sum(axis=0, keepdims=True)
    n = cams.shape[0]
    weights = np.where(total > 0, cams / np.where(total > 0, total, 1), 1.0 / n)
    return Prediction(y, cams, weights, fmap)


def localise(model: KeywordModel, X, w: int, theta: float, utterance_id: str = "") -> LocalisationOutcome:
    """Detection score and proposed frame for keyword ``w``.

    No frame is proposed when the score is below ``theta``.
    """
    if not 0 <= theta <= 1:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    pred = predict(model, X)
    score = float(pred.scores[w])
    tau = int(pred.taus[w]) if score >= theta else None
    return LocalisationOutcome(utterance_id, int(w), score, tau)


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------


def _canonical_header(model: KeywordModel) -> bytes:
    block = {"config": model.config.to_dict(), "vocab": model.vocab.to_dict()}
    return json.dumps(block, sort_keys=True, separators=(",", ":")).encode("utf-8")


def model_to_bytes(model: KeywordModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<H", MODEL_VERSION))
    header = _canonical_header(model)
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", p.data.ndim))
        buf.write(struct.pack(f"<{p.data.ndim}I", *p.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return buf.getvalue()


def save_model(model: KeywordModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("model file is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_from_bytes(data: bytes) -> KeywordModel:
    rd = _Reader(data)
    if rd.take(4) != MODEL_MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    (version,) = rd.unpack("<H")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {MODEL_VERSION})")
    (hlen,) = rd.unpack("<I")
    try:
        header = json.loads(rd.take(hlen).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        vocab = Vocabulary.from_dict(header["vocab"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from exc
    (count,) = rd.unpack("<I")
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = rd.unpack("<H")
        name = rd.take(nlen).decode("utf-8")
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(rd.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    if rd.pos != len(data):
        raise ModelFormatError("trailing bytes after parameter block")
    model = KeywordModel(config, vocab, params={})
    expected = model.param_shapes()
    if set(expected) != set(params) or any(tuple(expected[k]) != params[k].shape for k in expected):
        raise ModelFormatError("parameter shapes do not match the stored config")
    model.params = {k: params[k] for k in expected}
    return model


def load_model(path) -> KeywordModel:
    return model_from_bytes(Path(path).read_bytes())


def check_compatible(model: KeywordModel, vocab: Vocabulary, feature_dim: int) -> None:
    if list(model.vocab.keywords) != list(vocab.keywords):
        raise ValueError(
            f"vocabulary mismatch: model has {len(model.vocab)} keywords, corpus has {len(vocab)}"
            if len(model.vocab) != len(vocab)
            else "vocabulary mismatch: keyword lists differ"
        )
    if model.config.feature_dim != feature_dim:
        raise ValueError(f"feature dim mismatch: model {model.config.feature_dim}, corpus {feature_dim}")


def param_names(model: KeywordModel) -> Sequence[str]:
    return list(model.params)
