"""Synthetic spoken-caption corpus with exact word alignments.

Each word type has a fixed prototype (duration x feature pattern). An
utterance is a random word sequence rendered as concatenated prototypes plus
Gaussian noise, so every word span is known exactly. Soft "visual" targets
come from :func:`kwloc.supervision.simulate_visual_tagger`.

On disk::

    <dir>/vocab.json                 keywords, words, semantic groups
    <dir>/corpus.json                generating config
    <dir>/<split>/manifest.jsonl     one JSON object per utterance
    <dir>/<split>/features/<id>.kwsf binary feature matrix
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import Vocabulary
from .supervision import VisualNoiseConfig, simulate_visual_tagger

FEATURE_MAGIC = b"KWSF"
FEATURE_VERSION = 1
SPLITS = ("train", "dev", "test")
_SPLIT_CODES = {"train": 1, "dev": 2, "test": 3}


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Span:
    word: str
    start: int  # inclusive
    end: int  # inclusive

    def __len__(self) -> int:
        return self.end - self.start + 1

    def __contains__(self, frame: int) -> bool:
        return self.start <= frame <= self.end


@dataclass
class WordPrototype:
    word: str
    pattern: np.ndarray  # [d, F]

    @property
    def duration(self) -> int:
        return self.pattern.shape[0]


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # [T, F] float32
    spans: list[Span]
    y_bow: np.ndarray  # [W] uint8
    y_vis: np.ndarray  # [W] float32

    @property
    def frames(self) -> int:
        return self.features.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Utterance)
            and self.id == other.id
            and self.spans == other.spans
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.y_bow, other.y_bow)
            and np.array_equal(self.y_vis, other.y_vis)
        )


@dataclass
class CorpusConfig:
    vocab_size: int = 100
    num_keywords: int = 20
    num_groups: int = 6
    min_words: int = 4
    max_words: int = 10
    min_duration: int = 5
    max_duration: int = 15
    feature_dim: int = 13
    noise: float = 0.3
    train: int = 2000
    dev: int = 400
    test: int = 400
    seed: int = 0
    visual: VisualNoiseConfig = field(default_factory=VisualNoiseConfig)

    def __post_init__(self):
        if isinstance(self.visual, dict):
            self.visual = VisualNoiseConfig(**self.visual)
        if not 1 <= self.num_keywords <= self.vocab_size:
            raise ValueError("need 1 <= num_keywords <= vocab_size")
        if self.noise < 0:
            raise ValueError("noise sigma must be >= 0")
        if not 1 <= self.min_words <= self.max_words:
            raise ValueError("need 1 <= min_words <= max_words")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ValueError("need 1 <= min_duration <= max_duration")
        if min(self.train, self.dev, self.test) < 0:
            raise ValueError("split sizes must be >= 0")
        if self.num_groups > 0 and (
            self.num_groups > self.num_keywords or self.num_groups > self.vocab_size - self.num_keywords
        ):
            raise ValueError("not enough keywords / non-keywords for the requested semantic groups")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Corpus:
    vocab: Vocabulary
    train: list[Utterance] = field(default_factory=list)
    dev: list[Utterance] = field(default_factory=list)
    test: list[Utterance] = field(default_factory=list)
    config: CorpusConfig | None = None

    def split(self, name: str) -> list[Utterance]:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def feature_dim(self) -> int:
        for name in SPLITS:
            utts = self.split(name)
            if utts:
                return utts[0].features.shape[1]
        return self.config.feature_dim if self.config else 0

    def find(self, utterance_id: str) -> Utterance:
        for name in SPLITS:
            for u in self.split(name):
                if u.id == utterance_id:
                    return u
        raise KeyError(f"unknown utterance id {utterance_id!r}")


# --------------------------------------------------------------------------
# Synthesis
# --------------------------------------------------------------------------


def word_name(i: int) -> str:
    return f"w{i:03d}"


def make_vocabulary(config: CorpusConfig) -> Vocabulary:
    """Keywords are the first W word types; each semantic group pairs one
    keyword with one or two non-keyword words."""
    words = [word_name(i) for i in range(config.vocab_size)]
    keywords = words[: config.num_keywords]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x67]))
    groups: list[list[str]] = []
    if config.num_groups:
        kw_pick = rng.choice(config.num_keywords, size=config.num_groups, replace=False)
        non_kw = rng.permutation(np.arange(config.num_keywords, config.vocab_size))
        pos = 0
        for k in sorted(int(i) for i in kw_pick):
            n_sib = int(rng.integers(1, 3)) if pos + 2 <= len(non_kw) else 1
            sibs = [words[int(j)] for j in non_kw[pos : pos + n_sib]]
            pos += n_sib
            groups.append([keywords[k]] + sibs)
    return Vocabulary(keywords=keywords, words=words, groups=groups)


def make_prototypes(config: CorpusConfig, vocab: Vocabulary) -> dict[str, WordPrototype]:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x50]))
    protos = {}
    for word in vocab.words:
        d = int(rng.integers(config.min_duration, config.max_duration + 1))
        pattern = rng.standard_normal((d, config.feature_dim)).astype(np.float32)
        protos[word] = WordPrototype(word, pattern)
    return protos


def bow_vector(spans: list[Span], vocab: Vocabulary) -> np.ndarray:
    y = np.zeros(len(vocab), dtype=np.uint8)
    for s in spans:
        k = vocab.keyword_index(s.word)
        if k is not None:
            y[k] = 1
    return y


def synthesize_utterance(
    config: CorpusConfig, vocab: Vocabulary, protos: dict[str, WordPrototype], split: str, index: int
) -> Utterance:
    ss = np.random.SeedSequence([config.seed, _SPLIT_CODES[split], index])
    rng = np.random.default_rng(ss)
    n_words = int(rng.integers(config.min_words, config.max_words + 1))
    chosen = rng.integers(0, len(vocab.words), size=n_words)
    pieces, spans, t = [], [], 0
    for wi in chosen:
        p = protos[vocab.words[int(wi)]]
        pieces.append(p.pattern)
        spans.append(Span(p.word, t, t + p.duration - 1))
        t += p.duration
    feats = np.concatenate(pieces, axis=0)
    if config.noise > 0:
        feats = feats + rng.standard_normal(feats.shape).astype(np.float32) * np.float32(config.noise)
    y_bow = bow_vector(spans, vocab)
    present = {s.word for s in spans}
    y_vis = simulate_visual_tagger(y_bow, config.visual, rng, vocab=vocab, present_words=present)
    return Utterance(f"{split}-{index:05d}", feats.astype(np.float32), spans, y_bow, y_vis)


def synthesize(config: CorpusConfig | None = None) -> Corpus:
    """Build the train/dev/test splits. Identical configs give identical corpora."""
    config = config or CorpusConfig()
    vocab = make_vocabulary(config)
    protos = make_prototypes(config, vocab)
    corpus = Corpus(vocab=vocab, config=config)
    for split in SPLITS:
        n = getattr(config, split)
        setattr(corpus, split, [synthesize_utterance(config, vocab, protos, split, i) for i in range(n)])
    return corpus


def ground_truth_spans(utt: Utterance, w: int, vocab: Vocabulary) -> list[tuple[int, int]]:
    """Closed frame intervals of every occurrence of keyword ``w``, in order."""
    if not 0 <= w < len(vocab):
        raise IndexError(f"keyword index {w} out of range")
    word = vocab.keywords[w]
    return [(s.start, s.end) for s in utt.spans if s.word == word]


def nearest_prototype_decode(features: np.ndarray, spans: list[Span], protos: dict[str, WordPrototype]) -> list[str]:
    """Label each span by its nearest same-length prototype (corpus sanity oracle)."""
    out = []
    for s in spans:
        seg = features[s.start : s.end + 1]
        best, best_d = None, np.inf
        for word, p in protos.items():
            if p.duration != len(seg):
                continue
            d = float(((p.pattern - seg) ** 2).sum())
            if d < best_d:
                best, best_d = word, d
        out.append(best)
    return out


# --------------------------------------------------------------------------
# On-disk format
# --------------------------------------------------------------------------


def write_features(path, features: np.ndarray) -> None:
    T, F = features.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<HII", FEATURE_VERSION, T, F))
        f.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_features(path, utterance_id: str = "") -> np.ndarray:
    label = f" for utterance {utterance_id!r}" if utterance_id else ""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise CorpusFormatError(f"missing feature file {path}{label}") from None
    if data[:4] != FEATURE_MAGIC:
        raise CorpusFormatError(f"bad magic in feature file {path}{label}")
    if len(data) < 14:
        raise CorpusFormatError(f"truncated feature header in {path}{label}")
    version, T, F = struct.unpack("<HII", data[4:14])
    if version != FEATURE_VERSION:
        raise CorpusFormatError(f"feature file version {version} unsupported{label}")
    body = data[14:]
    if len(body) != 4 * T * F:
        raise CorpusFormatError(f"feature file {path}{label}: expected {T}x{F} floats, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(T, F)


def _manifest_line(u: Utterance, vocab: Vocabulary) -> str:
    obj = {
        "id": u.id,
        "frames": u.frames,
        "spans": [{"word": s.word, "start": s.start, "end": s.end} for s in u.spans],
        "bow": [int(i) for i in np.flatnonzero(u.y_bow)],
        "vis": [float(v) for v in u.y_vis],
    }
    return json.dumps(obj, separators=(",", ":"))


def write_corpus(corpus: Corpus, directory) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    (root / "vocab.json").write_text(json.dumps(corpus.vocab.to_dict(), indent=1) + "\n")
    if corpus.config is not None:
        (root / "corpus.json").write_text(json.dumps(corpus.config.to_dict(), indent=1, sort_keys=True) + "\n")
    for split in SPLITS:
        sdir = root / split
        fdir = sdir / "features"
        fdir.mkdir(parents=True, exist_ok=True)
        lines = []
        for u in corpus.split(split):
            write_features(fdir / f"{u.id}.kwsf", u.features)
            lines.append(_manifest_line(u, corpus.vocab))
        tmp = sdir / "manifest.jsonl.tmp"
        tmp.write_text("".join(line + "\n" for line in lines))
        os.replace(tmp, sdir / "manifest.jsonl")


def read_vocabulary(directory) -> Vocabulary:
    path = Path(directory) / "vocab.json"
    if not path.exists():
        raise CorpusFormatError(f"no vocab.json in {directory}")
    return Vocabulary.from_dict(json.loads(path.read_text()))


def _parse_utterance(obj: dict, fdir: Path, vocab: Vocabulary) -> Utterance:
    uid = obj.get("id")
    if not isinstance(uid, str):
        raise CorpusFormatError("manifest entry without a string id")
    feats = read_features(fdir / f"{uid}.kwsf", uid)
    T = feats.shape[0]
    if obj.get("frames") != T:
        raise CorpusFormatError(f"utterance {uid!r}: manifest says {obj.get('frames')} frames, features have {T}")
    spans = []
    for s in obj.get("spans", []):
        span = Span(str(s["word"]), int(s["start"]), int(s["end"]))
        if not (0 <= span.start <= span.end < T):
            raise CorpusFormatError(f"utterance {uid!r}: span {span} outside [0, {T})")
        spans.append(span)
    W = len(vocab)
    y_bow = np.zeros(W, dtype=np.uint8)
    for k in obj.get("bow", []):
        if not 0 <= int(k) < W:
            raise CorpusFormatError(f"utterance {uid!r}: bow index {k} outside vocabulary")
        y_bow[int(k)] = 1
    vis = obj.get("vis", [])
    if len(vis) != W:
        raise CorpusFormatError(f"utterance {uid!r}: vis has {len(vis)} entries, vocabulary has {W}")
    y_vis = np.asarray(vis, dtype=np.float32)
    return Utterance(uid, feats, spans, y_bow, y_vis)


def read_split(directory, split: str, vocab: Vocabulary | None = None) -> list[Utterance]:
    root = Path(directory)
    vocab = vocab or read_vocabulary(root)
    manifest = root / split / "manifest.jsonl"
    if not manifest.exists():
        raise CorpusFormatError(f"missing manifest {manifest}")
    utts = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{manifest}:{lineno}: {exc}") from None
        utts.append(_parse_utterance(obj, root / split / "features", vocab))
    return utts


def read_corpus(directory) -> Corpus:
    root = Path(directory)
    vocab = read_vocabulary(root)
    config = None
    cfg_path = root / "corpus.json"
    if cfg_path.exists():
        config = CorpusConfig(**json.loads(cfg_path.read_text()))
    corpus = Corpus(vocab=vocab, config=config)
    for split in SPLITS:
        setattr(corpus, split, read_split(root, split, vocab))
    return corpus
