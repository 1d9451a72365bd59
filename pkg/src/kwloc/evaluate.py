"""Detection and localisation metrics, threshold tuning and error categories.

Scoring a corpus produces a :class:`ScoreTable` (one row per utterance, one
column per keyword). All metrics are pure functions of that table, so they
can be checked against brute-force enumeration on synthetic tables.

Counting conventions:

* a pair (utterance, keyword) is proposed iff its score >= theta;
* recall counts keyword presence once per utterance;
* a localisation proposal is correct iff the proposed frame lies inside any
  ground-truth span of the keyword;
* precision is 0 when nothing is proposed, F1 is 0 when P + R = 0.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .models import KeywordModel, LocalisationOutcome, Prediction, Vocabulary, predict

CATEGORIES = ("correct", "incorrect", "semantic-single", "semantic-multi")
DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass
class MetricsReport:
    task: str
    precision: float
    recall: float
    f1: float
    tp: int
    proposals: int
    positives: int
    theta: float

    def as_row(self, **extra) -> dict:
        row = dict(extra)
        row.update(
            task=self.task,
            theta=self.theta,
            P=self.precision,
            R=self.recall,
            F1=self.f1,
            TP=self.tp,
            proposals=self.proposals,
            positives=self.positives,
        )
        return row


@dataclass
class ScoreTable:
    ids: list[str]
    scores: np.ndarray  # [N, W] detection scores
    taus: np.ndarray  # [N, W] argmax frame (before thresholding)
    positive: np.ndarray  # [N, W] keyword present
    hit: np.ndarray  # [N, W] tau inside a span of the keyword
    traces: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


class OracleScorer:
    """Scores every keyword with its true label and peaks mid-span.

    A sanity stand-in for a trained model: it should score P = R = F1 = 1.
    """

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def predict_utterance(self, utt) -> Prediction:
        T, W = utt.frames, len(self.vocab)
        frame_scores = np.zeros((T, W))
        for s in utt.spans:
            k = self.vocab.keyword_index(s.word)
            if k is not None and frame_scores[:, k].max() == 0:
                frame_scores[(s.start + s.end) // 2, k] = 1.0
        weights = frame_scores.copy()
        weights[:, weights.sum(axis=0) == 0] = 1.0 / T
        return Prediction(utt.y_bow.astype(np.float64), frame_scores, weights, np.arange(T))


def predict_utterance(model, utt) -> Prediction:
    if isinstance(model, KeywordModel):
        return predict(model, utt.features)
    return model.predict_utterance(utt)


def in_keyword_span(utt, word: str, frame: int) -> bool:
    return any(s.word == word and s.start <= frame <= s.end for s in utt.spans)


def score_utterances(model, utterances: Sequence, keep_traces: bool = False) -> ScoreTable:
    if not utterances:
        raise ValueError("cannot evaluate on an empty corpus")
    preds = [predict_utterance(model, u) for u in utterances]
    vocab = model.vocab
    W = len(vocab)
    N = len(utterances)
    scores = np.stack([p.scores.astype(np.float64) for p in preds])
    taus = np.stack([p.taus for p in preds]).astype(np.int64)
    positive = np.stack([np.asarray(u.y_bow, dtype=bool) for u in utterances])
    hit = np.zeros((N, W), dtype=bool)
    for i, u in enumerate(utterances):
        for w in range(W):
            hit[i, w] = in_keyword_span(u, vocab.keywords[w], int(taus[i, w]))
    traces = {}
    if keep_traces:
        traces = {u.id: (p.weights, p.frame_map) for u, p in zip(utterances, preds)}
    return ScoreTable([u.id for u in utterances], scores, taus, positive, hit, traces)


def _prf(tp: int, proposals: int, positives: int) -> tuple[float, float, float]:
    p = tp / proposals if proposals else 0.0
    r = tp / positives if positives else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def _check_theta(theta: float) -> None:
    if not 0 <= theta <= 1:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")


def detection_from_table(table: ScoreTable, theta: float) -> MetricsReport:
    _check_theta(theta)
    pred = table.scores >= theta
    tp = int((pred & table.positive).sum())
    proposals = int(pred.sum())
    positives = int(table.positive.sum())
    return MetricsReport("detection", *_prf(tp, proposals, positives), tp, proposals, positives, theta)


def localisation_from_table(table: ScoreTable, theta: float) -> MetricsReport:
    _check_theta(theta)
    pred = table.scores >= theta
    tp = int((pred & table.hit).sum())
    proposals = int(pred.sum())
    positives = int(table.positive.sum())
    return MetricsReport("localisation", *_prf(tp, proposals, positives), tp, proposals, positives, theta)


_TASKS = {"detection": detection_from_table, "localisation": localisation_from_table}


def metrics_from_table(table: ScoreTable, task: str, theta: float) -> MetricsReport:
    try:
        fn = _TASKS[task]
    except KeyError:
        raise ValueError(f"task must be 'detection' or 'localisation', got {task!r}") from None
    return fn(table, theta)


def detection_metrics(model, utterances: Sequence, theta: float) -> MetricsReport:
    _check_theta(theta)
    return detection_from_table(score_utterances(model, utterances), theta)


def localisation_metrics(model, utterances: Sequence, theta: float) -> MetricsReport:
    _check_theta(theta)
    return localisation_from_table(score_utterances(model, utterances), theta)


def tune_threshold(table: ScoreTable, task: str, grid: Sequence[float] = DEFAULT_GRID) -> float:
    """Grid value with the best F1 for ``task``; ties go to the smallest value."""
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("threshold grid is empty")
    best_theta, best_f1 = grid[0], -1.0
    for theta in grid:
        f1 = metrics_from_table(table, task, theta).f1
        if f1 > best_f1:
            best_theta, best_f1 = theta, f1
    return best_theta


# --------------------------------------------------------------------------
# Error categories
# --------------------------------------------------------------------------


def span_masses(spans, weights: np.ndarray, frame_map: np.ndarray) -> np.ndarray:
    """Attention mass falling inside each span (trunk frames mapped to input frames)."""
    masses = np.zeros(len(spans))
    for i, s in enumerate(spans):
        inside = (frame_map >= s.start) & (frame_map <= s.end)
        masses[i] = weights[inside].sum()
    return masses


def classify_proposal(
    utt, keyword: str, tau: int, vocab: Vocabulary, weights: np.ndarray, frame_map: np.ndarray, mass_threshold: float = 0.5
) -> str:
    """One of ``CATEGORIES`` for a proposed frame ``tau``.

    ``weights`` is the keyword's attention distribution over trunk frames.
    A proposal in a semantic sibling's span holding at least
    ``mass_threshold`` of the attention is semantic-single; if the smallest
    set of spans covering ``mass_threshold`` has two or more members and
    includes the keyword's or a sibling's span it is semantic-multi.
    """
    if in_keyword_span(utt, keyword, tau):
        return "correct"
    siblings = vocab.siblings(keyword)
    masses = span_masses(utt.spans, weights, frame_map)
    hit = next((i for i, s in enumerate(utt.spans) if s.start <= tau <= s.end), None)
    if hit is not None and utt.spans[hit].word in siblings and masses[hit] >= mass_threshold:
        return "semantic-single"
    order = np.argsort(-masses, kind="stable")
    cum, core = 0.0, []
    for i in order:
        if cum >= mass_threshold:
            break
        core.append(int(i))
        cum += masses[i]
    related = {keyword} | siblings
    if len(core) >= 2 and any(utt.spans[i].word in related for i in core):
        return "semantic-multi"
    return "incorrect"


def localisation_outcomes(table: ScoreTable, vocab: Vocabulary, theta: float) -> list[LocalisationOutcome]:
    _check_theta(theta)
    out = []
    N, W = table.scores.shape
    for i in range(N):
        for w in range(W):
            score = float(table.scores[i, w])
            if score >= theta:
                cat = "correct" if table.hit[i, w] else "incorrect"
                out.append(LocalisationOutcome(table.ids[i], w, score, int(table.taus[i, w]), cat))
            else:
                out.append(LocalisationOutcome(table.ids[i], w, score, None, "no-proposal"))
    return out


def categorise_errors(
    outcomes: Sequence[LocalisationOutcome],
    utterances: Sequence,
    vocab: Vocabulary,
    traces: dict[str, tuple[np.ndarray, np.ndarray]],
    mass_threshold: float = 0.5,
) -> dict[str, int]:
    """Count proposals per category; updates each outcome's ``category`` in place.

    Pairs without a proposal are skipped (they only affect recall).
    """
    by_id = {u.id: u for u in utterances}
    counts = Counter({c: 0 for c in CATEGORIES})
    for o in outcomes:
        if o.tau is None:
            o.category = "no-proposal"
            continue
        if o.utterance_id not in traces:
            raise KeyError(f"no attention trace for utterance {o.utterance_id!r}")
        weights, fmap = traces[o.utterance_id]
        utt = by_id[o.utterance_id]
        col = weights[:, o.keyword] if weights.ndim == 2 else weights
        o.category = classify_proposal(utt, vocab.keywords[o.keyword], o.tau, vocab, col, fmap, mass_threshold)
        counts[o.category] += 1
    return dict(counts)


# --------------------------------------------------------------------------
# Report files
# --------------------------------------------------------------------------


def write_rows_csv(rows: Sequence[dict], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    fields = list(rows[0])
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def write_outcomes_jsonl(outcomes: Sequence[LocalisationOutcome], path) -> None:
    with open(path, "w") as f:
        for o in outcomes:
            f.write(json.dumps(asdict(o), separators=(",", ":")) + "\n")
