"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

The end-to-end criteria train desk-preset models on the default synthetic
corpus; the whole module takes roughly forty minutes on one CPU core.
"""

import statistics
import time
from fractions import Fraction

import numpy as np
import pytest

from kwloc import cli
from kwloc import evaluate as ev
from kwloc import models as md
from kwloc import tensor as tn
from kwloc.corpus import CorpusConfig, Span, Utterance, synthesize
from kwloc.gradcheck import TOLERANCE, run_suite, tiny_config
from kwloc.models import KeywordModel, ModelConfig, Vocabulary
from kwloc.supervision import TrainConfig, train

SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(criterion, passed, detail):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}")

    return emit


# --------------------------------------------------------------------------
# Shared training runs
# --------------------------------------------------------------------------

_corpora: dict[int, object] = {}
_runs: dict[tuple, dict] = {}


def corpus_for(seed):
    if seed not in _corpora:
        _corpora[seed] = synthesize(CorpusConfig(seed=seed))
    return _corpora[seed]


def trained(variant, supervision, seed):
    """Train once per (variant, supervision, seed); test metrics at dev-tuned theta."""
    key = (variant, supervision, seed)
    if key not in _runs:
        c = corpus_for(seed)
        model = KeywordModel(ModelConfig.desk(variant, init_seed=seed), c.vocab)
        start = time.perf_counter()
        train(model, c.train, c.dev, supervision, TrainConfig.desk(seed=seed))
        seconds = time.perf_counter() - start
        dev = ev.score_utterances(model, c.dev)
        test = ev.score_utterances(model, c.test, keep_traces=True)
        res = {"model": model, "seconds": seconds, "test": test}
        for task in ("detection", "localisation"):
            res[task] = ev.metrics_from_table(test, task, ev.tune_threshold(dev, task))
        _runs[key] = res
    return _runs[key]


# --------------------------------------------------------------------------
# 1. Gradient suite
# --------------------------------------------------------------------------


def test_criterion_1_gradient_suite(report):
    start = time.perf_counter()
    rep = run_suite(range(20))
    seconds = time.perf_counter() - start
    variants = {k.split("/")[0] for k in rep.errors}
    ok = rep.max_error < TOLERANCE and seconds < 60 and set(md.VARIANTS) <= variants
    report(1, ok, f"max rel err {rep.max_error:.2e} over {len(rep.errors)} tensors, 20 seeds, {seconds:.1f}s")
    assert set(md.VARIANTS) <= variants
    assert rep.max_error < TOLERANCE
    assert seconds < 60


# --------------------------------------------------------------------------
# 2. Attention invariants
# --------------------------------------------------------------------------


def test_criterion_2_attention_invariants(report):
    rng = np.random.default_rng(2024)
    worst_sum, negatives, flips = 0.0, 0, 0
    cache = {}
    for i in range(1000):
        variant = ("cnn-attend", "cnn-poolattend")[i % 2]
        mseed = int(rng.integers(0, 20))
        if (variant, mseed) not in cache:
            cfg = tiny_config(variant)
            cfg.init_seed = mseed
            m = KeywordModel(cfg, Vocabulary([f"k{j}" for j in range(5)]))
            m.params["embed"].data = np.random.default_rng(mseed).normal(0, 2, size=m.params["embed"].shape).astype(np.float32)
            cache[variant, mseed] = m
        m = cache[variant, mseed]
        X = rng.normal(0, 1.5, size=(int(rng.integers(1, 60)), 4)).astype(np.float32)
        w = int(rng.integers(0, 5))
        tr = md.attention_trace(m, X, w)
        a = tr.weights.astype(np.float64)
        negatives += int(np.sum(a < 0))
        worst_sum = max(worst_sum, abs(a.sum() - 1))
        shifted = tn.softmax(tn.Tensor(tr.scores.astype(np.float64) + rng.uniform(-50, 50))).data
        flips += int(np.argmax(shifted) != np.argmax(tr.weights))
    ok = negatives == 0 and worst_sum < 1e-6 and flips == 0
    report(2, ok, f"1000 triples: max |sum(alpha)-1| = {worst_sum:.1e}, negative weights {negatives}, argmax changes {flips}")
    assert negatives == 0 and worst_sum < 1e-6 and flips == 0


# --------------------------------------------------------------------------
# 3. Aggregation limits
# --------------------------------------------------------------------------


def test_criterion_3_aggregation_limits(report):
    rng = np.random.default_rng(3)
    bounds_ok, max_gap, mean_gap = True, 0.0, 0.0
    for _ in range(500):
        s = rng.uniform(0, 1, size=(int(rng.integers(1, 80)), 1))
        g = {r: float(md.aggregate_logsumexp(s, r)[0]) for r in (1e-3, 1.0, 1e3)}
        lo, hi = s.mean(), s.max()
        bounds_ok &= all(lo - 1e-12 <= v <= hi + 1e-12 for v in g.values())
        max_gap = max(max_gap, abs(g[1e3] - hi))
        mean_gap = max(mean_gap, abs(g[1e-3] - lo))
    ok = bounds_ok and max_gap < 0.01 and mean_gap < 0.01
    report(3, ok, f"mean <= g <= max: {bounds_ok}; |g(1e3)-max| <= {max_gap:.4f}; |g(1e-3)-mean| <= {mean_gap:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 4. Metric oracle
# --------------------------------------------------------------------------


def _enumerate(table, task, theta):
    tp = props = pos = 0
    for i in range(table.scores.shape[0]):
        for w in range(table.scores.shape[1]):
            proposed = table.scores[i, w] >= theta
            pos += int(table.positive[i, w])
            props += int(proposed)
            tp += int(proposed and (table.positive[i, w] if task == "detection" else table.hit[i, w]))
    p = Fraction(tp, props) if props else Fraction(0)
    r = Fraction(tp, pos) if pos else Fraction(0)
    f = 2 * p * r / (p + r) if p + r else Fraction(0)
    return (tp, props, pos), (p, r, f)


def test_criterion_4_metric_oracle(report):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(200):
        N, W = int(rng.integers(1, 15)), int(rng.integers(1, 8))
        positive = rng.random((N, W)) < rng.uniform(0.1, 0.6)
        hit = positive & (rng.random((N, W)) < 0.6)
        table = ev.ScoreTable([str(i) for i in range(N)], np.round(rng.random((N, W)), 2), np.zeros((N, W), int), positive, hit)
        theta = float(rng.choice(ev.DEFAULT_GRID))
        for task in ("detection", "localisation"):
            got = ev.metrics_from_table(table, task, theta)
            counts, prf = _enumerate(table, task, theta)
            same_counts = (got.tp, got.proposals, got.positives) == counts
            same_prf = all(abs(a - float(b)) <= 1e-12 for a, b in zip((got.precision, got.recall, got.f1), prf))
            mismatches += not (same_counts and same_prf)
    report(4, mismatches == 0, f"200 tables x 2 tasks, mismatches {mismatches}")
    assert mismatches == 0


# --------------------------------------------------------------------------
# 5. BoW end-to-end
# --------------------------------------------------------------------------


def test_criterion_5_bow_end_to_end(report):
    att = trained("cnn-attend", "bow", 0)
    psc = trained("psc", "bow", 0)
    d, lo, pl = att["detection"].f1, att["localisation"].f1, psc["localisation"].f1
    ok = d >= 0.90 and lo >= 0.75 and pl >= 0.75 and att["seconds"] <= 600 and psc["seconds"] <= 600
    report(
        5,
        ok,
        f"CNN-Attend det F1 {d:.3f} loc F1 {lo:.3f} ({att['seconds']:.0f}s); "
        f"PSC loc F1 {pl:.3f} ({psc['seconds']:.0f}s)",
    )
    assert d >= 0.90 and lo >= 0.75 and pl >= 0.75
    assert att["seconds"] <= 600 and psc["seconds"] <= 600


# --------------------------------------------------------------------------
# 6 and 7. Visual supervision orderings
# --------------------------------------------------------------------------


def _median(variant, task):
    return statistics.median(trained(variant, "visual", s)[task].f1 for s in SEEDS)


def test_criterion_6_visual_localisation_ordering(report):
    att, pool, psc = (_median(v, "localisation") for v in ("cnn-attend", "cnn-pool", "psc"))
    per_seed = "; ".join(
        f"seed {s}: " + " ".join(f"{v}={trained(v, 'visual', s)['localisation'].f1:.3f}" for v in ("cnn-attend", "cnn-pool", "psc"))
        for s in SEEDS
    )
    ok = att > pool and att > psc
    report(6, ok, f"median loc F1 CNN-Attend {att:.3f}, CNN-Pool {pool:.3f}, PSC {psc:.3f} ({per_seed})")
    assert att > pool
    assert att > psc


def test_criterion_7_detection_localisation_gap(report):
    loc_gap = 100 * (_median("cnn-attend", "localisation") - _median("cnn-pool", "localisation"))
    det_gap = 100 * abs(_median("cnn-attend", "detection") - _median("cnn-pool", "detection"))
    ok = loc_gap >= 5 and det_gap < 10
    report(7, ok, f"loc F1 gap {loc_gap:.1f} points (need >= 5), det F1 gap {det_gap:.1f} points (need < 10)")
    assert loc_gap >= 5
    assert det_gap < 10


# --------------------------------------------------------------------------
# 8. Determinism
# --------------------------------------------------------------------------


def test_criterion_8_determinism(report, tmp_path):
    data = tmp_path / "data"
    assert cli.main(["synth", "--out", str(data), "--train", "40", "--dev", "10", "--test", "10", "--seed", "8"]) == 0
    same = []
    for variant in md.VARIANTS:
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{variant}-{rep}.kwlm"
            args = ["train", "--model", variant, "--supervision", "visual", "--data", str(data), "--out", str(out)]
            assert cli.main(args + ["--epochs", "2", "--seed", "5"]) == 0
            outs.append(out.read_bytes())
        same.append(outs[0] == outs[1])
    for rep in ("a", "b"):
        assert cli.main(["compare", "--data", str(data), "--out", str(tmp_path / f"cmp-{rep}"), "--epochs", "2"]) == 0
    tables = [
        (tmp_path / "cmp-a" / t).read_bytes() == (tmp_path / "cmp-b" / t).read_bytes()
        for t in ("localisation.csv", "detection.csv")
    ]
    ok = all(same) and all(tables)
    report(8, ok, f"train reruns identical for {sum(same)}/4 variants; compare tables identical {sum(tables)}/2")
    assert ok


# --------------------------------------------------------------------------
# 9. Error taxonomy
# --------------------------------------------------------------------------


def _injected_cases():
    vocab = Vocabulary(
        ["swim", "dog"], words=["swim", "dog", "backstroke", "pool", "the", "ball"], groups=[["swim", "backstroke", "pool"]]
    )

    def case(words, masses, tau_word, keyword):
        spans, t = [], 0
        for w in words:
            spans.append(Span(w, t, t + 4))
            t += 5
        weights = np.zeros(t)
        for s, m in zip(spans, masses):
            weights[s.start : s.end + 1] = m / 5
        tau = next(s for s in spans if s.word == tau_word).start + 2
        u = Utterance("x", np.zeros((t, 1), np.float32), spans, np.zeros(2, np.uint8), np.zeros(2, np.float32))
        return ev.classify_proposal(u, keyword, tau, vocab, weights, np.arange(t))

    return [
        (case(["the", "backstroke", "ball"], [0.05, 0.9, 0.05], "backstroke", "swim"), "semantic-single"),
        (case(["pool", "the", "ball"], [0.7, 0.2, 0.1], "pool", "swim"), "semantic-single"),
        (case(["the", "backstroke", "ball", "dog"], [0.1, 0.3, 0.35, 0.25], "ball", "swim"), "semantic-multi"),
        (case(["pool", "the", "backstroke"], [0.3, 0.3, 0.4], "the", "swim"), "semantic-multi"),
        (case(["the", "swim", "ball"], [0.1, 0.8, 0.1], "swim", "swim"), "correct"),
        (case(["the", "dog", "ball"], [0.1, 0.1, 0.8], "ball", "swim"), "incorrect"),
    ]


def test_criterion_9_error_taxonomy(report):
    run = trained("cnn-attend", "visual", 0)
    c = corpus_for(0)
    table = run["test"]
    partition_ok, total = True, 0
    for theta in (0.0, 0.5):
        outs = ev.localisation_outcomes(table, c.vocab, theta)
        counts = ev.categorise_errors(outs, c.test, c.vocab, table.traces)
        proposals = [o for o in outs if o.tau is not None]
        total += len(proposals)
        partition_ok &= sum(counts.values()) == len(proposals)
        partition_ok &= all(o.category in ev.CATEGORIES for o in proposals)
        if theta == 0.5:
            summary = ", ".join(f"{k} {v}" for k, v in counts.items())
    cases = _injected_cases()
    injected_ok = all(got == want for got, want in cases)
    ok = partition_ok and injected_ok
    report(9, ok, f"{total} proposals partitioned: {partition_ok}; at theta 0.5: {summary}; injected cases {sum(g == w for g, w in cases)}/{len(cases)}")
    assert partition_ok and injected_ok
