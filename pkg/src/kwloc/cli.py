"""Command-line entry points.

    kwloc synth      --out DIR [--seed N] [--config FILE]
    kwloc train      --model VARIANT --supervision bow|visual --data DIR --out FILE.kwlm
    kwloc eval       --model FILE --data DIR --task detection|localisation (--theta X | --tune-theta)
    kwloc localise   --model FILE --data DIR --utterance ID --keyword W [--emit-svg FILE]
    kwloc compare    --data DIR --out DIR
    kwloc gradcheck  [--seed N]

Every option can also come from a ``key = value`` file given with
``--config``; command-line flags win. Exit codes: 0 success, 1 validation
error, 2 runtime error (including training divergence).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import evaluate as ev
from .models import (
    ATTENTION_VARIANTS,
    VARIANTS,
    KeywordModel,
    ModelConfig,
    ModelFormatError,
    check_compatible,
    load_model,
    predict,
    save_model,
)
from .plots import frame_curve, localisation_svg
from .supervision import DEFAULT_THETA, DivergenceError, TrainConfig, VisualNoiseConfig, train

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

_DESK = TrainConfig.desk()
DESK_TRAINING = dict(lr=_DESK.lr, batch_size=_DESK.batch_size, epochs=_DESK.epochs)


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Config files and run manifests
# --------------------------------------------------------------------------


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment, section headers are ignored."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = _parse_value(value)
    return out


def _parse_value(v: str):
    if len(v) >= 2 and v[0] == v[-1] and v[0] in "\"'":
        return v[1:-1]
    low = v.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def _merge_config(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """defaults < config file < explicit flags (flags default to None)."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = parse_config_file(args.config)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged.update(file_cfg)
    for key, value in vars(args).items():
        if value is not None:
            merged[key] = value
    return argparse.Namespace(**merged)


def git_describe() -> str:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).resolve().parent,
            timeout=10,
        )
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    git_describe: str
    outputs: list[str] = field(default_factory=list)
    wall_seconds: float = 0.0

    def write(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n")
        os.replace(tmp, path)


def _jsonable(ns: argparse.Namespace) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(ns).items()) if k != "func"}


# --------------------------------------------------------------------------
# synth
# --------------------------------------------------------------------------

SYNTH_DEFAULTS = {f.name: f.default for f in dataclasses.fields(corpus_mod.CorpusConfig) if f.name != "visual"}
SYNTH_DEFAULTS.update(config=None, out=None, noiseless_visual=False)


def cmd_synth(args) -> int:
    a = _merge_config(args, SYNTH_DEFAULTS)
    if not a.out:
        raise ValidationError("--out is required")
    fields = {f.name for f in dataclasses.fields(corpus_mod.CorpusConfig)} - {"visual"}
    try:
        cfg = corpus_mod.CorpusConfig(
            **{k: getattr(a, k) for k in fields}, visual=VisualNoiseConfig(noiseless=bool(a.noiseless_visual))
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid corpus config: {exc}") from None
    start = time.perf_counter()
    corpus = corpus_mod.synthesize(cfg)
    corpus_mod.write_corpus(corpus, a.out)
    for split in corpus_mod.SPLITS:
        print(f"{split}: {len(corpus.split(split))} utterances")
    RunManifest(
        "synth", _jsonable(a), cfg.seed, git_describe(), [str(a.out)], round(time.perf_counter() - start, 3)
    ).write(Path(a.out) / "run.json")
    return EXIT_OK


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

TRAIN_DEFAULTS = dict(
    config=None,
    model=None,
    supervision="bow",
    data=None,
    out=None,
    preset="desk",
    lr=None,  # None: follows the preset (desk 1e-3 / batch 16, full 1e-4 / batch 32)
    batch_size=None,
    epochs=25,
    seed=0,
    theta=None,
    keyword_sampling="all",
    negatives_per_positive=3,
    r=1.0,
    log=None,
    manifest=None,
)


def _validate_train_args(a) -> None:
    if a.model not in VARIANTS:
        raise ValidationError(f"--model must be one of {', '.join(VARIANTS)}")
    if a.supervision not in ("bow", "visual"):
        raise ValidationError("--supervision must be bow or visual")
    if not a.data or not a.out:
        raise ValidationError("--data and --out are required")
    if a.theta is not None and not 0 <= a.theta <= 1:
        raise ValidationError("--theta must lie in [0, 1]")


def run_training(a, corpus=None, quiet: bool = False) -> tuple[KeywordModel, list[dict]]:
    """Train one model from resolved options; writes model, log and manifest."""
    start = time.perf_counter()
    corpus = corpus or corpus_mod.read_corpus(a.data)
    if not corpus.train:
        raise ValidationError(f"corpus at {a.data} has no training utterances")
    base = TrainConfig.desk() if a.preset == "desk" else TrainConfig()
    a.lr = base.lr if a.lr is None else a.lr
    a.batch_size = base.batch_size if a.batch_size is None else a.batch_size
    try:
        mcfg = ModelConfig.preset(a.preset, a.model, r=float(a.r), feature_dim=corpus.feature_dim, init_seed=int(a.seed))
        tcfg = TrainConfig(
            lr=float(a.lr),
            batch_size=int(a.batch_size),
            epochs=int(a.epochs),
            seed=int(a.seed),
            theta=a.theta,
            keyword_sampling=a.keyword_sampling,
            negatives_per_positive=int(a.negatives_per_positive),
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    model = KeywordModel(mcfg, corpus.vocab)
    out = Path(a.out)
    log_path = Path(a.log) if a.log else out.with_suffix(".log.csv")
    manifest_path = Path(a.manifest) if a.manifest else out.with_suffix(".run.json")

    def progress(row):
        if not quiet:
            print(
                f"epoch {row['epoch']}: loss={row['train_loss']:.4f} "
                f"dev det F1={row.get('dev_detection_F1', float('nan')):.3f} "
                f"loc F1={row.get('dev_localisation_F1', float('nan')):.3f}",
                flush=True,
            )

    result = train(model, corpus.train, corpus.dev, a.supervision, tcfg, log_path=log_path, progress=progress)
    save_model(model, out)
    RunManifest(
        "train",
        _jsonable(a),
        int(a.seed),
        git_describe(),
        [str(out), str(log_path)],
        round(time.perf_counter() - start, 3),
    ).write(manifest_path)
    return model, result.log


def cmd_train(args) -> int:
    a = _merge_config(args, TRAIN_DEFAULTS)
    _validate_train_args(a)
    model, log = run_training(a)
    print(f"wrote {a.out} ({model})")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

EVAL_DEFAULTS = dict(
    config=None,
    model=None,
    data=None,
    split="test",
    task="localisation",
    theta=None,
    tune_theta=False,
    categorise=False,
    mass_threshold=0.5,
    out=None,
    outcomes=None,
)


def _load_scorer(spec: str, corpus):
    if spec == "oracle":
        return ev.OracleScorer(corpus.vocab)
    try:
        model = load_model(spec)
    except FileNotFoundError:
        raise ValidationError(f"model file {spec} not found") from None
    except ModelFormatError as exc:
        raise ValidationError(f"{spec}: {exc}") from None
    try:
        check_compatible(model, corpus.vocab, corpus.feature_dim)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    return model


def cmd_eval(args) -> int:
    a = _merge_config(args, EVAL_DEFAULTS)
    if not a.model or not a.data:
        raise ValidationError("--model and --data are required")
    if a.task not in ("detection", "localisation"):
        raise ValidationError("--task must be detection or localisation")
    if a.theta is not None and not 0 <= a.theta <= 1:
        raise ValidationError(f"--theta must lie in [0, 1], got {a.theta}")
    if a.theta is not None and a.tune_theta:
        raise ValidationError("--theta and --tune-theta are mutually exclusive")
    corpus = corpus_mod.read_corpus(a.data)
    scorer = _load_scorer(a.model, corpus)
    utts = corpus.split(a.split)
    if a.tune_theta:
        theta = ev.tune_threshold(ev.score_utterances(scorer, corpus.dev), a.task)
    else:
        theta = a.theta if a.theta is not None else 0.5
    table = ev.score_utterances(scorer, utts, keep_traces=a.categorise)
    report = ev.metrics_from_table(table, a.task, theta)
    name = "oracle" if a.model == "oracle" else Path(a.model).stem
    row = report.as_row(model=name, split=a.split)
    rows = [row]
    if a.categorise:
        outcomes = ev.localisation_outcomes(table, corpus.vocab, theta)
        counts = ev.categorise_errors(outcomes, utts, corpus.vocab, table.traces, a.mass_threshold)
        row.update({f"n_{k}": v for k, v in counts.items()})
        if a.outcomes:
            ev.write_outcomes_jsonl(outcomes, a.outcomes)
    if a.out:
        ev.write_rows_csv(rows, a.out)
    keys = list(row)
    print(",".join(keys))
    print(",".join(str(ev._fmt(row[k])) for k in keys))
    return EXIT_OK


# --------------------------------------------------------------------------
# localise
# --------------------------------------------------------------------------

LOCALISE_DEFAULTS = dict(
    config=None, model=None, data=None, utterance=None, keyword=None, theta=0.5, emit_svg=None, mass_threshold=0.5
)


def cmd_localise(args) -> int:
    a = _merge_config(args, LOCALISE_DEFAULTS)
    if not (a.model and a.data and a.utterance is not None and a.keyword is not None):
        raise ValidationError("--model, --data, --utterance and --keyword are required")
    if not 0 <= a.theta <= 1:
        raise ValidationError("--theta must lie in [0, 1]")
    corpus = corpus_mod.read_corpus(a.data)
    scorer = _load_scorer(a.model, corpus)
    try:
        utt = corpus.find(str(a.utterance))
    except KeyError as exc:
        raise ValidationError(str(exc.args[0])) from None
    kw = str(a.keyword)
    if kw in corpus.vocab.keywords:
        w = corpus.vocab.index(kw)
    elif kw.isdigit() and int(kw) < len(corpus.vocab):
        w = int(kw)
        kw = corpus.vocab.keywords[w]
    else:
        raise ValidationError(f"unknown keyword {kw!r}")
    pred = ev.predict_utterance(scorer, utt)
    score = float(pred.scores[w])
    tau = int(pred.taus[w])
    weights = pred.weights[:, w]
    if score >= a.theta:
        category = ev.classify_proposal(utt, kw, tau, corpus.vocab, weights, pred.frame_map, a.mass_threshold)
        print(f"utterance {utt.id} keyword {kw}: score={score:.6f} tau={tau} category={category}")
        shown_tau = tau
    else:
        category = "no-proposal"
        print(f"utterance {utt.id} keyword {kw}: score={score:.6f} no-proposal (score < theta={a.theta})")
        shown_tau = None
    if a.emit_svg:
        curve = frame_curve(weights, pred.frame_map, utt.frames)
        svg = localisation_svg(utt.features, utt.spans, curve, kw, score, shown_tau, a.theta, category)
        Path(a.emit_svg).write_text(svg)
    return EXIT_OK


# --------------------------------------------------------------------------
# compare
# --------------------------------------------------------------------------

COMPARE_DEFAULTS = dict(
    config=None,
    data=None,
    out=None,
    preset="desk",
    seed=0,
    r=1.0,
    theta_policy="tuned",
    keyword_sampling="all",
    negatives_per_positive=3,
    **DESK_TRAINING,
)


def _compare_job(job: dict) -> dict:
    a = argparse.Namespace(**job["args"])
    corpus = corpus_mod.read_corpus(a.data)
    model, _ = run_training(a, corpus, quiet=True)
    dev = ev.score_utterances(model, corpus.dev) if corpus.dev else None
    test = ev.score_utterances(model, corpus.test)
    res = {"model": a.model, "supervision": a.supervision}
    for task in ("detection", "localisation"):
        if job["theta_policy"] == "tuned" and dev is not None:
            theta = ev.tune_threshold(dev, task)
        else:
            theta = DEFAULT_THETA[a.supervision]
        res[task] = dataclasses.asdict(ev.metrics_from_table(test, task, theta))
    return res


def compare_tables(results: list[dict]) -> dict[str, list[dict]]:
    tables = {}
    for task in ("localisation", "detection"):
        rows = []
        for variant in VARIANTS:
            row = {"model": variant}
            for sup in ("bow", "visual"):
                r = next(x for x in results if x["model"] == variant and x["supervision"] == sup)[task]
                row[f"{sup}_P"] = 100 * r["precision"]
                row[f"{sup}_R"] = 100 * r["recall"]
                row[f"{sup}_F1"] = 100 * r["f1"]
            rows.append(row)
        tables[task] = rows
    return tables


def cmd_compare(args) -> int:
    a = _merge_config(args, COMPARE_DEFAULTS)
    if not a.data or not a.out:
        raise ValidationError("--data and --out are required")
    if a.theta_policy not in ("tuned", "default"):
        raise ValidationError("--theta-policy must be tuned or default")
    start = time.perf_counter()
    out = Path(a.out)
    (out / "models").mkdir(parents=True, exist_ok=True)
    corpus_mod.read_vocabulary(a.data)  # fail fast on a bad corpus directory
    jobs = []
    for variant in VARIANTS:
        for sup in ("bow", "visual"):
            run = dict(TRAIN_DEFAULTS)
            run.update(
                model=variant,
                supervision=sup,
                data=str(a.data),
                out=str(out / "models" / f"{variant}_{sup}.kwlm"),
                preset=a.preset,
                lr=a.lr,
                batch_size=a.batch_size,
                epochs=a.epochs,
                seed=a.seed,
                r=a.r,
                keyword_sampling=a.keyword_sampling,
                negatives_per_positive=a.negatives_per_positive,
            )
            jobs.append({"args": run, "theta_policy": a.theta_policy})
    workers = max(1, int(os.environ.get("KWLOC_THREADS", "1")))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_compare_job, jobs))
    else:
        results = []
        for job in jobs:
            print(f"training {job['args']['model']} / {job['args']['supervision']}", flush=True)
            results.append(_compare_job(job))
    tables = compare_tables(results)
    ev.write_rows_csv(tables["localisation"], out / "localisation.csv")
    ev.write_rows_csv(tables["detection"], out / "detection.csv")
    for task in ("localisation", "detection"):
        print(f"\n{task} (%)")
        for row in tables[task]:
            print(
                f"{row['model']:<15} bow P/R/F1 {row['bow_P']:5.1f} {row['bow_R']:5.1f} {row['bow_F1']:5.1f}"
                f"   visual P/R/F1 {row['visual_P']:5.1f} {row['visual_R']:5.1f} {row['visual_F1']:5.1f}"
            )
    RunManifest(
        "compare",
        _jsonable(a),
        int(a.seed),
        git_describe(),
        [str(out / "localisation.csv"), str(out / "detection.csv")],
        round(time.perf_counter() - start, 3),
    ).write(out / "run.json")
    return EXIT_OK


# --------------------------------------------------------------------------
# gradcheck
# --------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, corrupted_sigmoid, run_suite

    seeds = range(args.seed, args.seed + args.num_seeds)
    if args.corrupt:
        with corrupted_sigmoid():
            report = run_suite(seeds)
    else:
        report = run_suite(seeds)
    for name in sorted(report.errors):
        print(f"{name:<40} {report.errors[name]:.3e}")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"max relative error {report.max_error:.3e} (tolerance {TOLERANCE:.0e}): {verdict}")
    return EXIT_OK if report.passed else EXIT_RUNTIME


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kwloc", description="Keyword localisation with attention CNNs on synthetic speech features.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    for name in ("train", "dev", "test", "vocab_size", "num_keywords", "num_groups", "feature_dim"):
        s.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--noiseless-visual", dest="noiseless_visual", action="store_const", const=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config")
    t.add_argument("--model", choices=VARIANTS)
    t.add_argument("--supervision", choices=("bow", "visual"))
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--preset", choices=("desk", "full"))
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--theta", type=float)
    t.add_argument("--r", type=float)
    t.add_argument("--keyword-sampling", dest="keyword_sampling", choices=("all", "sampled"))
    t.add_argument("--negatives-per-positive", dest="negatives_per_positive", type=int)
    t.add_argument("--log")
    t.add_argument("--manifest")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a model on a corpus split")
    e.add_argument("--config")
    e.add_argument("--model", help="model file, or 'oracle' for the ground-truth scorer")
    e.add_argument("--data")
    e.add_argument("--split", choices=corpus_mod.SPLITS)
    e.add_argument("--task", choices=("detection", "localisation"))
    e.add_argument("--theta", type=float)
    e.add_argument("--tune-theta", dest="tune_theta", action="store_const", const=True)
    e.add_argument("--categorise", action="store_const", const=True)
    e.add_argument("--mass-threshold", dest="mass_threshold", type=float)
    e.add_argument("--out")
    e.add_argument("--outcomes", help="write per-pair outcomes as JSON lines")
    e.set_defaults(func=cmd_eval)

    lo = sub.add_parser("localise", help="localise one keyword in one utterance")
    lo.add_argument("--config")
    lo.add_argument("--model")
    lo.add_argument("--data")
    lo.add_argument("--utterance")
    lo.add_argument("--keyword")
    lo.add_argument("--theta", type=float)
    lo.add_argument("--emit-svg", dest="emit_svg")
    lo.set_defaults(func=cmd_localise)

    c = sub.add_parser("compare", help="train all four models under both supervisions")
    c.add_argument("--config")
    c.add_argument("--data")
    c.add_argument("--out")
    c.add_argument("--preset", choices=("desk", "full"))
    c.add_argument("--lr", type=float)
    c.add_argument("--batch-size", dest="batch_size", type=int)
    c.add_argument("--epochs", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--r", type=float)
    c.add_argument("--theta-policy", dest="theta_policy", choices=("tuned", "default"))
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op and model")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--num-seeds", dest="num_seeds", type=int, default=20)
    g.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    func = args.func
    del args.func
    del args.command
    try:
        return func(args)
    except (ValidationError, ModelFormatError, corpus_mod.CorpusFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
