"""Command-line entry point: ``deiste {train,eval,predict,gradcheck,baseline}``.

Settings resolve as command-line flag > ``--config`` file > built-in
default. The config file holds ``key = value`` lines (``#`` comments);
keys are flag names with or without the leading dashes.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import _kernels
from .baselines import majority_baseline, single_sentence_baseline, train_overlap_classifier
from .checks import TOLERANCE, run_gradcheck
from .data import load_tsv
from .errors import DeisteError
from .model import (
    ABLATIONS,
    TrainConfig,
    build_model,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    score_predictions,
    seeded_generators,
    train,
)

log = logging.getLogger("deiste")

BASELINES = ("majority", "ngram", "premise-only", "hypothesis-only")

# option name -> (type, default); None default means "not set"
SETTINGS = {
    "train": (str, None),
    "dev": (str, None),
    "test": (str, None),
    "embeddings": (str, None),
    "checkpoint": (str, None),
    "report": (str, None),
    "seed": (int, 0),
    "epochs": (int, 10),
    "lr": (float, 0.01),
    "batch_size": (int, 50),
    "dm": (int, 50),
    "hidden": (int, 300),
    "max_positions": (int, 60),
    "ablation": (str, "none"),
    "single_direction": (bool, False),
    "strict": (bool, False),
}


class UsageError(Exception):
    pass


@dataclass
class RunReport:
    command: str
    config: dict
    seed: int
    history: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_dev_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None
    confusion: Optional[dict] = None
    results: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _to_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key = key.strip().lstrip("-").replace("-", "_")
            if key not in SETTINGS:
                raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
            kind = SETTINGS[key][0]
            value = value.strip()
            try:
                out[key] = _to_bool(value) if kind is bool else kind(value)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def resolve_settings(args, overrides=None) -> dict:
    settings = {k: default for k, (_, default) in SETTINGS.items()}
    settings.update(overrides or {})
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings["ablation"] not in ABLATIONS:
        raise UsageError(f"--ablation must be one of {', '.join(ABLATIONS)}")
    return settings


def train_config(s) -> TrainConfig:
    cfg = TrainConfig(
        learning_rate=s["lr"],
        batch_size=s["batch_size"],
        d_m=s["dm"],
        hidden=s["hidden"],
        epochs=s["epochs"],
        seed=s["seed"],
        single_direction=s["single_direction"],
        max_positions=s["max_positions"],
    )
    return cfg.with_ablation(s["ablation"])


def _require(s, *names):
    missing = [n for n in names if not s.get(n)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _load(s, key, require_label=True):
    return load_tsv(s[key], strict=s["strict"], require_label=require_label) if s.get(key) else []


def _write_report(s, report: RunReport):
    if s.get("report"):
        Path(s["report"]).write_text(report.to_json(), encoding="utf-8")


def _print_epoch(rec):
    dev = "n/a" if rec.dev_accuracy is None else f"{100 * rec.dev_accuracy:.2f}%"
    print(f"epoch {rec.epoch:3d}  train_loss {rec.train_loss:.4f}  dev_acc {dev}", flush=True)


def _print_eval(name, res):
    c = res.confusion()
    print(
        f"{name}: accuracy {100 * res.accuracy:.2f}% ({res.correct}/{res.total})  "
        f"tp {c['tp']} tn {c['tn']} fp {c['fp']} fn {c['fn']}",
        flush=True,
    )


def cmd_train(s) -> int:
    _require(s, "train", "checkpoint")
    start = time.perf_counter()
    cfg = train_config(s)
    train_set, dev_set, test_set = _load(s, "train"), _load(s, "dev"), _load(s, "test")
    init_rng, _ = seeded_generators(cfg.seed)
    model = build_model(train_set, dev_set, cfg, s["embeddings"], rng=init_rng)
    result = train(train_set, dev_set, cfg, model=model, on_epoch=_print_epoch)
    save_checkpoint(s["checkpoint"], result.model, result.optimizer)
    report = RunReport(
        "train",
        asdict(cfg),
        cfg.seed,
        history=[asdict(r) for r in result.history],
        best_epoch=result.best_epoch,
        best_dev_accuracy=result.best_dev_accuracy,
    )
    report.results["embedding_coverage"] = list(model.embeddings.coverage)
    if result.best_dev_accuracy is not None:
        print(f"best dev accuracy {100 * result.best_dev_accuracy:.2f}% at epoch {result.best_epoch}")
    if test_set:
        res = evaluate(result.model, test_set)
        _print_eval("test", res)
        report.test_accuracy = res.accuracy
        report.confusion = res.confusion()
    print(f"checkpoint written to {s['checkpoint']}")
    report.wall_clock_seconds = time.perf_counter() - start
    _write_report(s, report)
    return 0


def _read_predictions(path):
    labels = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                labels.append(int(line.split("\t")[-1]))
    return labels


def cmd_eval(s, predictions=None) -> int:
    _require(s, "test")
    start = time.perf_counter()
    test_set = _load(s, "test")
    if predictions:
        res = score_predictions(_read_predictions(predictions), [ex.label for ex in test_set])
        cfg, seed = {}, s["seed"]
    else:
        _require(s, "checkpoint")
        model, _, manifest = load_checkpoint(s["checkpoint"])
        res = evaluate(model, test_set)
        cfg, seed = manifest["config"], manifest["seed"]
    _print_eval("eval", res)
    report = RunReport("eval", cfg, seed, test_accuracy=res.accuracy, confusion=res.confusion())
    report.wall_clock_seconds = time.perf_counter() - start
    _write_report(s, report)
    return 0


def cmd_predict(s, output=None) -> int:
    _require(s, "checkpoint", "test")
    model, _, _ = load_checkpoint(s["checkpoint"])
    examples = _load(s, "test", require_label=False)
    probs = model.predict_proba(examples)
    out = open(output, "w", encoding="utf-8") if output else sys.stdout
    try:
        for p in probs:
            out.write(f"{p:.6f}\t{int(p >= 0.5)}\n")
    finally:
        if output:
            out.close()
    return 0


def cmd_gradcheck(s, count=20, eps=1e-5) -> int:
    start = time.perf_counter()
    cases = run_gradcheck(s["seed"], count, eps, on_case=lambda c: print(c.summary(), flush=True))
    worst = max(c.max_rel_error for c in cases)
    kinked = sum(c.kinked for c in cases)
    entries = sum(c.entries for c in cases)
    ok = worst < TOLERANCE
    print(f"max relative error {worst:.3e} over {len(cases)} configurations "
          f"({kinked}/{entries} entries straddled a kink) -> {'PASS' if ok else 'FAIL'}")
    report = RunReport("gradcheck", {}, s["seed"], results={"max_rel_error": worst, "kinked": kinked, "entries": entries,
                                                            "cases": [c.summary() for c in cases]})
    report.wall_clock_seconds = time.perf_counter() - start
    _write_report(s, report)
    return 0 if ok else 1


def cmd_baseline(s, which) -> int:
    _require(s, "test")
    names = BASELINES if which == "all" else (which,)
    if any(n != "majority" for n in names):
        _require(s, "train")
    start = time.perf_counter()
    cfg = train_config(s)
    train_set, dev_set, test_set = _load(s, "train"), _load(s, "dev"), _load(s, "test")
    report = RunReport("baseline", asdict(cfg), cfg.seed)
    for name in names:
        if name == "majority":
            res = majority_baseline(test_set, train_set or None)
        elif name == "ngram":
            res = train_overlap_classifier(train_set, seed=cfg.seed).evaluate(test_set)
        else:
            result = single_sentence_baseline(name.split("-")[0], train_set, dev_set, cfg, s["embeddings"], _print_epoch)
            res = evaluate(result.model, test_set)
        _print_eval(name, res)
        report.results[name] = {"accuracy": res.accuracy, "confusion": res.confusion()}
    report.wall_clock_seconds = time.perf_counter() - start
    _write_report(s, report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deiste", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--train")
        p.add_argument("--dev")
        p.add_argument("--test")
        p.add_argument("--embeddings", help="word2vec text-format vectors")
        p.add_argument("--checkpoint", help="checkpoint directory")
        p.add_argument("--report", help="write a JSON run report here")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--dm", type=int, help="position embedding size")
        p.add_argument("--hidden", type=int, help="hidden (= embedding) size")
        p.add_argument("--max-positions", dest="max_positions", type=int)
        p.add_argument("--ablation", choices=ABLATIONS)
        p.add_argument("--single-direction", dest="single_direction", action="store_const", const=True)
        p.add_argument("--strict", action="store_const", const=True, help="abort on malformed TSV lines")
        return p

    common(sub.add_parser("train", help="train DeIsTe and save the best-dev checkpoint"))
    p = common(sub.add_parser("eval", help="accuracy and confusion counts on a labelled TSV"))
    p.add_argument("--predictions", help="score a file of predicted labels instead of a checkpoint")
    p = common(sub.add_parser("predict", help="probability and label per line of a TSV"))
    p.add_argument("--output", help="write predictions here instead of stdout")
    p = common(sub.add_parser("gradcheck", help="finite-difference check on seeded tiny models"))
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--eps", type=float, default=1e-5)
    p = common(sub.add_parser("baseline", help="majority, n-gram overlap and single-sentence baselines"))
    p.add_argument("--which", choices=BASELINES + ("all",), default="all")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    log.debug("kernel backend: %s", _kernels.backend())
    try:
        # the gradient check has its own conventional seed
        s = resolve_settings(args, {"seed": 7} if args.command == "gradcheck" else None)
        if args.command == "train":
            return cmd_train(s)
        if args.command == "eval":
            return cmd_eval(s, args.predictions)
        if args.command == "predict":
            return cmd_predict(s, args.output)
        if args.command == "gradcheck":
            return cmd_gradcheck(s, args.count, args.eps)
        return cmd_baseline(s, args.which)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"deiste: error: {exc}", file=sys.stderr)
        return 2
    except (DeisteError, OSError, ValueError) as exc:
        print(f"deiste: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
