"""Command-line entry point: ``wsal synth | train | score | eval | gradcheck``.

Settings come from an optional JSON config file, overridden by flags. Exit
codes: 0 success, 1 runtime failure, 2 usage error (bad flags, unknown config
keys, missing inputs). Failures print a one-line JSON object on stderr.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, fields

from . import __version__
from .augment import NoiseConfig, PseudoConfig
from .data import Manifest, read_features, segment_video
from .evaluate import evaluate, model_scorer
from .model import load_checkpoint, score
from .synthetic import SyntheticSpec, generate
from .train import TrainingConfig, train_manifest

THREADS_ENV = "WSAL_THREADS"
TOP_LEVEL_KEYS = {"synthetic", "training", "manifest", "checkpoint", "features", "out", "figures", "seeds"}


class UsageError(Exception):
    pass


def _check_keys(section, given, allowed):
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise UsageError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def load_config(path):
    """Read a JSON run config, rejecting keys the commands do not understand."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    _check_keys("config", doc, TOP_LEVEL_KEYS)
    _check_keys("synthetic", doc.get("synthetic", {}), [f.name for f in fields(SyntheticSpec)])
    training = doc.get("training", {})
    _check_keys("training", training, [f.name for f in fields(TrainingConfig)])
    _check_keys("training.noise", training.get("noise", {}), [f.name for f in fields(NoiseConfig)])
    _check_keys("training.pseudo", training.get("pseudo", {}), [f.name for f in fields(PseudoConfig)])
    return doc


def training_config(doc, args):
    values = dict(doc.get("training", {}))
    for flag, key in (("k", "k"), ("lam", "lam"), ("beta", "beta"), ("seed", "seed")):
        if getattr(args, flag, None) is not None:
            values[key] = getattr(args, flag)
    if getattr(args, "iters", None) is not None:
        values["iterations"] = args.iters
        # milestones past a shortened run are dropped
        ms = values.get("milestones", TrainingConfig.milestones)
        values["milestones"] = [x for x in ms if x < args.iters]
    try:
        return TrainingConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from exc


def synthetic_spec(doc, args):
    values = dict(doc.get("synthetic", {}))
    if args.seed is not None:
        values["seed"] = args.seed
    try:
        return SyntheticSpec(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad synthetic config: {exc}") from exc


def _setting(doc, args, name, required=True):
    value = getattr(args, name, None)
    if value is None:
        value = doc.get(name)
    if value is None and required:
        raise UsageError(f"--{name} is required (flag or config key)")
    return value


def _existing(path, what):
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _echo(out_dir, command, payload):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump({"command": command, "version": __version__, **payload}, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_synth(doc, args):
    spec = synthetic_spec(doc, args)
    out = _setting(doc, args, "out")
    generate(spec, out)
    _echo(out, "synth", {"synthetic": asdict(spec)})
    print(f"wrote {2 * (spec.n_train + spec.n_test)} videos to {out}")


def cmd_train(doc, args):
    cfg = training_config(doc, args)
    manifest = Manifest.load(_existing(_setting(doc, args, "manifest"), "manifest"))
    out = _setting(doc, args, "out")
    _echo(out, "train", {"training": cfg.to_dict(), "manifest": os.path.abspath(manifest.root)})
    with open(os.path.join(out, "augment_log.jsonl"), "w") as aug:
        result = train_manifest(manifest, cfg, out_dir=out, augment_log=aug)
    final = result.log_rows[-1] if result.log_rows else None
    print(f"trained {cfg.iterations} iterations; final total {final[6] if final else 'n/a'}; model at {out}/model.bin")


def _load_model(path):
    params, meta = load_checkpoint(_existing(path, "checkpoint"))
    return params, meta.get("training", {})


def cmd_score(doc, args):
    params, tcfg = _load_model(_setting(doc, args, "checkpoint"))
    feats = read_features(_existing(_setting(doc, args, "features"), "feature file"))
    out = _setting(doc, args, "out")
    m = int(tcfg.get("m", 32))
    segs, counts = segment_video(feats, m)
    scores = score(segs.astype(params["embed1.W"].dtype), params)
    _echo(out, "score", {"checkpoint": os.path.abspath(args.checkpoint or doc["checkpoint"]), "m": m})
    path = os.path.join(out, "scores.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "frames", "sem", "var", "fused"])
        for t in range(m):
            w.writerow([t, int(counts[t]), repr(float(scores.sem[t])), repr(float(scores.var[t])), repr(float(scores.fused[t]))])
    print(f"scored {m} segments -> {path}")


def cmd_eval(doc, args):
    params, tcfg = _load_model(_setting(doc, args, "checkpoint"))
    manifest = Manifest.load(_existing(_setting(doc, args, "manifest"), "manifest"))
    out = _setting(doc, args, "out")
    m = int(tcfg.get("m", 32))
    scorer = model_scorer(params, tcfg.get("dropout", 0.6), tcfg.get("hce_dropout", False))
    report = evaluate(manifest, scorer, m=m)
    figures = bool(args.figures or doc.get("figures", False))
    _echo(out, "eval", {"checkpoint": os.path.abspath(args.checkpoint or doc["checkpoint"]), "figures": figures, "m": m})
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    for which, name in (("overall", "roc.csv"), ("subset", "roc_subset.csv")):
        with open(os.path.join(out, name), "w") as fh:
            fh.write(report.roc_csv(which))
    if figures:
        from . import plots

        plots.roc_figure(report, os.path.join(out, "roc.png"))
        abnormal = [t for t, v in zip(report.tracks, report.videos) if v["label"] == 1][:6]
        normal = [t for t, v in zip(report.tracks, report.videos) if v["label"] == 0][:2]
        plots.score_tracks(abnormal + normal, os.path.join(out, "scores.png"))
    print(
        f"overall AUC {report.overall_auc:.4f}  anomaly-subset AUC {report.subset_auc:.4f}  "
        f"video AUC {report.video_auc:.4f}"
    )


def cmd_gradcheck(doc, args):
    from .gradcheck import check_objective

    seed = args.seed if args.seed is not None else 0
    n = args.seeds if args.seeds is not None else int(doc.get("seeds", 1))
    overrides = {}
    if args.k is not None:
        overrides["k"] = args.k
    if args.lam is not None:
        overrides["lam"] = args.lam
    if args.beta is not None:
        overrides["beta"] = args.beta
    results = [check_objective(seed + i, **overrides) for i in range(n)]
    worst = max(results, key=lambda r: r.max_rel_error)
    ok = worst.max_rel_error < 1e-4
    for r in results:
        print(f"seed {r.seed}: max relative error {r.max_rel_error:.3e} ({r.worst_param})")
    print(f"{'PASS' if ok else 'FAIL'}: worst {worst.max_rel_error:.3e} at seed {worst.seed}")
    if args.out or doc.get("out"):
        out = _setting(doc, args, "out")
        _echo(out, "gradcheck", {"seed": seed, "seeds": n, "overrides": overrides})
        with open(os.path.join(out, "gradcheck.json"), "w") as fh:
            json.dump([asdict(r) for r in results], fh, indent=1)
            fh.write("\n")
    if not ok:
        raise RuntimeError(f"gradient check failed: {worst.max_rel_error:.3e} >= 1e-4")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "score": cmd_score, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="wsal", description="Weakly supervised anomaly localization: data, training, scoring, evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        return p

    common(sub.add_parser("synth", help="generate the synthetic benchmark"))
    tr = common(sub.add_parser("train", help="train a model on a manifest"))
    tr.add_argument("--manifest")
    sc = common(sub.add_parser("score", help="score one feature file"))
    sc.add_argument("--checkpoint")
    sc.add_argument("--features")
    ev = common(sub.add_parser("eval", help="frame and video AUCs on a test split"))
    ev.add_argument("--checkpoint")
    ev.add_argument("--manifest")
    ev.add_argument("--figures", action="store_true", help="also render roc.png and scores.png")
    gc = common(sub.add_parser("gradcheck", help="finite-difference check of the training objective"))
    gc.add_argument("--seeds", type=int, help="number of consecutive seeds")
    for p in (tr, gc):
        p.add_argument("--k", type=int, help="context window radius")
        p.add_argument("--lambda", dest="lam", type=float, help="augmentation loss weight")
        p.add_argument("--beta", type=float, help="sparsity weight")
    tr.add_argument("--iters", type=int, help="training iterations")
    return parser


def _fail(kind, exc, code):
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        doc = load_config(args.config)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    threads = os.environ.get(THREADS_ENV)
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            try:
                n = int(threads)
            except ValueError:
                raise UsageError(f"{THREADS_ENV} must be an integer, got {threads!r}") from None
            with threadpool_limits(limits=n):
                COMMANDS[args.command](doc, args)
        else:
            COMMANDS[args.command](doc, args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except Exception as exc:  # any runtime failure becomes a structured exit 1
        return _fail("runtime", exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
