"""``metaclust`` command line: gen | train | cluster | eval | baseline | axioms.

Exit codes: 0 success, 1 usage, 2 I/O or parse error, 3 invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from metaclust import TrainingDivergenceError
from metaclust import axioms as ax
from metaclust.baselines import NOISE, DbscanConfig, KMeansConfig, dbscan, kmeans, single_linkage
from metaclust.dataio import (IngestOptions, ParseError, ingest, load_checkpoint, read_labels_csv,
                              read_table, read_task_csv, rows_to_csv, save_checkpoint, task_to_csv,
                              write_labels_csv)
from metaclust.evaluation import REPORT_FIELDS, best_match_error
from metaclust.model import init_params
from metaclust.numkit import make_rng, pairwise_distances, split_seed
from metaclust.synthgen import GenConfig, generate_task
from metaclust.trainer import TrainConfig, predict, train

log = logging.getLogger("metaclust")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3
MANIFEST_VERSION = 1


class UsageError(Exception):
    pass


@dataclass
class ModelConfig:
    hidden: int = 64
    K_out: int = 2


@dataclass
class RunConfig:
    seed: int = 0
    predict_epochs: int = 3
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    kmeans: KMeansConfig = field(default_factory=KMeansConfig)
    dbscan: DbscanConfig = field(default_factory=DbscanConfig)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        cfg = cls()
        sections = {f.name for f in fields(cls)}
        for key, value in obj.items():
            if key not in sections:
                raise UsageError(f"unknown config key {key!r}")
            current = getattr(cfg, key)
            if hasattr(current, "__dataclass_fields__"):
                if not isinstance(value, dict):
                    raise UsageError(f"config section {key!r} must be an object")
                allowed = {f.name for f in fields(current)}
                for sub, v in value.items():
                    if sub not in allowed:
                        raise UsageError(f"unknown config key {key}.{sub}")
                    setattr(current, sub, tuple(v) if isinstance(v, list) else v)
                if hasattr(current, "__post_init__"):
                    current.__post_init__()
            else:
                setattr(cfg, key, value)
        return cfg

    def to_dict(self):
        out = asdict(self)
        out["gen"]["cluster_count_range"] = list(self.gen.cluster_count_range)
        return out


def load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        try:
            obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(args.config, exc.lineno, exc.msg) from None
        cfg = RunConfig.from_dict(obj)
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    overrides = {
        "dims": ("gen", "dims"), "points": ("gen", "points_per_task"),
        "swirl": ("gen", "swirl_applications"), "iterations": ("train", "iterations"),
        "batch_size": ("train", "batch_size"), "lr": ("train", "lr"), "lam": ("train", "lam"),
        "train_epochs": ("train", "epochs_per_iteration"), "hidden": ("model", "hidden"),
        "k_out": ("model", "K_out"), "epochs": (None, "predict_epochs"),
    }
    for arg, (section, name) in overrides.items():
        v = getattr(args, arg, None)
        if v is not None:
            setattr(getattr(cfg, section) if section else cfg, name, v)
    k = getattr(args, "clusters", None)
    if k is not None:
        cfg.gen.cluster_count_range = tuple(k) if len(k) == 2 else (k[0], k[0])
    if getattr(args, "bias_more_clusters", False):
        cfg.gen.bias_toward_more_clusters = True
    if getattr(args, "teacher_forcing", False):
        cfg.train.teacher_forcing = True
    return cfg


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _ingest_options(args) -> IngestOptions:
    return IngestOptions(label_column=args.label_column or None, pad_to_dims=args.pad_to_dims,
                         per_cluster_sample=args.per_cluster_sample, class_filter=args.class_filter,
                         normalize=args.normalize)


def _emit(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- subcommands -----------------------------------------------------------------

def _gen_one(job):
    gen, seed, i, max_k = job
    return task_to_csv(generate_task(gen, make_rng(split_seed(seed, i)), max_k))


def cmd_gen(args):
    cfg = load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.gen, cfg.seed, i, None) for i in range(args.count)]
    for i, text in enumerate(_map(_gen_one, jobs, args.jobs)):
        (out / f"task_{i:05d}.csv").write_text(text, encoding="utf-8")
    manifest = {"seed": cfg.seed, "config": cfg.to_dict(), "count": args.count,
                "created": time.strftime("%Y-%m-%dT%H:%M:%S"), "format_version": MANIFEST_VERSION}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args)
    if args.synthetic == bool(args.tasks):
        raise UsageError("give exactly one of --tasks DIR or --synthetic")
    if args.tasks:
        files = sorted(Path(args.tasks).glob("*.csv"))
        if not files:
            raise UsageError(f"no task CSVs in {args.tasks}")
        tasks = [read_task_csv(f) for f in files]
        d = tasks[0].d
        for f, t in zip(files, tasks):
            if t.labels is None:
                raise UsageError(f"{f} has no label column")
            if t.d != d:
                raise UsageError(f"{f} has {t.d} features, expected {d}")
        if args.dims is not None and args.dims != d:
            raise UsageError(f"tasks have {d} features but --dims {args.dims}")
        source = tasks
    else:
        d = cfg.gen.dims
        cfg.gen.validate(cfg.model.K_out)
        gen = cfg.gen
        source = lambda rng: generate_task(gen, rng, cfg.model.K_out)  # noqa: E731
    params = init_params(d, cfg.model.hidden, cfg.model.K_out, make_rng(cfg.seed))
    params, report = train(params, source, cfg.train, make_rng(split_seed(cfg.seed, 1)))
    save_checkpoint(params, args.out)
    report.write_csv(args.report or str(args.out) + ".report.csv")
    return EXIT_OK


def _prepare(args, rng):
    points, labels, _ = read_table(args.data, args.label_column or None)
    return ingest(points, labels, _ingest_options(args), rng)


def cmd_cluster(args):
    cfg = load_config(args)
    params = load_checkpoint(args.checkpoint)
    rng = make_rng(cfg.seed)
    X, _, keep = _prepare(args, rng)
    if X.shape[1] != params.d:
        raise UsageError(f"data has {X.shape[1]} features, model expects {params.d} (use --pad-to-dims)")
    labels = predict(params, X, cfg.predict_epochs, rng)
    if args.out:
        write_labels_csv(labels, args.out, keep)
    else:
        sys.stdout.write("index,label\n" + "".join(f"{i},{l}\n" for i, l in zip(keep, labels)))
    return EXIT_OK


def _repeat_one(job):
    params, X, y, opts, epochs, seed = job
    rng = make_rng(seed)
    Xs, ys, _ = ingest(X, y, opts, rng)
    pred = predict(params, Xs, epochs, rng)
    rep = best_match_error(pred, ys)
    return rep.zero_one_error, rep.predicted_cluster_count, rep.true_cluster_count


def cmd_eval(args):
    cfg = load_config(args)
    dataset = Path(args.data or args.truth).stem
    if args.pred:
        pred = read_labels_csv(args.pred)
        _, truth, _ = read_table(args.truth, args.label_column)
        if truth is None:
            raise UsageError("truth file has no label column")
        if truth.size != pred.size:
            raise UsageError(f"{pred.size} predictions for {truth.size} labelled rows")
        rep = best_match_error(pred, truth)
        rows = [dict(rep.row("meta", dataset, cfg.seed), error_std="")]
    else:
        if not (args.checkpoint and args.data):
            raise UsageError("give --pred/--truth, or --checkpoint/--data for repeated runs")
        params = load_checkpoint(args.checkpoint)
        X, y, _ = read_table(args.data, args.label_column)
        if y is None:
            raise UsageError("data has no label column")
        opts = _ingest_options(args)
        jobs = [(params, X, y, opts, cfg.predict_epochs, split_seed(cfg.seed, r)) for r in range(args.repeat)]
        res = _map(_repeat_one, jobs, args.jobs)
        errs = np.array([r[0] for r in res])
        rows = [{"method": "meta", "dataset": dataset, "error": f"{errs.mean():.6f}",
                 "error_std": f"{errs.std(ddof=1):.6f}" if len(errs) > 1 else "",
                 "pred_k": f"{np.mean([r[1] for r in res]):g}", "true_k": res[0][2], "seed": cfg.seed}]
    _emit(rows_to_csv(rows, REPORT_FIELDS + ["error_std"]), args.out)
    return EXIT_OK


def cmd_baseline(args):
    cfg = load_config(args)
    rng = make_rng(cfg.seed)
    X, y, keep = _prepare(args, rng)
    dataset = Path(args.data).stem
    runs = []
    if args.method == "kmeans":
        kc = cfg.kmeans
        if args.k is not None:
            kc.k = args.k
        if args.restarts is not None:
            kc.restarts = args.restarts
        runs.append(("kmeans", kmeans(X, kc, rng), None))
    elif args.method == "dbscan":
        dc = cfg.dbscan
        if args.eps is not None:
            dc.eps = args.eps
        if args.min_pts is not None:
            dc.min_pts = args.min_pts
        runs.append(("dbscan", dbscan(X, dc), NOISE))
    elif args.method == "single-linkage":
        if not args.threshold:
            raise UsageError("single-linkage needs --threshold (one or more values)")
        D = pairwise_distances(X)
        for th in args.threshold:
            runs.append((f"single-linkage@{th:g}", single_linkage(D, th), None))
    else:
        raise UsageError(f"unknown method {args.method!r}")
    rows = []
    for name, pred, noise in runs:
        if y is not None:
            rows.append(best_match_error(pred, y, noise_label=noise).row(name, dataset, cfg.seed))
        else:
            rows.append({"method": name, "dataset": dataset, "error": "",
                         "pred_k": int(np.unique(pred[pred != NOISE]).size), "true_k": "", "seed": cfg.seed})
    if args.labels_out and runs:
        write_labels_csv(runs[-1][1], args.labels_out, keep)
    _emit(rows_to_csv(rows, REPORT_FIELDS), args.out)
    return EXIT_OK


def _campaign(job):
    name, trials, seed = job
    fn = {"scale": ax.scale_invariance_campaign, "richness": ax.richness_campaign,
          "consistency": ax.consistency_campaign}[name]
    return fn(trials, make_rng(seed))


def cmd_axioms(args):
    seed = 0 if args.seed is None else args.seed
    jobs = [("scale", args.trials, split_seed(seed, 0)), ("richness", args.trials, split_seed(seed, 1)),
            ("consistency", args.trials, split_seed(seed, 2))]
    results = _map(_campaign, jobs, args.jobs)
    failures = {}
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        extra = f", {r.boundary_cases} boundary cases excluded" if r.boundary_cases else ""
        print(f"{r.name}: {status} ({r.trials} trials, {len(r.failures)} counterexamples{extra})")
        if r.failures:
            failures[r.name] = r.failures
    if args.contrast:
        w = ax.fixed_threshold_witness(make_rng(split_seed(seed, 3)))
        print("fixed-threshold single-linkage scale-invariance counterexample:")
        print(json.dumps(w))
    if failures:
        text = json.dumps(failures, indent=2)
        if args.dump:
            Path(args.dump).write_text(text, encoding="utf-8")
        else:
            print(text)
        return EXIT_INVARIANT
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent units")


def _add_ingest(p):
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--label-column", default="label", help="label column name ('' for none)")
    p.add_argument("--pad-to-dims", type=int)
    p.add_argument("--per-cluster-sample", type=int)
    p.add_argument("--class-filter", type=int, nargs="+")
    p.add_argument("--normalize", action="store_true", help="z-score each feature")


def build_parser():
    parser = argparse.ArgumentParser(prog="metaclust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write synthetic task CSVs and a manifest")
    _add_common(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dims", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--clusters", type=int, nargs="+", help="K or K_min K_max")
    p.add_argument("--swirl", type=int, help="swirl applications per cluster")
    p.add_argument("--bias-more-clusters", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="meta-train a model")
    _add_common(p)
    p.add_argument("--tasks", help="directory of labelled task CSVs")
    p.add_argument("--synthetic", action="store_true", help="draw fresh synthetic tasks")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="report CSV (default: <out>.report.csv)")
    for name, typ in [("dims", int), ("points", int), ("swirl", int), ("iterations", int),
                      ("batch-size", int), ("lr", float), ("lam", float), ("train-epochs", int),
                      ("hidden", int), ("k-out", int)]:
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--clusters", type=int, nargs="+")
    p.add_argument("--bias-more-clusters", action="store_true")
    p.add_argument("--teacher-forcing", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="label a dataset with a trained model")
    _add_common(p)
    _add_ingest(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--epochs", type=int, help="prediction passes")
    p.add_argument("--out", help="labels CSV (default stdout)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="0-1 error after optimal label matching")
    _add_common(p)
    p.add_argument("--pred", help="labels CSV from 'cluster'")
    p.add_argument("--truth", help="labelled dataset CSV")
    p.add_argument("--checkpoint", help="model for repeated sampling + prediction")
    p.add_argument("--data", help="labelled dataset CSV for repeated runs")
    p.add_argument("--label-column", default="label")
    p.add_argument("--pad-to-dims", type=int)
    p.add_argument("--per-cluster-sample", type=int)
    p.add_argument("--class-filter", type=int, nargs="+")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="report CSV (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="k-means, DBSCAN or single-linkage")
    _add_common(p)
    _add_ingest(p)
    p.add_argument("--method", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--min-pts", type=int)
    p.add_argument("--threshold", type=float, nargs="+")
    p.add_argument("--labels-out")
    p.add_argument("--out", help="report CSV (default stdout)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("axioms", help="randomized checks of the meta-clustering axioms")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--contrast", action="store_true", help="show a fixed-threshold counterexample")
    p.add_argument("--dump", help="write counterexamples JSON here")
    p.set_defaults(func=cmd_axioms)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"metaclust: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, OSError) as exc:
        print(f"metaclust: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDivergenceError as exc:
        print(f"metaclust: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"metaclust: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
