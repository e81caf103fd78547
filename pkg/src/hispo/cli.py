"""Command-line front end: dataset generation, strategy runs, reports and model inspection.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import os

# Pin BLAS to one thread before numpy loads so reruns are bit-identical.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from concurrent.futures import ProcessPoolExecutor  # noqa: E402
from dataclasses import dataclass, field  # noqa: E402
from importlib import metadata  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import baselines, metrics, subspace  # noqa: E402
from .envs import LAYOUTS, TaskTransform, gen_dataset, make_env, save_dataset  # noqa: E402
from .gcrl import TrainConfig, default_shapes  # noqa: E402
from .streams import CANNED_STREAMS, EvalConfig, StreamSpec, canned_stream  # noqa: E402

log = logging.getLogger("hispo")

SUBSPACE_STRATEGIES = ("HiSPO", "HiLOW", "CSPO")
MANIFEST_VERSION = 1


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- run configuration

@dataclass
class RunConfig:
    strategy: str
    seeds: list[int]
    stream: StreamSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    subspace: subspace.SubspaceConfig = field(default_factory=subspace.SubspaceConfig)
    strategy_cfg: baselines.StrategyConfig = field(default_factory=baselines.StrategyConfig)
    lambda_sweep: bool = False
    eval: EvalConfig = field(default_factory=EvalConfig)
    hidden_h: tuple = (64, 64)
    hidden_l: tuple = (64, 64)
    dropout: float = 0.1
    name: str = "run"
    output: str | None = None

    @property
    def shapes(self):
        return default_shapes(self.hidden_h, self.hidden_l, self.dropout)


def _stream_from(value, scale: float) -> StreamSpec:
    if isinstance(value, dict):
        return StreamSpec.from_dict(value).scaled(scale)
    if value in CANNED_STREAMS:
        return canned_stream(value, scale)
    return StreamSpec.parse(value).scaled(scale)


def parse_run_config(doc: dict, episodes_scale: float | None = None, name: str = "run") -> RunConfig:
    """Validate a JSON run configuration; raises UsageError on bad content."""
    try:
        strategy = doc["strategy"]
        if strategy not in SUBSPACE_STRATEGIES:
            strategy = baselines.StrategyKind.parse(strategy).value
        seeds = [int(s) for s in doc.get("seeds", [0])]
        if not seeds:
            raise ValueError("seeds must be nonempty")
        scale = episodes_scale if episodes_scale is not None else float(doc.get("episodes_scale", 1.0))
        stream = _stream_from(doc["stream"], scale)
        sub = dict(doc.get("subspace", {}))
        if strategy == "CSPO":
            sub["mode"] = "cspo"
        if strategy == "HiLOW" and sub.get("lora_rank") is None:
            sub["lora_rank"] = 4
        shapes = doc.get("shapes", {})
        return RunConfig(
            strategy=strategy, seeds=seeds, stream=stream,
            train=TrainConfig(**doc.get("train", {})),
            subspace=subspace.SubspaceConfig(**sub),
            strategy_cfg=baselines.StrategyConfig(**doc.get("strategy_cfg", {})),
            lambda_sweep=bool(doc.get("lambda_sweep", False)),
            eval=EvalConfig(**doc.get("eval", {})),
            hidden_h=tuple(shapes.get("hidden_h", (64, 64))),
            hidden_l=tuple(shapes.get("hidden_l", (64, 64))),
            dropout=float(shapes.get("dropout", 0.1)),
            name=str(doc.get("name", name)),
            output=doc.get("output"),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"invalid run config: {e!r}") from None


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def code_version() -> str:
    """Package version plus a digest of the package sources."""
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    h = hashlib.sha256()
    root = Path(__file__).parent
    for path in sorted(root.rglob("*.py")):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return f"{version}+{h.hexdigest()[:12]}"


def run_one(cfg: RunConfig, seed: int):
    """One (strategy, seed) job. Returns the report and a JSON-ready model document."""
    if cfg.strategy in SUBSPACE_STRATEGIES:
        model, report = subspace.learn_stream(cfg.stream, cfg.subspace, cfg.train, cfg.shapes,
                                              cfg.eval, seed)
        return report, subspace.model_to_json(model)
    if cfg.lambda_sweep:
        lam, store, report = baselines.sweep_lambda(cfg.strategy, cfg.stream, cfg.train, cfg.shapes,
                                                    cfg.eval, seed,
                                                    fisher_samples=cfg.strategy_cfg.fisher_samples)
        report.extra = {**(report.extra or {}), "selected_lambda": lam}
    else:
        store, report = baselines.run_strategy(cfg.strategy, cfg.stream, cfg.train, cfg.strategy_cfg,
                                               cfg.shapes, cfg.eval, seed)
    return report, baselines.store_to_json(store)


def _run_job(args):
    cfg, seed = args
    return run_one(cfg, seed)


def output_root(cfg: RunConfig, out: str | None) -> Path:
    if out:
        return Path(out)
    root = os.environ.get("CRL_OUT") or cfg.output or "runs"
    return Path(root) / cfg.name


def execute_run(doc: dict, out_dir: Path, cfg: RunConfig, jobs: int = 1) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "models").mkdir(exist_ok=True)
    work = [(cfg, s) for s in cfg.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            results = list(pool.map(_run_job, work))
    else:
        results = [_run_job(w) for w in work]
    reports = []
    for seed, (report, model_doc) in zip(cfg.seeds, results):
        reports.append(report)
        path = out_dir / "models" / f"{cfg.strategy}-seed{seed}.json"
        path.write_text(json.dumps(model_doc), encoding="utf-8")
    metrics.write_csv(reports, out_dir / "report.csv")
    metrics.write_json(reports, out_dir / "report.json")
    manifest = {"format_version": MANIFEST_VERSION, "config": doc, "config_hash": config_hash(doc),
                "code_version": code_version(), "seeds": cfg.seeds, "strategy": cfg.strategy,
                "run_name": cfg.name, "stream": cfg.stream.to_dict()}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True),
                                           encoding="utf-8")
    return reports


# --------------------------------------------------------------------------- reports

METRIC_KEYS = ("per", "bwt", "fwt", "mem")


def collect_reports(paths) -> list[metrics.EvalReport]:
    reports = []
    for p in map(Path, paths):
        f = p / "report.json" if p.is_dir() else p
        if not f.exists():
            raise FileNotFoundError(f"no report found at {p}")
        reports.extend(metrics.read_json(f))
    if not reports:
        raise ValueError("no reports to summarize")
    return reports


def summarize(reports) -> list[dict]:
    """Mean and population std of each metric per (strategy, stream)."""
    groups: dict[tuple, list] = {}
    for r in reports:
        groups.setdefault((r.strategy, r.stream), []).append(r)
    rows = []
    for (strategy, stream), rs in groups.items():
        row = {"strategy": strategy, "stream": stream, "n_seeds": len(rs)}
        for k in METRIC_KEYS:
            vals = np.array([getattr(r.metrics, k) for r in rs], dtype=float)
            row[f"{k}_mean"] = float(np.mean(vals))
            row[f"{k}_std"] = float(np.std(vals))
        rows.append(row)
    return rows


def format_table(rows) -> str:
    head = ["strategy", "stream", "seeds"] + [k.upper() for k in METRIC_KEYS]
    body = []
    for r in rows:
        cells = [r["strategy"], r["stream"], str(r["n_seeds"])]
        for k in METRIC_KEYS:
            scale = 1.0 if k == "mem" else 100.0
            cells.append(f"{r[k + '_mean'] * scale:.1f} ± {r[k + '_std'] * scale:.1f}")
        body.append(cells)
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(line, widths)).rstrip()
             for line in [head] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_summary_csv(rows, path) -> None:
    import csv

    fields = ["strategy", "stream", "n_seeds"] + [f"{k}_{s}" for k in METRIC_KEYS for s in ("mean", "std")]
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# --------------------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    env = make_env(args.layout, args.transform, args.horizon, args.seed)
    ds = gen_dataset(env, args.episodes, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} episodes to {args.out} (mean length {ds.mean_length():.1f})")
    return 0


def cmd_run(args) -> int:
    path = Path(args.config)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config is not valid JSON: {e}") from None
    name = path.stem
    if isinstance(doc, dict) and "config_hash" in doc and "config" in doc:
        name = doc.get("run_name", name)
        doc = doc["config"]  # rerun from a manifest
    if args.episodes_scale is not None:
        doc = {**doc, "episodes_scale": args.episodes_scale}
    cfg = parse_run_config(doc, name=name)
    out_dir = output_root(cfg, args.out)
    reports = execute_run(doc, out_dir, cfg, args.jobs)
    print(format_table(summarize(reports)))
    print(f"results in {out_dir}")
    return 0


def cmd_report(args) -> int:
    rows = summarize(collect_reports(args.runs))
    print(format_table(rows))
    if args.out:
        write_summary_csv(rows, args.out)
    return 0


def cmd_inspect_model(args) -> int:
    doc = json.loads(Path(args.model).read_text(encoding="utf-8"))
    head = doc.get("header", {})
    if "subspaces" in doc:
        model = subspace.model_from_json(doc)
        print(f"subspace model ({model.mode}), {model.n_tasks} tasks")
        print(f"stored parameters: {model.n_params()} "
              f"(MEM {model.n_params() / model.single_policy_params():.3f})")
        for name, sub in model.subspaces.items():
            kinds = ", ".join(a.kind if a.rank is None else f"lora(r={a.rank})" for a in sub.anchors)
            print(f"  {name}: {sub.n_anchors} anchors [{kinds}]")
            for t in sorted(sub.task_weights):
                print(f"    task {t}: " + " ".join(f"{w:.3f}" for w in sub.task_weights[t]))
        return 0
    if head.get("kind") in ("hbc", "pnn"):
        store = baselines.store_from_json(doc)
        print(f"policy store ({store.mode}, {head['kind']}), tasks {head['tasks']}")
        for t in sorted(store.checkpoints):
            print(f"  task {t}: {store.checkpoints[t].n_params()} parameters")
        return 0
    raise ValueError(f"{args.model} is not a model or policy store file")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hispo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a scripted-expert dataset")
    g.add_argument("--layout", required=True, choices=sorted(LAYOUTS))
    g.add_argument("--transform", default="N", choices=[t.value for t in TaskTransform])
    g.add_argument("--episodes", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--horizon", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="run a strategy over a stream for every seed")
    r.add_argument("config", help="JSON run configuration, or a manifest.json to rerun")
    r.add_argument("--out", help="run directory (default: $CRL_OUT or config output, plus run name)")
    r.add_argument("--episodes-scale", type=float, default=None)
    r.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="merge run reports into a comparison table")
    rep.add_argument("runs", nargs="+", help="run directories or report.json files")
    rep.add_argument("--out", help="write the merged table as CSV")
    rep.set_defaults(func=cmd_report)

    m = sub.add_parser("inspect-model", help="describe a saved model or policy store")
    m.add_argument("model")
    m.set_defaults(func=cmd_inspect_model)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "episodes", 1) < 1:
        parser.print_usage(sys.stderr)
        print("hispo: error: --episodes must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"hispo: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        print(f"hispo: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
