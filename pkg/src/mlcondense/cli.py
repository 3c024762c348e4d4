"""``mlcondense`` command line: make-data, condense, eval and inspect.

Every command writes into its own ``--out`` directory and refuses to reuse a
non-empty one unless ``--force`` is given. A ``manifest.json`` is written with
``status: running`` before the work starts and rewritten with timings and
output hashes once it finishes.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

from .condense import CondenseConfig, condense
from .errors import CondenseError, ConfigError, ScaleError
from .evaluate import ModelSpec, class_distribution_report, label_correlation, train_eval_pipeline
from .initializers import InitStrategy
from .io import dataset_hash, file_hash, load_dataset, load_synthetic, make_planted_dataset, save_synthetic
from .losses import LossSpec

log = logging.getLogger("mlcondense")

PROFILES = {"paper-best": {"init": "kcenter", "loss": "bce", "structure": True}}
INIT_NAMES = {"random": "random", "herding": "herding", "kcenter": "kcenter", "prob": "probability"}
MODEL_NAMES = {"gcn": "gcn2", "sgc": "sgc"}


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# -- output directory and manifest ---------------------------------------------

def prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        if not force:
            raise ConfigError(f"{path} already exists; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    path.mkdir(parents=True, exist_ok=True)
    return path


class Manifest:
    def __init__(self, out: Path, command: str, argv: Sequence[str], config: dict, seed, data: Optional[Path]):
        self.path = out / "manifest.json"
        self.started = time.perf_counter()
        self.body = {
            "command": command,
            "argv": list(argv),
            "config": config,
            "seed": seed,
            "version": tool_version(),
            "dataset": str(data) if data is not None else None,
            "dataset_hash": dataset_hash(data) if data is not None else None,
            "status": "running",
            "timings": {},
            "outputs": {},
        }
        self._write()

    def _write(self) -> None:
        self.path.write_text(json.dumps(self.body, indent=2, sort_keys=True) + "\n")

    def finish(self, outputs: Sequence[Path], timings: Optional[dict] = None) -> None:
        root = self.path.parent
        hashes = {}
        for p in outputs:
            files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
            for f in files:
                hashes[str(f.relative_to(root))] = file_hash(f)
        self.body["outputs"] = hashes
        self.body["timings"] = dict(timings or {}, total_seconds=time.perf_counter() - self.started)
        self.body["status"] = "done"
        self._write()


# -- commands ------------------------------------------------------------------

def build_config(args: argparse.Namespace, seed: int) -> CondenseConfig:
    profile = PROFILES[args.profile]
    init_kind = INIT_NAMES[args.init or profile["init"]]
    structure = profile["structure"] and not args.no_structure
    mode = "learned" if structure else "graphless"
    overrides = {
        "outer_restarts": args.outer,
        "inner_steps": args.inner,
        "feature_steps": args.tau1,
        "structure_steps": args.tau2,
        "model_steps": args.tau_theta,
        "eta_features": args.eta1,
        "eta_structure": args.eta2,
        "eta_model": args.eta_theta,
        "delta": args.delta,
        "sgdd_alpha": args.alpha,
        "sgdd_beta": args.beta,
    }
    given = {k: v for k, v in overrides.items() if v is not None}
    return CondenseConfig(
        method=args.method,
        c_rate=args.crate,
        loss=LossSpec(kind=args.loss or profile["loss"], weighted=args.weighted),
        # a probability init carries no induced subgraph to inherit
        init=InitStrategy(kind=init_kind, use_subgraph_structure=structure and init_kind != "probability", seed=seed),
        structure_mode=mode,
        seed=seed,
        **given,
    )


def _condense_one(data: Path, out: Path, config: CondenseConfig) -> dict:
    graph = load_dataset(data)
    t0 = time.perf_counter()
    synthetic, trace = condense(graph, config)
    elapsed = time.perf_counter() - t0
    save_synthetic(out / "synthetic", synthetic)
    with open(out / "trace.csv", "w", newline="\n") as fh:
        fh.write(trace.to_csv())
    return {"condense_seconds": elapsed, "n_prime": synthetic.n_prime, "steps": len(trace)}


def cmd_condense(args: argparse.Namespace, argv: Sequence[str]) -> int:
    seeds = args.seed or [0]
    configs = [build_config(args, s) for s in seeds]
    out = prepare_out(Path(args.out), args.force)
    graph = load_dataset(args.data)
    if args.method == "sgdd" and graph.n > configs[0].eig_ceiling:
        raise ScaleError(f"sgdd needs a dense eigensolve; {graph.n} nodes exceeds the ceiling {configs[0].eig_ceiling}")
    # one seed writes straight into --out; several get isolated sub-directories
    run_dirs = [out] if len(seeds) == 1 else [out / f"seed-{s}" for s in seeds]
    manifest = Manifest(out, "condense", argv, configs[0].to_dict(), seeds if len(seeds) > 1 else seeds[0], Path(args.data))
    for d in run_dirs:
        d.mkdir(parents=True, exist_ok=True)
    jobs = [(Path(args.data), d, c) for d, c in zip(run_dirs, configs)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            stats = list(pool.map(_condense_job, jobs))
    else:
        stats = [_condense_job(j) for j in jobs]
    outputs = []
    for d in run_dirs:
        outputs += [d / "synthetic", d / "trace.csv"]
    manifest.finish(outputs, {str(s): st for s, st in zip(seeds, stats)})
    log.info("condensed %s into %s", args.data, out)
    return 0


def _condense_job(job) -> dict:
    return _condense_one(*job)


def cmd_eval(args: argparse.Namespace, argv: Sequence[str]) -> int:
    if args.whole_baseline == (args.synthetic is not None):
        raise ConfigError("pass exactly one of --synthetic DIR or --whole-baseline")
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    base_seed = (args.seed or [0])[0]
    seeds = [base_seed + i for i in range(args.seeds)]
    model = ModelSpec(architecture=MODEL_NAMES[args.model], epochs=args.epochs, lr=args.lr)
    loss = LossSpec(kind=args.loss, weighted=args.weighted)
    out = prepare_out(Path(args.out), args.force)
    config = {"model": asdict(model), "loss": asdict(loss), "synthetic": args.synthetic, "seeds": seeds}
    manifest = Manifest(out, "eval", argv, config, seeds, Path(args.data))
    graph = load_dataset(args.data)
    synthetic = load_synthetic(args.synthetic) if args.synthetic else None
    report = train_eval_pipeline(graph, synthetic, model, loss, seeds, jobs=args.jobs)
    (out / "report.json").write_text(report.to_json())
    manifest.finish([out / "report.json"])
    print(f"f1_micro={report.f1_micro:.4f} f1_macro={report.f1_macro:.4f}")
    return 0


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_inspect(args: argparse.Namespace, argv: Sequence[str]) -> int:
    out = prepare_out(Path(args.out), args.force)
    manifest = Manifest(out, "inspect", argv, {"synthetic": args.synthetic}, None, Path(args.data))
    graph = load_dataset(args.data)
    sources = {"original": graph.labels}
    if args.synthetic:
        sources["synthetic"] = load_synthetic(args.synthetic).labels
    rows = []
    for name, labels in sources.items():
        p, _ = label_correlation(labels)
        rows += [(name, i, j, repr(float(p[i, j]))) for i in range(p.shape[0]) for j in range(p.shape[1])]
    _write_csv(out / "correlation.csv", ("source", "row", "col", "p"), rows)
    syn_labels = sources.get("synthetic", graph.labels)
    orig, syn = class_distribution_report(graph.labels, syn_labels)
    header = ("class", "original", "synthetic") if args.synthetic else ("class", "original")
    dist_rows = [
        (c, repr(float(orig[c])), repr(float(syn[c]))) if args.synthetic else (c, repr(float(orig[c])))
        for c in range(graph.k)
    ]
    _write_csv(out / "distribution.csv", header, dist_rows)
    manifest.finish([out / "correlation.csv", out / "distribution.csv"])
    return 0


def cmd_make_data(args: argparse.Namespace, argv: Sequence[str]) -> int:
    out = prepare_out(Path(args.out), args.force)
    seed = (args.seed or [0])[0]
    params = {"nodes": args.nodes, "classes": args.classes, "overlap": args.overlap, "dim": args.dim}
    try:
        make_planted_dataset(seed=seed, out_path=out, **params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return 0


# -- parser --------------------------------------------------------------------

def _shared(p: argparse.ArgumentParser, data: bool = True) -> None:
    if data:
        p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory (one per run)")
    p.add_argument("--seed", type=int, action="append", help="RNG seed; repeat to run several")
    p.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlcondense", description="Multi-label graph condensation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    mk = sub.add_parser("make-data", help="write a planted multi-label SBM dataset")
    _shared(mk, data=False)
    mk.add_argument("--nodes", type=int, default=300)
    mk.add_argument("--classes", type=int, default=4)
    mk.add_argument("--overlap", type=float, default=0.3)
    mk.add_argument("--dim", type=int, default=16)
    mk.set_defaults(func=cmd_make_data)

    c = sub.add_parser("condense", help="condense a dataset into a small synthetic graph")
    _shared(c)
    c.add_argument("--method", choices=("gcond", "gcdm", "sgdd"), default="gcond")
    c.add_argument("--profile", choices=sorted(PROFILES), default="paper-best")
    c.add_argument("--init", choices=sorted(INIT_NAMES))
    c.add_argument("--loss", choices=("bce", "softmargin"))
    c.add_argument("--weighted", action="store_true", help="positive-class re-weighting in BCE")
    c.add_argument("--crate", type=float, default=0.1, help="condensation ratio N'/N")
    c.add_argument("--no-structure", action="store_true", help="graphless condensation (X', Y' only)")
    c.add_argument("--delta", type=float, help="adjacency threshold")
    c.add_argument("--alpha", type=float, help="sgdd spectral weight")
    c.add_argument("--beta", type=float, help="sgdd sparsity weight")
    for flag in ("--outer", "--inner", "--tau1", "--tau2", "--tau-theta"):
        c.add_argument(flag, type=int)
    for flag in ("--eta1", "--eta2", "--eta-theta"):
        c.add_argument(flag, type=float)
    c.set_defaults(func=cmd_condense)

    e = sub.add_parser("eval", help="train on a synthetic graph, test on the original")
    _shared(e)
    e.add_argument("--synthetic", help="synthetic graph directory")
    e.add_argument("--whole-baseline", action="store_true", help="train on the original training split")
    e.add_argument("--model", choices=sorted(MODEL_NAMES), default="gcn")
    e.add_argument("--seeds", type=int, default=5, help="number of evaluation seeds")
    e.add_argument("--loss", choices=("bce", "softmargin"), default="bce")
    e.add_argument("--weighted", action="store_true")
    e.add_argument("--epochs", type=int, default=200)
    e.add_argument("--lr", type=float, default=1e-2)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="emit label correlation and class distribution tables")
    _shared(i)
    i.add_argument("--synthetic", help="synthetic graph directory to compare against")
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args, argv)
    except CondenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
