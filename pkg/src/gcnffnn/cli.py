"""Command-line entry point: ``gcnffnn {oracle,train,evaluate,reproduce}``."""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import kernels
from .domain import build_graph, split_inside, split_outside
from .errors import GridError
from .evaluation import (
    comparison_rows,
    evaluate,
    residual_field,
    write_metrics_json,
    write_predictions_csv,
    write_residuals_csv,
)
from .models import build_model
from .optim import LbfgsConfig
from .oracles import write_reference_csv
from .params import load_params, save_params
from .problems import PROBLEMS, get_problem
from .training import PhysicsLoss, train_stream, train_two_phase

__all__ = ["RunConfig", "main", "run", "resolve_config"]

log = logging.getLogger("gcnffnn")

OUTPUT_ROOT_ENV = "GCNFFNN_OUTPUT_ROOT"
MODELS = ("ffnn", "gcn", "gcn-ffnn")
SCENARIOS = ("inside", "outside")


@dataclass(frozen=True)
class RunConfig:
    problem: str = "1d-burgers"
    model: str = "gcn-ffnn"
    scenario: str = "inside"
    seed: int = 42
    grid: tuple | None = None  # counts per axis; None = the problem's default grid
    fraction: float = 0.1
    max_iters: int = 50000
    history: int = 50
    lr: float = 1.0
    checkpoint_every: int = 0
    record_wall_time: bool = False
    out: str | None = None

    def validate(self):
        get_problem(self.problem)
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {', '.join(MODELS)}")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected inside or outside")
        return self

    def lbfgs(self) -> LbfgsConfig:
        return LbfgsConfig(max_iters=self.max_iters, history=self.history, lr=self.lr)

    def output_dir(self) -> Path:
        if self.out:
            return Path(self.out)
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        return root / f"{self.problem}-{self.model}-{self.scenario}-seed{self.seed}"

    def lock(self) -> dict:
        d = asdict(self)
        d["grid"] = list(get_problem(self.problem).grid(self.grid).counts)
        d.pop("out")
        return d


def parse_grid(text):
    if text is None or isinstance(text, (list, tuple)):
        return None if text is None else tuple(int(c) for c in text)
    try:
        return tuple(int(c) for c in str(text).lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 64x50, got {text!r}") from None


def resolve_config(args) -> RunConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(json.loads(Path(args.config).read_text()))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None and v is not False:
            values[f.name] = v
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    if "grid" in values:
        values["grid"] = parse_grid(values["grid"])
    return RunConfig(**values).validate()


@contextlib.contextmanager
def thread_limit(n):
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=int(n)):
        yield


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    problem: object
    spec: object
    graph: object  # full graph, used for evaluation
    train_graph: object
    test: np.ndarray
    split_labels: np.ndarray
    reference: object


def setup_scenario(cfg: RunConfig) -> Scenario:
    problem = get_problem(cfg.problem)
    spec = problem.grid(cfg.grid)
    graph = build_graph(spec, problem)
    if cfg.scenario == "inside":
        train, test = split_inside(spec, graph.masks, cfg.fraction, cfg.seed)
        graph = graph.with_split(train, test)
        train_graph = graph
    else:
        split = split_outside(spec, graph.masks, cfg.fraction)
        if split.train_spec is None:
            raise GridError(f"outside split of {spec.counts[-1]} time levels leaves a single training level")
        graph = graph.with_split(split.train, split.test)
        train_graph = build_graph(split.train_spec, problem)
        train, test = split.train, split.test
    labels = np.where(test, "test", "train")
    reference = problem.reference(spec)
    return Scenario(problem, spec, graph, train_graph, test, labels, reference)


def _write_run(out: Path, cfg: RunConfig, sc: Scenario, kind, model, params, trace, wall):
    out.mkdir(parents=True, exist_ok=True)
    theta = params.values
    pred = model.predict(theta, model.prepare(sc.graph))
    report = evaluate(model, params, sc.problem, sc.graph, sc.test, sc.reference, cfg.scenario, predictions=pred)
    model_spec = model.spec if isinstance(model.spec, dict) else model.spec.to_dict()
    save_params(out / "params", params, model_spec)
    (out / "trace.json").write_text(json.dumps(trace, indent=1) + "\n")
    write_metrics_json(out / "metrics.json", report, cfg.problem, kind, cfg.scenario, cfg.seed,
                       wall if cfg.record_wall_time else None)
    write_predictions_csv(out / "predictions.csv", sc.graph, sc.problem, sc.split_labels, sc.reference, pred)
    rows = np.flatnonzero(sc.graph.masks.interior)
    write_residuals_csv(out / "residuals.csv", sc.graph, sc.problem, rows,
                        residual_field(model, params, sc.problem, sc.graph, rows))
    lock = cfg.lock() | {"model": kind}
    (out / "config.lock.json").write_text(json.dumps(lock, indent=1, sort_keys=True) + "\n")
    return report


def run(cfg: RunConfig, models=None) -> dict:
    """Train and evaluate; returns ``{model: MetricReport}``.

    ``models`` lists the models to report; for a two-phase run the streams
    trained in phase 1 can be reported alongside the fused model.
    """
    cfg.validate()
    models = models or (cfg.model,)
    out = cfg.output_dir()
    start = time.perf_counter()
    sc = setup_scenario(cfg)
    bounds = sc.spec.bounds
    ckpt = out / "checkpoints" if cfg.checkpoint_every else None
    reports = {}
    if cfg.model == "gcn-ffnn":
        res = train_two_phase(sc.problem, sc.train_graph, cfg.lbfgs(), cfg.seed, bounds,
                              checkpoint_dir=ckpt, checkpoint_every=cfg.checkpoint_every)
        wall = time.perf_counter() - start
        trained = {
            "ffnn": (res.streams["ffnn"].model, res.streams["ffnn"].params, res.streams["ffnn"].trace),
            "gcn": (res.streams["gcn"].model, res.streams["gcn"].params, res.streams["gcn"].trace),
            "gcn-ffnn": (res.model, res.params, {
                "stream-ffnn": res.streams["ffnn"].trace,
                "stream-gcn": res.streams["gcn"].trace,
                "fusion": res.fusion.trace,
            }),
        }
    else:
        res = train_stream(cfg.model, sc.problem, sc.train_graph, cfg.lbfgs(), cfg.seed, bounds,
                           ckpt, cfg.checkpoint_every)
        wall = time.perf_counter() - start
        trained = {cfg.model: (res.model, res.params, res.trace)}
    for kind in models:
        model, params, trace = trained[kind]
        target = out if kind == cfg.model else out / kind
        reports[kind] = _write_run(target, cfg, sc, kind, model, params, trace, wall)
    return reports


def evaluate_run(run_dir: Path, out: Path | None = None):
    """Re-score a finished run from its lock file and parameters."""
    run_dir = Path(run_dir)
    lock = json.loads((run_dir / "config.lock.json").read_text())
    cfg = RunConfig(**{**lock, "grid": tuple(lock["grid"]), "out": str(out or run_dir)})
    sc = setup_scenario(cfg)
    model = build_model(cfg.model, cfg.problem, sc.spec.bounds)
    params = load_params(run_dir / "params", expected=model.layout)
    report = evaluate(model, params, sc.problem, sc.graph, sc.test, sc.reference, cfg.scenario)
    write_metrics_json(cfg.output_dir() / "metrics.json", report, cfg.problem, cfg.model, cfg.scenario, cfg.seed)
    return report


def format_table(rows) -> str:
    def num(v, spec):
        return "-" if v is None else format(v, spec)

    head = f"{'model':<9} {'scenario':<8} {'MSE':>10} {'pub. MSE':>10} {'ratio':>9} {'Linf':>8} {'pub. Linf':>10}  flag"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['model']:<9} {r['scenario']:<8} {num(r['mse'], '.3e'):>10} {r['published_mse']:>10.2e} "
            f"{num(r['ratio'], '.2f'):>9} {num(r['l_inf'], '.4f'):>8} {r['published_l_inf']:>10.3f}  "
            f"{'>10x' if r['flag'] else 'ok'}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def _common(p, run_flags=True):
    p.add_argument("--problem", help=f"one of: {', '.join(PROBLEMS)}")
    p.add_argument("--grid", type=parse_grid, help="node counts per axis, e.g. 64x50")
    p.add_argument("--out", help=f"output directory (default under ${OUTPUT_ROOT_ENV} or ./runs)")
    p.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    if run_flags:
        p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--max-iters", dest="max_iters", type=int)
        p.add_argument("--history", type=int)
        p.add_argument("--fraction", type=float, help="held-out share (default 0.1)")
        p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
        p.add_argument("--record-wall-time", dest="record_wall_time", action="store_true",
                       help="store the run time in metrics.json (breaks byte-identical reruns)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcnffnn", description="GCN-FFNN physics-informed PDE solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oracle", help="write the reference solution as CSV")
    _common(p, run_flags=False)

    p = sub.add_parser("train", help="train and evaluate one model")
    _common(p)
    p.add_argument("--model", help="ffnn, gcn or gcn-ffnn")
    p.add_argument("--scenario", help="inside or outside")

    p = sub.add_parser("evaluate", help="re-score a finished run directory")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("reproduce", help="all models and scenarios beside the published table")
    _common(p)
    return parser


def _cmd_oracle(args):
    problem = get_problem(args.problem or "1d-burgers")
    ref = problem.reference(problem.grid(parse_grid(args.grid)))
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    out = Path(args.out) if args.out else root / "oracle" / problem.name
    path = write_reference_csv(ref, out / "reference.csv")
    print(f"wrote {path} ({ref.spec.N} rows, {ref.method})")


def _cmd_train(args):
    cfg = resolve_config(args)
    report = run(cfg)[cfg.model]
    print(f"{cfg.problem} {cfg.model} {cfg.scenario}: MSE {report.mse_test:.3e}  Linf {report.l_inf:.4f}")
    print(f"artifacts in {cfg.output_dir()}")


def _cmd_evaluate(args):
    report = evaluate_run(Path(args.run_dir), Path(args.out) if args.out else None)
    print(f"MSE {report.mse_test:.3e}  Linf {report.l_inf:.4f}  ({report.n_test} test nodes)")


def _cmd_reproduce(args):
    base = resolve_config(args)
    root = base.output_dir() if args.out else Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / f"reproduce-{base.problem}"
    results = {}
    for scenario in SCENARIOS:
        cfg = replace(base, model="gcn-ffnn", scenario=scenario, out=str(root / scenario))
        for kind, rep in run(cfg, MODELS).items():
            results[(kind, scenario)] = rep
    rows = comparison_rows(base.problem, results)
    table = format_table(rows)
    root.mkdir(parents=True, exist_ok=True)
    (root / "table.json").write_text(json.dumps(rows, indent=1) + "\n")
    (root / "table.txt").write_text(table + "\n")
    print(f"{base.problem} (grid {'x'.join(map(str, base.lock()['grid']))})")
    print(table)


COMMANDS = {"oracle": _cmd_oracle, "train": _cmd_train, "evaluate": _cmd_evaluate, "reproduce": _cmd_reproduce}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        with thread_limit(args.threads):
            COMMANDS[args.command](args)
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"error ({type(exc).__module__}): {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
