"""Command-line driver for experiments, sweeps, diagnostics and benchmarks.

Every training invocation is described by a flat :class:`ExperimentConfig`
that round-trips through a ``key = value`` manifest written next to the
results, so any run directory can be reproduced with ``--config``.  Ensemble
members draw their seeds from spawned child sequences of the master seed,
which makes results independent of how many worker processes are used.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import backends
from .diagnostics import (
    COLLAPSE_THRESHOLD,
    collapse_score,
    eig_ratio_profile,
    export_basis,
    export_cutplanes,
    propagate_box,
)
from .initializers import INIT_SCHEMES, init_network
from .linalg import make_rng
from .network import ArchitectureSpec, load_params, save_params
from .optimize import quadratic_toy, timing_compare, toy_loss, train_gd, train_lsgd
from .problems import (
    TARGETS,
    TransportConfig,
    legendre_family,
    make_pinn,
    make_regression,
    minmax_metric,
)

__all__ = ["ExperimentConfig", "run", "sweep", "main"]

_DIAG_MODES = ("image-trace", "eig-profile", "collapse", "basis", "cutplanes")


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat description of one experiment; serializes to a key = value manifest."""

    command: str = "regress"
    problem: str = "u2"
    n_points: int = 1000
    dx: float = 0.05
    alpha: float = 0.0
    conservative: bool = False
    kind: str = "plain"
    activation: str = "relu"
    width: int = 32
    depth: int = 4
    init: str = "box"
    opt: str = "lsgd"
    lr: float = 0.005
    iters: int = 1000
    seed: int = 0
    ensemble: int = 1
    jobs: int = 1
    rank_tol: float = -1.0
    out: str = "runs/out"
    save_params: bool = False
    snapshot_every: int = 0
    sweep: str = ""
    sweep_values: str = ""
    diag: str = "collapse"
    samples: int = 10000
    box_mode: str = "input"
    params_path: str = ""
    start_x: float = -4.0
    start_y: float = 1.0

    def __post_init__(self):
        if self.kind not in ("plain", "resnet"):
            raise ValueError(f"kind must be plain or resnet, got {self.kind!r}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"activation must be relu or tanh, got {self.activation!r}")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"init must be one of {INIT_SCHEMES}, got {self.init!r}")
        if self.opt not in ("gd", "lsgd"):
            raise ValueError(f"opt must be gd or lsgd, got {self.opt!r}")
        if self.diag not in _DIAG_MODES:
            raise ValueError(f"diag must be one of {_DIAG_MODES}, got {self.diag!r}")
        if self.box_mode not in ("input", "hidden"):
            raise ValueError(f"box_mode must be input or hidden, got {self.box_mode!r}")
        if self.sweep not in ("", "width", "depth", "alpha"):
            raise ValueError(f"sweep must be width, depth or alpha, got {self.sweep!r}")
        for name, lo in (("width", 1), ("depth", 1), ("n_points", 2), ("iters", 0),
                         ("ensemble", 1), ("jobs", 1), ("samples", 2), ("snapshot_every", 0)):
            if getattr(self, name) < lo:
                raise ValueError(f"{name} must be >= {lo}, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    def to_manifest(self):
        """Serialize every field as one ``key = value`` line."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, (int, float)):
                s = repr(v)
            else:
                if '"' in v or "\n" in v:
                    raise ValueError(f"field {f.name} cannot contain quotes or newlines")
                s = f'"{v}"'
            lines.append(f"{f.name} = {s}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text):
        """Parse a manifest; unknown or missing keys are rejected."""
        hints = typing.get_type_hints(cls)
        expected = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"manifest line {lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in expected:
                raise ValueError(f"manifest line {lineno}: unknown key {key!r}")
            if key in values:
                raise ValueError(f"manifest line {lineno}: duplicate key {key!r}")
            values[key] = _coerce(key, _parse_scalar(val, lineno), hints[key])
        missing = expected - set(values)
        if missing:
            raise ValueError(f"manifest is missing keys: {sorted(missing)}")
        return cls(**values)


def _parse_scalar(s, lineno):
    if s == "true":
        return True
    if s == "false":
        return False
    if len(s) >= 2 and s[0] == '"' and s[-1] == '"':
        inner = s[1:-1]
        if '"' in inner:
            raise ValueError(f"manifest line {lineno}: nested quote in {s!r}")
        return inner
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        raise ValueError(f"manifest line {lineno}: cannot parse value {s!r}") from None


def _coerce(key, value, want):
    if want is bool:
        if not isinstance(value, bool):
            raise ValueError(f"key {key!r} expects true/false, got {value!r}")
        return value
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"key {key!r} expects an integer, got {value!r}")
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"key {key!r} expects a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"key {key!r} expects a quoted string, got {value!r}")
    return value


def build_problem(config):
    """Instantiate the problem named by ``config.problem``."""
    p = config.problem
    if p in TARGETS:
        return make_regression(TARGETS[p], config.n_points, name=p)
    if p.startswith("legendre:"):
        n = int(p.split(":", 1)[1])
        return make_regression(legendre_family(n), config.n_points, name=p)
    if p in ("pinn-const", "pinn-linear"):
        tc = TransportConfig(
            velocity="constant" if p == "pinn-const" else "linear",
            dx=config.dx,
            alpha=config.alpha,
            conservative=config.conservative,
        )
        return make_pinn(tc, config.width)
    raise ValueError(f"unknown problem {config.problem!r}")


def build_arch(config, problem):
    return ArchitectureSpec(
        kind=config.kind,
        activation=config.activation,
        input_dim=problem.input_dim,
        width=config.width,
        depth=config.depth,
        n_out=problem.n_out,
    )


def _member_task(config, index):
    """Train one ensemble member; used directly and from worker processes."""
    child = np.random.SeedSequence(config.seed).spawn(config.ensemble)[index]
    rng = np.random.Generator(np.random.PCG64(child))
    problem = build_problem(config)
    arch = build_arch(config, problem)
    params = init_network(arch, config.init, rng)
    rank_tol = None if config.rank_tol < 0 else config.rank_tol
    snap = config.snapshot_every or None
    if config.opt == "lsgd":
        rec = train_lsgd(problem, params, arch, iters=config.iters, lr=config.lr,
                         rank_tol=rank_tol, seed=index, snapshot_every=snap)
    else:
        rec = train_gd(problem, params, arch, iters=config.iters, lr=config.lr,
                       seed=index, snapshot_every=snap)
    return rec, params, arch


def _member_entry(packed):
    return _member_task(*packed)


def _write_member_csv(rec, path):
    """Member history without the wall-clock column, so identical manifests
    yield byte-identical files."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        header = ["iter", "loss_total"] + [f"loss_{n}" for n in rec.term_names]
        if rec.rms is not None:
            header.append("rms_error")
        writer.writerow(header)
        for i in range(len(rec.iters)):
            row = [str(int(rec.iters[i])), "%.17g" % rec.loss_total[i]]
            row += ["%.17g" % v for v in rec.loss_terms[i]]
            if rec.rms is not None:
                row.append("%.17g" % np.max(rec.rms[i]))
            writer.writerow(row)


def _write_summary(recs, path):
    n_div = sum(r.diverged for r in recs)
    n_rows = max(len(r.iters) for r in recs)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "mean_log10_loss", "std_log10_loss", "n_members", "n_diverged"])
        for i in range(n_rows):
            vals = [r.loss_total[i] for r in recs if len(r.iters) > i]
            logs = np.log10(np.maximum(vals, 1e-300))
            writer.writerow([
                str(i),
                "%.17g" % logs.mean(),
                "%.17g" % logs.std(),
                str(len(vals)),
                str(n_div),
            ])


def run(config):
    """Run one (possibly ensembled) experiment; returns the member records.

    Writes ``manifest.txt``, per-member ``member_XX.csv`` histories and a
    ``summary.csv`` with per-iteration mean/std of log10 loss to
    ``config.out``.
    """
    outdir = Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "manifest.txt").write_text(config.to_manifest())
    tasks = [(config, i) for i in range(config.ensemble)]
    if config.jobs > 1 and config.ensemble > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as ex:
            results = list(ex.map(_member_entry, tasks))
    else:
        results = [_member_task(*t) for t in tasks]
    recs = []
    for i, (rec, params, arch) in enumerate(results):
        _write_member_csv(rec, outdir / f"member_{i:02d}.csv")
        if config.save_params:
            save_params(outdir / f"member_{i:02d}.ckpt", params, arch)
        recs.append(rec)
    _write_summary(recs, outdir / "summary.csv")

    finals = np.array([r.final_loss for r in recs])
    msg = (f"{config.command} problem={config.problem} opt={config.opt} "
           f"members={len(recs)} diverged={sum(r.diverged for r in recs)} "
           f"median_final_loss={np.median(finals):.3e}")
    with_rms = [r for r in recs if r.rms is not None]
    if with_rms:
        msg += f" median_final_rms={np.median([np.max(r.final_rms) for r in with_rms]):.3e}"
        if with_rms[0].rms.shape[1] > 1:
            msg += f" median_minmax_rms={np.median([minmax_metric(r.rms) for r in with_rms]):.3e}"
    print(msg)
    return recs


def sweep(config):
    """Run ``config`` once per sweep value, aggregating final metrics.

    The sweep axis is ``config.sweep`` (width, depth or alpha) and the values
    come from the comma-separated ``config.sweep_values``.  Results land in
    per-value subdirectories plus an aggregate ``sweep.csv``.
    """
    if config.sweep not in ("width", "depth", "alpha"):
        raise ValueError(f"sweep axis must be width, depth or alpha, got {config.sweep!r}")
    raw = [v for v in config.sweep_values.split(",") if v.strip()]
    if not raw:
        raise ValueError("sweep requires a nonempty comma-separated value list")
    cast = float if config.sweep == "alpha" else int
    values = [cast(v) for v in raw]
    outdir = Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        sub = replace(config, sweep="", sweep_values="",
                      out=str(outdir / f"{config.sweep}_{v}"), **{config.sweep: v})
        recs = run(sub)
        finals = [r.final_loss for r in recs]
        row = {
            "axis": config.sweep,
            "value": v,
            "n_members": len(recs),
            "n_diverged": sum(r.diverged for r in recs),
            "median_final_loss": float(np.median(finals)),
        }
        with_rms = [r for r in recs if r.rms is not None]
        row["median_final_rms"] = (
            float(np.median([np.max(r.final_rms) for r in with_rms])) if with_rms else ""
        )
        row["median_minmax_rms"] = (
            float(np.median([minmax_metric(r.rms) for r in with_rms]))
            if with_rms and with_rms[0].rms.shape[1] > 1
            else ""
        )
        rows.append(row)
    cols = ["axis", "value", "n_members", "n_diverged",
            "median_final_loss", "median_final_rms", "median_minmax_rms"]
    with open(outdir / "sweep.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
    return rows


def _cmd_experiment(config):
    if config.sweep:
        sweep(config)
    else:
        run(config)
    return 0


def _cmd_diagnose(config):
    outdir = Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if config.params_path:
        params, arch = load_params(config.params_path)
    else:
        problem = build_problem(config)
        arch = build_arch(config, problem)
        params = init_network(arch, config.init, make_rng(config.seed))
    if config.diag == "collapse":
        score = collapse_score(params, arch, seed=config.seed)
        collapsed = score < COLLAPSE_THRESHOLD
        with open(outdir / "collapse.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["score", "collapsed"])
            writer.writerow(["%.17g" % score, str(collapsed).lower()])
        print(f"collapse score={score:.3e} collapsed={collapsed}")
    elif config.diag in ("image-trace", "eig-profile"):
        trace = propagate_box(params, arch, n_samples=config.samples,
                              seed=config.seed, mode=config.box_mode)
        if config.diag == "image-trace":
            with open(outdir / "image_trace.csv", "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["stage", "unit", "min", "max"])
                for k, (lo, hi) in enumerate(zip(trace.mins(), trace.maxs())):
                    for u in range(len(lo)):
                        writer.writerow([str(k), str(u), "%.17g" % lo[u], "%.17g" % hi[u]])
            print(f"image trace: {trace.n_stages} stages, final max "
                  f"{float(np.max(trace.stages[-1])):.6g}")
        else:
            prof = eig_ratio_profile(trace)
            with open(outdir / "eig_profile.csv", "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["stage", "second_over_first", "min_over_first", "degenerate"])
                for k in range(trace.n_stages):
                    writer.writerow([str(k), "%.17g" % prof.ratios[k, 0],
                                     "%.17g" % prof.ratios[k, 1],
                                     str(bool(prof.degenerate[k])).lower()])
            print(f"eig profile: final-stage ratios {prof.ratios[-1]}")
    elif config.diag == "basis":
        if arch.input_dim == 1:
            grid = np.linspace(0.0, 1.0, max(config.samples, 2))[:, None]
        else:
            grid = make_rng(config.seed).uniform(0, 1, (config.samples, arch.input_dim))
        export_basis(params, arch, grid, outdir / "basis.csv")
        print(f"wrote basis values on {grid.shape[0]} points")
    else:
        export_cutplanes(params, arch, outdir / "cutplanes.csv")
        print(f"wrote {arch.width} cut planes")
    return 0


def _cmd_toy(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    modes = ["gd", "lsgd"] if args.modes == "both" else [args.modes]
    for mode in modes:
        traj = quadratic_toy((args.start[0], args.start[1]), args.lr, args.iters, mode)
        with open(outdir / f"toy_{mode}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iter", "x", "y", "loss"])
            for i, (x, y) in enumerate(traj):
                writer.writerow([str(i), "%.17g" % x, "%.17g" % y, "%.17g" % toy_loss((x, y))])
        print(f"toy {mode}: final ({traj[-1, 0]:.6g}, {traj[-1, 1]:.6g}) "
              f"loss {toy_loss(traj[-1]):.3e}")
    return 0


def _bench_kernels(widths, depths, n_points, reps=3):
    """Time one cached forward plus backward sweep per backend."""
    rows = []
    for w in widths:
        for L in depths:
            arch = ArchitectureSpec("plain", "relu", 1, w, L)
            params = init_network(arch, "he", make_rng(0))
            X = make_rng(1).uniform(0, 1, (n_points, 1))
            Gphi = np.ones((n_points, w))
            row = {"width": w, "depth": L}
            for name in backends.available_backends():
                kernel = backends.get_backend(name)
                best = np.inf
                for _ in range(reps):
                    t0 = time.perf_counter()
                    _, S, H, _ = kernel.forward(arch.kind_code, arch.act_code,
                                                params.first, params.rest, params.biases,
                                                X, False, True)
                    kernel.backward(arch.kind_code, arch.act_code, params.first,
                                    params.rest, X, S, H, None, Gphi, None)
                    best = min(best, time.perf_counter() - t0)
                row[f"{name}_ms"] = best * 1e3
            if "compiled_ms" in row:
                row["speedup"] = row["reference_ms"] / row["compiled_ms"]
            rows.append(row)
    return rows


def _cmd_bench(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    widths = [int(v) for v in args.widths.split(",")]
    depths = [int(v) for v in args.depths.split(",")]
    if args.kernels:
        rows = _bench_kernels(widths, depths, args.npoints)
        path = outdir / "bench_kernels.csv"
    else:
        rows = timing_compare(widths, depths, iters=args.iters, seed=args.seed)
        path = outdir / "bench_timing.csv"
    cols = sorted({k for r in rows for k in r}, key=lambda c: (c not in ("width", "depth"), c))
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
    for r in rows:
        print("  ".join(f"{k}={r[k]:.4g}" if isinstance(r[k], float) else f"{k}={r[k]}"
                        for k in cols if k in r))
    return 0


_SUBCOMMAND_DEFAULTS = {
    "regress": {"problem": "u2"},
    "multiregress": {"problem": "legendre:6", "kind": "resnet", "width": 6,
                     "depth": 16, "activation": "relu", "lr": 0.0005, "opt": "gd"},
    "pinn": {"problem": "pinn-const", "depth": 1},
    "diagnose": {"iters": 0},
}


def _add_net_flags(p):
    p.add_argument("--arch", dest="kind", choices=["plain", "resnet"], default=None,
                   help="hidden-layer wiring")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--activation", choices=["relu", "tanh"], default=None)
    p.add_argument("--init", choices=list(INIT_SCHEMES), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="load a manifest; flags override it")


def _add_train_flags(p):
    p.add_argument("--opt", choices=["gd", "lsgd"], default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--rank-tol", dest="rank_tol", type=float, default=None)
    p.add_argument("--ensemble", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int, default=None)
    p.add_argument("--save-params", dest="save_params", action="store_const",
                   const=True, default=None)
    p.add_argument("--sweep", choices=["width", "depth", "alpha"], default=None)
    p.add_argument("--sweep-values", dest="sweep_values", default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adabasis",
        description="Adaptive-basis network training, diagnostics and benchmarks "
                    f"(kernel backend: {backends.BACKEND_NAME})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("regress", help="fit a scalar target on [0,1]")
    p.add_argument("--problem", choices=sorted(TARGETS), default=None)
    p.add_argument("--npoints", dest="n_points", type=int, default=None)
    _add_net_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("multiregress", help="fit a polynomial family with one shared basis")
    p.add_argument("--problem", default=None, help="legendre:<n>")
    p.add_argument("--npoints", dest="n_points", type=int, default=None)
    _add_net_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("pinn", help="transport-equation collocation on the unit square")
    p.add_argument("--problem", choices=["pinn-const", "pinn-linear"], default=None)
    p.add_argument("--dx", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--conservative", action="store_const", const=True, default=None)
    _add_net_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("diagnose", help="basis-health diagnostics of a network")
    p.add_argument("--diag", choices=list(_DIAG_MODES), default=None)
    p.add_argument("--problem", default=None,
                   help="sets input dimension when no checkpoint is given")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--box-mode", dest="box_mode", choices=["input", "hidden"], default=None)
    p.add_argument("--params", dest="params_path", default=None,
                   help="checkpoint to inspect instead of a fresh initialization")
    _add_net_flags(p)

    p = sub.add_parser("toy2d", help="2-D quadratic: solve-then-step vs gradient descent")
    p.add_argument("--modes", choices=["gd", "lsgd", "both"], default="both")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--start", type=lambda s: tuple(float(v) for v in s.split(",")),
                   default=(-4.0, 1.0), metavar="X,Y")
    p.add_argument("--out", default="runs/toy2d")

    p = sub.add_parser("bench", help="timing grids")
    p.add_argument("--widths", default="4,16,64")
    p.add_argument("--depths", default="1,4,16")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--npoints", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernels", action="store_true",
                   help="compare kernel backends instead of the two trainers")
    p.add_argument("--out", default="runs/bench")

    return parser


def _config_from_args(args):
    if args.config:
        base = ExperimentConfig.from_manifest(Path(args.config).read_text())
    else:
        base = replace(ExperimentConfig(), **_SUBCOMMAND_DEFAULTS.get(args.command, {}))
    overrides = {"command": args.command}
    for f in fields(ExperimentConfig):
        if hasattr(args, f.name) and getattr(args, f.name) is not None:
            overrides[f.name] = getattr(args, f.name)
    return replace(base, **overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("regress", "multiregress", "pinn"):
            return _cmd_experiment(_config_from_args(args))
        if args.command == "diagnose":
            return _cmd_diagnose(_config_from_args(args))
        if args.command == "toy2d":
            return _cmd_toy(args)
        return _cmd_bench(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
