"""Training loops for adaptive-basis networks.

Two optimizers share the loss machinery:

* ``train_gd``: Adam on all parameters, hidden and linear together.
* ``train_lsgd``: the linear coefficients are solved globally by minimum-norm
  least squares, then one Adam step moves only the hidden parameters, and the
  solve is repeated.  Each recorded iterate therefore lies on the manifold
  where the linear coefficients are optimal for the current basis.

Every problem term is linear in the coefficients, so per term the forward
sweep yields a design block M_k and the full system stacks
sqrt(weight_k / N_k) * [M_k | targets_k]; the squared Frobenius residual of
that stack equals the total loss.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import lstsq_minnorm
from .network import HiddenGrads, forward_basis, forward_output, param_vjp

__all__ = [
    "AdamState",
    "adam_step",
    "TermBlock",
    "LsSystem",
    "assemble_ls",
    "ls_update",
    "TrainRecord",
    "train_gd",
    "train_lsgd",
    "quadratic_toy",
    "toy_loss",
    "timing_compare",
    "DIVERGE_LIMIT",
]

# A total loss beyond this is treated as divergence and aborts the run.
DIVERGE_LIMIT = 1e12


@dataclass
class AdamState:
    """Adam moment estimates over the packed parameter arrays."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m_hidden: HiddenGrads | None = None
    v_hidden: HiddenGrads | None = None
    m_linear: np.ndarray | None = None
    v_linear: np.ndarray | None = None

    @classmethod
    def for_params(cls, params, lr, include_linear=False, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.m_hidden = HiddenGrads.zeros_like(params)
        state.v_hidden = HiddenGrads.zeros_like(params)
        if include_linear:
            state.m_linear = np.zeros_like(params.linear)
            state.v_linear = np.zeros_like(params.linear)
        return state


def _adam_update(theta, g, m, v, state, c1, c2):
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * (g * g)
    theta -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def adam_step(state, params, hidden_grads, linear_grad=None):
    """One in-place Adam step; pass ``linear_grad`` to move the linear layer too."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    pairs = [
        (params.first, hidden_grads.first, state.m_hidden.first, state.v_hidden.first),
        (params.rest, hidden_grads.rest, state.m_hidden.rest, state.v_hidden.rest),
        (params.biases, hidden_grads.biases, state.m_hidden.biases, state.v_hidden.biases),
    ]
    for theta, g, m, v in pairs:
        _adam_update(theta, g, m, v, state, c1, c2)
    if linear_grad is not None:
        if state.m_linear is None:
            raise ValueError("Adam state was created without linear-layer slots")
        _adam_update(params.linear, linear_grad, state.m_linear, state.v_linear, state, c1, c2)
    params.note_hidden_update()


@dataclass
class TermBlock:
    """Design block of one problem term at fixed hidden parameters."""

    M: np.ndarray
    targets: np.ndarray
    weight: float
    name: str
    ev: object | None = None

    @property
    def npoints(self):
        return self.M.shape[0]

    def residual(self, linear):
        return self.M @ linear - self.targets

    def loss(self, linear):
        if self.weight == 0.0:
            return 0.0
        R = self.residual(linear)
        return self.weight / self.npoints * float(np.sum(R * R))


@dataclass
class LsSystem:
    """Stacked weighted least-squares system for the linear coefficients."""

    A: np.ndarray
    b: np.ndarray
    blocks: list

    def losses(self, linear):
        """(total, per-term array) at the given coefficients."""
        terms = np.array([blk.loss(linear) for blk in self.blocks])
        return float(terms.sum()), terms


def assemble_ls(problem, params, arch, keep_cache=False):
    """Forward-sweep every term and stack the weighted system.

    With ``keep_cache`` each block retains its basis eval so hidden gradients
    can be computed later without another forward sweep (valid until the
    hidden parameters change).
    """
    blocks = []
    rows_A = []
    rows_b = []
    for term in problem.terms:
        ev = forward_basis(
            params,
            arch,
            term.points,
            need_jacobian=term.operator.needs_jacobian,
            keep_cache=keep_cache,
        )
        M = np.ascontiguousarray(term.operator.design(ev, term.points))
        blocks.append(TermBlock(M, term.targets, term.weight, term.name, ev if keep_cache else None))
        scale = np.sqrt(term.weight / term.npoints)
        if term.weight > 0.0:
            rows_A.append(scale * M)
            rows_b.append(scale * term.targets)
    A = np.vstack(rows_A)
    b = np.vstack(rows_b)
    return LsSystem(A, b, blocks)


def ls_update(params, arch, problem, rank_tol=None, system=None):
    """Replace the linear coefficients by the minimum-norm least-squares solve.

    Returns the system used, so callers can read pre/post losses off the same
    design blocks.
    """
    if system is None:
        system = assemble_ls(problem, params, arch)
    params.linear = lstsq_minnorm(system.A, system.b, rank_tol)
    if params.linear.ndim == 1:
        params.linear = params.linear[:, None]
    return system


def _hidden_grads_from_system(system, problem, params, arch):
    total = HiddenGrads.zeros_like(params)
    for term, blk in zip(problem.terms, system.blocks):
        if blk.weight == 0.0:
            continue
        if blk.ev is None:
            raise ValueError("system was assembled without caches; cannot take hidden gradients")
        R = blk.residual(params.linear)
        G_M = (2.0 * blk.weight / blk.npoints) * (R @ params.linear.T)
        G_phi, G_jac = term.operator.spread(G_M, term.points)
        if G_phi is None:
            G_phi = np.zeros_like(G_M)
        total += param_vjp(params, arch, blk.ev, G_phi, G_jac)
    return total


def _linear_grad_from_system(system, linear):
    g = np.zeros_like(linear)
    for blk in system.blocks:
        if blk.weight == 0.0:
            continue
        R = blk.residual(linear)
        g += (2.0 * blk.weight / blk.npoints) * (blk.M.T @ R)
    return g


def _rms_columns(problem, system, params, arch):
    """Per-target RMS monitor, or None when the problem defines no monitor."""
    if problem.eval_term is not None:
        R = system.blocks[problem.eval_term].residual(params.linear)
        return np.sqrt(np.mean(R * R, axis=0))
    if problem.eval_points is not None:
        pred = forward_output(params, arch, problem.eval_points)
        return np.sqrt(np.mean((pred - problem.eval_values) ** 2, axis=0))
    return None


@dataclass
class TrainRecord:
    """Per-iteration history of one training run."""

    mode: str
    lr: float
    seed: int | None
    term_names: list
    iters: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    loss_total: np.ndarray = field(default_factory=lambda: np.empty(0))
    loss_terms: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    rms: np.ndarray | None = None
    pre_ls: np.ndarray | None = None
    wall_ms: np.ndarray = field(default_factory=lambda: np.empty(0))
    diverged: bool = False
    snapshots: list = field(default_factory=list)

    @property
    def final_loss(self):
        return float(self.loss_total[-1])

    @property
    def final_rms(self):
        if self.rms is None:
            return None
        return self.rms[-1].copy()

    def write_csv(self, path):
        """Columns: iter, loss_total, one column per term, optional worst-target
        rms_error, wall_ms.  Floats use repr-exact formatting so reruns are
        byte-identical."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            header = ["iter", "loss_total"]
            header += [f"loss_{name}" for name in self.term_names]
            if self.rms is not None:
                header.append("rms_error")
            header.append("wall_ms")
            writer.writerow(header)
            for i in range(len(self.iters)):
                row = [str(int(self.iters[i])), _fmt(self.loss_total[i])]
                row += [_fmt(v) for v in self.loss_terms[i]]
                if self.rms is not None:
                    row.append(_fmt(np.max(self.rms[i])))
                row.append(_fmt(self.wall_ms[i]))
                writer.writerow(row)


def _fmt(x):
    return "%.17g" % float(x)


class _Rows:
    """Accumulates history rows and freezes them into a TrainRecord."""

    def __init__(self, mode, lr, seed, term_names, track_pre_ls):
        self.rec = TrainRecord(mode=mode, lr=lr, seed=seed, term_names=list(term_names))
        self.track_pre_ls = track_pre_ls
        self.iters = []
        self.total = []
        self.terms = []
        self.rms = []
        self.pre = []
        self.wall = []
        self.t0 = time.perf_counter()

    def add(self, it, total, terms, rms, pre=None):
        self.iters.append(it)
        self.total.append(total)
        self.terms.append(terms)
        self.rms.append(rms)
        if self.track_pre_ls:
            self.pre.append(pre)
        self.wall.append((time.perf_counter() - self.t0) * 1e3)

    def freeze(self, diverged, snapshots):
        rec = self.rec
        rec.iters = np.array(self.iters, dtype=int)
        rec.loss_total = np.array(self.total)
        rec.loss_terms = np.array(self.terms)
        if self.rms and self.rms[0] is not None:
            rec.rms = np.array(self.rms)
        if self.track_pre_ls:
            rec.pre_ls = np.array(self.pre)
        rec.wall_ms = np.array(self.wall)
        rec.diverged = diverged
        rec.snapshots = snapshots
        return rec


def train_gd(problem, params, arch, iters, lr, beta1=0.9, beta2=0.999, eps=1e-8,
             seed=None, snapshot_every=None):
    """Adam on all parameters.  Row 0 is the untouched initial loss; row i the
    loss after i steps.  Aborts (flagged, not raised) on divergence."""
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    state = AdamState.for_params(params, lr, include_linear=True,
                                 beta1=beta1, beta2=beta2, eps=eps)
    rows = _Rows("gd", lr, seed, [t.name for t in problem.terms], track_pre_ls=False)
    snapshots = []
    diverged = False

    need = iters > 0
    system = assemble_ls(problem, params, arch, keep_cache=need)
    total, terms = system.losses(params.linear)
    rows.add(0, total, terms, _rms_columns(problem, system, params, arch))
    if need:
        hg = _hidden_grads_from_system(system, problem, params, arch)
        lg = _linear_grad_from_system(system, params.linear)

    for i in range(1, iters + 1):
        if not (hg.all_finite() and np.all(np.isfinite(lg))):
            diverged = True
            break
        adam_step(state, params, hg, lg)
        need = i < iters
        system = assemble_ls(problem, params, arch, keep_cache=need)
        total, terms = system.losses(params.linear)
        rows.add(i, total, terms, _rms_columns(problem, system, params, arch))
        if snapshot_every and i % snapshot_every == 0:
            snapshots.append((i, params.copy()))
        if not np.isfinite(total) or total > DIVERGE_LIMIT:
            diverged = True
            break
        if need:
            hg = _hidden_grads_from_system(system, problem, params, arch)
            lg = _linear_grad_from_system(system, params.linear)

    return rows.freeze(diverged, snapshots)


def train_lsgd(problem, params, arch, iters, lr, beta1=0.9, beta2=0.999, eps=1e-8,
               rank_tol=None, seed=None, snapshot_every=None):
    """Alternate a global least-squares solve for the linear coefficients with
    one Adam step on the hidden parameters.

    Row 0 is recorded right after the initial solve; row i after the solve
    that follows hidden step i.  ``pre_ls`` stores the loss just before each
    solve (same basis, previous coefficients), so
    ``loss_total[i] <= pre_ls[i]`` always holds.
    """
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    state = AdamState.for_params(params, lr, include_linear=False,
                                 beta1=beta1, beta2=beta2, eps=eps)
    rows = _Rows("lsgd", lr, seed, [t.name for t in problem.terms], track_pre_ls=True)
    snapshots = []
    diverged = False

    system = assemble_ls(problem, params, arch, keep_cache=iters > 0)
    pre, _ = system.losses(params.linear)
    ls_update(params, arch, problem, rank_tol, system=system)
    total, terms = system.losses(params.linear)
    rows.add(0, total, terms, _rms_columns(problem, system, params, arch), pre=pre)

    for i in range(1, iters + 1):
        hg = _hidden_grads_from_system(system, problem, params, arch)
        if not hg.all_finite():
            diverged = True
            break
        adam_step(state, params, hg)
        system = assemble_ls(problem, params, arch, keep_cache=i < iters)
        pre, _ = system.losses(params.linear)
        ls_update(params, arch, problem, rank_tol, system=system)
        total, terms = system.losses(params.linear)
        rows.add(i, total, terms, _rms_columns(problem, system, params, arch), pre=pre)
        if snapshot_every and i % snapshot_every == 0:
            snapshots.append((i, params.copy()))
        if not np.isfinite(total) or total > DIVERGE_LIMIT:
            diverged = True
            break

    return rows.freeze(diverged, snapshots)


def toy_loss(xy):
    """The 2-D quadratic 5x^2 - 6xy + 5y^2."""
    x, y = float(xy[0]), float(xy[1])
    return 5.0 * x * x - 6.0 * x * y + 5.0 * y * y


def quadratic_toy(start=(-4.0, 1.0), lr=0.1, iters=50, mode="lsgd"):
    """Trajectory of plain gradient descent vs the solve-then-step scheme on
    the quadratic 5x^2 - 6xy + 5y^2 (x plays the linear coefficient, y the
    hidden parameter).

    Returns an (iters + 1, 2) array.  For ``gd`` row 0 is ``start``; for
    ``lsgd`` row 0 is ``start`` after the initial exact solve x = 3y/5, and
    each subsequent row is one gradient step in y followed by the solve.
    """
    if mode not in ("gd", "lsgd"):
        raise ValueError(f"mode must be 'gd' or 'lsgd', got {mode!r}")
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    x, y = float(start[0]), float(start[1])
    traj = np.empty((iters + 1, 2))
    if mode == "gd":
        traj[0] = (x, y)
        for i in range(1, iters + 1):
            gx = 10.0 * x - 6.0 * y
            gy = 10.0 * y - 6.0 * x
            x, y = x - lr * gx, y - lr * gy
            traj[i] = (x, y)
    else:
        x = 0.6 * y
        traj[0] = (x, y)
        for i in range(1, iters + 1):
            y = y - lr * (10.0 * y - 6.0 * x)
            x = 0.6 * y
            traj[i] = (x, y)
    return traj


def timing_compare(widths, depths, problem=None, iters=50, activation="relu",
                   kind="plain", seed=0):
    """Wall-clock per-iteration cost of the two trainers across a size grid.

    Returns a list of dict rows with per-iteration milliseconds and the
    lsgd/gd ratio.  Costs are measured on fresh He-initialized networks over
    the same problem (default: the sine regression on 1000 points).
    """
    from .initializers import init_network
    from .linalg import make_rng
    from .network import ArchitectureSpec
    from .problems import make_regression, target_u2

    if problem is None:
        problem = make_regression(target_u2)
    rows = []
    for w in widths:
        for L in depths:
            arch = ArchitectureSpec(kind=kind, activation=activation,
                                    input_dim=problem.input_dim, width=w, depth=L,
                                    n_out=problem.n_out)
            out = {"width": w, "depth": L}
            for mode, fn in (("lsgd", train_lsgd), ("gd", train_gd)):
                params = init_network(arch, "he", make_rng(seed))
                t0 = time.perf_counter()
                fn(problem, params, arch, iters=iters, lr=1e-12)
                out[f"{mode}_ms_per_iter"] = (time.perf_counter() - t0) * 1e3 / max(iters, 1)
            out["ratio"] = out["lsgd_ms_per_iter"] / out["gd_ms_per_iter"]
            rows.append(out)
    return rows
