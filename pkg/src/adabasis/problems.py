"""Benchmark problem definitions.

A problem is a weighted list of terms; each term applies a linear operator to
the network on a fixed point set and penalizes the mean squared residual
against a target.  Because every operator is linear in the basis functions,
each term contributes a design-matrix block to the global least-squares
system for the linear coefficients:

    loss = sum_k  weight_k / N_k * || M_k @ linear - targets_k ||_F^2

Regression uses a single point-evaluation term; the transport benchmark adds
an interior advection-residual term plus initial and inflow-boundary traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import ArchitectureSpec, NetworkParams

__all__ = [
    "PointEval",
    "TransportResidual",
    "ProblemTerm",
    "ProblemSpec",
    "TransportConfig",
    "target_u1",
    "target_u2",
    "legendre_normalized",
    "legendre_family",
    "tent",
    "analytic_transport",
    "exact_tent_network",
    "make_regression",
    "make_pinn",
    "rms_error",
    "minmax_metric",
    "TARGETS",
]


class PointEval:
    """Evaluate the network at the term's points (regression and traces)."""

    needs_jacobian = False

    def design(self, ev, points):
        return ev.values

    def spread(self, G, points):
        """Split a design-matrix cotangent into (basis, jacobian) cotangents."""
        return G, None


@dataclass(frozen=True)
class TransportResidual:
    """Advection residual d/dt + a(x) d/dx applied to the network.

    Points carry columns (x, t).  ``velocity`` is ``constant`` (a = 1) or
    ``linear`` (a = x).  With ``conservative`` the operator becomes
    d/dt + d/dx (a .), adding the velocity divergence times the function
    itself.
    """

    velocity: str = "constant"
    conservative: bool = False
    needs_jacobian = True

    def __post_init__(self):
        if self.velocity not in ("constant", "linear"):
            raise ValueError(f"velocity must be 'constant' or 'linear', got {self.velocity!r}")

    def velocity_at(self, points):
        if self.velocity == "constant":
            return np.ones(points.shape[0])
        return points[:, 0].copy()

    def velocity_div(self):
        return 0.0 if self.velocity == "constant" else 1.0

    def design(self, ev, points):
        jac = ev.jacobian
        if jac is None:
            raise ValueError("transport residual needs a jacobian-carrying basis eval")
        a = self.velocity_at(points)
        M = jac[:, :, 1] + a[:, None] * jac[:, :, 0]
        if self.conservative:
            M = M + self.velocity_div() * ev.values
        return M

    def spread(self, G, points):
        a = self.velocity_at(points)
        Gjac = np.empty(G.shape + (2,))
        Gjac[:, :, 0] = a[:, None] * G
        Gjac[:, :, 1] = G
        Gphi = self.velocity_div() * G if self.conservative else None
        return Gphi, Gjac


@dataclass
class ProblemTerm:
    """One weighted residual block."""

    operator: object
    points: np.ndarray
    targets: np.ndarray
    weight: float
    name: str

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ValueError(f"term {self.name!r}: points must be (N, d) with N >= 1")
        if self.targets.ndim != 2 or self.targets.shape[0] != self.points.shape[0]:
            raise ValueError(f"term {self.name!r}: targets must be (N, n_out)")
        if not self.weight >= 0:
            raise ValueError(f"term {self.name!r}: weight must be >= 0, got {self.weight}")

    @property
    def npoints(self):
        return self.points.shape[0]


@dataclass
class ProblemSpec:
    """A named list of residual terms plus an optional evaluation grid.

    ``eval_term`` points at a term whose residuals double as the error
    monitor (regression); otherwise ``eval_points``/``eval_values`` give an
    independent grid with reference values (transport benchmark).
    """

    name: str
    input_dim: int
    n_out: int
    terms: list = field(default_factory=list)
    eval_points: np.ndarray | None = None
    eval_values: np.ndarray | None = None
    eval_term: int | None = None

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a problem needs at least one term")
        for t in self.terms:
            if t.points.shape[1] != self.input_dim:
                raise ValueError(f"term {t.name!r} has input dim {t.points.shape[1]}, expected {self.input_dim}")
            if t.targets.shape[1] != self.n_out:
                raise ValueError(f"term {t.name!r} has {t.targets.shape[1]} target columns, expected {self.n_out}")
        if not any(t.weight > 0 for t in self.terms):
            raise ValueError("at least one term must have positive weight")
        if self.eval_term is not None and not 0 <= self.eval_term < len(self.terms):
            raise ValueError(f"eval_term {self.eval_term} out of range")


def target_u1(x):
    """Piecewise target: x below 1/2, then 1 - (3/4) x^2."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < 0.5, x, 1.0 - 0.75 * x * x)


def target_u2(x):
    """One full sine period on [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    return np.sin(2.0 * np.pi * x)


TARGETS = {"u1": target_u1, "u2": target_u2}


def legendre_normalized(order, x):
    """Shifted Legendre polynomial on [0, 1], normalized to unit L2 norm.

    Uses the three-term recurrence in t = 2x - 1 and the norm factor
    sqrt(2 * order + 1).
    """
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    x = np.asarray(x, dtype=np.float64)
    t = 2.0 * x - 1.0
    prev = np.ones_like(t)
    if order == 0:
        return np.sqrt(1.0) * prev
    cur = t
    for n in range(1, order):
        prev, cur = cur, ((2 * n + 1) * t * cur - n * prev) / (n + 1)
    return np.sqrt(2.0 * order + 1.0) * cur


def legendre_family(n):
    """The first ``n`` normalized shifted Legendre polynomials as callables."""
    if n < 1:
        raise ValueError(f"family size must be >= 1, got {n}")

    def make(k):
        return lambda x: legendre_normalized(k, x)

    return [make(k) for k in range(n)]


@dataclass(frozen=True)
class TransportConfig:
    """Geometry and weighting of the transport benchmark on [0,1] x [0,1].

    ``velocity``: ``constant`` (a = 1, solution u0(x - t)) or ``linear``
    (a = x, solution u0(x e^-t)).  ``alpha`` sets the interior weight
    eps = width^-alpha.  The initial profile is a tent of the given height
    peaking at ``tent_peak`` with support ``tent_support``.
    """

    velocity: str = "constant"
    dx: float = 0.05
    alpha: float = 0.0
    tent_peak: float = 0.25
    tent_height: float = 1.0
    tent_support: tuple = (0.0, 0.5)
    conservative: bool = False

    def __post_init__(self):
        if self.velocity not in ("constant", "linear"):
            raise ValueError(f"velocity must be 'constant' or 'linear', got {self.velocity!r}")
        if not 0.0 < self.dx <= 0.5:
            raise ValueError(f"dx must lie in (0, 0.5], got {self.dx}")
        if abs(round(1.0 / self.dx) * self.dx - 1.0) > 1e-9:
            raise ValueError(f"dx must divide 1 exactly, got {self.dx}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        lo, hi = self.tent_support
        if not 0.0 <= lo < self.tent_peak < hi <= 1.0:
            raise ValueError(
                f"need 0 <= support[0] < peak < support[1] <= 1, got {self.tent_support} / {self.tent_peak}"
            )
        if self.tent_height <= 0:
            raise ValueError(f"tent height must be positive, got {self.tent_height}")

    @property
    def n_cells(self):
        return round(1.0 / self.dx)


def tent(config, x):
    """Piecewise-linear tent profile of ``config`` evaluated at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = config.tent_support
    peak, h = config.tent_peak, config.tent_height
    rise = (x - lo) / (peak - lo)
    fall = (hi - x) / (hi - peak)
    return h * np.clip(np.minimum(rise, fall), 0.0, None)


def analytic_transport(config, x, t):
    """Exact solution of the transport benchmark at (x, t)."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if config.velocity == "constant":
        return tent(config, x - t)
    return tent(config, x * np.exp(-t))


def exact_tent_network(config=None):
    """Width-3 ReLU network reproducing the constant-velocity solution exactly.

    u0(x - t) is a tent in s = x - t, which three ReLUs represent with zero
    error; returns ``(params, arch)``.
    """
    if config is None:
        config = TransportConfig()
    if config.velocity != "constant":
        raise ValueError("the exact tent network exists only for the constant velocity")
    lo, hi = config.tent_support
    peak, h = config.tent_peak, config.tent_height
    s_rise = h / (peak - lo)
    s_fall = h / (hi - peak)
    arch = ArchitectureSpec(kind="plain", activation="relu", input_dim=2, width=3, depth=1)
    W = np.array([[1.0, -1.0], [1.0, -1.0], [1.0, -1.0]])
    b = np.array([-lo, -peak, -hi])
    linear = np.array([[s_rise], [-(s_rise + s_fall)], [s_fall]])
    params = NetworkParams.from_layers([(W, b)], linear)
    return params, arch


def make_regression(targets, n_points=1000, name="regress"):
    """Single-term fit of one or more scalar targets on a uniform grid."""
    if callable(targets):
        targets = [targets]
    if not targets:
        raise ValueError("at least one target function is required")
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    x = np.linspace(0.0, 1.0, n_points)
    Y = np.column_stack([np.asarray(f(x), dtype=np.float64) for f in targets])
    term = ProblemTerm(PointEval(), x[:, None], Y, 1.0, "fit")
    return ProblemSpec(name=name, input_dim=1, n_out=len(targets), terms=[term], eval_term=0)


def make_pinn(config, width):
    """Collocation problem for the transport equation on the unit square.

    Interior residual on the open uniform grid (weight width^-alpha), initial
    trace at t = 0 and inflow trace at x = 0 on closed grid lines (weight 1).
    The closed product grid with the analytic solution is attached for error
    monitoring.
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    eps = float(width) ** (-config.alpha)
    n = config.n_cells
    line = np.linspace(0.0, 1.0, n + 1)
    inner = line[1:-1]
    XX, TT = np.meshgrid(inner, inner, indexing="ij")
    pts_int = np.column_stack([XX.ravel(), TT.ravel()])
    pts_init = np.column_stack([line, np.zeros(n + 1)])
    pts_bnd = np.column_stack([np.zeros(n + 1), line])
    terms = [
        ProblemTerm(
            TransportResidual(config.velocity, config.conservative),
            pts_int,
            np.zeros((pts_int.shape[0], 1)),
            eps,
            "interior",
        ),
        ProblemTerm(PointEval(), pts_init, tent(config, line)[:, None], 1.0, "initial"),
        ProblemTerm(PointEval(), pts_bnd, np.zeros((n + 1, 1)), 1.0, "boundary"),
    ]
    EX, ET = np.meshgrid(line, line, indexing="ij")
    eval_pts = np.column_stack([EX.ravel(), ET.ravel()])
    eval_vals = analytic_transport(config, eval_pts[:, 0], eval_pts[:, 1])[:, None]
    return ProblemSpec(
        name=f"pinn-{config.velocity}",
        input_dim=2,
        n_out=1,
        terms=terms,
        eval_points=eval_pts,
        eval_values=eval_vals,
    )


def rms_error(pred, exact):
    """Root mean squared difference over all entries; shapes must match."""
    pred = np.asarray(pred, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    if pred.shape != exact.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {exact.shape}")
    return float(np.sqrt(np.mean((pred - exact) ** 2)))


def minmax_metric(rms_history):
    """Best worst-case error of a run: min over iterations of the max RMS
    across targets.  ``rms_history`` is (n_records, n_targets)."""
    rms_history = np.asarray(rms_history, dtype=np.float64)
    if rms_history.ndim != 2 or rms_history.size == 0:
        raise ValueError("rms_history must be a nonempty (n_records, n_targets) array")
    return float(np.min(np.max(rms_history, axis=1)))
