"""Dense networks viewed as adaptive bases.

A network here is a stack of hidden layers producing ``width`` scalar basis
functions, combined by a trailing linear layer without bias:

    output(x) = basis(x) @ linear

``plain`` networks apply ``sigma(W x + b)`` per layer; ``resnet`` networks add
an identity skip on every hidden layer except the first.  The linear
coefficients are deliberately kept separate from the hidden parameters so a
least-squares solve can replace them wholesale while gradient steps move only
the basis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import backends
from .backends.reference import (
    ACT_RELU,
    ACT_TANH,
    KIND_PLAIN,
    KIND_RESNET,
    KIND_RESNET_ALL,
)

__all__ = [
    "ArchitectureSpec",
    "NetworkParams",
    "HiddenGrads",
    "BasisEval",
    "forward_basis",
    "forward_output",
    "input_jacobian_basis",
    "param_vjp",
    "save_params",
    "load_params",
]

_KIND_CODES = {"plain": KIND_PLAIN, "resnet": KIND_RESNET}
_ACT_CODES = {"relu": ACT_RELU, "tanh": ACT_TANH}


@dataclass(frozen=True)
class ArchitectureSpec:
    """Immutable shape description of a network.

    ``depth`` counts hidden layers; the trailing linear layer is implicit.
    """

    kind: str
    activation: str
    input_dim: int
    width: int
    depth: int
    n_out: int = 1

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"kind must be one of {sorted(_KIND_CODES)}, got {self.kind!r}")
        if self.activation not in _ACT_CODES:
            raise ValueError(
                f"activation must be one of {sorted(_ACT_CODES)}, got {self.activation!r}"
            )
        for name in ("input_dim", "width", "depth", "n_out"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def kind_code(self):
        return _KIND_CODES[self.kind]

    @property
    def act_code(self):
        return _ACT_CODES[self.activation]

    def layer_in_dim(self, layer):
        """Input dimension of hidden layer ``layer`` (1-based)."""
        if not 1 <= layer <= self.depth:
            raise ValueError(f"layer must be in [1, {self.depth}], got {layer}")
        return self.input_dim if layer == 1 else self.width


class NetworkParams:
    """Packed float64 parameter arrays for one network.

    ``first`` is (width, input_dim), ``rest`` is (depth-1, width, width),
    ``biases`` is (depth, width) and ``linear`` is (width, n_out).  Hidden
    arrays may be mutated in place by an optimizer; call
    :meth:`note_hidden_update` afterwards so cached basis evaluations are
    recognized as stale.
    """

    __slots__ = ("first", "rest", "biases", "linear", "_hidden_version")

    def __init__(self, first, rest, biases, linear):
        self.first = np.ascontiguousarray(first, dtype=np.float64)
        self.rest = np.ascontiguousarray(rest, dtype=np.float64)
        self.biases = np.ascontiguousarray(biases, dtype=np.float64)
        self.linear = np.ascontiguousarray(linear, dtype=np.float64)
        self._hidden_version = 0
        w, d = self.first.shape
        if self.rest.ndim != 3 or self.rest.shape[1:] != (w, w):
            raise ValueError(
                f"rest must be (depth-1, {w}, {w}), got {self.rest.shape}"
            )
        if self.biases.ndim != 2 or self.biases.shape != (self.rest.shape[0] + 1, w):
            raise ValueError(
                f"biases must be ({self.rest.shape[0] + 1}, {w}), got {self.biases.shape}"
            )
        if self.linear.ndim != 2 or self.linear.shape[0] != w:
            raise ValueError(f"linear must be ({w}, n_out), got {self.linear.shape}")

    @classmethod
    def from_layers(cls, layers, linear):
        """Build from a list of per-layer ``(W, b)`` pairs plus the linear map."""
        if not layers:
            raise ValueError("at least one hidden layer is required")
        W1, b1 = layers[0]
        W1 = np.asarray(W1, dtype=np.float64)
        w = W1.shape[0]
        rest = np.empty((len(layers) - 1, w, w))
        biases = np.empty((len(layers), w))
        biases[0] = np.asarray(b1, dtype=np.float64)
        for i, (W, b) in enumerate(layers[1:]):
            rest[i] = np.asarray(W, dtype=np.float64)
            biases[i + 1] = np.asarray(b, dtype=np.float64)
        return cls(W1, rest, biases, np.asarray(linear, dtype=np.float64))

    @property
    def depth(self):
        return self.biases.shape[0]

    @property
    def width(self):
        return self.first.shape[0]

    @property
    def input_dim(self):
        return self.first.shape[1]

    @property
    def n_out(self):
        return self.linear.shape[1]

    @property
    def hidden_version(self):
        return self._hidden_version

    def layers(self):
        """Per-layer ``(W, b)`` views into the packed arrays."""
        out = [(self.first, self.biases[0])]
        for i in range(self.rest.shape[0]):
            out.append((self.rest[i], self.biases[i + 1]))
        return out

    def note_hidden_update(self):
        """Mark hidden parameters as changed, invalidating cached evals."""
        self._hidden_version += 1

    def copy(self):
        return NetworkParams(
            self.first.copy(), self.rest.copy(), self.biases.copy(), self.linear.copy()
        )

    def matches(self, arch):
        """True if shapes agree with ``arch``."""
        return (
            self.first.shape == (arch.width, arch.input_dim)
            and self.rest.shape == (arch.depth - 1, arch.width, arch.width)
            and self.biases.shape == (arch.depth, arch.width)
            and self.linear.shape == (arch.width, arch.n_out)
        )


def _check_match(params, arch):
    if not params.matches(arch):
        raise ValueError(
            "parameter shapes do not match architecture: "
            f"first {params.first.shape}, rest {params.rest.shape}, "
            f"biases {params.biases.shape}, linear {params.linear.shape} vs {arch}"
        )


@dataclass
class HiddenGrads:
    """Gradients w.r.t. hidden parameters, in the packed params layout."""

    first: np.ndarray
    rest: np.ndarray
    biases: np.ndarray

    def layers(self):
        out = [(self.first, self.biases[0])]
        for i in range(self.rest.shape[0]):
            out.append((self.rest[i], self.biases[i + 1]))
        return out

    def __iadd__(self, other):
        self.first += other.first
        self.rest += other.rest
        self.biases += other.biases
        return self

    def all_finite(self):
        return (
            np.all(np.isfinite(self.first))
            and np.all(np.isfinite(self.rest))
            and np.all(np.isfinite(self.biases))
        )

    @classmethod
    def zeros_like(cls, params):
        return cls(
            np.zeros_like(params.first),
            np.zeros_like(params.rest),
            np.zeros_like(params.biases),
        )


@dataclass
class BasisEval:
    """Result of a forward sweep: basis values plus optional jacobian/cache."""

    values: np.ndarray
    _jac: np.ndarray | None = field(default=None, repr=False)
    _X: np.ndarray | None = field(default=None, repr=False)
    _S: np.ndarray | None = field(default=None, repr=False)
    _H: np.ndarray | None = field(default=None, repr=False)
    _J: np.ndarray | None = field(default=None, repr=False)
    _version: int = 0
    _arch: ArchitectureSpec | None = field(default=None, repr=False)

    @property
    def jacobian(self):
        """Input jacobian of the basis as (N, width, input_dim), or None."""
        if self._jac is None:
            return None
        return np.moveaxis(self._jac, 0, 2)

    @property
    def has_cache(self):
        return self._S is not None

    def layer_outputs(self):
        """List of per-layer outputs (N, width); requires a cached sweep."""
        if self._H is None:
            raise ValueError("layer outputs were not cached; rerun with keep_cache=True")
        return [self._H[i] for i in range(self._H.shape[0])]


def _as_batch(X, input_dim):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != input_dim:
        raise ValueError(f"X must be (N, {input_dim}), got shape {X.shape}")
    return X


def forward_basis(params, arch, X, need_jacobian=False, keep_cache=True):
    """Evaluate all basis functions on a batch.

    With ``keep_cache`` the per-layer activations (and jacobians, when
    requested) are retained on the returned :class:`BasisEval` so
    :func:`param_vjp` can run a single reverse sweep.
    """
    _check_match(params, arch)
    X = _as_batch(X, arch.input_dim)
    kernel = backends.active
    phi, S, H, J = kernel.forward(
        arch.kind_code,
        arch.act_code,
        params.first,
        params.rest,
        params.biases,
        X,
        bool(need_jacobian),
        bool(keep_cache),
    )
    jac_final = None
    if need_jacobian:
        jac_final = J[-1] if keep_cache else J
    return BasisEval(
        values=phi,
        _jac=jac_final,
        _X=X if keep_cache else None,
        _S=S,
        _H=H,
        _J=J if keep_cache else None,
        _version=params.hidden_version,
        _arch=arch,
    )


def forward_output(params, arch, X):
    """Network output (N, n_out): basis values times linear coefficients."""
    ev = forward_basis(params, arch, X, need_jacobian=False, keep_cache=False)
    return ev.values @ params.linear


def input_jacobian_basis(params, arch, X):
    """Jacobian of every basis function w.r.t. the input, shape (N, width, input_dim)."""
    ev = forward_basis(params, arch, X, need_jacobian=True, keep_cache=False)
    return np.ascontiguousarray(ev.jacobian)


def param_vjp(params, arch, ev, G_phi, G_jac=None):
    """Hidden-parameter gradient from cotangents on basis values and jacobian.

    ``ev`` must come from :func:`forward_basis` with ``keep_cache=True`` on the
    same (unchanged) hidden parameters; a jacobian cotangent additionally
    requires the sweep to have been run with ``need_jacobian=True``.

    Parameters
    ----------
    G_phi : (N, width) cotangent on the basis values.
    G_jac : (N, width, input_dim) cotangent on the jacobian, optional.

    Returns
    -------
    :class:`HiddenGrads` in the packed parameter layout.
    """
    _check_match(params, arch)
    if not ev.has_cache:
        raise ValueError("basis eval carries no cache; rerun forward_basis with keep_cache=True")
    if ev._version != params.hidden_version:
        raise ValueError("basis eval is stale: hidden parameters changed since the forward sweep")
    N = ev._X.shape[0]
    w, d = arch.width, arch.input_dim
    G_phi = np.ascontiguousarray(G_phi, dtype=np.float64)
    if G_phi.shape != (N, w):
        raise ValueError(f"G_phi must be ({N}, {w}), got {G_phi.shape}")
    Gjac_packed = None
    if G_jac is not None:
        if ev._J is None:
            raise ValueError("jacobian cotangent given but the forward sweep cached no jacobian")
        G_jac = np.asarray(G_jac, dtype=np.float64)
        if G_jac.shape != (N, w, d):
            raise ValueError(f"G_jac must be ({N}, {w}, {d}), got {G_jac.shape}")
        Gjac_packed = np.ascontiguousarray(np.moveaxis(G_jac, 2, 0))
    kernel = backends.active
    dW1, dWr, db = kernel.backward(
        arch.kind_code,
        arch.act_code,
        params.first,
        params.rest,
        ev._X,
        ev._S,
        ev._H,
        ev._J,
        G_phi,
        Gjac_packed,
    )
    return HiddenGrads(dW1, dWr, db)


_CHECKPOINT_MAGIC = b"ABNET1\n"


def save_params(path, params, arch):
    """Write a checkpoint: JSON architecture header + raw float64 dumps."""
    _check_match(params, arch)
    header = json.dumps(
        {
            "kind": arch.kind,
            "activation": arch.activation,
            "input_dim": arch.input_dim,
            "width": arch.width,
            "depth": arch.depth,
            "n_out": arch.n_out,
        }
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(np.uint32(len(header)).tobytes())
        f.write(header)
        for arr in (params.first, params.rest, params.biases, params.linear):
            f.write(np.ascontiguousarray(arr).tobytes())


def load_params(path):
    """Read a checkpoint written by :func:`save_params`; returns (params, arch)."""
    with open(path, "rb") as f:
        magic = f.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"not a network checkpoint: {path}")
        (hlen,) = np.frombuffer(f.read(4), dtype=np.uint32)
        meta = json.loads(f.read(int(hlen)).decode("utf-8"))
        arch = ArchitectureSpec(
            kind=meta["kind"],
            activation=meta["activation"],
            input_dim=int(meta["input_dim"]),
            width=int(meta["width"]),
            depth=int(meta["depth"]),
            n_out=int(meta["n_out"]),
        )
        w, d, L, m = arch.width, arch.input_dim, arch.depth, arch.n_out
        shapes = [(w, d), (L - 1, w, w), (L, w), (w, m)]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape)) if all(s > 0 for s in shape) else 0
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"checkpoint truncated: {path}")
            arrays.append(np.frombuffer(buf, dtype=np.float64).reshape(shape).copy())
        if f.read(1):
            raise ValueError(f"checkpoint has trailing bytes: {path}")
    params = NetworkParams(*arrays)
    return params, arch
