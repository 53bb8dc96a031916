"""Weight initialization schemes.

The box scheme places each hidden unit's ReLU cut plane so that it actually
cuts through the layer's input box: the unit vanishes at a random point ``p``
inside the box and attains a prescribed maximum at the box corner selected by
the sign pattern of its normal.  That guarantees every unit is alive and the
layer's image lands in a known box, layer after layer, at any depth.  He and
Glorot uniform fan-in schemes are provided as baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import make_rng
from .network import ArchitectureSpec, NetworkParams

__all__ = [
    "CutPlane",
    "max_corner",
    "box_init_plain",
    "box_init_resnet",
    "he_uniform",
    "glorot_uniform",
    "linear_coefficients",
    "init_network",
    "INIT_SCHEMES",
]

# Below this value of (p_max - p) . n the cut plane is numerically parallel
# to the maximizing corner direction and the unit is redrawn.
DEGENERATE_TOL = 1e-12

INIT_SCHEMES = ("box", "he", "glorot")


@dataclass(frozen=True)
class CutPlane:
    """Affine unit W x + b factored as scale * (x - point) . normal.

    ``normal`` has unit length; the plane {x : (x - point) . normal = 0} is
    the unit's zero set.
    """

    point: np.ndarray
    normal: np.ndarray
    scale: float

    def __post_init__(self):
        point = np.asarray(self.point, dtype=np.float64)
        normal = np.asarray(self.normal, dtype=np.float64)
        if point.ndim != 1 or normal.shape != point.shape:
            raise ValueError("point and normal must be 1-D and the same length")
        if not np.isclose(np.linalg.norm(normal), 1.0, rtol=0, atol=1e-9):
            raise ValueError("normal must have unit length")
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "normal", normal)

    def weights(self):
        """Return the (W_row, bias) pair realizing this plane."""
        W = self.scale * self.normal
        b = -self.scale * float(self.normal @ self.point)
        return W, b

    @classmethod
    def from_weights(cls, W_row, bias):
        """Recover the plane from an affine row; the row must be nonzero."""
        W_row = np.asarray(W_row, dtype=np.float64)
        scale = np.linalg.norm(W_row)
        if scale == 0:
            raise ValueError("cannot factor a zero weight row into a cut plane")
        normal = W_row / scale
        point = -(bias / scale) * normal
        return cls(point=point, normal=normal, scale=float(scale))


def max_corner(normal, box_size=1.0):
    """Corner of [0, box_size]^d maximizing ``x . normal``.

    Components with ``normal_i <= 0`` map to 0 (ties at zero go to the origin
    side), positive components to ``box_size``.
    """
    normal = np.asarray(normal, dtype=np.float64)
    if normal.ndim != 1:
        raise ValueError(f"normal must be 1-D, got shape {normal.shape}")
    if not np.any(normal != 0):
        raise ValueError("normal must be nonzero")
    return box_size * (normal > 0).astype(np.float64)


def _box_layer(d_in, d_out, rng, box_size, target_max, return_planes=False):
    """One box-initialized layer: zero point uniform in [0, box_size]^d_in,
    unit normal from the sphere, gain set so the max over the box is
    ``target_max``; degenerate draws are resampled per unit.

    The bias is formed as ``-(W_row @ p)`` so evaluating the unit at its own
    zero point gives exactly 0.0 in floating point.
    """
    if d_in < 1 or d_out < 1:
        raise ValueError(f"layer dimensions must be positive, got ({d_in}, {d_out})")
    W = np.empty((d_out, d_in))
    b = np.empty(d_out)
    planes = []
    for i in range(d_out):
        while True:
            p = rng.uniform(0.0, box_size, size=d_in)
            raw = rng.standard_normal(d_in)
            norm = np.linalg.norm(raw)
            if norm == 0.0:
                continue
            normal = raw / norm
            corner = max_corner(normal, box_size)
            span = float((corner - p) @ normal)
            if span > DEGENERATE_TOL:
                break
        k = target_max / span
        W[i] = k * normal
        b[i] = -(W[i] @ p)
        if return_planes:
            planes.append(CutPlane(point=p, normal=normal, scale=k))
    if return_planes:
        return W, b, planes
    return W, b


def box_init_plain(d_in, d_out, rng, return_planes=False):
    """Box initialization of one plain layer fed from the unit box.

    Every unit is zero at an interior point and reaches exactly 1 at one
    corner of [0, 1]^d_in, so after ReLU the layer output lies in [0, 1]^d_out
    and the construction can be stacked.  With ``return_planes`` the sampled
    cut planes come back alongside ``(W, b)``.
    """
    return _box_layer(d_in, d_out, rng, box_size=1.0, target_max=1.0,
                      return_planes=return_planes)


def box_init_resnet(arch, rng, variant="stable"):
    """Box initialization of all hidden layers of a residual network.

    The first layer (no skip) is the plain construction.  For the ``stable``
    variant, layer ``l > 1`` assumes its input lies in [0, m_l]^width with
    ``m_l = (1 + 1/depth)^(l-1)`` and caps each unit at ``m_l / depth``, so
    the skip connection grows the box by at most the factor ``1 + 1/depth``
    per layer and every layer output stays inside [0, e]^width.  The
    ``legacy`` variant uses ``m_l = (1 + 1/(depth-1))^l`` with units capped at
    ``1 / (depth - 1)``.

    Returns the per-layer ``(W, b)`` list.
    """
    if variant not in ("stable", "legacy"):
        raise ValueError(f"variant must be 'stable' or 'legacy', got {variant!r}")
    d, w, L = arch.input_dim, arch.width, arch.depth
    layers = [box_init_plain(d, w, rng)]
    for layer in range(2, L + 1):
        if variant == "stable":
            m = (1.0 + 1.0 / L) ** (layer - 1)
            target = m / L
        else:
            m = (1.0 + 1.0 / (L - 1)) ** layer
            target = 1.0 / (L - 1)
        layers.append(_box_layer(w, w, rng, box_size=m, target_max=target))
    return layers


def he_uniform(d_in, d_out, rng):
    """He fan-in uniform layer: W ~ U[+-sqrt(6/d_in)], zero bias."""
    bound = np.sqrt(6.0 / d_in)
    return rng.uniform(-bound, bound, size=(d_out, d_in)), np.zeros(d_out)


def glorot_uniform(d_in, d_out, rng):
    """Glorot uniform layer: W ~ U[+-sqrt(6/(d_in+d_out))], zero bias."""
    bound = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, size=(d_out, d_in)), np.zeros(d_out)


def linear_coefficients(width, n_out, rng):
    """Glorot-uniform start for the trailing linear coefficients.

    Any full solve overwrites these; gradient-descent baselines need a
    non-degenerate starting point.
    """
    bound = np.sqrt(6.0 / (width + n_out))
    return rng.uniform(-bound, bound, size=(width, n_out))


def init_network(arch, scheme, rng_or_seed):
    """Initialize a full network under one of :data:`INIT_SCHEMES`.

    ``box`` applies the box construction appropriate to ``arch.kind``; ``he``
    and ``glorot`` apply the corresponding fan-in scheme to every hidden
    layer.  The trailing linear coefficients are Glorot-uniform for every
    scheme.  ``rng_or_seed`` may be a Generator or an integer seed.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"scheme must be one of {INIT_SCHEMES}, got {scheme!r}")
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) else make_rng(rng_or_seed)
    if scheme == "box":
        if arch.kind == "resnet":
            layers = box_init_resnet(arch, rng)
        else:
            layers = [box_init_plain(arch.layer_in_dim(l), arch.width, rng)
                      for l in range(1, arch.depth + 1)]
    else:
        fan = he_uniform if scheme == "he" else glorot_uniform
        layers = [fan(arch.layer_in_dim(l), arch.width, rng)
                  for l in range(1, arch.depth + 1)]
    linear = linear_coefficients(arch.width, arch.n_out, rng)
    return NetworkParams.from_layers(layers, linear)
