"""Basis-health diagnostics.

Tools to see whether a trained or freshly initialized basis is alive:
propagate a sampled box through the hidden layers and watch its image,
profile covariance eigenvalue ratios per layer (a collapsing image drives
lambda_2 / lambda_1 to zero), score dead bases on a grid, and export basis
values and first-layer cut planes for plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import backends
from .linalg import covariance, make_rng, sym_eig_desc
from .network import forward_basis

__all__ = [
    "ImageTrace",
    "EigProfile",
    "propagate_box",
    "eig_ratio_profile",
    "unit_ranges",
    "collapse_score",
    "COLLAPSE_THRESHOLD",
    "export_basis",
    "export_cutplanes",
]

# A basis whose best unit moves less than this across the probe grid is
# considered collapsed to constants.
COLLAPSE_THRESHOLD = 1e-6


@dataclass
class ImageTrace:
    """Sampled image of a box as it passes through the hidden layers.

    ``stages[0]`` holds the raw samples; ``stages[k]`` the output of the k-th
    traced layer.  In ``input`` mode the box is [0,1]^input_dim and every
    hidden layer is traced; in ``hidden`` mode the box is [0,1]^width and the
    trace starts at layer 2 (for residual networks all traced layers then
    carry skips).
    """

    mode: str
    stages: list

    @property
    def n_stages(self):
        return len(self.stages)

    def mins(self):
        return [np.min(s, axis=0) for s in self.stages]

    def maxs(self):
        return [np.max(s, axis=0) for s in self.stages]


def propagate_box(params, arch, n_samples=10000, seed=0, mode="input"):
    """Push uniform box samples through the hidden layers; returns an
    :class:`ImageTrace`.  ``n_samples`` defaults to 10^4."""
    if mode not in ("input", "hidden"):
        raise ValueError(f"mode must be 'input' or 'hidden', got {mode!r}")
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2, got {n_samples}")
    rng = make_rng(seed)
    kernel = backends.active
    if mode == "input":
        X = rng.uniform(0.0, 1.0, size=(n_samples, arch.input_dim))
        _, _, H, _ = kernel.forward(
            arch.kind_code, arch.act_code,
            params.first, params.rest, params.biases,
            X, False, True,
        )
        stages = [X] + [H[i] for i in range(H.shape[0])]
    else:
        X = rng.uniform(0.0, 1.0, size=(n_samples, arch.width))
        if arch.depth < 2:
            stages = [X]
        else:
            kind = (
                backends.reference.KIND_RESNET_ALL
                if arch.kind == "resnet"
                else backends.reference.KIND_PLAIN
            )
            _, _, H, _ = kernel.forward(
                kind, arch.act_code,
                params.rest[0], params.rest[1:], params.biases[1:],
                X, False, True,
            )
            stages = [X] + [H[i] for i in range(H.shape[0])]
    return ImageTrace(mode=mode, stages=stages)


@dataclass
class EigProfile:
    """Covariance eigenvalue ratios per trace stage.

    ``ratios[k] = (lambda_2 / lambda_1, lambda_min / lambda_1)`` of the
    sample covariance of stage k, clipped to [0, 1]; ``degenerate[k]`` marks
    stages whose leading eigenvalue is zero (ratios left at 0).  Stages of
    dimension 1 have no ratio and carry NaN.
    """

    ratios: np.ndarray
    degenerate: np.ndarray


def eig_ratio_profile(trace):
    """Eigenvalue-ratio profile of an :class:`ImageTrace`."""
    n = trace.n_stages
    ratios = np.zeros((n, 2))
    degenerate = np.zeros(n, dtype=bool)
    for k, stage in enumerate(trace.stages):
        if stage.shape[1] < 2:
            ratios[k] = (np.nan, np.nan)
            continue
        vals = sym_eig_desc(covariance(stage))
        lam1 = vals[0]
        if lam1 <= 0.0:
            degenerate[k] = True
            continue
        ratios[k, 0] = min(max(vals[1] / lam1, 0.0), 1.0)
        ratios[k, 1] = min(max(vals[-1] / lam1, 0.0), 1.0)
    return EigProfile(ratios=ratios, degenerate=degenerate)


def _default_grid(input_dim, n_grid, seed):
    if input_dim == 1:
        return np.linspace(0.0, 1.0, n_grid)[:, None]
    return make_rng(seed).uniform(0.0, 1.0, size=(n_grid, input_dim))


def unit_ranges(params, arch, grid=None, n_grid=256, seed=0):
    """Output range (max - min) of every basis unit over a probe grid in the
    unit box."""
    if grid is None:
        grid = _default_grid(arch.input_dim, n_grid, seed)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 2:
        raise ValueError("grid must be (N, input_dim) with N >= 2")
    ev = forward_basis(params, arch, grid, need_jacobian=False, keep_cache=False)
    return ev.values.max(axis=0) - ev.values.min(axis=0)


def collapse_score(params, arch, grid=None, n_grid=256, seed=0):
    """Largest unit range over the probe grid.

    A score below :data:`COLLAPSE_THRESHOLD` means every basis function is
    numerically constant, so the least-squares solve can at best fit a
    constant.
    """
    return float(np.max(unit_ranges(params, arch, grid, n_grid, seed)))


def _fmt(x):
    return "%.17g" % float(x)


def export_basis(params, arch, grid, path):
    """Write basis values on a grid as CSV: x_1..x_d, phi_1..phi_w."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[1] != arch.input_dim:
        raise ValueError(f"grid must be (N, {arch.input_dim}), got {grid.shape}")
    ev = forward_basis(params, arch, grid, need_jacobian=False, keep_cache=False)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            [f"x_{i + 1}" for i in range(arch.input_dim)]
            + [f"phi_{i + 1}" for i in range(arch.width)]
        )
        for j in range(grid.shape[0]):
            writer.writerow([_fmt(v) for v in grid[j]] + [_fmt(v) for v in ev.values[j]])


def export_cutplanes(params, arch, path):
    """Write first-layer unit affine rows as CSV: n_1..n_d, offset.

    Only meaningful for depth-1 networks, where each unit is a single ReLU
    cut; deeper networks are rejected.
    """
    if arch.depth != 1:
        raise ValueError(f"cut-plane export requires depth 1, got depth {arch.depth}")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"n_{i + 1}" for i in range(arch.input_dim)] + ["offset"])
        for i in range(arch.width):
            writer.writerow([_fmt(v) for v in params.first[i]] + [_fmt(params.biases[0, i])])
