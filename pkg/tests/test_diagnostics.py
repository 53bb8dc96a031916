"""Geometry diagnostics: box image traces, eigenvalue ratios, collapse score.

Eigenvalue-ratio cases are built from point sets whose covariance spectra are
known in closed form; the trace tests replay the layers with a plain loop.
"""

import csv

import numpy as np
import pytest

from adabasis import backends
from adabasis.diagnostics import (
    COLLAPSE_THRESHOLD,
    ImageTrace,
    collapse_score,
    eig_ratio_profile,
    export_basis,
    export_cutplanes,
    propagate_box,
    unit_ranges,
)
from adabasis.initializers import init_network
from adabasis.linalg import make_rng
from adabasis.network import ArchitectureSpec, NetworkParams, forward_basis


def manual_stages(params, arch, X, start_layer=1, force_skip=False):
    layers = params.layers()[start_layer - 1:]
    cur = X
    out = [X]
    for off, (W, b) in enumerate(layers):
        l = start_layer + off
        S = np.maximum(cur @ W.T + b, 0.0) if arch.activation == "relu" else np.tanh(cur @ W.T + b)
        skip = arch.kind == "resnet" and (l >= 2 or force_skip)
        cur = S + cur if skip else S
        out.append(cur)
    return out


class TestPropagateBox:
    def test_stage_zero_is_sample_cloud(self):
        arch = ArchitectureSpec("plain", "relu", 3, 4, 2)
        params = init_network(arch, "box", 1)
        trace = propagate_box(params, arch, n_samples=50, seed=7)
        expect = make_rng(7).uniform(0.0, 1.0, size=(50, 3))
        assert np.array_equal(trace.stages[0], expect)
        assert trace.n_stages == 3 and trace.mode == "input"

    @pytest.mark.parametrize("kind", ["plain", "resnet"])
    @pytest.mark.parametrize("act", ["relu", "tanh"])
    def test_input_mode_matches_manual_loop(self, kind, act):
        arch = ArchitectureSpec(kind, act, 2, 5, 3)
        params = init_network(arch, "he", 2)
        trace = propagate_box(params, arch, n_samples=40, seed=3)
        expect = manual_stages(params, arch, trace.stages[0])
        assert len(expect) == trace.n_stages
        for got, ref in zip(trace.stages, expect):
            assert np.allclose(got, ref, atol=1e-13)

    def test_hidden_mode_starts_at_second_layer(self):
        arch = ArchitectureSpec("plain", "relu", 2, 4, 3)
        params = init_network(arch, "he", 4)
        trace = propagate_box(params, arch, n_samples=30, seed=5, mode="hidden")
        assert trace.n_stages == 3
        X = trace.stages[0]
        assert X.shape == (30, 4)
        expect = manual_stages(params, arch, X, start_layer=2)
        for got, ref in zip(trace.stages, expect):
            assert np.allclose(got, ref, atol=1e-13)

    def test_hidden_mode_resnet_skips_every_traced_layer(self):
        # Feeding the width box directly into layer 2 makes the first traced
        # layer a residual step too.
        arch = ArchitectureSpec("resnet", "relu", 4, 4, 3)
        params = init_network(arch, "box", 6)
        trace = propagate_box(params, arch, n_samples=30, seed=6, mode="hidden")
        expect = manual_stages(params, arch, trace.stages[0],
                               start_layer=2, force_skip=True)
        for got, ref in zip(trace.stages, expect):
            assert np.allclose(got, ref, atol=1e-13)

    def test_hidden_mode_depth_one_has_no_layers(self):
        arch = ArchitectureSpec("resnet", "relu", 2, 4, 1)
        params = init_network(arch, "box", 0)
        trace = propagate_box(params, arch, n_samples=20, mode="hidden")
        assert trace.n_stages == 1

    def test_mins_maxs(self):
        arch = ArchitectureSpec("plain", "relu", 2, 3, 1)
        params = init_network(arch, "box", 1)
        trace = propagate_box(params, arch, n_samples=25, seed=1)
        assert trace.mins()[0].shape == (2,)
        assert trace.maxs()[1].shape == (3,)
        assert (trace.maxs()[1] >= trace.mins()[1]).all()

    def test_validation(self):
        arch = ArchitectureSpec("plain", "relu", 2, 3, 1)
        params = init_network(arch, "box", 1)
        with pytest.raises(ValueError):
            propagate_box(params, arch, mode="output")
        with pytest.raises(ValueError):
            propagate_box(params, arch, n_samples=1)


class TestEigRatioProfile:
    def test_rank_one_cloud(self):
        t = make_rng(0).standard_normal(200)
        stage = t[:, None] * np.array([1.0, 2.0]) / np.sqrt(5.0)
        prof = eig_ratio_profile(ImageTrace(mode="input", stages=[stage]))
        assert not prof.degenerate[0]
        assert prof.ratios[0, 0] < 1e-12
        assert prof.ratios[0, 1] < 1e-12

    def test_isotropic_cross(self):
        stage = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        prof = eig_ratio_profile(ImageTrace(mode="input", stages=[stage]))
        assert np.allclose(prof.ratios[0], [1.0, 1.0], atol=1e-14)

    def test_known_anisotropy(self):
        # Covariance diag(4, 1) up to scale: ratio must be 1/4.
        rng = make_rng(1)
        a = np.array([2.0, -2.0, 0.0, 0.0])
        b = np.array([0.0, 0.0, 1.0, -1.0])
        stage = np.column_stack([a, b])
        prof = eig_ratio_profile(ImageTrace(mode="input", stages=[stage]))
        assert prof.ratios[0, 0] == pytest.approx(0.25, abs=1e-14)

    def test_constant_stage_degenerate(self):
        # 0.5 averages exactly, so the covariance is exactly zero.
        stage = np.full((50, 3), 0.5)
        prof = eig_ratio_profile(ImageTrace(mode="input", stages=[stage]))
        assert prof.degenerate[0]
        assert np.array_equal(prof.ratios[0], [0.0, 0.0])

    def test_one_dimensional_stage_is_nan(self):
        stage = np.linspace(0, 1, 10)[:, None]
        prof = eig_ratio_profile(ImageTrace(mode="input", stages=[stage]))
        assert np.isnan(prof.ratios[0]).all()
        assert not prof.degenerate[0]

    def test_deep_fan_in_network_collapses(self):
        # Deep feed-forward stacks squeeze the box image toward a line: the
        # second-eigenvalue ratio drops by orders of magnitude over depth.
        arch = ArchitectureSpec("plain", "relu", 2, 8, 32)
        params = init_network(arch, "he", 3)
        trace = propagate_box(params, arch, n_samples=2000, seed=0)
        prof = eig_ratio_profile(trace)
        assert prof.degenerate[-1] or prof.ratios[-1, 0] < 1e-4
        assert prof.ratios[1, 0] > 1e-2


class TestCollapseScore:
    def test_dead_network_scores_zero(self):
        arch = ArchitectureSpec("plain", "relu", 1, 3, 1)
        params = NetworkParams.from_layers(
            [(np.ones((3, 1)), np.full(3, -5.0))], np.ones((3, 1)))
        assert collapse_score(params, arch) == 0.0
        assert collapse_score(params, arch) < COLLAPSE_THRESHOLD

    def test_box_network_fully_alive(self):
        arch = ArchitectureSpec("plain", "relu", 1, 6, 1)
        params = init_network(arch, "box", 2)
        # 1-D probe grids include both endpoints, so each unit attains its
        # corner value 1 and its zero side.
        ranges = unit_ranges(params, arch)
        assert np.abs(ranges - 1.0).max() < 1e-12
        assert collapse_score(params, arch) == pytest.approx(1.0, abs=1e-12)

    def test_shifted_constant_direction(self):
        # Range measures variation, not magnitude: an always-on affine unit
        # still counts as alive.
        arch = ArchitectureSpec("plain", "relu", 1, 1, 1)
        params = NetworkParams.from_layers(
            [(np.array([[1.0]]), np.array([2.0]))], np.ones((1, 1)))
        assert collapse_score(params, arch) == pytest.approx(1.0, abs=1e-12)

    def test_custom_grid(self):
        arch = ArchitectureSpec("plain", "relu", 2, 4, 1)
        params = init_network(arch, "box", 3)
        grid = make_rng(5).uniform(0, 1, (64, 2))
        s = collapse_score(params, arch, grid=grid)
        assert 0.0 < s <= 1.0 + 1e-12
        with pytest.raises(ValueError):
            unit_ranges(params, arch, grid=np.ones((1, 2)))


class TestExports:
    def test_basis_csv_roundtrip(self, tmp_path):
        arch = ArchitectureSpec("plain", "relu", 2, 3, 2)
        params = init_network(arch, "box", 4)
        grid = make_rng(6).uniform(0, 1, (5, 2))
        path = tmp_path / "basis.csv"
        export_basis(params, arch, grid, path)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["x_1", "x_2", "phi_1", "phi_2", "phi_3"]
        ev = forward_basis(params, arch, grid)
        got = np.array([[float(v) for v in row] for row in rows[1:]])
        assert np.array_equal(got[:, :2], grid)
        assert np.array_equal(got[:, 2:], ev.values)

    def test_basis_grid_validation(self, tmp_path):
        arch = ArchitectureSpec("plain", "relu", 2, 3, 1)
        params = init_network(arch, "box", 4)
        with pytest.raises(ValueError):
            export_basis(params, arch, np.ones((5, 3)), tmp_path / "x.csv")

    def test_cutplane_csv(self, tmp_path):
        arch = ArchitectureSpec("plain", "relu", 2, 4, 1)
        params = init_network(arch, "box", 7)
        path = tmp_path / "planes.csv"
        export_cutplanes(params, arch, path)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["n_1", "n_2", "offset"]
        got = np.array([[float(v) for v in row] for row in rows[1:]])
        assert np.array_equal(got[:, :2], params.first)
        assert np.array_equal(got[:, 2], params.biases[0])

    def test_cutplane_rejects_deep(self, tmp_path):
        arch = ArchitectureSpec("plain", "relu", 2, 4, 2)
        params = init_network(arch, "box", 7)
        with pytest.raises(ValueError):
            export_cutplanes(params, arch, tmp_path / "planes.csv")


class TestBackendConsistency:
    def test_trace_same_for_both_backends(self):
        if "compiled" not in backends.available_backends():
            pytest.skip("compiled backend not built")
        arch = ArchitectureSpec("resnet", "relu", 3, 6, 4)
        params = init_network(arch, "box", 8)
        X = make_rng(2).uniform(0, 1, (100, 3))
        ref = backends.get_backend("reference")
        comp = backends.get_backend("compiled")
        out_r = ref.forward(arch.kind_code, arch.act_code, params.first,
                            params.rest, params.biases, X, False, True)
        out_c = comp.forward(arch.kind_code, arch.act_code, params.first,
                             params.rest, params.biases, X, False, True)
        assert np.allclose(out_r[2], out_c[2], atol=1e-13)
