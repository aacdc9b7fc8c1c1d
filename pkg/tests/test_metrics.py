import numpy as np
import pytest

from eyehand.kinematics import JointState
from eyehand.metrics import (
    GridCellResult,
    MetricConfig,
    NoiseGridSpec,
    _cell_verdict,
    add_metric,
    auc_metric,
    convergence_grid,
    format_grid_table,
    point_distances,
    sample_noise,
    save_grid_csv,
)
from eyehand.refine import RefineConfig
from eyehand.se3 import Extrinsic, PoseTangent, retract, so3_exp
from eyehand.synth import make_arm


def brute_force_auc(distances, max_threshold, bins):
    """Literal double loop over bins and samples; the oracle for auc_metric."""
    total = 0.0
    for i in range(bins):
        threshold = i * (max_threshold / bins)
        passed = 0
        for d in distances:
            if d < threshold:
                passed += 1
        total += passed / len(distances)
    return total / bins


def small_config(points=None, **kwargs):
    if points is None:
        points = np.array([[0.1, 0, 0], [0, 0.2, 0], [0, 0, 0.3], [0.1, 0.1, 0.1]])
    return MetricConfig(eval_points=points, **kwargs)


class TestAddMetric:
    def test_zero_for_identical(self):
        cfg = small_config()
        T = retract(Extrinsic.identity(), PoseTangent([0.3, 0.1, -0.2], [0.5, 0, 0]))
        assert add_metric(T, T, cfg) == 0.0

    def test_pure_translation_offset(self):
        cfg = small_config()
        T_gt = Extrinsic.identity()
        T = Extrinsic(np.eye(3), [0.01, 0.0, 0.0])
        assert add_metric(T, T_gt, cfg) == pytest.approx(0.01)

    def test_matches_per_point_expansion(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.5, 0.5, (5, 3))
        cfg = small_config(points=pts)
        Ta = retract(Extrinsic.identity(), PoseTangent(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)))
        Tb = retract(Extrinsic.identity(), PoseTangent(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)))
        total = 0.0
        for p in pts:
            a = Ta.rotation @ p + Ta.translation
            b = Tb.rotation @ p + Tb.translation
            total += np.sqrt(((a - b) ** 2).sum())
        assert add_metric(Ta, Tb, cfg) == pytest.approx(total / len(pts), abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        cfg = small_config()
        Ta = retract(Extrinsic.identity(), PoseTangent(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)))
        Tb = retract(Extrinsic.identity(), PoseTangent(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)))
        assert add_metric(Ta, Tb, cfg) == pytest.approx(add_metric(Tb, Ta, cfg))

    def test_zero_iff_agree_on_points(self):
        cfg = small_config()
        T = retract(Extrinsic.identity(), PoseTangent([0, 0, 1e-3], [0, 0, 0]))
        assert add_metric(T, Extrinsic.identity(), cfg) > 0

    def test_default_points_from_robot(self):
        model = make_arm("planar_3dof")
        cfg = MetricConfig.for_robot(model, max_points=100)
        assert 1 <= len(cfg.eval_points) <= 100


class TestAucMetric:
    def test_all_zero_distances_anchor(self):
        cfg = small_config()  # T=100, max 0.10
        assert auc_metric(np.zeros(37), cfg) == pytest.approx(0.99)

    def test_all_beyond_threshold(self):
        cfg = small_config()
        assert auc_metric(np.full(10, 0.2), cfg) == 0.0

    def test_single_distance_5mm(self):
        cfg = small_config()
        got = auc_metric([0.005], cfg)
        assert got == pytest.approx(brute_force_auc([0.005], 0.10, 100))
        assert got == pytest.approx(0.94)

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = rng.integers(1, 30)
            d = rng.uniform(0, 0.15, n)
            cfg = small_config(
                auc_max_threshold=float(rng.uniform(0.05, 0.2)),
                auc_bins=int(rng.integers(1, 150)),
            )
            want = brute_force_auc(d, cfg.auc_max_threshold, cfg.auc_bins)
            assert auc_metric(d, cfg) == pytest.approx(want, abs=1e-12)

    def test_monotone_in_distances(self):
        rng = np.random.default_rng(3)
        cfg = small_config()
        d = rng.uniform(0, 0.1, 15)
        base = auc_metric(d, cfg)
        d2 = d.copy()
        d2[4] += 0.01
        assert auc_metric(d2, cfg) <= base

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            auc_metric([-0.01], small_config())

    def test_point_distances_shape(self):
        cfg = small_config()
        T = Extrinsic(np.eye(3), [0.02, 0, 0])
        d = point_distances(T, Extrinsic.identity(), cfg)
        np.testing.assert_allclose(d, 0.02)


class TestSampleNoise:
    def test_zero_ranges(self):
        tangent = sample_noise((0, 0), (0, 0), np.random.default_rng(0))
        np.testing.assert_array_equal(tangent.omega, 0.0)
        np.testing.assert_array_equal(tangent.nu, 0.0)

    def test_degenerate_rotation_range(self):
        tangent = sample_noise((0, 0), (5, 5), np.random.default_rng(1))
        assert np.degrees(np.linalg.norm(tangent.omega)) == pytest.approx(5.0)

    def test_magnitude_distribution(self):
        rng = np.random.default_rng(2)
        mags = [
            100 * np.linalg.norm(sample_noise((1, 2), (0, 0), rng).nu)
            for _ in range(10_000)
        ]
        mags = np.asarray(mags)
        assert mags.min() >= 1.0 and mags.max() <= 2.0
        assert mags.mean() == pytest.approx(1.5, abs=0.02)

    def test_direction_uniformity_chi_square(self):
        # Octant counts of 10^4 directions; chi-square at 95% for 7 dof.
        rng = np.random.default_rng(3)
        dirs = np.array(
            [sample_noise((1, 1), (0, 0), rng).nu for _ in range(10_000)]
        )
        octant = (
            (dirs[:, 0] > 0).astype(int) * 4
            + (dirs[:, 1] > 0).astype(int) * 2
            + (dirs[:, 2] > 0).astype(int)
        )
        counts = np.bincount(octant, minlength=8)
        expected = len(dirs) / 8
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 14.07

    def test_invalid_ranges(self):
        with pytest.raises(ValueError):
            sample_noise((2, 1), (0, 0), np.random.default_rng(0))


class TestVerdictRules:
    def test_strict_green(self):
        assert _cell_verdict(0.5, 0.05, (1, 5), (0.1, 2.5), 3.0, 1.3) == "converged"

    def test_contraction_green(self):
        # Paper-style green cell: strong contraction, inside the cell range.
        assert _cell_verdict(0.6, 0.4, (1, 5), (0.1, 2.5), 3.0, 1.3) == "converged"

    def test_failed_when_noise_not_removed(self):
        # Paper-style red cell: rotation error exceeds the injected noise.
        assert _cell_verdict(24.1, 28.5, (20, 25), (10, 15), 22.5, 12.5) == "failed"
        # Position got worse even though rotation improved.
        assert _cell_verdict(14.0, 14.0, (20, 25), (10, 15), 22.5, 12.5) == "failed"

    def test_partial_between(self):
        # Halved the noise but did not contract strongly: undecided.
        assert _cell_verdict(7.4, 6.0, (10, 15), (5, 7.5), 12.5, 6.25) == "partial"

    def test_zero_noise_cell_strict_green(self):
        assert _cell_verdict(0.01, 0.005, (0, 0), (0, 0), 0.0, 0.0) == "converged"


class TestNoiseGridSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseGridSpec(pos_ranges=((2, 1),), rot_ranges=((0, 1),))
        with pytest.raises(ValueError):
            NoiseGridSpec(pos_ranges=((0, 1),), rot_ranges=((0, 1),), n_poses=0)

    def test_degenerate_point_range_allowed(self):
        spec = NoiseGridSpec(pos_ranges=((0, 0),), rot_ranges=((0, 0),))
        assert spec.pos_ranges == ((0.0, 0.0),)


class TestGridHarness:
    @pytest.mark.slow
    def test_zero_noise_cell_and_determinism(self, tmp_path):
        from eyehand.se3 import Intrinsics
        from eyehand.kinematics import posed_meshes

        model = make_arm("single_link")
        rng = np.random.default_rng(4)
        joints = [
            JointState([q]) for q in 0.8 * np.sin(np.linspace(0, 2 * np.pi, 10))
        ]
        fx = 48 / np.tan(np.radians(30))
        K = Intrinsics(fx=fx, fy=fx, cx=47.5, cy=35.5, width=96, height=72)

        class Ep:
            def __init__(self):
                self.joints = joints
                self.intrinsics = K

        spec = NoiseGridSpec(
            pos_ranges=((0.0, 0.0),), rot_ranges=((0.0, 0.0),), n_poses=1,
            m_samples=1, seed=0,
        )
        cfg = RefineConfig(max_iters=210, frames=(4,), supersample=2)
        rows = convergence_grid(model, Ep(), spec, cfg)
        cell = rows[0][0]
        assert cell.verdict == "converged"
        assert cell.mean_rot_err < 0.05
        assert cell.mean_pos_err < 0.05

        rows2 = convergence_grid(model, Ep(), spec, cfg)
        assert rows2[0][0].mean_rot_err == cell.mean_rot_err
        assert rows2[0][0].mean_pos_err == cell.mean_pos_err

        save_grid_csv(rows, tmp_path / "grid.csv")
        save_grid_csv(rows2, tmp_path / "grid2.csv")
        assert (tmp_path / "grid.csv").read_bytes() == (tmp_path / "grid2.csv").read_bytes()


class TestGridReports:
    def _rows(self):
        return [
            [
                GridCellResult(
                    rot_range=(1.0, 5.0),
                    pos_range=(0.1, 2.5),
                    mean_rot_err=0.6,
                    std_rot_err=0.4,
                    mean_pos_err=0.4,
                    std_pos_err=0.3,
                    verdict="converged",
                    injected_rot_mean=3.0,
                    injected_pos_mean=1.3,
                ),
                GridCellResult(
                    rot_range=(1.0, 5.0),
                    pos_range=(10.0, 15.0),
                    mean_rot_err=10.4,
                    std_rot_err=2.7,
                    mean_pos_err=16.2,
                    std_pos_err=7.1,
                    verdict="failed",
                    injected_rot_mean=3.0,
                    injected_pos_mean=12.5,
                ),
            ]
        ]

    def test_csv_layout(self, tmp_path):
        save_grid_csv(self._rows(), tmp_path / "grid.csv")
        lines = (tmp_path / "grid.csv").read_text().splitlines()
        assert lines[0] == "rot_lo,rot_hi,pos_lo,pos_hi,mean_rot,std_rot,mean_pos,std_pos,verdict"
        assert lines[1].startswith("1,5,0.1,2.5,0.6000,0.4000,0.4000,0.3000,converged")
        assert len(lines) == 3

    def test_table_format(self):
        table = format_grid_table(self._rows())
        assert "0.6±0.4°" in table
        assert "[C]" in table and "[F]" in table
        assert "rot 1-5°" in table
