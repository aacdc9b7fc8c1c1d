import numpy as np
import pytest

from eyehand.correspondence import load_fmap, load_mark, propagate_mark, query_feature
from eyehand.errors import TooFewVisible
from eyehand.kinematics import forward_kinematics
from eyehand.pnp import build_correspondences, solve_pnp
from eyehand.render import load_mask_png, project_trajectory, render
from eyehand.se3 import rotation_geodesic_deg, translation_dist_m
from eyehand.synth import SynthSpec, generate_episode, make_arm, mark_point_3d


@pytest.fixture(scope="module")
def clean_episode(tmp_path_factory):
    """Zero-noise, zero-offset episode: every emitted file is exact."""
    spec = SynthSpec(
        arm="spatial_6dof",
        n_frames=20,
        track_noise_px=0.0,
        mark_offset=(0.0, 0.0, 0.0),
        mask_noise="none",
        seed=3,
        width=160,
        height=120,
        supersample=2,
    )
    episode, T_gt = generate_episode(spec, tmp_path_factory.mktemp("clean"))
    return spec, episode, T_gt


class TestArms:
    @pytest.mark.parametrize("arm,expected_dof", [
        ("single_link", 1), ("planar_3dof", 3), ("spatial_6dof", 6),
    ])
    def test_arm_construction(self, arm, expected_dof):
        model = make_arm(arm)
        assert model.n_actuated == expected_dof
        from eyehand.kinematics import JointState

        poses = forward_kinematics(model, JointState(np.zeros(expected_dof)))
        assert len(poses) == len(model.links)

    def test_triangle_budget(self):
        for arm in ("single_link", "planar_3dof", "spatial_6dof"):
            model = make_arm(arm)
            for link in model.links[1:]:  # base pedestal may be smaller
                assert 50 <= len(link.mesh.triangles) <= 500

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SynthSpec(arm="hexapod")
        with pytest.raises(ValueError):
            SynthSpec(mask_noise="blur_3")
        with pytest.raises(ValueError):
            SynthSpec(track_noise_px=-1.0)


class TestSelfConsistency:
    def test_masks_reproduce_renders_bit_exactly(self, clean_episode):
        spec, episode, T_gt = clean_episode
        for t in (0, 7, 19):
            bundle = render(
                episode.robot, episode.joints[t], T_gt, episode.intrinsics,
                ss=spec.supersample,
            )
            stored = load_mask_png(episode.mask_paths[t])
            quantized = np.floor(bundle.coverage * 255 + 0.5) / 255.0
            np.testing.assert_array_equal(stored, quantized)

    def test_track_equals_projected_mark_path(self, clean_episode):
        spec, episode, T_gt = clean_episode
        mark_pts = [
            mark_point_3d(episode.robot, q, spec.mark_offset) for q in episode.joints
        ]
        proj = project_trajectory(mark_pts, T_gt, episode.intrinsics)
        for t, (uv, vis) in enumerate(proj):
            assert episode.track.visible[t] == vis
            np.testing.assert_array_equal(episode.track.points[t], uv)

    def test_gt_extrinsic_round_trip(self, clean_episode):
        _, episode, T_gt = clean_episode
        np.testing.assert_allclose(
            episode.gt_extrinsic.matrix(), T_gt.matrix(), atol=1e-15
        )

    def test_fmap_argmax_is_projected_mark(self, clean_episode):
        spec, episode, T_gt = clean_episode
        ref = load_fmap(episode.reference_fmap_path)
        ref_mark = load_mark(episode.reference_mark_path)
        fq = query_feature(ref, ref_mark)
        frame0 = load_fmap(episode.fmap_path)
        mark, similarity, _ = propagate_mark(fq, frame0)
        assert similarity == pytest.approx(1.0)
        expected_u = round(episode.track.points[0][0])
        expected_v = round(episode.track.points[0][1])
        assert (mark.u, mark.v) == (expected_u, expected_v)

    def test_episode_loads_through_standard_loader(self, clean_episode):
        _, episode, _ = clean_episode
        assert episode.n_frames == 20
        assert episode.track is not None
        assert episode.mask_paths is not None
        assert episode.gt_extrinsic is not None


class TestEndToEndCoarse:
    def test_zero_noise_pnp_recovers_gt(self, clean_episode):
        _, episode, T_gt = clean_episode
        corr = build_correspondences(episode.track, episode.robot, episode.joints)
        T = solve_pnp(corr, episode.intrinsics)
        assert rotation_geodesic_deg(T.rotation, T_gt.rotation) < 0.1
        assert translation_dist_m(T.translation, T_gt.translation) < 0.001

    def test_short_episode_rejected_downstream(self, tmp_path):
        spec = SynthSpec(
            arm="single_link", n_frames=5, seed=0, width=96, height=72,
            mark_offset=(0.0, 0.0, 0.0),
        )
        episode, _ = generate_episode(spec, tmp_path / "short")
        with pytest.raises(TooFewVisible):
            build_correspondences(episode.track, episode.robot, episode.joints)


class TestMaskNoise:
    @pytest.mark.parametrize("noise", ["dilate_2", "erode_1", "speckle_0.05"])
    def test_corruption_changes_masks(self, tmp_path, noise):
        base = SynthSpec(
            arm="single_link", n_frames=10, seed=5, width=96, height=72,
            mask_noise="none",
        )
        noisy = SynthSpec(
            arm="single_link", n_frames=10, seed=5, width=96, height=72,
            mask_noise=noise,
        )
        ep_a, _ = generate_episode(base, tmp_path / "a")
        ep_b, _ = generate_episode(noisy, tmp_path / "b")
        a = load_mask_png(ep_a.mask_paths[0])
        b = load_mask_png(ep_b.mask_paths[0])
        assert not np.array_equal(a, b)
        assert b.min() >= 0.0 and b.max() <= 1.0

    def test_dilate_grows_erode_shrinks(self, tmp_path):
        specs = {
            noise: SynthSpec(
                arm="single_link", n_frames=10, seed=5, width=96, height=72,
                mask_noise=noise,
            )
            for noise in ("none", "dilate_2", "erode_2")
        }
        areas = {}
        for i, (noise, spec) in enumerate(specs.items()):
            ep, _ = generate_episode(spec, tmp_path / f"m{i}")
            areas[noise] = load_mask_png(ep.mask_paths[0]).sum()
        assert areas["dilate_2"] > areas["none"] > areas["erode_2"]


class TestNoisyTrack:
    def test_noise_moves_points(self, tmp_path):
        a, _ = generate_episode(
            SynthSpec(arm="single_link", n_frames=10, seed=6, width=96, height=72,
                      track_noise_px=0.0),
            tmp_path / "a",
        )
        b, _ = generate_episode(
            SynthSpec(arm="single_link", n_frames=10, seed=6, width=96, height=72,
                      track_noise_px=0.5),
            tmp_path / "b",
        )
        vis = a.track.visible & b.track.visible
        deltas = np.linalg.norm(a.track.points[vis] - b.track.points[vis], axis=1)
        assert deltas.max() > 0.05
        assert deltas.max() < 5.0  # 0.5 px sigma stays small

    def test_determinism(self, tmp_path):
        spec = SynthSpec(arm="single_link", n_frames=10, seed=7, width=96, height=72)
        a, _ = generate_episode(spec, tmp_path / "a")
        b, _ = generate_episode(spec, tmp_path / "b")
        np.testing.assert_array_equal(a.track.points, b.track.points)
        assert (a.root / "joints.csv").read_bytes() == (b.root / "joints.csv").read_bytes()
        assert (a.root / "gt_extrinsic.json").read_text().split('"provenance"')[0] == (
            b.root / "gt_extrinsic.json"
        ).read_text().split('"provenance"')[0]
