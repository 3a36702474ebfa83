import numpy as np
import pytest

from motionchat.errors import DegenerateRotationError, ValidationError
from motionchat.motion import (
    InteractiveClip,
    MotionClip,
    SkeletonSpec,
    assemble_clip,
    axis_angle_rotation,
    compute_velocities,
    detect_contacts,
    load_motion_json,
    rotation_to_6d,
    save_motion_json,
    sixd_to_rotation,
)

from conftest import random_rotations


class TestRotation6d:
    def test_identity(self):
        np.testing.assert_array_equal(rotation_to_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])

    def test_90_degrees_about_z(self):
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(rotation_to_6d(rot), [0, 1, 0, -1, 0, 0], atol=1e-15)

    def test_round_trip_1000_random(self):
        rots = random_rotations(np.random.default_rng(0), 1000)
        recovered = sixd_to_rotation(rotation_to_6d(rots))
        err = np.linalg.norm(recovered - rots, axis=(-2, -1))
        assert err.max() < 1e-9

    def test_rejects_non_rotation(self):
        with pytest.raises(ValidationError):
            rotation_to_6d(1.5 * np.eye(3))
        with pytest.raises(ValidationError):
            rotation_to_6d(np.diag([1.0, 1.0, -1.0]))  # det -1, still orthonormal

    def test_sixd_identity(self):
        np.testing.assert_allclose(sixd_to_rotation(np.array([1, 0, 0, 0, 1, 0.0])), np.eye(3))

    def test_sixd_scale_invariance(self):
        np.testing.assert_allclose(
            sixd_to_rotation(np.array([2, 0, 0, 0, 3, 0.0])), np.eye(3), atol=1e-15
        )

    def test_sixd_manual_gram_schmidt(self):
        # x=(1,0,0); y = (1,1,0) - proj = (0,1,0); z = x cross y
        out = sixd_to_rotation(np.array([1, 0, 0, 1, 1, 0.0]))
        np.testing.assert_allclose(out, np.eye(3), atol=1e-15)

    def test_gram_schmidt_output_is_rotation(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((500, 6))
        rots = sixd_to_rotation(v)
        gram = rots @ np.swapaxes(rots, -1, -2)
        assert np.abs(gram - np.eye(3)).max() < 1e-9
        assert np.abs(np.linalg.det(rots) - 1).max() < 1e-9

    def test_degenerate_inputs_raise(self):
        with pytest.raises(DegenerateRotationError):
            sixd_to_rotation(np.zeros(6))
        with pytest.raises(DegenerateRotationError):
            sixd_to_rotation(np.array([1, 0, 0, 2, 0, 0.0]))  # parallel columns


class TestVelocities:
    def test_constant_positions(self):
        pos = np.ones((5, 3, 3))
        np.testing.assert_array_equal(compute_velocities(pos, 30.0), np.zeros((5, 3, 3)))

    def test_linear_motion(self):
        fps = 30.0
        t = np.arange(6) / fps
        pos = np.zeros((6, 1, 3))
        pos[:, 0, 0] = t
        vel = compute_velocities(pos, fps)
        np.testing.assert_allclose(vel[:, 0, 0], 1.0)
        np.testing.assert_allclose(vel[:, 0, 1:], 0.0)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(2)
        pos = rng.standard_normal((7, 4, 3))
        fps = 25.0
        vel = compute_velocities(pos, fps)
        expected = np.zeros_like(pos)
        for t in range(6):
            expected[t] = (pos[t + 1] - pos[t]) * fps
        expected[6] = expected[5]
        np.testing.assert_allclose(vel, expected, atol=1e-12)

    def test_single_frame_zero(self):
        np.testing.assert_array_equal(compute_velocities(np.ones((1, 2, 3)), 30.0), np.zeros((1, 2, 3)))

    def test_euler_integration_recovers_linear_track(self):
        fps = 30.0
        pos = np.zeros((8, 1, 3))
        pos[:, 0, 1] = np.arange(8) * 0.5
        vel = compute_velocities(pos, fps)
        current = pos[0].copy()
        for t in range(7):
            current = current + vel[t] / fps
            np.testing.assert_allclose(current, pos[t + 1], atol=1e-12)


class TestContacts:
    def test_stationary_feet_at_ground(self, tiny_skeleton):
        pos = np.zeros((5, 4, 3))
        contacts = detect_contacts(pos, tiny_skeleton)
        np.testing.assert_array_equal(contacts, np.ones((5, 4)))

    def test_fast_high_joint_not_in_contact(self, tiny_skeleton):
        pos = np.zeros((5, 4, 3))
        pos[:, :, 1] = 1.0  # high
        pos[:, :, 0] = np.arange(5)[:, None] / 30.0  # 1 m/s
        contacts = detect_contacts(pos, tiny_skeleton)
        np.testing.assert_array_equal(contacts, np.zeros((5, 4)))

    def test_alternating_steps_match_hand_labels(self, tiny_skeleton):
        # joint 0 plants for frames 0-4, swings 5-9; joint 1 the opposite
        frames = 10
        pos = np.zeros((frames, 4, 3))
        pos[5:, 0, 1] = 0.3   # joint 0 lifts in the second half
        pos[:5, 1, 1] = 0.3   # joint 1 lifts in the first half
        contacts = detect_contacts(pos, tiny_skeleton)
        expected0 = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0]  # frame 4 moves (forward diff)
        expected1 = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]  # frame 4 still high, frame 5 planted
        np.testing.assert_array_equal(contacts[:, 0], expected0)
        np.testing.assert_array_equal(contacts[:, 1], expected1)
        np.testing.assert_array_equal(contacts[:, 2:], np.ones((frames, 2)))

    def test_needs_two_frames(self, tiny_skeleton):
        with pytest.raises(ValidationError):
            detect_contacts(np.zeros((1, 4, 3)), tiny_skeleton)


class TestAssemble:
    def test_frame_width_small(self):
        sk = SkeletonSpec(num_joints=2, fps=30)
        clip = assemble_clip(np.zeros((1, 2, 3)), np.tile(np.eye(3), (1, 2, 1, 1)), sk)
        assert clip.features.shape == (1, 28)  # 12*2+4

    def test_frame_width_default_skeleton(self):
        sk = SkeletonSpec()
        assert sk.num_joints == 22
        clip = assemble_clip(np.zeros((3, 22, 3)), np.tile(np.eye(3), (3, 22, 1, 1)), sk)
        assert clip.features.shape[1] == 268  # 12*22+4

    def test_positions_projection_identity(self, tiny_skeleton):
        rng = np.random.default_rng(3)
        pos = rng.standard_normal((6, 4, 3))
        rots = random_rotations(rng, 6 * 4).reshape(6, 4, 3, 3)
        clip = assemble_clip(pos, rots, tiny_skeleton)
        np.testing.assert_array_equal(clip.positions, pos)

    def test_feature_order(self, tiny_skeleton):
        rng = np.random.default_rng(4)
        pos = rng.standard_normal((5, 4, 3))
        rots = random_rotations(rng, 5 * 4).reshape(5, 4, 3, 3)
        clip = assemble_clip(pos, rots, tiny_skeleton)
        np.testing.assert_array_equal(clip.features[:, :12], pos.reshape(5, -1))
        np.testing.assert_allclose(
            clip.features[:, 12:24], compute_velocities(pos, 30.0).reshape(5, -1)
        )
        np.testing.assert_allclose(clip.features[:, 24:48], rotation_to_6d(rots).reshape(5, -1))
        assert np.isin(clip.features[:, -4:], (0.0, 1.0)).all()

    def test_shape_mismatch(self, tiny_skeleton):
        with pytest.raises(ValidationError):
            assemble_clip(np.zeros((2, 3, 3)), np.tile(np.eye(3), (2, 3, 1, 1)), tiny_skeleton)


class TestSkeletonSpec:
    def test_contact_joint_validation(self):
        with pytest.raises(ValidationError):
            SkeletonSpec(num_joints=5, contact_joint_indices=(0, 1, 2, 5))
        with pytest.raises(ValidationError):
            SkeletonSpec(num_joints=5, contact_joint_indices=(0, 1, 2, 2))
        with pytest.raises(ValidationError):
            SkeletonSpec(num_joints=0)
        with pytest.raises(ValidationError):
            SkeletonSpec(fps=0)

    def test_tiny_skeleton_default_contacts_wrap(self):
        sk = SkeletonSpec(num_joints=2)
        assert all(i < 2 for i in sk.contact_joint_indices)


class TestClipTypes:
    def test_interactive_clip_alignment(self, tiny_skeleton):
        a = MotionClip(np.zeros((4, tiny_skeleton.frame_width)), tiny_skeleton)
        b = MotionClip(np.zeros((5, tiny_skeleton.frame_width)), tiny_skeleton)
        with pytest.raises(ValidationError):
            InteractiveClip(a, b)

    def test_contacts_must_be_binary(self, tiny_skeleton):
        feats = np.zeros((2, tiny_skeleton.frame_width))
        feats[0, -1] = 0.5
        with pytest.raises(ValidationError):
            MotionClip(feats, tiny_skeleton)

    def test_motion_frame_view(self, tiny_skeleton):
        rng = np.random.default_rng(5)
        pos = rng.standard_normal((3, 4, 3))
        rots = random_rotations(rng, 12).reshape(3, 4, 3, 3)
        clip = assemble_clip(pos, rots, tiny_skeleton)
        frame = clip.frame(1)
        assert frame.feature_vector.shape == (tiny_skeleton.frame_width,)
        np.testing.assert_array_equal(frame.feature_vector, clip.features[1])


class TestMotionJson:
    def test_round_trip_interactive(self, tiny_skeleton, tmp_path):
        rng = np.random.default_rng(6)
        clips = []
        for _ in range(2):
            pos = rng.standard_normal((4, 4, 3))
            rots = random_rotations(rng, 16).reshape(4, 4, 3, 3)
            clips.append(assemble_clip(pos, rots, tiny_skeleton))
        clip = InteractiveClip(clips[0], clips[1])
        path = tmp_path / "pair.motion.json"
        save_motion_json(path, clip)
        loaded = load_motion_json(path)
        assert isinstance(loaded, InteractiveClip)
        # 9 significant digits of precision survive the trip
        np.testing.assert_allclose(loaded.person_a.features, clip.person_a.features, rtol=1e-8)

    def test_round_trip_single(self, tiny_skeleton, tmp_path):
        clip = MotionClip(np.zeros((2, tiny_skeleton.frame_width)), tiny_skeleton)
        path = tmp_path / "one.motion.json"
        save_motion_json(path, clip)
        loaded = load_motion_json(path)
        assert isinstance(loaded, MotionClip)
        assert loaded.num_frames == 2

    def test_missing_key_raises(self, tmp_path):
        path = tmp_path / "bad.motion.json"
        path.write_text('{"fps": 30}')
        with pytest.raises(ValidationError):
            load_motion_json(path)


def test_axis_angle_zero_axis_rejected():
    with pytest.raises(ValidationError):
        axis_angle_rotation(np.zeros(3), 1.0)
