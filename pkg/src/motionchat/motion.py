"""Two-person motion representation.

Each frame of a motion track is a flat feature vector laid out as

    [ global joint positions (3*J) | global joint velocities (3*J) |
      local rotations in 6D form (6*J) | ground contact flags (4) ]

for a skeleton with J joints, i.e. ``12*J + 4`` floats per frame.
An interactive clip is two time-aligned tracks of equal length.
"""

from dataclasses import dataclass
import json

import numpy as np

from .errors import DegenerateRotationError, ValidationError

# Default contact joints (left heel, left toe, right heel, right toe) for
# the 22-joint body skeleton.
_DEFAULT_CONTACT_JOINTS = (7, 10, 8, 11)


def default_contact_joints(num_joints: int) -> tuple[int, int, int, int]:
    if num_joints >= 12:
        return _DEFAULT_CONTACT_JOINTS
    # Tiny skeletons exist only in tests; just take the first joints,
    # wrapping when there are fewer than four.
    return tuple(i % num_joints for i in range(4))


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint count, the four contact joints, and the capture rate."""

    num_joints: int = 22
    contact_joint_indices: tuple[int, int, int, int] | None = None
    fps: float = 30.0

    def __post_init__(self):
        if self.num_joints < 1:
            raise ValidationError(f"num_joints must be positive, got {self.num_joints}")
        if self.fps <= 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        if self.contact_joint_indices is None:
            object.__setattr__(
                self, "contact_joint_indices", default_contact_joints(self.num_joints)
            )
        idx = tuple(int(i) for i in self.contact_joint_indices)
        if len(idx) != 4:
            raise ValidationError(f"need exactly 4 contact joints, got {len(idx)}")
        if any(i < 0 or i >= self.num_joints for i in idx):
            raise ValidationError(f"contact joint out of range for {self.num_joints} joints: {idx}")
        # Four distinct indices cannot exist on a <4 joint skeleton, so the
        # distinctness requirement only applies when it is satisfiable.
        if self.num_joints >= 4 and len(set(idx)) != 4:
            raise ValidationError(f"contact joints must be distinct: {idx}")
        object.__setattr__(self, "contact_joint_indices", idx)

    @property
    def frame_width(self) -> int:
        return 12 * self.num_joints + 4


def rotation_to_6d(rotation: np.ndarray) -> np.ndarray:
    """First two columns of a rotation matrix, column-major.

    Accepts stacked input of shape (..., 3, 3). Raises ValidationError if
    any matrix fails orthonormality or det(+1) beyond 1e-6.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape[-2:] != (3, 3):
        raise ValidationError(f"expected (..., 3, 3) rotation, got {rotation.shape}")
    gram = rotation @ np.swapaxes(rotation, -1, -2)
    eye = np.eye(3)
    if np.max(np.abs(gram - eye)) > 1e-6:
        raise ValidationError("input is not orthonormal within 1e-6")
    if np.max(np.abs(np.linalg.det(rotation) - 1.0)) > 1e-6:
        raise ValidationError("input determinant differs from +1 beyond 1e-6")
    return np.concatenate([rotation[..., :, 0], rotation[..., :, 1]], axis=-1)


def sixd_to_rotation(v: np.ndarray) -> np.ndarray:
    """Rotation matrix from a 6D vector via Gram-Schmidt on its two columns.

    The third column is the cross product of the first two, so the result
    is orthonormal with determinant +1. Degenerate input (near-zero first
    column, or parallel columns) raises DegenerateRotationError.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 6:
        raise ValidationError(f"expected (..., 6) input, got {v.shape}")
    a, b = v[..., :3], v[..., 3:]
    norm_a = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.min(norm_a) <= 1e-8:
        raise DegenerateRotationError("first column has near-zero norm")
    x = a / norm_a
    b_perp = b - np.sum(x * b, axis=-1, keepdims=True) * x
    norm_b = np.linalg.norm(b_perp, axis=-1, keepdims=True)
    if np.min(norm_b) <= 1e-8:
        raise DegenerateRotationError("columns are parallel within 1e-8")
    y = b_perp / norm_b
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def axis_angle_rotation(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues' formula; axis (..., 3) need not be normalized, angle (...)."""
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    norm = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.min(norm) <= 1e-12:
        raise ValidationError("rotation axis has zero norm")
    u = axis / norm
    ux, uy, uz = u[..., 0], u[..., 1], u[..., 2]
    zero = np.zeros_like(ux)
    k = np.stack(
        [
            np.stack([zero, -uz, uy], axis=-1),
            np.stack([uz, zero, -ux], axis=-1),
            np.stack([-uy, ux, zero], axis=-1),
        ],
        axis=-2,
    )
    eye = np.broadcast_to(np.eye(3), k.shape)
    sin = np.sin(angle)[..., None, None]
    cos = np.cos(angle)[..., None, None]
    return eye + sin * k + (1.0 - cos) * (k @ k)


def compute_velocities(positions: np.ndarray, fps: float) -> np.ndarray:
    """Forward differences scaled by fps; the last frame copies the previous one.

    A single-frame track gets zero velocity.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 1:
        raise ValidationError("need at least one frame")
    velocities = np.zeros_like(positions)
    if positions.shape[0] > 1:
        velocities[:-1] = (positions[1:] - positions[:-1]) * fps
        velocities[-1] = velocities[-2]
    return velocities


def _contacts_from(positions, velocities, skeleton, speed_threshold, height_threshold):
    idx = list(skeleton.contact_joint_indices)
    speeds = np.linalg.norm(velocities[:, idx, :], axis=-1)
    heights = positions[:, idx, 1]
    return ((speeds < speed_threshold) & (heights < height_threshold)).astype(np.float64)


def detect_contacts(
    positions: np.ndarray,
    skeleton: SkeletonSpec,
    speed_threshold: float = 0.05,
    height_threshold: float = 0.08,
) -> np.ndarray:
    """Per-frame contact flags for the skeleton's four contact joints.

    A joint is in contact when its speed is below ``speed_threshold`` (m/s)
    and its height (y coordinate) is below ``height_threshold`` (m).
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[2] != 3:
        raise ValidationError(f"expected (frames, joints, 3) positions, got {positions.shape}")
    if positions.shape[0] < 2:
        raise ValidationError("contact detection needs at least 2 frames")
    velocities = compute_velocities(positions, skeleton.fps)
    return _contacts_from(positions, velocities, skeleton, speed_threshold, height_threshold)


@dataclass(frozen=True)
class MotionFrame:
    """One frame, exposed as its parts; see the module docstring for layout."""

    positions: np.ndarray   # (J, 3)
    velocities: np.ndarray  # (J, 3)
    rotations6d: np.ndarray  # (J, 6)
    contacts: np.ndarray    # (4,)

    def __post_init__(self):
        j = self.positions.shape[0]
        if self.velocities.shape != (j, 3) or self.rotations6d.shape != (j, 6):
            raise ValidationError("inconsistent joint counts across frame parts")
        if self.contacts.shape != (4,) or not np.isin(self.contacts, (0.0, 1.0)).all():
            raise ValidationError("contacts must be 4 binary flags")

    @property
    def feature_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.positions.ravel(), self.velocities.ravel(), self.rotations6d.ravel(), self.contacts]
        )


class MotionClip:
    """A single person's track: (frames, 12*J+4) features plus its skeleton."""

    def __init__(self, features: np.ndarray, skeleton: SkeletonSpec):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {features.shape}")
        if features.shape[0] < 1:
            raise ValidationError("a clip needs at least one frame")
        if features.shape[1] != skeleton.frame_width:
            raise ValidationError(
                f"frame width {features.shape[1]} != 12*{skeleton.num_joints}+4"
            )
        if not np.isin(features[:, -4:], (0.0, 1.0)).all():
            raise ValidationError("contact flags must be binary")
        self.features = features
        self.skeleton = skeleton

    @classmethod
    def from_parts(cls, positions, velocities, rotations6d, contacts, skeleton):
        m = positions.shape[0]
        feats = np.concatenate(
            [
                positions.reshape(m, -1),
                velocities.reshape(m, -1),
                rotations6d.reshape(m, -1),
                contacts.reshape(m, 4),
            ],
            axis=1,
        )
        return cls(feats, skeleton)

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def positions(self) -> np.ndarray:
        j = self.skeleton.num_joints
        return self.features[:, : 3 * j].reshape(-1, j, 3)

    @property
    def velocities(self) -> np.ndarray:
        j = self.skeleton.num_joints
        return self.features[:, 3 * j : 6 * j].reshape(-1, j, 3)

    @property
    def rotations6d(self) -> np.ndarray:
        j = self.skeleton.num_joints
        return self.features[:, 6 * j : 12 * j].reshape(-1, j, 6)

    @property
    def contacts(self) -> np.ndarray:
        return self.features[:, -4:]

    def frame(self, i: int) -> MotionFrame:
        return MotionFrame(
            self.positions[i], self.velocities[i], self.rotations6d[i], self.contacts[i]
        )

    def slice_frames(self, start: int, stop: int) -> "MotionClip":
        if not 0 <= start < stop <= self.num_frames:
            raise ValidationError(f"bad frame range [{start}, {stop})")
        return MotionClip(self.features[start:stop].copy(), self.skeleton)


@dataclass
class InteractiveClip:
    """Two time-aligned person tracks with identical length, joints, and fps."""

    person_a: MotionClip
    person_b: MotionClip

    def __post_init__(self):
        a, b = self.person_a, self.person_b
        if a.num_frames != b.num_frames:
            raise ValidationError("person tracks differ in length")
        if a.skeleton.num_joints != b.skeleton.num_joints or a.skeleton.fps != b.skeleton.fps:
            raise ValidationError("person tracks differ in skeleton")

    @property
    def num_frames(self) -> int:
        return self.person_a.num_frames

    @property
    def skeleton(self) -> SkeletonSpec:
        return self.person_a.skeleton

    @property
    def persons(self) -> tuple[MotionClip, MotionClip]:
        return (self.person_a, self.person_b)

    def slice_frames(self, start: int, stop: int) -> "InteractiveClip":
        return InteractiveClip(
            self.person_a.slice_frames(start, stop), self.person_b.slice_frames(start, stop)
        )


def assemble_clip(
    positions: np.ndarray,
    rotations: np.ndarray,
    skeleton: SkeletonSpec,
    speed_threshold: float = 0.05,
    height_threshold: float = 0.08,
) -> MotionClip:
    """Build a clip from raw joint positions and rotation matrices.

    Velocities come from forward differences; contacts from the speed/height
    rule. Shapes must be (M, J, 3) and (M, J, 3, 3).
    """
    positions = np.asarray(positions, dtype=np.float64)
    rotations = np.asarray(rotations, dtype=np.float64)
    j = skeleton.num_joints
    if positions.ndim != 3 or positions.shape[1:] != (j, 3):
        raise ValidationError(f"positions must be (M, {j}, 3), got {positions.shape}")
    if rotations.shape != positions.shape[:2] + (3, 3):
        raise ValidationError(f"rotations must be (M, {j}, 3, 3), got {rotations.shape}")
    velocities = compute_velocities(positions, skeleton.fps)
    rot6d = rotation_to_6d(rotations)
    contacts = _contacts_from(positions, velocities, skeleton, speed_threshold, height_threshold)
    return MotionClip.from_parts(positions, velocities, rot6d, contacts, skeleton)


def _round9(x: float) -> float:
    return float(f"{x:.9g}")


def save_motion_json(path, clip) -> None:
    """Write a clip (single or interactive) as a ``.motion.json`` file.

    Floats are serialized with 9 significant digits.
    """
    persons = clip.persons if isinstance(clip, InteractiveClip) else (clip,)
    skeleton = persons[0].skeleton
    doc = {
        "fps": _round9(skeleton.fps),
        "num_joints": skeleton.num_joints,
        "persons": [
            {"frames": [[_round9(v) for v in row] for row in p.features]} for p in persons
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_motion_json(path, contact_joint_indices=None):
    """Read a ``.motion.json`` file; returns MotionClip or InteractiveClip."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    try:
        skeleton = SkeletonSpec(
            num_joints=int(doc["num_joints"]),
            contact_joint_indices=contact_joint_indices,
            fps=float(doc["fps"]),
        )
        persons = doc["persons"]
    except KeyError as exc:
        raise ValidationError(f"motion file {path} is missing key {exc}") from exc
    if len(persons) not in (1, 2):
        raise ValidationError(f"motion file must hold 1 or 2 persons, got {len(persons)}")
    clips = [MotionClip(np.asarray(p["frames"], dtype=np.float64), skeleton) for p in persons]
    if len(clips) == 1:
        return clips[0]
    return InteractiveClip(clips[0], clips[1])
