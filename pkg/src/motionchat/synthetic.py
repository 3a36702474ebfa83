"""Deterministic synthetic motion generation.

Training/eval tests and the offline stub clients all need real clips
without a capture pipeline. Two entry points:

* ``sinusoid_clip`` — a clip from an explicit RNG, for corpus building.
* ``canonical_motion`` — the unique clip implied by a caption string
  (seeded from its hash). The stub text-to-motion client returns this
  motion (plus optional noise), and the reference retrieval model embeds
  captions by round-tripping through it, so captions and their stub
  motions land near each other in feature space by construction.
"""

import hashlib

import numpy as np

from .motion import InteractiveClip, SkeletonSpec, assemble_clip, axis_angle_rotation


def caption_seed(caption: str) -> int:
    digest = hashlib.sha256(caption.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


_NUM_BASES = 4


def _person_track(rng, skeleton, num_frames, x_offset=0.0):
    # Joint trajectories are linear combinations of a few shared sinusoid
    # bases, mimicking the strong cross-joint correlation of real motion.
    j = skeleton.num_joints
    t = np.arange(num_frames) / skeleton.fps
    freqs = rng.uniform(0.3, 1.5, size=_NUM_BASES)
    phases = rng.uniform(0, 2 * np.pi, size=_NUM_BASES)
    bases = np.sin(2 * np.pi * freqs * t[:, None] + phases)  # (M, nb)
    base_pose = rng.uniform(-0.5, 0.5, size=(j, 3))
    base_pose[:, 1] += 0.9  # keep joints above ground
    base_pose[:, 0] += x_offset
    coeffs = 0.2 * rng.standard_normal((_NUM_BASES, j, 3))
    positions = base_pose + np.einsum("mb,bjc->mjc", bases, coeffs)
    axes = rng.standard_normal((j, 3))
    rot_coeffs = 0.3 * rng.standard_normal((_NUM_BASES, j))
    angles = np.einsum("mb,bj->mj", bases, rot_coeffs)
    rotations = axis_angle_rotation(np.broadcast_to(axes, (num_frames, j, 3)), angles)
    return assemble_clip(positions, rotations, skeleton)


def sinusoid_clip(rng: np.random.Generator, skeleton: SkeletonSpec, num_frames: int) -> InteractiveClip:
    """Two-person clip of smooth sinusoidal joint trajectories."""
    return InteractiveClip(
        _person_track(rng, skeleton, num_frames),
        _person_track(rng, skeleton, num_frames, x_offset=1.2),
    )


def canonical_motion(
    caption: str,
    skeleton: SkeletonSpec | None = None,
    num_frames: int | None = None,
    min_frames: int = 32,
    max_frames: int = 64,
) -> InteractiveClip:
    """The deterministic clip a caption maps to; same caption, same floats."""
    skeleton = skeleton or SkeletonSpec()
    rng = np.random.default_rng(caption_seed(caption))
    if num_frames is None:
        num_frames = int(min_frames + rng.integers(0, max(max_frames - min_frames, 0) + 1))
    return sinusoid_clip(rng, skeleton, num_frames)


def clip_dataset(seed: int, count: int, skeleton: SkeletonSpec, num_frames: int) -> list:
    """A reproducible list of interactive clips for training tests."""
    rng = np.random.default_rng(seed)
    return [sinusoid_clip(rng, skeleton, num_frames) for _ in range(count)]
