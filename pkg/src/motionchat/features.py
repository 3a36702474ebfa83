"""Feature extraction for retrieval-style evaluation.

``FeatureSet`` is the unit the metric kernels consume. The reference
extractor is a fixed seeded random projection of clip statistics, so every
metric and the quality gate run offline without a trained retrieval model.
Captions are embedded by rendering their canonical motion and projecting
its statistics with the same matrix, which keeps a caption and a faithful
rendering of it close in feature space.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .motion import InteractiveClip, SkeletonSpec
from .synthetic import canonical_motion


@dataclass
class FeatureSet:
    vectors: np.ndarray
    modality: str  # "motion" | "text"

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if self.vectors.shape[0] < 1:
            raise ValidationError("feature set is empty")
        if self.modality not in ("motion", "text"):
            raise ValidationError(f"modality must be motion|text, got {self.modality!r}")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _clip_stats(clip) -> np.ndarray:
    persons = clip.persons if isinstance(clip, InteractiveClip) else (clip, clip)
    parts = []
    for person in persons:
        feats = person.features
        parts.append(feats.mean(axis=0))
        parts.append(feats.std(axis=0))
    return np.concatenate(parts)


class ReferenceFeatureExtractor:
    """Seeded random projection of per-channel clip statistics."""

    def __init__(self, num_joints: int = 22, dim: int = 32, seed: int = 0):
        self.num_joints = num_joints
        self.dim = dim
        self.seed = seed
        stats_dim = 2 * 2 * (12 * num_joints + 4)
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((dim, stats_dim)) / np.sqrt(stats_dim)

    def motion_features(self, clip) -> np.ndarray:
        stats = _clip_stats(clip)
        if stats.shape[0] != self._projection.shape[1]:
            raise ValidationError(
                f"clip has {stats.shape[0]} stats, extractor expects {self._projection.shape[1]}"
            )
        return self._projection @ stats

    def text_features(self, caption: str) -> np.ndarray:
        rendered = canonical_motion(caption, SkeletonSpec(num_joints=self.num_joints))
        return self.motion_features(rendered)

    def motion_set(self, clips) -> FeatureSet:
        return FeatureSet(np.stack([self.motion_features(c) for c in clips]), "motion")

    def text_set(self, captions) -> FeatureSet:
        return FeatureSet(np.stack([self.text_features(c) for c in captions]), "text")
