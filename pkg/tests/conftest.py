import numpy as np
import pytest

from motionchat import kernels, rqvae
from motionchat.codec import ByteTextTokenizer, VocabManifest
from motionchat.motion import SkeletonSpec

kernels.warmup()


@pytest.fixture(scope="session")
def tiny_skeleton():
    return SkeletonSpec(num_joints=4, fps=30.0)


@pytest.fixture(scope="session")
def tiny_tokenizer(tiny_skeleton):
    """Untrained (deterministically initialized) tokenizer for codec/data tests."""
    config = rqvae.TokenizerConfig(
        num_joints=4, codebook_size=64, depth=2, code_dim=32, hidden=32, seed=0
    )
    return rqvae.init_tokenizer(config)


@pytest.fixture(scope="session")
def manifest():
    return VocabManifest(codebook_size=64)


@pytest.fixture(scope="session")
def text_tok():
    return ByteTextTokenizer()


def random_rotations(rng, n):
    """Uniform-ish random rotation matrices via axis-angle sampling."""
    from motionchat.motion import axis_angle_rotation

    axes = rng.standard_normal((n, 3))
    angles = rng.uniform(0, np.pi, size=n)
    return axis_angle_rotation(axes, angles)
