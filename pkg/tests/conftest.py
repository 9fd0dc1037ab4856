import numpy as np
import pytest

from panolight.geometry import Intrinsics
from panolight.scenes import BoxRoom
from panolight.transformer import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def room():
    return BoxRoom(boxes=[])


@pytest.fixture(scope="session")
def view(room):
    """64x64, 60 degree view of the default room with exact depth."""
    K = Intrinsics.from_fov(64, 64, 60.0)
    image, depth = room.render_perspective(K)
    return image, depth, K


@pytest.fixture
def tiny_cfg():
    return ModelConfig(face_size=8, patch_size=4, embed_dim=16, n_heads=2, n_blocks=2,
                       refine_channels=4)


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line straight to the terminal and assert."""
    def _report(tag, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {tag}: {detail}")
        assert ok, f"{tag}: {detail}"
    return _report
