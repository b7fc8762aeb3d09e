import numpy as np
import pytest
import torch
from PIL import Image

from vfslab import toygen
from vfslab.data import LABEL_FOREGROUND


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    yield


def moving_rect_spec(seed: int = 11, num_frames: int = 10) -> toygen.SceneSpec:
    """Bright rect on a dark flat background, the easiest overfit target."""
    return toygen.SceneSpec(
        size=(64, 96),
        num_frames=num_frames,
        background="flat_color",
        sprites=[
            toygen.SpriteSpec(
                shape="rect",
                size=(14, 18),
                start=(12.0, 8.0),
                velocity=(1.0, 3.0),
                color=(250, 250, 60),
            )
        ],
        seed=seed,
    )


@pytest.fixture
def toyset_dir(tmp_path):
    """Two-video simple-layout toyset."""
    specs = [moving_rect_spec(seed=11), moving_rect_spec(seed=12)]
    specs[1].background = "gradient"
    toygen.write_toyset(specs, tmp_path / "toy")
    return tmp_path / "toy"


def write_cdnet_tree(root, categories=("baseline", "PTZ"), videos_per_cat=2, n_frames=6,
                     with_troi=False, with_roi=False):
    """Synthetic change-detection layout with exact label values."""
    rng = np.random.default_rng(7)
    for cat in categories:
        for v in range(videos_per_cat):
            vdir = root / cat / f"video{v}"
            (vdir / "input").mkdir(parents=True)
            (vdir / "groundtruth").mkdir(parents=True)
            for t in range(1, n_frames + 1):
                frame = rng.integers(0, 256, size=(64, 96, 3), dtype=np.uint8)
                Image.fromarray(frame).save(vdir / "input" / f"in{t:06d}.jpg")
                gt = np.zeros((64, 96), dtype=np.uint8)
                gt[10:20, 10:30] = LABEL_FOREGROUND
                gt[40:50, 40:60] = 85
                Image.fromarray(gt).save(vdir / "groundtruth" / f"gt{t:06d}.png")
            if with_troi:
                (vdir / "temporalROI.txt").write_text(f"2 {n_frames - 1}\n")
            if with_roi:
                roi = np.full((64, 96), 255, dtype=np.uint8)
                roi[:, :16] = 0
                Image.fromarray(roi).save(vdir / "ROI.png")
    return root
