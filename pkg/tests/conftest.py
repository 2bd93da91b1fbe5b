"""Shared fixtures: a tiny model config and synthetic, separable clients
for exercising the training machinery without signal rendering."""

import numpy as np
import pytest

from fedradar.dataset import ClientDataset
from fedradar.frames import Frame, FrameSpec, Subcategory
from fedradar.model import ResidualCnnConfig
from fedradar.signals import RadarType

TOY_CONFIG = ResidualCnnConfig(
    input_size=(16, 16),
    stem_channels=4,
    block_channels=(8, 8, 8, 8),
    head_hidden=8,
    stem_kernel=3,
)


def make_toy_frame(rng: np.random.Generator, label: int, esc_id: int = 0) -> Frame:
    """A trivially separable sample: positives carry a bright square."""
    img = rng.uniform(0.0, 0.3, size=(3, 16, 16))
    if label == 1:
        img[:, 4:10, 4:10] += 0.6
    img = np.clip(img, 0.0, 1.0)
    subcat = Subcategory.RADAR_5G_OVERLAP if label else Subcategory.LTE_ONLY
    spec = FrameSpec(
        subcategory=subcat,
        radar_type=RadarType.TYPE1 if label else None,
        esc_id=esc_id,
        sinr_db=21.0,
        seed=int(rng.integers(1 << 31)),
    )
    support = np.zeros((16, 16), dtype=bool)
    return Frame(
        spectrogram=img,
        label=label,
        spec=spec,
        radar_support=support,
        comm_support=support,
        achieved_sinr_db=21.0 if label else None,
    )


def make_toy_client(esc_id: int, n_train: int, n_val: int = 8, n_test: int = 8,
                    seed: int = 0) -> ClientDataset:
    rng = np.random.default_rng([seed, esc_id])

    def batch(n):
        return [make_toy_frame(rng, label=i % 2, esc_id=esc_id) for i in range(n)]

    return ClientDataset(
        esc_id=esc_id,
        train=batch(n_train),
        val=batch(n_val),
        test=batch(n_test),
        radar_mixture=(0.5, 0.5),
    )


@pytest.fixture
def toy_config():
    return TOY_CONFIG


@pytest.fixture
def toy_clients_data():
    return [make_toy_client(k, n_train=16, seed=99) for k in range(3)]
