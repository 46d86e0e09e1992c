import numpy as np
import pytest

from tumorseg.network import NetworkConfig
from tumorseg.phantoms import PhantomSpec, make_phantom
from tumorseg.preprocess import zscore_normalize
from tumorseg.volumes import brain_mask


def toy_network_config(out_channels=3, patch=32, depth=3, base=4):
    return NetworkConfig(
        out_channels=out_channels,
        patch_size=(patch, patch, patch),
        depth=depth,
        base_filters=base,
        groupnorm_groups=4,
        dropout_rate=0.0,
    )


@pytest.fixture(scope="session")
def phantom_case():
    """One nested-sphere case: (raw volume, normalized volume, labels)."""
    spec = PhantomSpec(shape=(48, 48, 48), r_wt=10.0, r_tc=7.0, r_et=5.0, seed=3)
    volume, labels = make_phantom(spec)
    normalized = zscore_normalize(volume, brain_mask(volume))
    return volume, normalized, labels


def random_binary_volume(rng, shape=(16, 16, 16), p=0.5):
    return rng.random(shape) < p
