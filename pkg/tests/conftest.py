import numpy as np
import pytest

from dldiag.artifacts import make_run
from dldiag.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def tiny_run():
    """Six items, three classes, two layers, hand-picked labels.

    item:       0  1  2  3  4  5
    true:       0  0  1  1  2  2
    predicted:  0  1  1  1  2  0
    """
    rng = np.random.default_rng(42)
    return make_run(
        run_id="tiny",
        class_count=3,
        layers=[("fcA", rng.random((6, 4))), ("fcB", rng.random((6, 5)))],
        true_labels=[0, 0, 1, 1, 2, 2],
        predicted_labels=[0, 1, 1, 1, 2, 0],
        latent_layer="fcB",
    )


@pytest.fixture(scope="session")
def small_run():
    """Fast synthetic run with a few percent of boundary errors."""
    return generate(
        SynthSpec(
            class_count=4,
            item_count=240,
            latent_dim=6,
            separation=5.0,
            layers=(12,),
            label_noise=1.5,
            seed=11,
        )
    )


@pytest.fixture(scope="session")
def boundary_run():
    """Mid-size run with boundary-concentrated errors (paired rival layout)."""
    return generate(
        SynthSpec(
            class_count=10,
            item_count=2000,
            latent_dim=16,
            separation=10.0,
            layers=(24,),
            label_noise=1.5,
            seed=0,
            mean_layout="paired",
            pair_distance=5.0,
        )
    )
