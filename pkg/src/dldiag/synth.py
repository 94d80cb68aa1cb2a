"""Ground-truthed synthetic model runs for desk-scale experiments.

Items live in a latent space as unit-variance Gaussian blobs around class
means placed on a sphere.  Predicted labels come from the generating
mixture's posterior with noise added to the log-posteriors, so
mispredictions concentrate near decision boundaries -- the geometry the
sampling strategies are built to exploit.  A uniform-flip noise mode
exists as a stress case where that structure is deliberately absent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .artifacts import RunArtifacts, make_run

BOUNDARY = "boundary"
UNIFORM_FLIP = "uniform"
RANDOM_MEANS = "random"
PAIRED_MEANS = "paired"


@dataclass(frozen=True)
class SynthSpec:
    class_count: int
    item_count: int
    latent_dim: int
    separation: float  # radius of the sphere holding the class means
    layers: tuple[int, ...] = (32,)
    label_noise: float = 0.0
    seed: int = 0
    noise_mode: str = BOUNDARY
    # "random": independent mean directions (every class borders every other).
    # "paired": anchor directions in a simplex arrangement, each split into a
    # pair pair_distance apart, so each class has one close rival -- the
    # few-confusable-neighbors geometry real latent spaces exhibit.
    mean_layout: str = RANDOM_MEANS
    pair_distance: float = 4.0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("need at least 2 classes")
        if self.item_count < self.class_count:
            raise ValueError("need at least one item per class")
        if self.separation <= 0:
            raise ValueError("separation must be positive")
        if self.noise_mode not in (BOUNDARY, UNIFORM_FLIP):
            raise ValueError(f"unknown noise_mode '{self.noise_mode}'")
        if self.mean_layout not in (RANDOM_MEANS, PAIRED_MEANS):
            raise ValueError(f"unknown mean_layout '{self.mean_layout}'")
        if self.mean_layout == PAIRED_MEANS:
            anchors = (self.class_count + 1) // 2
            if anchors + 1 > self.latent_dim:
                raise ValueError("paired layout needs latent_dim > class_count/2")
            if not 0.0 < self.pair_distance < 2.0 * self.separation:
                raise ValueError("pair_distance must be in (0, 2*separation)")
        object.__setattr__(self, "layers", tuple(int(x) for x in self.layers))


@dataclass(frozen=True)
class SynthTruth:
    """Generator-side ground truth, for tests and calibration."""

    class_means: np.ndarray  # (C, d)
    latent_raw: np.ndarray  # (N, d) latent points before the nonnegative shift
    log_posteriors: np.ndarray  # (N, C) noise-free log posteriors (normalized)
    true_class_posterior: np.ndarray  # (N,) posterior of the generating class


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    m = scores.max(axis=1, keepdims=True)
    stable = scores - m
    return stable - np.log(np.exp(stable).sum(axis=1, keepdims=True))


def _random_means(rng: np.random.Generator, c: int, d: int, sep: float) -> np.ndarray:
    dirs = rng.normal(size=(c, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * sep


def _paired_means(
    rng: np.random.Generator, c: int, d: int, sep: float, pair_distance: float
) -> np.ndarray:
    """Anchor directions forming a regular simplex (so non-rival classes sit
    clearly apart), each anchor split into two means pair_distance apart."""
    p = (c + 1) // 2
    hull = np.eye(p) - 1.0 / p
    u, sv, _ = np.linalg.svd(hull, full_matrices=False)
    simplex = u[:, : p - 1] * sv[: p - 1]
    simplex /= np.linalg.norm(simplex, axis=1, keepdims=True)
    basis, _ = np.linalg.qr(rng.normal(size=(d, p - 1)))
    anchors = simplex @ basis.T  # (p, d) unit directions, pairwise dot -1/(p-1)

    sin_t = pair_distance / (2.0 * sep)
    cos_t = np.sqrt(1.0 - sin_t**2)
    means = np.empty((c, d))
    for k, a in enumerate(anchors):
        off = rng.normal(size=d)
        off -= (off @ a) * a
        off /= np.linalg.norm(off)
        means[2 * k] = sep * (cos_t * a + sin_t * off)
        if 2 * k + 1 < c:
            means[2 * k + 1] = sep * (cos_t * a - sin_t * off)
    return means


def generate_with_truth(spec: SynthSpec) -> tuple[RunArtifacts, SynthTruth]:
    rng = np.random.default_rng(spec.seed)
    c, n, d = spec.class_count, spec.item_count, spec.latent_dim

    if spec.mean_layout == PAIRED_MEANS:
        means = _paired_means(rng, c, d, spec.separation, spec.pair_distance)
    else:
        means = _random_means(rng, c, d, spec.separation)

    true_labels = rng.permutation(np.arange(n) % c)  # balanced classes
    x = means[true_labels] + rng.normal(size=(n, d))

    # equal class priors and unit covariance: log posterior ~ -0.5 * dist^2
    sq = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    log_post = _log_softmax(-0.5 * sq)

    if spec.noise_mode == BOUNDARY:
        noisy = log_post + spec.label_noise * rng.normal(size=(n, c))
        predicted = noisy.argmax(axis=1)
    else:
        predicted = log_post.argmax(axis=1).copy()
        flip = rng.random(n) < spec.label_noise
        offsets = rng.integers(1, c, size=n)  # uniform over the other classes
        predicted[flip] = (predicted[flip] + offsets[flip]) % c

    layers = []
    for i, width in enumerate(spec.layers):
        w = rng.normal(size=(width, d)) / np.sqrt(d)
        b = rng.normal(size=width)
        layers.append((f"fc{i}", np.maximum(x @ w.T + b, 0.0)))
    # the latent layer is x itself, translated into the nonnegative orthant
    # (a per-dimension shift preserves all distances and covariances)
    layers.append(("latent", x - x.min(axis=0)))

    run = make_run(
        run_id=f"synth-c{c}-n{n}-d{d}-s{spec.separation}-seed{spec.seed}",
        class_count=c,
        layers=layers,
        true_labels=true_labels,
        predicted_labels=predicted,
        latent_layer="latent",
    )
    truth = SynthTruth(
        class_means=means,
        latent_raw=x,
        log_posteriors=log_post,
        true_class_posterior=np.exp(log_post[np.arange(n), true_labels]),
    )
    return run, truth


def generate(spec: SynthSpec) -> RunArtifacts:
    """Deterministic synthetic run; identical spec gives identical artifacts."""
    return generate_with_truth(spec)[0]
