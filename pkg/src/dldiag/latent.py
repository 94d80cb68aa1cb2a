"""Models fitted to the latent space: PCA, Gaussian mixtures, max-margin.

All fits are deterministic given their seed, and fitted models are
immutable.  Each model yields per-item class/cluster posteriors; items are
characterized by the posterior odds ratio P(A|x) / P(not A|x) of their
assigned cluster A.  High ratio = exemplar (deep inside a cluster), low
ratio = outlier (near a decision boundary).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Posterior odds are unbounded for exemplars; cap them for numerical stability.
RATIO_CAP = 1e12
_PROB_EPS = 1e-15


@dataclass(frozen=True)
class GmmConfig:
    tol: float = 1e-6  # stop when log-likelihood improves by less than this
    max_iter: int = 200
    reg: float = 1e-6  # added to covariance diagonal / variance each M-step


@dataclass(frozen=True)
class MarginConfig:
    lam: float = 1e-4  # L2 regularization weight
    epochs: int = 50
    platt_max_iter: int = 100
    platt_tol: float = 1e-8


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (r, d), orthonormal rows
    explained_variance: np.ndarray  # (r,), descending

    @property
    def r(self) -> int:
        return self.components.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) @ self.components + self.mean

    def to_jsonable(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray  # (K,), nonnegative, sums to 1
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d, d) full mode | (K,) spherical variances
    mode: str  # "full" | "spherical"
    log_likelihoods: tuple[float, ...]  # total log-likelihood per EM iteration

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_jsonable(self) -> dict:
        return {
            "mode": self.mode,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }


@dataclass(frozen=True)
class MarginModel:
    weights: np.ndarray  # (C, d), one weight vector per class
    biases: np.ndarray  # (C,)
    platt_a: np.ndarray  # (C,)
    platt_b: np.ndarray  # (C,)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights.T + self.biases

    def to_jsonable(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "platt_a": self.platt_a.tolist(),
            "platt_b": self.platt_b.tolist(),
        }


@dataclass(frozen=True)
class MembershipTable:
    """Per-item cluster/class posteriors and assigned-cluster odds ratios."""

    posterior: np.ndarray  # (N, K), rows sum to 1
    assignment: np.ndarray  # (N,), argmax cluster, ties to lowest index
    likelihood_ratio: np.ndarray  # (N,), capped at RATIO_CAP

    @property
    def n_clusters(self) -> int:
        return self.posterior.shape[1]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def pca_fit(latent: np.ndarray, r: int) -> PcaModel:
    """Top-r principal directions of the sample covariance, via SVD.

    Deterministic up to sign; the sign is fixed so that the
    largest-magnitude entry of each component is positive.
    """
    X = np.asarray(latent, dtype=np.float64)
    n, d = X.shape
    if not 1 <= r <= d:
        raise ValueError(f"r must be in [1, {d}], got {r}")
    if n < r:
        raise ValueError(f"need at least r={r} items, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not Xc.any():
        raise ValueError("degenerate input: zero variance in all dimensions")
    _, svals, vt = np.linalg.svd(Xc, full_matrices=False)
    denom = max(n - 1, 1)
    variance = svals**2 / denom
    components = vt[:r].copy()
    for row in components:
        peak = np.argmax(np.abs(row))
        if row[peak] < 0:
            row *= -1
    return PcaModel(
        mean=_frozen(mean),
        components=_frozen(components),
        explained_variance=_frozen(variance[:r].copy()),
    )


def _kmeanspp_seeds(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            nxt = int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[np.array(chosen)].copy()


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def _log_weighted_pdfs(
    X: np.ndarray,
    weights: np.ndarray,
    means: np.ndarray,
    covariances: np.ndarray,
    mode: str,
) -> np.ndarray:
    """log(weight_k * N(x_i; mu_k, Sigma_k)), computed in log space."""
    n, d = X.shape
    k = means.shape[0]
    out = np.empty((n, k))
    log2pi = d * np.log(2.0 * np.pi)
    with np.errstate(divide="ignore"):  # zero weights map to -inf
        logw = np.log(weights)
    if mode == "full":
        for j in range(k):
            try:
                chol = np.linalg.cholesky(covariances[j])
            except np.linalg.LinAlgError:
                raise ValueError(
                    f"component {j}: covariance not positive-definite"
                ) from None
            half_logdet = np.log(np.diag(chol)).sum()
            z = np.linalg.solve(chol, (X - means[j]).T)
            quad = (z**2).sum(axis=0)
            out[:, j] = logw[j] - half_logdet - 0.5 * (log2pi + quad)
    elif mode == "spherical":
        var = covariances
        for j in range(k):
            sq = ((X - means[j]) ** 2).sum(axis=1)
            out[:, j] = logw[j] - 0.5 * (log2pi + d * np.log(var[j]) + sq / var[j])
    else:
        raise ValueError(f"unknown covariance mode '{mode}'")
    return out


def gmm_fit(
    latent: np.ndarray,
    n_components: int,
    mode: str = "full",
    seed: int = 0,
    config: GmmConfig = GmmConfig(),
) -> GmmModel:
    """Fit a K-component Gaussian mixture by EM with k-means++ seeding.

    Iterates until the total log-likelihood improves by less than
    ``config.tol`` or ``config.max_iter`` iterations; the recorded
    per-iteration log-likelihood sequence is non-decreasing.  A component
    whose responsibility mass collapses to zero is re-seeded from the
    point with the lowest total likelihood.
    """
    X = np.asarray(latent, dtype=np.float64)
    n, d = X.shape
    k = int(n_components)
    if mode not in ("full", "spherical"):
        raise ValueError(f"unknown covariance mode '{mode}'")
    if k < 1:
        raise ValueError("n_components must be >= 1")
    if n < k:
        raise ValueError(f"need at least {k} items, got {n}")

    rng = np.random.default_rng(seed)
    means = _kmeanspp_seeds(X, k, rng)
    weights = np.full(k, 1.0 / k)
    global_cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
    global_var = float(np.trace(global_cov) / d)
    if mode == "full":
        covariances = np.repeat(global_cov[None], k, axis=0) + config.reg * np.eye(d)
    else:
        covariances = np.full(k, global_var + config.reg)

    lls: list[float] = []
    prev_ll = -np.inf
    for _ in range(config.max_iter):
        logp = _log_weighted_pdfs(X, weights, means, covariances, mode)
        row_ll = _logsumexp_rows(logp)
        ll = float(row_ll.sum())
        if not np.isfinite(ll):
            raise ValueError("non-finite log-likelihood during EM")
        lls.append(ll)
        if ll - prev_ll < config.tol and len(lls) > 1:
            break
        prev_ll = ll

        resp = np.exp(logp - row_ll[:, None])
        nk = resp.sum(axis=0)
        empty = nk < 1e-12
        nk_safe = np.where(empty, 1.0, nk)
        weights = nk / n
        means = (resp.T @ X) / nk_safe[:, None]
        if mode == "full":
            covariances = np.empty((k, d, d))
            for j in range(k):
                diff = X - means[j]
                covariances[j] = (resp[:, j] * diff.T) @ diff / nk_safe[j]
                covariances[j][np.diag_indices(d)] += config.reg
        else:
            covariances = np.empty(k)
            for j in range(k):
                sq = ((X - means[j]) ** 2).sum(axis=1)
                covariances[j] = (resp[:, j] * sq).sum() / (nk_safe[j] * d) + config.reg
        if empty.any():
            worst = int(np.argmin(row_ll))
            for j in np.flatnonzero(empty):
                means[j] = X[worst]
                if mode == "full":
                    covariances[j] = global_cov + config.reg * np.eye(d)
                else:
                    covariances[j] = global_var + config.reg
                weights[j] = 1.0 / n
            weights = weights / weights.sum()

    return GmmModel(
        weights=_frozen(weights),
        means=_frozen(means),
        covariances=_frozen(covariances),
        mode=mode,
        log_likelihoods=tuple(lls),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _platt_fit(
    decision: np.ndarray, targets: np.ndarray, max_iter: int, tol: float
) -> tuple[float, float]:
    """Fit sigmoid parameters (A, B) so that 1/(1+exp(A*f+B)) ~ P(y=+1|f).

    Regularized maximum likelihood with prior-smoothed targets, solved by
    Newton iterations with backtracking line search.
    """
    f = np.asarray(decision, dtype=np.float64)
    y = np.asarray(targets)
    prior1 = int((y > 0).sum())
    prior0 = len(y) - prior1
    hi = (prior1 + 1.0) / (prior1 + 2.0)
    lo = 1.0 / (prior0 + 2.0)
    t = np.where(y > 0, hi, lo)
    a, b = 0.0, np.log((prior0 + 1.0) / (prior1 + 1.0))
    sigma = 1e-12  # keeps the Hessian strictly positive-definite
    min_step = 1e-10

    def objective(av, bv):
        z = av * f + bv
        # -sum(t*log(p) + (1-t)*log(1-p)) in a form stable for large |z|
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)), (t - 1) * z + np.log1p(np.exp(z)))))

    fval = objective(a, b)
    for _ in range(max_iter):
        z = a * f + b
        p = _sigmoid(-z)  # P(y=+1)
        q = 1.0 - p
        d2 = p * q
        h11 = float((f * f * d2).sum()) + sigma
        h22 = float(d2.sum()) + sigma
        h21 = float((f * d2).sum())
        d1 = t - p
        g1 = float((f * d1).sum())
        g2 = float(d1.sum())
        if abs(g1) < tol and abs(g2) < tol:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            new_a, new_b = a + step * da, b + step * db
            new_f = objective(new_a, new_b)
            if new_f < fval + 1e-4 * step * gd:
                a, b, fval = new_a, new_b, new_f
                break
            step /= 2.0
        else:
            break
    return a, b


def margin_fit(
    latent: np.ndarray,
    labels: np.ndarray,
    seed: int = 0,
    config: MarginConfig = MarginConfig(),
    class_count: int | None = None,
) -> MarginModel:
    """One-vs-rest linear max-margin classifiers with Platt calibration.

    Each classifier minimizes lam*||w||^2 + mean hinge loss by
    epoch-ordered stochastic subgradient descent (seeded shuffle, step
    1/(lam*t)).  Features are centered and the bias rides on a constant
    feature scaled to the data's RMS norm, so it adapts at the same rate
    as the weights and stays effectively unregularized (the objective
    penalizes w only); the returned model is expressed over the raw
    latent coordinates.  Platt parameters are then fit per class on the
    in-sample decision values.
    """
    X = np.asarray(latent, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, d = X.shape
    c = int(class_count) if class_count is not None else int(y.max()) + 1
    counts = np.bincount(y, minlength=c)
    if (counts < 2).any():
        small = int(np.argmax(counts < 2))
        raise ValueError(
            f"class {small} has {counts[small]} items; need at least 2 per class"
        )

    center = X.mean(axis=0)
    xc = X - center
    bias_scale = 5.0 * float(np.sqrt(((xc**2).sum(axis=1)).mean()))
    if bias_scale == 0.0:
        bias_scale = 1.0
    targets = np.where(y[None, :] == np.arange(c)[:, None], 1.0, -1.0)  # (C, N)
    xa = np.hstack([xc, np.full((n, 1), bias_scale)])
    w = np.zeros((c, d + 1))
    rng = np.random.default_rng(seed)
    t = 0
    lam = config.lam
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for i in order:
            t += 1
            eta = 1.0 / (lam * t)
            xi = xa[i]
            yi = targets[:, i]
            active = yi * (w @ xi) < 1.0
            w *= 1.0 - 2.0 * lam * eta
            if active.any():
                w += eta * (yi * active)[:, None] * xi[None, :]

    weights = w[:, :d].copy()
    biases = w[:, d] * bias_scale - weights @ center
    decision = X @ weights.T + biases
    platt_a = np.empty(c)
    platt_b = np.empty(c)
    for j in range(c):
        platt_a[j], platt_b[j] = _platt_fit(
            decision[:, j], targets[j], config.platt_max_iter, config.platt_tol
        )
    return MarginModel(
        weights=_frozen(weights),
        biases=_frozen(biases),
        platt_a=_frozen(platt_a),
        platt_b=_frozen(platt_b),
    )


def platt_probability(model: MarginModel, decision: np.ndarray) -> np.ndarray:
    """Calibrated P(class | decision value), strictly inside (0, 1)."""
    z = model.platt_a * decision + model.platt_b
    return np.clip(_sigmoid(-z), _PROB_EPS, 1.0 - _PROB_EPS)


def memberships(model: GmmModel | MarginModel, latent: np.ndarray) -> MembershipTable:
    """Per-item posteriors, hard assignments, and capped posterior odds.

    GMM posteriors are evaluated in log space; margin posteriors are the
    per-class Platt probabilities normalized across classes.  The odds
    ratio p/(1-p) of the assigned cluster is capped at RATIO_CAP once the
    posterior reaches 1 - 1e-12.
    """
    X = np.asarray(latent, dtype=np.float64)
    if isinstance(model, GmmModel):
        if X.shape[1] != model.dim:
            raise ValueError(
                f"latent dimension {X.shape[1]} != model dimension {model.dim}"
            )
        logp = _log_weighted_pdfs(
            X, model.weights, model.means, model.covariances, model.mode
        )
        posterior = np.exp(logp - _logsumexp_rows(logp)[:, None])
    elif isinstance(model, MarginModel):
        if X.shape[1] != model.dim:
            raise ValueError(
                f"latent dimension {X.shape[1]} != model dimension {model.dim}"
            )
        probs = platt_probability(model, model.decision_values(X))
        posterior = probs / probs.sum(axis=1, keepdims=True)
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")

    assignment = posterior.argmax(axis=1)  # first max wins: lowest index on ties
    p_assigned = posterior[np.arange(len(posterior)), assignment]
    capped = p_assigned >= 1.0 - 1e-12
    denom = np.where(capped, 1.0, 1.0 - p_assigned)
    ratio = np.where(capped, RATIO_CAP, p_assigned / denom)
    return MembershipTable(
        posterior=_frozen(posterior),
        assignment=_frozen(assignment.astype(np.int64)),
        likelihood_ratio=_frozen(ratio),
    )
