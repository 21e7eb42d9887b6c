"""Variational Bayesian Gaussian mixture with a stick-breaking weight prior.

Coordinate-ascent variational inference for a truncated Dirichlet-process
mixture of Gaussians: Beta posteriors on the stick lengths, Normal-Wishart
posteriors on (mean, precision). Unused components lose their mixing mass,
so the effective number of components is inferred from the data and only an
upper limit has to be supplied.

Priors are centered on the data: prior mean = empirical mean, prior scale =
empirical covariance (plus a small diagonal regularizer that keeps every
scale matrix positive-definite), prior mean-precision 1, prior degrees of
freedom = dimensionality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import betaln, digamma, gammaln, logsumexp

if TYPE_CHECKING:
    from .clustering import ClusterConfig

__all__ = ["MixtureState", "ClusteringError", "fit_bgm", "assign_labels"]

_LOG_2PI = math.log(2.0 * math.pi)


class ClusteringError(ValueError):
    """Raised when a mixture fit cannot produce a valid state."""


@dataclass(frozen=True)
class MixtureState:
    """Fitted variational mixture posterior.

    ``covariances[k]`` is the inverse of the posterior-expected precision of
    component k; its smallest eigenvalue is bounded below by
    ``reg_scale / degrees_of_freedom[k]``.
    """

    k_max: int
    weights: np.ndarray            # (K,) expected stick-breaking proportions, sum 1
    means: np.ndarray              # (K, D)
    covariances: np.ndarray        # (K, D, D) symmetric positive-definite
    responsibilities: np.ndarray   # (n, K) row-stochastic
    elbo_trace: Tuple[float, ...]  # one value per variational iteration
    effective_components: int      # components owning >= 1 argmax point
    degrees_of_freedom: np.ndarray
    mean_precision: np.ndarray
    reg_scale: float               # diagonal added to the prior scale matrix
    converged: bool
    n_iter: int


@dataclass
class _Posterior:
    """Mutable mid-fit posterior parameters."""

    stick_a: np.ndarray       # (K,) Beta first parameter
    stick_b: np.ndarray       # (K,) Beta second parameter
    beta: np.ndarray          # (K,) mean-precision scaling
    means: np.ndarray         # (K, D)
    nu: np.ndarray            # (K,) Wishart degrees of freedom
    scale_inv: np.ndarray     # (K, D, D) inverse scale matrices
    chol: Optional[np.ndarray] = field(default=None)               # chol(scale_inv)
    log_det_scale_inv: Optional[np.ndarray] = field(default=None)  # (K,)


def _exclusive_tail_sums(nk: np.ndarray) -> np.ndarray:
    """For each k, the total mass of components after k."""
    return np.concatenate((np.cumsum(nk[::-1])[-2::-1], [0.0]))


def _weighted_moments(X: np.ndarray, resp: np.ndarray):
    """Per-component soft counts, means and scatter matrices."""
    nk = resp.sum(axis=0) + 10.0 * np.finfo(resp.dtype).eps
    xk = (resp.T @ X) / nk[:, None]
    K = resp.shape[1]
    D = X.shape[1]
    sk = np.empty((K, D, D))
    for k in range(K):
        diff = X - xk[k]
        sk[k] = ((resp[:, k] * diff.T) @ diff) / nk[k]
    return nk, xk, sk


def _m_step(
    X: np.ndarray,
    resp: np.ndarray,
    gamma0: float,
    beta0: float,
    m0: np.ndarray,
    nu0: float,
    scale_inv0: np.ndarray,
) -> _Posterior:
    nk, xk, sk = _weighted_moments(X, resp)
    stick_a = 1.0 + nk
    stick_b = gamma0 + _exclusive_tail_sums(nk)
    beta = beta0 + nk
    means = (beta0 * m0 + nk[:, None] * xk) / beta[:, None]
    nu = nu0 + nk
    K, D = xk.shape
    scale_inv = np.empty((K, D, D))
    for k in range(K):
        dk = xk[k] - m0
        scale_inv[k] = scale_inv0 + nk[k] * sk[k] + (beta0 * nk[k] / beta[k]) * np.outer(dk, dk)
    post = _Posterior(stick_a, stick_b, beta, means, nu, scale_inv)
    _refresh_cholesky(post)
    return post


def _refresh_cholesky(post: _Posterior) -> None:
    try:
        post.chol = np.linalg.cholesky(post.scale_inv)
    except np.linalg.LinAlgError as exc:
        raise ClusteringError(
            "could not reach positive-definite covariances after regularization"
        ) from exc
    diag = np.einsum("kii->ki", post.chol)
    post.log_det_scale_inv = 2.0 * np.sum(np.log(diag), axis=1)


def _expected_log_weights(post: _Posterior) -> np.ndarray:
    dig_sum = digamma(post.stick_a + post.stick_b)
    dig_a = digamma(post.stick_a) - dig_sum
    dig_b = digamma(post.stick_b) - dig_sum
    return dig_a + np.concatenate(([0.0], np.cumsum(dig_b)[:-1]))


def _e_step(X: np.ndarray, post: _Posterior) -> np.ndarray:
    """Log responsibilities under the current posterior."""
    n, D = X.shape
    K = post.means.shape[0]
    log_rho = np.empty((n, K))
    e_log_pi = _expected_log_weights(post)
    for k in range(K):
        # E[log |Lambda_k|] and E[(x-mu)^T Lambda (x-mu)] under Normal-Wishart.
        e_log_det = (
            np.sum(digamma(0.5 * (post.nu[k] + 1.0 - np.arange(1, D + 1))))
            + D * math.log(2.0)
            - post.log_det_scale_inv[k]
        )
        y = solve_triangular(post.chol[k], (X - post.means[k]).T, lower=True)
        quad = post.nu[k] * np.sum(y * y, axis=0)
        log_rho[:, k] = e_log_pi[k] + 0.5 * (
            e_log_det - D * _LOG_2PI - D / post.beta[k] - quad
        )
    return log_rho - logsumexp(log_rho, axis=1, keepdims=True)


def _lower_bound(post: _Posterior, log_resp: np.ndarray) -> float:
    """Collapsed evidence lower bound, constants dropped.

    Valid right after an M-step, where the conjugate updates make the
    cross-entropy terms collapse into the posterior log-normalizers. Exact
    coordinate ascent keeps this sequence non-decreasing.
    """
    D = post.means.shape[1]
    resp = np.exp(log_resp)
    entropy = -float(np.sum(np.where(resp > 0.0, resp * log_resp, 0.0)))
    # log normalizer of each Wishart posterior (pi-power constants dropped).
    half_log_det_scale = -0.5 * post.log_det_scale_inv
    log_wishart = float(
        np.sum(
            -(
                post.nu * half_log_det_scale
                + post.nu * D * 0.5 * math.log(2.0)
                + np.sum(
                    gammaln(0.5 * (post.nu[None, :] - np.arange(D)[:, None])), axis=0
                )
            )
        )
    )
    log_beta_norm = float(-np.sum(betaln(post.stick_a, post.stick_b)))
    return (
        entropy
        - log_wishart
        - log_beta_norm
        - 0.5 * D * float(np.sum(np.log(post.beta)))
    )


def _kmeans_responsibilities(
    X: np.ndarray, K: int, rng: np.random.Generator, k_seed: Optional[int] = None
) -> np.ndarray:
    """One-hot responsibilities from a short k-means run with ++ seeding.

    ``k_seed`` caps the number of seeded centers; trailing components start
    empty and may still be activated by later variational steps.
    """
    n = X.shape[0]
    k_eff = min(K if k_seed is None else k_seed, n)
    centers = np.empty((k_eff, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k_eff):
        total = d2.sum()
        if total <= 0.0:
            centers[j:] = X[rng.integers(n, size=k_eff - j)]
            break
        centers[j] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    labels = None
    for _ in range(20):
        dists = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dists, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k_eff):
            member = labels == j
            if member.any():
                centers[j] = X[member].mean(axis=0)
    resp = np.zeros((n, K))
    resp[np.arange(n), labels] = 1.0
    return resp


def _random_responsibilities(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    resp = rng.random((X.shape[0], K))
    return resp / resp.sum(axis=1, keepdims=True)


def _merged_responsibilities(X: np.ndarray, K: int) -> np.ndarray:
    """Everything in the first component: the no-split candidate solution."""
    resp = np.zeros((X.shape[0], K))
    resp[:, 0] = 1.0
    return resp


def fit_bgm(points: np.ndarray, k_max: int, cfg: "ClusterConfig") -> MixtureState:
    """Fit the stick-breaking variational mixture to an (n, D) point matrix.

    Runs ``cfg.n_init`` restarts and keeps the run with the best final lower
    bound. The restarts ladder across component scales so the bound can
    arbitrate between split and merged basins: k-means seeding with k_max
    centers, then the merged single-component candidate, then k-means with
    k_max/2 centers, then random responsibilities. Iterates until the
    lower-bound change drops below ``cfg.elbo_tol`` or ``cfg.max_iters`` is
    reached.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ClusteringError(f"points must be a non-empty 2-D matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ClusteringError("points contain non-finite values")
    if k_max < 1:
        raise ClusteringError(f"k_max must be >= 1, got {k_max}")

    n, D = X.shape
    m0 = X.mean(axis=0)
    emp_cov = np.cov(X.T, ddof=1) if n > 1 else np.zeros((D, D))
    emp_cov = np.atleast_2d(emp_cov)
    reg = 1e-6 * float(np.trace(emp_cov)) / D
    if not reg > 0.0:
        reg = 1e-6
    scale_inv0 = emp_cov + reg * np.eye(D)
    beta0 = 1.0
    nu0 = float(D)
    gamma0 = cfg.weight_concentration_prior
    if gamma0 is None:
        gamma0 = 1.0 / k_max

    half = k_max // 2
    best: Optional[Tuple[float, _Posterior, List[float], bool, int]] = None
    for restart in range(max(1, cfg.n_init)):
        rng = np.random.default_rng([cfg.seed, restart])
        if restart == 0:
            resp = _kmeans_responsibilities(X, k_max, rng)
        elif restart == 1:
            resp = _merged_responsibilities(X, k_max)
        elif restart == 2 and 2 <= half < k_max:
            resp = _kmeans_responsibilities(X, k_max, rng, k_seed=half)
        else:
            resp = _random_responsibilities(X, k_max, rng)
        post = _m_step(X, resp, gamma0, beta0, m0, nu0, scale_inv0)
        trace: List[float] = []
        prev = -np.inf
        converged = False
        for _ in range(cfg.max_iters):
            log_resp = _e_step(X, post)
            post = _m_step(X, np.exp(log_resp), gamma0, beta0, m0, nu0, scale_inv0)
            elbo = _lower_bound(post, log_resp)
            trace.append(elbo)
            if abs(elbo - prev) < cfg.elbo_tol:
                converged = True
                break
            prev = elbo
        final = trace[-1] if trace else -np.inf
        if best is None or final > best[0]:
            best = (final, post, trace, converged, len(trace))

    _, post, trace, converged, n_iter = best
    log_resp = _e_step(X, post)
    resp = np.exp(log_resp)
    resp /= resp.sum(axis=1, keepdims=True)

    frac = post.stick_a / (post.stick_a + post.stick_b)
    rest = post.stick_b / (post.stick_a + post.stick_b)
    weights = frac * np.concatenate(([1.0], np.cumprod(rest[:-1])))
    weights /= weights.sum()
    covariances = post.scale_inv / post.nu[:, None, None]
    covariances = 0.5 * (covariances + np.transpose(covariances, (0, 2, 1)))

    arrays = dict(
        weights=weights,
        means=post.means.copy(),
        covariances=covariances,
        responsibilities=resp,
        degrees_of_freedom=post.nu.copy(),
        mean_precision=post.beta.copy(),
    )
    for arr in arrays.values():
        arr.setflags(write=False)
    return MixtureState(
        k_max=k_max,
        elbo_trace=tuple(trace),
        effective_components=int(np.unique(np.argmax(resp, axis=1)).size),
        reg_scale=reg,
        converged=converged,
        n_iter=n_iter,
        **arrays,
    )


def assign_labels(state: MixtureState) -> np.ndarray:
    """Hard labels: argmax responsibility, ties to the lower component index."""
    return np.argmax(state.responsibilities, axis=1)
