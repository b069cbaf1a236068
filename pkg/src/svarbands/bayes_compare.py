"""Acceptance sampler for sign-restricted VARs under a flat-normal / inverse-Wishart posterior.

Reduced-form draws come from the conjugate posterior of the improper prior
``p(A, Sigma) ~ |Sigma|^{-(n+1)/2}``; rotation vectors are uniform on the
(zero-restricted) sphere; a draw is kept when every sign restriction holds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import AcceptanceRateError, ConfigError
from .restrictions import RestrictionSet, make_layout, theta_paired
from .var_core import TimeSeriesData, VarSpec, estimate_ols, ols_arrays

MAX_ATTEMPTS = 10_000_000
PROBE_ATTEMPTS = 100_000
MIN_RATE = 1e-4
MIN_BAND_DRAWS = 100


@dataclass(frozen=True)
class PosteriorDraws:
    coefs: np.ndarray  # (N, p, n, n)
    sigma_u: np.ndarray  # (N, n, n)
    q: np.ndarray  # (N, n)
    theta: np.ndarray  # (N, n_targets)
    restrictions: RestrictionSet = field(repr=False)
    attempts: int = 0
    complete: bool = True

    def __len__(self) -> int:
        return self.q.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return len(self) / self.attempts if self.attempts else float("nan")


def _posterior_batch(est_B, xtx_chol, scale, df, size, n_det, p, n, rng):
    """Joint draws of (coefs, intercepts, Sigma)."""
    sig = stats.invwishart.rvs(df=df, scale=scale, size=size, random_state=rng)
    sig = np.asarray(sig).reshape(size, n, n)
    chol = np.linalg.cholesky(sig)
    Z = rng.standard_normal((size, est_B.shape[0], n))
    B = est_B + xtx_chol @ Z @ np.swapaxes(chol, -1, -2)
    lag = B[:, n_det:, :]
    coefs = np.swapaxes(lag.reshape(size, p, n, n), -1, -2)
    return coefs, sig, chol


def posterior_sample(
    data: TimeSeriesData | np.ndarray,
    spec: VarSpec,
    restr: RestrictionSet,
    n_draws: int,
    rng: np.random.Generator | None = None,
    *,
    seed: int | None = None,
    batch: int = 2000,
    max_attempts: int = MAX_ATTEMPTS,
) -> PosteriorDraws:
    """Collect ``n_draws`` accepted draws.

    Batch ``b`` uses the stream ``default_rng([seed, b])`` so results depend
    only on the seed. Raises AcceptanceRateError if fewer than one in 10^4
    proposals is accepted over the first 10^5.
    """
    if n_draws < 1:
        raise ConfigError("n_draws must be positive")
    if seed is None:
        seed = int((rng or np.random.default_rng()).integers(2**63 - 1))
    values = data.values if isinstance(data, TimeSeriesData) else np.asarray(data, dtype=float)
    est = estimate_ols(values, spec)
    n, p, n_det = est.n, est.p, spec.n_det
    layout = make_layout(n, p, restr, require_sign=False)
    z = restr.n_zero
    res = ols_arrays(values, p, n_det)
    B_hat = np.concatenate([res["det"], np.swapaxes(res["coefs"], -1, -2).reshape(p * n, n)], axis=0)
    xtx_chol = np.linalg.cholesky(res["xtx_inv"]) if B_hat.shape[0] else np.zeros((0, 0))
    scale = res["resid"].T @ res["resid"]
    df = est.T
    if df < n:
        raise ConfigError("too few observations for the inverse-Wishart posterior")

    acc = {"coefs": [], "sigma": [], "q": [], "theta": []}
    n_acc = 0
    attempts = 0
    b = 0
    while n_acc < n_draws and attempts < max_attempts:
        size = min(batch, max_attempts - attempts)
        brng = np.random.default_rng([seed, b])
        coefs, sig, chol = _posterior_batch(B_hat, xtx_chol, scale, df, size, n_det, p, n, brng)
        qt = brng.standard_normal((size, n - z))
        q = np.zeros((size, n))
        q[:, z:] = qt / np.linalg.norm(qt, axis=1, keepdims=True)
        if layout.r:
            phi = layout.phi_q(coefs, chol)
            ok = np.all(layout.stilde(q) @ phi[..., None] >= 0, axis=(1, 2))
        else:
            ok = np.ones(size, dtype=bool)
        b += 1
        used = size
        if ok.any():
            idx = np.flatnonzero(ok)[: n_draws - n_acc]
            if n_acc + idx.size >= n_draws:
                used = int(idx[-1]) + 1  # proposals past the last kept draw were never needed
            acc["coefs"].append(coefs[idx])
            acc["sigma"].append(sig[idx])
            acc["q"].append(q[idx])
            thetas = [
                theta_paired(phi_t, t, q[idx])
                for phi_t, t in zip(layout.phi_theta(coefs[idx], chol[idx]), restr.targets)
            ]
            acc["theta"].append(np.stack(thetas, axis=1) if thetas else np.zeros((idx.size, 0)))
            n_acc += idx.size
        attempts += used
        probe = min(PROBE_ATTEMPTS, max_attempts)
        if attempts >= probe and attempts - used < probe and n_acc / attempts < MIN_RATE:
            raise AcceptanceRateError(
                f"acceptance rate {n_acc / attempts:.2e} over the first {attempts} proposals is below {MIN_RATE:g}"
            )
    complete = n_acc >= n_draws
    if not complete:
        warnings.warn(f"attempt cap reached with {n_acc} of {n_draws} accepted draws", RuntimeWarning, stacklevel=2)
    cat = lambda k, shape: np.concatenate(acc[k]) if acc[k] else np.zeros(shape)  # noqa: E731
    return PosteriorDraws(
        coefs=cat("coefs", (0, p, n, n)),
        sigma_u=cat("sigma", (0, n, n)),
        q=cat("q", (0, n)),
        theta=cat("theta", (0, len(restr.targets))),
        restrictions=restr,
        attempts=attempts,
        complete=complete,
    )


def verify_draws(draws: PosteriorDraws) -> bool:
    """Recheck every accepted draw against the sign restrictions."""
    if len(draws) == 0:
        return True
    n = draws.q.shape[1]
    layout = make_layout(n, draws.coefs.shape[1], draws.restrictions, require_sign=False)
    if not layout.r:
        return True
    phi = layout.phi_q(draws.coefs, np.linalg.cholesky(draws.sigma_u))
    return bool(np.all(layout.stilde(draws.q) @ phi[..., None] >= 0))


def credible_band(draws: PosteriorDraws | np.ndarray, level: float = 0.90, targets=None):
    """Pointwise equal-tailed credible intervals, one (lo, hi) pair per target."""
    theta = draws.theta if isinstance(draws, PosteriorDraws) else np.asarray(draws, dtype=float)
    if theta.ndim == 1:
        theta = theta[:, None]
    if targets is not None:
        theta = theta[:, list(targets)]
    if theta.shape[0] < MIN_BAND_DRAWS:
        raise ConfigError(f"credible bands need at least {MIN_BAND_DRAWS} accepted draws, got {theta.shape[0]}")
    if not 0.0 < level <= 1.0:
        raise ConfigError("level must lie in (0, 1]")
    tail = (1.0 - level) / 2.0
    lo = np.quantile(theta, tail, axis=0)
    hi = np.quantile(theta, 1.0 - tail, axis=0)
    return lo, hi
