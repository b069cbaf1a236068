"""Reduced-form VAR estimation, moving-average coefficients and simulation.

Most routines operate on stacked arrays with arbitrary leading batch
dimensions, so the same code serves a single estimate and a bootstrap panel
of a thousand re-estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateCovarianceError,
    SingularDesignError,
    StabilityError,
)

Deterministics = Literal["none", "intercept", "intercept+trend"]

_DET_COUNT = {"none": 0, "intercept": 1, "intercept+trend": 2}
STABILITY_THRESHOLD = 1.0 - 1e-8
DEFAULT_BURN_IN = 100


@dataclass(frozen=True)
class TimeSeriesData:
    """T x n panel of observations."""

    values: np.ndarray
    variable_names: tuple[str, ...] = ()
    dates: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ConfigError("values must be a T x n matrix")
        if not np.all(np.isfinite(values)):
            raise ConfigError("data contain non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        names = tuple(self.variable_names) or tuple(f"y{i + 1}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise ConfigError("one variable name per column is required")
        object.__setattr__(self, "variable_names", names)
        if self.dates is not None and len(self.dates) != values.shape[0]:
            raise ConfigError("dates must align with the rows of values")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class VarSpec:
    p: int
    deterministics: Deterministics = "intercept"
    n: int | None = None

    def __post_init__(self):
        if self.p < 0:
            raise ConfigError("lag order p must be >= 0")
        if self.deterministics not in _DET_COUNT:
            raise ConfigError(f"unknown deterministics {self.deterministics!r}")
        if self.n is not None and self.n < 1:
            raise ConfigError("n must be >= 1")

    @property
    def n_det(self) -> int:
        return _DET_COUNT[self.deterministics]


@dataclass(frozen=True)
class VarDGP:
    """Parameters of a Gaussian VAR used as a data-generating process."""

    coefs: np.ndarray  # (p, n, n); coefs[j] multiplies y_{t-j-1}
    sigma_u: np.ndarray
    intercept: np.ndarray | None = None
    trend: np.ndarray | None = None

    def __post_init__(self):
        sigma = np.asarray(self.sigma_u, dtype=float)
        n = sigma.shape[0]
        coefs = np.asarray(self.coefs, dtype=float).reshape(-1, n, n)
        object.__setattr__(self, "coefs", coefs)
        object.__setattr__(self, "sigma_u", sigma)

    @property
    def n(self) -> int:
        return self.sigma_u.shape[0]

    @property
    def p(self) -> int:
        return self.coefs.shape[0]

    @property
    def sigma_tr(self) -> np.ndarray:
        return cholesky_lower(self.sigma_u)


@dataclass(frozen=True)
class VarEstimate:
    """OLS estimate of an n-variable VAR(p)."""

    coefs: np.ndarray  # (p, n, n)
    sigma_u: np.ndarray
    sigma_tr: np.ndarray
    residuals: np.ndarray
    spec: VarSpec
    intercept: np.ndarray | None = None
    trend: np.ndarray | None = None
    xtx_inv: np.ndarray | None = field(default=None, repr=False)
    n_obs: int = 0

    @property
    def n(self) -> int:
        return self.sigma_u.shape[0]

    @property
    def p(self) -> int:
        return self.coefs.shape[0]

    @property
    def T(self) -> int:
        """Effective sample size (observations after the p initial lags)."""
        return self.residuals.shape[0]


@dataclass(frozen=True)
class VmaCoefficients:
    matrices: np.ndarray  # (H+1, n, n)

    def __getitem__(self, h: int) -> np.ndarray:
        return self.matrices[h]

    def __len__(self) -> int:
        return self.matrices.shape[0]


# ---------------------------------------------------------------------------
# Linear algebra helpers


def cholesky_lower(sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular Cholesky factor with a strictly positive diagonal."""
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError("innovation covariance is not positive definite") from exc


def companion_matrix(coefs: np.ndarray) -> np.ndarray:
    coefs = np.asarray(coefs, dtype=float)
    p, n, _ = coefs.shape
    if p == 0:
        return np.zeros((n, n))
    comp = np.zeros((n * p, n * p))
    comp[:n] = np.concatenate(list(coefs), axis=1)
    comp[n:, : n * (p - 1)] = np.eye(n * (p - 1))
    return comp


def spectral_radius(coefs: np.ndarray) -> float:
    comp = companion_matrix(coefs)
    return float(np.max(np.abs(np.linalg.eigvals(comp)))) if comp.size else 0.0


def vma_arrays(coefs: np.ndarray, H: int) -> np.ndarray:
    """C_0..C_H for stacked coefficient arrays of shape (..., p, n, n)."""
    coefs = np.asarray(coefs, dtype=float)
    *batch, p, n, _ = coefs.shape
    out = np.zeros((*batch, H + 1, n, n))
    out[..., 0, :, :] = np.eye(n)
    for h in range(1, H + 1):
        acc = out[..., h, :, :]
        for j in range(1, min(h, p) + 1):
            acc += coefs[..., j - 1, :, :] @ out[..., h - j, :, :]
    return out


# ---------------------------------------------------------------------------
# Estimation


def _design(Y: np.ndarray, p: int, n_det: int) -> tuple[np.ndarray, np.ndarray]:
    """Regressor matrix [deterministics, y_{t-1}, ..., y_{t-p}] and targets."""
    *batch, T, n = Y.shape
    T_eff = T - p
    cols = []
    if n_det >= 1:
        cols.append(np.ones((*batch, T_eff, 1)))
    if n_det >= 2:
        trend = np.arange(1, T_eff + 1, dtype=float)[:, None]
        cols.append(np.broadcast_to(trend, (*batch, T_eff, 1)))
    for j in range(1, p + 1):
        cols.append(Y[..., p - j : T - j, :])
    X = np.concatenate(cols, axis=-1) if cols else np.zeros((*batch, T_eff, 0))
    return X, Y[..., p:, :]


def ols_arrays(Y: np.ndarray, p: int, n_det: int):
    """Batched equation-by-equation OLS.

    Returns a dict with ``coefs`` (..., p, n, n), ``det`` (..., n_det, n),
    ``resid``, ``sigma_u`` and ``xtx_inv`` plus a boolean ``singular`` mask
    flagging batch members whose regressors are (numerically) rank deficient.
    """
    Y = np.asarray(Y, dtype=float)
    *batch, T, n = Y.shape
    X, Yt = _design(Y, p, n_det)
    k = X.shape[-1]
    T_eff = T - p
    if T_eff <= k:
        raise SingularDesignError(f"T - p = {T_eff} observations for {k} regressors per equation")
    xtx = np.swapaxes(X, -1, -2) @ X
    xty = np.swapaxes(X, -1, -2) @ Yt
    if k:
        # Scale-free conditioning check on the normalized cross-product.
        d = np.sqrt(np.einsum("...ii->...i", xtx))
        d = np.where(d > 0, d, 1.0)
        corr = xtx / (d[..., :, None] * d[..., None, :])
        ev = np.linalg.eigvalsh(corr)
        singular = ev[..., 0] <= 1e-12 * np.maximum(ev[..., -1], 1e-300)
        safe = np.where(singular[..., None, None], np.eye(k), xtx)
        xtx_inv = np.linalg.inv(safe)
        B = xtx_inv @ xty
    else:
        singular = np.zeros(tuple(batch), dtype=bool)
        xtx_inv = np.zeros((*batch, 0, 0))
        B = np.zeros((*batch, 0, n))
    resid = Yt - X @ B
    dof = T_eff - n_det
    sigma_u = np.swapaxes(resid, -1, -2) @ resid / dof
    sigma_u = 0.5 * (sigma_u + np.swapaxes(sigma_u, -1, -2))
    lag = B[..., n_det:, :]
    coefs = np.swapaxes(lag.reshape(*batch, p, n, n), -1, -2)
    return {
        "coefs": coefs,
        "det": B[..., :n_det, :],
        "resid": resid,
        "sigma_u": sigma_u,
        "xtx_inv": xtx_inv,
        "singular": singular,
    }


def estimate_ols(data: TimeSeriesData | np.ndarray, spec: VarSpec, *, allow_degenerate: bool = False) -> VarEstimate:
    """Estimate a VAR(p) by OLS.

    The innovation covariance uses the divisor ``T - p - n_det``. With
    ``allow_degenerate`` a singular covariance is tolerated and the Cholesky
    factor is returned as NaN instead of raising.
    """
    values = data.values if isinstance(data, TimeSeriesData) else np.asarray(data, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    T, n = values.shape
    if spec.n is not None and spec.n != n:
        raise ConfigError(f"spec expects n={spec.n} variables, data have {n}")
    if T <= n * spec.p + spec.n_det + spec.p:
        raise SingularDesignError("sample too short for the requested lag order")
    res = ols_arrays(values, spec.p, spec.n_det)
    if res["singular"]:
        raise SingularDesignError("regressor matrix does not have full column rank")
    sigma_u = res["sigma_u"]
    scale = max(float(np.max(np.abs(values))), 1.0) ** 2
    ev = np.linalg.eigvalsh(sigma_u)
    degenerate = ev[0] <= 1e-12 * max(ev[-1], scale * 1e-300) or ev[-1] <= 1e-24 * scale
    if degenerate and not allow_degenerate:
        raise DegenerateCovarianceError("innovation covariance is not positive definite")
    sigma_tr = np.full((n, n), np.nan) if degenerate else cholesky_lower(sigma_u)
    det = res["det"]
    return VarEstimate(
        coefs=res["coefs"],
        sigma_u=sigma_u,
        sigma_tr=sigma_tr,
        residuals=res["resid"],
        spec=spec,
        intercept=det[0] if spec.n_det >= 1 else None,
        trend=det[1] if spec.n_det >= 2 else None,
        xtx_inv=res["xtx_inv"],
        n_obs=T,
    )


def bic_table(data: TimeSeriesData, p_max: int, deterministics: Deterministics = "intercept") -> list[dict]:
    """BIC for p = 0..p_max on a common estimation sample."""
    values = data.values
    n = data.n
    rows = []
    for p in range(p_max + 1):
        Y = values[p_max - p :]
        res = ols_arrays(Y, p, _DET_COUNT[deterministics])
        T_eff = Y.shape[0] - p
        resid = res["resid"]
        sigma_ml = resid.T @ resid / T_eff
        k = n * (n * p + _DET_COUNT[deterministics])
        sign, logdet = np.linalg.slogdet(sigma_ml)
        bic = logdet + k * np.log(T_eff) / T_eff if sign > 0 else np.inf
        rows.append({"p": p, "bic": float(bic), "T_eff": T_eff})
    return rows


# ---------------------------------------------------------------------------
# Moving-average representation and impulse responses


def vma_coefficients(est: VarEstimate | VarDGP, H: int) -> VmaCoefficients:
    if H < 0:
        raise ConfigError("H must be >= 0")
    return VmaCoefficients(vma_arrays(est.coefs, H))


def structural_irf(est: VarEstimate | VarDGP, q: np.ndarray, H: int) -> np.ndarray:
    """n x (H+1) responses to the shock rotated by the unit vector ``q``."""
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-10:
        raise ConfigError("q must have unit length")
    C = vma_arrays(est.coefs, H)
    return (C @ (est.sigma_tr @ q)).T


# ---------------------------------------------------------------------------
# Simulation


def _unconditional_mean(coefs: np.ndarray, intercept: np.ndarray | None) -> np.ndarray:
    n = coefs.shape[-1]
    if intercept is None:
        return np.zeros(n)
    lag_sum = np.eye(n) - coefs.sum(axis=0)
    try:
        return np.linalg.solve(lag_sum, intercept)
    except np.linalg.LinAlgError:
        return np.zeros(n)


def simulate_paths(
    coefs: np.ndarray,
    chol: np.ndarray,
    shocks: np.ndarray,
    T: int,
    intercept: np.ndarray | None = None,
    trend: np.ndarray | None = None,
    burn_in: int = DEFAULT_BURN_IN,
) -> np.ndarray:
    """Run the VAR recursion on pre-drawn standard normal shocks.

    ``shocks`` has shape (..., burn_in + T, n). The p pre-sample values sit at
    the unconditional mean; the first ``burn_in`` generated periods are
    discarded. The trend regressor is indexed so that the first retained
    observation after the p initial lags has trend value one, matching the
    OLS design.
    """
    coefs = np.asarray(coefs, dtype=float)
    p, n, _ = coefs.shape
    *batch, total, _ = shocks.shape
    if total != burn_in + T:
        raise ConfigError("shock array length must equal burn_in + T")
    u = shocks @ np.asarray(chol).T
    mu = _unconditional_mean(coefs, intercept)
    y = np.empty((*batch, p + total, n))
    y[..., :p, :] = mu
    const = np.zeros(n) if intercept is None else np.asarray(intercept, dtype=float)
    for t in range(total):
        acc = const + u[..., t, :]
        if trend is not None:
            acc = acc + trend * (t - burn_in - p + 1)
        for j in range(p):
            acc = acc + y[..., p + t - j - 1, :] @ coefs[j].T
        y[..., p + t, :] = acc
    return y[..., p + burn_in :, :]


def simulate_var(
    process: VarEstimate | VarDGP,
    T: int,
    rng: np.random.Generator,
    *,
    burn_in: int = DEFAULT_BURN_IN,
    allow_explosive: bool = False,
) -> TimeSeriesData:
    """Draw a Gaussian sample of length T from a VAR."""
    if not allow_explosive and process.p > 0 and spectral_radius(process.coefs) >= STABILITY_THRESHOLD:
        raise StabilityError("companion matrix has spectral radius >= 1")
    shocks = rng.standard_normal((burn_in + T, process.n))
    y = simulate_paths(
        process.coefs,
        cholesky_lower(process.sigma_u),
        shocks,
        T,
        intercept=getattr(process, "intercept", None),
        trend=getattr(process, "trend", None),
        burn_in=burn_in,
    )
    return TimeSeriesData(y)


def check_stable(coefs: np.ndarray) -> None:
    if coefs.shape[0] > 0 and spectral_radius(coefs) >= STABILITY_THRESHOLD:
        raise StabilityError("companion matrix has spectral radius >= 1")


def as_dgp(est: VarEstimate) -> VarDGP:
    return VarDGP(est.coefs, est.sigma_u, est.intercept, est.trend)


def stack_coefs(mats: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(m, dtype=float) for m in mats]) if len(mats) else np.zeros((0, 0, 0))
