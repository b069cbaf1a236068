"""Parametric bootstrap for the covariance of the reduced-form response vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, RankDeficientCovarianceError, SingularDesignError
from .restrictions import ReducedFormStack, RestrictionSet, build_phi
from .var_core import DEFAULT_BURN_IN, VarEstimate, check_stable, ols_arrays, simulate_paths

RANK_TOL = 1e-12


@dataclass(frozen=True)
class BootstrapConfig:
    n_lambda: int = 1000
    seed: int = 0
    innovations: str = "gaussian"
    burn_in: int = DEFAULT_BURN_IN
    allow_explosive: bool = False

    def __post_init__(self):
        if self.n_lambda < 2:
            raise ConfigError("n_lambda must be at least 2")
        if self.innovations != "gaussian":
            raise ConfigError("only Gaussian innovations are supported")


@dataclass(frozen=True)
class BootstrapResult:
    lambda_qq: np.ndarray
    lambda_theta: tuple[np.ndarray, ...]
    L: np.ndarray
    joint: np.ndarray  # covariance of [phi_q, phi_theta_1, ...]
    redraws: int


def _replications(est: VarEstimate, stack: ReducedFormStack, cfg: BootstrapConfig) -> tuple[np.ndarray, int]:
    """Bootstrap draws of the joint vector [phi_q, phi_theta...], one row each."""
    n, p = est.n, est.p
    T_obs = est.n_obs or est.T + p
    layout = stack.layout
    chol = np.linalg.cholesky(est.sigma_u)
    total = cfg.burn_in + T_obs
    n_det = est.spec.n_det

    def run(seeds):
        shocks = np.stack([np.random.default_rng(s).standard_normal((total, n)) for s in seeds])
        Y = simulate_paths(est.coefs, chol, shocks, T_obs, est.intercept, est.trend, cfg.burn_in)
        res = ols_arrays(Y, p, n_det)
        sig = res["sigma_u"]
        ok = ~res["singular"] & np.all(np.isfinite(sig), axis=(-1, -2))
        ev = np.linalg.eigvalsh(np.where(ok[:, None, None], sig, np.eye(n)))
        ok &= ev[:, 0] > 1e-12 * np.maximum(ev[:, -1], 1e-300)
        sig = np.where(ok[:, None, None], sig, np.eye(n))
        tr = np.linalg.cholesky(sig)
        parts = [layout.phi_q(res["coefs"], tr)] + layout.phi_theta(res["coefs"], tr)
        return np.concatenate(parts, axis=-1), ok

    draws, ok = run([[cfg.seed, b] for b in range(cfg.n_lambda)])
    redraws = 0
    attempt = 1
    while not ok.all():
        bad = np.flatnonzero(~ok)
        redraws += bad.size
        if redraws > 9 * cfg.n_lambda:
            raise SingularDesignError("too many bootstrap replications with a singular design")
        new, new_ok = run([[cfg.seed, int(b), attempt] for b in bad])
        draws[bad] = new
        ok[bad] = new_ok
        attempt += 1
    return draws, redraws


def bootstrap_lambda(est: VarEstimate, restr: RestrictionSet | ReducedFormStack, cfg: BootstrapConfig | None = None):
    """Estimate Lambda_qq and Lambda_theta_theta by a Gaussian parametric bootstrap.

    Each replication simulates a sample of the original length from ``est``,
    re-estimates the VAR and recomputes the response vectors. The covariance
    is the average outer product of ``sqrt(T)(phi* - phi_hat)``.
    """
    cfg = cfg or BootstrapConfig()
    stack = restr if isinstance(restr, ReducedFormStack) else build_phi(est, restr)
    if not cfg.allow_explosive:
        check_stable(est.coefs)
    draws, redraws = _replications(est, stack, cfg)
    center = np.concatenate([stack.phi_q, *stack.phi_theta])
    dev = np.sqrt(stack.T) * (draws - center)
    joint = dev.T @ dev / dev.shape[0]
    joint = 0.5 * (joint + joint.T)
    m = stack.m
    lam_qq = joint[:m, :m]
    ev = np.linalg.eigvalsh(lam_qq)
    if ev[0] <= RANK_TOL * max(ev[-1], 1e-300):
        raise RankDeficientCovarianceError(
            "bootstrap covariance of phi_q is singular; inference on q requires a positive definite covariance"
        )
    L = np.linalg.cholesky(lam_qq)
    thetas = []
    pos = m
    for phi in stack.phi_theta:
        k = phi.shape[0]
        thetas.append(joint[pos : pos + k, pos : pos + k])
        pos += k
    return BootstrapResult(lam_qq, tuple(thetas), L, joint, redraws)


def attach_covariance(est: VarEstimate, restr: RestrictionSet, cfg: BootstrapConfig | None = None) -> ReducedFormStack:
    """Build the stack at ``est`` and fill in its bootstrap covariances."""
    stack = build_phi(est, restr)
    res = bootstrap_lambda(est, stack, cfg)
    return stack.with_covariance(res.lambda_qq, res.lambda_theta, res.L)
