"""Restriction schema and the reduced-form objects entering the moment inequalities.

A sign restriction on the response of variable i at horizon h to the shock
``Sigma_tr q`` is linear in q with coefficient row ``[R_h Sigma_tr]_{i.}``,
where ``R_h = C_h`` (or ``C_0 + ... + C_h`` for cumulative responses). The
free entries of these rows are stacked into ``phi_q``; ``S~(q)`` maps
``phi_q`` back to the signed responses.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigError
from .var_core import VarDGP, VarEstimate, vma_arrays

ThetaKind = Literal["irf", "cumulative-irf", "variance-decomposition"]
_KINDS = ("irf", "cumulative-irf", "variance-decomposition")
ZERO_ROW_TOL = 1e-10


def _parse_sign(sign) -> int:
    if isinstance(sign, str):
        s = sign.replace(" ", "")
        if s in (">=0", ">=", "+", "pos", "positive", "geq"):
            return 1
        if s in ("<=0", "<=", "-", "neg", "negative", "leq"):
            return -1
        raise ConfigError(f"unknown sign {sign!r}")
    if sign in (1, -1):
        return int(sign)
    raise ConfigError(f"sign must be +1 or -1, got {sign!r}")


@dataclass(frozen=True)
class SignRestriction:
    """Response of ``variable`` (0-based) at ``horizon`` has sign ``sign``."""

    variable: int
    horizon: int
    sign: int = 1
    cumulative: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sign", _parse_sign(self.sign))
        if self.variable < 0 or self.horizon < 0:
            raise ConfigError("variable index and horizon must be non-negative")

    @property
    def key(self) -> tuple[int, int, bool]:
        return (self.variable, self.horizon, bool(self.cumulative))


@dataclass(frozen=True)
class EqualityRestriction:
    """Response of ``variable`` at ``horizon`` is restricted to equal zero."""

    variable: int
    horizon: int
    cumulative: bool = False

    @property
    def key(self) -> tuple[int, int, bool]:
        return (self.variable, self.horizon, bool(self.cumulative))


@dataclass(frozen=True)
class ThetaTarget:
    variable: int
    horizon: int = 0
    kind: ThetaKind = "irf"
    bounds: tuple[float, float] | None = None
    name: str | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown target kind {self.kind!r}")
        if self.horizon < 0 or self.variable < 0:
            raise ConfigError("target variable and horizon must be non-negative")
        if self.bounds is not None:
            lo, hi = float(self.bounds[0]), float(self.bounds[1])
            if not lo <= hi:
                raise ConfigError("target bounds must form a non-empty interval")
            object.__setattr__(self, "bounds", (lo, hi))

    @property
    def label(self) -> str:
        return self.name or f"{self.kind}[{self.variable},{self.horizon}]"

    @property
    def key(self) -> tuple[int, int, bool]:
        return (self.variable, self.horizon, self.kind == "cumulative-irf")


@dataclass(frozen=True)
class RestrictionSet:
    """Sign restrictions, zero restrictions on the first ``n_zero`` impact
    responses, optional equality rows, and the targets of inference."""

    sign: tuple[SignRestriction, ...] = ()
    n_zero: int = 0
    targets: tuple[ThetaTarget, ...] = ()
    equalities: tuple[EqualityRestriction, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sign", tuple(self.sign))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "equalities", tuple(self.equalities))
        if self.n_zero < 0:
            raise ConfigError("zero-restriction count must be >= 0")
        seen: dict[tuple, int] = {}
        for s in self.sign:
            if s.key in seen:
                if seen[s.key] != s.sign:
                    raise ConfigError(
                        f"opposing sign restrictions on response {s.key}; use a zero restriction instead"
                    )
                raise ConfigError(f"duplicate sign restriction on response {s.key}")
            seen[s.key] = s.sign
        eq_keys = set()
        for e in self.equalities:
            if e.key in seen or e.key in eq_keys:
                raise ConfigError(f"response {e.key} restricted more than once")
            eq_keys.add(e.key)

    @property
    def r(self) -> int:
        return len(self.sign)

    def validate(self, n: int) -> None:
        if self.n_zero >= n:
            raise ConfigError(f"zero-restriction count {self.n_zero} must be < n = {n}")
        for item in (*self.sign, *self.equalities, *self.targets):
            if item.variable >= n:
                raise ConfigError(f"variable index {item.variable} out of range for n = {n}")

    @property
    def max_horizon(self) -> int:
        hs = [x.horizon for x in (*self.sign, *self.equalities, *self.targets)]
        return max(hs, default=0)


def restricted_domain_dim(restr: RestrictionSet, n: int) -> int:
    """Dimension n - z of the sphere that q ranges over."""
    if restr.n_zero >= n:
        raise ConfigError("zero-restriction count must be below n")
    return n - restr.n_zero


def target_bounds(restr: RestrictionSet, target: ThetaTarget) -> tuple[float, float]:
    """Parameter space for a target.

    Explicit bounds win. Variance shares live in [0, 1]. An IRF target that
    coincides with a sign-restricted response inherits the half line implied
    by that restriction.
    """
    if target.bounds is not None:
        return target.bounds
    if target.kind == "variance-decomposition":
        return (0.0, 1.0)
    for s in restr.sign:
        if s.key == target.key:
            return (0.0, np.inf) if s.sign > 0 else (-np.inf, 0.0)
    return (-np.inf, np.inf)


# ---------------------------------------------------------------------------
# Stack layout


@dataclass(frozen=True)
class StackLayout:
    """Index bookkeeping that maps coefficient rows into phi_q."""

    n: int
    p: int
    n_zero: int
    keys: tuple[tuple[int, int, bool], ...]
    entry_index: np.ndarray  # (n_keys, n); position in phi_q or -1
    row_key: np.ndarray  # (r,)
    row_sign: np.ndarray  # (r,)
    eq_key: np.ndarray  # (r_eq,)
    target_keys: tuple[tuple[tuple[int, int, bool], ...], ...]
    max_horizon: int

    @property
    def m(self) -> int:
        return int(self.entry_index.max()) + 1 if self.entry_index.size else 0

    @property
    def r(self) -> int:
        return self.row_key.shape[0]

    def coefficient_rows(self, coefs: np.ndarray, sigma_tr: np.ndarray, keys) -> np.ndarray:
        """Rows [R_h Sigma_tr]_{i.} for each key; batched over leading dims."""
        C = vma_arrays(coefs, self.max_horizon)
        R = C @ sigma_tr[..., None, :, :]
        cum = np.cumsum(R, axis=-3) if any(k[2] for k in keys) else None
        out = []
        for i, h, c in keys:
            out.append((cum if c else R)[..., h, i, :])
        return np.stack(out, axis=-2) if out else np.zeros((*R.shape[:-3], 0, self.n))

    def phi_q(self, coefs: np.ndarray, sigma_tr: np.ndarray) -> np.ndarray:
        rows = self.coefficient_rows(coefs, sigma_tr, self.keys)
        mask = self.entry_index >= 0
        return rows[..., mask]

    def phi_theta(self, coefs: np.ndarray, sigma_tr: np.ndarray) -> list[np.ndarray]:
        out = []
        for keys in self.target_keys:
            rows = self.coefficient_rows(coefs, sigma_tr, keys)
            out.append(rows.reshape(*rows.shape[:-2], -1))
        return out

    def stilde(self, q: np.ndarray, include_eq: bool = False) -> np.ndarray:
        """S~(q) for q of shape (..., n); returns (..., r, m)."""
        q = np.asarray(q, dtype=float)
        keys = self.row_key
        signs = self.row_sign.astype(float)
        if include_eq:
            keys = np.concatenate([keys, self.eq_key])
            signs = np.concatenate([signs, np.ones(self.eq_key.shape[0])])
        out = np.zeros((*q.shape[:-1], keys.shape[0], self.m))
        for j, (k, s) in enumerate(zip(keys, signs)):
            idx = self.entry_index[k]
            active = idx >= 0
            out[..., j, idx[active]] = s * q[..., active]
        return out

    def row_norms(self, q: np.ndarray, include_eq: bool = False) -> np.ndarray:
        keys = self.row_key
        if include_eq:
            keys = np.concatenate([keys, self.eq_key])
        act = (self.entry_index[keys] >= 0).astype(float)  # (r, n)
        return np.sqrt(np.asarray(q, dtype=float) ** 2 @ act.T)


def _row_support(i: int, h: int, cumulative: bool, n: int, p: int, z: int) -> np.ndarray:
    """Columns k of [R_h Sigma_tr]_{i.} that are not structurally zero."""
    k = np.arange(n)
    keep = k >= z
    if h == 0 or p == 0:
        keep &= k <= i
    return keep


def make_layout(n: int, p: int, restr: RestrictionSet, require_sign: bool = True) -> StackLayout:
    restr.validate(n)
    if require_sign and restr.r == 0 and not restr.equalities:
        raise ConfigError("at least one sign restriction is required")
    z = restr.n_zero
    for s in (*restr.sign, *restr.equalities):
        if p == 0 and s.horizon > 0 and not s.cumulative:
            raise ConfigError(f"response at horizon {s.horizon} is identically zero in a VAR(0)")
        if not _row_support(s.variable, s.horizon, s.cumulative, n, p, z).any():
            raise ConfigError(f"restricted response {s.key} is identically zero given the zero restrictions")
    keys: list[tuple[int, int, bool]] = []
    for s in (*restr.sign, *restr.equalities):
        if s.key not in keys:
            keys.append(s.key)
    entry_index = -np.ones((len(keys), n), dtype=int)
    pos = 0
    for j, (i, h, c) in enumerate(keys):
        sup = _row_support(i, h, c, n, p, z)
        cnt = int(sup.sum())
        entry_index[j, sup] = np.arange(pos, pos + cnt)
        pos += cnt
    row_key = np.array([keys.index(s.key) for s in restr.sign], dtype=int)
    row_sign = np.array([s.sign for s in restr.sign], dtype=int)
    eq_key = np.array([keys.index(e.key) for e in restr.equalities], dtype=int)
    tkeys = []
    for t in restr.targets:
        if t.kind == "variance-decomposition":
            tkeys.append(tuple((t.variable, h, False) for h in range(t.horizon + 1)))
        else:
            tkeys.append((t.key,))
    return StackLayout(
        n=n,
        p=p,
        n_zero=z,
        keys=tuple(keys),
        entry_index=entry_index,
        row_key=row_key,
        row_sign=row_sign,
        eq_key=eq_key,
        target_keys=tuple(tkeys),
        max_horizon=restr.max_horizon,
    )


@dataclass(frozen=True)
class ReducedFormStack:
    """phi_q, phi_theta and (once bootstrapped) their covariances."""

    layout: StackLayout
    restrictions: RestrictionSet
    phi_q: np.ndarray
    phi_theta: tuple[np.ndarray, ...]
    T: int
    lambda_qq: np.ndarray | None = field(default=None, repr=False)
    lambda_theta: tuple[np.ndarray, ...] | None = field(default=None, repr=False)
    L: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.phi_q.shape[0]

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def targets(self) -> tuple[ThetaTarget, ...]:
        return self.restrictions.targets

    def with_covariance(self, lambda_qq: np.ndarray, lambda_theta: Sequence[np.ndarray], L: np.ndarray):
        return replace(self, lambda_qq=lambda_qq, lambda_theta=tuple(lambda_theta), L=L)

    def target_index(self, target: ThetaTarget | int) -> int:
        if isinstance(target, (int, np.integer)):
            return int(target)
        return self.targets.index(target)


def build_phi(est: VarEstimate | VarDGP, restr: RestrictionSet, T: int | None = None) -> ReducedFormStack:
    """Assemble phi_q and phi_theta at the given reduced-form parameters.

    ``T`` defaults to the effective sample size of an estimate; it scales the
    sample objective and Wald intervals.
    """
    n = est.sigma_u.shape[0]
    layout = make_layout(n, est.coefs.shape[0], restr)
    sigma_tr = est.sigma_tr
    if T is None:
        T = est.T if isinstance(est, VarEstimate) else 0
    return ReducedFormStack(
        layout=layout,
        restrictions=restr,
        phi_q=layout.phi_q(est.coefs, sigma_tr),
        phi_theta=tuple(layout.phi_theta(est.coefs, sigma_tr)),
        T=int(T),
    )


def _check_unit(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > 1e-10):
        raise ConfigError("q must have unit length")
    return q


def stilde(stack: ReducedFormStack, q: np.ndarray) -> np.ndarray:
    """r x m matrix with S~(q) phi_q equal to the signed restricted responses."""
    return stack.layout.stilde(_check_unit(q))


def s_and_v(stack: ReducedFormStack, q: np.ndarray, zero_row_tol: float = ZERO_ROW_TOL):
    """Drop rows of S~(q) that vanish at q.

    Returns ``(S, V, r_q)`` where V is the r(q) x r row selector and
    ``S = V S~(q)``.
    """
    q = _check_unit(q)
    full = stack.layout.stilde(q)
    norms = stack.layout.row_norms(q)
    keep = norms >= zero_row_tol * (1.0 + np.linalg.norm(stack.phi_q))
    V = np.eye(full.shape[0])[keep]
    return full[keep], V, int(keep.sum())


def theta_from_phi(phi_theta: np.ndarray, target: ThetaTarget, q: np.ndarray) -> np.ndarray:
    """Target value for one or many q (last axis of ``q`` has length n)."""
    q = np.asarray(q, dtype=float)
    n = q.shape[-1]
    rows = np.asarray(phi_theta).reshape(-1, n)
    if target.kind != "variance-decomposition":
        return q @ rows[0]
    proj = q @ rows.T  # (..., h+1)
    num = np.sum(proj**2, axis=-1)
    den = np.sum(rows**2)
    return num / den if den > 0 else np.zeros_like(num)


def theta_paired(phi_theta: np.ndarray, target: ThetaTarget, q: np.ndarray) -> np.ndarray:
    """Target values when each q comes with its own phi_theta (leading dims match)."""
    q = np.asarray(q, dtype=float)
    n = q.shape[-1]
    rows = np.asarray(phi_theta).reshape(*q.shape[:-1], -1, n)
    proj = np.einsum("...hn,...n->...h", rows, q)
    if target.kind != "variance-decomposition":
        return proj[..., 0]
    den = np.sum(rows**2, axis=(-1, -2))
    return np.sum(proj**2, axis=-1) / np.where(den > 0, den, 1.0)


def theta_gradient(phi_theta: np.ndarray, target: ThetaTarget, q: np.ndarray) -> np.ndarray:
    """Derivative of the target with respect to phi_theta, for each q."""
    q = np.asarray(q, dtype=float)
    n = q.shape[-1]
    rows = np.asarray(phi_theta).reshape(-1, n)
    if target.kind != "variance-decomposition":
        return np.broadcast_to(q, q.shape).copy()
    proj = q @ rows.T  # (..., H)
    num = np.sum(proj**2, axis=-1)
    den = np.sum(rows**2)
    g = 2.0 * proj[..., :, None] * q[..., None, :] / den - 2.0 * (num / den**2)[..., None, None] * rows
    return g.reshape(*q.shape[:-1], -1)


def theta_value(source, target: ThetaTarget | int, q: np.ndarray) -> float:
    """Evaluate a target at q from a stack or from VAR parameters."""
    q = _check_unit(q)
    if isinstance(source, ReducedFormStack):
        idx = source.target_index(target)
        return float(theta_from_phi(source.phi_theta[idx], source.targets[idx], q))
    if not isinstance(target, ThetaTarget):
        raise ConfigError("a ThetaTarget is required when evaluating from VAR parameters")
    restr = RestrictionSet(targets=(target,))
    layout = make_layout(source.sigma_u.shape[0], source.coefs.shape[0], restr, require_sign=False)
    phi = layout.phi_theta(source.coefs, source.sigma_tr)[0]
    return float(theta_from_phi(phi, target, q))
