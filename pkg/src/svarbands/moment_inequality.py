"""Moment-inequality objective, moment selection and simulated critical values.

For a rotation vector q the signed restricted responses are ``S(q) phi_q``.
After standardization by their bootstrap standard deviations they become the
slackness estimates ``xi_j``; the objective is the weighted squared distance
of ``xi`` to the nonnegative orthant. Everything here is vectorized over a
block of q values so that grid evaluation and single-point evaluation share
one code path.
"""

from __future__ import annotations

import enum
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .restrictions import ZERO_ROW_TOL, ReducedFormStack

D_FLOOR = 1e-14
KKT_TOL = 1e-10


class WeightScheme(enum.Enum):
    IDENTITY = "identity"
    INVERSE_CORRELATION = "inverse-correlation"

    @classmethod
    def parse(cls, value) -> "WeightScheme":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if key in (member.value, member.name.lower().replace("_", "-")):
                return member
        raise ConfigError(f"unknown weight scheme {value!r}")


@dataclass(frozen=True)
class CriticalValueConfig:
    alpha1: float = 0.05
    n_z: int = 1000
    seed: int = 0
    share_draws: bool = True
    cap_binding: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha1 < 0.5:
            raise ConfigError("alpha1 must lie in (0, 1/2)")
        if self.n_z < 1:
            raise ConfigError("n_z must be positive")


@dataclass(frozen=True)
class MomentDiagnostics:
    xi: np.ndarray  # standardized slackness of the kept rows
    kappa: float
    binding: np.ndarray  # mask over kept rows
    D: np.ndarray  # variances of the kept rows
    kept: np.ndarray  # mask over all r rows of S~(q)
    r_q: int
    n_eq: int = 0

    @property
    def r1(self) -> int:
        return int(self.binding[: self.r_q].sum())

    @property
    def r2(self) -> int:
        return self.r_q - self.r1


def kappa(T: float) -> float:
    """Moment-selection threshold 1.96 ln(ln T)."""
    if T <= np.e:
        raise ConfigError("kappa_T requires T > e")
    return 1.96 * float(np.log(np.log(T)))


# ---------------------------------------------------------------------------
# Nonnegative least squares


def nnls_ls(A: np.ndarray, b: np.ndarray, tol: float = KKT_TOL, max_iter: int | None = None):
    """Lawson-Hanson active set solver for min ||Ax - b||^2 s.t. x >= 0.

    Returns ``(x, objective)``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, k = A.shape
    x = np.zeros(k)
    if k == 0:
        return x, float(b @ b)
    passive = np.zeros(k, dtype=bool)
    scale = max(1.0, float(np.linalg.norm(A)) * (1.0 + float(np.linalg.norm(b))))
    wtol = tol * scale
    max_iter = max_iter or 30 * k + 30
    w = A.T @ (b - A @ x)
    it = 0
    while (~passive).any() and np.max(np.where(passive, -np.inf, w)) > wtol and it < max_iter:
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            it += 1
            z = np.zeros(k)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0) or it >= max_iter:
                x = np.where(passive, np.maximum(z, 0.0), 0.0)
                break
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol * max(1.0, float(np.max(np.abs(x))))
            x[~passive] = 0.0
            if not passive.any():
                break
        w = A.T @ (b - A @ x)
    resid = A @ x - b
    return x, float(resid @ resid)


def _check_spd(B: np.ndarray) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ConfigError("weight matrix must be square")
    if not np.allclose(B, B.T, atol=1e-10 * max(1.0, np.abs(B).max())):
        raise ConfigError("weight matrix must be symmetric")
    try:
        return np.linalg.cholesky(0.5 * (B + B.T))
    except np.linalg.LinAlgError as exc:
        raise ConfigError("weight matrix must be positive definite") from exc


def nnls(y: np.ndarray, B: np.ndarray | None = None, constrained: np.ndarray | None = None):
    """Minimize ``(y - nu)' B (y - nu)`` over ``nu >= 0``.

    Entries where ``constrained`` is False carry no slack: their ``nu`` is
    fixed at zero. Returns ``(nu, objective)``.
    """
    y = np.asarray(y, dtype=float)
    k = y.shape[0]
    if B is None:
        B = np.eye(k)
    L = _check_spd(B)
    cons = np.ones(k, dtype=bool) if constrained is None else np.asarray(constrained, dtype=bool)
    A = L.T[:, cons]
    b = L.T @ y
    x, obj = nnls_ls(A, b)
    nu = np.zeros(k)
    nu[cons] = x
    return nu, obj


def _neg_part_sq(w: np.ndarray, constrained: np.ndarray | None = None) -> np.ndarray:
    """Identity-weight closed form, summed over the last axis."""
    contrib = np.where(w < 0, w * w, 0.0)
    if constrained is not None:
        contrib = np.where(constrained, contrib, w * w)
    return contrib.sum(axis=-1)


def _faces(k: int, constrained: np.ndarray):
    """Enumerate (free, fixed) index sets; only constrained coordinates may be free."""
    cidx = [i for i in range(k) if constrained[i]]
    for size in range(len(cidx) + 1):
        for free in itertools.combinations(cidx, size):
            fixed = [i for i in range(k) if i not in free]
            yield list(free), fixed


def nnls_batch(W: np.ndarray, B: np.ndarray, constrained: np.ndarray | None = None) -> np.ndarray:
    """Objective values of ``min_{nu>=0} ||w - nu||_B^2`` for each row w of W.

    Small problems enumerate the faces of the orthant in closed form; larger
    ones fall back to the active-set solver row by row.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    k = W.shape[1]
    cons = np.ones(k, dtype=bool) if constrained is None else np.asarray(constrained, dtype=bool)
    if k == 0:
        return np.zeros(W.shape[0])
    if cons.sum() > 10:
        return np.array([nnls(w, B, cons)[1] for w in W])
    Binv = np.linalg.inv(B)
    best = np.full(W.shape[0], np.inf)
    for free, fixed in _faces(k, cons):
        if not fixed:
            best = np.where(np.all(W >= 0, axis=1), 0.0, best)
            continue
        wc = W[:, fixed]
        K = np.linalg.inv(Binv[np.ix_(fixed, fixed)])
        val = np.einsum("ij,jk,ik->i", wc, K, wc)
        if free:
            P = np.linalg.solve(B[np.ix_(free, free)], B[np.ix_(free, fixed)])
            nu_f = W[:, free] + wc @ P.T
            val = np.where(np.all(nu_f >= -1e-12, axis=1), val, np.inf)
        best = np.minimum(best, val)
    return np.maximum(best, 0.0)


# ---------------------------------------------------------------------------
# Grid evaluation core


@dataclass(frozen=True)
class GridMoments:
    """Objective, selection and critical values for a block of q."""

    G: np.ndarray  # (n_q,)
    crit: np.ndarray | None  # (n_q,)
    xi: np.ndarray  # (n_q, rows); +inf where a row was dropped
    kept: np.ndarray  # (n_q, rows)
    binding: np.ndarray  # (n_q, rows)
    D: np.ndarray  # (n_q, rows)
    kappa: float
    n_eq: int

    @property
    def r_q(self) -> np.ndarray:
        return self.kept[:, : self.kept.shape[1] - self.n_eq].sum(axis=1)

    @property
    def r1(self) -> np.ndarray:
        return self.binding[:, : self.binding.shape[1] - self.n_eq].sum(axis=1)


def draw_panel(cfg: CriticalValueConfig, m: int, index: int | None = None) -> np.ndarray:
    """Standard normal n_Z x m panel; per-q panels are keyed by grid index."""
    seed = [cfg.seed] if index is None else [cfg.seed, int(index)]
    return np.random.default_rng(seed).standard_normal((cfg.n_z, m))


def higher_quantile(values: np.ndarray, level: float, axis: int = -1) -> np.ndarray:
    """Smallest sample value with rank >= ceil(level * n)."""
    n = values.shape[axis]
    k = int(np.ceil(level * n - 1e-9)) - 1
    k = min(max(k, 0), n - 1)
    return np.take(np.partition(values, k, axis=axis), k, axis=axis)


def _require_cov(stack: ReducedFormStack):
    if stack.lambda_qq is None or stack.L is None:
        raise ConfigError("the stack has no bootstrap covariance; run bootstrap_lambda first")


def evaluate_moments(
    stack: ReducedFormStack,
    Q: np.ndarray,
    scheme: WeightScheme | str = WeightScheme.IDENTITY,
    cfg: CriticalValueConfig | None = None,
    *,
    include_eq: bool = False,
    q_offset: int = 0,
    panel: np.ndarray | None = None,
    chunk: int | None = None,
) -> GridMoments:
    """Evaluate G(q), moment selection and (if ``cfg``) c(q) for rows of Q."""
    _require_cov(stack)
    scheme = WeightScheme.parse(scheme)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    layout = stack.layout
    n_eq = layout.eq_key.shape[0] if include_eq else 0
    T = stack.T
    kap = kappa(T)
    if cfg is not None and cfg.share_draws and panel is None:
        panel = draw_panel(cfg, stack.m)
    if cfg is not None and cfg.n_z < 100:
        warnings.warn("n_z < 100 gives a coarse critical value", RuntimeWarning, stacklevel=2)
    rows = layout.r + n_eq
    if chunk is None:
        per_q = max(rows * stack.m, rows * (cfg.n_z if cfg else 1), 1) * 3
        chunk = int(max(1, min(len(Q), 4_000_000 // per_q)))
    outs = []
    for start in range(0, len(Q), chunk):
        outs.append(
            _evaluate_block(stack, Q[start : start + chunk], scheme, cfg, include_eq, q_offset + start, panel, kap)
        )
    cat = lambda i: np.concatenate([o[i] for o in outs]) if outs else None  # noqa: E731
    return GridMoments(
        G=cat(0),
        crit=cat(1) if cfg is not None else None,
        xi=cat(2),
        kept=cat(3),
        binding=cat(4),
        D=cat(5),
        kappa=kap,
        n_eq=n_eq,
    )


def _evaluate_block(stack, Q, scheme, cfg, include_eq, offset, panel, kap):
    layout = stack.layout
    T = stack.T
    St = layout.stilde(Q, include_eq=include_eq)  # (b, R, m)
    R = St.shape[1]
    n_eq = layout.eq_key.shape[0] if include_eq else 0
    constrained = np.arange(R) < R - n_eq
    norms = layout.row_norms(Q, include_eq=include_eq)
    kept = norms >= ZERO_ROW_TOL * (1.0 + np.linalg.norm(stack.phi_q))
    s = St @ stack.phi_q
    SL = St @ stack.L  # (b, R, m)
    D = np.einsum("brm,brm->br", SL, SL)
    Dmax = np.max(np.where(kept, D, 0.0), axis=1, keepdims=True)
    kept &= D > D_FLOOR * np.maximum(Dmax, 1e-300)
    sd = np.sqrt(np.where(kept, D, 1.0))
    xi = np.where(kept, np.sqrt(T) * s / sd, np.inf)
    binding = kept & ((xi < kap) | ~constrained)
    if cfg is not None and cfg.cap_binding:
        n_cap = max(layout.n - 1, 0)
        order = np.argsort(np.where(binding & constrained, xi, np.inf), axis=1)
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(R)[None, :].repeat(len(Q), 0), axis=1)
        binding &= (rank < n_cap) | ~constrained
    A = SL / sd[..., None]  # standardized A'(q), rows of dropped entries are junk
    if scheme is WeightScheme.IDENTITY:
        xi0 = np.where(kept, xi, 0.0)
        G = _neg_part_sq(np.where(kept, xi0, 0.0), constrained)
    else:
        G = np.empty(len(Q))
        for b in range(len(Q)):
            idx = np.flatnonzero(kept[b])
            if idx.size == 0:
                G[b] = 0.0
                continue
            Om = A[b, idx] @ A[b, idx].T
            _, G[b] = nnls(xi[b, idx], np.linalg.inv(Om), constrained[idx])
    crit = None
    if cfg is not None:
        crit = np.zeros(len(Q))
        level = 1.0 - cfg.alpha1
        if scheme is WeightScheme.IDENTITY and panel is not None:
            # Shared draws: evaluate the whole block at once.
            active = binding.any(axis=1)
            if active.any():
                Wd = A[active] @ panel.T  # (b, R, n_z)
                Wd = np.where(constrained[:, None], np.minimum(Wd, 0.0), Wd)
                Wd *= binding[active][:, :, None]
                gbar = np.einsum("brz,brz->bz", Wd, Wd)
                crit[active] = higher_quantile(gbar, level, axis=-1)
            return G, crit, xi, kept, binding, np.where(kept, D, 0.0)
        for b in range(len(Q)):
            sel = np.flatnonzero(binding[b])
            if sel.size == 0:
                continue
            Z = panel if panel is not None else draw_panel(cfg, stack.m, offset + b)
            Wd = Z @ A[b, sel].T  # (n_z, r1)
            if scheme is WeightScheme.IDENTITY:
                gbar = _neg_part_sq(Wd, constrained[sel])
            else:
                idx = np.flatnonzero(kept[b])
                Binv_full = np.linalg.inv(A[b, idx] @ A[b, idx].T)
                pos = np.searchsorted(idx, sel)
                Bsel = Binv_full[np.ix_(pos, pos)]
                gbar = nnls_batch(Wd, Bsel, constrained[sel])
            crit[b] = higher_quantile(gbar, level)
    return G, crit, xi, kept, binding, np.where(kept, D, 0.0)


def _diagnostics(gm: GridMoments, i: int) -> MomentDiagnostics:
    kept = gm.kept[i]
    R = kept.shape[0]
    r_ineq = R - gm.n_eq
    order = np.concatenate([np.flatnonzero(kept[:r_ineq]), np.flatnonzero(kept[r_ineq:]) + r_ineq])
    return MomentDiagnostics(
        xi=gm.xi[i, order],
        kappa=gm.kappa,
        binding=gm.binding[i, order],
        D=gm.D[i, order],
        kept=kept,
        r_q=int(kept[:r_ineq].sum()),
        n_eq=int(kept[r_ineq:].sum()),
    )


def objective_g(stack: ReducedFormStack, q: np.ndarray, scheme: WeightScheme | str = WeightScheme.IDENTITY):
    """Sample objective G(q) and its moment-selection diagnostics."""
    gm = evaluate_moments(stack, np.asarray(q)[None, :], scheme)
    return float(gm.G[0]), _diagnostics(gm, 0)


def objective_g_eq(stack: ReducedFormStack, q: np.ndarray, scheme: WeightScheme | str = WeightScheme.IDENTITY):
    """Objective with the stack's equality rows entering without slack."""
    gm = evaluate_moments(stack, np.asarray(q)[None, :], scheme, include_eq=True)
    return float(gm.G[0]), _diagnostics(gm, 0)


def critical_value(
    stack: ReducedFormStack,
    q: np.ndarray,
    diagnostics: MomentDiagnostics | None = None,
    scheme: WeightScheme | str = WeightScheme.IDENTITY,
    cfg: CriticalValueConfig | None = None,
    *,
    include_eq: bool | None = None,
    q_index: int = 0,
) -> float:
    """Simulated 1 - alpha1 quantile of the selected limit objective at q.

    The moment selection is recomputed at q; ``diagnostics`` (from
    ``objective_g``) only fixes whether equality rows take part.
    """
    cfg = cfg or CriticalValueConfig()
    if include_eq is None:
        include_eq = diagnostics is not None and diagnostics.n_eq > 0
    gm = evaluate_moments(stack, np.asarray(q)[None, :], scheme, cfg, include_eq=include_eq, q_offset=q_index)
    return float(gm.crit[0])


def standardized_stack(xi: np.ndarray, T: int = 100) -> ReducedFormStack:
    """A one-shock stack whose rows at q = e_1 have slackness ``xi`` and unit,
    independent variances. Handy for checking critical values."""
    from .restrictions import RestrictionSet, SignRestriction, make_layout

    xi = np.asarray(xi, dtype=float)
    r = xi.shape[0]
    restr = RestrictionSet(sign=tuple(SignRestriction(i, 0, 1) for i in range(r)))
    layout = make_layout(r, 0, restr)
    m = layout.m
    lam = np.eye(m)
    phi = np.zeros(m)
    # At q = e_1 row i reads entry (i, 0) of Sigma_tr; set it to xi_i / sqrt(T).
    for i in range(r):
        phi[layout.entry_index[i, 0]] = xi[i] / np.sqrt(T)
    return ReducedFormStack(layout, restr, phi, (), T, lam, (), np.eye(m))
