"""Confidence set for q, plug-in identified sets and Bonferroni bands for theta."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError
from .moment_inequality import (
    CriticalValueConfig,
    GridMoments,
    WeightScheme,
    draw_panel,
    evaluate_moments,
)
from .restrictions import ReducedFormStack, ThetaTarget, target_bounds, theta_from_phi, theta_gradient
from .sphere import QGrid

G_TOL = 1e-10
TRUNC_TOL = 1e-12


@dataclass(frozen=True)
class Interval:
    lo: float = math.nan
    hi: float = math.nan

    @classmethod
    def empty(cls) -> "Interval":
        return cls()

    @property
    def is_empty(self) -> bool:
        return not (self.lo <= self.hi)

    @property
    def length(self) -> float:
        return 0.0 if self.is_empty else self.hi - self.lo

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return not self.is_empty and self.lo - tol <= x <= self.hi + tol

    def intersect(self, lo: float, hi: float) -> "Interval":
        if self.is_empty:
            return self
        a, b = max(self.lo, lo), min(self.hi, hi)
        return Interval(a, b) if a <= b else Interval.empty()

    def issubset(self, other: "Interval", tol: float = 0.0) -> bool:
        if self.is_empty:
            return True
        return not other.is_empty and other.lo - tol <= self.lo and self.hi <= other.hi + tol


def hausdorff(a: Interval, b: Interval) -> float:
    """Hausdorff distance between two non-empty intervals."""
    if a.is_empty or b.is_empty:
        return math.inf
    return max(abs(a.lo - b.lo), abs(a.hi - b.hi))


@dataclass(frozen=True)
class QGridResult:
    grid: QGrid
    G: np.ndarray
    crit: np.ndarray
    in_fhat: np.ndarray
    in_cs: np.ndarray
    moments: GridMoments = field(repr=False)
    alpha1: float = 0.05

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    @property
    def n_fhat(self) -> int:
        return int(self.in_fhat.sum())

    @property
    def n_cs(self) -> int:
        return int(self.in_cs.sum())

    @property
    def cs_empty(self) -> bool:
        return self.n_cs == 0

    @property
    def diagnostic(self) -> str | None:
        if self.cs_empty:
            return "empty confidence set for q: the sign restrictions appear inconsistent with the reduced-form estimates"
        return None

    def arc_length(self, which: str = "cs") -> float:
        """Arc length of a set on a polar grid, as count times spacing."""
        step = self.grid.spacing
        if step is None:
            raise ConfigError("arc length is defined for polar grids only")
        mask = self.in_cs if which == "cs" else self.in_fhat
        return float(mask.sum()) * step


def cs_q(
    stack: ReducedFormStack,
    grid: QGrid,
    scheme: WeightScheme | str = WeightScheme.IDENTITY,
    cfg: CriticalValueConfig | None = None,
    *,
    include_eq: bool = False,
    threads: int = 1,
) -> QGridResult:
    """Evaluate G and c(q) on every grid point and collect F^q and CS^q."""
    cfg = cfg or CriticalValueConfig()
    Q = grid.points
    panel = draw_panel(cfg, stack.m) if cfg.share_draws else None
    if threads > 1 and len(Q) > 1:
        bounds = np.linspace(0, len(Q), min(threads * 4, len(Q)) + 1).astype(int)
        spans = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ThreadPoolExecutor(threads) as pool:
            parts = list(
                pool.map(
                    lambda ab: evaluate_moments(
                        stack, Q[ab[0] : ab[1]], scheme, cfg, include_eq=include_eq, q_offset=ab[0], panel=panel
                    ),
                    spans,
                )
            )
        gm = GridMoments(
            G=np.concatenate([p.G for p in parts]),
            crit=np.concatenate([p.crit for p in parts]),
            xi=np.concatenate([p.xi for p in parts]),
            kept=np.concatenate([p.kept for p in parts]),
            binding=np.concatenate([p.binding for p in parts]),
            D=np.concatenate([p.D for p in parts]),
            kappa=parts[0].kappa,
            n_eq=parts[0].n_eq,
        )
    else:
        gm = evaluate_moments(stack, Q, scheme, cfg, include_eq=include_eq, panel=panel)
    r_ineq = gm.xi.shape[1] - gm.n_eq
    xi = gm.xi[:, :r_ineq]
    in_fhat = np.all(xi >= 0, axis=1)
    if gm.n_eq:
        in_fhat &= gm.G <= G_TOL
    in_cs = (gm.G <= gm.crit + G_TOL) | in_fhat
    return QGridResult(grid, gm.G, gm.crit, in_fhat, in_cs, gm, cfg.alpha1)


def _theta_all(stack: ReducedFormStack, idx: int, Q: np.ndarray) -> np.ndarray:
    return theta_from_phi(stack.phi_theta[idx], stack.targets[idx], Q)


def estimated_identified_set_theta(stack: ReducedFormStack, res: QGridResult, target: ThetaTarget | int) -> Interval:
    """[min, max] of theta over the grid points in the plug-in set for q."""
    idx = stack.target_index(target)
    if res.n_fhat == 0:
        return Interval.empty()
    vals = _theta_all(stack, idx, res.points[res.in_fhat])
    return Interval(float(vals.min()), float(vals.max()))


def plugin_sets_theta(stack: ReducedFormStack, Q: np.ndarray) -> tuple[Interval, ...]:
    """F-hat^theta for every target from the sign checks alone; needs no bootstrap."""
    Q = np.atleast_2d(Q)
    inside = np.all(stack.layout.stilde(Q) @ stack.phi_q >= 0, axis=1)
    if not inside.any():
        return tuple(Interval.empty() for _ in stack.targets)
    out = []
    for i in range(len(stack.targets)):
        vals = _theta_all(stack, i, Q[inside])
        out.append(Interval(float(vals.min()), float(vals.max())))
    return tuple(out)


def normal_quantile(p: float) -> float:
    return float(stats.norm.ppf(p))


def wald_bounds(stack: ReducedFormStack, target: ThetaTarget | int, Q: np.ndarray, alpha2: float):
    """Untruncated Wald bounds for theta at each row of Q."""
    if not 0.0 < alpha2 < 1.0:
        raise ConfigError("alpha2 must lie in (0, 1)")
    if stack.lambda_theta is None:
        raise ConfigError("the stack has no bootstrap covariance for the targets")
    idx = stack.target_index(target)
    t = stack.targets[idx]
    Q = np.atleast_2d(Q)
    center = theta_from_phi(stack.phi_theta[idx], t, Q)
    g = theta_gradient(stack.phi_theta[idx], t, Q)
    var = np.einsum("qi,ij,qj->q", g, stack.lambda_theta[idx], g) / stack.T
    half = normal_quantile(1.0 - alpha2 / 2.0) * np.sqrt(np.maximum(var, 0.0))
    return center - half, center + half


def wald_theta(stack: ReducedFormStack, q: np.ndarray, target: ThetaTarget | int, alpha2: float) -> Interval:
    """Conditional-on-q Wald interval, intersected with the target's parameter space."""
    lo, hi = wald_bounds(stack, target, np.asarray(q)[None, :], alpha2)
    theta_lo, theta_hi = target_bounds(stack.restrictions, stack.targets[stack.target_index(target)])
    return Interval(float(lo[0]), float(hi[0])).intersect(theta_lo, theta_hi)


def bonferroni_theta(
    in_cs: np.ndarray, lo: np.ndarray, hi: np.ndarray, bounds: tuple[float, float] = (-np.inf, np.inf)
) -> Interval:
    """Hull of the per-q Wald intervals over CS^q, intersected with Theta."""
    in_cs = np.asarray(in_cs, dtype=bool)
    lo = np.asarray(lo, dtype=float)[in_cs]
    hi = np.asarray(hi, dtype=float)[in_cs]
    # Intervals emptied by truncation do not contribute.
    lo_t = np.maximum(lo, bounds[0])
    hi_t = np.minimum(hi, bounds[1])
    # A degenerate interval sitting on a bound up to rounding is the bound itself.
    tol = TRUNC_TOL * (1.0 + np.maximum(np.abs(lo), np.abs(hi)))
    near = (lo_t > hi_t) & (lo_t - hi_t <= tol)
    hi_t = np.where(near & (hi_t < bounds[0] + tol), lo_t, hi_t)
    lo_t = np.where(near & (lo_t > bounds[1] - tol), hi_t, lo_t)
    ok = lo_t <= hi_t
    if not ok.any():
        return Interval.empty()
    return Interval(float(lo_t[ok].min()), float(hi_t[ok].max()))


@dataclass(frozen=True)
class BandEntry:
    target: ThetaTarget
    fhat: Interval
    cs: Interval
    wald_lo: np.ndarray | None = field(default=None, repr=False)
    wald_hi: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class BandResult:
    entries: tuple[BandEntry, ...]
    alpha1: float
    alpha2: float
    diagnostic: str | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> BandEntry:
        return self.entries[i]

    def records(self) -> list[dict]:
        out = []
        for e in self.entries:
            out.append(
                {
                    "target": e.target.label,
                    "kind": e.target.kind,
                    "variable": e.target.variable,
                    "horizon": e.target.horizon,
                    "fhat_lo": e.fhat.lo,
                    "fhat_hi": e.fhat.hi,
                    "cs_lo": e.cs.lo,
                    "cs_hi": e.cs.hi,
                }
            )
        return out


def target_band(
    stack: ReducedFormStack, res: QGridResult, target: ThetaTarget | int, alpha2: float, keep_wald: bool = False
) -> BandEntry:
    idx = stack.target_index(target)
    t = stack.targets[idx]
    fhat = estimated_identified_set_theta(stack, res, idx)
    lo, hi = wald_bounds(stack, idx, res.points, alpha2)
    cs = bonferroni_theta(res.in_cs, lo, hi, target_bounds(stack.restrictions, t))
    return BandEntry(t, fhat, cs, lo if keep_wald else None, hi if keep_wald else None)


def bands(stack: ReducedFormStack, res: QGridResult, alpha2: float = 0.05, keep_wald: bool = False) -> BandResult:
    """Bands for every target in the stack, reusing one CS^q."""
    entries = tuple(target_band(stack, res, i, alpha2, keep_wald) for i in range(len(stack.targets)))
    return BandResult(entries, res.alpha1, alpha2, res.diagnostic)


def irf_band(
    stack: ReducedFormStack,
    res: QGridResult,
    variable: int,
    horizons,
    alpha2: float = 0.05,
    kind: str = "irf",
) -> BandResult:
    """Pointwise band for one variable over a set of horizons."""
    if isinstance(horizons, int):
        horizons = range(horizons + 1)
    lookup = {(t.variable, t.horizon, t.kind): i for i, t in enumerate(stack.targets)}
    entries = []
    for h in horizons:
        key = (variable, h, kind)
        if key not in lookup:
            raise ConfigError(f"no target for variable {variable} at horizon {h} of kind {kind}")
        entries.append(target_band(stack, res, lookup[key], alpha2))
    return BandResult(tuple(entries), res.alpha1, alpha2, res.diagnostic)


def wald_phi_contains(stack: ReducedFormStack, phi0: np.ndarray, alpha: float) -> bool:
    """Chi-square Wald test that phi_q equals ``phi0`` at level alpha."""
    d = np.asarray(phi0, dtype=float) - stack.phi_q
    z = np.linalg.solve(stack.L, d)
    stat = stack.T * float(z @ z)
    return stat <= float(stats.chi2.ppf(1.0 - alpha, stack.m))
