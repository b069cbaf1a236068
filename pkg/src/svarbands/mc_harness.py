"""Monte Carlo coverage experiments for the bivariate designs and the four-variable VAR(2).

One replication draws a sample from the design's DGP, estimates the VAR,
bootstraps the covariances, builds CS^q on the design's grid and the
Bonferroni sets for each target, and records whether the scored population
points are covered.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .bootstrap_cov import BootstrapConfig, bootstrap_lambda
from .confidence_sets import (
    Interval,
    bonferroni_theta,
    cs_q,
    estimated_identified_set_theta,
    wald_bounds,
    wald_phi_contains,
)
from .errors import ConfigError
from .moment_inequality import CriticalValueConfig, WeightScheme, evaluate_moments
from .restrictions import (
    ReducedFormStack,
    RestrictionSet,
    SignRestriction,
    ThetaTarget,
    build_phi,
    target_bounds,
    theta_from_phi,
)
from .sphere import QGrid, make_grid, polar_grid_2d, sample_uniform
from .var_core import VarDGP, VarSpec, estimate_ols, simulate_var

# ---------------------------------------------------------------------------
# Designs

_SIGMA_TR = {
    1: [[0.597, 0.0], [-0.205, 0.812]],
    2: [[0.295, 0.0], [-0.092, 0.795]],
    3: [[0.283, 0.0], [-0.081, 0.817]],
    4: [[0.210, 0.0], [-0.043, 0.542]],
}
_A1 = {
    2: [[0.873, 0.003], [-0.229, 0.230]],
    3: [[0.806, 0.032], [-0.278, 0.985]],
    4: [[0.450, 0.014], [0.060, 0.953]],
}

# Four-variable VAR(2): output, inflation, interest rate, money. The lag
# matrices are stored transposed, as they are usually printed.
_EXP3_A1T = [
    [1.001, -0.100, 0.302, -0.085],
    [0.065, 0.585, 0.089, -0.055],
    [0.126, 0.284, 1.072, -0.073],
    [0.233, 0.141, 0.056, 1.522],
]
_EXP3_A2T = [
    [-0.080, 0.119, -0.269, 0.078],
    [-0.056, 0.262, 0.065, 0.013],
    [-0.223, -0.222, -0.178, 0.070],
    [-0.230, -0.097, -0.069, -0.538],
]
_EXP3_C = [0.626, 0.175, 0.064, 0.204]
_EXP3_SIGMA = [
    [0.542, -0.124, 0.199, 0.095],
    [-0.124, 1.164, 0.129, -0.369],
    [0.199, 0.129, 0.912, -0.263],
    [0.095, -0.369, -0.263, 0.549],
]
EXP3_T = 170
EXP3_HORIZONS = 24
EXP3_POP_GRID = 200_000
SCORE_TOL = 1e-12  # endpoints that are zero up to rounding


@dataclass(frozen=True)
class McDesign:
    name: str
    dgp: VarDGP
    spec: VarSpec
    restrictions: RestrictionSet
    grid_interval: tuple[float, float] | None  # polar grid; None means uniform draws
    n_q: int
    scored_q: np.ndarray | None = field(default=None, repr=False)
    population: dict = field(default_factory=dict, repr=False)


def _bivariate(design: int, horizons: Sequence[int], target_h: int) -> McDesign:
    s_tr = np.array(_SIGMA_TR[design])
    coefs = np.zeros((0, 2, 2)) if design == 1 else np.array([_A1[design]])
    dgp = VarDGP(coefs, s_tr @ s_tr.T)
    sign = tuple(SignRestriction(i, h, 1) for h in horizons for i in range(2))
    restr = RestrictionSet(sign=sign, targets=(ThetaTarget(0, target_h),))
    if design == 1:
        interval, n_q = (-np.pi / 2, np.pi / 2), 315
    else:
        interval, n_q = (-np.pi, np.pi), 629
    name = str(design) if len(horizons) == 1 and design == 1 else None
    return McDesign(
        name=name or "",
        dgp=dgp,
        spec=VarSpec(p=coefs.shape[0], deterministics="intercept", n=2),
        restrictions=restr,
        grid_interval=interval,
        n_q=n_q,
    )


def exp3_dgp() -> VarDGP:
    coefs = np.stack([np.array(_EXP3_A1T).T, np.array(_EXP3_A2T).T])
    return VarDGP(coefs, np.array(_EXP3_SIGMA), intercept=np.array(_EXP3_C))


def exp3_restrictions(zero: bool = False, horizons: int = EXP3_HORIZONS, variables=(0, 1)) -> RestrictionSet:
    """Inflation <= 0, interest rate >= 0, money <= 0 at h = 0, 1.

    With ``zero`` the shock has no impact on output and inflation (q has two
    leading zeros) and the impact restriction on inflation is dropped.
    """
    if zero:
        sign = (
            SignRestriction(2, 0, 1),
            SignRestriction(2, 1, 1),
            SignRestriction(1, 1, -1),
            SignRestriction(3, 0, -1),
            SignRestriction(3, 1, -1),
        )
    else:
        sign = tuple(SignRestriction(i, h, s) for h in (0, 1) for i, s in ((1, -1), (2, 1), (3, -1)))
    targets = tuple(ThetaTarget(v, h) for v in variables for h in range(horizons))
    return RestrictionSet(sign=sign, n_zero=2 if zero else 0, targets=targets)


def get_design(name: str) -> McDesign:
    """Registry lookup.

    ``"1"``: bivariate VAR(0). ``"2"``, ``"3"``, ``"4"``: VAR(1) with sign
    restrictions at h = 1 and theta the response of y1 at h = 1. Suffixes
    ``-h01`` and ``-h04`` restrict h = 0..1 or 0..4 and target the impact
    response of y1. ``"exp3"`` and ``"exp3-zero"``: four-variable VAR(2).
    """
    name = str(name).strip().lower()
    if name == "1":
        d = _bivariate(1, [0], 0)
    elif name in ("2", "3", "4"):
        d = _bivariate(int(name), [1], 1)
    elif name[:1] in ("2", "3", "4") and name[1:] in ("-h01", "-h04"):
        H = 1 if name.endswith("01") else 4
        d = _bivariate(int(name[0]), list(range(H + 1)), 0)
    elif name in ("exp3", "exp3-zero"):
        zero = name == "exp3-zero"
        restr = exp3_restrictions(zero)
        dgp = exp3_dgp()
        return McDesign(
            name=name,
            dgp=dgp,
            spec=VarSpec(p=2, deterministics="intercept", n=4),
            restrictions=restr,
            grid_interval=(-np.pi, np.pi) if zero else None,
            n_q=20_000,
        )
    else:
        raise ConfigError(f"unknown design {name!r}")
    return McDesign(d.name or name, d.dgp, d.spec, d.restrictions, d.grid_interval, d.n_q)


DESIGNS = ("1", "2", "3", "4", "2-h01", "3-h01", "4-h01", "2-h04", "3-h04", "4-h04", "exp3", "exp3-zero")


# ---------------------------------------------------------------------------
# Population identified sets


@dataclass(frozen=True)
class PopulationSets:
    fq_arc: tuple[float, float] | None  # angle endpoints (bivariate only)
    ftheta: tuple[Interval, ...]
    q_lower: np.ndarray | None

    @property
    def fq_length(self) -> float:
        if self.fq_arc is None:
            return math.nan
        return self.fq_arc[1] - self.fq_arc[0]


def _arc_intersection(normals: np.ndarray) -> tuple[float, float] | None:
    """Angles [lo, hi] of the set {q on the circle: a_j'q >= 0 for all j}."""
    psi = np.arctan2(normals[:, 1], normals[:, 0])
    cands = np.concatenate([psi - np.pi / 2, psi + np.pi / 2])
    eps = 1e-9
    feasible = None
    for c in np.concatenate([cands + eps, cands - eps]):
        q = np.array([np.cos(c), np.sin(c)])
        if np.all(normals @ q >= 0):
            feasible = c
            break
    if feasible is None:
        return None
    lo = psi - np.pi / 2
    lo = lo - 2 * np.pi * np.floor((lo - (feasible - np.pi)) / (2 * np.pi))
    a, b = float(lo.max()), float((lo + np.pi).min())
    if a > b:
        return None
    return a, b


def _sinusoid_range(b: np.ndarray, a: float, c: float) -> Interval:
    """Range of b'[cos t, sin t] over t in [a, c]."""
    ts = [a, c]
    peak = math.atan2(b[1], b[0])
    for t0 in (peak, peak + np.pi):
        k = math.ceil((a - t0) / (2 * np.pi))
        t = t0 + 2 * np.pi * k
        if t <= c:
            ts.append(t)
    vals = [b[0] * math.cos(t) + b[1] * math.sin(t) for t in ts]
    return Interval(min(vals), max(vals))


def population_sets(design: McDesign | str, n_grid: int = EXP3_POP_GRID, seed: int = 20240101) -> PopulationSets:
    """Identified sets at the DGP parameters.

    Bivariate designs use the closed-form intersection of half circles;
    larger systems use a dense random grid on the (restricted) sphere.
    """
    if isinstance(design, str):
        design = get_design(design)
    stack = build_phi(design.dgp, design.restrictions, T=1)
    layout = stack.layout
    n = layout.n
    if n - layout.n_zero == 2:
        z = layout.n_zero
        rows = layout.coefficient_rows(design.dgp.coefs, design.dgp.sigma_tr, layout.keys)
        normals = rows[layout.row_key][:, z:] * layout.row_sign[:, None]
        arc = _arc_intersection(normals)
        if arc is None:
            return PopulationSets(None, tuple(Interval.empty() for _ in stack.targets), None)
        ft = []
        for phi, t in zip(stack.phi_theta, stack.targets):
            if t.kind == "variance-decomposition":
                ang = np.linspace(arc[0], arc[1], 20001)
                Q = np.zeros((ang.size, n))
                Q[:, z] = np.cos(ang)
                Q[:, z + 1] = np.sin(ang)
                v = theta_from_phi(phi, t, Q)
                ft.append(Interval(float(v.min()), float(v.max())))
            else:
                ft.append(_sinusoid_range(np.asarray(phi)[z:], *arc))
        q_lower = np.zeros(n)
        q_lower[z:] = [math.cos(arc[0]), math.sin(arc[0])]
        return PopulationSets(arc, tuple(ft), q_lower)
    grid = make_grid(n, layout.n_zero, n_grid, np.random.default_rng(seed))
    Q = grid.points
    S = layout.stilde(Q)
    inside = np.all(S @ stack.phi_q >= 0, axis=1)
    ft = []
    for phi, t in zip(stack.phi_theta, stack.targets):
        if not inside.any():
            ft.append(Interval.empty())
            continue
        v = theta_from_phi(phi, t, Q[inside])
        ft.append(Interval(float(v.min()), float(v.max())))
    return PopulationSets(None, tuple(ft), None)


# ---------------------------------------------------------------------------
# Replications


@dataclass(frozen=True)
class McSettings:
    T: int
    alphas: tuple[tuple[float, float], ...] = ((0.05, 0.05),)
    n_lambda: int = 1000
    n_q: int | None = None
    n_z: int = 500
    seed: int = 0
    scheme: str = "identity"


def _replication(design: McDesign, pop: PopulationSets, st: McSettings, rep: int) -> list[dict]:
    rng = np.random.default_rng([st.seed, rep, 0])
    data = simulate_var(design.dgp, st.T, rng)
    est = estimate_ols(data, design.spec)
    stack = build_phi(est, design.restrictions)
    boot = bootstrap_lambda(est, stack, BootstrapConfig(st.n_lambda, _child_seed(st.seed, rep, 1), allow_explosive=True))
    stack = stack.with_covariance(boot.lambda_qq, boot.lambda_theta, boot.L)
    n, z = stack.n, stack.layout.n_zero
    n_q = st.n_q or design.n_q
    if design.grid_interval is not None:
        grid = embed_grid(polar_grid_2d(n_q, design.grid_interval), n, z)
    else:
        grid = make_grid(n, z, n_q, np.random.default_rng([st.seed, rep, 2]))
    pop_phi = build_phi(design.dgp, design.restrictions, T=stack.T).phi_q
    out = []
    for a1, a2 in st.alphas:
        cfg = CriticalValueConfig(a1, st.n_z, _child_seed(st.seed, rep, 3))
        res = cs_q(stack, grid, st.scheme, cfg)
        rec: dict = {"alpha1": a1, "alpha2": a2, "empty": res.cs_empty}
        if pop.q_lower is not None:
            gm = evaluate_moments(stack, pop.q_lower[None, :], st.scheme, cfg)
            rec["cov_q"] = bool(gm.G[0] <= gm.crit[0] + 1e-10)
            rec["binding"] = int(gm.r1[0])
        if grid.spacing is not None:
            rec["len_q"] = res.arc_length("cs")
        rec["cov_phi"] = wald_phi_contains(stack, pop_phi, a1 + a2)
        tgt = []
        for i, t in enumerate(stack.targets):
            lo, hi = wald_bounds(stack, i, grid.points, a2)
            cs = bonferroni_theta(res.in_cs, lo, hi, target_bounds(stack.restrictions, t))
            f = pop.ftheta[i]
            fh = estimated_identified_set_theta(stack, res, i)
            tgt.append(
                {
                    "cov_lo": cs.contains(f.lo, SCORE_TOL * (1 + abs(f.lo))),
                    "cov_hi": cs.contains(f.hi, SCORE_TOL * (1 + abs(f.hi))),
                    "length": cs.length,
                    "fhat_lo": fh.lo,
                    "fhat_hi": fh.hi,
                }
            )
        rec["targets"] = tgt
        out.append(rec)
    return out


def embed_grid(base: QGrid, n: int, z: int) -> QGrid:
    from .sphere import embed_zero_restricted

    return embed_zero_restricted(base, n, z)


def _child_seed(seed: int, rep: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, rep, stream]).generate_state(1)[0])


def _run_chunk(args):
    design, pop, st, reps = args
    return [_replication(design, pop, st, r) for r in reps]


@dataclass(frozen=True)
class TargetSummary:
    label: str
    f_lo: float
    f_hi: float
    cov_lo: float
    cov_hi: float
    mean_length: float


@dataclass(frozen=True)
class McResult:
    design: str
    T: int
    alpha1: float
    alpha2: float
    n_sim: int
    n_empty: int
    cov_q: float
    len_q_pi: float
    fq_length_pi: float
    cov_phi: float
    mean_binding: float
    targets: tuple[TargetSummary, ...]

    @staticmethod
    def mc_se(p: float, n: int) -> float:
        return math.sqrt(max(p * (1 - p), 0.0) / n) if n else math.nan

    @property
    def cov_theta(self) -> float:
        """Coverage of the upper population bound of the first target."""
        return self.targets[0].cov_hi

    @property
    def len_theta(self) -> float:
        return self.targets[0].mean_length

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cov_q_se"] = self.mc_se(self.cov_q, self.n_sim)
        d["cov_theta_se"] = self.mc_se(self.cov_theta, self.n_sim)
        return d

    def table_rows(self) -> list[dict]:
        base = {
            "design": self.design,
            "T": self.T,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "n_sim": self.n_sim,
        }
        rows = []
        for t in self.targets:
            rows.append(
                {
                    **base,
                    "target": t.label,
                    "f_lo": t.f_lo,
                    "f_hi": t.f_hi,
                    "cov_lo": t.cov_lo,
                    "cov_hi": t.cov_hi,
                    "cov_hi_se": self.mc_se(t.cov_hi, self.n_sim),
                    "mean_length": t.mean_length,
                    "cov_q": self.cov_q,
                    "cov_q_se": self.mc_se(self.cov_q, self.n_sim),
                    "len_q_pi": self.len_q_pi,
                    "fq_length_pi": self.fq_length_pi,
                    "cov_phi": self.cov_phi,
                    "mean_binding": self.mean_binding,
                    "n_empty": self.n_empty,
                }
            )
        return rows


def _mean(vals) -> float:
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else math.nan


def _aggregate(design: McDesign, pop: PopulationSets, st: McSettings, recs: list[list[dict]]) -> list[McResult]:
    out = []
    for k, (a1, a2) in enumerate(st.alphas):
        rs = [r[k] for r in recs]
        n_sim = len(rs)
        targets = []
        for i, t in enumerate(design.restrictions.targets):
            targets.append(
                TargetSummary(
                    label=t.label,
                    f_lo=pop.ftheta[i].lo,
                    f_hi=pop.ftheta[i].hi,
                    cov_lo=_mean(r["targets"][i]["cov_lo"] for r in rs),
                    cov_hi=_mean(r["targets"][i]["cov_hi"] for r in rs),
                    mean_length=_mean(r["targets"][i]["length"] for r in rs),
                )
            )
        out.append(
            McResult(
                design=design.name,
                T=st.T,
                alpha1=a1,
                alpha2=a2,
                n_sim=n_sim,
                n_empty=int(sum(r["empty"] for r in rs)),
                cov_q=_mean(r.get("cov_q") for r in rs),
                len_q_pi=_mean(r.get("len_q") for r in rs) / np.pi,
                fq_length_pi=pop.fq_length / np.pi,
                cov_phi=_mean(r["cov_phi"] for r in rs),
                mean_binding=_mean(r.get("binding") for r in rs),
                targets=tuple(targets),
            )
        )
    return out


def _run(design, T, n_sim, alphas, n_lambda, n_q, n_z, seed, threads, scheme) -> list[McResult]:
    if isinstance(design, str):
        design = get_design(design)
    if n_sim < 1:
        raise ConfigError("n_sim must be >= 1")
    WeightScheme.parse(scheme)
    pop = population_sets(design)
    st = McSettings(T, tuple((float(a), float(b)) for a, b in alphas), n_lambda, n_q, n_z, seed, scheme)
    reps = list(range(n_sim))
    if threads > 1:
        chunks = [reps[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(threads) as pool:
            parts = list(pool.map(_run_chunk, [(design, pop, st, c) for c in chunks]))
        by_rep = {}
        for c, p in zip(chunks, parts):
            by_rep.update(dict(zip(c, p)))
        recs = [by_rep[r] for r in reps]
    else:
        recs = [_replication(design, pop, st, r) for r in reps]
    return _aggregate(design, pop, st, recs)


def run_experiment(
    design: McDesign | str,
    T: int,
    n_sim: int,
    alpha1: float = 0.05,
    alpha2: float = 0.05,
    n_lambda: int = 1000,
    n_q: int | None = None,
    n_z: int = 500,
    seed: int = 0,
    *,
    threads: int = 1,
    scheme: str = "identity",
) -> McResult:
    """Run ``n_sim`` replications; fully determined by ``seed``."""
    return _run(design, T, n_sim, [(alpha1, alpha2)], n_lambda, n_q, n_z, seed, threads, scheme)[0]


def alpha_sweep(
    design: McDesign | str = "exp3",
    alphas: Sequence[float] = (0.01, 0.05, 0.09),
    mode: str = "fix-total",
    *,
    total: float = 0.10,
    fixed_alpha1: float = 0.05,
    T: int = EXP3_T,
    n_sim: int = 200,
    n_lambda: int = 1000,
    n_q: int | None = None,
    n_z: int = 1000,
    seed: int = 0,
    threads: int = 1,
) -> list[McResult]:
    """Coverage and width for several (alpha1, alpha2) splits.

    ``fix-total`` varies alpha1 with alpha1 + alpha2 = ``total``;
    ``fix-alpha1`` varies alpha2 with alpha1 = ``fixed_alpha1``. All pairs
    reuse the same samples and bootstrap draws.
    """
    if mode == "fix-total":
        pairs = [(a, total - a) for a in alphas]
    elif mode == "fix-alpha1":
        pairs = [(fixed_alpha1, a) for a in alphas]
    else:
        raise ConfigError(f"unknown sweep mode {mode!r}")
    for a1, a2 in pairs:
        if not (0 < a1 < 0.5 and 0 < a2 < 1):
            raise ConfigError(f"invalid alpha pair ({a1}, {a2})")
    return _run(design, T, n_sim, pairs, n_lambda, n_q, n_z, seed, threads, "identity")


def results_to_json(results: Sequence[McResult]) -> str:
    payload = {f"{r.design}|T={r.T}|a1={r.alpha1}|a2={r.alpha2}": r.to_dict() for r in results}
    return json.dumps(payload, indent=2, sort_keys=True, default=float)


def uniform_sphere(n: int, n_q: int, seed: int) -> QGrid:
    return sample_uniform(n, n_q, np.random.default_rng(seed))
