"""Configuration, data ingestion, result files and the ``svarbands`` command line."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .bayes_compare import credible_band, posterior_sample
from .bootstrap_cov import BootstrapConfig, bootstrap_lambda
from .confidence_sets import bands as make_bands
from .confidence_sets import cs_q, plugin_sets_theta
from .errors import ConfigError, NumericalError, SvarBandsError
from .mc_harness import DESIGNS, alpha_sweep, get_design, population_sets, results_to_json, run_experiment
from .moment_inequality import CriticalValueConfig, WeightScheme
from .restrictions import RestrictionSet, SignRestriction, ThetaTarget, build_phi
from .sphere import make_grid
from .var_core import TimeSeriesData, VarSpec, bic_table, estimate_ols

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_EMPTY_CS = 0, 1, 2, 3

TRANSFORMS = ("none", "log", "scale-100", "scale-400", "log-difference", "linear-detrend")
_DATE_NAMES = {"date", "dates", "quarter", "period", "time"}

# ---------------------------------------------------------------------------
# Data ingestion


def _validate_pipeline(name: str, steps: Sequence[str]) -> tuple[str, ...]:
    steps = tuple(str(s).strip().lower() for s in steps)
    for s in steps:
        if s not in TRANSFORMS:
            raise ConfigError(f"unknown transform {s!r} for {name}")
    if "log-difference" in steps:
        i = steps.index("log-difference")
        if "log" not in steps[:i]:
            raise ConfigError(f"{name}: log-difference differences a logged series, so 'log' must come first")
    return steps


def apply_transforms(x: np.ndarray, steps: Sequence[str], name: str = "series") -> np.ndarray:
    """Apply a transform pipeline in order; differencing shortens the series."""
    steps = _validate_pipeline(name, steps)
    x = np.asarray(x, dtype=float)
    for s in steps:
        if s == "log":
            if np.any(x <= 0):
                raise ConfigError(f"{name}: log of a non-positive value")
            x = np.log(x)
        elif s == "scale-100":
            x = 100.0 * x
        elif s == "scale-400":
            x = 400.0 * x
        elif s == "log-difference":
            x = np.diff(x)
        elif s == "linear-detrend":
            t = np.arange(x.size, dtype=float)
            X = np.column_stack([np.ones_like(t), t])
            beta = np.linalg.lstsq(X, x, rcond=None)[0]
            x = x - X @ beta
    return x


def ingest_csv(path: str | Path, transforms: dict[str, Sequence[str]] | None = None, variables=None) -> TimeSeriesData:
    """Read a CSV with a header row, apply transforms and align the series.

    A leading date column (by name or because it is non-numeric) is kept as
    labels. Series shortened by differencing are aligned on their last
    observation and all series are trimmed to the common span.
    """
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if frame.shape[1] == 0:
        raise ConfigError("CSV has no columns")
    dates = None
    first = frame.columns[0]
    if str(first).strip().lower() in _DATE_NAMES or pd.to_numeric(frame[first], errors="coerce").isna().any():
        dates = frame[first].astype(str).tolist()
        frame = frame.drop(columns=first)
    cols = list(variables) if variables else list(frame.columns)
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise ConfigError(f"columns not found in CSV: {missing}")
    transforms = transforms or {}
    unknown = [k for k in transforms if k not in cols]
    if unknown:
        raise ConfigError(f"transforms given for unknown variables: {unknown}")
    series = []
    for c in cols:
        num = pd.to_numeric(frame[c], errors="coerce")
        if num.isna().any():
            bad = int(num.isna().idxmax())
            raise ConfigError(f"non-numeric cell in column {c!r} at data row {bad + 1}")
        series.append(apply_transforms(num.to_numpy(float), transforms.get(c, ()), c))
    T = min(s.size for s in series)
    if T == 0:
        raise ConfigError("no observations left after transforms")
    values = np.column_stack([s[s.size - T :] for s in series])
    if dates is not None:
        dates = tuple(dates[len(dates) - T :])
    return TimeSeriesData(values, tuple(cols), dates)


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class InferenceConfig:
    alpha1: float = 0.05
    alpha2: float = 0.05
    n_q: int | None = None
    n_lambda: int = 1000
    n_z: int = 1000
    weight: str = "identity"
    share_draws: bool = True
    cap_binding: bool = False


@dataclass(frozen=True)
class RunConfig:
    data_path: str | None = None
    variables: tuple[str, ...] = ()
    transforms: dict = field(default_factory=dict)
    var: VarSpec = VarSpec(p=2)
    restrictions: RestrictionSet = RestrictionSet()
    inference: InferenceConfig = InferenceConfig()
    seed: int = 0
    output: str = "out"
    bayes_draws: int = 50_000
    bayes_level: float = 0.90
    bic_max_p: int = 8
    mc: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def n_q(self) -> int:
        if self.inference.n_q:
            return self.inference.n_q
        n = len(self.variables) or (self.var.n or 2)
        d = n - self.restrictions.n_zero
        return 629 if d == 2 else 20_000


def _var_index(name, variables: Sequence[str]) -> int:
    if isinstance(name, int) or (isinstance(name, str) and name.isdigit()):
        idx = int(name)
    elif name in variables:
        idx = list(variables).index(name)
    else:
        raise ConfigError(f"unknown variable {name!r}")
    if variables and not 0 <= idx < len(variables):
        raise ConfigError(f"variable index {idx} out of range")
    return idx


def _horizons(spec) -> list[int]:
    if isinstance(spec, int):
        return list(range(spec + 1))
    if isinstance(spec, dict):
        return list(range(int(spec.get("from", 0)), int(spec["to"]) + 1))
    return [int(h) for h in spec]


def parse_restrictions(cfg: dict, variables: Sequence[str]) -> RestrictionSet:
    cfg = cfg or {}
    zero = cfg.get("zero", []) or []
    zidx = [_var_index(v, variables) for v in zero]
    if sorted(zidx) != list(range(len(zidx))):
        raise ConfigError("zero-restricted variables must be ordered first in the data")
    sign = []
    for item in cfg.get("sign", []) or []:
        var = _var_index(item["variable"], variables)
        for h in _horizons(item.get("horizons", item.get("horizon", 0))):
            sign.append(SignRestriction(var, h, item.get("sign", ">=0"), bool(item.get("cumulative", False))))
    targets = []
    for item in cfg.get("targets", []) or []:
        var = _var_index(item["variable"], variables)
        kind = item.get("kind", "irf")
        bounds = item.get("bounds")
        name = variables[var] if variables else str(var)
        for h in _horizons(item.get("horizons", item.get("horizon", 0))):
            targets.append(ThetaTarget(var, h, kind, tuple(bounds) if bounds else None, f"{kind}:{name}:{h}"))
    return RestrictionSet(sign=tuple(sign), n_zero=len(zidx), targets=tuple(targets))


_TOP_KEYS = {"data", "var", "restrictions", "inference", "bayes", "seed", "output", "mc", "estimate"}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML run configuration and apply flag overrides."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        extra = set(raw) - _TOP_KEYS
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        base = Path(path).parent
    else:
        base = Path(".")
    raw = json.loads(json.dumps(raw))  # normalize to plain types
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    data = raw.get("data", {}) or {}
    variables = tuple(data.get("variables", ()) or ())
    data_path = data.get("path")
    if data_path is not None and not Path(data_path).is_absolute():
        data_path = str(base / data_path)
    var_cfg = raw.get("var", {}) or {}
    spec = VarSpec(
        p=int(var_cfg.get("p", 2)),
        deterministics=var_cfg.get("deterministics", "intercept"),
        n=len(variables) or None,
    )
    restr = parse_restrictions(raw.get("restrictions", {}), variables)
    if variables:
        restr.validate(len(variables))
    inf = raw.get("inference", {}) or {}
    known_inf = set(InferenceConfig.__dataclass_fields__)
    bad = set(inf) - known_inf
    if bad:
        raise ConfigError(f"unknown inference keys: {sorted(bad)}")
    inference = InferenceConfig(**inf)
    remap = {"alpha1": "alpha1", "alpha2": "alpha2", "nq": "n_q", "nz": "n_z", "nlambda": "n_lambda"}
    inference = replace(inference, **{remap[k]: overrides[k] for k in remap if k in overrides})
    if not 0 < inference.alpha1 < 0.5 or not 0 < inference.alpha2 < 1:
        raise ConfigError("alpha1 must lie in (0, 1/2) and alpha2 in (0, 1)")
    WeightScheme.parse(inference.weight)
    transforms = data.get("transforms", {}) or {}
    for k, v in transforms.items():
        _validate_pipeline(k, v if isinstance(v, list) else [v])
    bayes = raw.get("bayes", {}) or {}
    est_cfg = raw.get("estimate", {}) or {}
    return RunConfig(
        data_path=data_path,
        variables=variables,
        transforms={k: (v if isinstance(v, list) else [v]) for k, v in transforms.items()},
        var=spec,
        restrictions=restr,
        inference=inference,
        seed=int(overrides.get("seed", raw.get("seed", 0))),
        output=str(overrides.get("out") or raw.get("output", "out")),
        bayes_draws=int(bayes.get("n_draws", 50_000)),
        bayes_level=float(bayes.get("level", 0.90)),
        bic_max_p=int(est_cfg.get("bic_max_p", 8)),
        mc=raw.get("mc", {}) or {},
        raw=raw,
    )


# ---------------------------------------------------------------------------
# Output


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


def csv_text(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


BAND_COLUMNS = ("target", "variable", "horizon", "fhat_lo", "fhat_hi", "cs_lo", "cs_hi", "bayes_lo", "bayes_hi")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) else (str(f) if math.isinf(f) else f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def manifest(command: str, cfg: RunConfig, seeds: dict, extra: dict | None = None) -> dict:
    import scipy

    resolved = {
        "command": command,
        "config": cfg.raw,
        "inference": asdict(cfg.inference),
        "seed": cfg.seed,
        **(extra or {}),
    }
    blob = json.dumps(_jsonable(resolved), sort_keys=True).encode()
    data_hash = None
    if cfg.data_path and os.path.exists(cfg.data_path):
        data_hash = hashlib.sha256(Path(cfg.data_path).read_bytes()).hexdigest()
    return {
        "command": command,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "data_sha256": data_hash,
        "seeds": seeds,
        "resolved": _jsonable(resolved),
        "versions": {
            "svarbands": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
    }


def write_outputs(out_dir: str | Path, files: dict[str, str]) -> None:
    out = Path(out_dir)
    for name, text in files.items():
        _atomic_write(out / name, text)


# ---------------------------------------------------------------------------
# Commands


def _load_data(cfg: RunConfig) -> TimeSeriesData:
    if not cfg.data_path:
        raise ConfigError("config has no data path")
    return ingest_csv(cfg.data_path, cfg.transforms, cfg.variables or None)


def run_estimate(cfg: RunConfig) -> dict[str, str]:
    data = _load_data(cfg)
    est = estimate_ols(data, cfg.var)
    summary = {
        "variables": list(data.variable_names),
        "T_effective": est.T,
        "p": est.p,
        "deterministics": cfg.var.deterministics,
        "coefs": est.coefs,
        "intercept": est.intercept,
        "trend": est.trend,
        "sigma_u": est.sigma_u,
        "sigma_tr": est.sigma_tr,
    }
    bic = bic_table(data, cfg.bic_max_p, cfg.var.deterministics)
    return {
        "var_summary.json": json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n",
        "bic.csv": csv_text(bic, ("p", "bic", "T_eff")),
    }


def _grid(cfg: RunConfig, n: int):
    z = cfg.restrictions.n_zero
    return make_grid(n, z, cfg.n_q(), np.random.default_rng([cfg.seed, 2]))


def compute_bands(cfg: RunConfig, data: TimeSeriesData | None = None, threads: int = 1):
    """Estimate, bootstrap, build CS^q and the Bonferroni bands."""
    data = data if data is not None else _load_data(cfg)
    est = estimate_ols(data, cfg.var)
    stack = build_phi(est, cfg.restrictions)
    boot = bootstrap_lambda(est, stack, BootstrapConfig(cfg.inference.n_lambda, cfg.seed))
    stack = stack.with_covariance(boot.lambda_qq, boot.lambda_theta, boot.L)
    inf = cfg.inference
    crit = CriticalValueConfig(inf.alpha1, inf.n_z, cfg.seed + 1, inf.share_draws, inf.cap_binding)
    res = cs_q(stack, _grid(cfg, est.n), inf.weight, crit, threads=threads)
    return make_bands(stack, res, inf.alpha2), res


def _band_rows(result, bayes=None) -> list[dict]:
    rows = result.records()
    for i, r in enumerate(rows):
        r["bayes_lo"] = bayes[0][i] if bayes is not None else math.nan
        r["bayes_hi"] = bayes[1][i] if bayes is not None else math.nan
    return rows


def run_bands(cfg: RunConfig, threads: int = 1) -> tuple[dict[str, str], bool]:
    result, res = compute_bands(cfg, threads=threads)
    summary = {
        "n_q": len(res.grid),
        "n_fhat": res.n_fhat,
        "n_cs": res.n_cs,
        "diagnostic": result.diagnostic,
        "alpha1": result.alpha1,
        "alpha2": result.alpha2,
    }
    files = {
        "bands.csv": csv_text(_band_rows(result), BAND_COLUMNS),
        "bands_summary.json": json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n",
    }
    return files, res.cs_empty


def run_bayes(cfg: RunConfig) -> dict[str, str]:
    data = _load_data(cfg)
    draws = posterior_sample(data, cfg.var, cfg.restrictions, cfg.bayes_draws, seed=cfg.seed)
    lo, hi = credible_band(draws, cfg.bayes_level)
    est = estimate_ols(data, cfg.var)
    fhat = plugin_sets_theta(build_phi(est, cfg.restrictions), _grid(cfg, est.n).points)
    rows = []
    for i, t in enumerate(cfg.restrictions.targets):
        rows.append(
            {
                "target": t.label,
                "variable": t.variable,
                "horizon": t.horizon,
                "fhat_lo": fhat[i].lo,
                "fhat_hi": fhat[i].hi,
                "cs_lo": math.nan,
                "cs_hi": math.nan,
                "bayes_lo": lo[i],
                "bayes_hi": hi[i],
            }
        )
    summary = {"accepted": len(draws), "attempts": draws.attempts, "acceptance_rate": draws.acceptance_rate}
    return {
        "bayes.csv": csv_text(rows, BAND_COLUMNS),
        "bayes_summary.json": json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n",
    }


MC_COLUMNS = (
    "design",
    "T",
    "alpha1",
    "alpha2",
    "n_sim",
    "target",
    "f_lo",
    "f_hi",
    "cov_lo",
    "cov_hi",
    "cov_hi_se",
    "mean_length",
    "cov_q",
    "cov_q_se",
    "len_q_pi",
    "fq_length_pi",
    "cov_phi",
    "mean_binding",
    "n_empty",
)


def run_mc(cfg: RunConfig, args) -> dict[str, str]:
    mc = dict(cfg.mc)
    design = args.design or mc.get("design", "1")
    T = args.T or mc.get("T", 100)
    n_sim = args.nsim or mc.get("n_sim", 500)
    inf = cfg.inference
    n_z = args.nz or mc.get("n_z", 500)
    n_lambda = args.nlambda or mc.get("n_lambda", 1000)
    n_q = args.nq or mc.get("n_q")
    if args.sweep:
        results = alpha_sweep(
            design,
            [float(a) for a in args.sweep.split(",")],
            args.sweep_mode,
            T=T,
            n_sim=n_sim,
            n_lambda=n_lambda,
            n_q=n_q,
            n_z=n_z,
            seed=cfg.seed,
            threads=args.threads,
        )
    else:
        results = [
            run_experiment(
                design,
                T,
                n_sim,
                inf.alpha1,
                inf.alpha2,
                n_lambda,
                n_q,
                n_z,
                cfg.seed,
                threads=args.threads,
                scheme=inf.weight,
            )
        ]
    rows = [row for r in results for row in r.table_rows()]
    return {"mc.csv": csv_text(rows, MC_COLUMNS), "mc.json": results_to_json(results) + "\n"}


def run_population(args) -> dict[str, str]:
    names = [args.design] if args.design else list(DESIGNS)
    out = {}
    for name in names:
        pop = population_sets(get_design(name))
        d = get_design(name)
        out[name] = {
            "fq_arc": pop.fq_arc,
            "fq_length_pi": pop.fq_length / math.pi,
            "ftheta": [
                {"target": t.label, "lo": f.lo, "hi": f.hi, "length": f.length}
                for t, f in zip(d.restrictions.targets, pop.ftheta)
            ],
        }
    return {"population.json": json.dumps(_jsonable(out), indent=2, sort_keys=True) + "\n"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svarbands", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", "-c", required=needs_config, help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--alpha1", type=float)
        p.add_argument("--alpha2", type=float)
        p.add_argument("--nq", type=int)
        p.add_argument("--nz", type=int)
        p.add_argument("--nlambda", type=int)

    common(sub.add_parser("estimate", help="OLS estimates and BIC table"))
    common(sub.add_parser("bands", help="Bonferroni bands and plug-in identified sets"))
    common(sub.add_parser("bayes", help="Bayesian credible bands"))
    mc = sub.add_parser("mc", help="Monte Carlo coverage experiment")
    common(mc, needs_config=False)
    mc.add_argument("--design", choices=DESIGNS)
    mc.add_argument("--T", type=int)
    mc.add_argument("--nsim", type=int)
    mc.add_argument("--sweep", help="comma-separated alpha values for an alpha sweep")
    mc.add_argument("--sweep-mode", default="fix-total", choices=("fix-total", "fix-alpha1"))
    pop = sub.add_parser("population-sets", help="identified sets at the Monte Carlo DGPs")
    pop.add_argument("--design", choices=DESIGNS)
    pop.add_argument("--out", default="out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    code = EXIT_OK
    try:
        if args.command == "population-sets":
            files = run_population(args)
            write_outputs(args.out, files)
            return EXIT_OK
        overrides = {k: getattr(args, k, None) for k in ("seed", "alpha1", "alpha2", "nq", "nz", "nlambda", "out")}
        cfg = load_config(args.config, overrides)
        seeds = {"base": cfg.seed}
        if args.command == "estimate":
            files = run_estimate(cfg)
        elif args.command == "bands":
            files, empty = run_bands(cfg, threads=args.threads)
            if empty:
                code = EXIT_EMPTY_CS
        elif args.command == "bayes":
            files = run_bayes(cfg)
        else:
            files = run_mc(cfg, args)
            seeds["mc"] = cfg.seed
        extra = {"argv": [a for a in (argv if argv is not None else sys.argv[1:]) if a]}
        files["manifest.json"] = json.dumps(manifest(args.command, cfg, seeds, extra), indent=2, sort_keys=True) + "\n"
        write_outputs(cfg.output, files)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SvarBandsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if code == EXIT_EMPTY_CS:
        print("confidence set for q is empty; see bands_summary.json", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
