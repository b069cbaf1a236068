import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=200,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

DESIGN1_SIGMA_TR = np.array([[0.597, 0.0], [-0.205, 0.812]])
DESIGN2_A1 = np.array([[0.873, 0.003], [-0.229, 0.230]])
DESIGN2_SIGMA_TR = np.array([[0.295, 0.0], [-0.092, 0.795]])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_macro_csv(path, T, seed):
    """Raw-level quarterly CSV whose transformed series follow the four-variable design.

    Output and money are log-levels around a linear trend, the price level
    integrates quarterly inflation, and the rate is left as is. Applying
    log/detrend/x100 and log-difference/x400 recovers the simulated VAR.
    """
    from svarbands.mc_harness import exp3_dgp
    from svarbands.var_core import simulate_var

    y = simulate_var(exp3_dgp(), T + 1, np.random.default_rng(seed)).values
    t = np.arange(T + 1)
    output = np.exp((y[:, 0] + 0.8 * t + 700) / 100)
    price = np.exp(np.cumsum(y[:, 1] / 400) + 3.0)
    money = np.exp((y[:, 3] + 1.5 * t + 600) / 100)
    lines = ["date,output,inflation,rate,money"]
    for i in range(T + 1):
        year, quarter = 1964 + (i + 3) // 4, (i + 3) % 4 + 1
        lines.append(f"{year}Q{quarter},{output[i]:.10g},{price[i]:.10g},{y[i, 2]:.10g},{money[i]:.10g}")
    path.write_text("\n".join(lines) + "\n")


MACRO_TRANSFORMS = {
    "output": ["log", "linear-detrend", "scale-100"],
    "inflation": ["log", "log-difference", "scale-400"],
    "money": ["log", "linear-detrend", "scale-100"],
}


def macro_config(data_path, zero, n_q, n_lambda=1000, n_z=1000, horizons=23, output="out", bayes_draws=2000):
    sign = [
        {"variable": "inflation", "horizons": [1] if zero else [0, 1], "sign": "<=0"},
        {"variable": "rate", "horizons": [0, 1], "sign": ">=0"},
        {"variable": "money", "horizons": [0, 1], "sign": "<=0"},
    ]
    restr = {"sign": sign, "targets": [{"variable": "output", "horizons": horizons}]}
    if zero:
        restr["zero"] = ["output", "inflation"]
    return {
        "data": {"path": str(data_path), "variables": ["output", "inflation", "rate", "money"], "transforms": MACRO_TRANSFORMS},
        "var": {"p": 2, "deterministics": "intercept"},
        "restrictions": restr,
        "inference": {"alpha1": 0.05, "alpha2": 0.05, "n_q": n_q, "n_lambda": n_lambda, "n_z": n_z},
        "bayes": {"n_draws": bayes_draws, "level": 0.90},
        "seed": 3,
        "output": str(output),
    }
