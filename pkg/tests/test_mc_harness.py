import json

import numpy as np
import pytest

from svarbands.errors import ConfigError
from svarbands.mc_harness import (
    DESIGNS,
    alpha_sweep,
    get_design,
    population_sets,
    results_to_json,
    run_experiment,
    uniform_sphere,
)


class TestDesigns:
    def test_registry(self):
        for name in DESIGNS:
            d = get_design(name)
            assert d.restrictions.r > 0
        with pytest.raises(ConfigError):
            get_design("9")

    @pytest.mark.parametrize("name", ["1", "2", "3", "4", "2-h01", "4-h04"])
    def test_population_set_is_feasible(self, name):
        # Every point of the closed-form arc satisfies the restrictions at the DGP.
        from svarbands.restrictions import build_phi, stilde

        d = get_design(name)
        pop = population_sets(d)
        stack = build_phi(d.dgp, d.restrictions, T=100)
        a, b = pop.fq_arc
        for t in np.linspace(a, b, 25):
            q = np.array([np.cos(t), np.sin(t)])
            assert np.all(stilde(stack, q) @ stack.phi_q >= -1e-12)

    def test_uniform_sphere(self):
        q = uniform_sphere(3, 100, np.random.default_rng(0)).points
        assert np.allclose(np.linalg.norm(q, axis=1), 1.0)


class TestRuns:
    def test_single_replication(self):
        r = run_experiment("1", T=100, n_sim=1, n_lambda=50, n_z=100)
        assert r.n_sim == 1
        assert 0 <= r.cov_q <= 1 and r.len_theta >= 0
        json.loads(results_to_json([r]))

    def test_deterministic(self):
        a = run_experiment("2-h01", T=100, n_sim=3, n_lambda=50, n_z=100, seed=9)
        b = run_experiment("2-h01", T=100, n_sim=3, n_lambda=50, n_z=100, seed=9)
        assert a.to_dict() == b.to_dict()

    def test_threads_match_serial(self):
        a = run_experiment("1", T=100, n_sim=4, n_lambda=50, n_z=100, seed=2)
        b = run_experiment("1", T=100, n_sim=4, n_lambda=50, n_z=100, seed=2, threads=2)
        assert a.to_dict() == b.to_dict()

    def test_sweep_pair_matches_single_run(self):
        sweep = alpha_sweep("1", alphas=(0.05,), mode="fix-alpha1", T=100, n_sim=3, n_lambda=50, n_z=100, seed=4)
        single = run_experiment("1", T=100, n_sim=3, alpha1=0.05, alpha2=0.05, n_lambda=50, n_z=100, seed=4)
        assert sweep[0].to_dict() == single.to_dict()

    def test_width_shrinks_with_alpha2(self):
        res = alpha_sweep("1", alphas=(0.01, 0.05, 0.2), mode="fix-alpha1", T=100, n_sim=5, n_lambda=100, n_z=200)
        widths = [r.len_theta for r in res]
        assert widths[0] >= widths[1] >= widths[2]

    def test_bad_sweep_mode(self):
        with pytest.raises(ConfigError):
            alpha_sweep("1", mode="other", n_sim=1)
