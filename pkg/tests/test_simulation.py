import numpy as np
import pytest

from rdlearn import (DgpSpec, DomainError, Oracle, RngSpec, SimOptions,
                     case_oracle, empirical_value, generate,
                     known_constant_propensity, prediction_error,
                     run_replications, stepp_export, summarize)
from rdlearn.core import Dataset
from rdlearn.simulation import metrics_csv_lines, stepp_csv_lines


class TestCaseOracles:
    def test_case_one_effects_at_x1(self):
        oracle = case_oracle("I")
        x = np.zeros((1, 3))
        x[0, 0] = -1.0
        # mu_1 - mu_2 = -x1 = 1, so centered effects are (0.5, -0.5).
        delta = oracle.delta(x)
        np.testing.assert_allclose(delta, [[0.5, -0.5]], atol=1e-12)

    def test_case_one_propensity(self):
        oracle = case_oracle("I")
        probs = oracle.propensity(np.array([[-2.0, 0, 0], [1.0, 0, 0]]))
        np.testing.assert_allclose(probs, [[0.8, 0.2], [0.2, 0.8]])

    def test_case_two_propensity_flat(self):
        oracle = case_oracle("II")
        probs = oracle.propensity(np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_allclose(probs[:, 0], 0.2)

    def test_case_three_effects_linear(self):
        oracle = case_oracle("III")
        x = np.array([[1.0, 2.0, 3.0]])
        # mu = (1-2+3, 2-2) = (2, 0): effects (1, -1).
        np.testing.assert_allclose(oracle.delta(x), [[1.0, -1.0]])

    def test_case_four_propensity_regions(self):
        oracle = case_oracle("IV")
        probs = oracle.propensity(np.array([[1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(probs, [[0.5, 0.25, 0.25]])
        probs = oracle.propensity(np.array([[0.0, 1.0, 0.0]]))
        np.testing.assert_allclose(probs, [[0.25, 0.5, 0.25]])
        probs = oracle.propensity(np.array([[0.0, 0.0, 1.0]]))
        np.testing.assert_allclose(probs, [[0.25, 0.25, 0.5]])

    @pytest.mark.parametrize("case", ["I", "II", "III", "IV"])
    def test_oracle_self_consistency(self, case):
        oracle = case_oracle(case)
        x = np.random.default_rng(1).normal(size=(10000, 3)) * np.sqrt(3.0)
        np.testing.assert_allclose(oracle.delta(x).sum(axis=1), 0.0,
                                   atol=1e-12)
        np.testing.assert_allclose(oracle.propensity(x).sum(axis=1), 1.0,
                                   atol=1e-12)
        assert np.all(oracle.propensity(x) > 0)

    def test_unknown_case_rejected(self):
        with pytest.raises(DomainError):
            case_oracle("V")
        with pytest.raises(DomainError):
            DgpSpec(case="V", n=10)

    def test_p_below_three_rejected(self):
        with pytest.raises(DomainError):
            DgpSpec(case="I", n=10, p=2)


class TestGenerate:
    def test_shapes_and_labels(self):
        spec = DgpSpec(case="IV", n=200, p=10, rng=RngSpec(1, 0))
        data, oracle = generate(spec)
        assert data.x.shape == (200, 10)
        assert data.k == 3
        assert set(np.unique(data.a)) <= {1, 2, 3}
        assert np.all(data.x[:, 3:] >= 0) and np.all(data.x[:, 3:] <= 1)

    def test_deterministic(self):
        spec = DgpSpec(case="I", n=50, p=5, rng=RngSpec(7, 3))
        a, _ = generate(spec)
        b, _ = generate(spec)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.a, b.a)
        np.testing.assert_array_equal(a.y, b.y)

    def test_sigma_zero_exact_outcomes(self):
        spec = DgpSpec(case="III", n=100, p=4, sigma=0.0, rng=RngSpec(2, 0))
        data, oracle = generate(spec)
        mu = oracle.mu(data.x)
        np.testing.assert_allclose(data.y, mu[np.arange(100), data.a - 1],
                                   atol=1e-12)

    def test_arm_frequencies_match_propensity(self):
        spec = DgpSpec(case="II", n=20000, p=3, rng=RngSpec(3, 0))
        data, _ = generate(spec)
        assert abs(np.mean(data.a == 1) - 0.2) < 0.01

    def test_normal_scale_option(self):
        spec_var = DgpSpec(case="I", n=20000, p=3, rng=RngSpec(4, 0))
        spec_sd = DgpSpec(case="I", n=20000, p=3, rng=RngSpec(4, 0),
                          normal_scale="sd")
        x_var, _ = generate(spec_var)
        x_sd, _ = generate(spec_sd)
        assert abs(np.std(x_var.x[:, 0]) - np.sqrt(3.0)) < 0.05
        assert abs(np.std(x_sd.x[:, 0]) - 3.0) < 0.08


class TestMetrics:
    def test_prediction_error_zero_for_oracle(self):
        oracle = case_oracle("III")
        x = np.random.default_rng(5).normal(size=(50, 3))
        assert prediction_error(oracle.delta, oracle, x) == 0.0

    def test_prediction_error_constant_offset(self):
        oracle = case_oracle("III")
        x = np.random.default_rng(6).normal(size=(50, 3))
        c = 0.7
        shifted = lambda x_: oracle.delta(x_) + np.array([c, -c])
        assert prediction_error(shifted, oracle, x) == pytest.approx(2 * c * c)

    def test_empirical_value_examples(self):
        # Two followers with weight 2 each and outcomes 1 and 3: value 2.
        data = Dataset(x=np.zeros((3, 1)), a=np.array([1, 1, 2]),
                       y=np.array([1.0, 3.0, 100.0]), k=2)
        prop = known_constant_propensity([0.5, 0.5])
        value = empirical_value(np.array([1, 1, 1]), data, prop)
        assert value == pytest.approx(2.0)

    def test_empirical_value_weights_cancel_when_all_follow(self):
        rng = np.random.default_rng(7)
        data = Dataset(x=rng.normal(size=(40, 2)),
                       a=np.ones(40, dtype=int), y=rng.normal(size=40), k=2)
        prop = known_constant_propensity([0.3, 0.7])
        value = empirical_value(np.ones(40, dtype=int), data, prop)
        assert value == pytest.approx(float(data.y.mean()))

    def test_empirical_value_single_follower(self):
        data = Dataset(x=np.zeros((2, 1)), a=np.array([1, 2]),
                       y=np.array([5.0, -5.0]), k=2)
        prop = known_constant_propensity([0.5, 0.5])
        assert empirical_value(np.array([1, 1]), data, prop) == 5.0

    def test_empirical_value_no_followers(self):
        data = Dataset(x=np.zeros((2, 1)), a=np.array([1, 1]),
                       y=np.zeros(2), k=2)
        prop = known_constant_propensity([0.5, 0.5])
        with pytest.raises(DomainError):
            empirical_value(np.array([2, 2]), data, prop)


class TestRunReplications:
    OPTS = SimOptions(p=5, test_size=50, lam=0.1, main_lam=0.1, bandwidth=2.0)

    def test_row_count_and_order(self):
        rows = run_replications(["III"], ["rd", "d"], [60], 3,
                                rng=RngSpec(0, 0), opts=self.OPTS)
        assert len(rows) == 6
        keys = [(r.case, r.method, r.n, r.replication) for r in rows]
        assert keys == [("III", "rd", 60, 0), ("III", "rd", 60, 1),
                        ("III", "rd", 60, 2), ("III", "d", 60, 0),
                        ("III", "d", 60, 1), ("III", "d", 60, 2)]
        assert all(r.error is None for r in rows)
        assert all(r.pe is not None and r.pe >= 0 for r in rows)

    def test_parallel_matches_serial(self):
        serial = run_replications(["III"], ["rd"], [60], 4,
                                  rng=RngSpec(1, 0), opts=self.OPTS, n_jobs=1)
        parallel = run_replications(["III"], ["rd"], [60], 4,
                                    rng=RngSpec(1, 0), opts=self.OPTS, n_jobs=4)
        assert metrics_csv_lines(serial) == metrics_csv_lines(parallel)

    def test_summary_structure(self):
        rows = run_replications(["III"], ["rd", "q"], [60], 3,
                                rng=RngSpec(2, 0), opts=self.OPTS)
        summary = summarize(rows)
        groups = {(g["case"], g["method"], g["n"]): g
                  for g in summary["groups"]}
        assert set(groups) == {("III", "rd", 60), ("III", "q", 60)}
        g = groups[("III", "rd", 60)]
        assert g["replications"] == 3 and g["failures"] == 0
        assert g["pe_q1"] <= g["pe_median"] <= g["pe_q3"]
        assert g["seconds_total"] > 0

    def test_csv_excludes_timing(self):
        rows = run_replications(["III"], ["rd"], [60], 2,
                                rng=RngSpec(3, 0), opts=self.OPTS)
        lines = metrics_csv_lines(rows)
        assert lines[0] == "case,method,n,replication,pe,value,error"
        assert len(lines) == 3
        assert "seconds" not in lines[0]

    def test_zero_replications_rejected(self):
        with pytest.raises(DomainError):
            run_replications(["I"], ["rd"], [50], 0)


class TestStepp:
    def test_oracle_band_collapses_to_truth(self):
        oracle = case_oracle("I")
        spec = DgpSpec(case="I", n=100, p=5)
        rows = stepp_export([oracle.delta] * 5, oracle, spec)
        for row in rows:
            assert row["q025"] == pytest.approx(row["truth"], abs=1e-10)
            assert row["q975"] == pytest.approx(row["truth"], abs=1e-10)

    def test_case_one_truth_is_negative_x1(self):
        oracle = case_oracle("I")
        spec = DgpSpec(case="I", n=100, p=5)
        rows = stepp_export([oracle.delta], oracle, spec)
        for row in rows:
            assert row["truth"] == pytest.approx(-row["x1"], abs=1e-12)

    def test_multi_arm_uses_requested_arm(self):
        oracle = case_oracle("IV")
        spec = DgpSpec(case="IV", n=100, p=5)
        rows = stepp_export([oracle.delta], oracle, spec, arm=2)
        # At (x1, 0, 0, 0.5, 0.5): delta_2 = x2 - x3 = 0.
        for row in rows:
            assert row["truth"] == pytest.approx(0.0, abs=1e-12)

    def test_csv_rendering(self):
        oracle = case_oracle("I")
        spec = DgpSpec(case="I", n=100, p=5)
        rows = stepp_export([oracle.delta], oracle, spec,
                            grid=np.array([0.0, 1.0]))
        lines = stepp_csv_lines(rows)
        assert lines[0] == "x1,q025,q50,q975,truth"
        assert len(lines) == 3
