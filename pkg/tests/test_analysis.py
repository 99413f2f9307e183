import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import q_oracle, r_oracle, random_inputs

from pcasgd import AlgorithmConfig, ObjectiveSpec, Topology, run_experiment
from pcasgd.analysis import (
    BoundError,
    BoundInputs,
    bound_report,
    consensus_deviation,
    estimate_constants,
    format_report,
    lemma1_bound,
    theorem1_constants,
    theorem1_envelope,
    theorem2_envelope,
    theorem2_R,
)

BASE = dict(G=1.0, B=1.0, sigma=0.1, M=1.0, mu=1.0, gamma_m=1.0, xi_m=1.0, eps=0.1, eps_D=0.1, lam=1.0, eta=0.01, tau=2, theta_m=1.0, e2=0.5, e2_tilde=0.5)


def inputs(**kw):
    return BoundInputs(**{**BASE, **kw})


class TestConsensusDeviation:
    def test_examples(self):
        assert consensus_deviation([[1.0, 2.0]] * 3) == 0.0
        assert consensus_deviation([[0.0], [2.0]]) == 1.0
        assert consensus_deviation([[0.0], [0.0], [3.0]]) == 2.0

    def test_empty(self):
        with pytest.raises(ValueError):
            consensus_deviation(np.zeros((0, 2)))

    @given(st.lists(st.lists(st.floats(-100, 100), min_size=2, max_size=2), min_size=1, max_size=6), st.floats(-100, 100))
    def test_translation_invariant(self, xs, shift):
        x = np.array(xs)
        assert consensus_deviation(x + shift) == pytest.approx(consensus_deviation(x), abs=1e-9)


class TestConsensusBound:
    def test_arithmetic(self):
        assert lemma1_bound(inputs(eta=0.01, G=2.0, tau=3, B=5.0, theta_m=1.0, e2=0.5, e2_tilde=0.5)) == pytest.approx(0.24)

    def test_reduces_without_prediction_or_delay(self):
        for kw in ({"theta_m": 0.0, "tau": 4}, {"tau": 1}):
            b = inputs(**kw)
            assert lemma1_bound(b) == pytest.approx(b.eta * b.G / (1 - b.delta2))

    def test_no_gap(self):
        with pytest.raises(BoundError, match="no spectral gap"):
            lemma1_bound(inputs(e2=0.5, e2_tilde=1.0))


class TestPLRateBound:
    def test_zero_gradient_bound(self):
        assert theorem1_constants(inputs(G=0.0)).Q == 0.0

    def test_tau_one_empty_sums(self):
        b = inputs(tau=1)
        c1, c2 = b.G / 0.5, 2 * b.G / 0.5
        want = 2 * (1 - 2 * b.eta) * b.G * b.eta * c1 + 2 * b.eta**2 * b.G * c1 + b.G * b.eta * b.sigma + b.eta * b.G**2 + b.eta**2 * b.G * c2
        assert theorem1_constants(b).Q == pytest.approx(want, rel=1e-13)

    def test_full_instance_against_oracle(self):
        b = inputs()
        assert theorem1_constants(b).Q == pytest.approx(q_oracle(b), rel=1e-12)

    def test_random_instances_against_oracle(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            b = random_inputs(rng, BoundInputs)
            assert theorem1_constants(b).Q == pytest.approx(q_oracle(b), rel=1e-12)

    def test_step_size_hypothesis(self):
        with pytest.raises(BoundError, match="step size outside the theorem1 range"):
            theorem1_constants(inputs(eta=0.3, tau=2))

    def test_envelope_examples(self):
        assert theorem1_envelope(3.0, 1.0, 1.0, 0.1, 2, 1) == 3.0
        assert theorem1_envelope(1.0, 0.0, 1.0, 0.125, 2, 3) == pytest.approx(0.25)
        assert theorem1_envelope(5.0, 2.0, 1.0, 0.1, 2, 10_000) == pytest.approx(2.0 / 0.4)


class TestNonconvexBound:
    def test_zero_constants(self):
        assert theorem2_R(inputs(G=0.0, B=0.0, sigma=0.0, M=0.0)) == 0.0

    @pytest.mark.parametrize("formula", ["main", "appendix"])
    def test_random_instances_against_oracle(self, formula):
        rng = np.random.default_rng(21)
        for _ in range(20):
            b = random_inputs(rng, BoundInputs)
            assert theorem2_R(b, formula) == pytest.approx(r_oracle(b, formula), rel=1e-12)

    def test_formulas_differ(self):
        assert theorem2_R(inputs(tau=3)) != theorem2_R(inputs(tau=3), "appendix")

    def test_step_size_hypothesis(self):
        with pytest.raises(BoundError, match="step size outside the theorem2 range"):
            theorem2_R(inputs(eta=1.0, gamma_m=1.0))

    def test_envelope_decay_structure(self):
        f1, R, eta, T = 2.5, 0.3, 0.01, 40
        diff = theorem2_envelope(f1, R, eta, T) - theorem2_envelope(f1, R, eta, 2 * T)
        assert diff == pytest.approx(f1 / (T * eta), rel=1e-12)
        assert theorem2_envelope(f1, R, eta, 10**12) == pytest.approx(R / eta, rel=1e-6)


def _trace(kind="rosenbrock", sigma=0.1, iterations=80):
    topo = Topology.complete(3, [[0], [1, 2]], delay=3)
    obj = ObjectiveSpec(kind, 2, 3, noise_sigma=sigma)
    cfg = AlgorithmConfig("pc-fixed", 0.008, 1.0, 0.1, iterations)
    return run_experiment(topo, obj, cfg, 0), obj, topo, cfg


class TestEstimateConstants:
    def test_G_is_max_stacked_gradient_norm(self):
        tr, obj, topo, cfg = _trace()
        b = estimate_constants(tr, obj, topo, cfg)
        assert b.G == max(np.linalg.norm(s.g) for s in tr.steps)
        assert b.theta_m == pytest.approx(0.1)
        assert b.delta2 == pytest.approx(0.1 * 0.5 + 0.9)

    def test_noiseless_sigma_zero(self):
        tr, obj, topo, cfg = _trace(sigma=0.0)
        assert estimate_constants(tr, obj, topo, cfg).sigma == 0.0

    def test_quadratic_constants_are_analytic(self):
        tr, obj, topo, cfg = _trace("quadratic-pl")
        b = estimate_constants(tr, obj, topo, cfg)
        assert (b.mu, b.gamma_m, b.xi_m) == (1.0, 1.0, 0.0)
        assert b.provenance["mu"] == "analytic"

    def test_consensus_within_lemma1(self):
        tr, obj, topo, cfg = _trace()
        assert np.all(tr.column("consensus_dev") <= lemma1_bound(estimate_constants(tr, obj, topo, cfg)))


class TestReport:
    def test_failed_hypotheses_become_notes(self):
        rep = bound_report(inputs(eta=0.9, gamma_m=2.0), 1.0, 100)
        assert math.isnan(rep.R) and any("theorem2" in n for n in rep.notes)
        assert not math.isnan(rep.lemma1_bound)

    def test_format_has_required_keys(self):
        text = format_report(bound_report(inputs(), 1.0, 100))
        keys = {line.split("=", 1)[0] for line in text.splitlines()}
        assert {"delta2", "C1", "C2", "Q", "R", "lemma1_bound", "theorem2_envelope.T1", "theorem2_envelope.T50", "theorem2_envelope.T100"} <= keys

    def test_delta2_defaults_to_worst_case(self):
        assert inputs(e2=0.2, e2_tilde=0.7).delta2 == 0.7
