import json
import math

import numpy as np
import pytest

from qndfeedback.core import basis_state, make_density, maximally_mixed, populations
from qndfeedback.errors import DimensionMismatch, ZeroProbabilityOutcome
from qndfeedback.measurement import (
    KrausSet,
    collapse,
    dump_complex_matrix,
    load_kraus_json,
    outcome_probabilities,
    sample_outcome,
    validate_kraus,
)
from qndfeedback.photonbox import kraus_coefficients

from conftest import random_states

THETA = math.sqrt(2) / 5
PHI0 = math.pi / 4 - 3 * THETA


def photonbox_ops():
    return [np.diag(row) for row in kraus_coefficients(10, THETA, PHI0)]


def test_photonbox_set_is_valid():
    rep = validate_kraus(photonbox_ops())
    assert rep.ok, rep.violations
    assert rep.kraus.count == 2 and rep.kraus.dim == 11
    assert rep.completeness_residual < 1e-14


def test_identical_operators_violate_distinguishability():
    rep = validate_kraus([np.eye(2) / math.sqrt(2)] * 2)
    assert not rep.ok
    assert [v.pair for v in rep.failed("distinguishability")] == [(0, 1)]
    assert not rep.failed("completeness")


def test_single_identity_operator():
    rep = validate_kraus([np.eye(3)])
    assert not rep.failed("completeness") and not rep.failed("diagonality")
    assert len(rep.failed("distinguishability")) == 3


def test_completeness_and_diagonality_violations():
    rep = validate_kraus([np.eye(2) * 0.9])
    assert rep.failed("completeness")
    off = np.array([[1, 1e-6], [0, 0.5]])
    rep = validate_kraus([off, np.diag([0.0, math.sqrt(0.75)])])
    assert [v.outcome for v in rep.failed("diagonality")] == [0]
    assert rep.kraus is None


def test_completeness_residual_gate():
    ops = photonbox_ops()
    ops[0] = ops[0] * (1 + 1e-8)
    assert validate_kraus(ops).failed("completeness")


def test_probabilities(kraus):
    np.testing.assert_allclose(outcome_probabilities(kraus, basis_state(3, 11)), [0.5, 0.5], atol=1e-14)
    for n in range(11):
        np.testing.assert_allclose(outcome_probabilities(kraus, basis_state(n, 11)), kraus.weights[:, n], atol=1e-15)
    k1 = validate_kraus([np.eye(1)]).kraus
    np.testing.assert_array_equal(outcome_probabilities(k1, make_density([[1.0]])), [1.0])


def test_probabilities_sum_to_one(kraus):
    for rho in random_states(1, 11, 20):
        p = outcome_probabilities(kraus, rho)
        assert p.min() >= 0 and abs(p.sum() - 1) <= 1e-10


def test_probability_dimension_mismatch(kraus):
    with pytest.raises(DimensionMismatch):
        outcome_probabilities(kraus, maximally_mixed(3))


def test_collapse_fixed_points(kraus):
    for n in range(11):
        for mu in range(2):
            out = collapse(kraus, mu, basis_state(n, 11))
            np.testing.assert_allclose(out.data, basis_state(n, 11).data, atol=1e-12)


def test_collapse_maximally_mixed(kraus):
    out = collapse(kraus, 0, maximally_mixed(11))
    c2 = np.cos(PHI0 + THETA * np.arange(11)) ** 2
    np.testing.assert_allclose(populations(out), c2 / c2.sum(), atol=1e-14)
    assert np.count_nonzero(out.data - np.diag(np.diagonal(out.data))) == 0


def test_collapse_zero_probability():
    k = KrausSet.from_coefficients([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ZeroProbabilityOutcome):
        collapse(k, 1, basis_state(0, 2))


def test_martingale_identity(kraus):
    for rho in random_states(2, 11, 50):
        p = outcome_probabilities(kraus, rho)
        avg = sum(p[mu] * populations(collapse(kraus, mu, rho)) for mu in range(2))
        np.testing.assert_allclose(avg, populations(rho), atol=1e-10)


def test_sampling_deterministic_cases():
    k = KrausSet.from_coefficients([[1.0, 0.0], [0.0, 1.0]])
    rng = np.random.default_rng(0)
    assert {sample_outcome(k, basis_state(0, 2), rng).index for _ in range(500)} == {0}
    assert {sample_outcome(k, basis_state(1, 2), rng).index for _ in range(500)} == {1}


def test_sampling_frequency(kraus):
    rng = np.random.default_rng(123)
    hits = sum(sample_outcome(kraus, basis_state(3, 11), rng).index == 0 for _ in range(10000))
    assert 0.485 <= hits / 10000 <= 0.515


def test_sampling_reproducible(kraus, rho0):
    a = [sample_outcome(kraus, rho0, r).index for r in [np.random.default_rng(9)] for _ in range(50)]
    b = [sample_outcome(kraus, rho0, r).index for r in [np.random.default_rng(9)] for _ in range(50)]
    assert a == b


def test_json_loader(tmp_path):
    doc = {"dim": 11, "operators": [dump_complex_matrix(m) for m in photonbox_ops()]}
    path = tmp_path / "kraus.json"
    path.write_text(json.dumps(doc))
    rep = load_kraus_json(path)
    assert rep.ok
    np.testing.assert_allclose(rep.kraus.coefficients.real, kraus_coefficients(10, THETA, PHI0))
    doc["operators"] = [dump_complex_matrix(np.eye(11) / math.sqrt(2))] * 2
    path.write_text(json.dumps(doc))
    assert load_kraus_json(path).failed("distinguishability")
