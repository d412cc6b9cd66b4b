import numpy as np
import pytest

from robust_agg_lab.errors import ValidationError
from robust_agg_lab.verify import SUITES, SuiteResult, run_suites, suite_certification


def test_suite_result_bookkeeping():
    r = SuiteResult("demo")
    assert not r.passed
    r.record(0.5)
    r.record(-1.0, witness="w")
    r.record(-2.0, witness="later")
    assert (r.cases, r.failures, r.worst_slack, r.witness) == (3, 2, -2.0, "w")


def test_cheap_suites_pass():
    for res in run_suites(seed=1, names=["linalg", "trimmed-mean", "pick-lemma", "constructions", "coupling"]):
        assert res.passed, (res.name, res.witness)


def test_halved_kappa_is_caught():
    res = suite_certification(np.random.default_rng(0), "smea", cases=300, kappa_scale=0.5)
    assert res.failures > 0 and res.witness is not None


def test_unknown_suite():
    with pytest.raises(ValidationError):
        run_suites(names=["nope"])
    assert "covariance" in SUITES
