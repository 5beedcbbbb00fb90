import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from archlab.data import synthetic_pattern_corpus
from archlab.estimator import LanguageModelEstimator

SMALL = dict(d_model=16, n_heads=2, d_ff=24, n_layers=1, seq_len=32, batch_size=4, token_budget=3 * 32 * 4)


@pytest.fixture(scope="module")
def fitted():
    return LanguageModelEstimator(**SMALL).fit(synthetic_pattern_corpus(200, 0))


def test_params_round_trip():
    est = LanguageModelEstimator(arch="ND", objective="MLM", random_state=3)
    assert clone(est).get_params() == est.get_params()


def test_fit_records_budget(fitted):
    assert fitted.n_tokens_seen_ == 3 * 32 * 4
    assert fitted.checkpoint_.objective == "FLM"


def test_fit_is_deterministic(fitted):
    again = LanguageModelEstimator(**SMALL).fit(synthetic_pattern_corpus(200, 0))
    assert again.checkpoint_.bitwise_equal(fitted.checkpoint_)


def test_predict_and_score(fitted):
    items = [("abcabc", ["a", "z"]), ("xyxy", ["x", "q", "y"])]
    scores = fitted.predict_scores(items)
    assert [s.shape for s in scores] == [(2,), (3,)]
    pred = fitted.predict(items)
    assert pred.dtype == np.int64
    assert fitted.score(items, pred) == 1.0
    assert fitted.score(synthetic_pattern_corpus(20, 5)) < 0


def test_unfitted_and_bad_input():
    est = LanguageModelEstimator(**SMALL)
    with pytest.raises(NotFittedError):
        est.predict([("a", ["b", "c"])])
    with pytest.raises(TypeError):
        est.fit("one string")
    with pytest.raises(ValueError):
        est.fit(["ok", ""])


def test_label_checks(fitted):
    items = [("ab", ["a", "b"])]
    with pytest.raises(ValueError):
        fitted.score(items, [2])
    with pytest.raises(ValueError):
        fitted.predict([("ab", ["a"])])
