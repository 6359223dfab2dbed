import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from toat.data import InterviewSample
from toat.estimator import TOATClassifier, check_samples

TINY = dict(d_model=8, text_layers=1, text_heads=2, frame_dim=8, d_audio=8, audio_layers=1, audio_heads=2, pos_kernel=3)


def classifier(**kw):
    return TOATClassifier(**{"epochs": 2, "dims": TINY, "dropout": 0.0, **kw})


def test_get_params_and_clone():
    clf = classifier(alpha=0.2, seed=4)
    params = clf.get_params()
    assert params["alpha"] == 0.2 and params["seed"] == 4 and params["dims"] == TINY
    twin = clone(clf)
    assert twin.get_params() == params and twin is not clf
    clf.set_params(modality="text")
    assert clf.modality == "text"


def test_unfitted_predict_raises(small_corpus):
    with pytest.raises(NotFittedError):
        classifier().predict(small_corpus)


def test_fit_predict_shapes(small_corpus):
    clf = classifier().fit(small_corpus[:18], X_val=small_corpus[18:])
    proba = clf.predict_proba(small_corpus)
    assert proba.shape == (24, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    pred = clf.predict(small_corpus)
    np.testing.assert_array_equal(pred, (proba[:, 1] >= 0.5).astype(int))
    assert 0.0 <= clf.score(small_corpus, [s.label for s in small_corpus]) <= 1.0
    g = clf.transform(small_corpus)
    assert g.shape == (24, 4)
    assert np.isnan(g[~np.array([s.present for s in small_corpus])]).all()
    assert len(clf.usage_rates(small_corpus)) == 4


def test_fit_holds_out_validation_by_default(small_corpus):
    clf = classifier(modality="text").fit(small_corpus)
    assert len(clf.history_) == 2 and clf.n_topics_ == 4


def test_transform_requires_attention(small_corpus):
    clf = classifier(modality="audio").fit(small_corpus)
    with pytest.raises(AttributeError):
        clf.transform(small_corpus)


def test_check_samples_validation(small_corpus):
    with pytest.raises(TypeError):
        check_samples(small_corpus[0])
    with pytest.raises(ValueError, match="empty"):
        check_samples([])
    with pytest.raises(ValueError, match="binary"):
        check_samples(small_corpus[:2], [0, 2])
    odd = InterviewSample("x", 0, [None] * 3 + [small_corpus[0].topics[2] or small_corpus[0].topics[0]] * 2)
    with pytest.raises(ValueError, match="number of topics"):
        check_samples([small_corpus[0], odd])
    relabelled, y = check_samples(small_corpus[:2], [1, 1])
    assert [s.label for s in relabelled] == [1, 1] and y.tolist() == [1, 1]
