import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from topicrec import TopicNewsRecommender
from topicrec.data import SyntheticConfig, generate_synthetic_dataset
from topicrec.errors import VariantUnsupportedError


@pytest.fixture(scope="module")
def dataset():
    cfg = SyntheticConfig(n_news=40, n_users=8, keywords_per_topic=6,
                          title_tokens=3, body_tokens=8, rare_vocab=20,
                          rare_per_article=1, history_per_user=6,
                          train_impressions_per_user=4,
                          val_impressions_per_user=1,
                          test_impressions_per_user=1, seed=5)
    return generate_synthetic_dataset(cfg)


def small_estimator(**kwargs):
    defaults = dict(n_topics=3, embedding_dim=10, projection_dim=8,
                    pool_dim=8, user_dim=8, n_title=4, n_body=10,
                    history_limit=6, epochs=2, batch_size=16, min_df=2,
                    descriptors=4, seed=7)
    defaults.update(kwargs)
    return TopicNewsRecommender(**defaults)


@pytest.fixture(scope="module")
def fitted(dataset):
    est = small_estimator()
    est.fit(dataset.articles, dataset.train_logs, dataset.val_logs)
    return est


def test_params_round_trip_and_clone():
    est = small_estimator(n_topics=5, dropout=0.1)
    params = est.get_params()
    assert params["n_topics"] == 5
    assert params["dropout"] == 0.1
    duplicate = clone(est)
    assert duplicate.get_params() == params
    est.set_params(epochs=9)
    assert est.get_params()["epochs"] == 9


def test_unfitted_calls_raise_not_fitted(dataset):
    est = small_estimator()
    log = dataset.test_logs[0]
    with pytest.raises(NotFittedError):
        est.predict_scores([log])
    with pytest.raises(NotFittedError):
        est.evaluate([log])
    with pytest.raises(NotFittedError):
        est.global_topics()
    with pytest.raises(NotFittedError):
        est.explain(log)
    with pytest.raises(NotFittedError):
        est.save("nowhere.ckpt")


def test_fit_returns_self_and_sets_state(fitted, dataset):
    assert fitted.fit.__self__ is fitted
    assert hasattr(fitted, "model_")
    assert hasattr(fitted, "result_")
    assert fitted.result_.n_samples > 0
    assert len(fitted.vocab_) > 2


def test_predict_scores_matches_candidate_counts(fitted, dataset):
    logs = dataset.test_logs[:4]
    scores = fitted.predict_scores(logs)
    assert len(scores) == 4
    for log, values in zip(logs, scores):
        assert values.shape == (len(log.candidates),)
        assert np.isfinite(values).all()


def test_evaluate_returns_metric_report(fitted, dataset):
    report = fitted.evaluate(dataset.test_logs)
    assert report.n_impressions == len(dataset.test_logs)
    assert report.means["auc"] is not None
    assert 0.0 <= report.means["auc"] <= 1.0


def test_global_topics_shapes(fitted):
    distribution, descriptors = fitted.global_topics()
    assert distribution.weights.shape[0] == 3
    assert len(descriptors.per_topic) == 3
    for topic in descriptors.per_topic:
        assert 0 < len(topic) <= 4


def test_explain_produces_report(fitted, dataset):
    log = dataset.test_logs[0]
    report = fitted.explain(log)
    assert report.impression_id == log.impression_id
    assert report.ranked_candidates
    scores = [s for _, s, _ in report.ranked_candidates]
    assert scores == sorted(scores, reverse=True)


def test_save_load_round_trip(fitted, dataset, tmp_path):
    path = tmp_path / "model.ckpt"
    fitted.save(path)
    loaded = TopicNewsRecommender.load(path, articles=dataset.articles)
    assert loaded.get_params()["n_topics"] == 3
    assert loaded.get_params()["epochs"] == 2
    logs = dataset.test_logs[:3]
    before = fitted.predict_scores(logs)
    after = loaded.predict_scores(logs)
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a, b)


def test_recurrent_variant_scores_but_rejects_explanations(dataset):
    est = small_estimator(variant="GRU", epochs=1)
    est.fit(dataset.articles, dataset.train_logs)
    scores = est.predict_scores(dataset.test_logs[:2])
    assert all(np.isfinite(s).all() for s in scores)
    with pytest.raises(VariantUnsupportedError):
        est.explain(dataset.test_logs[0])


def test_refit_is_deterministic(dataset):
    logs = dataset.test_logs[:3]
    a = small_estimator().fit(dataset.articles, dataset.train_logs)
    b = small_estimator().fit(dataset.articles, dataset.train_logs)
    for x, y in zip(a.predict_scores(logs), b.predict_scores(logs)):
        np.testing.assert_array_equal(x, y)
