"""Estimator facade over the training pipeline.

TopicNewsRecommender follows the familiar fit/predict conventions:
constructor arguments are stored verbatim, fitted state lives in
trailing-underscore attributes, and get_params/set_params/clone all
work, so the model drops into pipelines and grid searches unchanged.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import topic_explain as tx
from .data import load_stopwords, preprocess_for_topics
from .metrics import evaluate_scored
from .model import (ModelConfig, RecommenderModel, build_document_table,
                    load_checkpoint, save_checkpoint)
from .trainer import TrainingConfig, train


class TopicNewsRecommender(BaseEstimator):
    """Topic-attentive news recommender with built-in explanations.

    fit() consumes a news corpus plus impression logs; predict_scores()
    ranks candidates per impression; global_topics() and explain()
    expose the interpretability surface.
    """

    def __init__(self, n_topics=10, embedding_dim=300, projection_dim=64,
                 pool_dim=64, user_dim=64, variant="ATT", n_title=30,
                 n_body=70, history_limit=50, learning_rate=1e-3,
                 batch_size=64, negatives=4, dropout=0.2, epochs=10,
                 lr_halving=True, grad_clip=5.0, max_train_samples=0,
                 descriptors=10, min_df=10, max_df_frac=0.9,
                 pretrained_path=None, seed=0):
        self.n_topics = n_topics
        self.embedding_dim = embedding_dim
        self.projection_dim = projection_dim
        self.pool_dim = pool_dim
        self.user_dim = user_dim
        self.variant = variant
        self.n_title = n_title
        self.n_body = n_body
        self.history_limit = history_limit
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.negatives = negatives
        self.dropout = dropout
        self.epochs = epochs
        self.lr_halving = lr_halving
        self.grad_clip = grad_clip
        self.max_train_samples = max_train_samples
        self.descriptors = descriptors
        self.min_df = min_df
        self.max_df_frac = max_df_frac
        self.pretrained_path = pretrained_path
        self.seed = seed

    def _model_config(self):
        return ModelConfig(
            n_topics=self.n_topics, embedding_dim=self.embedding_dim,
            projection_dim=self.projection_dim, pool_dim=self.pool_dim,
            user_dim=self.user_dim, variant=self.variant,
            n_title=self.n_title, n_body=self.n_body,
            history_limit=self.history_limit)

    def _training_config(self):
        return TrainingConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            negatives=self.negatives, dropout=self.dropout,
            epochs=self.epochs, seed=self.seed, lr_halving=self.lr_halving,
            grad_clip=self.grad_clip,
            max_train_samples=self.max_train_samples)

    def fit(self, articles, logs, validation_logs=None):
        """Train on a corpus and click logs; returns self."""
        model = RecommenderModel.build(
            articles, self._model_config(), seed=self.seed,
            pretrained_path=self.pretrained_path)
        result = train(model, logs, validation_logs or [], articles,
                       self._training_config())
        self.model_ = result.model
        self.result_ = result
        self.vocab_ = result.model.vocab
        self.articles_ = list(articles)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "This TopicNewsRecommender instance is not fitted yet. "
                "Call fit() or load() first.")

    def _table(self, articles=None):
        source = self.articles_ if articles is None else articles
        return build_document_table(source, self.vocab_,
                                    self.model_.config.n_title,
                                    self.model_.config.n_body)

    def predict_scores(self, logs, articles=None):
        """Per-impression candidate score arrays, impression order kept."""
        self._check_fitted()
        scored = self.model_.score_impressions(self._table(articles), logs)
        return [s.scores for s in scored]

    def evaluate(self, logs, articles=None):
        """Ranking metric report over a set of impressions."""
        self._check_fitted()
        scored = self.model_.score_impressions(self._table(articles), logs)
        return evaluate_scored(scored)

    def _allowed_tokens(self, articles=None):
        source = self.articles_ if articles is None else articles
        return preprocess_for_topics(
            source, self.vocab_, min_df=self.min_df,
            max_df_frac=self.max_df_frac, stopwords=load_stopwords())

    def global_topics(self, articles=None, filtered=True):
        """(distribution, descriptors) over the descriptor vocabulary."""
        self._check_fitted()
        if filtered:
            allowed = self._allowed_tokens(articles)
        else:
            allowed = np.arange(2, len(self.vocab_), dtype=np.int64)
        distribution = tx.compute_global_topics(
            self.model_.topic_params, self.model_.embedding.data, allowed)
        descriptor_set = tx.extract_descriptors(
            distribution, self.vocab_, m=self.descriptors)
        return distribution, descriptor_set

    def explain(self, impression, articles=None, top_articles=5,
                top_topics=3):
        """ExplanationReport for one impression (attentive variant only)."""
        self._check_fitted()
        source = self.articles_ if articles is None else articles
        return tx.generate_explanation(
            self.model_, impression, source,
            top_articles=top_articles, top_topics=top_topics)

    def save(self, path):
        """Write the fitted model as a portable checkpoint archive."""
        self._check_fitted()
        save_checkpoint(self.model_, path,
                        training_config=self._training_config())
        return path

    @classmethod
    def load(cls, path, articles=None):
        """Rebuild a fitted estimator from a checkpoint archive.

        Scoring helpers need the article corpus; pass it here or per
        call. Training history is not stored, so result_ stays unset.
        """
        model, manifest = load_checkpoint(path)
        params = dict(manifest["model_config"])
        training = manifest.get("training_config") or {}
        training.pop("seed", None)
        estimator = cls(**params, **training)
        estimator.model_ = model
        estimator.vocab_ = model.vocab
        estimator.articles_ = list(articles) if articles is not None else []
        return estimator
