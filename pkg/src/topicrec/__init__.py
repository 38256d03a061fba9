"""Topic-attentive, explainable news recommendation at desk scale."""

from .config import RunConfig, load_run_config
from .data import (EmbeddingMatrix, ImpressionLog, NewsArticle,
                   SyntheticConfig, Vocabulary, build_vocabulary,
                   generate_synthetic_dataset, load_pretrained_embeddings,
                   load_stopwords, parse_behaviors_tsv, parse_news_tsv,
                   preprocess_for_topics, write_synthetic_dataset)
from .errors import (ColdUserError, CompatibilityError, ConfigError,
                     CorpusError, DegenerateInputError, DimensionError,
                     NumericError, ParseError, TopicRecError,
                     VariantUnsupportedError)
from .estimator import TopicNewsRecommender
from .metrics import (MetricReport, ScoredImpression, auc, evaluate_scored,
                      mrr, ndcg_at_k)
from .model import (ModelConfig, RecommenderModel, build_document_table,
                    load_checkpoint, save_checkpoint)
from .topic_explain import (ExplanationReport, GlobalTopicDistribution,
                            TopicDescriptorSet, coherence_summary,
                            compute_global_topics, count_cooccurrence,
                            extract_descriptors, generate_explanation,
                            npmi_coherence, render_report, w2v_coherence)
from .trainer import TrainingConfig, TrainResult, nce_loss, train

__version__ = "0.1.0"

__all__ = [
    "ColdUserError", "CompatibilityError", "ConfigError", "CorpusError",
    "DegenerateInputError", "DimensionError", "EmbeddingMatrix",
    "ExplanationReport", "GlobalTopicDistribution", "ImpressionLog",
    "MetricReport", "ModelConfig", "NewsArticle", "NumericError",
    "ParseError", "RecommenderModel", "RunConfig", "ScoredImpression",
    "SyntheticConfig", "TopicDescriptorSet", "TopicNewsRecommender",
    "TopicRecError", "TrainingConfig", "TrainResult",
    "VariantUnsupportedError", "Vocabulary", "auc", "build_document_table",
    "build_vocabulary", "coherence_summary", "compute_global_topics",
    "count_cooccurrence", "evaluate_scored", "extract_descriptors",
    "generate_explanation", "generate_synthetic_dataset", "load_checkpoint",
    "load_pretrained_embeddings", "load_run_config", "load_stopwords",
    "mrr", "nce_loss", "ndcg_at_k", "npmi_coherence", "parse_behaviors_tsv",
    "parse_news_tsv", "preprocess_for_topics", "render_report",
    "save_checkpoint", "train", "w2v_coherence", "write_synthetic_dataset",
]
