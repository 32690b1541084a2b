"""Topic models for shopping baskets: corpus building, LDA inference, evaluation and analysis."""

from .corpus import BasketCorpus, FilterConfig, Vocabulary, build_corpus, ingest_transactions, split_corpus
from .generator import GroundTruth, inject_covariates, simulate
from .inference import TopicModel, TrainConfig, infer_mixture, train_gibbs, train_online_vb
from .metrics import log_perplexity, match_topics, perplexity, rank_products, relevance_table, topic_sizes

__version__ = "0.1.0"

__all__ = [
    "BasketCorpus", "FilterConfig", "Vocabulary", "build_corpus", "ingest_transactions",
    "split_corpus", "GroundTruth", "inject_covariates", "simulate", "TopicModel",
    "TrainConfig", "infer_mixture", "train_gibbs", "train_online_vb", "log_perplexity",
    "match_topics", "perplexity", "rank_products", "relevance_table", "topic_sizes",
]
