"""Budgeted retrieval of black-box-optimal items through a tag-search oracle."""

from .bandits import (
    POLICIES,
    LinUcbState,
    Policy,
    PolicyDecision,
    PoolExhausted,
    Tiara,
    TiaraS,
    linucb_score,
    make_policy,
    sherman_morrison_update,
)
from .embeddings import EmbeddingTable, TagEmbedder, embed_tag, load_embeddings, tokenize_tag
from .env import BlackBox, Corpus, ItemRecord, OracleSession, load_corpus, make_synthetic_env
from .harness import RunConfig, TrialResult, export_tag_scores, run_aggregate, run_sweep, run_trial

__version__ = "0.1.0"
