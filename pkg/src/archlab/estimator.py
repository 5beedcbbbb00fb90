"""A scikit-learn style wrapper around a single pretraining stage."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data.corpus import TokenCorpus
from .data.pipeline import BatchBuilder
from .data.vocab import Vocab, join_documents
from .eval.scoring import ScoringPolicy, predict, score_candidates
from .model.config import ModelConfig
from .optim import LrSchedule
from .trainer.stage import TrainingStage, run_stage, validation_loss
from .validation import check_choice_items, check_documents, check_labels


class LanguageModelEstimator(BaseEstimator):
    """Pretrain on documents with ``fit``; rank candidates with ``predict``.

    ``score`` on documents is the negative held-out cross-entropy; on
    ``(input, candidates)`` items with labels it is rank-classification
    accuracy. The fitted checkpoint is ``checkpoint_``.
    """

    def __init__(self, arch="CD", objective="FLM", token_budget=65536, d_model=64, n_heads=4, d_ff=160,
                 n_layers=2, vocab_size=512, seq_len=64, batch_size=8, warmup_floor=10_000,
                 scoring="sum_logprob", precision="high", random_state=0):
        self.arch = arch
        self.objective = objective
        self.token_budget = token_budget
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.n_layers = n_layers
        self.vocab_size = vocab_size
        self.seq_len = seq_len
        self.batch_size = batch_size
        self.warmup_floor = warmup_floor
        self.scoring = scoring
        self.precision = precision
        self.random_state = random_state

    def _stage(self) -> TrainingStage:
        return TrainingStage(
            self.arch, self.objective, self.token_budget, schedule=LrSchedule.inverse_sqrt(self.warmup_floor),
            seed=self.random_state, seq_len=self.seq_len, batch_size=self.batch_size,
        )

    def fit(self, X, y=None):
        docs = check_documents(X)
        config = ModelConfig(vocab_size=self.vocab_size, d_model=self.d_model, n_heads=self.n_heads,
                             d_ff=self.d_ff, decoder_layers=self.n_layers, precision=self.precision)
        self.corpus_ = TokenCorpus.from_documents(docs)
        self.checkpoint_ = run_stage(config, self._stage(), self.corpus_)
        self.n_tokens_seen_ = self.checkpoint_.tokens_seen
        return self

    def predict_scores(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "checkpoint_")
        items = check_choice_items(X)
        policy = ScoringPolicy(self.scoring)
        return [score_candidates(self.checkpoint_, text, cands, policy) for text, cands in items]

    def predict(self, X) -> np.ndarray:
        return np.array([predict(s) for s in self.predict_scores(X)], dtype=np.int64)

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "checkpoint_")
        if y is not None:
            items = check_choice_items(X)
            y = check_labels(y, items)
            return float(np.mean(self.predict(items) == y))
        docs = check_documents(X)
        stream = join_documents(docs, Vocab(self.vocab_size))
        builder = BatchBuilder(stream, self._stage().objective, self.arch, self.seq_len, self.batch_size,
                               Vocab(self.vocab_size))
        return -validation_loss(self.checkpoint_, builder.fixed_batches(2))
