"""Candidate scoring and rank classification."""
from __future__ import annotations

import enum
from typing import Callable, Sequence

import numpy as np

from ..data.prompts import RenderTooLong, prompt_batch
from ..data.vocab import Vocab, tokenize
from ..model.loss import token_logprobs
from ..model.transformer import forward
from ..trainer.checkpoint import Checkpoint
from ..trainer.stage import route
from .tasks import EvalTask

MAX_UNUSABLE_FRACTION = 0.10


class ScoringPolicy(str, enum.Enum):
    SUM = "sum_logprob"
    MEAN = "mean_logprob"


Tokenizer = Callable[[str], Sequence[int]]


def _tokens(x, tokenizer: Tokenizer) -> list[int]:
    return [int(t) for t in tokenizer(x)] if isinstance(x, (str, bytes)) else [int(t) for t in x]


def _byte_tokenizer(ckpt: Checkpoint) -> Tokenizer:
    # built on first use so token-list callers work with any vocabulary size
    return lambda text: tokenize(text, Vocab(ckpt.config.vocab_size))


def score_candidates(
    ckpt: Checkpoint,
    input_text,
    candidates: Sequence,
    policy: ScoringPolicy | str = ScoringPolicy.SUM,
    seq_len: int | None = None,
    tokenizer: Tokenizer | None = None,
) -> np.ndarray:
    """Log-likelihood score of every candidate continuation of ``input_text``.

    Texts go through ``tokenizer`` (bytes by default); token lists are used
    as given. Only candidate tokens are scored, never the closing ``eos``.
    """
    policy = ScoringPolicy(policy)
    tokenizer = tokenizer or _byte_tokenizer(ckpt)
    prompt = _tokens(input_text, tokenizer)
    cands = [_tokens(c, tokenizer) for c in candidates]
    if any(len(c) == 0 for c in cands):
        raise ValueError("empty candidate")
    batch = route(ckpt, prompt_batch([(prompt, c) for c in cands], ckpt.arch, seq_len))
    logits = forward(ckpt.params, ckpt.config, ckpt.model_arch, batch, mode="infer")
    lp = token_logprobs(logits, batch.target_ids)
    scores = np.empty(len(cands))
    for r, (c, start) in enumerate(zip(cands, batch.meta["answer_start"])):
        s = float(lp[r, start : start + len(c)].sum())
        scores[r] = s / len(c) if policy is ScoringPolicy.MEAN else s
    return scores


def score_candidate(ckpt: Checkpoint, input_text, candidate_text, policy=ScoringPolicy.SUM, seq_len=None) -> float:
    return float(score_candidates(ckpt, input_text, [candidate_text], policy, seq_len)[0])


def predict(scores: Sequence[float]) -> int:
    """Index of the best score; ties go to the lowest index."""
    return int(np.argmax(np.asarray(scores)))


def rank_classify(
    ckpt: Checkpoint,
    task: EvalTask,
    prompt_index: int,
    policy: ScoringPolicy | str = ScoringPolicy.SUM,
    seq_len: int | None = None,
    tokenizer: Tokenizer | None = None,
) -> float:
    """Accuracy of argmax-candidate prediction over the usable examples."""
    tokenizer = tokenizer or _byte_tokenizer(ckpt)
    correct = usable = 0
    for ex in task.examples:
        text, cands = task.render(prompt_index, ex)
        try:
            scores = score_candidates(ckpt, text, cands, policy, seq_len, tokenizer)
        except RenderTooLong:
            continue
        usable += 1
        correct += predict(scores) == ex.gold
    n = len(task.examples)
    if n - usable > MAX_UNUSABLE_FRACTION * n:
        raise ValueError(f"task {task.name!r}: {n - usable} of {n} examples could not be rendered")
    return correct / usable
