"""Input checks shared by the estimator API."""
from __future__ import annotations

from typing import Sequence

import numpy as np


def check_documents(X, name: str = "X") -> list[str]:
    """A non-empty sequence of non-empty strings."""
    if isinstance(X, (str, bytes)):
        raise TypeError(f"{name} must be a sequence of documents, not a single string")
    if isinstance(X, np.ndarray):
        X = X.tolist()
    docs = list(X)
    if not docs:
        raise ValueError(f"{name} is empty")
    for i, d in enumerate(docs):
        if not isinstance(d, str):
            raise TypeError(f"{name}[{i}] is {type(d).__name__}, expected str")
        if not d:
            raise ValueError(f"{name}[{i}] is an empty document")
    return docs


def check_choice_items(X, name: str = "X") -> list[tuple[str, list[str]]]:
    """A sequence of ``(input_text, candidates)`` with at least two candidates each."""
    items = []
    for i, item in enumerate(X):
        try:
            text, cands = item
        except (TypeError, ValueError):
            raise TypeError(f"{name}[{i}] must be an (input, candidates) pair") from None
        cands = list(cands)
        if not isinstance(text, str) or not all(isinstance(c, str) and c for c in cands):
            raise TypeError(f"{name}[{i}] needs a string input and non-empty string candidates")
        if len(cands) < 2:
            raise ValueError(f"{name}[{i}] has fewer than two candidates")
        items.append((text, cands))
    if not items:
        raise ValueError(f"{name} is empty")
    return items


def check_labels(y, items: Sequence[tuple[str, list[str]]]) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (len(items),):
        raise ValueError(f"y has shape {y.shape}, expected ({len(items)},)")
    if not np.issubdtype(y.dtype, np.integer):
        raise TypeError("y must hold integer candidate indices")
    for i, (label, (_, cands)) in enumerate(zip(y, items)):
        if not 0 <= label < len(cands):
            raise ValueError(f"y[{i}]={label} is not a valid candidate index")
    return y
