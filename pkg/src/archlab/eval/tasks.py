"""Prompted multiple-choice tasks and the toy suite built on the pattern grammar."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..data.corpus import PATTERN_ALPHABET

TASK_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PromptTemplate:
    """Placeholder strings; ``{input}`` and ``{candidate}`` are substituted literally."""

    input: str = "{input}"
    candidate: str = "{candidate}"

    def __post_init__(self):
        if "{input}" not in self.input:
            raise ValueError("input template must contain {input}")
        if "{candidate}" not in self.candidate:
            raise ValueError("candidate template must contain {candidate}")

    def render(self, example: "TaskExample") -> tuple[str, list[str]]:
        return (
            self.input.replace("{input}", example.input),
            [self.candidate.replace("{candidate}", c) for c in example.candidates],
        )


@dataclass(frozen=True)
class TaskExample:
    input: str
    candidates: tuple[str, ...]
    gold: int

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(self.candidates) < 2:
            raise ValueError("an example needs at least two candidates")
        if not 0 <= self.gold < len(self.candidates):
            raise ValueError(f"gold index {self.gold} out of range")


@dataclass(frozen=True)
class EvalTask:
    name: str
    prompts: tuple[PromptTemplate, ...]
    examples: tuple[TaskExample, ...]
    chance_level: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        object.__setattr__(self, "examples", tuple(self.examples))
        if not self.prompts:
            raise ValueError(f"task {self.name!r} has no prompts")
        if not self.examples:
            raise ValueError(f"task {self.name!r} has no examples")

    @property
    def n_choices(self) -> int | None:
        sizes = {len(e.candidates) for e in self.examples}
        return sizes.pop() if len(sizes) == 1 else None

    @property
    def chance(self) -> float:
        """Explicit chance level, else the expected accuracy of a uniform guesser."""
        if self.chance_level is not None:
            return float(self.chance_level)
        return float(np.mean([1.0 / len(e.candidates) for e in self.examples]))

    def render(self, prompt_index: int, example: TaskExample) -> tuple[str, list[str]]:
        return self.prompts[prompt_index].render(example)

    def training_pairs(self) -> list[tuple[str, str]]:
        """(rendered input, gold candidate) under every prompt."""
        out = []
        for p in self.prompts:
            for ex in self.examples:
                text, cands = p.render(ex)
                out.append((text, cands[ex.gold]))
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": TASK_FORMAT_VERSION,
            "name": self.name,
            "prompts": [{"input": p.input, "candidate": p.candidate} for p in self.prompts],
            "examples": [{"input": e.input, "candidates": list(e.candidates), "gold": e.gold} for e in self.examples],
            "chance_level": self.chance_level,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalTask":
        data = dict(data)
        version = data.pop("format_version", TASK_FORMAT_VERSION)
        if version != TASK_FORMAT_VERSION:
            raise ValueError(f"unsupported task format_version {version}")
        unknown = set(data) - {"name", "prompts", "examples", "chance_level"}
        if unknown:
            raise ValueError(f"unknown task fields: {sorted(unknown)}")
        return cls(
            name=data["name"],
            prompts=tuple(PromptTemplate(**p) for p in data["prompts"]),
            examples=tuple(TaskExample(**e) for e in data["examples"]),
            chance_level=data.get("chance_level"),
        )


def save_tasks(tasks: Sequence[EvalTask], path: str | Path) -> None:
    payload = {"format_version": TASK_FORMAT_VERSION, "tasks": [t.to_dict() for t in tasks]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_tasks(path: str | Path) -> list[EvalTask]:
    """A task file holds either one task object or ``{"tasks": [...]}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "tasks" in data:
        return [EvalTask.from_dict(t) for t in data["tasks"]]
    return [EvalTask.from_dict(data)]


# ------------------------------------------------------------------ toy suite

TOY_PROMPTS = (
    PromptTemplate("{input}="),
    PromptTemplate("{input}?"),
    PromptTemplate("[{input}]"),
)


def _motif(rng, alphabet, k):
    return "".join(rng.choice(list(alphabet), size=k, replace=False))


def _pattern(rng, alphabet, length=(6, 13)):
    k = int(rng.integers(2, 5))
    motif = _motif(rng, alphabet, k)
    n = int(rng.integers(*length))
    return motif, (motif * (n // k + 2))[:n]


def _distinct(rng, gold, make, n):
    out = [gold]
    while len(out) < n:
        c = make()
        if c not in out:
            out.append(c)
    return out


def _shuffle_gold(rng, cands) -> tuple[list[str], int]:
    order = rng.permutation(len(cands))
    return [cands[i] for i in order], int(np.where(order == 0)[0][0])


def _continue_example(rng, alphabet):
    motif, text = _pattern(rng, alphabet)
    nxt = (motif * 20)[len(text)]
    cands = _distinct(rng, nxt, lambda: str(rng.choice(list(alphabet))), 4)
    cands, gold = _shuffle_gold(rng, cands)
    return TaskExample(text, cands, gold)


def _motif_example(rng, alphabet):
    motif, text = _pattern(rng, alphabet)
    cands = _distinct(rng, motif, lambda: _motif(rng, alphabet, len(motif)), 3)
    cands, gold = _shuffle_gold(rng, cands)
    return TaskExample(text, cands, gold)


def _member_example(rng, alphabet):
    motif, text = _pattern(rng, alphabet)
    inside = str(rng.choice(list(motif)))
    outside = str(rng.choice([a for a in alphabet if a not in motif]))
    cands, gold = _shuffle_gold(rng, [inside, outside])
    return TaskExample(text, cands, gold)


def _first_example(rng, alphabet):
    motif, text = _pattern(rng, alphabet)
    cands = _distinct(rng, text[0], lambda: str(rng.choice(list(alphabet))), 3)
    cands, gold = _shuffle_gold(rng, cands)
    return TaskExample(text, cands, gold)


TOY_GENERATORS = {
    "motif": _motif_example,
    "member": _member_example,
    "first": _first_example,
    "continue": _continue_example,
}
TOY_TRAIN_TASKS = ("motif", "member", "first")
TOY_HELDOUT_TASK = "continue"


def toy_task(name: str, n_examples: int, seed: int, alphabet: str = PATTERN_ALPHABET) -> EvalTask:
    rng = np.random.default_rng([seed, sorted(TOY_GENERATORS).index(name)])
    examples = [TOY_GENERATORS[name](rng, alphabet) for _ in range(n_examples)]
    return EvalTask(name, TOY_PROMPTS, examples)


def toy_task_suite(n_examples: int = 64, seed: int = 0) -> dict[str, EvalTask]:
    """Three finetuning tasks plus the held-out ``continue`` task."""
    return {name: toy_task(name, n_examples, seed) for name in (*TOY_TRAIN_TASKS, TOY_HELDOUT_TASK)}
