from __future__ import annotations

from dataclasses import dataclass

OBJECTIVES = ("FLM", "PLM", "MLM")


@dataclass(frozen=True)
class ObjectiveKind:
    name: str
    mask_rate: float = 0.15
    mean_span: float = 3.0

    def __post_init__(self):
        if self.name not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.name!r}; expected one of {OBJECTIVES}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError("mask_rate must be in (0, 1)")
        if self.mean_span < 1.0:
            raise ValueError("mean_span must be >= 1")

    @classmethod
    def parse(cls, value: "ObjectiveKind | str | dict") -> "ObjectiveKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, dict):
            return cls(**value)
        return cls(str(value))

    def to_dict(self) -> dict:
        if self.name == "MLM":
            return {"name": self.name, "mask_rate": self.mask_rate, "mean_span": self.mean_span}
        return {"name": self.name}

    def __str__(self) -> str:
        return self.name


FLM = ObjectiveKind("FLM")
PLM = ObjectiveKind("PLM")
MLM = ObjectiveKind("MLM")

# Which objectives each architecture is pretrained with.
ALLOWED_PAIRS = {
    "CD": ("FLM", "MLM"),
    "ND": ("PLM", "MLM"),
    "ED": ("PLM", "MLM"),
}


def check_pair(arch: str, objective: str) -> None:
    if objective not in ALLOWED_PAIRS.get(arch, ()):
        raise ValueError(f"{arch}:{objective} is not a valid architecture/objective pair")
