from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, replace

from ..numeric.ops import Precision


class ArchitectureKind(str, enum.Enum):
    """Attention visibility regime of a transformer variant."""

    CausalDecoder = "CD"
    NonCausalDecoder = "ND"
    EncoderDecoder = "ED"

    @classmethod
    def parse(cls, value: "ArchitectureKind | str") -> "ArchitectureKind":
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name):
                return member
        raise ValueError(f"unknown architecture {value!r}")

    @property
    def is_decoder_only(self) -> bool:
        return self is not ArchitectureKind.EncoderDecoder


CD = ArchitectureKind.CausalDecoder
ND = ArchitectureKind.NonCausalDecoder
ED = ArchitectureKind.EncoderDecoder


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 512
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 160
    decoder_layers: int = 2
    encoder_layers: int = 0
    tied_embeddings: bool = True
    rel_buckets: int = 32
    rel_max_distance: int = 128
    dropout_rate: float = 0.0
    norm_epsilon: float = 1e-6
    precision: str = "high"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if min(self.vocab_size, self.d_model, self.d_ff, self.decoder_layers) < 1:
            raise ValueError("sizes must be positive")
        if self.encoder_layers < 0:
            raise ValueError("encoder_layers must be >= 0")
        if self.rel_buckets < 2 or self.rel_max_distance <= 0:
            raise ValueError("relative bias needs n_buckets >= 2 and max_distance > 0")
        Precision(self.precision)

    @property
    def dtype(self):
        return Precision(self.precision).dtype

    def for_arch(self, arch: ArchitectureKind | str) -> "ModelConfig":
        """Give encoder-decoders an encoder as deep as the decoder; strip it otherwise."""
        arch = ArchitectureKind.parse(arch)
        if arch is ED:
            return replace(self, encoder_layers=self.encoder_layers or self.decoder_layers)
        return replace(self, encoder_layers=0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**data)


# 5B-class sizes (4096 wide, 24 layers per stack), used only for parameter counting.
FULL_SCALE_DECODER_CONFIG = ModelConfig(
    vocab_size=32128, d_model=4096, n_heads=64, d_ff=10240, decoder_layers=24, tied_embeddings=True
)
FULL_SCALE_ENCODER_DECODER_CONFIG = replace(FULL_SCALE_DECODER_CONFIG, encoder_layers=24)
