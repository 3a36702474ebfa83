"""Low-rank adapters: W' = W + (alpha/r) * B @ A per targeted matrix.

Adapter factors follow the (A: r x in, B: out x r) convention; weight
matrices in this package are stored (in, out), so the applied delta is
``scale * (B @ A).T``. B starts at zero, making a fresh adapter a no-op.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .transformer import ModelParams, matrix_names


@dataclass
class LoraAdapter:
    rank: int
    alpha: float
    dropout: float = 0.0
    targets: dict = field(default_factory=dict)  # name -> (A, B)

    def __post_init__(self):
        if self.rank < 1:
            raise ValidationError("LoRA rank must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must be in [0, 1)")

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def param_dict(self) -> dict:
        """Flat view for the optimizer, keyed like the gradient names."""
        out = {}
        for name, (a, b) in self.targets.items():
            out[f"lora.{name}.A"] = a
            out[f"lora.{name}.B"] = b
        return out

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(
            self.rank,
            self.alpha,
            self.dropout,
            {k: (a.copy(), b.copy()) for k, (a, b) in self.targets.items()},
        )


def default_targets(params: ModelParams, include_embeddings: bool = False) -> list[str]:
    """Attention and MLP matrices; optionally embedding and output head."""
    names = matrix_names(params.config)
    if include_embeddings:
        return names
    return [n for n in names if n not in ("tok_emb", "head.w")]


def init_adapter(
    params: ModelParams,
    rank: int = 8,
    alpha: float = 16.0,
    dropout: float = 0.05,
    targets: list[str] | None = None,
    rng: np.random.Generator | None = None,
) -> LoraAdapter:
    """A gets small random init, B starts zero (adapter output is zero)."""
    rng = rng or np.random.default_rng(0)
    if targets is None:
        targets = default_targets(params)
    adapter = LoraAdapter(rank=rank, alpha=alpha, dropout=dropout)
    for name in targets:
        if name not in params.weights:
            raise ValidationError(f"LoRA target {name!r} not found in model weights")
        d_in, d_out = params.weights[name].shape
        a = (rng.standard_normal((rank, d_in)) / np.sqrt(d_in)).astype(np.float64)
        b = np.zeros((d_out, rank), dtype=np.float64)
        adapter.targets[name] = (a, b)
    return adapter


def lora_merge(params: ModelParams, adapter: LoraAdapter) -> ModelParams:
    """Fold the adapter into a copy of the weights (dropout has no effect)."""
    merged = params.copy()
    for name, (a, b) in adapter.targets.items():
        if name not in merged.weights:
            raise ValidationError(f"LoRA target {name!r} not found in model weights")
        w = merged.weights[name]
        if (b.shape[0], a.shape[1]) != (w.shape[1], w.shape[0]):
            raise ValidationError(
                f"adapter factors {a.shape}x{b.shape} do not match weight {w.shape} for {name!r}"
            )
        delta = (adapter.scale * (b @ a)).T
        merged.weights[name] = (w.astype(np.float64) + delta).astype(w.dtype)
    return merged
