"""Autoregressive sampling with temperature + top-k, or greedy decoding."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .transformer import ModelParams, forward_with_cache, log_softmax


@dataclass
class SamplingConfig:
    temperature: float = 1.0
    top_k: int = 50
    max_new_tokens: int = 256
    stop_ids: tuple = ()
    seed: int = 0
    greedy: bool = False  # temperature -> 0 limit, kept as a flag for determinism

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValidationError("temperature must be > 0 (use greedy=True for argmax)")
        if self.top_k < 1:
            raise ValidationError("top_k must be >= 1")


def generate(prefix_ids, params: ModelParams, sampling: SamplingConfig, adapter=None) -> list[int]:
    """New token ids after the prefix; halts at a stop id, the token budget,
    or the context limit. Deterministic for a fixed seed."""
    prefix = [int(i) for i in prefix_ids]
    if not prefix:
        raise ValidationError("prefix must be non-empty")
    if len(prefix) > params.config.context_length:
        raise ValidationError("prefix exceeds the model context")
    rng = np.random.default_rng(sampling.seed)
    stop = set(int(s) for s in sampling.stop_ids)
    out: list[int] = []
    ids = list(prefix)
    for _ in range(sampling.max_new_tokens):
        if len(ids) >= params.config.context_length:
            break
        logits, _ = forward_with_cache(np.asarray(ids), params, adapter=adapter)
        last = logits[-1]
        if sampling.greedy:
            token = int(np.argmax(last))
        else:
            k = min(sampling.top_k, last.shape[0])
            top = np.argpartition(last, -k)[-k:]
            top = top[np.argsort(last[top])[::-1]]  # stable, best first
            lp = log_softmax(last[top] / sampling.temperature)
            token = int(top[rng.choice(k, p=np.exp(lp))])
        out.append(token)
        ids.append(token)
        if token in stop:
            break
    return out
