"""Stage-2 (cross-modal pretraining) and stage-3 (instruction tuning) drivers.

Both stages run AdamW with linear warmup and cosine decay over padded
minibatches of tokenized samples. Stage 2 updates LoRA factors plus the
embedding and output head; stage 3 updates every parameter. Training is
bit-reproducible for a fixed seed, and checkpoints carry enough state
(optimizer moments, RNG, step) that a resumed run replays the exact
trajectory of an uninterrupted one.
"""

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt_io
from .codec import PAD
from .errors import TrainingError, ValidationError
from .lora import LoraAdapter, init_adapter
from .optim import AdamW, cosine_lr
from .transformer import ModelParams, nll_loss_and_grads


@dataclass
class TokenizedSample:
    """Token ids with a bool mask marking the positions the loss covers."""

    ids: list
    loss_mask: list

    def __post_init__(self):
        if len(self.ids) != len(self.loss_mask):
            raise ValidationError("ids and loss_mask lengths differ")


@dataclass
class TrainConfig:
    stage: int = 2
    steps: int = 200
    batch_size: int = 8
    lr: float = 1e-4
    warmup_ratio: float = 0.01
    lr_schedule: str = "cosine"
    weight_decay: float = 0.01
    seed: int = 0
    lora_rank: int = 8
    lora_alpha: float = 16.0
    lora_dropout: float = 0.05
    checkpoint_dir: str | None = None


@dataclass
class TrainResult:
    params: ModelParams
    adapter: LoraAdapter | None
    history: list = field(default_factory=list)  # (step, loss, lr)
    final_step: int = 0


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _pad_batch(samples):
    width = max(len(s.ids) for s in samples)
    ids = np.full((len(samples), width), PAD, dtype=np.int64)
    mask = np.zeros((len(samples), width), dtype=bool)
    for row, s in enumerate(samples):
        ids[row, : len(s.ids)] = s.ids
        mask[row, : len(s.ids)] = s.loss_mask
    return ids, mask


def _check_samples(samples, context_length):
    if not samples:
        raise ValidationError("training corpus is empty")
    for i, s in enumerate(samples):
        if not any(s.loss_mask):
            raise ValidationError(f"sample {i} has an empty loss span")
        if len(s.ids) > context_length:
            raise ValidationError(f"sample {i} exceeds the model context ({len(s.ids)})")


def _train_loop(samples, params, adapter, trainable, config, opt, rng, start_step, history):
    n = len(samples)
    per_epoch = max(1, -(-n // config.batch_size))
    all_params = dict(params.weights)
    if adapter is not None:
        all_params.update(adapter.param_dict())

    epoch = -1
    order = None
    last_epoch_saved = -1
    for step in range(start_step, config.steps):
        e = (step // per_epoch)
        if e != epoch:
            epoch = e
            order = _epoch_order(config.seed, epoch, n)
        chunk = order[(step % per_epoch) * config.batch_size : (step % per_epoch + 1) * config.batch_size]
        batch = [samples[i] for i in chunk]
        ids, mask = _pad_batch(batch)
        loss, grads = nll_loss_and_grads(
            ids, params, mask, adapter=adapter, train=True, rng=rng
        )
        if not np.isfinite(loss):
            raise TrainingError("training loss is not finite", step=step)
        lr = (
            cosine_lr(step, config.steps, config.lr, config.warmup_ratio)
            if config.lr_schedule == "cosine"
            else config.lr
        )
        opt.step(all_params, grads, lr, trainable=trainable)
        history.append((step, loss, lr))

        end_of_epoch = (step % per_epoch) == per_epoch - 1
        if config.checkpoint_dir and (end_of_epoch or step == config.steps - 1) and epoch != last_epoch_saved:
            last_epoch_saved = epoch
            path = f"{config.checkpoint_dir}/step{step + 1:06d}.ckpt.json"
            ckpt_io.save_checkpoint(
                path, params, adapter=adapter, optimizer=opt, rng=rng, step=step + 1
            )
    return step + 1 if config.steps > start_step else start_step


def _stage2_trainable(params, adapter):
    names = list(adapter.param_dict()) + ["tok_emb", "pos_emb", "head.w", "head.b"]
    return names


def run_stage2_pretrain(
    corpus,
    params: ModelParams,
    config: TrainConfig,
    adapter: LoraAdapter | None = None,
    resume: str | None = None,
) -> TrainResult:
    """Cross-modal pretraining: LoRA factors + embeddings + head are trained."""
    _check_samples(corpus, params.config.context_length)
    history: list = []
    if resume:
        ck = ckpt_io.load_checkpoint(resume)
        params, adapter = ck.params, ck.adapter
        opt = ckpt_io.restore_optimizer(ck, config.weight_decay)
        rng = np.random.default_rng()
        rng.bit_generator.state = ck.rng_state
        start = ck.step
    else:
        if adapter is None:
            dtype = params.weights["tok_emb"].dtype
            adapter = init_adapter(
                params,
                rank=config.lora_rank,
                alpha=config.lora_alpha,
                dropout=config.lora_dropout,
                rng=np.random.default_rng(config.seed),
            )
            for name, (a, b) in adapter.targets.items():
                adapter.targets[name] = (a.astype(dtype), b.astype(dtype))
        opt = AdamW(weight_decay=config.weight_decay)
        rng = np.random.default_rng(config.seed)
        start = 0
    final = _train_loop(
        corpus, params, adapter, _stage2_trainable(params, adapter), config, opt, rng, start, history
    )
    return TrainResult(params, adapter, history, final)


def run_stage3_instruction_tune(
    conversations,
    params: ModelParams,
    config: TrainConfig,
    resume: str | None = None,
) -> TrainResult:
    """Instruction tuning: full-parameter updates, assistant-span loss only."""
    _check_samples(conversations, params.config.context_length)
    history: list = []
    if resume:
        ck = ckpt_io.load_checkpoint(resume)
        params = ck.params
        opt = ckpt_io.restore_optimizer(ck, config.weight_decay)
        rng = np.random.default_rng()
        rng.bit_generator.state = ck.rng_state
        start = ck.step
    else:
        opt = AdamW(weight_decay=config.weight_decay)
        rng = np.random.default_rng(config.seed)
        start = 0
    trainable = list(params.weights)
    final = _train_loop(conversations, params, None, trainable, config, opt, rng, start, history)
    return TrainResult(params, None, history, final)
