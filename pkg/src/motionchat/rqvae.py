"""Residual-quantized autoencoder over interactive motion clips.

The encoder consumes both persons jointly (their feature channels stacked)
and emits one latent track per person at 1/l of the input frame rate.
Each latent is residual-quantized to ``depth`` codebook indices; decoding
sums the selected embeddings and runs the mirror decoder. Training uses
reconstruction + codebook + commitment losses with a straight-through
gradient across the quantizer.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from . import convnet
from .errors import TrainingError, ValidationError
from .motion import InteractiveClip, MotionClip, SkeletonSpec
from .optim import AdamW, cosine_lr
from .quantizer import (
    Codebook,
    CodeGrid,
    dequantize,
    make_rows_distinct,
    residual_quantize_batch,
    rq_kmeans_init,
)
from . import kernels


@dataclass
class TokenizerConfig:
    num_joints: int = 22
    fps: float = 30.0
    codebook_size: int = 512
    depth: int = 4
    downsample: int = 4
    code_dim: int = 512
    hidden: int = 256
    dtype: str = "float32"
    beta: float = 0.25
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    steps: int = 500
    batch_size: int = 16
    seed: int = 0
    shared_codebook: bool = True
    ema_codebook: bool = False
    ema_decay: float = 0.99
    dead_code_steps: int = 64
    max_reseeds_per_step: int = 8
    max_grad_norm: float = 1.0
    kmeans_iters: int = 10
    # Refitting the codebook with k-means every so often keeps it tracking
    # the drifting encoder; refits stop one window before the end so the
    # final codebook settles by gradient.
    kmeans_refit_every: int = 100

    def __post_init__(self):
        if self.downsample < 1 or self.downsample & (self.downsample - 1):
            raise ValidationError(f"downsample must be a power of two, got {self.downsample}")

    @property
    def n_down(self) -> int:
        return int(self.downsample).bit_length() - 1

    @property
    def frame_width(self) -> int:
        return 12 * self.num_joints + 4

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def skeleton(self) -> SkeletonSpec:
        return SkeletonSpec(num_joints=self.num_joints, fps=self.fps)


@dataclass
class LatentSequence:
    """One person's latent track: (L, dim) vectors at 1/l of the frame rate.

    ``source_length`` is the frame count the track decodes back to (L*l);
    ``truncated_frames`` records frames dropped to reach a multiple of l.
    """

    latents: np.ndarray
    downsample_rate: int
    source_length: int
    truncated_frames: int = 0

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        if self.latents.ndim != 2 or self.latents.shape[0] < 1:
            raise ValidationError(f"latents must be (L>=1, dim), got {self.latents.shape}")
        expected = -(-self.source_length // self.downsample_rate)
        if self.latents.shape[0] != expected:
            raise ValidationError(
                f"L={self.latents.shape[0]} != ceil({self.source_length}/{self.downsample_rate})"
            )

    @property
    def length(self) -> int:
        return self.latents.shape[0]


@dataclass
class TokenizerParams:
    config: TokenizerConfig
    weights: dict  # conv weights, keys "enc.*" / "dec.*"
    codebook: Codebook
    norm_mean: np.ndarray
    norm_std: np.ndarray
    step: int = 0
    seed: int = 0

    def encoder_spec(self):
        c = self.config
        return convnet.encoder_spec(2 * c.frame_width, c.hidden, 2 * c.code_dim, c.n_down)

    def decoder_spec(self):
        c = self.config
        return convnet.decoder_spec(2 * c.code_dim, c.hidden, 2 * c.frame_width, c.n_down)


def init_tokenizer(config: TokenizerConfig, rng: np.random.Generator | None = None) -> TokenizerParams:
    rng = rng or np.random.default_rng(config.seed)
    c = config
    weights = {}
    weights.update(convnet.init_stack(
        convnet.encoder_spec(2 * c.frame_width, c.hidden, 2 * c.code_dim, c.n_down),
        "enc", rng, c.np_dtype))
    weights.update(convnet.init_stack(
        convnet.decoder_spec(2 * c.code_dim, c.hidden, 2 * c.frame_width, c.n_down),
        "dec", rng, c.np_dtype))
    entries = 0.1 * rng.standard_normal((c.codebook_size, c.code_dim))
    codebook = Codebook(entries, depth=c.depth, shared_across_depths=c.shared_codebook)
    return TokenizerParams(
        config=c,
        weights=weights,
        codebook=codebook,
        norm_mean=np.zeros(c.frame_width),
        norm_std=np.ones(c.frame_width),
        seed=c.seed,
    )


def _as_interactive(clip) -> InteractiveClip:
    if isinstance(clip, MotionClip):
        # Single-person rule: the encoder always sees two tracks, so a lone
        # motion is paired with an identical copy of itself.
        return InteractiveClip(clip, clip)
    return clip


def _clip_to_input(clip: InteractiveClip, tp: TokenizerParams):
    c = tp.config
    m = clip.num_frames
    usable = (m // c.downsample) * c.downsample
    if usable == 0:
        raise ValidationError(f"clip has {m} frames; need at least {c.downsample}")
    per_person = []
    for person in clip.persons:
        if person.features.shape[1] != c.frame_width:
            raise ValidationError("clip feature width does not match tokenizer config")
        per_person.append((person.features[:usable] - tp.norm_mean) / tp.norm_std)
    x = np.concatenate(per_person, axis=1).T[None, :, :].astype(tp.config.np_dtype)
    return x, m - usable


def encode_clip(clip, tp: TokenizerParams) -> tuple[LatentSequence, LatentSequence]:
    """Per-person latent tracks for an interactive clip.

    A single-person clip is encoded as two identical copies; both returned
    tracks are then views of the same motion.
    """
    clip = _as_interactive(clip)
    x, truncated = _clip_to_input(clip, tp)
    y, _ = convnet.stack_forward(tp.encoder_spec(), "enc", tp.weights, x)
    d = tp.config.code_dim
    length = y.shape[2] * tp.config.downsample
    make = lambda z: LatentSequence(z, tp.config.downsample, length, truncated)
    return make(y[0, :d].T.copy()), make(y[0, d:].T.copy())


def encode_single(clip: MotionClip, tp: TokenizerParams) -> LatentSequence:
    a, _ = encode_clip(clip, tp)
    return a


def decode_latents(latents_a: LatentSequence, latents_b: LatentSequence, tp: TokenizerParams) -> InteractiveClip:
    if latents_a.length != latents_b.length:
        raise ValidationError("person latent tracks differ in length")
    z = np.concatenate([latents_a.latents.T, latents_b.latents.T], axis=0)[None].astype(
        tp.config.np_dtype
    )
    y, _ = convnet.stack_forward(tp.decoder_spec(), "dec", tp.weights, z)
    f = tp.config.frame_width
    skeleton = tp.config.skeleton()
    persons = []
    for i in range(2):
        feats = y[0, i * f : (i + 1) * f].T * tp.norm_std + tp.norm_mean
        feats[:, -4:] = (feats[:, -4:] > 0.5).astype(np.float64)
        persons.append(MotionClip(feats, skeleton))
    return InteractiveClip(persons[0], persons[1])


def decode_single(latents: LatentSequence, tp: TokenizerParams) -> MotionClip:
    return decode_latents(latents, latents, tp).person_a


def quantize_latents(latents_a: LatentSequence, latents_b: LatentSequence | None, tp: TokenizerParams) -> CodeGrid:
    """Residual-quantize latent tracks into a code grid (L, persons, depth)."""
    tracks = [latents_a] if latents_b is None else [latents_a, latents_b]
    codes = np.stack(
        [residual_quantize_batch(t.latents, tp.codebook) for t in tracks], axis=1
    )
    return CodeGrid(codes)


def grid_to_latents(grid: CodeGrid, tp: TokenizerParams) -> list[LatentSequence]:
    length = grid.length * tp.config.downsample
    return [
        LatentSequence(dequantize(grid.codes[:, p], tp.codebook), tp.config.downsample, length)
        for p in range(grid.persons)
    ]


def encode_to_grid(clip, tp: TokenizerParams) -> CodeGrid:
    """Clip -> code grid; single-person clips produce a 1-person grid."""
    single = isinstance(clip, MotionClip)
    a, b = encode_clip(clip, tp)
    return quantize_latents(a, None if single else b, tp)


def decode_grid(grid: CodeGrid, tp: TokenizerParams):
    """Code grid -> clip: InteractiveClip for 2 persons, MotionClip for 1."""
    tracks = grid_to_latents(grid, tp)
    if grid.persons == 1:
        return decode_single(tracks[0], tp)
    return decode_latents(tracks[0], tracks[1], tp)


def _latent_rows(z_map: np.ndarray, code_dim: int) -> np.ndarray:
    # (B, 2d, L) -> (B*2*L, d), person-major within each batch element
    b, _, length = z_map.shape
    za = z_map[:, :code_dim, :]
    zb = z_map[:, code_dim:, :]
    stacked = np.stack([za, zb], axis=1)  # (B, 2, d, L)
    return stacked.transpose(0, 1, 3, 2).reshape(b * 2 * length, code_dim)


def _rows_to_map(rows: np.ndarray, b: int, code_dim: int, length: int) -> np.ndarray:
    stacked = rows.reshape(b, 2, length, code_dim).transpose(0, 1, 3, 2)
    return stacked.reshape(b, 2 * code_dim, length)


def tokenizer_loss_and_grads(
    weights: dict,
    entries: np.ndarray,
    x: np.ndarray,
    config: TokenizerConfig,
    bypass_quantizer: bool = False,
):
    """Total loss and gradients for one normalized batch (B, 2F, M).

    Loss = mean reconstruction error + codebook term + beta * commitment
    term. The quantizer passes reconstruction gradients straight through to
    the encoder. ``bypass_quantizer`` feeds the encoder output directly to
    the decoder (no codes), which makes the whole loss differentiable; the
    finite-difference tests rely on that mode.
    """
    c = config
    enc_spec = convnet.encoder_spec(2 * c.frame_width, c.hidden, 2 * c.code_dim, c.n_down)
    dec_spec = convnet.decoder_spec(2 * c.code_dim, c.hidden, 2 * c.frame_width, c.n_down)

    z_map, enc_caches = convnet.stack_forward(enc_spec, "enc", weights, x)
    batch, _, length = z_map.shape

    if bypass_quantizer:
        codes = None
        resid_rows = np.zeros((batch * 2 * length, c.code_dim))
        zq_map = z_map
    else:
        lat_rows = _latent_rows(z_map, c.code_dim)
        codes, resid_rows = kernels.rq_encode(lat_rows, entries, c.depth)
        zq_rows = lat_rows - resid_rows
        zq_map = _rows_to_map(zq_rows, batch, c.code_dim, length).astype(x.dtype)

    xr, dec_caches = convnet.stack_forward(dec_spec, "dec", weights, zq_map)
    diff = xr - x
    recon = float(np.mean(diff * diff))
    n_lat = resid_rows.size
    quant_err = float(np.mean(resid_rows * resid_rows))
    loss = recon + (1.0 + c.beta) * quant_err

    # Reconstruction gradient through the decoder, then straight through
    # the quantizer into the encoder output.
    dxr = 2.0 * diff / diff.size
    dzq_map, grads = convnet.stack_backward(dec_spec, "dec", dec_caches, dxr)
    dz_map = dzq_map
    dentries = np.zeros_like(entries)
    if not bypass_quantizer:
        # commitment: beta * d mean(||z - sg(zq)||^2) / dz
        dcommit_rows = (2.0 * c.beta / n_lat) * resid_rows
        dz_map = (dz_map + _rows_to_map(dcommit_rows, batch, c.code_dim, length)).astype(x.dtype)
        # codebook: d mean(||sg(z) - zq||^2) / d entries, zq = sum of picks
        drow = (-2.0 / n_lat) * resid_rows
        for d in range(c.depth):
            np.add.at(dentries, codes[:, d], drow)
    _, enc_grads = convnet.stack_backward(enc_spec, "enc", enc_caches, dz_map)
    grads.update(enc_grads)
    extras = {
        "codes": codes,
        "recon": recon,
        "lat_rows": None if bypass_quantizer else lat_rows,
    }
    return loss, grads, dentries, extras


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    recon_losses: list = field(default_factory=list)
    mpjpe_initial: float = float("nan")
    mpjpe_final: float = float("nan")


@dataclass
class TokenizerTrainResult:
    params: TokenizerParams
    history: TrainHistory


def _clip_mpjpe(pred: InteractiveClip, ref: InteractiveClip) -> float:
    errs = []
    for p, r in zip(pred.persons, ref.persons):
        errs.append(np.linalg.norm(p.positions - r.positions, axis=-1).mean())
    return float(np.mean(errs))


def reconstruction_mpjpe(tp: TokenizerParams, clips) -> float:
    """Mean per-joint position error of the full encode/quantize/decode path."""
    errs = []
    for clip in clips:
        clip = _as_interactive(clip)
        usable = (clip.num_frames // tp.config.downsample) * tp.config.downsample
        ref = clip.slice_frames(0, usable)
        rec = decode_grid(encode_to_grid(ref, tp), tp)
        errs.append(_clip_mpjpe(rec, ref))
    return float(np.mean(errs))


def _batches(dataset_inputs, batch_size, rng):
    """Deterministic epoch of batches; clips are bucketed by length."""
    buckets = {}
    for i, x in enumerate(dataset_inputs):
        buckets.setdefault(x.shape[2], []).append(i)
    batches = []
    for length in sorted(buckets):
        idx = np.array(buckets[length])
        idx = idx[rng.permutation(len(idx))]
        for start in range(0, len(idx), batch_size):
            batches.append(idx[start : start + batch_size])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _clip_grads(grads: dict, max_norm: float) -> None:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale


def train_tokenizer(dataset, config: TokenizerConfig) -> TokenizerTrainResult:
    """Train encoder, decoder, and codebook; bit-reproducible for a fixed seed.

    Codebook upkeep, all deterministic from the seed: k-means init from the
    first batch of encoder outputs, periodic k-means refits from a rolling
    latent buffer (the entries otherwise lag the drifting encoder and usage
    collapses), and reseeding of a few stale entries per step.
    """
    if not dataset:
        raise ValidationError("training dataset is empty")
    clips = [_as_interactive(c) for c in dataset]
    rng = np.random.default_rng(config.seed)
    tp = init_tokenizer(config, rng)

    feats = np.concatenate([p.features for c in clips for p in c.persons], axis=0)
    tp.norm_mean = feats.mean(axis=0)
    tp.norm_std = np.maximum(feats.std(axis=0), 1e-6)

    inputs = [_clip_to_input(c, tp)[0] for c in clips]
    history = TrainHistory()
    history.mpjpe_initial = reconstruction_mpjpe(tp, clips)

    entries = tp.codebook.entries
    kmeans_done = False
    opt = AdamW(weight_decay=0.0)
    cb_opt = AdamW(weight_decay=0.0)
    last_used = np.zeros(config.codebook_size, dtype=np.int64)
    ema_size = np.ones(config.codebook_size)
    ema_sum = entries.copy()
    lat_buffer: list = []  # recent latents for k-means refits

    step = 0
    while step < config.steps:
        for batch_idx in _batches(inputs, config.batch_size, rng):
            if step >= config.steps:
                break
            x = np.concatenate([inputs[i] for i in batch_idx], axis=0)
            if not kmeans_done:
                z_map, _ = convnet.stack_forward(tp.encoder_spec(), "enc", tp.weights, x)
                lat = _latent_rows(z_map, config.code_dim)
                entries[:] = rq_kmeans_init(
                    lat, config.codebook_size, config.depth, rng, config.kmeans_iters
                )
                ema_sum = entries.copy()
                kmeans_done = True

            loss, grads, dentries, extras = tokenizer_loss_and_grads(
                tp.weights, entries, x, config
            )
            if not np.isfinite(loss):
                raise TrainingError("tokenizer loss is not finite", step=step)
            history.losses.append(loss)
            history.recon_losses.append(extras["recon"])
            codes, lat_rows = extras["codes"], extras["lat_rows"]
            lat_buffer.append(lat_rows)
            if len(lat_buffer) > 4:
                lat_buffer.pop(0)

            lr_now = (
                cosine_lr(step, config.steps, config.lr)
                if config.lr_schedule == "cosine"
                else config.lr
            )
            if config.max_grad_norm:
                _clip_grads(grads, config.max_grad_norm)
            opt.step(tp.weights, grads, lr_now)
            if config.ema_codebook:
                # Each depth's entry moves toward the mean residual that
                # selected it; reconstruct per-depth residual inputs from
                # the code chain.
                sel = entries[codes]  # (n, depth, dim)
                prefix = np.cumsum(sel, axis=1) - sel
                targets = lat_rows[:, None, :] - prefix
                flat = codes.ravel()
                counts = np.bincount(flat, minlength=config.codebook_size).astype(np.float64)
                sums = np.zeros_like(entries)
                np.add.at(sums, flat, targets.reshape(-1, config.code_dim))
                ema_size = config.ema_decay * ema_size + (1 - config.ema_decay) * counts
                ema_sum = config.ema_decay * ema_sum + (1 - config.ema_decay) * sums
                entries[:] = ema_sum / np.maximum(ema_size, 1e-8)[:, None]
            else:
                cb_opt.step({"codebook": entries}, {"codebook": dentries}, lr_now)

            refit = (
                config.kmeans_refit_every
                and step > 0
                and step % config.kmeans_refit_every == 0
                and step < config.steps - config.kmeans_refit_every
            )
            if refit:
                pool = np.concatenate(lat_buffer, axis=0)
                entries[:] = rq_kmeans_init(
                    pool, config.codebook_size, config.depth, rng, config.kmeans_iters
                )
                cb_opt.reset_rows("codebook", np.arange(config.codebook_size))
                ema_sum = entries.copy()
                ema_size = np.ones(config.codebook_size)
                last_used[:] = step

            used = np.zeros(config.codebook_size, dtype=bool)
            used[codes.ravel()] = True
            last_used[used] = step
            stale = np.flatnonzero((step - last_used) >= config.dead_code_steps)
            if stale.size:
                stale = stale[np.argsort(last_used[stale])[: config.max_reseeds_per_step]]
                picks = rng.integers(0, lat_rows.shape[0], size=stale.size)
                entries[stale] = lat_rows[picks]
                make_rows_distinct(entries, rng)
                cb_opt.reset_rows("codebook", stale)
                ema_sum[stale] = entries[stale]
                ema_size[stale] = 1.0
                last_used[stale] = step
            step += 1
    tp.step = step
    tp.codebook = Codebook(entries, depth=config.depth, shared_across_depths=config.shared_codebook)
    history.mpjpe_final = reconstruction_mpjpe(tp, clips)
    return TokenizerTrainResult(tp, history)


def save_tokenizer(path, tp: TokenizerParams) -> None:
    """Write ``.rqvae.json``: config scalars, codebook, and per-layer weights."""
    c = tp.config
    doc = {
        "K": c.codebook_size,
        "dim": c.code_dim,
        "depth": c.depth,
        "downsample": c.downsample,
        "codebook": tp.codebook.entries.tolist(),
        "encoder": {k: v.tolist() for k, v in tp.weights.items() if k.startswith("enc.")},
        "decoder": {k: v.tolist() for k, v in tp.weights.items() if k.startswith("dec.")},
        "seed": tp.seed,
        "step": tp.step,
        "beta": c.beta,
        "hidden": c.hidden,
        "dtype": c.dtype,
        "num_joints": c.num_joints,
        "fps": c.fps,
        "shared_codebook": c.shared_codebook,
        "norm": {"mean": tp.norm_mean.tolist(), "std": tp.norm_std.tolist()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_tokenizer(path) -> TokenizerParams:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    config = TokenizerConfig(
        num_joints=doc["num_joints"],
        fps=doc["fps"],
        codebook_size=doc["K"],
        depth=doc["depth"],
        downsample=doc["downsample"],
        code_dim=doc["dim"],
        hidden=doc["hidden"],
        dtype=doc.get("dtype", "float32"),
        beta=doc["beta"],
        seed=doc["seed"],
        shared_codebook=doc.get("shared_codebook", True),
    )
    weights = {}
    for section in ("encoder", "decoder"):
        for name, value in doc[section].items():
            weights[name] = np.asarray(value, dtype=config.np_dtype)
    codebook = Codebook(
        np.asarray(doc["codebook"], dtype=np.float64),
        depth=config.depth,
        shared_across_depths=config.shared_codebook,
    )
    return TokenizerParams(
        config=config,
        weights=weights,
        codebook=codebook,
        norm_mean=np.asarray(doc["norm"]["mean"], dtype=np.float64),
        norm_std=np.asarray(doc["norm"]["std"], dtype=np.float64),
        step=doc.get("step", 0),
        seed=doc["seed"],
    )
