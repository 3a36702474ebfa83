"""Checkpoint files: a JSON header plus a sibling raw float32 blob.

``foo.ckpt.json`` holds the config, step, RNG state, adapter/optimizer
metadata, and an offset table; ``foo.ckpt.bin`` holds every array as raw
little-endian float32 at its listed offset. Model/optimizer/adapter arrays
are float32 in training flows, so a save/load round trip is lossless and
resumed runs replay the exact trajectory.
"""

from dataclasses import asdict, dataclass
import json

import numpy as np

from .errors import ValidationError
from .lora import LoraAdapter
from .optim import AdamW
from .transformer import ModelConfig, ModelParams

FORMAT = "motionchat-ckpt-v1"


@dataclass
class Checkpoint:
    params: ModelParams
    adapter: LoraAdapter | None
    optimizer_arrays: dict
    optimizer_t: int
    rng_state: dict | None
    step: int
    extra: dict


def blob_path(json_path) -> str:
    base = str(json_path)
    if base.endswith(".json"):
        base = base[: -len(".json")]
    return base + ".bin"


def save_checkpoint(
    json_path,
    params: ModelParams,
    adapter: LoraAdapter | None = None,
    optimizer: AdamW | None = None,
    rng: np.random.Generator | None = None,
    step: int = 0,
    extra: dict | None = None,
) -> None:
    arrays = {f"model.{k}": v for k, v in params.weights.items()}
    if adapter is not None:
        arrays.update({f"adapter.{k}": v for k, v in adapter.param_dict().items()})
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())

    table = {}
    offset = 0
    order = sorted(arrays)
    for name in order:
        arr = arrays[name]
        table[name] = {"offset": offset, "shape": list(arr.shape)}
        offset += int(np.prod(arr.shape)) * 4

    doc = {
        "format": FORMAT,
        "step": step,
        "config": asdict(params.config),
        "adapter": None
        if adapter is None
        else {"rank": adapter.rank, "alpha": adapter.alpha, "dropout": adapter.dropout,
              "targets": sorted(adapter.targets)},
        "optimizer": None
        if optimizer is None
        else {"t": optimizer.t, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
              "eps": optimizer.eps, "weight_decay": optimizer.weight_decay},
        "rng_state": None if rng is None else rng.bit_generator.state,
        "extra": extra or {},
        "blob_dtype": "<f4",
        "arrays": table,
    }
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
    with open(blob_path(json_path), "wb") as f:
        for name in order:
            f.write(np.ascontiguousarray(arrays[name], dtype="<f4").tobytes())


def load_checkpoint(json_path) -> Checkpoint:
    with open(json_path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != FORMAT:
        raise ValidationError(f"{json_path} is not a {FORMAT} file")
    blob = np.fromfile(blob_path(json_path), dtype="<f4")

    def fetch(name, meta):
        size = int(np.prod(meta["shape"])) if meta["shape"] else 1
        start = meta["offset"] // 4
        return blob[start : start + size].reshape(meta["shape"])

    config = ModelConfig(**doc["config"])
    dt = config.np_dtype
    weights = {}
    adapter_arrays = {}
    optimizer_arrays = {}
    for name, meta in doc["arrays"].items():
        arr = fetch(name, meta)
        if name.startswith("model."):
            weights[name[len("model.") :]] = arr.astype(dt)
        elif name.startswith("adapter."):
            adapter_arrays[name[len("adapter.") :]] = arr.astype(dt)
        elif name.startswith("opt."):
            optimizer_arrays[name] = arr.astype(dt)
    params = ModelParams(config, weights)

    adapter = None
    if doc["adapter"] is not None:
        meta = doc["adapter"]
        adapter = LoraAdapter(rank=meta["rank"], alpha=meta["alpha"], dropout=meta["dropout"])
        for target in meta["targets"]:
            adapter.targets[target] = (
                adapter_arrays[f"lora.{target}.A"],
                adapter_arrays[f"lora.{target}.B"],
            )
    opt_t = doc["optimizer"]["t"] if doc["optimizer"] else 0
    return Checkpoint(
        params=params,
        adapter=adapter,
        optimizer_arrays=optimizer_arrays,
        optimizer_t=opt_t,
        rng_state=doc["rng_state"],
        step=doc["step"],
        extra=doc.get("extra", {}),
    )


def restore_optimizer(ckpt: Checkpoint, weight_decay: float = 0.0) -> AdamW:
    opt = AdamW(weight_decay=weight_decay)
    opt.load_state_arrays(ckpt.optimizer_arrays, ckpt.optimizer_t)
    return opt
