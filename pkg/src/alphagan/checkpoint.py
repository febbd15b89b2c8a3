"""Named-tensor checkpoint directories.

Layout::

    manifest.json   ordered tensor records {name, shape, dtype, offset, nbytes, crc32}
    weights.bin     little-endian tensor bytes concatenated in manifest order
    state.json      step, RNG position, config echo, architecture hash, optimizer groups

Optimizer moments are stored as extra named tensors (``opt_g.state.<i>.<key>``).
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1

# torch dtype <-> little-endian numpy dtype used in weights.bin
_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.uint8: "|u1",
}
_TORCH_BY_NAME = {str(k).removeprefix("torch."): k for k in _DTYPES}


class CheckpointError(RuntimeError):
    pass


def manifest_hash(*manifests: list[dict]) -> str:
    """Stable digest of tensor names, shapes and dtypes."""
    payload = json.dumps([[(r["name"], list(r["shape"]), r["dtype"]) for r in m] for m in manifests])
    return hashlib.sha256(payload.encode()).hexdigest()


def write_tensors(directory, tensors: dict[str, torch.Tensor]) -> list[dict]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records, offset = [], 0
    with open(directory / "weights.bin", "wb") as fh:
        for name, tensor in tensors.items():
            tensor = tensor.detach().cpu()
            if tensor.dtype not in _DTYPES:
                raise CheckpointError(f"unsupported dtype {tensor.dtype} for {name}")
            blob = np.ascontiguousarray(tensor.numpy(), dtype=_DTYPES[tensor.dtype]).tobytes()
            fh.write(blob)
            records.append({
                "name": name,
                "shape": list(tensor.shape),
                "dtype": str(tensor.dtype).removeprefix("torch."),
                "offset": offset,
                "nbytes": len(blob),
                "crc32": zlib.crc32(blob),
            })
            offset += len(blob)
    with open(directory / "manifest.json", "w") as fh:
        json.dump({"version": FORMAT_VERSION, "tensors": records}, fh, indent=1)
    return records


def read_tensors(directory) -> dict[str, torch.Tensor]:
    directory = Path(directory)
    try:
        with open(directory / "manifest.json") as fh:
            manifest = json.load(fh)
        data = (directory / "weights.bin").read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"incomplete tensor directory {directory}: {exc}") from exc
    tensors = {}
    for rec in manifest["tensors"]:
        blob = data[rec["offset"]: rec["offset"] + rec["nbytes"]]
        if len(blob) != rec["nbytes"] or zlib.crc32(blob) != rec["crc32"]:
            raise CheckpointError(f"checksum mismatch for tensor {rec['name']} in {directory}")
        dtype = _TORCH_BY_NAME[rec["dtype"]]
        array = np.frombuffer(blob, dtype=_DTYPES[dtype]).reshape(rec["shape"])
        tensors[rec["name"]] = torch.from_numpy(array.astype(array.dtype.newbyteorder("="))).clone()
    return tensors


@dataclass
class Checkpoint:
    generator: dict[str, torch.Tensor]
    discriminator: dict[str, torch.Tensor]
    optimizers: dict[str, dict] = field(default_factory=dict)
    step: int = 0
    rng: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    manifest_hash: str = ""


def _flatten_optimizer(prefix: str, state: dict) -> tuple[dict[str, torch.Tensor], dict]:
    tensors, scalars = {}, {}
    for idx, entries in state["state"].items():
        for key, value in entries.items():
            name = f"{prefix}.state.{idx}.{key}"
            if torch.is_tensor(value):
                tensors[name] = value
            else:
                scalars[name] = value
    return tensors, {"param_groups": state["param_groups"], "scalars": scalars}


def _unflatten_optimizer(prefix: str, tensors: dict, meta: dict) -> dict:
    state: dict[int, dict] = {}
    head = f"{prefix}.state."
    items = [(k, v) for k, v in tensors.items() if k.startswith(head)] + \
        [(k, v) for k, v in meta.get("scalars", {}).items()]
    for name, value in items:
        idx, key = name[len(head):].split(".", 1)
        state.setdefault(int(idx), {})[key] = value
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(ckpt: Checkpoint, directory) -> Path:
    directory = Path(directory)
    tensors = {f"generator.{k}": v for k, v in ckpt.generator.items()}
    tensors.update({f"discriminator.{k}": v for k, v in ckpt.discriminator.items()})
    optim_meta = {}
    for prefix, state in ckpt.optimizers.items():
        flat, meta = _flatten_optimizer(prefix, state)
        tensors.update(flat)
        optim_meta[prefix] = meta
    rng_meta = {}
    for key, value in ckpt.rng.items():
        if torch.is_tensor(value):
            tensors[f"rng.{key}"] = value
        else:
            rng_meta[key] = value
    write_tensors(directory, tensors)
    state = {
        "version": FORMAT_VERSION,
        "step": ckpt.step,
        "rng": rng_meta,
        "config": ckpt.config,
        "manifest_hash": ckpt.manifest_hash,
        "optimizers": optim_meta,
    }
    with open(directory / "state.json", "w") as fh:
        json.dump(state, fh, indent=2)
    return directory


def load_checkpoint(directory, expected_hash: str | None = None) -> Checkpoint:
    """Read a checkpoint; refuses when ``expected_hash`` names a different architecture."""
    directory = Path(directory)
    try:
        with open(directory / "state.json") as fh:
            state = json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"no checkpoint in {directory}") from exc
    if expected_hash is not None and state["manifest_hash"] != expected_hash:
        raise CheckpointError(
            f"checkpoint architecture {state['manifest_hash'][:12]} does not match the configured "
            f"model {expected_hash[:12]}"
        )
    tensors = read_tensors(directory)

    def section(prefix):
        head = prefix + "."
        return {k[len(head):]: v for k, v in tensors.items() if k.startswith(head)}

    optimizers = {
        prefix: _unflatten_optimizer(prefix, tensors, meta) for prefix, meta in state["optimizers"].items()
    }
    return Checkpoint(
        generator=section("generator"),
        discriminator=section("discriminator"),
        optimizers=optimizers,
        step=state["step"],
        rng={**state["rng"], **section("rng")},
        config=state["config"],
        manifest_hash=state["manifest_hash"],
    )
