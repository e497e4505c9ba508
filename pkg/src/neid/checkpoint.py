"""On-disk checkpoint format.

A checkpoint is a directory holding ``manifest.json`` and ``params.bin``.
``params.bin`` is every tensor flattened to little-endian float32 and
concatenated in manifest order; entry ``offset``/``count`` are in elements.
Adam moments live under the reserved ``adam.m.`` / ``adam.v.`` prefixes.
"""
import json
import os
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import CorruptCheckpoint, FingerprintMismatch, MissingFile
from .model import ArchConfig

FORMAT_VERSION = 1
M_PREFIX = "adam.m."
V_PREFIX = "adam.v."
_DTYPE = np.dtype("<f4")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=OrderedDict)
    v: dict = field(default_factory=OrderedDict)


@dataclass
class Checkpoint:
    params: "OrderedDict[str, torch.Tensor]"
    arch: ArchConfig
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    global_step: int = 0
    config: dict = field(default_factory=dict)
    sampler_state: dict = None
    best_psnr: float = None

    @property
    def fingerprint(self):
        return self.arch.fingerprint()

    def check_arch(self, arch):
        if arch is not None and arch.fingerprint() != self.fingerprint:
            raise FingerprintMismatch(f"checkpoint arch {self.arch} does not match requested {arch}")


def _entries(ckpt):
    for name, t in ckpt.params.items():
        yield name, t
    for name, t in ckpt.adam.m.items():
        yield M_PREFIX + name, t
    for name, t in ckpt.adam.v.items():
        yield V_PREFIX + name, t


def save_checkpoint(ckpt, path):
    path = os.fspath(path)
    os.makedirs(path, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, t in _entries(ckpt):
        arr = t.detach().cpu().numpy().astype(_DTYPE, copy=False).ravel()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr)
        offset += arr.size
    manifest = {
        "format_version": FORMAT_VERSION,
        "arch": ckpt.arch.to_dict(),
        "fingerprint": ckpt.fingerprint,
        "epoch": ckpt.epoch,
        "global_step": ckpt.global_step,
        "adam_step": ckpt.adam.step,
        "config": ckpt.config,
        "sampler_state": ckpt.sampler_state,
        "best_psnr": ckpt.best_psnr,
        "entries": entries,
    }
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype=_DTYPE)
    tmp_bin = os.path.join(path, "params.bin.tmp")
    tmp_manifest = os.path.join(path, "manifest.json.tmp")
    blob.astype(_DTYPE).tofile(tmp_bin)
    with open(tmp_manifest, "w") as fh:
        json.dump(manifest, fh, indent=1)
    os.replace(tmp_bin, os.path.join(path, "params.bin"))
    os.replace(tmp_manifest, os.path.join(path, "manifest.json"))


def load_checkpoint(path):
    path = os.fspath(path)
    manifest_path = os.path.join(path, "manifest.json")
    bin_path = os.path.join(path, "params.bin")
    if not os.path.isfile(manifest_path) or not os.path.isfile(bin_path):
        raise MissingFile(f"{path} is not a checkpoint directory")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"unreadable manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported format_version {manifest.get('format_version')!r}")
    try:
        arch = ArchConfig(**manifest["arch"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"bad arch record: {exc}") from exc
    if manifest.get("fingerprint") != arch.fingerprint():
        raise CorruptCheckpoint("fingerprint does not match stored arch")

    blob = np.fromfile(bin_path, dtype=_DTYPE)
    params, m, v = OrderedDict(), OrderedDict(), OrderedDict()
    expected = 0
    for e in manifest["entries"]:
        count = int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1
        if e["offset"] != expected or e["count"] != count:
            raise CorruptCheckpoint(f"entry {e['name']}: inconsistent offset/count")
        if e["offset"] + count > blob.size:
            raise CorruptCheckpoint(f"entry {e['name']}: params.bin truncated")
        t = torch.from_numpy(blob[e["offset"] : e["offset"] + count].copy()).reshape(e["shape"])
        name = e["name"]
        if name.startswith(M_PREFIX):
            m[name[len(M_PREFIX) :]] = t
        elif name.startswith(V_PREFIX):
            v[name[len(V_PREFIX) :]] = t
        else:
            params[name] = t
        expected += count
    if expected != blob.size:
        raise CorruptCheckpoint("params.bin has trailing data")

    return Checkpoint(
        params=params,
        arch=arch,
        adam=AdamState(step=int(manifest.get("adam_step", 0)), m=m, v=v),
        epoch=int(manifest.get("epoch", 0)),
        global_step=int(manifest.get("global_step", 0)),
        config=manifest.get("config") or {},
        sampler_state=manifest.get("sampler_state"),
        best_psnr=manifest.get("best_psnr"),
    )
