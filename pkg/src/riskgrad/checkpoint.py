"""Binary checkpoint format.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"RGCKPT\\x00\\x01"
    8       4     format version (uint32, currently 1)
    12      8     header length H in bytes (uint64)
    20      H     UTF-8 JSON header
    20+H    ...   arrays, concatenated, each as little-endian float64

The header holds ``config``, ``iteration``, ``rng`` (numpy bit generator
state), ``actor`` and ``critic`` architecture descriptors, and ``arrays``:
an ordered list of ``{"name", "length", "shape"}`` entries describing the
payload. Array names are ``actor/<i>``, ``critic/<i>``, ``adam_actor/m/<i>``,
``adam_actor/v/<i>`` and likewise for the critic optimizer, indexed in
parameter order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, RiskgradError

MAGIC = b"RGCKPT\x00\x01"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    iteration: int
    arrays: dict[str, np.ndarray]
    actor: dict
    critic: dict
    rng: dict = field(default_factory=dict)
    adam_t: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        entries = [{"name": k, "length": int(v.size), "shape": list(v.shape)} for k, v in self.arrays.items()]
        header = {
            "version": VERSION,
            "config": self.config,
            "iteration": self.iteration,
            "rng": self.rng,
            "actor": self.actor,
            "critic": self.critic,
            "adam_t": self.adam_t,
            "arrays": entries,
        }
        blob = json.dumps(header, sort_keys=True, default=_json_default).encode()
        payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in self.arrays.values())
        return MAGIC + struct.pack("<IQ", VERSION, len(blob)) + blob + payload

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:8] != MAGIC:
            raise ConfigError("not a riskgrad checkpoint (bad magic)")
        version, hlen = struct.unpack("<IQ", raw[8:20])
        if version != VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        header = json.loads(raw[20 : 20 + hlen].decode())
        offset = 20 + hlen
        arrays = {}
        for entry in header["arrays"]:
            n = entry["length"]
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(np.float64)
            arrays[entry["name"]] = arr.reshape(entry["shape"])
            offset += 8 * n
        if offset != len(raw):
            raise ConfigError(f"checkpoint has {len(raw) - offset} trailing bytes")
        return cls(header["config"], header["iteration"], arrays, header["actor"], header["critic"],
                   header.get("rng", {}), header.get("adam_t", {}))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(self.to_bytes())
        except OSError as exc:
            raise RiskgradError(f"cannot write checkpoint {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        try:
            return cls.from_bytes(path.read_bytes())
        except OSError as exc:
            raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def group(self, prefix: str) -> list[np.ndarray]:
        out, i = [], 0
        while f"{prefix}/{i}" in self.arrays:
            out.append(self.arrays[f"{prefix}/{i}"])
            i += 1
        return out


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
