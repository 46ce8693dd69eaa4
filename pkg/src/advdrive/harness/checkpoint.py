"""Versioned, checksummed checkpoint files.

Layout::

    b"ADVDRIVE-CKPT\\n" | header length (uint64 LE) | header JSON | float64 LE payload | sha256 of all prior bytes

The header lists every network with its layer sizes; the payload holds each
network's parameters in ``Mlp.params()`` order. Writing is deterministic, so
equal checkpoints produce equal bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from advdrive.errors import CheckpointCorruptError, CheckpointError, CheckpointFormatError, CompatibilityError
from advdrive.nn import Mlp

FORMAT_VERSION = 1
MAGIC = b"ADVDRIVE-CKPT\n"
ROLES = ("ego_ppo", "adversary_td3", "robust_ppo")
EGO_ROLES = ("ego_ppo", "robust_ppo")
_DIGEST = 32


@dataclass
class Checkpoint:
    role: str
    networks: dict[str, Mlp]
    learner_config: dict = field(default_factory=dict)
    config_fingerprint: str = ""
    rng_state: dict = field(default_factory=dict)
    env_steps: int = 0
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.role not in ROLES:
            raise CheckpointError(f"unknown checkpoint role {self.role!r}")

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if (self.role, self.learner_config, self.config_fingerprint, self.rng_state, self.env_steps, self.version) != (
            other.role, other.learner_config, other.config_fingerprint, other.rng_state, other.env_steps,
            other.version,
        ):
            return False
        if sorted(self.networks) != sorted(other.networks):
            return False
        for name, net in self.networks.items():
            o = other.networks[name]
            if net.layer_sizes != o.layer_sizes:
                return False
            if not all(np.array_equal(a, b) for a, b in zip(net.params(), o.params())):
                return False
        return True

    def to_bytes(self) -> bytes:
        nets = []
        chunks = []
        for name in sorted(self.networks):
            net = self.networks[name]
            nets.append({"name": name, "layer_sizes": list(net.layer_sizes)})
            chunks += [np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params()]
        header = {
            "version": self.version,
            "role": self.role,
            "env_steps": int(self.env_steps),
            "config_fingerprint": self.config_fingerprint,
            "learner_config": self.learner_config,
            "rng_state": self.rng_state,
            "networks": nets,
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        body = MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < len(MAGIC) + 8 + _DIGEST or not data.startswith(MAGIC):
            raise CheckpointCorruptError("not a checkpoint file or truncated")
        body, digest = data[:-_DIGEST], data[-_DIGEST:]
        if hashlib.sha256(body).digest() != digest:
            raise CheckpointCorruptError("checksum mismatch: file is truncated or corrupted")
        (hlen,) = struct.unpack_from("<Q", body, len(MAGIC))
        start = len(MAGIC) + 8
        try:
            header = json.loads(body[start:start + hlen].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointCorruptError(f"unreadable header: {exc}") from exc
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointFormatError(
                f"checkpoint format version {header.get('version')!r} is not supported (expected {FORMAT_VERSION})"
            )
        payload = np.frombuffer(body, dtype="<f8", offset=start + hlen)
        pos = 0
        networks = {}
        for spec in header["networks"]:
            sizes = spec["layer_sizes"]
            weights, biases = [], []
            for k in range(len(sizes) - 1):
                n_w = sizes[k + 1] * sizes[k]
                weights.append(payload[pos:pos + n_w].reshape(sizes[k + 1], sizes[k]).astype(np.float64))
                pos += n_w
                biases.append(payload[pos:pos + sizes[k + 1]].astype(np.float64))
                pos += sizes[k + 1]
            networks[spec["name"]] = Mlp(sizes, weights, biases)
        if pos != payload.size:
            raise CheckpointCorruptError("payload size does not match the header")
        return cls(
            role=header["role"], networks=networks, learner_config=header["learner_config"],
            config_fingerprint=header["config_fingerprint"], rng_state=header["rng_state"],
            env_steps=header["env_steps"], version=header["version"],
        )


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(ckpt.to_bytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path, expect_roles=None) -> Checkpoint:
    """Read and verify a checkpoint; ``expect_roles`` restricts which role tags are acceptable."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        ckpt = Checkpoint.from_bytes(data)
    except CheckpointError as exc:
        raise type(exc)(f"{path}: {exc}") from exc
    if expect_roles is not None:
        if isinstance(expect_roles, str):
            expect_roles = (expect_roles,)
        if ckpt.role not in expect_roles:
            raise CompatibilityError(f"{path}: checkpoint role {ckpt.role!r} where {' or '.join(expect_roles)} required")
    return ckpt
