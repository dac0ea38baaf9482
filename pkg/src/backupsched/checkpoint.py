"""Binary agent checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes   b"BKSCHED\\0"
    version      uint32    FORMAT_VERSION
    header_len   uint32
    header       header_len bytes of UTF-8 JSON
    payload      raw arrays, in the order listed by header["arrays"]
    crc32        uint32    over every preceding byte

The header carries the network descriptors, optimizer scalars, exploration
state, hyperparameters and the training RNG state.  The replay buffer is not
stored; a loaded agent starts with an empty one.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import nn, rng as rngmod
from .agent import Agent, ExplorationState, HyperParams, ReplayBuffer
from .errors import CheckpointVersionError, CorruptCheckpoint

MAGIC = b"BKSCHED\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")

_NETS = ("actor", "critic", "actor_target", "critic_target")
_OPTS = ("actor_opt", "critic_opt")


def dumps(agent: Agent) -> bytes:
    arrays: list[tuple[str, np.ndarray]] = []
    for name in _NETS:
        arrays.append((name, getattr(agent, name).flat))
    for name in _OPTS:
        opt = getattr(agent, name)
        arrays.append((f"{name}.m", opt.m))
        arrays.append((f"{name}.v", opt.v))
    header = {
        "k": agent.k,
        "hyperparams": asdict(agent.hp),
        "networks": {name: getattr(agent, name).descriptor() for name in _NETS},
        "optimizers": {
            name: {f: getattr(getattr(agent, name), f) for f in ("lr", "t", "beta1", "beta2", "eps")}
            for name in _OPTS
        },
        "exploration": asdict(agent.exploration),
        "rng": rngmod.get_state(agent.rng),
        "total_steps": agent.total_steps,
        "arrays": [[name, arr.dtype.str, int(arr.size)] for name, arr in arrays],
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head
    body += b"".join(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes() for _, arr in arrays)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes) -> Agent:
    if len(data) < _PREFIX.size + 4:
        raise CorruptCheckpoint("checkpoint is truncated")
    magic, version, head_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpoint("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptCheckpoint("checksum mismatch (truncated or damaged file)")
    try:
        header = json.loads(data[_PREFIX.size : _PREFIX.size + head_len])
        pos = _PREFIX.size + head_len
        arrays = {}
        for name, dtype, size in header["arrays"]:
            dt = np.dtype(dtype)
            n = size * dt.itemsize
            arrays[name] = np.frombuffer(data, dt, size, pos).astype(dt.newbyteorder("="))
            pos += n
        if pos != len(data) - 4:
            raise CorruptCheckpoint("payload size does not match header")
        return _rebuild(header, arrays)
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"malformed checkpoint: {exc}") from None


def _rebuild(header: dict, arrays: dict) -> Agent:
    hp = HyperParams(**header["hyperparams"])
    k = int(header["k"])
    agent = Agent.__new__(Agent)
    agent.k = k
    agent.hp = hp
    for name in _NETS:
        setattr(agent, name, nn.NetworkParams.from_descriptor(header["networks"][name], arrays[name].copy()))
    for name in _OPTS:
        o = header["optimizers"][name]
        setattr(agent, name, nn.AdamState(
            lr=o["lr"], m=arrays[f"{name}.m"].copy(), v=arrays[f"{name}.v"].copy(),
            t=o["t"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
        ))
    agent.exploration = ExplorationState(**header["exploration"])
    agent.rng = rngmod.stream(hp.seed, "train")
    rngmod.set_state(agent.rng, header["rng"])
    agent.buffer = ReplayBuffer(hp.buffer_size, k)
    agent.total_steps = int(header["total_steps"])
    return agent


def save(agent: Agent, path) -> None:
    Path(path).write_bytes(dumps(agent))


def load(path) -> Agent:
    return loads(Path(path).read_bytes())
