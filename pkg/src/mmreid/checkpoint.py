"""Versioned binary checkpoints with a trailing CRC32.

The payload is packed little-endian so float64 parameters round-trip bit
for bit; JSON would not guarantee that. Writes go to a temp file followed
by an atomic rename.
"""
from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .encoders import EncoderPair, EncoderParams
from .errors import ChecksumMismatch, IoError, VersionMismatch
from .textual import ClusterState
from .trainer import MODES, AdamMoments, TrainConfig, TrainState
from .visual import KeyQueue

MAGIC = b"MMRC"
VERSION = 1


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def raw(self, blob: bytes):
        self.parts.append(blob)

    def pack(self, fmt: str, *values):
        self.parts.append(struct.pack(fmt, *values))

    def array(self, arr: np.ndarray):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        self.pack("<B", arr.ndim)
        for size in arr.shape:
            self.pack("<I", size)
        self.raw(arr.tobytes())

    def arrays(self, arrays):
        self.pack("<I", len(arrays))
        for arr in arrays:
            self.array(arr)

    def blob(self) -> bytes:
        return b"".join(self.parts)


class _Scanner:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise ChecksumMismatch("checkpoint payload ended early")
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def array(self) -> np.ndarray:
        ndim = self.unpack("<B")
        shape = tuple(self.unpack("<I") for _ in range(ndim))
        count = 1
        for size in shape:
            count *= size
        data = np.frombuffer(self.take(8 * count), dtype="<f8")
        return data.reshape(shape).astype(np.float64)

    def arrays(self) -> list[np.ndarray]:
        return [self.array() for _ in range(self.unpack("<I"))]

    def done(self) -> bool:
        return self.pos == len(self.blob)


def _write_config(w: _Writer, config: TrainConfig) -> None:
    w.pack(
        "<IIdddIdddQB",
        config.iterations, config.batch_size, config.tau, config.eta,
        config.momentum, config.queue_capacity, config.learning_rate,
        config.weight_decay_visual, config.weight_decay_text, config.seed,
        MODES.index(config.mode),
    )
    w.pack("<I", 0 if config.clusters is None else config.clusters)
    w.pack("<B", len(config.hidden_dims))
    for dim in config.hidden_dims:
        w.pack("<I", dim)
    w.pack(
        "<IddddI", config.embedding_dim, config.tau_instance, config.cluster_alpha,
        config.aug_sigma, config.aug_dropout, config.text_warmup,
    )


def _read_config(s: _Scanner) -> TrainConfig:
    (iterations, batch_size, tau, eta, momentum, queue_capacity, learning_rate,
     wd_visual, wd_text, seed, mode_code) = s.unpack("<IIdddIdddQB")
    clusters = s.unpack("<I")
    hidden = tuple(s.unpack("<I") for _ in range(s.unpack("<B")))
    (embedding_dim, tau_instance, cluster_alpha, aug_sigma, aug_dropout,
     text_warmup) = s.unpack("<IddddI")
    return TrainConfig(
        iterations=iterations, batch_size=batch_size, tau=tau, eta=eta,
        momentum=momentum, queue_capacity=queue_capacity,
        learning_rate=learning_rate, weight_decay_visual=wd_visual,
        weight_decay_text=wd_text, seed=seed, mode=MODES[mode_code],
        clusters=clusters or None, hidden_dims=hidden,
        embedding_dim=embedding_dim, tau_instance=tau_instance,
        cluster_alpha=cluster_alpha, aug_sigma=aug_sigma,
        aug_dropout=aug_dropout, text_warmup=text_warmup,
    )


def _write_encoder(w: _Writer, params: EncoderParams) -> None:
    w.pack("<I", len(params.weights))
    for weight, bias in zip(params.weights, params.biases):
        w.array(weight)
        w.array(bias)


def _read_encoder(s: _Scanner) -> EncoderParams:
    layers = s.unpack("<I")
    weights, biases = [], []
    for _ in range(layers):
        weights.append(s.array())
        biases.append(s.array())
    return EncoderParams(tuple(weights), tuple(biases))


def _write_moments(w: _Writer, moments: AdamMoments) -> None:
    w.arrays(moments.m)
    w.arrays(moments.v)


def _read_moments(s: _Scanner) -> AdamMoments:
    return AdamMoments(s.arrays(), s.arrays())


def save_checkpoint(state: TrainState, path) -> None:
    """Serialize the full training state; the round trip is bitwise exact."""
    w = _Writer()
    w.raw(MAGIC)
    w.pack("<H", VERSION)
    _write_config(w, state.config)
    w.pack("<I", state.iteration)
    w.pack("<d", state.pair.momentum)
    _write_encoder(w, state.pair.query)
    _write_encoder(w, state.pair.key)
    _write_encoder(w, state.text)
    w.pack("<d", state.clusters.alpha)
    w.array(state.clusters.centers)
    w.pack("<II", state.queue.capacity, state.queue.dim)
    w.array(state.queue.entries)
    _write_moments(w, state.opt_visual)
    _write_moments(w, state.opt_text)
    _write_moments(w, state.opt_centers)
    blob = w.blob()
    payload = blob + struct.pack("<I", zlib.crc32(blob))
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from None


def load_checkpoint(path) -> TrainState:
    try:
        with open(path, "rb") as handle:
            payload = handle.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from None
    if len(payload) >= 4 and payload[:4] != MAGIC:
        raise VersionMismatch(f"{path}: not a checkpoint file")
    if len(payload) < 10:
        raise ChecksumMismatch(f"{path}: file too short")
    blob, stored = payload[:-4], struct.unpack("<I", payload[-4:])[0]
    if zlib.crc32(blob) != stored:
        raise ChecksumMismatch(f"{path}: CRC mismatch; file truncated or corrupt")
    s = _Scanner(blob)
    s.take(4)
    version = s.unpack("<H")
    if version != VERSION:
        raise VersionMismatch(f"{path}: unsupported checkpoint version {version}")

    config = _read_config(s)
    iteration = s.unpack("<I")
    momentum = s.unpack("<d")
    pair = EncoderPair(query=_read_encoder(s), key=_read_encoder(s), momentum=momentum)
    text = _read_encoder(s)
    alpha = s.unpack("<d")
    clusters = ClusterState(s.array(), alpha)
    capacity, dim = s.unpack("<II")
    queue = KeyQueue(capacity, dim, s.array())
    opt_visual = _read_moments(s)
    opt_text = _read_moments(s)
    opt_centers = _read_moments(s)
    if not s.done():
        raise ChecksumMismatch(f"{path}: trailing bytes in payload")
    return TrainState(
        config=config, pair=pair, text=text, clusters=clusters, queue=queue,
        opt_visual=opt_visual, opt_text=opt_text, opt_centers=opt_centers,
        iteration=iteration,
    )
