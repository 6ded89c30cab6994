"""Dataset model, disk formats, and the synthetic paired-modality generator.

Records are stored one JSON object per line with the fields
{id, identity, camera, modality, vector}; a packed little-endian binary
format (magic "VTRD") is available for large vectors. A visual record and a
text record describing the same underlying sample share an id stem and
differ only in a trailing "_v" / "_t" marker.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rng_mod
from .errors import (
    BadSpec,
    DimInconsistent,
    DuplicateId,
    EmptyDataset,
    IoError,
    ParseError,
)

MODALITIES = ("visual", "text")

DATASET_MAGIC = b"VTRD"
DATASET_VERSION = 1


@dataclass(frozen=True)
class FeatureRecord:
    """One sample in one modality: labels plus its raw feature vector."""

    id: str
    identity: int
    camera: str
    modality: str
    vector: np.ndarray


@dataclass(frozen=True)
class Splits:
    """Item stems assigned to the train / query / gallery roles."""

    train: frozenset
    query: frozenset
    gallery: frozenset

    @staticmethod
    def empty() -> "Splits":
        return Splits(frozenset(), frozenset(), frozenset())


@dataclass(frozen=True)
class PairedItem:
    """Both modality vectors of one underlying sample."""

    stem: str
    identity: int
    camera: str
    visual: np.ndarray
    text: np.ndarray


@dataclass(frozen=True)
class FeatureDataset:
    records: tuple[FeatureRecord, ...]
    identity_count: int
    splits: Splits

    def modality_dim(self, modality: str) -> int:
        for record in self.records:
            if record.modality == modality:
                return record.vector.shape[0]
        raise EmptyDataset(f"dataset has no {modality} records")

    def items(self) -> list[PairedItem]:
        """Paired items (both modalities present), sorted by stem."""
        grouped: dict[str, dict[str, FeatureRecord]] = {}
        for record in self.records:
            grouped.setdefault(record_stem(record.id), {})[record.modality] = record
        items = []
        for stem in sorted(grouped):
            pair = grouped[stem]
            if "visual" in pair and "text" in pair:
                ref = pair["visual"]
                items.append(
                    PairedItem(stem, ref.identity, ref.camera, ref.vector, pair["text"].vector)
                )
        return items

    def items_for(self, stems) -> list[PairedItem]:
        wanted = set(stems)
        return [item for item in self.items() if item.stem in wanted]


def record_stem(record_id: str) -> str:
    """Strip the modality marker so paired records share a key."""
    if record_id.endswith(("_v", "_t")):
        return record_id[:-2]
    return record_id


def _validate_records(records, where=None):
    """Shared invariant checks; `where` maps record index to a line number."""

    def location(index: int) -> str:
        return f"line {where[index]}" if where else f"record {index + 1}"

    seen_ids: set[str] = set()
    seen_pairs: set[tuple[str, str]] = set()
    dims: dict[str, tuple[int, int]] = {}
    max_identity = 0
    for index, record in enumerate(records):
        if record.id in seen_ids:
            raise DuplicateId(f"{location(index)}: duplicate id {record.id!r}")
        seen_ids.add(record.id)
        pair_key = (record_stem(record.id), record.modality)
        if pair_key in seen_pairs:
            raise DuplicateId(
                f"{location(index)}: second {record.modality} record for stem {pair_key[0]!r}"
            )
        seen_pairs.add(pair_key)
        if record.modality not in MODALITIES:
            raise ParseError(f"{location(index)}: unknown modality {record.modality!r}")
        if record.identity < 1:
            raise ParseError(f"{location(index)}: identity must be >= 1")
        if not np.all(np.isfinite(record.vector)):
            raise ParseError(f"{location(index)}: vector has NaN/Inf entries")
        dim = record.vector.shape[0]
        if record.modality in dims:
            expected, first_index = dims[record.modality]
            if dim != expected:
                raise DimInconsistent(
                    f"{location(index)}: {record.modality} vector has {dim} entries, "
                    f"but {location(first_index)} had {expected}"
                )
        else:
            dims[record.modality] = (dim, index)
        max_identity = max(max_identity, record.identity)
    return max_identity


def build_dataset(records, identity_count: int | None = None) -> FeatureDataset:
    """Validate records and assemble a dataset with empty splits."""
    records = tuple(records)
    if not records:
        raise EmptyDataset("no records")
    max_identity = _validate_records(records)
    if identity_count is None:
        identity_count = max_identity
    if max_identity > identity_count:
        raise ParseError(
            f"identity {max_identity} exceeds declared identity count {identity_count}"
        )
    return FeatureDataset(records, identity_count, Splits.empty())


# ---------------------------------------------------------------------------
# JSON-lines format

def _reject_constant(token: str):
    raise ValueError(f"non-finite literal {token!r}")


def _parse_json_record(line: str, line_no: int) -> FeatureRecord:
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except ValueError as exc:
        raise ParseError(f"line {line_no}: {exc}") from None
    if not isinstance(obj, dict):
        raise ParseError(f"line {line_no}: expected a JSON object")
    missing = {"id", "identity", "camera", "modality", "vector"} - obj.keys()
    if missing:
        raise ParseError(f"line {line_no}: missing fields {sorted(missing)}")
    rid = obj["id"]
    identity = obj["identity"]
    camera = obj["camera"]
    modality = obj["modality"]
    vector = obj["vector"]
    if not isinstance(rid, str) or not rid:
        raise ParseError(f"line {line_no}: id must be a non-empty string")
    if isinstance(identity, bool) or not isinstance(identity, int):
        raise ParseError(f"line {line_no}: identity must be an integer")
    if not isinstance(camera, (str, int)) or isinstance(camera, bool):
        raise ParseError(f"line {line_no}: camera must be a string or integer")
    if not isinstance(modality, str):
        raise ParseError(f"line {line_no}: modality must be a string")
    if (
        not isinstance(vector, list)
        or not vector
        or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in vector)
    ):
        raise ParseError(f"line {line_no}: vector must be a non-empty list of numbers")
    if not all(math.isfinite(x) for x in vector):
        raise ParseError(f"line {line_no}: vector has NaN/Inf entries")
    return FeatureRecord(
        rid, identity, str(camera), modality, np.asarray(vector, dtype=np.float64)
    )


def _load_jsonl(path) -> FeatureDataset:
    records = []
    lines = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            records.append(_parse_json_record(line, line_no))
            lines.append(line_no)
    if not records:
        raise EmptyDataset(f"{path}: no records")
    where = dict(enumerate(lines))
    max_identity = _validate_records(records, where)
    return FeatureDataset(tuple(records), max_identity, Splits.empty())


def _dump_jsonl(dataset: FeatureDataset) -> str:
    out = []
    for record in dataset.records:
        obj = {
            "id": record.id,
            "identity": record.identity,
            "camera": record.camera,
            "modality": record.modality,
            "vector": [float(x) for x in record.vector],
        }
        out.append(json.dumps(obj, separators=(",", ":")))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# packed binary format

def _dump_binary(dataset: FeatureDataset) -> bytes:
    parts = [DATASET_MAGIC, struct.pack("<HI", DATASET_VERSION, len(dataset.records))]
    for record in dataset.records:
        rid = record.id.encode("utf-8")
        cam = record.camera.encode("utf-8")
        parts.append(struct.pack("<H", len(rid)))
        parts.append(rid)
        parts.append(struct.pack("<I", record.identity))
        parts.append(struct.pack("<H", len(cam)))
        parts.append(cam)
        parts.append(struct.pack("<BI", MODALITIES.index(record.modality), record.vector.shape[0]))
        parts.append(record.vector.astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.pos = 0
        self.label = label

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise ParseError(f"{self.label}: truncated record data")
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _load_binary(path, blob: bytes) -> FeatureDataset:
    reader = _Reader(blob, str(path))
    if reader.take(4) != DATASET_MAGIC:
        raise ParseError(f"{path}: not a packed dataset file")
    (version, count) = reader.unpack("<HI")
    if version != DATASET_VERSION:
        raise ParseError(f"{path}: unsupported dataset version {version}")
    records = []
    for _ in range(count):
        (id_len,) = reader.unpack("<H")
        rid = reader.take(id_len).decode("utf-8")
        (identity,) = reader.unpack("<I")
        (cam_len,) = reader.unpack("<H")
        camera = reader.take(cam_len).decode("utf-8")
        modality_code, dim = reader.unpack("<BI")
        if modality_code >= len(MODALITIES):
            raise ParseError(f"{path}: bad modality code {modality_code}")
        vector = np.frombuffer(reader.take(8 * dim), dtype="<f8").astype(np.float64)
        records.append(FeatureRecord(rid, identity, camera, MODALITIES[modality_code], vector))
    if reader.pos != len(blob):
        raise ParseError(f"{path}: trailing bytes after the last record")
    if not records:
        raise EmptyDataset(f"{path}: no records")
    max_identity = _validate_records(records)
    return FeatureDataset(tuple(records), max_identity, Splits.empty())


# ---------------------------------------------------------------------------
# public I/O entry points

def load_dataset(path) -> FeatureDataset:
    """Load a dataset, sniffing the packed binary magic vs JSON lines."""
    try:
        with open(path, "rb") as handle:
            head = handle.read(4)
            rest = handle.read() if head == DATASET_MAGIC else None
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    if head == DATASET_MAGIC:
        return _load_binary(path, head + rest)
    return _load_jsonl(path)


def save_dataset(dataset: FeatureDataset, path, binary: bool | None = None) -> None:
    """Write a dataset; format chosen by flag or a .vtrd/.bin extension."""
    if binary is None:
        binary = str(path).endswith((".vtrd", ".bin"))
    payload = _dump_binary(dataset) if binary else _dump_jsonl(dataset).encode("utf-8")
    _atomic_write(path, payload)


def _atomic_write(path, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


# ---------------------------------------------------------------------------
# splits

def assign_splits(dataset: FeatureDataset, seed: int,
                  train_fraction: float = 0.6,
                  query_fraction: float = 0.3) -> FeatureDataset:
    """Identity-disjoint train/eval split with per-identity query picks.

    Identities are shuffled on a named stream, so the same (dataset, seed)
    always yields the same splits. Each eval identity contributes at least
    one query and one gallery item.
    """
    items = dataset.items()
    if not items:
        raise EmptyDataset("dataset has no paired items to split")
    by_identity: dict[int, list[str]] = {}
    for item in items:
        by_identity.setdefault(item.identity, []).append(item.stem)
    identities = sorted(by_identity)
    if len(identities) < 2:
        raise BadSpec("need at least two identities to form disjoint splits")

    order = rng_mod.stream(seed, "split-identities").permutation(len(identities))
    n_train = min(max(int(round(train_fraction * len(identities))), 1), len(identities) - 1)
    train_ids = {identities[i] for i in order[:n_train]}

    train, query, gallery = set(), set(), set()
    for identity in identities:
        stems = sorted(by_identity[identity])
        if identity in train_ids:
            train.update(stems)
            continue
        if len(stems) < 2:
            raise BadSpec(f"identity {identity} has a single item; cannot split query/gallery")
        perm = rng_mod.stream(seed, "split-items", identity).permutation(len(stems))
        n_query = min(max(int(round(query_fraction * len(stems))), 1), len(stems) - 1)
        for j, idx in enumerate(perm):
            (query if j < n_query else gallery).add(stems[idx])
    return replace(
        dataset,
        splits=Splits(frozenset(train), frozenset(query), frozenset(gallery)),
    )


# ---------------------------------------------------------------------------
# synthetic generator

@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic paired-modality dataset."""

    identities: int
    samples_per_identity: int
    visual_dim: int = 32
    text_dim: int = 24
    cluster_spread: float = 1.0
    noise: float = 0.25
    cameras: int = 2
    seed: int = 0
    modality_corr: float = 0.7

    def __post_init__(self) -> None:
        if self.identities < 2:
            raise BadSpec("need at least two identities")
        if self.samples_per_identity < 2:
            raise BadSpec("need at least two samples per identity")
        if self.visual_dim < 1 or self.text_dim < 1:
            raise BadSpec("vector dimensions must be positive")
        if self.cluster_spread < 0 or self.noise < 0:
            raise BadSpec("spread and noise must be non-negative")
        if self.cameras < 1:
            raise BadSpec("need at least one camera")
        if self.seed < 0:
            raise BadSpec("seed must be non-negative")
        if not 0.0 <= self.modality_corr <= 1.0:
            raise BadSpec("modality correlation must lie in [0, 1]")


def synth_generate(spec: SynthSpec) -> FeatureDataset:
    """Draw per-identity prototypes and noisy paired samples around them.

    Both modalities of one identity render a shared latent, mixed with a
    modality-private component so the two views correlate without being
    copies; per-sample noise is isotropic. Cameras rotate round-robin over
    the samples of each identity.
    """
    proto_rng = rng_mod.stream(spec.seed, "prototypes")
    sample_rng = rng_mod.stream(spec.seed, "samples")
    latent_dim = max(spec.visual_dim, spec.text_dim)
    mix = spec.modality_corr
    private = math.sqrt(1.0 - mix * mix)
    records = []
    for identity in range(1, spec.identities + 1):
        latent = proto_rng.normal(size=latent_dim)
        visual_proto = spec.cluster_spread * latent[: spec.visual_dim]
        text_proto = spec.cluster_spread * (
            mix * latent[: spec.text_dim]
            + private * proto_rng.normal(size=spec.text_dim)
        )
        for sample in range(spec.samples_per_identity):
            stem = f"id{identity:04d}s{sample:03d}"
            camera = f"c{sample % spec.cameras}"
            visual = visual_proto + spec.noise * sample_rng.normal(size=spec.visual_dim)
            text = text_proto + spec.noise * sample_rng.normal(size=spec.text_dim)
            records.append(FeatureRecord(f"{stem}_v", identity, camera, "visual", visual))
            records.append(FeatureRecord(f"{stem}_t", identity, camera, "text", text))
    dataset = FeatureDataset(tuple(records), spec.identities, Splits.empty())
    return assign_splits(dataset, spec.seed)
