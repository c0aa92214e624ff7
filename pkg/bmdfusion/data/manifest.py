"""dataset records and their on-disk directory layout.

A dataset directory holds:
    schema.json     field names, types, units and categorical levels
    metadata.csv    one row per sample: id, every schema field, bmd
    images/<id>.pgm 16-bit binary grayscale
    generator.json  seed and generator parameters (synthetic sets only)
    latents.csv     generator internals per sample (synthetic sets only)
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence

import numpy as np
import pandas as pd

from bmdfusion.config import (
    BIN_EDGES,
    BMD_GUARD,
    CATEGORICAL_LEVELS,
    FIELD_UNITS,
    NUMERICAL_FIELDS,
    default_field_spec,
)
from bmdfusion.data.folds import bin_index
from bmdfusion.errors import DataError, SchemaError

logger = logging.getLogger(__name__)

PGM_MAXVAL = 65535
FLOAT_FORMAT = "%.10g"


@dataclass
class SampleRecord:
    id: str
    image: np.ndarray  # [H, W] in [0, 1]
    metadata: Dict[str, Any]
    bmd: float

    def __post_init__(self):
        lo, hi = BMD_GUARD
        if not lo < self.bmd < hi:
            raise DataError(f"sample {self.id}: bmd {self.bmd} outside guard range {BMD_GUARD}")
        if self.image.ndim != 2:
            raise DataError(f"sample {self.id}: image must be 2-d, got shape {self.image.shape}")


def default_schema() -> Dict[str, Any]:
    fields = [
        {"name": name, "type": "numerical", "unit": FIELD_UNITS[name]} for name in NUMERICAL_FIELDS
    ]
    fields += [
        {"name": name, "type": "categorical", "unit": FIELD_UNITS[name], "levels": list(levels)}
        for name, levels in CATEGORICAL_LEVELS.items()
    ]
    return {"fields": fields, "target": "bmd", "target_unit": "g/cm^2"}


def schema_field_spec(schema: Dict[str, Any]):
    """(name, width) pairs the metadata encoder expects, in schema order"""
    spec = []
    for f in schema["fields"]:
        spec.append((f["name"], len(f["levels"]) if f["type"] == "categorical" else 1))
    return tuple(spec)


def validate_schema(schema: Dict[str, Any]) -> None:
    """categorical levels are fixed; field order must match the encoder layout"""
    try:
        names = [f["name"] for f in schema["fields"]]
        levels = {f["name"]: tuple(f["levels"]) for f in schema["fields"] if f["type"] == "categorical"}
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema: {exc}") from exc
    if levels != CATEGORICAL_LEVELS:
        raise SchemaError(f"categorical levels {levels} differ from {CATEGORICAL_LEVELS}")
    expected = [name for name, _ in default_field_spec()]
    if names != expected:
        raise SchemaError(f"schema fields {names} differ from expected {expected}")


@dataclass
class DatasetManifest:
    schema: Dict[str, Any]
    samples: List[SampleRecord]
    generator: Dict[str, Any] = field(default_factory=dict)
    latents: Optional[pd.DataFrame] = None

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate sample ids in manifest")
        self._index = {s.id: i for i, s in enumerate(self.samples)}

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.samples]

    @property
    def bmd(self) -> np.ndarray:
        return np.array([s.bmd for s in self.samples], dtype=np.float64)

    @property
    def field_spec(self):
        return schema_field_spec(self.schema)

    def get(self, sample_id: str) -> SampleRecord:
        try:
            return self.samples[self._index[sample_id]]
        except KeyError:
            raise DataError(f"unknown sample id {sample_id!r}") from None

    def subset(self, ids: Sequence[str]) -> List[SampleRecord]:
        return [self.get(i) for i in ids]

    def metadata_frame(self) -> pd.DataFrame:
        rows = [{"id": s.id, **s.metadata, "bmd": s.bmd} for s in self.samples]
        columns = ["id"] + [f["name"] for f in self.schema["fields"]] + ["bmd"]
        return pd.DataFrame(rows, columns=columns)


def summarize_manifest(manifest: DatasetManifest, edges=BIN_EDGES) -> Dict[str, Any]:
    """mean/std bmd and per-bin counts"""
    bmd = manifest.bmd
    counts = np.bincount(bin_index(bmd, edges), minlength=len(edges) - 1)
    labels = [f"{edges[i]:.1f}-{edges[i + 1]:.1f}" for i in range(len(edges) - 1)]
    return {
        "n": len(manifest),
        "bmd_mean": float(bmd.mean()) if bmd.size else float("nan"),
        "bmd_std": float(bmd.std(ddof=1)) if bmd.size > 1 else float("nan"),
        "bmd_min": float(bmd.min()) if bmd.size else float("nan"),
        "bmd_max": float(bmd.max()) if bmd.size else float("nan"),
        "bins": dict(zip(labels, (int(c) for c in counts))),
    }


# image files

def quantize(image: np.ndarray) -> np.ndarray:
    """snaps [0, 1] intensities onto the 16-bit grid"""
    return np.round(np.clip(image, 0.0, 1.0) * PGM_MAXVAL) / PGM_MAXVAL


def write_pgm(path: Path, image: np.ndarray) -> None:
    h, w = image.shape
    raw = np.round(np.clip(image, 0.0, 1.0) * PGM_MAXVAL).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        f.write(raw.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    try:
        return _decode_pgm(data)
    except (ValueError, IndexError) as e:
        raise DataError(f"{path}: malformed pgm ({e})") from e


def _decode_pgm(data: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError("not a binary pgm")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    pixels = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    return pixels.reshape(h, w).astype(np.float64) / maxval


# directory layout

def _dump_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def save_manifest(manifest: DatasetManifest, path) -> Path:
    """writes the dataset directory; raises OSError naming the path if unwritable"""
    root = Path(path)
    images = root / "images"
    images.mkdir(parents=True, exist_ok=True)
    _dump_json(root / "schema.json", manifest.schema)
    manifest.metadata_frame().to_csv(root / "metadata.csv", index=False, float_format=FLOAT_FORMAT)
    for s in manifest.samples:
        write_pgm(images / f"{s.id}.pgm", s.image)
    if manifest.generator:
        _dump_json(root / "generator.json", manifest.generator)
    if manifest.latents is not None:
        manifest.latents.to_csv(root / "latents.csv", index=False, float_format=FLOAT_FORMAT)
    logger.info("wrote %d samples to %s", len(manifest), root)
    return root


class DatasetLoader(Protocol):
    def load(self, path) -> DatasetManifest:
        ...


class DirectoryLoader:
    """reads the layout written by save_manifest"""

    def load(self, path) -> DatasetManifest:
        root = Path(path)
        if not (root / "metadata.csv").is_file() or not (root / "schema.json").is_file():
            raise DataError(f"{root}: not a dataset directory (schema.json / metadata.csv missing)")
        with open(root / "schema.json", "r", encoding="utf-8") as f:
            schema = json.load(f)
        validate_schema(schema)
        frame = pd.read_csv(root / "metadata.csv", dtype={"id": str})
        names = [f["name"] for f in schema["fields"]]
        missing = sorted(set(names + ["id", "bmd"]) - set(frame.columns))
        if missing:
            raise SchemaError(f"{root / 'metadata.csv'}: missing columns {missing}")
        samples = []
        for row in frame.itertuples(index=False):
            row = row._asdict()
            image_path = root / "images" / f"{row['id']}.pgm"
            if not image_path.is_file():
                raise DataError(f"missing image {image_path}")
            meta = {}
            for f in schema["fields"]:
                value = row[f["name"]]
                meta[f["name"]] = str(value) if f["type"] == "categorical" else float(value)
            samples.append(SampleRecord(row["id"], read_pgm(image_path), meta, float(row["bmd"])))
        generator = {}
        if (root / "generator.json").is_file():
            with open(root / "generator.json", "r", encoding="utf-8") as f:
                generator = json.load(f)
        latents = pd.read_csv(root / "latents.csv", dtype={"id": str}) if (root / "latents.csv").is_file() else None
        logger.info("loaded %d samples from %s", len(samples), root)
        return DatasetManifest(schema, samples, generator, latents)


def load_manifest(path, loader: Optional[DatasetLoader] = None) -> DatasetManifest:
    return (loader or DirectoryLoader()).load(path)
