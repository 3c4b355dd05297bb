"""Dataset manifests: the contract between data generation and everything else.

A manifest pairs a property schema with a list of (sample_id, image_path,
property vector) records. Both the procedural shape generator and the
sprite ingester emit this format, so episode sampling, training, and
evaluation never care where the pixels came from.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .properties import PropertySchema, PropertyVector, validate_vector

MANIFEST_FORMAT = "aspectfsl-manifest-v1"
MANIFEST_FILENAME = "manifest.json"


def canonical_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, fixed separators)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Short stable hash of a JSON-serializable config."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:12]


class ManifestError(ValueError):
    """Malformed manifest contents."""


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    image_path: str  # relative to the manifest's directory
    properties: PropertyVector


@dataclass
class DatasetManifest:
    schema: PropertySchema
    records: list[ManifestRecord]
    generator_config: dict
    root: Path | None = None  # directory image_path entries are relative to
    _by_id: dict = field(default_factory=dict, repr=False)
    _by_key: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        seen_ids = set()
        for rec in self.records:
            if rec.sample_id in seen_ids:
                raise ManifestError(f"duplicate sample_id {rec.sample_id!r}")
            seen_ids.add(rec.sample_id)
            validate_vector(self.schema, rec.properties)
            key = rec.properties.key()
            if key in self._by_key:
                raise ManifestError(
                    f"records {self._by_key[key]!r} and {rec.sample_id!r} share a "
                    "property vector"
                )
            self._by_id[rec.sample_id] = rec
            self._by_key[key] = rec.sample_id

    def __len__(self) -> int:
        return len(self.records)

    @property
    def sample_ids(self) -> list[str]:
        return [r.sample_id for r in self.records]

    def record(self, sample_id: str) -> ManifestRecord:
        return self._by_id[sample_id]

    def find_by_properties(self, vector: PropertyVector) -> str | None:
        """sample_id of the record with this exact property vector, if any."""
        return self._by_key.get(vector.key())

    def image_file(self, sample_id: str) -> Path:
        if self.root is None:
            raise ManifestError("manifest has no root directory; save or load it first")
        return self.root / self._by_id[sample_id].image_path

    def load_image(self, sample_id: str) -> np.ndarray:
        """Image as float32 HxWx3 in [0, 1]."""
        with Image.open(self.image_file(sample_id)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return arr

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "schema": self.schema.to_dict(),
            "generator_config": self.generator_config,
            "records": [
                {
                    "sample_id": r.sample_id,
                    "image_path": r.image_path,
                    "properties": r.properties.to_dict(),
                }
                for r in self.records
            ],
        }

    def fingerprint(self) -> str:
        """Content hash identifying the dataset (paths relative, so portable)."""
        return config_hash(self.to_dict())

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / MANIFEST_FILENAME
        path.write_text(canonical_json(self.to_dict()) + "\n")
        self.root = directory
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_FILENAME
        data = json.loads(path.read_text())
        if data.get("format") != MANIFEST_FORMAT:
            raise ManifestError(f"unexpected manifest format {data.get('format')!r}")
        schema = PropertySchema.from_dict(data["schema"])
        records = [
            ManifestRecord(
                sample_id=r["sample_id"],
                image_path=r["image_path"],
                properties=PropertyVector(schema_ref=schema.name, values=r["properties"]),
            )
            for r in data["records"]
        ]
        return cls(
            schema=schema,
            records=records,
            generator_config=data["generator_config"],
            root=path.parent,
        )

    def validate_images(self, expected_size: int = 112) -> None:
        """Check that every image exists and decodes to the expected shape."""
        for rec in self.records:
            f = self.image_file(rec.sample_id)
            if not f.exists():
                raise ManifestError(f"missing image file {f}")
            with Image.open(f) as im:
                w, h = im.size
                if (w, h) != (expected_size, expected_size):
                    raise ManifestError(
                        f"{f} is {w}x{h}, expected {expected_size}x{expected_size}"
                    )
