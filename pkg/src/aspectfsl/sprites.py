"""Ingest pre-rendered sprite frames into the standard dataset manifest.

Frames are ingested, never drawn: a sidecar metadata file maps every
frame file to a complete property vector (body type as the object
property plus stance and clothing colors). Frames are padded to square
and resized to the working resolution so downstream modules see exactly
the same contract as the procedural shapes data.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from PIL import Image

from .dataset import DatasetManifest, ManifestRecord
from .properties import PropertySchema, SchemaError

logger = logging.getLogger(__name__)

PAD_RGB = (235, 235, 235)
DEFAULT_OBJECT_PROPERTY = "body_type"


class SpriteMetadataError(ValueError):
    """Problems in the sprite metadata sidecar; message lists offenders."""


def _load_metadata(metadata_path: Path) -> tuple[dict | None, list[dict]]:
    data = json.loads(metadata_path.read_text())
    if isinstance(data, list):
        return None, data
    if isinstance(data, dict):
        return data.get("schema"), data.get("frames", [])
    raise SpriteMetadataError(f"unsupported metadata layout in {metadata_path}")


def _infer_schema(frames: list[dict], object_property: str) -> PropertySchema:
    """Derive a schema from observed values when none is given explicitly."""
    if not frames:
        raise SpriteMetadataError(
            "cannot infer a schema from empty metadata; embed a schema object"
        )
    names = list(frames[0].get("properties", {}))
    observed: dict[str, set] = {n: set() for n in names}
    for f in frames:
        for n in names:
            if n in f.get("properties", {}):
                observed[n].add(f["properties"][n])
    if object_property not in names:
        raise SpriteMetadataError(
            f"metadata has no {object_property!r} property to serve as the object type; "
            "embed a schema with an explicit object_property"
        )
    thin = [n for n, vals in observed.items() if len(vals) < 2]
    if thin:
        raise SpriteMetadataError(
            f"cannot infer domains: properties {thin} show fewer than 2 values"
        )
    return PropertySchema(
        name="sprites",
        properties=tuple((n, tuple(sorted(observed[n]))) for n in names),
        object_property=object_property,
    )


def _process_frame(src: Path, dst: Path, size: int) -> None:
    """Pad to square with the background color, then nearest-resize."""
    with Image.open(src) as im:
        im = im.convert("RGBA")
        side = max(im.size)
        canvas = Image.new("RGBA", (side, side), PAD_RGB + (255,))
        canvas.paste(im, ((side - im.width) // 2, (side - im.height) // 2), im)
        out = canvas.convert("RGB").resize((size, size), Image.Resampling.NEAREST)
        out.save(dst)


def ingest_sprites(
    frames_dir: str | Path,
    metadata_path: str | Path,
    out_dir: str | Path,
    image_size: int = 112,
    object_property: str = DEFAULT_OBJECT_PROPERTY,
) -> DatasetManifest:
    """Validate sprite frames against their metadata and emit a manifest.

    Every metadata record must name an existing frame file and assign a
    complete, in-domain property vector; violations are collected and
    reported together. Duplicate property vectors across frames are an
    error. An empty frame list yields an empty manifest with a warning
    (the metadata must then embed its schema).
    """
    frames_dir, out_dir = Path(frames_dir), Path(out_dir)
    schema_dict, frames = _load_metadata(Path(metadata_path))
    if schema_dict is not None:
        schema = PropertySchema.from_dict(schema_dict)
    else:
        schema = _infer_schema(frames, object_property)

    if not frames:
        logger.warning("sprite metadata lists no frames; emitting an empty manifest")

    problems: list[str] = []
    records: list[ManifestRecord] = []
    seen_keys: dict[tuple, str] = {}
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    for i, entry in enumerate(frames):
        fname = entry.get("file")
        if not fname:
            problems.append(f"record {i}: missing 'file'")
            continue
        src = frames_dir / fname
        if not src.exists():
            problems.append(f"record {i} ({fname}): frame file not found")
            continue
        try:
            vector = schema.vector(entry.get("properties", {}))
        except SchemaError as e:
            problems.append(f"record {i} ({fname}): {e}")
            continue
        key = vector.key()
        if key in seen_keys:
            problems.append(
                f"record {i} ({fname}): duplicate property vector, first seen in "
                f"{seen_keys[key]}"
            )
            continue
        seen_keys[key] = fname
        sample_id = Path(fname).stem
        rel_path = f"images/{sample_id}.png"
        _process_frame(src, out_dir / rel_path, image_size)
        records.append(ManifestRecord(sample_id, rel_path, vector))

    if problems:
        raise SpriteMetadataError(
            "sprite ingestion failed for "
            f"{len(problems)} record(s):\n  " + "\n  ".join(problems)
        )

    manifest = DatasetManifest(
        schema=schema,
        records=records,
        generator_config={
            "generator": "sprites",
            "image_size": image_size,
            "frames_dir": str(frames_dir),
            "metadata": str(metadata_path),
        },
    )
    manifest.save(out_dir)
    return manifest
