import json

import numpy as np
import pytest
from PIL import Image

from aspectfsl.dataset import DatasetManifest
from aspectfsl.sprites import SpriteMetadataError, ingest_sprites

SCHEMA = {
    "name": "sprites",
    "object_property": "body_type",
    "properties": [
        {"name": "body_type", "domain": ["human", "elf"]},
        {"name": "stance", "domain": ["walk", "spellcast"]},
        {"name": "shirt_color", "domain": ["teal", "maroon"]},
        {"name": "pants_color", "domain": ["white", "black"]},
        {"name": "hair_color", "domain": ["gold", "brown"]},
    ],
}


def write_frame(path, rgb, size=(64, 48)):
    Image.new("RGB", size, rgb).save(path)


def make_fixture(tmp_path, n_frames=4, schema=SCHEMA):
    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    entries = []
    combos = [
        {"body_type": "human", "stance": "walk", "shirt_color": "teal", "pants_color": "white", "hair_color": "gold"},
        {"body_type": "elf", "stance": "walk", "shirt_color": "teal", "pants_color": "white", "hair_color": "gold"},
        {"body_type": "human", "stance": "spellcast", "shirt_color": "maroon", "pants_color": "black", "hair_color": "brown"},
        {"body_type": "elf", "stance": "spellcast", "shirt_color": "maroon", "pants_color": "white", "hair_color": "brown"},
    ]
    for i in range(n_frames):
        name = f"frame_{i}.png"
        write_frame(frames_dir / name, (40 * i % 255, 80, 120))
        entries.append({"file": name, "properties": combos[i]})
    meta = tmp_path / "meta.json"
    meta.write_text(json.dumps({"schema": schema, "frames": entries}))
    return frames_dir, meta


def test_ingest_happy_path(tmp_path):
    frames_dir, meta = make_fixture(tmp_path)
    manifest = ingest_sprites(frames_dir, meta, tmp_path / "out")
    assert len(manifest) == 4
    manifest.validate_images(112)
    arr = manifest.load_image(manifest.sample_ids[0])
    assert arr.shape == (112, 112, 3)


def test_ingest_single_frame(tmp_path):
    frames_dir, meta = make_fixture(tmp_path, n_frames=1)
    manifest = ingest_sprites(frames_dir, meta, tmp_path / "out")
    assert len(manifest) == 1


def test_ingest_empty_warns(tmp_path, caplog):
    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    meta = tmp_path / "meta.json"
    meta.write_text(json.dumps({"schema": SCHEMA, "frames": []}))
    with caplog.at_level("WARNING"):
        manifest = ingest_sprites(frames_dir, meta, tmp_path / "out")
    assert len(manifest) == 0
    assert any("empty manifest" in r.message for r in caplog.records)


def test_ingest_missing_frame_file(tmp_path):
    frames_dir, meta = make_fixture(tmp_path)
    entries = json.loads(meta.read_text())
    entries["frames"].append({"file": "ghost.png", "properties": entries["frames"][0]["properties"]})
    meta.write_text(json.dumps(entries))
    with pytest.raises(SpriteMetadataError, match="ghost.png"):
        ingest_sprites(frames_dir, meta, tmp_path / "out")


def test_ingest_incomplete_vector(tmp_path):
    frames_dir, meta = make_fixture(tmp_path)
    data = json.loads(meta.read_text())
    del data["frames"][2]["properties"]["hair_color"]
    meta.write_text(json.dumps(data))
    with pytest.raises(SpriteMetadataError, match="frame_2"):
        ingest_sprites(frames_dir, meta, tmp_path / "out")


def test_ingest_out_of_domain_value(tmp_path):
    frames_dir, meta = make_fixture(tmp_path)
    data = json.loads(meta.read_text())
    data["frames"][1]["properties"]["shirt_color"] = "chartreuse"
    meta.write_text(json.dumps(data))
    with pytest.raises(SpriteMetadataError, match="chartreuse"):
        ingest_sprites(frames_dir, meta, tmp_path / "out")


def test_ingest_duplicate_vector(tmp_path):
    frames_dir, meta = make_fixture(tmp_path)
    data = json.loads(meta.read_text())
    data["frames"][3]["properties"] = dict(data["frames"][0]["properties"])
    meta.write_text(json.dumps(data))
    with pytest.raises(SpriteMetadataError, match="duplicate property vector"):
        ingest_sprites(frames_dir, meta, tmp_path / "out")


def test_schema_inference_from_bare_list(tmp_path):
    frames_dir, meta = make_fixture(tmp_path)
    data = json.loads(meta.read_text())
    meta.write_text(json.dumps(data["frames"]))  # bare list form
    manifest = ingest_sprites(frames_dir, meta, tmp_path / "out")
    assert manifest.schema.object_property == "body_type"
    assert set(manifest.schema.property_names) == {
        "body_type", "stance", "shirt_color", "pants_color", "hair_color",
    }


def test_manifest_contract_matches_shapes(tmp_path):
    # downstream modules must not distinguish sprite manifests from shape ones
    frames_dir, meta = make_fixture(tmp_path)
    ingest_sprites(frames_dir, meta, tmp_path / "out")
    reloaded = DatasetManifest.load(tmp_path / "out")
    assert len(reloaded) == 4
    reloaded.validate_images(112)
    arr = reloaded.load_image(reloaded.sample_ids[2])
    assert arr.dtype == np.float32 and 0.0 <= arr.min() and arr.max() <= 1.0
