import itertools

import numpy as np
import pytest

from aspectfsl.dataset import DatasetManifest, ManifestError
from aspectfsl.properties import PropertySchema
from aspectfsl.shapegen import (
    BACKGROUND_RGB,
    ShapeRenderSpec,
    build_dataset,
    render_shape,
    shapes_schema,
)


def foreground_mask(img):
    return np.any(img != np.array(BACKGROUND_RGB, dtype=np.uint8), axis=-1)


def test_render_deterministic():
    spec = ShapeRenderSpec("pentagon", "blue", "medium", "stripes")
    a, b = render_shape(spec), render_shape(spec)
    assert a.dtype == np.uint8 and a.shape == (112, 112, 3)
    assert np.array_equal(a, b)


def test_render_rejects_unknown_values():
    with pytest.raises(ValueError):
        render_shape(ShapeRenderSpec("heptagon", "blue", "medium", "stripes"))
    with pytest.raises(ValueError):
        render_shape(ShapeRenderSpec("square", "magenta", "medium", "stripes"))


def test_color_change_touches_only_foreground():
    base = render_shape(ShapeRenderSpec("square", "red", "medium", "dots"))
    other = render_shape(ShapeRenderSpec("square", "green", "medium", "dots"))
    fg = foreground_mask(base)
    assert np.array_equal(foreground_mask(other), fg)
    # background pixels identical, at least one foreground pixel differs
    assert np.array_equal(base[~fg], other[~fg])
    assert not np.array_equal(base[fg], other[fg])


def test_thickness_strictly_grows_foreground():
    counts = []
    for thickness in ("thin", "medium", "thick"):
        img = render_shape(ShapeRenderSpec("triangle", "red", thickness, "dots"))
        counts.append(int(foreground_mask(img).sum()))
    assert counts[0] < counts[1] < counts[2]


def test_hole_present():
    img = render_shape(ShapeRenderSpec("hexagon", "purple", "thin", "solid"))
    # the center of the image sits inside the hole: background colored
    assert tuple(img[56, 56]) == BACKGROUND_RGB
    # annulus midway between hole and outer boundary is colored for solid fill
    assert tuple(img[56, 56 + 30]) != BACKGROUND_RGB


def test_images_injective_over_full_schema():
    schema = shapes_schema()
    rendered = {}
    for shape, color, thickness, pattern in itertools.product(
        *(schema.domain(n) for n in schema.property_names)
    ):
        img = render_shape(ShapeRenderSpec(shape, color, thickness, pattern))
        key = img.tobytes()
        assert key not in rendered, f"{(shape, color, thickness, pattern)} collides with {rendered[key]}"
        rendered[key] = (shape, color, thickness, pattern)


def test_hole_survives_thick_outline_on_every_shape():
    for shape in ("triangle", "square", "pentagon", "hexagon"):
        img = render_shape(ShapeRenderSpec(shape, "red", "thick", "solid"))
        assert tuple(img[56, 56]) == BACKGROUND_RGB, f"hole filled in for {shape}"


def test_build_dataset_full_product(tmp_path):
    manifest = build_dataset(shapes_schema(), tmp_path / "data")
    assert len(manifest) == 4 * 5 * 3 * 4
    manifest.validate_images(112)


def test_build_dataset_sampled_deterministic(tmp_path):
    m1 = build_dataset(shapes_schema(), tmp_path / "a", sample=50, seed=7)
    m2 = build_dataset(shapes_schema(), tmp_path / "b", sample=50, seed=7)
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (
        tmp_path / "b" / "manifest.json"
    ).read_bytes()
    assert m1.sample_ids == m2.sample_ids
    assert len(m1) == 50


def test_build_dataset_rejects_oversample(tmp_path):
    small = PropertySchema(
        name="geometric-shapes",
        properties=(
            ("shape", ("triangle", "square")),
            ("color", ("red", "blue")),
            ("thickness", ("thin", "thick")),
            ("pattern", ("solid", "stripes")),
        ),
        object_property="shape",
    )
    with pytest.raises(ValueError):
        build_dataset(small, tmp_path / "data", sample=17, seed=0)


def test_manifest_round_trip(tmp_path):
    small = PropertySchema(
        name="geometric-shapes",
        properties=(
            ("shape", ("triangle", "square")),
            ("color", ("red", "blue")),
            ("thickness", ("thin", "thick")),
            ("pattern", ("solid", "stripes")),
        ),
        object_property="shape",
    )
    manifest = build_dataset(small, tmp_path / "data", seed=3)
    reloaded = DatasetManifest.load(tmp_path / "data")
    assert reloaded.schema == manifest.schema
    assert reloaded.records == manifest.records
    assert reloaded.generator_config == manifest.generator_config
    assert reloaded.fingerprint() == manifest.fingerprint()


def test_manifest_rejects_duplicate_vectors(tmp_path):
    schema = shapes_schema()
    vec = {"shape": "triangle", "color": "red", "thickness": "thin", "pattern": "solid"}
    from aspectfsl.dataset import ManifestRecord

    records = [
        ManifestRecord("a", "images/a.png", schema.vector(vec)),
        ManifestRecord("b", "images/b.png", schema.vector(vec)),
    ]
    with pytest.raises(ManifestError):
        DatasetManifest(schema=schema, records=records, generator_config={})


def test_loaded_images_unit_interval(tmp_path):
    small = PropertySchema(
        name="geometric-shapes",
        properties=(
            ("shape", ("triangle", "square")),
            ("color", ("red", "blue")),
            ("thickness", ("thin", "thick")),
            ("pattern", ("solid", "dots")),
        ),
        object_property="shape",
    )
    manifest = build_dataset(small, tmp_path / "data")
    arr = manifest.load_image(manifest.sample_ids[0])
    assert arr.shape == (112, 112, 3)
    assert arr.dtype == np.float32
    assert 0.0 <= arr.min() and arr.max() <= 1.0
