"""Procedural renderer for the geometric shapes dataset.

Each 112x112 image shows a regular polygon with a concentric polygonal
hole. Four properties control the pixels: the polygon family (the object
type), outline color, outline thickness, and the fill pattern of the
annulus between outline and hole. Rendering is pure numpy over signed
distance fields, so identical specs produce bit-identical images and
every property change is guaranteed to move at least one pixel.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import DatasetManifest, ManifestRecord
from .properties import PropertySchema

IMAGE_SIZE = 112
BACKGROUND_RGB = (235, 235, 235)

POLYGON_SIDES = {"triangle": 3, "square": 4, "pentagon": 5, "hexagon": 6}
COLOR_RGB = {
    "red": (200, 40, 40),
    "green": (40, 160, 60),
    "blue": (45, 90, 200),
    "yellow": (230, 200, 40),
    "purple": (150, 60, 180),
}
THICKNESS_PX = {"thin": 3, "medium": 7, "thick": 12}
PATTERNS = ("solid", "stripes", "dots", "checker")

# fraction of the image occupied by the outer polygon / the hole; sized so a
# thick outline still leaves a visible pattern ring and hole on triangles
OUTER_RADIUS_FRAC = 0.41
HOLE_RADIUS_FRAC = 0.38  # relative to the outer radius


def shapes_schema() -> PropertySchema:
    """Default geometric-shapes schema covering the full renderer inventory."""
    return PropertySchema(
        name="geometric-shapes",
        properties=(
            ("shape", tuple(POLYGON_SIDES)),
            ("color", tuple(COLOR_RGB)),
            ("thickness", tuple(THICKNESS_PX)),
            ("pattern", PATTERNS),
        ),
        object_property="shape",
    )


@dataclass(frozen=True)
class ShapeRenderSpec:
    shape: str
    color: str
    thickness: str
    pattern: str
    image_size: int = IMAGE_SIZE
    seed: int = 0

    def validate(self) -> None:
        for value, inventory, what in (
            (self.shape, POLYGON_SIDES, "shape"),
            (self.color, COLOR_RGB, "color"),
            (self.thickness, THICKNESS_PX, "thickness"),
            (self.pattern, PATTERNS, "pattern"),
        ):
            if value not in inventory:
                raise ValueError(f"unknown {what} value {value!r}")


def _polygon_signed_distance(size: int, sides: int, radius: float) -> np.ndarray:
    """Exact Euclidean signed distance to a regular polygon; negative inside."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    c = size / 2.0
    angles = -np.pi / 2 + 2 * np.pi * np.arange(sides) / sides
    verts = np.stack([c + radius * np.cos(angles), c + radius * np.sin(angles)], axis=1)

    dist = np.full((size, size), np.inf)
    inside = np.full((size, size), -np.inf)  # max of half-plane distances; <=0 inside
    for i in range(sides):
        p1, p2 = verts[i], verts[(i + 1) % sides]
        edge = p2 - p1
        # distance to the segment
        t = ((xx - p1[0]) * edge[0] + (yy - p1[1]) * edge[1]) / (edge @ edge)
        t = np.clip(t, 0.0, 1.0)
        dist = np.minimum(
            dist, np.hypot(xx - (p1[0] + t * edge[0]), yy - (p1[1] + t * edge[1]))
        )
        # half-plane side (convexity gives the interior as max over edges)
        normal = np.array([edge[1], -edge[0]])
        normal /= np.linalg.norm(normal)
        if np.dot(normal, p1 - np.array([c, c])) < 0:
            normal = -normal
        inside = np.maximum(inside, (xx - p1[0]) * normal[0] + (yy - p1[1]) * normal[1])
    return np.where(inside <= 0, -dist, dist)


def _pattern_mask(size: int, pattern: str) -> np.ndarray:
    """Fill pattern over the whole canvas, anchored to image coordinates."""
    yy, xx = np.mgrid[0:size, 0:size]
    if pattern == "solid":
        return np.ones((size, size), dtype=bool)
    if pattern == "stripes":
        return ((xx + yy) // 8) % 2 == 0
    if pattern == "dots":
        return (xx % 10 - 5) ** 2 + (yy % 10 - 5) ** 2 <= 9
    if pattern == "checker":
        return ((xx // 8) % 2) == ((yy // 8) % 2)
    raise ValueError(f"unknown pattern value {pattern!r}")


def render_shape(spec: ShapeRenderSpec) -> np.ndarray:
    """Render one shape as a uint8 HxWx3 array.

    The outline band straddles both the outer boundary and the hole
    boundary, so increasing thickness strictly grows the foreground.
    Pattern and outline geometry are independent of color: two specs
    differing only in color differ only inside the foreground mask.
    """
    spec.validate()
    size = spec.image_size
    outer_r = OUTER_RADIUS_FRAC * size
    sides = POLYGON_SIDES[spec.shape]
    d_outer = _polygon_signed_distance(size, sides, outer_r)
    d_hole = _polygon_signed_distance(size, sides, outer_r * HOLE_RADIUS_FRAC)

    half = THICKNESS_PX[spec.thickness] / 2.0
    outline = (np.abs(d_outer) <= half) | (np.abs(d_hole) <= half)
    annulus = (d_outer <= 0) & (d_hole >= 0)
    foreground = outline | (annulus & _pattern_mask(size, spec.pattern))

    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = BACKGROUND_RGB
    img[foreground] = COLOR_RGB[spec.color]
    return img


def _decode_combo(index: int, domain_sizes: list[int]) -> list[int]:
    out = []
    for size in reversed(domain_sizes):
        out.append(index % size)
        index //= size
    return out[::-1]


def build_dataset(
    schema: PropertySchema,
    out_dir: str | Path,
    sample: int | None = None,
    seed: int = 0,
) -> DatasetManifest:
    """Render one image per property combination and write a manifest.

    sample=None renders the full cartesian product of the schema's
    domains; sample=k renders k distinct combinations drawn without
    replacement using the seed. Deterministic for fixed arguments.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    names = schema.property_names
    if set(names) != {"shape", "color", "thickness", "pattern"}:
        raise ValueError(
            "shapes renderer requires properties shape/color/thickness/pattern, "
            f"got {list(names)}"
        )
    domains = [schema.domain(n) for n in names]
    sizes = [len(d) for d in domains]
    total = int(np.prod(sizes))
    if sample is None:
        indices = range(total)
    else:
        if sample > total:
            raise ValueError(f"requested {sample} combinations, only {total} exist")
        rng = np.random.default_rng(seed)
        indices = sorted(rng.choice(total, size=sample, replace=False).tolist())

    records = []
    for index in indices:
        combo = _decode_combo(index, sizes)
        values = {n: domains[i][combo[i]] for i, n in enumerate(names)}
        spec = ShapeRenderSpec(
            shape=values["shape"],
            color=values["color"],
            thickness=values["thickness"],
            pattern=values["pattern"],
            seed=seed,
        )
        img = render_shape(spec)
        sample_id = "-".join(values[n] for n in names)
        rel_path = f"images/{sample_id}.png"
        Image.fromarray(img).save(out_dir / rel_path)
        records.append(
            ManifestRecord(
                sample_id=sample_id,
                image_path=rel_path,
                properties=schema.vector(values),
            )
        )

    manifest = DatasetManifest(
        schema=schema,
        records=records,
        generator_config={
            "generator": "shapegen",
            "image_size": IMAGE_SIZE,
            "combos": "all" if sample is None else {"sampled": sample},
            "seed": seed,
        },
    )
    manifest.save(out_dir)
    return manifest


def all_combination_vectors(schema: PropertySchema):
    """Iterate every complete property vector of a schema, in domain order."""
    names = schema.property_names
    for combo in itertools.product(*(schema.domain(n) for n in names)):
        yield schema.vector(dict(zip(names, combo)))
