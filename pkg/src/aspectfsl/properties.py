"""Property schemas, property vectors, and the aspect matching oracle.

Every image in a dataset is fully described by a property vector: one
discrete value per property of a schema. An aspect is a set of
(property, value) pairs shared between a query and exactly one element
of a support set; the oracle below finds it by exhaustive enumeration
and is the ground truth against which episode samplers and trained
models are checked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class SchemaError(ValueError):
    """Schema definition or schema/vector mismatch problem."""


@dataclass(frozen=True)
class PropertySchema:
    """Ordered set of named discrete properties, one of them the object type.

    The object property identifies what the image depicts (shape, body);
    it is never allowed to act as an aspect.
    """

    name: str
    properties: tuple[tuple[str, tuple[str, ...]], ...]
    object_property: str

    def __post_init__(self):
        names = [n for n, _ in self.properties]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate property names in schema {self.name!r}")
        for n, domain in self.properties:
            if len(domain) < 2:
                raise SchemaError(f"property {n!r} needs >= 2 values, got {len(domain)}")
            if len(set(domain)) != len(domain):
                raise SchemaError(f"property {n!r} has duplicate domain values")
        if self.object_property not in names:
            raise SchemaError(
                f"object_property {self.object_property!r} is not a schema property"
            )

    @property
    def property_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.properties)

    def domain(self, property_name: str) -> tuple[str, ...]:
        for n, d in self.properties:
            if n == property_name:
                return d
        raise SchemaError(f"unknown property {property_name!r} in schema {self.name!r}")

    def vector(self, values: Mapping[str, str]) -> "PropertyVector":
        """Build a validated PropertyVector for this schema."""
        v = PropertyVector(schema_ref=self.name, values=dict(values))
        validate_vector(self, v)
        return v

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "object_property": self.object_property,
            "properties": [{"name": n, "domain": list(d)} for n, d in self.properties],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PropertySchema":
        return cls(
            name=data["name"],
            properties=tuple(
                (p["name"], tuple(p["domain"])) for p in data["properties"]
            ),
            object_property=data["object_property"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PropertySchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PropertyVector:
    """Complete assignment of one in-domain value per schema property."""

    schema_ref: str
    values: Mapping[str, str]

    def __getitem__(self, property_name: str) -> str:
        return self.values[property_name]

    def key(self) -> tuple[tuple[str, str], ...]:
        """Canonical hashable identity, independent of dict ordering."""
        return tuple(sorted(self.values.items()))

    def to_dict(self) -> dict:
        return dict(self.values)


def validate_vector(schema: PropertySchema, vector: PropertyVector) -> None:
    """Raise SchemaError unless the vector is complete and in-domain."""
    if vector.schema_ref != schema.name:
        raise SchemaError(
            f"vector references schema {vector.schema_ref!r}, expected {schema.name!r}"
        )
    expected = set(schema.property_names)
    got = set(vector.values)
    if expected != got:
        missing, extra = expected - got, got - expected
        raise SchemaError(f"vector keys mismatch: missing={missing}, extra={extra}")
    for n in schema.property_names:
        if vector.values[n] not in schema.domain(n):
            raise SchemaError(
                f"value {vector.values[n]!r} not in domain of property {n!r}"
            )


@dataclass(frozen=True)
class AspectMatch:
    """Result of the aspect oracle.

    witness holds every (property, value) pair shared by the query and
    exactly one support element. matched_index is set only when all
    witness pairs point at the same support element.
    """

    matched_index: int | None
    witness: frozenset[tuple[str, str]] = field(default_factory=frozenset)


def _check_same_schema(vectors: Iterable[PropertyVector]) -> None:
    refs = {v.schema_ref for v in vectors}
    if len(refs) > 1:
        raise SchemaError(f"vectors span multiple schemas: {sorted(refs)}")


def shared_pairs(a: PropertyVector, b: PropertyVector) -> frozenset[tuple[str, str]]:
    """(property, value) pairs on which two vectors of one schema agree."""
    _check_same_schema([a, b])
    return frozenset(
        (name, value) for name, value in a.values.items() if b.values.get(name) == value
    )


def aspect_oracle(
    query: PropertyVector, support: Sequence[PropertyVector]
) -> AspectMatch:
    """Find the aspect: pairs shared between the query and exactly one element.

    Enumerates every (property, value) pair of the query and counts which
    support elements hold it. Pairs held by exactly one element form the
    witness; the match succeeds only if all of them name the same element.
    Ambiguity (witness pairs pointing at different elements) or an empty
    witness yields matched_index None.
    """
    if len(support) < 2:
        raise ValueError(f"support must have >= 2 elements, got {len(support)}")
    _check_same_schema([query, *support])
    witness: set[tuple[str, str]] = set()
    owners: set[int] = set()
    for name, value in query.values.items():
        holders = [i for i, s in enumerate(support) if s.values[name] == value]
        if len(holders) == 1:
            witness.add((name, value))
            owners.add(holders[0])
    matched = owners.pop() if len(owners) == 1 else None
    return AspectMatch(matched_index=matched, witness=frozenset(witness))


@dataclass(frozen=True)
class EpisodeDiagnostics:
    """Why an episode is (or is not) a valid aspect episode."""

    object_disjoint: bool
    single_discriminating: bool
    varying_properties: tuple[str, ...]
    oracle: AspectMatch
    passed: bool

    def failure_reasons(self) -> list[str]:
        reasons = []
        if not self.object_disjoint:
            reasons.append("query shares object type with a support element")
        if not self.single_discriminating:
            reasons.append(
                "support must vary exactly one non-object property with "
                f"pairwise-distinct values (varying: {list(self.varying_properties)})"
            )
        if self.oracle.matched_index is None:
            reasons.append("aspect oracle found no unambiguous match")
        return reasons


def validate_episode_semantics(
    query: PropertyVector,
    support: Sequence[PropertyVector],
    schema: PropertySchema,
) -> EpisodeDiagnostics:
    """Check the support-set construction rules against a query.

    A valid episode has (a) a query object type absent from the support,
    (b) exactly one varying non-object property across the support, with
    pairwise-distinct values, every other property constant, and (c) an
    unambiguous aspect oracle result. Diagnostics are always returned,
    never raised.
    """
    _check_same_schema([query, *support])
    obj = schema.object_property

    object_disjoint = all(s.values[obj] != query.values[obj] for s in support)

    varying = []
    distinct_ok = True
    for name in schema.property_names:
        values = [s.values[name] for s in support]
        if len(set(values)) > 1:
            varying.append(name)
            if len(set(values)) != len(values):
                distinct_ok = False
    single_discriminating = (
        len(varying) == 1 and varying[0] != obj and distinct_ok
    )

    oracle = aspect_oracle(query, support)
    passed = object_disjoint and single_discriminating and oracle.matched_index is not None
    return EpisodeDiagnostics(
        object_disjoint=object_disjoint,
        single_discriminating=single_discriminating,
        varying_properties=tuple(varying),
        oracle=oracle,
        passed=passed,
    )
