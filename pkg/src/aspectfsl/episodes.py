"""Episode sampling under the three support-set constraints, plus data splits.

An episode pairs one query with N support images such that:

1. the query's object type appears nowhere in the support set;
2. exactly one non-object property (the aspect) varies across the
   support, with pairwise-distinct values, everything else constant;
3. the query agrees with the support's common values on exactly
   `shared_count` of the remaining properties.

The query's aspect value equals exactly one support element's, making
that element the unique correct match. Sampling is rejection-based over
the dataset manifest and deterministic per (seed, episode index).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .dataset import DatasetManifest, canonical_json
from .properties import validate_episode_semantics

EPISODE_FORMAT = "aspectfsl-episodes-v1"
SPLIT_FORMAT = "aspectfsl-split-v1"
SPLIT_TAGS = ("train", "val", "test")


class EpisodeSamplingError(RuntimeError):
    """No valid episode found within the retry budget; names the blocker."""


@dataclass(frozen=True)
class Episode:
    query_id: str
    support_ids: tuple[str, ...]
    aspect_property: str
    positive_index: int
    shared_count: int
    split_tag: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["support_ids"] = list(self.support_ids)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(
            query_id=d["query_id"],
            support_ids=tuple(d["support_ids"]),
            aspect_property=d["aspect_property"],
            positive_index=d["positive_index"],
            shared_count=d["shared_count"],
            split_tag=d["split_tag"],
        )


@dataclass
class SplitPlan:
    """Which samples may serve as queries / supports in each split.

    unique mode: train/val/test pools are disjoint and an episode draws
    query and support from the same pool. query mode: only the query
    pools are disjoint; every sample may appear in any support set.
    """

    mode: str
    seed: int
    fractions: tuple[float, float, float]
    query_pools: dict[str, tuple[str, ...]]
    support_pools: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": SPLIT_FORMAT,
            "mode": self.mode,
            "seed": self.seed,
            "fractions": list(self.fractions),
            "query_pools": {k: list(v) for k, v in self.query_pools.items()},
            "support_pools": {k: list(v) for k, v in self.support_pools.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(
            mode=d["mode"],
            seed=d["seed"],
            fractions=tuple(d["fractions"]),
            query_pools={k: tuple(v) for k, v in d["query_pools"].items()},
            support_pools={k: tuple(v) for k, v in d["support_pools"].items()},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(canonical_json(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SplitPlan":
        d = json.loads(Path(path).read_text())
        if d.get("format") != SPLIT_FORMAT:
            raise ValueError(f"unexpected split format {d.get('format')!r}")
        return cls.from_dict(d)


def make_split(
    manifest: DatasetManifest,
    mode: str,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitPlan:
    """Partition sample ids into train/val/test query pools.

    Deterministic for a fixed seed. Train and val pool sizes are floors
    of their fractions; test takes the remainder.
    """
    if mode not in ("unique", "query"):
        raise ValueError(f"unknown split mode {mode!r}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    ids = sorted(manifest.sample_ids)
    if not ids:
        raise ValueError("empty manifest")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n = len(order)
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    pools = {
        "train": tuple(order[:n_train]),
        "val": tuple(order[n_train : n_train + n_val]),
        "test": tuple(order[n_train + n_val :]),
    }
    for tag, frac in zip(SPLIT_TAGS, fractions):
        if frac > 0 and not pools[tag]:
            raise ValueError(
                f"dataset of {n} samples too small for a nonempty {tag!r} pool "
                f"at fraction {frac}"
            )
    if mode == "unique":
        support_pools = dict(pools)
    else:
        support_pools = {tag: tuple(ids) for tag in SPLIT_TAGS}
    return SplitPlan(
        mode=mode,
        seed=seed,
        fractions=tuple(fractions),
        query_pools=pools,
        support_pools=support_pools,
    )


def feasible_aspect_properties(manifest: DatasetManifest, support_size: int) -> list[str]:
    """Non-object properties whose domain can seat N pairwise-distinct values."""
    schema = manifest.schema
    return [
        name
        for name in schema.property_names
        if name != schema.object_property and len(schema.domain(name)) >= support_size
    ]


def max_shared_count(manifest: DatasetManifest) -> int:
    return len(manifest.schema.property_names) - 2


def sample_episode(
    manifest: DatasetManifest,
    plan: SplitPlan,
    split_tag: str,
    rng: np.random.Generator,
    aspect_property: str = "any",
    shared_count: int | str = "any",
    support_size: int = 4,
    max_retries: int = 1000,
) -> Episode:
    """Draw one valid episode from the split's pools.

    Rejection sampling: propose the support's common values and aspect
    values around a random query, then look the required property
    combinations up in the manifest; retry when an image is missing from
    the dataset or excluded by the split pool. Raises
    EpisodeSamplingError naming the dominant blocker after max_retries.
    """
    schema = manifest.schema
    obj = schema.object_property
    if support_size < 2:
        raise ValueError(f"support_size must be >= 2, got {support_size}")
    aspects = feasible_aspect_properties(manifest, support_size)
    if aspect_property != "any":
        if aspect_property == obj:
            raise ValueError("the object property cannot serve as the aspect")
        if aspect_property not in schema.property_names:
            raise ValueError(f"unknown aspect property {aspect_property!r}")
        if aspect_property not in aspects:
            raise ValueError(
                f"domain of {aspect_property!r} is smaller than support_size="
                f"{support_size}"
            )
        aspects = [aspect_property]
    if not aspects:
        raise ValueError(f"no property has a domain of size >= {support_size}")

    query_pool = plan.query_pools[split_tag]
    support_pool = set(plan.support_pools[split_tag])
    if not query_pool:
        raise EpisodeSamplingError(f"empty query pool for split {split_tag!r}")

    s_max = max_shared_count(manifest)
    if shared_count != "any":
        if not 0 <= int(shared_count) <= s_max:
            raise ValueError(f"shared_count must be in [0, {s_max}], got {shared_count}")

    failures: dict[str, int] = {}
    for _ in range(max_retries):
        aspect = aspects[rng.integers(len(aspects))]
        non_oa = [p for p in schema.property_names if p not in (obj, aspect)]
        s = int(shared_count) if shared_count != "any" else int(rng.integers(0, s_max + 1))

        query_id = query_pool[rng.integers(len(query_pool))]
        query = manifest.record(query_id).properties

        obj_options = [v for v in schema.domain(obj) if v != query[obj]]
        support_object = obj_options[rng.integers(len(obj_options))]

        shared_idx = rng.choice(len(non_oa), size=s, replace=False)
        shared = {non_oa[int(i)] for i in shared_idx}
        commons = {}
        for p in non_oa:
            if p in shared:
                commons[p] = query[p]
            else:
                alternatives = [v for v in schema.domain(p) if v != query[p]]
                commons[p] = alternatives[rng.integers(len(alternatives))]

        negatives_domain = [v for v in schema.domain(aspect) if v != query[aspect]]
        neg_idx = rng.choice(len(negatives_domain), size=support_size - 1, replace=False)
        aspect_values = [query[aspect]] + [negatives_domain[int(i)] for i in neg_idx]
        order = rng.permutation(support_size)
        aspect_values = [aspect_values[int(i)] for i in order]
        positive_index = int(np.nonzero(order == 0)[0][0])

        support_ids = []
        blocked = None
        for value in aspect_values:
            vector = schema.vector({**commons, obj: support_object, aspect: value})
            sid = manifest.find_by_properties(vector)
            if sid is None:
                blocked = "required support combination missing from the dataset"
                break
            if sid not in support_pool:
                blocked = f"support sample excluded by the {split_tag!r} {plan.mode} pool"
                break
            support_ids.append(sid)
        if blocked:
            failures[blocked] = failures.get(blocked, 0) + 1
            continue

        episode = Episode(
            query_id=query_id,
            support_ids=tuple(support_ids),
            aspect_property=aspect,
            positive_index=positive_index,
            shared_count=s,
            split_tag=split_tag,
        )
        diag = validate_episode_semantics(
            query, [manifest.record(i).properties for i in support_ids], schema
        )
        if not diag.passed or diag.oracle.matched_index != positive_index:
            raise AssertionError(
                f"sampler produced an invalid episode: {diag.failure_reasons()}"
            )
        return episode

    dominant = max(failures, key=failures.get) if failures else "no candidate found"
    raise EpisodeSamplingError(
        f"no valid episode after {max_retries} retries "
        f"(split={split_tag!r}, aspect={aspect_property!r}, shared_count={shared_count!r}, "
        f"N={support_size}); dominant blocker: {dominant}"
    )


@dataclass
class EpisodeSetConfig:
    support_size: int = 4
    episodes_per_query: int = 10  # test sets: episodes per query image
    count: int = 1000  # train/val sets: total episodes
    aspect_property: str = "any"
    shared_count: int | str = "stratified"  # "stratified" | "any" | fixed int
    max_retries: int = 1000

    def to_dict(self) -> dict:
        return asdict(self)


def _stratified_levels(manifest: DatasetManifest, config: EpisodeSetConfig) -> list:
    if isinstance(config.shared_count, int):
        return [config.shared_count]
    if config.shared_count == "any":
        return ["any"]
    return list(range(max_shared_count(manifest) + 1))


def generate_episodes(
    manifest: DatasetManifest,
    plan: SplitPlan,
    split_tag: str,
    config: EpisodeSetConfig,
    seed: int,
) -> Iterator[Episode]:
    """Yield the episode stream for one split.

    Test splits get exactly episodes_per_query episodes for every query
    in the pool; train/val splits get config.count episodes with random
    queries. shared_count levels rotate round-robin over the whole
    stream ("stratified"), keeping per-level counts within one of each
    other. Episode k is drawn from its own rng stream, so generation is
    deterministic and order-independent.
    """
    levels = _stratified_levels(manifest, config)
    if split_tag == "test":
        queries = list(plan.query_pools[split_tag])
        jobs = [
            (query_id, k)
            for k, query_id in enumerate(
                q for q in queries for _ in range(config.episodes_per_query)
            )
        ]
    else:
        jobs = [(None, k) for k in range(config.count)]

    for query_id, k in jobs:
        rng = np.random.default_rng([seed, k])
        s = levels[k % len(levels)]
        plan_for_query = plan
        if query_id is not None:
            # pin the query by shrinking the pool to a single id
            plan_for_query = SplitPlan(
                mode=plan.mode,
                seed=plan.seed,
                fractions=plan.fractions,
                query_pools={**plan.query_pools, split_tag: (query_id,)},
                support_pools=plan.support_pools,
            )
        yield sample_episode(
            manifest,
            plan_for_query,
            split_tag,
            rng,
            aspect_property=config.aspect_property,
            shared_count=s,
            support_size=config.support_size,
            max_retries=config.max_retries,
        )


def build_episode_set(
    manifest: DatasetManifest,
    plan: SplitPlan,
    split_tag: str,
    out_path: str | Path,
    config: EpisodeSetConfig | None = None,
    seed: int = 0,
) -> list[Episode]:
    """Write an episode file: one header line, then one episode per line."""
    config = config or EpisodeSetConfig()
    episodes = list(generate_episodes(manifest, plan, split_tag, config, seed))
    header = {
        "format": EPISODE_FORMAT,
        "split_tag": split_tag,
        "split_mode": plan.mode,
        "seed": seed,
        "config": config.to_dict(),
        "manifest_fingerprint": manifest.fingerprint(),
        "n_episodes": len(episodes),
    }
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w") as f:
        f.write(canonical_json(header) + "\n")
        for ep in episodes:
            f.write(canonical_json(ep.to_dict()) + "\n")
    return episodes


def load_episode_file(path: str | Path) -> tuple[dict, list[Episode]]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"empty episode file {path}")
    header = json.loads(lines[0])
    if header.get("format") != EPISODE_FORMAT:
        raise ValueError(f"unexpected episode file format {header.get('format')!r}")
    episodes = [Episode.from_dict(json.loads(line)) for line in lines[1:]]
    if header.get("n_episodes") != len(episodes):
        raise ValueError(
            f"episode file {path} declares {header.get('n_episodes')} episodes, "
            f"found {len(episodes)}"
        )
    return header, episodes
