"""Corpus ingestion, label verbalization, K-shot splits, and synthetic data.

The corpus format is the usual TACRED-style JSON (array or JSON-lines) with
`token`, `subj_*`/`obj_*` spans and types, and `relation`. The subject is the
head entity, the object the tail. All sampling goes through an explicitly
named PCG64 generator so splits are reproducible across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SEEDS = (13, 21, 42, 87, 100)


class DataError(Exception):
    """Raised for malformed corpus records, schemas, or generator settings."""


def _rng(seed: int) -> np.random.Generator:
    # PCG64 is pinned on purpose: splits must be bit-identical across machines.
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Instance:
    """One labeled sentence with head/tail entity spans (inclusive indices)."""

    tokens: tuple[str, ...]
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    head_type: str
    tail_type: str
    relation: str
    uid: str | None = None

    def validate(self, schema: "RelationSchema | None" = None) -> None:
        n = len(self.tokens)
        for name, (start, end) in (("head", self.head_span), ("tail", self.tail_span)):
            if not (0 <= start <= end < n):
                raise DataError(
                    f"instance {self.uid!r}: {name} span ({start}, {end}) out of "
                    f"bounds for {n} tokens"
                )
        if not self.head_type or not self.tail_type:
            raise DataError(f"instance {self.uid!r}: empty entity type")
        if schema is not None and self.relation not in schema.labels():
            raise DataError(f"instance {self.uid!r}: unknown relation {self.relation!r}")

    @property
    def head_tokens(self) -> tuple[str, ...]:
        return self.tokens[self.head_span[0] : self.head_span[1] + 1]

    @property
    def tail_tokens(self) -> tuple[str, ...]:
        return self.tokens[self.tail_span[0] : self.tail_span[1] + 1]

    @property
    def type_pair(self) -> tuple[str, str]:
        return (self.head_type, self.tail_type)


def verbalize(label: str) -> list[str]:
    """Turn a relation label into its natural-language token sequence.

    Rules, applied in order: drop everything up to and including the first
    ':', turn each '_' into a token boundary, and replace '/' with "or".
    E.g. "org:top_members/employees" -> ["top", "members", "or", "employees"].
    """
    if not label:
        raise DataError("cannot verbalize an empty label")
    body = label.split(":", 1)[1] if ":" in label else label
    body = body.replace("_", " ").replace("/", " or ")
    tokens = body.split()
    if not tokens:
        raise DataError(f"label {label!r} verbalizes to nothing")
    return tokens


def type_tokens(type_name: str) -> list[str]:
    """Lowercase an entity type and split it on '_' into ordinary tokens."""
    tokens = type_name.lower().replace("_", " ").split()
    if not tokens:
        raise DataError(f"entity type {type_name!r} yields no tokens")
    return tokens


@dataclass(frozen=True)
class RelationEntry:
    label: str
    verbalization: tuple[str, ...]
    rel_id_token: str
    handmade: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.verbalization:
            raise DataError(f"relation {self.label!r} has an empty verbalization")
        if self.handmade is not None and len(self.handmade) != 5:
            raise DataError(
                f"relation {self.label!r}: handmade verbalization must have exactly "
                f"5 tokens, got {len(self.handmade)}"
            )


@dataclass(frozen=True)
class RelationSchema:
    """Ordered relation inventory; the order fixes <Rel_k> ids and tie-breaks."""

    entries: tuple[RelationEntry, ...]
    negative_label: str | None = None

    def __post_init__(self) -> None:
        labels = [e.label for e in self.entries]
        if len(set(labels)) != len(labels):
            raise DataError("duplicate labels in schema")
        if self.negative_label is not None and self.negative_label not in labels:
            raise DataError(f"negative label {self.negative_label!r} not in schema")

    @classmethod
    def from_labels(
        cls,
        labels: list[str] | tuple[str, ...],
        negative_label: str | None = None,
        handmade: dict[str, tuple[str, ...]] | None = None,
    ) -> "RelationSchema":
        entries = tuple(
            RelationEntry(
                label=lab,
                verbalization=tuple(verbalize(lab)),
                rel_id_token=f"<Rel_{k}>",
                handmade=tuple(handmade[lab]) if handmade and lab in handmade else None,
            )
            for k, lab in enumerate(labels)
        )
        return cls(entries=entries, negative_label=negative_label)

    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def entry(self, label: str) -> RelationEntry:
        for e in self.entries:
            if e.label == label:
                return e
        raise DataError(f"relation {label!r} not in schema")

    def index(self, label: str) -> int:
        for i, e in enumerate(self.entries):
            if e.label == label:
                return i
        raise DataError(f"relation {label!r} not in schema")

    def with_handmade(self, table: dict[str, tuple[str, ...]]) -> "RelationSchema":
        return RelationSchema.from_labels(self.labels(), self.negative_label, table)

    def save(self, path: str | Path) -> None:
        payload = {"labels": self.labels(), "negative_label": self.negative_label}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RelationSchema":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(payload, dict) or "labels" not in payload:
            raise DataError(f"{path}: schema file must be an object with a 'labels' list")
        return cls.from_labels(payload["labels"], payload.get("negative_label"))


@dataclass(frozen=True)
class KShotConfig:
    k: int = 8
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def __post_init__(self) -> None:
        if self.k < 1:
            raise DataError(f"K must be >= 1, got {self.k}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise DataError("seeds must be non-empty and distinct")


_RECORD_FIELDS = (
    "token",
    "subj_start",
    "subj_end",
    "obj_start",
    "obj_end",
    "subj_type",
    "obj_type",
    "relation",
)


def _instance_from_record(rec: dict, where: str) -> Instance:
    missing = [f for f in _RECORD_FIELDS if f not in rec]
    if missing:
        raise DataError(f"{where}: missing fields {missing}")
    tokens = rec["token"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise DataError(f"{where}: 'token' must be a list of strings")
    try:
        head_span = (int(rec["subj_start"]), int(rec["subj_end"]))
        tail_span = (int(rec["obj_start"]), int(rec["obj_end"]))
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: span fields must be integers: {exc}") from exc
    return Instance(
        tokens=tuple(tokens),
        head_span=head_span,
        tail_span=tail_span,
        head_type=str(rec["subj_type"]),
        tail_type=str(rec["obj_type"]),
        relation=str(rec["relation"]),
        uid=str(rec.get("id", where)),
    )


def load_dataset(path: str | Path, schema: RelationSchema) -> list[Instance]:
    """Load and validate a TACRED-schema corpus (JSON array or JSON-lines)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    records: list[tuple[dict, str]] = []
    stripped = text.lstrip()
    if not stripped:
        return []
    if stripped.startswith("["):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from exc
        records = [(rec, f"{path}:record {i + 1}") for i, rec in enumerate(raw)]
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append((json.loads(line), f"{path}:line {lineno}"))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:line {lineno}: invalid JSON: {exc}") from exc
    instances = []
    for rec, where in records:
        if not isinstance(rec, dict):
            raise DataError(f"{where}: record is not an object")
        inst = _instance_from_record(rec, where)
        inst.validate(schema)
        instances.append(inst)
    return instances


def save_dataset(instances: list[Instance], path: str | Path) -> None:
    """Write instances back out in the corpus JSON-array format."""
    records = []
    for inst in instances:
        records.append(
            {
                "id": inst.uid,
                "token": list(inst.tokens),
                "subj_start": inst.head_span[0],
                "subj_end": inst.head_span[1],
                "obj_start": inst.tail_span[0],
                "obj_end": inst.tail_span[1],
                "subj_type": inst.head_type,
                "obj_type": inst.tail_type,
                "relation": inst.relation,
            }
        )
    Path(path).write_text(json.dumps(records, indent=1) + "\n", encoding="utf-8")


def load_handmade(path: str | Path, schema: RelationSchema) -> dict[str, tuple[str, ...]]:
    """Load the fixed-length (5 token) hand-crafted verbalization table.

    One `label<TAB>tok1 tok2 tok3 tok4 tok5` row per relation.
    """
    path = Path(path)
    table: dict[str, tuple[str, ...]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:line {lineno}: expected 'label<TAB>tokens'")
        label, rest = line.split("\t", 1)
        tokens = tuple(rest.split())
        if len(tokens) != 5:
            raise DataError(
                f"{path}:line {lineno}: {label!r} has {len(tokens)} tokens, expected 5"
            )
        if label in table:
            raise DataError(f"{path}:line {lineno}: duplicate label {label!r}")
        table[label] = tokens
    missing = [lab for lab in schema.labels() if lab not in table]
    if missing:
        raise DataError(f"{path}: no handmade verbalization for {missing}")
    unknown = [lab for lab in table if lab not in schema.labels()]
    if unknown:
        raise DataError(f"{path}: handmade rows for unknown labels {unknown}")
    return table


def kshot_sample(
    data: list[Instance], cfg: KShotConfig, seed: int
) -> tuple[list[Instance], list[Instance]]:
    """Per-relation K-shot split: K instances to train and K to dev.

    Relations with fewer than 2K instances are split as evenly as possible
    with train preferred. Deterministic given the seed; outputs keep corpus
    order.
    """
    if not data:
        raise DataError("cannot K-shot sample from an empty dataset")
    by_relation: dict[str, list[int]] = {}
    for i, inst in enumerate(data):
        by_relation.setdefault(inst.relation, []).append(i)
    rng = _rng(seed)
    train_idx: list[int] = []
    dev_idx: list[int] = []
    for relation in sorted(by_relation):
        idx = np.array(by_relation[relation], dtype=np.int64)
        perm = rng.permutation(len(idx))
        shuffled = idx[perm]
        n = len(shuffled)
        if n >= 2 * cfg.k:
            n_train, n_dev = cfg.k, cfg.k
        else:
            n_train = (n + 1) // 2
            n_dev = n - n_train
        train_idx.extend(shuffled[:n_train].tolist())
        dev_idx.extend(shuffled[n_train : n_train + n_dev].tolist())
    train_idx.sort()
    dev_idx.sort()
    return [data[i] for i in train_idx], [data[i] for i in dev_idx]


def stratified_split(
    data: list[Instance], fraction: float, seed: int
) -> tuple[list[Instance], list[Instance]]:
    """Split per relation, `fraction` of each class to the first part."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"split fraction must be in (0, 1), got {fraction}")
    by_relation: dict[str, list[int]] = {}
    for i, inst in enumerate(data):
        by_relation.setdefault(inst.relation, []).append(i)
    rng = _rng(seed)
    first_idx: list[int] = []
    second_idx: list[int] = []
    for relation in sorted(by_relation):
        idx = np.array(by_relation[relation], dtype=np.int64)
        shuffled = idx[rng.permutation(len(idx))]
        cut = int(round(fraction * len(shuffled)))
        first_idx.extend(shuffled[:cut].tolist())
        second_idx.extend(shuffled[cut:].tolist())
    first_idx.sort()
    second_idx.sort()
    return [data[i] for i in first_idx], [data[i] for i in second_idx]


TypeCompatMap = dict[str, set[tuple[str, str]]]


def build_type_compat(train: list[Instance]) -> TypeCompatMap:
    """Map each relation to the (head_type, tail_type) pairs seen in training."""
    compat: TypeCompatMap = {}
    for inst in train:
        compat.setdefault(inst.relation, set()).add(inst.type_pair)
    return compat


def train_label_counts(train: list[Instance]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for inst in train:
        counts[inst.relation] = counts.get(inst.relation, 0) + 1
    return counts


def bucket_by_frequency(
    train_counts: dict[str, int],
    test: list[Instance],
    thresholds: tuple[int, int] = (300, 50),
    negative: str | None = None,
) -> tuple[list[Instance], list[Instance], list[Instance]]:
    """Partition test instances into high/mid/low training-frequency buckets.

    A relation with more than `hi` training instances is high frequency, one
    with `lo`..`hi` is mid, the rest low. Negative-label instances are never
    bucketed.
    """
    hi, lo = thresholds
    if not hi > lo > 0:
        raise DataError(f"thresholds must satisfy hi > lo > 0, got {thresholds}")
    high: list[Instance] = []
    mid: list[Instance] = []
    low: list[Instance] = []
    for inst in test:
        if negative is not None and inst.relation == negative:
            continue
        count = train_counts.get(inst.relation, 0)
        if count > hi:
            high.append(inst)
        elif count >= lo:
            mid.append(inst)
        else:
            low.append(inst)
    return high, mid, low


# --- synthetic corpora -------------------------------------------------------

_SYLLABLES = (
    "ba", "do", "ki", "lu", "mer", "na", "po", "ra", "su", "ti", "vo", "zen",
    "gar", "hel", "jin", "quo",
)

_TYPE_POOL = (
    "PERSON", "ORGANIZATION", "LOCATION", "DATE_VALUE", "EVENT_NAME",
    "FACILITY", "PRODUCT_ITEM", "WORK_TITLE", "NORP_GROUP", "LAW_CODE",
    "LANGUAGE_NAME", "QUANTITY_UNIT",
)

_NOUN_POOL = (
    "member", "branch", "founder", "origin", "leader", "parent", "spouse",
    "holder", "agent", "maker", "seller", "tenant", "rival", "patron",
    "anchor", "broker", "envoy", "critic", "editor", "pilot", "mentor",
    "backer", "donor", "scout", "umpire", "warden", "notary", "curator",
)

_DOMAINS = ("org", "per", "loc", "evt")

_HANDMADE_PAD = ("entity", "relation", "holds", "here")


def _pseudo_word(i: int) -> str:
    a = _SYLLABLES[i % len(_SYLLABLES)]
    b = _SYLLABLES[(i // len(_SYLLABLES) + i) % len(_SYLLABLES)]
    suffix = "" if i < len(_SYLLABLES) ** 2 else str(i)
    return a + b + suffix


@dataclass(frozen=True)
class SyntheticConfig:
    num_relations: int = 8
    num_types: int = 4
    instances_per_relation: int = 32
    noise_rate: float = 0.0
    vocab_size: int = 60

    def __post_init__(self) -> None:
        if self.num_relations < 2:
            raise DataError("num_relations must be >= 2")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise DataError("noise_rate must be in [0, 1]")
        if self.instances_per_relation < 1:
            raise DataError("instances_per_relation must be >= 1")
        if self.num_types < 1 or self.num_types**2 < self.num_relations:
            raise DataError(
                "num_types too small: need num_types^2 >= num_relations so each "
                "relation gets a distinct type pair"
            )
        if self.vocab_size < 12:
            raise DataError("vocab_size must be >= 12")


def _synthetic_labels(cfg: SyntheticConfig, rng: np.random.Generator) -> list[str]:
    needed = 3 * cfg.num_relations
    nouns = list(_NOUN_POOL)
    while len(nouns) < needed:
        nouns.append(_pseudo_word(200 + len(nouns)))
    order = rng.permutation(len(nouns))
    labels = []
    for i in range(cfg.num_relations):
        a, b, c = (nouns[order[3 * i + j]] for j in range(3))
        dom = _DOMAINS[i % len(_DOMAINS)]
        shape = i % 3
        if shape == 0:
            labels.append(f"{dom}:{a}_{b}")
        elif shape == 1:
            labels.append(f"{dom}:{a}_of_{b}")
        else:
            labels.append(f"{dom}:{a}_{b}/{c}")
    return labels


def generate_synthetic(
    cfg: SyntheticConfig, seed: int
) -> tuple[list[Instance], RelationSchema]:
    """Generate a deterministic synthetic relation-classification corpus.

    Each relation owns a distinct (head_type, tail_type) pair and a distinct
    two-token context pattern planted in its sentences; with probability
    `noise_rate` the pattern is replaced by an uninformative distractor.
    Labels follow `dom:name_with_parts/alt` shapes so verbalization rules get
    exercised end to end.
    """
    rng = _rng(seed)
    labels = _synthetic_labels(cfg, rng)

    types = list(_TYPE_POOL[: cfg.num_types])
    while len(types) < cfg.num_types:
        types.append(f"TYPE_{len(types)}")
    all_pairs = [(h, t) for h in types for t in types]
    pair_order = rng.permutation(len(all_pairs))
    type_pairs = [all_pairs[pair_order[i]] for i in range(cfg.num_relations)]

    # Reserved vocabulary blocks keep patterns, fillers, and names disjoint.
    n_pattern_words = 2 * cfg.num_relations + 8  # spare words feed distractors
    pattern_words = [_pseudo_word(i) for i in range(n_pattern_words)]
    patterns = [tuple(pattern_words[2 * i : 2 * i + 2]) for i in range(cfg.num_relations)]
    distractors = [
        tuple(pattern_words[2 * cfg.num_relations + 2 * j : 2 * cfg.num_relations + 2 * j + 2])
        for j in range(4)
    ]
    fillers = [_pseudo_word(n_pattern_words + i) for i in range(cfg.vocab_size)]
    # Mention surfaces are drawn per entity type (as in real corpora, where the
    # mention usually betrays its type), so templates that surface mentions see
    # more signal than the bare sentence does.
    name_base = n_pattern_words + cfg.vocab_size
    names_by_type = {
        t: [_pseudo_word(name_base + 6 * k + i).capitalize() for i in range(6)]
        for k, t in enumerate(types)
    }

    handmade = {
        lab: tuple((verbalize(lab) + list(_HANDMADE_PAD))[:5]) for lab in labels
    }
    schema = RelationSchema.from_labels(labels, negative_label=None, handmade=handmade)

    def draw(pool: list[str], k: int) -> list[str]:
        return [pool[int(j)] for j in rng.integers(0, len(pool), size=k)]

    instances: list[Instance] = []
    for r, label in enumerate(labels):
        head_type, tail_type = type_pairs[r]
        for m in range(cfg.instances_per_relation):
            pattern = patterns[r]
            if cfg.noise_rate > 0 and rng.random() < cfg.noise_rate:
                pattern = distractors[int(rng.integers(0, len(distractors)))]
            head = draw(names_by_type[head_type], int(rng.integers(1, 3)))
            tail = draw(names_by_type[tail_type], int(rng.integers(1, 3)))
            # Decoy mentions make the bare sentence ambiguous about which
            # entities are being asked about; only the template marks them.
            decoy_a = draw(names_by_type[types[int(rng.integers(0, len(types)))]], 1)
            decoy_b = draw(names_by_type[types[int(rng.integers(0, len(types)))]], 1)
            pre = draw(fillers, int(rng.integers(1, 4))) + decoy_a
            mid1 = draw(fillers, int(rng.integers(0, 3)))
            mid2 = draw(fillers, int(rng.integers(0, 3)))
            post = decoy_b + draw(fillers, int(rng.integers(1, 4)))
            tokens = pre + head + mid1 + list(pattern) + mid2 + tail + post
            h0 = len(pre)
            t0 = len(pre) + len(head) + len(mid1) + 2 + len(mid2)
            inst = Instance(
                tokens=tuple(tokens),
                head_span=(h0, h0 + len(head) - 1),
                tail_span=(t0, t0 + len(tail) - 1),
                head_type=head_type,
                tail_type=tail_type,
                relation=label,
                uid=f"synth-{seed}-{r}-{m}",
            )
            inst.validate(schema)
            instances.append(inst)
    return instances, schema


def synthetic_handmade(schema: RelationSchema) -> dict[str, tuple[str, ...]]:
    """Rebuild the 5-token handmade table a synthetic schema was created with."""
    return {
        e.label: e.handmade
        if e.handmade is not None
        else tuple((list(e.verbalization) + list(_HANDMADE_PAD))[:5])
        for e in schema.entries
    }


def save_handmade(table: dict[str, tuple[str, ...]], path: str | Path) -> None:
    lines = [f"{label}\t{' '.join(tokens)}" for label, tokens in table.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
