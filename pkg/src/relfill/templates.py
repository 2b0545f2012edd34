"""Infilling templates: source sequences, sentinel-delimited targets, preambles.

The default template rewrites a sentence into an infilling query whose blanks
are the head entity type, the tail entity type, and the relation
verbalization. Trainable prompt slots are encoded in source id sequences as
ids >= len(vocab); slot i is len(vocab) + i and is resolved by the model's
embedding layer. Target and preamble sequences contain vocabulary ids only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import Instance, RelationEntry, RelationSchema, type_tokens
from .vocab import Vocab, encode_tokens


class TemplateError(Exception):
    pass


class TemplateVariant(str, Enum):
    CONTINUOUS_INFILL = "continuous_infill"
    MANUAL_DISCRETE = "manual_discrete"
    TYPES_IN_SOURCE = "types_in_source"
    ENTITIES_ONLY = "entities_only"
    NO_ENTITIES = "no_entities"
    VANILLA_SEQ2SEQ = "vanilla_seq2seq"


class SentinelStyle(str, Enum):
    DISTINCT = "distinct"
    UNIFORM_MASK = "uniform_mask"


class VerbalizerMode(str, Enum):
    FULL = "full"
    HANDMADE = "handmade"
    REL_ID = "rel_id"


# Variants whose targets start with the two entity-type segments.
TYPE_PREDICTING = frozenset(
    {TemplateVariant.CONTINUOUS_INFILL, TemplateVariant.MANUAL_DISCRETE}
)


@dataclass(frozen=True)
class TemplateConfig:
    variant: TemplateVariant = TemplateVariant.CONTINUOUS_INFILL
    n: int = 3
    sentinel_style: SentinelStyle = SentinelStyle.DISTINCT
    max_source_len: int = 512

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", TemplateVariant(self.variant))
        object.__setattr__(self, "sentinel_style", SentinelStyle(self.sentinel_style))
        if self.n < 0:
            raise TemplateError(f"n must be >= 0, got {self.n}")
        if self.max_source_len < 16:
            raise TemplateError(f"max_source_len must be >= 16, got {self.max_source_len}")

    @property
    def n2(self) -> int:
        return 3 * self.n


@dataclass(frozen=True)
class SourceSeq:
    """Encoder input; ids >= vocab_size mark prompt slots (id - vocab_size)."""

    ids: np.ndarray
    vocab_size: int
    n_slots: int
    sentinel_positions: tuple[int, ...] = ()
    head_positions: tuple[int, ...] = ()
    tail_positions: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def slot_positions(self) -> np.ndarray:
        return np.nonzero(self.ids >= self.vocab_size)[0]


@dataclass(frozen=True)
class TargetSeq:
    """Decoder labels; `segments` maps segment name to a half-open id range."""

    ids: tuple[int, ...]
    segments: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def segment_ids(self, name: str) -> tuple[int, ...]:
        lo, hi = self.segments[name]
        return self.ids[lo:hi]


@dataclass(frozen=True)
class Preamble:
    """Decoder seed BOS [X] t_h [Y] t_t [Z] used by entity-guided decoding."""

    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


def _sentinels(cfg: TemplateConfig, vocab: Vocab) -> tuple[int, int, int, int]:
    if cfg.sentinel_style is SentinelStyle.UNIFORM_MASK:
        m = vocab.mask_id
        return m, m, m, m
    return vocab.sentinel_ids()


def _encode_types(inst: Instance, vocab: Vocab) -> tuple[list[int], list[int]]:
    th = encode_tokens(type_tokens(inst.head_type), vocab)
    tt = encode_tokens(type_tokens(inst.tail_type), vocab)
    return th, tt


def build_source(inst: Instance, cfg: TemplateConfig, vocab: Vocab) -> SourceSeq:
    """Build the template source for an instance under the configured variant."""
    v = len(vocab)
    s1, s2, s3, _ = _sentinels(cfg, vocab)
    period = vocab.id(".")
    head = encode_tokens(inst.head_tokens, vocab)
    tail = encode_tokens(inst.tail_tokens, vocab)
    slots = [v + i for i in range(cfg.n2)]
    n = cfg.n

    def lay_out(x_ids: list[int]) -> tuple[list[int], list[int], list[int], list[int]]:
        """Return (suffix after x., sentinel offsets, head offsets, tail offsets)
        relative to the start of the suffix."""
        suffix: list[int] = []
        sent_off: list[int] = []
        head_off: list[int] = []
        tail_off: list[int] = []

        def put(ids: list[int], track: list[int] | None = None) -> None:
            if track is not None:
                track.extend(range(len(suffix), len(suffix) + len(ids)))
            suffix.extend(ids)

        variant = cfg.variant
        if variant is TemplateVariant.CONTINUOUS_INFILL:
            put(slots[:n])
            put([s1], sent_off)
            put(head, head_off)
            put(slots[n : 2 * n])
            put([s2], sent_off)
            put(tail, tail_off)
            put(slots[2 * n :])
            put([s3], sent_off)
            put([period])
        elif variant is TemplateVariant.MANUAL_DISCRETE:
            put(encode_tokens(["The", "relation", "between"], vocab))
            put([s1], sent_off)
            put(head, head_off)
            put([vocab.id("and")])
            put([s2], sent_off)
            put(tail, tail_off)
            put([vocab.id("is")])
            put([s3], sent_off)
            put([period])
        elif variant is TemplateVariant.TYPES_IN_SOURCE:
            th, tt = _encode_types(inst, vocab)
            put(slots[:n])
            put(th)
            put(head, head_off)
            put(slots[n : 2 * n])
            put(tt)
            put(tail, tail_off)
            put(slots[2 * n :])
            put([s3], sent_off)
            put([period])
        elif variant is TemplateVariant.ENTITIES_ONLY:
            put(slots[:n])
            put(head, head_off)
            put(slots[n : 2 * n])
            put(tail, tail_off)
            put(slots[2 * n :])
            put([s3], sent_off)
            put([period])
        elif variant is TemplateVariant.NO_ENTITIES:
            put(slots)
            put([s3], sent_off)
            put([period])
        elif variant is TemplateVariant.VANILLA_SEQ2SEQ:
            pass
        else:  # pragma: no cover - exhaustive over the enum
            raise TemplateError(f"unknown variant {variant}")
        return suffix, sent_off, head_off, tail_off

    x_ids = encode_tokens(inst.tokens, vocab)
    if cfg.variant is TemplateVariant.VANILLA_SEQ2SEQ:
        prefix = x_ids
        suffix, sent_off, head_off, tail_off = [], [], [], []
    else:
        prefix = x_ids + [period]
        suffix, sent_off, head_off, tail_off = lay_out(x_ids)

    total = len(prefix) + len(suffix)
    if total > cfg.max_source_len:
        overflow = total - cfg.max_source_len
        keep = len(x_ids) - overflow
        last_needed = max(inst.head_span[1], inst.tail_span[1]) + 1
        if keep < last_needed:
            raise TemplateError(
                f"instance {inst.uid!r}: truncating the sentence to {keep} tokens "
                f"would cut an entity mention (needs {last_needed})"
            )
        x_kept = x_ids[:keep]
        prefix = x_kept if cfg.variant is TemplateVariant.VANILLA_SEQ2SEQ else x_kept + [period]

    base = len(prefix)
    ids = np.array(prefix + suffix, dtype=np.int64)
    return SourceSeq(
        ids=ids,
        vocab_size=v,
        n_slots=cfg.n2 if cfg.variant not in (TemplateVariant.MANUAL_DISCRETE, TemplateVariant.VANILLA_SEQ2SEQ) else 0,
        sentinel_positions=tuple(base + o for o in sent_off),
        head_positions=tuple(base + o for o in head_off),
        tail_positions=tuple(base + o for o in tail_off),
    )


def relation_segment(
    entry: RelationEntry, mode: VerbalizerMode, vocab: Vocab
) -> list[int]:
    """Token ids of the relation segment under the active verbalizer mode."""
    if mode is VerbalizerMode.FULL:
        tokens = entry.verbalization
    elif mode is VerbalizerMode.HANDMADE:
        if entry.handmade is None:
            raise TemplateError(
                f"relation {entry.label!r} has no handmade verbalization; load one "
                "before using the handmade verbalizer"
            )
        tokens = entry.handmade
    else:
        tokens = (entry.rel_id_token,)
    ids = encode_tokens(tokens, vocab)
    if vocab.unk_id in ids:
        raise TemplateError(f"verbalization of {entry.label!r} contains OOV tokens")
    return ids


def build_target_for(
    inst: Instance,
    label: str,
    cfg: TemplateConfig,
    mode: VerbalizerMode,
    schema: RelationSchema,
    vocab: Vocab,
) -> TargetSeq:
    """Build the target sequence an instance would carry under `label`."""
    s1, s2, s3, s4 = _sentinels(cfg, vocab)
    rel = relation_segment(schema.entry(label), mode, vocab)
    ids: list[int] = []
    segments: dict[str, tuple[int, int]] = {}
    if cfg.variant in TYPE_PREDICTING:
        th, tt = _encode_types(inst, vocab)
        ids.append(s1)
        segments["head_type"] = (len(ids), len(ids) + len(th))
        ids.extend(th)
        ids.append(s2)
        segments["tail_type"] = (len(ids), len(ids) + len(tt))
        ids.extend(tt)
        ids.append(s3)
        segments["relation"] = (len(ids), len(ids) + len(rel))
        ids.extend(rel)
        ids.append(s4)
    elif cfg.variant is TemplateVariant.VANILLA_SEQ2SEQ:
        segments["relation"] = (0, len(rel))
        ids.extend(rel)
        ids.append(vocab.eos_id)
    else:
        ids.append(s3)
        segments["relation"] = (len(ids), len(ids) + len(rel))
        ids.extend(rel)
        ids.append(s4)
    if vocab.unk_id in ids:
        raise TemplateError(f"target for instance {inst.uid!r} contains OOV tokens")
    return TargetSeq(ids=tuple(ids), segments=segments)


def build_target(
    inst: Instance,
    cfg: TemplateConfig,
    mode: VerbalizerMode,
    schema: RelationSchema,
    vocab: Vocab,
) -> TargetSeq:
    """Target for the gold relation of the instance."""
    return build_target_for(inst, inst.relation, cfg, mode, schema, vocab)


def build_preamble(
    inst: Instance,
    vocab: Vocab,
    sentinel_style: SentinelStyle = SentinelStyle.DISTINCT,
) -> Preamble:
    """Decoder seed carrying the gold entity types, ending at the relation slot."""
    th, tt = _encode_types(inst, vocab)
    if vocab.unk_id in th or vocab.unk_id in tt:
        raise TemplateError(f"entity types of instance {inst.uid!r} are OOV")
    if sentinel_style is SentinelStyle.UNIFORM_MASK:
        s1 = s2 = s3 = vocab.mask_id
    else:
        s1, s2, s3, _ = vocab.sentinel_ids()
    ids = (vocab.bos_id, s1, *th, s2, *tt, s3)
    return Preamble(ids=ids)


@dataclass(frozen=True)
class ScoringPrefix:
    """Where relation scoring starts for a variant.

    `ids` is the decoder prefix when the preamble is given (entity-guided) or
    fixed by the variant; when `generate_delims` > 0 the caller must instead
    greedily extend `ids` until that many `delimiter_id` tokens have been
    emitted (the unguided ablation).
    """

    ids: tuple[int, ...]
    generate_delims: int = 0
    delimiter_id: int | None = None


def scoring_prefix(
    inst: Instance, cfg: TemplateConfig, vocab: Vocab, guided: bool
) -> ScoringPrefix:
    s1, s2, s3, _ = _sentinels(cfg, vocab)
    if cfg.variant in TYPE_PREDICTING:
        if guided:
            return ScoringPrefix(ids=build_preamble(inst, vocab, cfg.sentinel_style).ids)
        ndelims = 3 if cfg.sentinel_style is SentinelStyle.UNIFORM_MASK else 1
        delim = vocab.mask_id if cfg.sentinel_style is SentinelStyle.UNIFORM_MASK else s3
        return ScoringPrefix(ids=(vocab.bos_id,), generate_delims=ndelims, delimiter_id=delim)
    if cfg.variant is TemplateVariant.VANILLA_SEQ2SEQ:
        return ScoringPrefix(ids=(vocab.bos_id,))
    # Sentinel-only targets: the delimiter is structural, not entity-derived,
    # so guided and unguided scoring share the same fixed prefix.
    return ScoringPrefix(ids=(vocab.bos_id, s3))
