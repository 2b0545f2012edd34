"""Closed word-level vocabulary over corpus, type, and verbalization tokens.

Ids are assigned deterministically: specials first (PAD/BOS/EOS/UNK, the
sentinels, [MASK], then one <Rel_k> per schema relation), then schema-derived
tokens, then corpus tokens by descending count with lexicographic tie-breaks.
Everything a target sequence can contain is guaranteed in-vocabulary.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .data import Instance, RelationSchema, type_tokens

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SENT_X, SENT_Y, SENT_Z, SENT_W = "[X]", "[Y]", "[Z]", "[W]"
MASK = "[MASK]"

_BASE_SPECIALS = (PAD, BOS, EOS, UNK, SENT_X, SENT_Y, SENT_Z, SENT_W, MASK)

# Literal words of the hand-written discrete template, plus the terminal '.'
# every template variant emits; they must exist even when absent from corpora.
TEMPLATE_WORDS = (".", "The", "relation", "between", "and", "is")


class VocabError(Exception):
    pass


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict[str, int]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise VocabError(f"id {idx} out of range for vocabulary of {len(self.tokens)}")
        return self.tokens[idx]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def mask_id(self) -> int:
        return self.index[MASK]

    def sentinel_ids(self) -> tuple[int, int, int, int]:
        return tuple(self.index[s] for s in (SENT_X, SENT_Y, SENT_Z, SENT_W))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        return cls._from_tokens(tokens)

    @classmethod
    def _from_tokens(cls, tokens: list[str]) -> "Vocab":
        index = {tok: i for i, tok in enumerate(tokens)}
        if len(index) != len(tokens):
            raise VocabError("duplicate tokens in vocabulary")
        for required in _BASE_SPECIALS:
            if required not in index:
                raise VocabError(f"vocabulary is missing special token {required!r}")
        return cls(tokens=tuple(tokens), index=index)


def build_vocab(
    corpus: list[Instance],
    schema: RelationSchema,
    extra: tuple[tuple[str, ...], ...] = (),
    min_count: int = 1,
) -> Vocab:
    """Assemble the closed vocabulary for a corpus and relation schema."""
    if not corpus:
        raise VocabError("cannot build a vocabulary from an empty corpus")
    ordered: list[str] = []
    seen: set[str] = set()

    def add(token: str) -> None:
        if token not in seen:
            seen.add(token)
            ordered.append(token)

    for tok in _BASE_SPECIALS:
        add(tok)
    for entry in schema.entries:
        add(entry.rel_id_token)
    for entry in schema.entries:
        for tok in entry.verbalization:
            add(tok)
        if entry.handmade is not None:
            for tok in entry.handmade:
                add(tok)
    for tok in TEMPLATE_WORDS:
        add(tok)
    type_toks: set[str] = set()
    for inst in corpus:
        type_toks.update(type_tokens(inst.head_type))
        type_toks.update(type_tokens(inst.tail_type))
    for tok in sorted(type_toks):
        add(tok)
    for seq in extra:
        for tok in seq:
            add(tok)
    counts = Counter(tok for inst in corpus for tok in inst.tokens)
    corpus_order = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    for tok, count in corpus_order:
        if count >= min_count:
            add(tok)
    return Vocab._from_tokens(ordered)


def encode_tokens(tokens, vocab: Vocab) -> list[int]:
    """Map tokens to ids; out-of-vocabulary tokens become UNK."""
    unk = vocab.unk_id
    return [vocab.index.get(tok, unk) for tok in tokens]


def decode_ids(ids, vocab: Vocab) -> list[str]:
    """Inverse of encode_tokens on in-vocabulary tokens; errors on bad ids."""
    return [vocab.token(int(i)) for i in ids]
