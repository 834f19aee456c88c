"""Closed whitespace-token vocabulary with reserved special tokens."""

from __future__ import annotations

from typing import Iterable, Sequence

from .errors import ConfigurationError

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
MASK_TOKEN = "[MASK]"
UNK_TOKEN = "<unk>"

SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, MASK_TOKEN, UNK_TOKEN)


class Vocabulary:
    """Bijective id<->token mapping; ids 0..4 are reserved specials."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ConfigurationError(
                f"vocabulary must start with the reserved tokens {SPECIAL_TOKENS}"
            )
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError("vocabulary contains duplicate tokens")
        self.tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def from_content(cls, content_tokens: Iterable[str]) -> "Vocabulary":
        """Build a vocabulary from content words, prepending the specials."""
        seen: dict[str, None] = {}
        for tok in content_tokens:
            if tok in SPECIAL_TOKENS:
                raise ConfigurationError(f"content token {tok!r} collides with a special token")
            seen.setdefault(tok, None)
        return cls(SPECIAL_TOKENS + tuple(seen))

    @property
    def size(self) -> int:
        return len(self.tokens)

    pad_id = 0
    bos_id = 1
    eos_id = 2
    mask_id = 3
    unk_id = 4

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset((self.pad_id, self.bos_id, self.eos_id, self.mask_id, self.unk_id))

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def encode(self, tokens: Sequence[str], frame: bool = False) -> list[int]:
        """Map tokens to ids; with frame=True wrap in BOS/EOS."""
        ids = [self.id_of(t) for t in tokens]
        if frame:
            return [self.bos_id] + ids + [self.eos_id]
        return ids

    def decode(self, ids: Sequence[int], strip_special: bool = False) -> list[str]:
        toks = [self.tokens[i] for i in ids]
        if strip_special:
            toks = [t for t in toks if t not in SPECIAL_TOKENS]
        return toks

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)
