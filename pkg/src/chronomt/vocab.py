"""Character vocabulary with the control tokens used by the joint LM format.

Special tokens occupy the lowest ids, in this fixed order:

    0 [pad]   1 [bos]   2 [eos]   3 [unk]
    4 [zh_a]  5 [zh_m]  6 [chron]
    7.. one control token per chronology label, in label order

Content characters follow, ordered by frequency descending then codepoint.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import ChronologyLabel, LabelSet
from .errors import ValidationError

PAD, BOS, EOS, UNK, SEP_ZH_A, SEP_ZH_M, SEP_CHRON = range(7)
_FIXED_SPECIALS = ["[pad]", "[bos]", "[eos]", "[unk]", "[zh_a]", "[zh_m]", "[chron]"]

UNK_SURFACE = "□"  # shown for UNK when decoding


def _control_token(label_name: str) -> str:
    return f"[{label_name}]"


class Vocabulary:
    def __init__(self, content_tokens: Sequence[str], label_set: LabelSet):
        self.label_set = label_set
        specials = list(_FIXED_SPECIALS) + [_control_token(l.name) for l in label_set]
        self.num_specials = len(specials)
        tokens = specials + list(content_tokens)
        if any(not t for t in tokens):
            raise ValidationError("vocabulary tokens must be nonempty")
        self.id_to_token: list[str] = tokens
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            dupes = [t for t, c in Counter(tokens).items() if c > 1]
            raise ValidationError(f"duplicate tokens in vocabulary: {dupes}")

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def control_id(self, label: ChronologyLabel) -> int:
        tok = _control_token(label.name)
        tid = self.token_to_id.get(tok)
        if tid is None:
            raise ValidationError(f"label {label.name!r} has no control token in this vocabulary")
        return tid

    def encode(self, text: str) -> np.ndarray:
        """One id per character; OOV characters map to UNK."""
        get = self.token_to_id.get
        return np.array([get(ch, UNK) for ch in text], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> str:
        """Surface string: specials other than UNK are dropped, UNK renders as □."""
        out = []
        size = len(self.id_to_token)
        for i in ids:
            i = int(i)
            if i < 0 or i >= size:
                raise ValidationError(f"token id {i} out of range for vocabulary of size {size}")
            if i == UNK:
                out.append(UNK_SURFACE)
            elif i >= self.num_specials:
                out.append(self.id_to_token[i])
        return "".join(out)

    # -- persistence: one token per line in id order -------------------------

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            f.write(f"#chronomt-vocab\t{self.num_specials}\t{','.join(self.label_set.names())}\n")
            for tok in self.id_to_token:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        path = Path(path)
        with path.open(encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            parts = header.split("\t")
            if len(parts) != 3 or parts[0] != "#chronomt-vocab":
                raise ValidationError(f"not a vocabulary file: {path}")
            num_specials = int(parts[1])
            label_set = LabelSet(parts[2].split(","))
            tokens = [line.rstrip("\n") for line in f]
        vocab = cls(tokens[num_specials:], label_set)
        if vocab.id_to_token != tokens:
            raise ValidationError(f"vocabulary file has unexpected special tokens: {path}")
        return vocab


def build_vocab(
    sentences: Iterable[str], label_set: LabelSet, min_freq: int = 1
) -> Vocabulary:
    """Characters with frequency >= min_freq, by frequency desc then codepoint."""
    if min_freq < 1:
        raise ValidationError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    n = 0
    for s in sentences:
        n += 1
        counts.update(s)
    if n == 0:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    kept = [ch for ch, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda ch: (-counts[ch], ch))
    return Vocabulary(kept, label_set)
