"""Corpus loading, validation, splitting and statistics.

File formats (UTF-8, one record per line):
  parallel:     source<TAB>target[<TAB>label]
  monolingual:  one sentence per line, blank lines skipped

Character counts everywhere are Unicode scalar values, never bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataFormatError, ValidationError

DEFAULT_LABEL_NAMES = ("pre-qin", "han", "song")

# token names reserved for the vocabulary machinery; labels may not collide
RESERVED_LABEL_NAMES = frozenset({"pad", "bos", "eos", "unk", "zh_a", "zh_m", "chron"})


@dataclass(frozen=True)
class ChronologyLabel:
    name: str
    index: int

    def __str__(self) -> str:
        return self.name


class LabelSet:
    """Ordered, fixed set of chronology labels for a run."""

    def __init__(self, names: Sequence[str] = DEFAULT_LABEL_NAMES):
        names = list(names)
        if not names:
            raise ValidationError("label set must be nonempty")
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate label names: {names}")
        for n in names:
            if not n or not n.isascii():
                raise ValidationError(f"label name must be nonempty ASCII, got {n!r}")
            if n in RESERVED_LABEL_NAMES:
                raise ValidationError(f"label name {n!r} collides with a reserved token name")
        self.labels = tuple(ChronologyLabel(n, i) for i, n in enumerate(names))
        self._by_name = {lbl.name: lbl for lbl in self.labels}

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __getitem__(self, index: int) -> ChronologyLabel:
        return self.labels[index]

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelSet) and self.names() == other.names()

    def names(self) -> list[str]:
        return [lbl.name for lbl in self.labels]

    def get(self, name: str) -> ChronologyLabel:
        try:
            return self._by_name[name]
        except KeyError:
            raise ValidationError(f"unknown label {name!r}; known labels: {self.names()}") from None


@dataclass(frozen=True)
class ParallelExample:
    source: str
    target: str
    label: Optional[ChronologyLabel] = None

    def __post_init__(self):
        if not self.source or not self.target:
            raise ValidationError("parallel example sides must be nonempty")


@dataclass(frozen=True)
class MonoCorpus:
    side: str  # "zh-a" or "zh-m"
    sentences: tuple[str, ...]

    def __post_init__(self):
        if self.side not in ("zh-a", "zh-m"):
            raise ValidationError(f"side must be 'zh-a' or 'zh-m', got {self.side!r}")
        if any(not s for s in self.sentences):
            raise ValidationError("monolingual sentences must be nonempty")

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass
class CorpusStats:
    sentence_count: int
    char_count_source: int
    char_count_target: int
    per_label_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sentence_count": self.sentence_count,
            "char_count_source": self.char_count_source,
            "char_count_target": self.char_count_target,
            "per_label_counts": dict(self.per_label_counts),
        }


# -----------------------------
# Loading / saving
# -----------------------------

def load_parallel(path, label_set: LabelSet) -> list[ParallelExample]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"parallel file not found: {path}")
    examples: list[ParallelExample] = []
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            fields = line.split("\t")
            if len(fields) == 2:
                src, tgt, label_name = fields[0], fields[1], None
            elif len(fields) == 3:
                src, tgt, label_name = fields
            else:
                raise DataFormatError(
                    path, line_no, f"expected 2 or 3 tab-separated fields, got {len(fields)}"
                )
            if not src or not tgt:
                raise DataFormatError(path, line_no, "empty source or target field")
            label = None
            if label_name is not None:
                if label_name not in label_set._by_name:
                    raise DataFormatError(
                        path, line_no,
                        f"unknown label {label_name!r}; known labels: {label_set.names()}",
                    )
                label = label_set.get(label_name)
            examples.append(ParallelExample(src, tgt, label))
    if not examples:
        raise ValidationError(f"parallel file is empty: {path}")
    return examples


def save_parallel(examples: Iterable[ParallelExample], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for ex in examples:
            if ex.label is None:
                f.write(f"{ex.source}\t{ex.target}\n")
            else:
                f.write(f"{ex.source}\t{ex.target}\t{ex.label.name}\n")


def load_mono(path, side: str) -> MonoCorpus:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"monolingual file not found: {path}")
    sentences = []
    with path.open(encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line:
                sentences.append(line)
    return MonoCorpus(side=side, sentences=tuple(sentences))


def save_mono(corpus: MonoCorpus, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for s in corpus.sentences:
            f.write(s + "\n")


# -----------------------------
# Splitting
# -----------------------------

def split(
    examples: Sequence[ParallelExample],
    dev_frac: float,
    test_frac: float,
    seed: int,
    stratify: bool = False,
) -> tuple[list[ParallelExample], list[ParallelExample], list[ParallelExample]]:
    """Partition into (train, dev, test).

    Only labeled examples are eligible for dev/test; unlabeled supplements
    always stay in train. Sizes are floor(n_labeled * frac) per held-out set
    (per label under --stratify). Original file order is preserved inside
    each part.
    """
    if not (0 <= dev_frac < 1 and 0 <= test_frac < 1 and dev_frac + test_frac < 1):
        raise ValidationError(
            f"fractions out of range: dev={dev_frac}, test={test_frac} (need dev+test < 1)"
        )
    labeled = [i for i, ex in enumerate(examples) if ex.label is not None]
    rng = np.random.default_rng(seed)

    dev_idx: set[int] = set()
    test_idx: set[int] = set()
    if stratify:
        by_label: dict[int, list[int]] = {}
        for i in labeled:
            by_label.setdefault(examples[i].label.index, []).append(i)
        for _, idxs in sorted(by_label.items()):
            perm = rng.permutation(len(idxs))
            n_dev = int(len(idxs) * dev_frac)
            n_test = int(len(idxs) * test_frac)
            dev_idx.update(idxs[j] for j in perm[:n_dev])
            test_idx.update(idxs[j] for j in perm[n_dev:n_dev + n_test])
    else:
        perm = rng.permutation(len(labeled))
        n_dev = int(len(labeled) * dev_frac)
        n_test = int(len(labeled) * test_frac)
        dev_idx.update(labeled[j] for j in perm[:n_dev])
        test_idx.update(labeled[j] for j in perm[n_dev:n_dev + n_test])

    train, dev, test = [], [], []
    for i, ex in enumerate(examples):
        if i in dev_idx:
            dev.append(ex)
        elif i in test_idx:
            test.append(ex)
        else:
            train.append(ex)
    return train, dev, test


# -----------------------------
# Statistics
# -----------------------------

def stats(data) -> CorpusStats:
    """Compute sentence/character counts for a parallel list or a MonoCorpus."""
    if isinstance(data, MonoCorpus):
        return CorpusStats(
            sentence_count=len(data.sentences),
            char_count_source=sum(len(s) for s in data.sentences),
            char_count_target=0,
        )
    per_label: dict[str, int] = {}
    src_chars = 0
    tgt_chars = 0
    n = 0
    for ex in data:
        n += 1
        src_chars += len(ex.source)
        tgt_chars += len(ex.target)
        if ex.label is not None:
            per_label[ex.label.name] = per_label.get(ex.label.name, 0) + 1
    return CorpusStats(n, src_chars, tgt_chars, per_label)


# -----------------------------
# Run manifest helpers
# -----------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
