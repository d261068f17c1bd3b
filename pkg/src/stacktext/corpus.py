"""CSV ingestion, label encoding, and stratified splitting."""

from __future__ import annotations

import csv
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class LabeledDocument:
    text: str
    label: str


@dataclass(frozen=True)
class Dataset:
    documents: tuple[LabeledDocument, ...]
    name: str = "dataset"

    def __len__(self) -> int:
        return len(self.documents)

    def labels(self) -> list[str]:
        return [d.label for d in self.documents]

    def texts(self) -> list[str]:
        return [d.text for d in self.documents]


@dataclass(frozen=True)
class LabelMap:
    """Bijective class-name <-> id mapping, ids lexicographic from 0."""

    name_to_id: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_labels(cls, labels) -> "LabelMap":
        names = sorted(set(labels))
        return cls(name_to_id={n: i for i, n in enumerate(names)})

    @property
    def num_classes(self) -> int:
        return len(self.name_to_id)

    def id_of(self, name: str) -> int:
        return self.name_to_id[name]

    def name_of(self, idx: int) -> str:
        for n, i in self.name_to_id.items():
            if i == idx:
                return n
        raise KeyError(idx)

    def names(self) -> list[str]:
        return sorted(self.name_to_id, key=self.name_to_id.get)


class CorpusError(ValueError):
    pass


def load_csv(path, text_column: str = "text", label_column: str = "label",
             name: str | None = None) -> tuple[Dataset, int]:
    """Load a labeled dataset from a UTF-8 CSV with a header row.

    Rows with empty text or label are dropped, not errored; the dropped
    count is returned alongside the dataset.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"no such file: {path}")
    docs: list[LabeledDocument] = []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise CorpusError(f"{path}: missing header row")
        for col in (text_column, label_column):
            if col not in reader.fieldnames:
                raise CorpusError(f"{path}: missing column {col!r}")
        for row in reader:
            text = (row.get(text_column) or "").strip()
            label = (row.get(label_column) or "").strip()
            if not text or not label:
                dropped += 1
                continue
            docs.append(LabeledDocument(text=text, label=label))
    if not docs:
        raise CorpusError(f"{path}: zero usable rows")
    return Dataset(documents=tuple(docs), name=name or path.stem), dropped


def encode_labels(dataset: Dataset) -> tuple[LabelMap, list[int]]:
    lm = LabelMap.from_labels(dataset.labels())
    if lm.num_classes < 2:
        raise CorpusError("dataset has fewer than 2 distinct labels")
    return lm, [lm.id_of(d.label) for d in dataset.documents]


def class_distribution(dataset: Dataset) -> dict[str, int]:
    return dict(Counter(dataset.labels()))


def split(dataset: Dataset, ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
          seed: int = 0) -> tuple[Dataset, ...]:
    """Deterministic stratified split into len(ratios) parts.

    Per-class proportions are preserved within one document; the same seed
    always yields the same partition.
    """
    if any(r <= 0 for r in ratios):
        raise CorpusError("split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError("split ratios must sum to 1")
    n_parts = len(ratios)

    by_class: dict[str, list[int]] = {}
    for i, d in enumerate(dataset.documents):
        by_class.setdefault(d.label, []).append(i)
    for label, idxs in by_class.items():
        if len(idxs) < n_parts:
            raise CorpusError(f"class {label!r} has fewer documents than split parts")

    rng = random.Random(seed)
    part_indices: list[list[int]] = [[] for _ in ratios]
    # per-class largest-remainder allocation keeps every part within one
    # document of the exact stratified proportion
    for label in sorted(by_class):
        idxs = list(by_class[label])
        rng.shuffle(idxs)
        n = len(idxs)
        quotas = [r * n for r in ratios]
        counts = [int(q) for q in quotas]
        remainder = n - sum(counts)
        order = sorted(range(n_parts), key=lambda k: quotas[k] - counts[k], reverse=True)
        for k in order[:remainder]:
            counts[k] += 1
        # every part gets at least one document of the class
        for k in range(n_parts):
            if counts[k] == 0:
                donor = max(range(n_parts), key=lambda j: counts[j])
                counts[donor] -= 1
                counts[k] += 1
        pos = 0
        for k, c in enumerate(counts):
            part_indices[k].extend(idxs[pos:pos + c])
            pos += c

    parts = []
    suffixes = ("train", "val", "test") if n_parts == 3 else tuple(str(k) for k in range(n_parts))
    for k, idxs in enumerate(part_indices):
        idxs.sort()
        parts.append(Dataset(
            documents=tuple(dataset.documents[i] for i in idxs),
            name=f"{dataset.name}.{suffixes[k]}",
        ))
    return tuple(parts)
