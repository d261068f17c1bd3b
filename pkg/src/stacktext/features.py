"""TF-IDF vectorization over preprocessed token lists.

idf(t) = ln((1 + N) / (1 + df(t))) + 1 (smoothed), tf = raw term count,
optional L2 row normalization. Vocabulary is ordered lexicographically.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class SparseVector:
    indices: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        assert len(self.indices) == len(self.values)

    def to_dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim, dtype=np.float64)
        if self.indices:
            out[list(self.indices)] = self.values
        return out


@dataclass
class TfidfModel:
    vocabulary: dict[str, int]
    idf: np.ndarray
    doc_count: int
    norm: str = "l2"  # "l2" | "none"
    ngram_max: int = 1

    @property
    def dim(self) -> int:
        return len(self.vocabulary)


def _doc_terms(tokens: list[str], ngram_max: int) -> list[str]:
    if ngram_max <= 1:
        return list(tokens)
    terms = list(tokens)
    for n in range(2, ngram_max + 1):
        terms.extend(" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return terms


def fit_tfidf(corpus: list[list[str]], min_df: int = 1, norm: str = "l2",
              ngram_max: int = 1) -> TfidfModel:
    if not corpus:
        raise FeatureError("empty corpus")
    if norm not in ("l2", "none"):
        raise FeatureError(f"unknown norm {norm!r}")
    n_docs = len(corpus)
    df: Counter = Counter()
    for tokens in corpus:
        df.update(set(_doc_terms(tokens, ngram_max)))
    terms = sorted(t for t, c in df.items() if c >= min_df)
    if not terms:
        raise FeatureError("empty vocabulary after min_df filtering")
    vocabulary = {t: i for i, t in enumerate(terms)}
    idf = np.array([math.log((1.0 + n_docs) / (1.0 + df[t])) + 1.0 for t in terms],
                   dtype=np.float64)
    return TfidfModel(vocabulary=vocabulary, idf=idf, doc_count=n_docs,
                      norm=norm, ngram_max=ngram_max)


def transform(model: TfidfModel, tokens: list[str]) -> SparseVector:
    counts: Counter = Counter(_doc_terms(tokens, model.ngram_max))
    entries = []
    for term, count in counts.items():
        col = model.vocabulary.get(term)
        if col is not None:
            entries.append((col, count * model.idf[col]))
    entries.sort()
    if not entries:
        return SparseVector(indices=(), values=())
    idx, vals = zip(*entries)
    vals = np.array(vals, dtype=np.float64)
    if model.norm == "l2":
        norm = np.linalg.norm(vals)
        if norm > 0:
            vals = vals / norm
    return SparseVector(indices=tuple(idx), values=tuple(float(v) for v in vals))


def transform_corpus(model: TfidfModel, corpus: list[list[str]]) -> list[SparseVector]:
    return [transform(model, tokens) for tokens in corpus]


def to_dense_matrix(vectors: list[SparseVector], dim: int) -> np.ndarray:
    out = np.zeros((len(vectors), dim), dtype=np.float64)
    for i, v in enumerate(vectors):
        if v.indices:
            out[i, list(v.indices)] = v.values
    return out


def save_tfidf(model: TfidfModel, path) -> None:
    lines = [f"doc_count\t{model.doc_count}", f"norm\t{model.norm}",
             f"ngram_max\t{model.ngram_max}"]
    for term, col in sorted(model.vocabulary.items(), key=lambda kv: kv[1]):
        lines.append(f"{term}\t{col}\t{float(model.idf[col])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_tfidf(path) -> TfidfModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = dict(ln.split("\t", 1) for ln in lines[:3])
    vocabulary: dict[str, int] = {}
    idf_entries: list[tuple[int, float]] = []
    for ln in lines[3:]:
        term, col, idf_val = ln.rsplit("\t", 2)
        vocabulary[term] = int(col)
        idf_entries.append((int(col), float(idf_val)))
    idf = np.zeros(len(idf_entries), dtype=np.float64)
    for col, val in idf_entries:
        idf[col] = val
    return TfidfModel(vocabulary=vocabulary, idf=idf,
                      doc_count=int(header["doc_count"]), norm=header["norm"],
                      ngram_max=int(header["ngram_max"]))
