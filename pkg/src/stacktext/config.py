"""Experiment configuration: flat dotted-key text files with defaults,
validation, and deterministic hashing.

Format: one `key = value` per line, `#` comments, blank lines ignored.
Lists are comma-separated. Unknown keys are rejected with the nearest
valid key named.
"""

from __future__ import annotations

import difflib
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .classical import KINDS as CLASSICAL_KINDS
from .neural import LINEAGES


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_list(s: str) -> list[str]:
    return [part.strip() for part in s.split(",") if part.strip()]


def _parse_int_list(s: str) -> list[int]:
    return [int(part) for part in _parse_list(s)]


# key -> (parser, default). None default means required.
SCHEMA: dict[str, tuple] = {
    "dataset.path": (str, None),
    "dataset.text_column": (str, "text"),
    "dataset.label_column": (str, "label"),
    "dataset.name": (str, ""),
    "prep.lowercase": (_parse_bool, True),
    "prep.strip_urls": (_parse_bool, True),
    "prep.strip_handles": (_parse_bool, True),
    "prep.strip_numbers": (_parse_bool, True),
    "prep.strip_symbols": (_parse_bool, True),
    "prep.stopwords_path": (str, ""),
    "prep.lemma_lexicon_path": (str, ""),
    "split.train": (float, 0.8),
    "split.val": (float, 0.1),
    "split.test": (float, 0.1),
    "seeds": (_parse_int_list, [1, 2, 3, 4, 5]),
    "baselines": (_parse_list, []),
    "baseline.min_df": (int, 2),
    "baseline.epochs": (int, 50),
    "baseline.learning_rate": (float, 0.1),
    "baseline.regularization": (float, 1e-4),
    "baseline.tree_count": (int, 100),
    "baseline.max_depth": (int, 12),
    "baseline.boost_depth": (int, 4),
    "baseline.max_leaves": (int, 31),
    "transformers": (_parse_list, []),
    "transformer.scale": (str, "desk"),
    "transformer.max_len": (int, 32),
    "transformer.vocab_size": (int, 300),
    "transformer.epochs": (int, 10),
    "transformer.lr": (float, 1e-3),
    "transformer.batch_size": (int, 32),
    "transformer.pretrain": (_parse_bool, False),
    "transformer.pretrain_epochs": (int, 3),
    "stack.enabled": (_parse_bool, False),
    "stack.folds": (int, 5),
    "stack.meta": (str, "transformer-head"),
    "stack.meta_hidden": (int, 16),
    "stack.meta_layers": (int, 2),
    "stack.meta_heads": (int, 2),
    "stack.meta_epochs": (int, 60),
    "stack.meta_lr": (float, 1e-2),
    "stack.leak_free": (_parse_bool, True),
    "output.dir": (str, "out"),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def config_hash(self) -> str:
        canon = "\n".join(f"{k}={self.values[k]!r}" for k in sorted(self.values))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def parse_config_text(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            hint = difflib.get_close_matches(key, SCHEMA.keys(), n=1)
            suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise ConfigError(f"line {lineno}: unknown key {key!r}{suffix}")
        raw[key] = value.strip()

    values: dict = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parser(raw[key])
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"{key}: invalid value {raw[key]!r} ({exc})") from exc
        elif default is None:
            raise ConfigError(f"missing required key {key!r}")
        else:
            values[key] = default

    for kind in values["baselines"]:
        if kind not in CLASSICAL_KINDS:
            raise ConfigError(
                f"baselines: unknown kind {kind!r}; valid: {', '.join(CLASSICAL_KINDS)}")
    for lineage in values["transformers"]:
        if lineage not in LINEAGES:
            raise ConfigError(
                f"transformers: unknown lineage {lineage!r}; valid: {', '.join(LINEAGES)}")
    if values["stack.meta"] not in ("transformer-head", "logistic"):
        raise ConfigError(f"stack.meta: unknown meta kind {values['stack.meta']!r}")
    if values["transformer.scale"] not in ("desk", "paper"):
        raise ConfigError(f"transformer.scale: must be desk or paper")
    ratios = (values["split.train"], values["split.val"], values["split.test"])
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split ratios must be positive and sum to 1")
    if not values["seeds"]:
        raise ConfigError("seeds: need at least one seed")
    if not (values["baselines"] or values["transformers"] or values["stack.enabled"]):
        raise ConfigError("no models requested: set baselines, transformers, or stack.enabled")
    if values["stack.enabled"] and len(values["transformers"]) < 2:
        raise ConfigError("stack.enabled requires at least 2 transformer lineages")

    if base_dir is not None:
        ds = Path(values["dataset.path"])
        if not ds.is_absolute():
            ds = base_dir / ds
        if not ds.is_file():
            raise ConfigError(f"dataset.path: no such file {ds}")
        values["dataset.path"] = str(ds)
    if not values["dataset.name"]:
        values["dataset.name"] = Path(values["dataset.path"]).stem
    return ExperimentConfig(values=values)


def validate_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), base_dir=path.parent)
