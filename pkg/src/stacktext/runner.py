"""Config-driven experiment pipeline: load -> split -> preprocess ->
baselines / transformers / stacking -> evaluate -> report files.

Each stage persists per-model, per-seed result JSONs under
<out>/artifacts/, so re-running skips finished work. Report tables carry
only deterministic values; wall-clock metadata lives in report.json.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import classical, ensemble, features, metrics, textprep
from .config import ExperimentConfig
from .corpus import Dataset, LabelMap, load_csv, split
from .neural import LossCurve

METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "loss")


class RunnerError(RuntimeError):
    pass


@dataclass
class ModelRow:
    name: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    loss: float
    per_seed: dict = field(default_factory=dict)


@dataclass
class ReportBundle:
    dataset_name: str
    config_hash: str
    seeds: list[int]
    baseline_rows: list[ModelRow] = field(default_factory=list)
    transformer_rows: list[ModelRow] = field(default_factory=list)
    loss_curves: dict[str, list] = field(default_factory=dict)
    incomplete: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def _clean_config(cfg: ExperimentConfig) -> textprep.CleanConfig:
    stopwords = textprep.load_stopwords(cfg["prep.stopwords_path"] or None)
    return textprep.CleanConfig(
        lowercase=cfg["prep.lowercase"], strip_urls=cfg["prep.strip_urls"],
        strip_handles=cfg["prep.strip_handles"],
        strip_numbers=cfg["prep.strip_numbers"],
        strip_symbols=cfg["prep.strip_symbols"], stopword_list=stopwords)


def _load_dataset(cfg: ExperimentConfig) -> Dataset:
    ds, _ = load_csv(cfg["dataset.path"], cfg["dataset.text_column"],
                     cfg["dataset.label_column"], name=cfg["dataset.name"])
    return ds


def split_for_seed(cfg: ExperimentConfig, dataset: Dataset, seed: int):
    ratios = (cfg["split.train"], cfg["split.val"], cfg["split.test"])
    return split(dataset, ratios, seed)


def _score(y_true: np.ndarray, probs: np.ndarray, num_classes: int) -> dict:
    y_pred = np.argmax(probs, axis=1)
    cm = metrics.confusion(y_true, y_pred, num_classes)
    report = metrics.classification_report(cm)
    loss = metrics.cce_loss(probs, y_true)
    return {"accuracy": report.accuracy, "precision": report.macro_precision,
            "recall": report.macro_recall, "f1": report.macro_f1,
            "loss": loss.value}


def _results_dir(out_dir: Path) -> Path:
    d = out_dir / "artifacts" / "results"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _result_path(out_dir: Path, model: str, seed: int) -> Path:
    slug = model.replace(" ", "_").lower()
    return _results_dir(out_dir) / f"{slug}_seed{seed}.json"


def _write_result(path: Path, result: dict) -> None:
    path.write_text(json.dumps(result), encoding="utf-8")


# ---------------------------------------------------------------------------
# stages


def stage_prep(cfg: ExperimentConfig, out_dir: Path) -> None:
    """Materialize the per-seed splits as CSVs for inspection/resume."""
    dataset = _load_dataset(cfg)
    prep_dir = out_dir / "artifacts" / "splits"
    prep_dir.mkdir(parents=True, exist_ok=True)
    for seed in cfg["seeds"]:
        for part in split_for_seed(cfg, dataset, seed):
            path = prep_dir / f"{part.name}.seed{seed}.csv"
            if path.exists():
                continue
            lines = ["text,label"]
            for d in part.documents:
                text = d.text.replace('"', '""')
                lines.append(f'"{text}",{d.label}')
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _baseline_result(cfg: ExperimentConfig, kind: str, train_ds, test_ds,
                     label_map, clean_cfg) -> dict:
    token_train = [textprep.preprocess_pipeline(t, clean_cfg)
                   for t in train_ds.texts()]
    token_test = [textprep.preprocess_pipeline(t, clean_cfg)
                  for t in test_ds.texts()]
    tfidf = features.fit_tfidf(token_train, min_df=cfg["baseline.min_df"])
    X_train = features.transform_corpus(tfidf, token_train)
    X_test = features.transform_corpus(tfidf, token_test)
    y_train = np.array([label_map.id_of(l) for l in train_ds.labels()])
    y_test = np.array([label_map.id_of(l) for l in test_ds.labels()])
    spec = classical.TrainSpec(
        epochs=cfg["baseline.epochs"], learning_rate=cfg["baseline.learning_rate"],
        regularization=cfg["baseline.regularization"],
        tree_count=cfg["baseline.tree_count"], max_depth=cfg["baseline.max_depth"],
        boost_depth=cfg["baseline.boost_depth"], max_leaves=cfg["baseline.max_leaves"])
    model = classical.train_classical(kind, X_train, y_train, spec,
                                      feature_count=tfidf.dim)
    probs = classical.predict_proba(model, X_test)
    return _score(y_test, probs, label_map.num_classes)


def _transformer_spec(cfg: ExperimentConfig, lineage: str,
                      clean_cfg) -> ensemble.TransformerBaseSpec:
    return ensemble.TransformerBaseSpec(
        lineage=lineage, scale=cfg["transformer.scale"],
        max_len=cfg["transformer.max_len"], vocab_size=cfg["transformer.vocab_size"],
        epochs=cfg["transformer.epochs"], lr=cfg["transformer.lr"],
        batch_size=cfg["transformer.batch_size"],
        do_pretrain=cfg["transformer.pretrain"],
        pretrain_epochs=cfg["transformer.pretrain_epochs"],
        clean_config=clean_cfg)


def _transformer_result(cfg: ExperimentConfig, lineage: str, train_ds, test_ds,
                        label_map, clean_cfg, seed: int) -> dict:
    spec = _transformer_spec(cfg, lineage, clean_cfg)
    y_train = np.array([label_map.id_of(l) for l in train_ds.labels()])
    y_test = np.array([label_map.id_of(l) for l in test_ds.labels()])
    predictor = spec.fit(train_ds.texts(), y_train, label_map.num_classes, seed)
    probs = predictor.predict_proba(test_ds.texts())
    result = _score(y_test, probs, label_map.num_classes)
    result["curve"] = predictor.curve.entries
    return result


def stage_train(cfg: ExperimentConfig, out_dir: Path) -> list[str]:
    """Train baselines and single transformers for every seed; returns
    stage-labeled failure messages (other models are unaffected)."""
    dataset = _load_dataset(cfg)
    label_map = LabelMap.from_labels(dataset.labels())
    clean_cfg = _clean_config(cfg)
    failures = []
    for seed in cfg["seeds"]:
        train_ds, _val_ds, test_ds = split_for_seed(cfg, dataset, seed)
        for kind in cfg["baselines"]:
            path = _result_path(out_dir, kind, seed)
            if path.exists():
                continue
            try:
                _write_result(path, _baseline_result(
                    cfg, kind, train_ds, test_ds, label_map, clean_cfg))
            except Exception as exc:
                failures.append(f"baseline:{kind}:seed{seed}: {exc}")
        for lineage in cfg["transformers"]:
            path = _result_path(out_dir, lineage, seed)
            if path.exists():
                continue
            try:
                _write_result(path, _transformer_result(
                    cfg, lineage, train_ds, test_ds, label_map, clean_cfg, seed))
            except Exception as exc:
                failures.append(f"transformer:{lineage}:seed{seed}: {exc}")
    return failures


def stage_stack(cfg: ExperimentConfig, out_dir: Path) -> list[str]:
    if not cfg["stack.enabled"]:
        return []
    dataset = _load_dataset(cfg)
    label_map = LabelMap.from_labels(dataset.labels())
    clean_cfg = _clean_config(cfg)
    failures = []
    for seed in cfg["seeds"]:
        path = _result_path(out_dir, "Our method", seed)
        if path.exists():
            continue
        train_ds, val_ds, test_ds = split_for_seed(cfg, dataset, seed)
        base_specs = [_transformer_spec(cfg, lineage, clean_cfg)
                      for lineage in cfg["transformers"]]
        meta_spec = ensemble.MetaSpec(
            kind=cfg["stack.meta"], hidden=cfg["stack.meta_hidden"],
            layers=cfg["stack.meta_layers"], heads=cfg["stack.meta_heads"],
            epochs=cfg["stack.meta_epochs"], lr=cfg["stack.meta_lr"])
        spec = ensemble.StackSpec(base_specs=base_specs, meta_spec=meta_spec,
                                  folds=cfg["stack.folds"], seed=seed,
                                  leak_free=cfg["stack.leak_free"])
        try:
            model, curve = ensemble.stack_train(spec, train_ds, val_ds)
            probs = ensemble.stack_predict(model, test_ds.texts())
            y_test = np.array([label_map.id_of(l) for l in test_ds.labels()])
            result = _score(y_test, probs, label_map.num_classes)
            result["curve"] = curve.entries
            result["leak_free"] = spec.leak_free
            _write_result(path, result)
            ensemble.save_stacked(model, out_dir / "artifacts" / f"stacked_seed{seed}")
        except Exception as exc:
            failures.append(f"stack:seed{seed}: {exc}")
    return failures


def _aggregate_rows(cfg: ExperimentConfig, out_dir: Path, names: list[str],
                    incomplete: list[str]) -> list[ModelRow]:
    rows = []
    for name in names:
        per_seed = {}
        for seed in cfg["seeds"]:
            path = _result_path(out_dir, name, seed)
            if path.exists():
                per_seed[seed] = json.loads(path.read_text(encoding="utf-8"))
        if len(per_seed) < len(cfg["seeds"]):
            incomplete.append(f"{name}: results for "
                              f"{len(per_seed)}/{len(cfg['seeds'])} seeds")
            if not per_seed:
                continue
        means = {k: float(np.mean([r[k] for r in per_seed.values()]))
                 for k in METRIC_KEYS}
        rows.append(ModelRow(name=name, per_seed=per_seed, **means))
    return rows


def stage_evaluate(cfg: ExperimentConfig, out_dir: Path,
                   failures: list[str] | None = None) -> ReportBundle:
    incomplete = list(failures or [])
    bundle = ReportBundle(dataset_name=cfg["dataset.name"],
                          config_hash=cfg.config_hash, seeds=cfg["seeds"])
    bundle.baseline_rows = _aggregate_rows(cfg, out_dir, cfg["baselines"], incomplete)
    tf_names = list(cfg["transformers"])
    if cfg["stack.enabled"]:
        tf_names.append("Our method")
    bundle.transformer_rows = _aggregate_rows(cfg, out_dir, tf_names, incomplete)
    first_seed = cfg["seeds"][0]
    for row in bundle.transformer_rows:
        curve = row.per_seed.get(first_seed, {}).get("curve")
        if curve:
            name = "meta" if row.name == "Our method" else row.name
            bundle.loss_curves[name] = curve
    bundle.incomplete = incomplete
    return bundle


# ---------------------------------------------------------------------------
# report emission


def _format_table(headers: list[str], rows: list[list[str]], md: bool) -> str:
    if md:
        lines = ["| " + " | ".join(headers) + " |",
                 "|" + "|".join("---" for _ in headers) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
    else:
        lines = [",".join(headers)] + [",".join(r) for r in rows]
    return "\n".join(lines) + "\n"


def emit_report(bundle: ReportBundle, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def fmt(v, md):
        return f"{v:.4f}" if md else repr(v)

    base_headers = ["Model", "Dataset", "Accuracy", "Precision", "Recall", "F1-Score"]
    tf_headers = ["Model", "Dataset", "Accuracy", "Precision", "Recall", "Loss"]
    for md in (True, False):
        base_rows = [[r.name, bundle.dataset_name, fmt(r.accuracy, md),
                      fmt(r.precision, md), fmt(r.recall, md), fmt(r.f1, md)]
                     for r in bundle.baseline_rows]
        tf_rows = [[r.name, bundle.dataset_name, fmt(r.accuracy, md),
                    fmt(r.precision, md), fmt(r.recall, md), fmt(r.loss, md)]
                   for r in bundle.transformer_rows]
        ext = "md" if md else "csv"
        p1 = out / f"baselines.{ext}"
        p1.write_text(_format_table(base_headers, base_rows, md), encoding="utf-8")
        p2 = out / f"transformers.{ext}"
        p2.write_text(_format_table(tf_headers, tf_rows, md), encoding="utf-8")
        written += [p1, p2]

    for name, entries in sorted(bundle.loss_curves.items()):
        curve = LossCurve(entries=[tuple(e) for e in entries])
        slug = name.replace(" ", "_").lower()
        path = out / f"loss_curve_{slug}.csv"
        path.write_text(curve.to_csv(), encoding="utf-8")
        written.append(path)

    report = {
        "dataset": bundle.dataset_name,
        "config_hash": bundle.config_hash,
        "seeds": bundle.seeds,
        "averaging": "macro",
        "mse_convention": "probabilities vs one-hot labels",
        "baselines": [{**{k: getattr(r, k) for k in METRIC_KEYS},
                       "name": r.name, "per_seed": r.per_seed}
                      for r in bundle.baseline_rows],
        "transformers": [{**{k: getattr(r, k) for k in METRIC_KEYS},
                          "name": r.name, "per_seed": r.per_seed}
                         for r in bundle.transformer_rows],
        "incomplete": bundle.incomplete,
        "metadata": bundle.metadata,
    }
    path = out / "report.json"
    path.write_text(json.dumps(report, indent=2), encoding="utf-8")
    written.append(path)
    return written


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ReportBundle:
    """Full pipeline: prep, train, stack, evaluate, emit."""
    out = Path(out_dir if out_dir is not None else cfg["output.dir"])
    started = time.time()
    stage_prep(cfg, out)
    failures = stage_train(cfg, out)
    failures += stage_stack(cfg, out)
    bundle = stage_evaluate(cfg, out, failures)
    bundle.metadata = {"started_unix": started,
                       "duration_seconds": time.time() - started}
    emit_report(bundle, out)
    return bundle
