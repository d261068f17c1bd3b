"""Stacking orchestrator: heterogeneous base classifiers, out-of-fold
meta-features, and a meta-level classifier (roberta-like transformer head
over projected probability tokens, or multinomial logistic regression).

Base adapters own their whole feature path (preprocessing, TF-IDF or BPE
vocabulary, model weights), so refitting a base inside a fold never sees
held-out rows at any stage. Every stack_train run performs a programmatic
leak audit over the fold bookkeeping.
"""

from __future__ import annotations

import json
import math
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import classical, features, neural, pretrain, textprep, tokenizer
from .corpus import Dataset, LabelMap
from .neural import LossCurve

DEFAULT_FOLDS = 5


class EnsembleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# base adapters


@dataclass
class ClassicalBaseSpec:
    """A TF-IDF classical classifier as a stacking base."""

    kind: str
    train_spec: classical.TrainSpec = field(default_factory=classical.TrainSpec)
    clean_config: textprep.CleanConfig = field(default_factory=textprep.CleanConfig)
    min_df: int = 1

    @property
    def name(self) -> str:
        return f"classical:{self.kind}"

    def fit(self, texts: list[str], labels: np.ndarray, num_classes: int,
            seed: int) -> "ClassicalBasePredictor":
        token_lists = [textprep.preprocess_pipeline(t, self.clean_config)
                       for t in texts]
        tfidf = features.fit_tfidf(token_lists, min_df=self.min_df)
        X = features.transform_corpus(tfidf, token_lists)
        spec = replace(self.train_spec, seed=seed)
        model = classical.train_classical(self.kind, X, labels, spec,
                                          feature_count=tfidf.dim)
        if model.label_count < num_classes:
            model.label_count = num_classes  # pad missing trailing classes
        return ClassicalBasePredictor(self, tfidf, model, num_classes)


@dataclass
class ClassicalBasePredictor:
    spec: ClassicalBaseSpec
    tfidf: features.TfidfModel
    model: classical.ClassicalModel
    num_classes: int

    def predict_proba(self, texts: list[str]) -> np.ndarray:
        token_lists = [textprep.preprocess_pipeline(t, self.spec.clean_config)
                       for t in texts]
        X = features.transform_corpus(self.tfidf, token_lists)
        probs = classical.predict_proba(self.model, X)
        if probs.shape[1] < self.num_classes:
            pad = np.zeros((probs.shape[0], self.num_classes - probs.shape[1]))
            probs = np.hstack([probs, pad])
        return probs


@dataclass
class TransformerBaseSpec:
    """A toy transformer encoder (with optional lineage pretraining) as a
    stacking base. Lineage wiring: bert-like = static MLM, roberta-like =
    dynamic MLM, electra-like = replaced token detection, distil-like =
    distillation from a freshly trained bert-like teacher."""

    lineage: str = "bert-like"
    scale: str = "desk"
    max_len: int = 32
    vocab_size: int = 300
    epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 32
    do_pretrain: bool = False
    pretrain_epochs: int = 3
    masking: pretrain.MaskingSpec = field(default_factory=pretrain.MaskingSpec)
    distill_spec: pretrain.DistillSpec = field(default_factory=pretrain.DistillSpec)
    clean_config: textprep.CleanConfig | None = None

    @property
    def name(self) -> str:
        return f"transformer:{self.lineage}"

    def _prep(self, texts: list[str]) -> list[str]:
        if self.clean_config is None:
            return texts
        return [" ".join(textprep.preprocess_pipeline(t, self.clean_config))
                for t in texts]

    def _config(self, num_classes: int) -> neural.TransformerConfig:
        cfg = neural.preset(self.lineage, self.scale)
        return replace(cfg, max_len=self.max_len, vocab_size=self.vocab_size,
                       num_classes=num_classes)

    def fit(self, texts: list[str], labels: np.ndarray, num_classes: int,
            seed: int) -> "TransformerBasePredictor":
        prepped = self._prep(texts)
        cfg = self._config(num_classes)
        bpe = tokenizer.train_bpe(prepped, vocab_size=self.vocab_size,
                                  mode=cfg.tokenizer_mode, seed=seed)
        ids, mask = encode_batch(bpe, prepped, self.max_len)
        labels = np.asarray(labels, dtype=np.int64)

        # deterministic small validation slice for the loss curve
        rng = np.random.default_rng(seed)
        n = len(prepped)
        n_val = max(1, n // 10)
        perm = rng.permutation(n)
        va, tr = perm[:n_val], perm[n_val:]

        model = self._build_encoder(cfg, ids, mask, labels, seed)
        model, curve = neural.train_classifier(
            model, (ids[tr], mask[tr], labels[tr]), (ids[va], mask[va], labels[va]),
            epochs=self.epochs, lr=self.lr, batch_size=self.batch_size, seed=seed)
        return TransformerBasePredictor(self, bpe, model, curve)

    def _build_encoder(self, cfg, ids, mask, labels, seed):
        model = neural.init_transformer(cfg, seed)
        if not self.do_pretrain:
            return model
        if self.lineage in ("bert-like", "roberta-like"):
            spec = replace(self.masking, dynamic=(self.lineage == "roberta-like"))
            model, _ = pretrain.mlm_pretrain(model, ids, mask, spec,
                                             epochs=self.pretrain_epochs,
                                             lr=self.lr, seed=seed)
        elif self.lineage == "electra-like":
            gen_cfg = replace(cfg, layers=max(1, cfg.layers // 2))
            generator = neural.init_transformer(gen_cfg, seed + 1)
            model, _ = pretrain.rtd_pretrain(generator, model, ids, mask,
                                             self.masking,
                                             epochs=self.pretrain_epochs,
                                             lr=self.lr, seed=seed)
        elif self.lineage == "distil-like":
            teacher_cfg = replace(neural.preset("bert-like", self.scale),
                                  max_len=cfg.max_len, vocab_size=cfg.vocab_size,
                                  num_classes=cfg.num_classes)
            teacher = neural.init_transformer(teacher_cfg, seed + 1)
            teacher, _ = neural.train_classifier(
                teacher, (ids, mask, labels), (ids, mask, labels),
                epochs=self.pretrain_epochs, lr=self.lr,
                batch_size=self.batch_size, seed=seed)
            model, _ = pretrain.distill(teacher, cfg, ids, mask, labels,
                                        self.distill_spec,
                                        epochs=self.pretrain_epochs,
                                        lr=self.lr, seed=seed)
        return model


@dataclass
class TransformerBasePredictor:
    spec: TransformerBaseSpec
    bpe: tokenizer.BpeModel
    model: neural.TransformerModel
    curve: LossCurve

    def predict_proba(self, texts: list[str]) -> np.ndarray:
        prepped = self.spec._prep(texts)
        ids, mask = encode_batch(self.bpe, prepped, self.spec.max_len)
        return neural.nn_predict_proba(self.model, ids, mask)


def encode_batch(bpe: tokenizer.BpeModel, texts: list[str], max_len: int):
    seqs = [tokenizer.encode(bpe, t, max_len) for t in texts]
    ids = np.array([s.ids for s in seqs], dtype=np.int64)
    mask = np.array([s.attention_mask for s in seqs], dtype=np.float64)
    return ids, mask


# ---------------------------------------------------------------------------
# meta level


@dataclass
class MetaSpec:
    kind: str = "transformer-head"  # "transformer-head" | "logistic"
    hidden: int = 16
    layers: int = 2
    heads: int = 2
    epochs: int = 60
    lr: float = 1e-2
    regularization: float = 1e-4


@dataclass
class StackSpec:
    base_specs: list
    meta_spec: MetaSpec = field(default_factory=MetaSpec)
    folds: int = DEFAULT_FOLDS
    seed: int = 0
    leak_free: bool = True

    def __post_init__(self):
        if len(self.base_specs) < 2:
            raise EnsembleError("need at least 2 base specs")
        if self.folds < 2:
            raise EnsembleError("folds must be >= 2")


def meta_features(base_predictions: list[np.ndarray]) -> np.ndarray:
    if not base_predictions:
        raise EnsembleError("no base predictions")
    n, c = base_predictions[0].shape
    for i, p in enumerate(base_predictions):
        if p.shape != (n, c):
            raise EnsembleError(
                f"base {i} prediction shape {p.shape} != {(n, c)}")
    return np.hstack(base_predictions)


@dataclass
class MetaModel:
    kind: str
    num_bases: int
    num_classes: int
    lr_model: classical.ClassicalModel | None = None
    tf_model: neural.TransformerModel | None = None

    def predict_proba(self, M: np.ndarray) -> np.ndarray:
        if self.kind == "logistic":
            scores = M @ self.lr_model.weights.T + self.lr_model.bias
            return _softmax(scores)
        blocks = M.reshape(M.shape[0], self.num_bases, self.num_classes)
        logits = _meta_tf_forward(self.tf_model, blocks)[0]
        return _softmax(logits)

    def block_weight_norms(self) -> np.ndarray:
        """L2 norm of the logistic weights per base block (inspectability)."""
        if self.kind != "logistic":
            raise EnsembleError("block norms are defined for the logistic meta")
        W = self.lr_model.weights
        return np.array([
            np.linalg.norm(W[:, b * self.num_classes:(b + 1) * self.num_classes])
            for b in range(self.num_bases)])


def _softmax(scores):
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _meta_tf_forward(model, blocks, with_cache=False):
    """blocks: (N, B, C) probability tokens -> logits via projection +
    roberta-like encoder + position-0 classification head."""
    p = model.params
    b_tokens = blocks.shape[1]
    x0 = blocks @ p["proj.w"] + p["proj.b"] + p["pos_emb"][None, :b_tokens, :]
    mask = np.ones(blocks.shape[:2], dtype=np.float64)
    hidden, cache = neural.encoder_forward(model, x0, mask)
    pooled = hidden[:, 0, :]
    logits = pooled @ p["head.w"] + p["head.b"]
    if with_cache:
        return logits, pooled, hidden, cache
    return logits, pooled


def _meta_tf_loss_and_grads(model, blocks, y):
    n = blocks.shape[0]
    logits, pooled, hidden, cache = _meta_tf_forward(model, blocks, with_cache=True)
    probs = _softmax(logits)
    picked = np.clip(probs[np.arange(n), y], 1e-300, None)
    loss = -float(np.mean(np.log(picked)))
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    grads["head.w"] += pooled.T @ dlogits
    grads["head.b"] += dlogits.sum(axis=0)
    dhidden = np.zeros_like(hidden)
    dhidden[:, 0, :] = dlogits @ model.params["head.w"].T
    dx0 = neural.encoder_backward(model, cache, dhidden, grads)
    grads["proj.w"] += np.einsum("nbc,nbh->ch", blocks, dx0)
    grads["proj.b"] += dx0.sum(axis=(0, 1))
    grads["pos_emb"][:blocks.shape[1]] += dx0.sum(axis=0)
    return loss, grads


def _meta_cce(probs, y):
    picked = np.clip(probs[np.arange(len(y)), y], 1e-300, None)
    return -float(np.mean(np.log(picked)))


def build_meta(meta_spec: MetaSpec, M: np.ndarray, y: np.ndarray,
               num_bases: int, num_classes: int, seed: int = 0,
               val: tuple[np.ndarray, np.ndarray] | None = None
               ) -> tuple[MetaModel, LossCurve]:
    y = np.asarray(y, dtype=np.int64)
    if M.shape[0] != y.shape[0] or M.shape[1] != num_bases * num_classes:
        raise EnsembleError("meta matrix shape disagrees with labels/spec")
    curve = LossCurve()
    if val is None:
        M_val, y_val = M, y
    else:
        M_val, y_val = val[0], np.asarray(val[1], dtype=np.int64)

    if meta_spec.kind == "logistic":
        W = np.zeros((num_classes, M.shape[1]))
        b = np.zeros(num_classes)
        for epoch in range(meta_spec.epochs):
            lr = meta_spec.lr / (1.0 + 0.01 * epoch)
            gw, gb = classical.lr_gradient(W, b, M, y, meta_spec.regularization)
            W -= lr * gw
            b -= lr * gb
            train_loss = classical.lr_loss(W, b, M, y)
            val_loss = classical.lr_loss(W, b, M_val, y_val)
            curve.append(train_loss, val_loss)
        lr_model = classical.ClassicalModel(kind="LR", label_count=num_classes,
                                            feature_count=M.shape[1],
                                            weights=W, bias=b)
        return MetaModel(kind="logistic", num_bases=num_bases,
                         num_classes=num_classes, lr_model=lr_model), curve

    if meta_spec.kind != "transformer-head":
        raise EnsembleError(f"unknown meta kind {meta_spec.kind!r}")

    cfg = neural.TransformerConfig(
        layers=meta_spec.layers, hidden=meta_spec.hidden, heads=meta_spec.heads,
        max_len=max(num_bases, 2), vocab_size=tokenizer.NUM_SPECIALS + 1,
        num_classes=num_classes, lineage="roberta-like", dropout=0.0)
    model = neural.init_transformer(cfg, seed)
    rng = np.random.default_rng(seed)
    model.params["proj.w"] = rng.normal(0.0, 0.02, size=(num_classes, meta_spec.hidden))
    model.params["proj.b"] = np.zeros(meta_spec.hidden)
    opt = neural.Adam(model.params, lr=meta_spec.lr)
    blocks = M.reshape(-1, num_bases, num_classes)
    blocks_val = M_val.reshape(-1, num_bases, num_classes)
    meta = MetaModel(kind="transformer-head", num_bases=num_bases,
                     num_classes=num_classes, tf_model=model)
    for epoch in range(meta_spec.epochs):
        loss, grads = _meta_tf_loss_and_grads(model, blocks, y)
        if not math.isfinite(loss):
            raise EnsembleError(f"meta training diverged at epoch {epoch}")
        opt.step(model.params, grads)
        train_loss = _meta_cce(meta.predict_proba(M), y)
        val_loss = _meta_cce(meta.predict_proba(M_val), y_val)
        curve.append(train_loss, val_loss)
    return meta, curve


# ---------------------------------------------------------------------------
# stacking


@dataclass
class StackedModel:
    spec: StackSpec
    label_map: LabelMap
    base_predictors: list
    meta: MetaModel
    fold_assignment: np.ndarray  # fold id per training row
    provenance: dict = field(default_factory=dict)


def _stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    folds = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        for j, row in enumerate(idx):
            folds[row] = j % k
    return folds


def stack_train(spec: StackSpec, train: Dataset, val: Dataset
                ) -> tuple[StackedModel, LossCurve]:
    label_map = LabelMap.from_labels(train.labels())
    c = label_map.num_classes
    if c < 2:
        raise EnsembleError("training data has fewer than 2 classes")
    for d in val.documents:
        if d.label not in label_map.name_to_id:
            raise EnsembleError(f"validation label {d.label!r} unseen in training")
    texts = train.texts()
    y = np.array([label_map.id_of(d.label) for d in train.documents], dtype=np.int64)
    y_val = np.array([label_map.id_of(d.label) for d in val.documents], dtype=np.int64)
    n = len(texts)

    rng = np.random.default_rng(spec.seed)
    folds = _stratified_folds(y, spec.folds, rng)
    for f in range(spec.folds):
        if np.unique(y[folds != f]).size < c:
            raise EnsembleError(f"fold {f} complement is missing a class")

    oof_blocks: list[np.ndarray] = []
    audit: list[dict] = []
    for b, base in enumerate(spec.base_specs):
        block = np.zeros((n, c))
        if spec.leak_free:
            for f in range(spec.folds):
                fit_rows = np.flatnonzero(folds != f)
                held_rows = np.flatnonzero(folds == f)
                try:
                    predictor = base.fit([texts[i] for i in fit_rows], y[fit_rows],
                                         c, seed=spec.seed + 1000 * b + f)
                except Exception as exc:
                    raise EnsembleError(f"base {b} ({base.name}) failed on fold {f}: {exc}") from exc
                block[held_rows] = predictor.predict_proba(
                    [texts[i] for i in held_rows])
                audit.append({"base": b, "fold": f,
                              "trained_on": fit_rows, "predicted": held_rows})
        else:
            predictor = base.fit(texts, y, c, seed=spec.seed + 1000 * b)
            block[:] = predictor.predict_proba(texts)
            audit.append({"base": b, "fold": -1,
                          "trained_on": np.arange(n), "predicted": np.arange(n)})
        oof_blocks.append(block)

    if spec.leak_free:
        assert_leak_free(audit, n, len(spec.base_specs))

    # deployment bases on the full training set
    deployed = []
    for b, base in enumerate(spec.base_specs):
        try:
            deployed.append(base.fit(texts, y, c, seed=spec.seed + 1000 * b))
        except Exception as exc:
            raise EnsembleError(f"base {b} ({base.name}) failed on deployment fit: {exc}") from exc

    M = meta_features(oof_blocks)
    val_blocks = [p.predict_proba(val.texts()) for p in deployed]
    M_val = meta_features(val_blocks)
    meta, curve = build_meta(spec.meta_spec, M, y, len(spec.base_specs), c,
                             seed=spec.seed, val=(M_val, y_val))
    model = StackedModel(
        spec=spec, label_map=label_map, base_predictors=deployed, meta=meta,
        fold_assignment=folds,
        provenance={"seed": spec.seed, "folds": spec.folds,
                    "leak_free": spec.leak_free,
                    "loss_kind": "bce" if c == 2 else "cce",
                    "bases": [b.name for b in spec.base_specs]})
    return model, curve


def assert_leak_free(audit: list[dict], n_rows: int, n_bases: int) -> None:
    """Prove from the fold bookkeeping that every meta-feature row came from
    a base model that never trained on that row, and that each base covered
    every row exactly once."""
    for b in range(n_bases):
        covered = np.zeros(n_rows, dtype=np.int64)
        for rec in audit:
            if rec["base"] != b:
                continue
            trained = set(rec["trained_on"].tolist())
            for row in rec["predicted"]:
                if int(row) in trained:
                    raise EnsembleError(
                        f"leak: base {b} predicted row {row} it trained on")
                covered[row] += 1
        if not np.all(covered == 1):
            raise EnsembleError(f"base {b} out-of-fold coverage is not exactly 1")


def stack_predict(model: StackedModel, texts: list[str]) -> np.ndarray:
    blocks = [p.predict_proba(texts) for p in model.base_predictors]
    return model.meta.predict_proba(meta_features(blocks))


def stack_predict_labels(model: StackedModel, texts: list[str]) -> list[str]:
    probs = stack_predict(model, texts)
    return [model.label_map.name_of(int(i)) for i in np.argmax(probs, axis=1)]


# ---------------------------------------------------------------------------
# persistence


def _clean_to_dict(cfg: textprep.CleanConfig | None) -> dict | None:
    if cfg is None:
        return None
    return {"lowercase": cfg.lowercase, "strip_urls": cfg.strip_urls,
            "strip_handles": cfg.strip_handles,
            "strip_numbers": cfg.strip_numbers,
            "strip_symbols": cfg.strip_symbols,
            "stopwords": sorted(cfg.stopword_list)}


def _clean_from_dict(d: dict | None) -> textprep.CleanConfig | None:
    if d is None:
        return None
    return textprep.CleanConfig(
        lowercase=d["lowercase"], strip_urls=d["strip_urls"],
        strip_handles=d["strip_handles"], strip_numbers=d["strip_numbers"],
        strip_symbols=d["strip_symbols"],
        stopword_list=frozenset(d["stopwords"]))


def save_stacked(model: StackedModel, out_dir) -> None:
    out = Path(out_dir)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    manifest = {
        "format": "stacktext-stacked", "version": 1,
        "provenance": {k: v for k, v in model.provenance.items()},
        "labels": model.label_map.names(),
        "fold_assignment": model.fold_assignment.tolist(),
        "meta_kind": model.meta.kind,
        "num_bases": model.meta.num_bases,
        "num_classes": model.meta.num_classes,
        "bases": [],
    }
    for i, p in enumerate(model.base_predictors):
        base_dir = out / f"base_{i}"
        base_dir.mkdir()
        if isinstance(p, ClassicalBasePredictor):
            manifest["bases"].append({"type": "classical", "kind": p.spec.kind,
                                      "min_df": p.spec.min_df,
                                      "clean": _clean_to_dict(p.spec.clean_config)})
            features.save_tfidf(p.tfidf, base_dir / "tfidf.tsv")
            classical.save_classical(p.model, base_dir / "model.json")
        elif isinstance(p, TransformerBasePredictor):
            manifest["bases"].append({"type": "transformer",
                                      "lineage": p.spec.lineage,
                                      "max_len": p.spec.max_len,
                                      "clean": _clean_to_dict(p.spec.clean_config)})
            tokenizer.save_bpe(p.bpe, base_dir / "bpe.tsv")
            neural.save_transformer(p.model, base_dir / "model.npz")
        else:
            raise EnsembleError(f"base predictor {type(p).__name__} is not persistable")
    if model.meta.kind == "logistic":
        classical.save_classical(model.meta.lr_model, out / "meta.json")
    else:
        neural.save_transformer(model.meta.tf_model, out / "meta.npz")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2),
                                       encoding="utf-8")


def load_stacked(in_dir) -> StackedModel:
    root = Path(in_dir)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != "stacktext-stacked":
        raise EnsembleError(f"not a stacked-model directory: {in_dir}")
    label_map = LabelMap.from_labels(manifest["labels"])
    predictors = []
    base_specs = []
    for i, info in enumerate(manifest["bases"]):
        base_dir = root / f"base_{i}"
        if info["type"] == "classical":
            spec = ClassicalBaseSpec(kind=info["kind"], min_df=info["min_df"],
                                     clean_config=_clean_from_dict(info["clean"]))
            predictors.append(ClassicalBasePredictor(
                spec, features.load_tfidf(base_dir / "tfidf.tsv"),
                classical.load_classical(base_dir / "model.json"),
                manifest["num_classes"]))
        else:
            spec = TransformerBaseSpec(
                lineage=info["lineage"], max_len=info["max_len"],
                clean_config=_clean_from_dict(info["clean"]))
            predictors.append(TransformerBasePredictor(
                spec, tokenizer.load_bpe(base_dir / "bpe.tsv"),
                neural.load_transformer(base_dir / "model.npz"), LossCurve()))
        base_specs.append(spec)
    if manifest["meta_kind"] == "logistic":
        meta = MetaModel(kind="logistic", num_bases=manifest["num_bases"],
                         num_classes=manifest["num_classes"],
                         lr_model=classical.load_classical(root / "meta.json"))
    else:
        meta = MetaModel(kind="transformer-head", num_bases=manifest["num_bases"],
                         num_classes=manifest["num_classes"],
                         tf_model=neural.load_transformer(root / "meta.npz"))
    prov = manifest["provenance"]
    spec = StackSpec(base_specs=base_specs, folds=prov["folds"], seed=prov["seed"],
                     leak_free=prov["leak_free"])
    return StackedModel(spec=spec, label_map=label_map,
                        base_predictors=predictors, meta=meta,
                        fold_assignment=np.asarray(manifest["fold_assignment"]),
                        provenance=prov)
