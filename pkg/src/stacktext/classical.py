"""The six TF-IDF baseline classifiers: linear SVM, logistic regression,
passive-aggressive, random forest, and level-wise / leaf-wise gradient
boosting.

All kinds expose the same contract: train on sparse feature vectors plus
integer labels, emit a row-stochastic probability matrix, predict by
row argmax (ties to the lowest index, which for two classes matches the
"probability >= 0.5 means class 1" threshold rule on the class-1 column).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import SparseVector, to_dense_matrix
from .trees import (TreeNode, build_boosted_tree, build_gini_tree,
                    predict_tree, tree_from_dict, tree_to_dict)

KINDS = ("LSVM", "LR", "RF", "GB", "LGBM", "PAC")


class ClassicalError(ValueError):
    pass


@dataclass
class TrainSpec:
    epochs: int = 50
    learning_rate: float = 0.1
    regularization: float = 1e-4
    tree_count: int = 100
    max_depth: int = 12
    boost_depth: int = 4
    max_leaves: int = 31
    pa_aggressiveness: float = float("inf")  # cap on tau (PA-I); inf = classic PA
    bootstrap: bool = True
    feature_subsample: bool = True
    seed: int = 0


@dataclass
class ClassicalModel:
    kind: str
    label_count: int
    feature_count: int
    weights: np.ndarray | None = None  # C x D (or 1 x D binary margin kinds)
    bias: np.ndarray | None = None
    trees: list = field(default_factory=list)  # RF: [TreeNode]; GB/LGBM: [[TreeNode per class]]
    base_score: np.ndarray | None = None  # GB/LGBM initial log-odds
    shrinkage: float = 0.1


def _validate_xy(X, y):
    if len(X) == 0 or len(X) != len(y):
        raise ClassicalError("empty input or X/y length mismatch")
    y = np.asarray(y, dtype=np.int64)
    classes = np.unique(y)
    if classes.size < 2:
        raise ClassicalError("training data contains a single class")
    return y, int(y.max()) + 1


def _dense(X: list[SparseVector], dim: int) -> np.ndarray:
    M = to_dense_matrix(X, dim)
    if not np.all(np.isfinite(M)):
        raise ClassicalError("non-finite feature values")
    return M


def _feature_dim(X: list[SparseVector]) -> int:
    return 1 + max((max(v.indices) for v in X if v.indices), default=-1)


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


# ---------------------------------------------------------------------------
# linear kinds


def _train_lr(M, y, num_classes, spec):
    n, d = M.shape
    W = np.zeros((num_classes, d))
    b = np.zeros(num_classes)
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    for epoch in range(spec.epochs):
        lr = spec.learning_rate / (1.0 + epoch)
        P = _softmax(M @ W.T + b)
        G = (P - onehot) / n  # N x C
        W -= lr * (G.T @ M + spec.regularization * W)
        b -= lr * G.sum(axis=0)
    return W, b


def lr_gradient(W, b, M, y, regularization=0.0):
    """Analytic gradient of mean softmax cross-entropy; used by tests to
    check against finite differences."""
    n = M.shape[0]
    num_classes = W.shape[0]
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    P = _softmax(M @ W.T + b)
    G = (P - onehot) / n
    return G.T @ M + regularization * W, G.sum(axis=0)


def lr_loss(W, b, M, y, regularization=0.0):
    P = _softmax(M @ W.T + b)
    picked = np.clip(P[np.arange(len(y)), y], 1e-300, None)
    return -np.mean(np.log(picked)) + 0.5 * regularization * np.sum(W * W)


def _train_lsvm_binary(M, ypm, spec, rng):
    """Averaged stochastic subgradient descent on L2-regularized hinge loss.
    ypm is in {-1, +1}."""
    n, d = M.shape
    w = np.zeros(d)
    b = 0.0
    w_avg = np.zeros(d)
    b_avg = 0.0
    t = 0
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for i in order:
            t += 1
            lr = spec.learning_rate / (1.0 + spec.regularization * spec.learning_rate * t)
            margin = ypm[i] * (M[i] @ w + b)
            w *= (1.0 - lr * spec.regularization)
            if margin < 1.0:
                w += lr * ypm[i] * M[i]
                b += lr * ypm[i]
            w_avg += (w - w_avg) / t
            b_avg += (b - b_avg) / t
    return w_avg, b_avg


def _train_pac_binary(M, ypm, spec, rng):
    """PA-I updates: tau = min(C, loss / ||x||^2), applied on margin violations."""
    n, d = M.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for i in order:
            loss = max(0.0, 1.0 - ypm[i] * (M[i] @ w + b))
            if loss > 0.0:
                sq = M[i] @ M[i] + 1.0  # +1 for the bias coordinate
                tau = min(spec.pa_aggressiveness, loss / sq)
                w += tau * ypm[i] * M[i]
                b += tau * ypm[i]
    return w, b


def _train_margin_ovr(M, y, num_classes, spec, binary_trainer):
    rng = np.random.default_rng(spec.seed)
    if num_classes == 2:
        ypm = np.where(y == 1, 1.0, -1.0)
        w, b = binary_trainer(M, ypm, spec, rng)
        return w[None, :], np.array([b])
    rows_w, rows_b = [], []
    for c in range(num_classes):
        ypm = np.where(y == c, 1.0, -1.0)
        w, b = binary_trainer(M, ypm, spec, np.random.default_rng(spec.seed + c))
        rows_w.append(w)
        rows_b.append(b)
    return np.stack(rows_w), np.array(rows_b)


# ---------------------------------------------------------------------------
# tree kinds


def _train_rf(M, y, num_classes, spec):
    rng = np.random.default_rng(spec.seed)
    n = M.shape[0]
    trees = []
    for _ in range(spec.tree_count):
        tree_rng = np.random.default_rng(rng.integers(0, 2**63))
        rows = tree_rng.integers(0, n, size=n) if spec.bootstrap else np.arange(n)
        trees.append(build_gini_tree(M[rows], y[rows], num_classes,
                                     spec.max_depth, tree_rng,
                                     feature_subsample=spec.feature_subsample))
    return trees


def _train_gb(M, y, num_classes, spec, growth):
    n = M.shape[0]
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    priors = np.clip(onehot.mean(axis=0), 1e-12, None)
    base = np.log(priors)
    F = np.tile(base, (n, 1))
    rounds = []
    for _ in range(spec.tree_count):
        P = _softmax(F)
        per_class = []
        for c in range(num_classes):
            g = P[:, c] - onehot[:, c]
            h = np.maximum(P[:, c] * (1.0 - P[:, c]), 1e-12)
            tree = build_boosted_tree(M, g, h, growth=growth,
                                      max_depth=spec.boost_depth,
                                      max_leaves=spec.max_leaves)
            F[:, c] += spec.learning_rate * predict_tree(tree, M)
            per_class.append(tree)
        rounds.append(per_class)
    return rounds, base


def train_classical(kind: str, X: list[SparseVector], y, spec: TrainSpec,
                    feature_count: int | None = None) -> ClassicalModel:
    if kind not in KINDS:
        raise ClassicalError(f"unknown classifier kind {kind!r}")
    y, num_classes = _validate_xy(X, y)
    dim = feature_count if feature_count is not None else _feature_dim(X)
    M = _dense(X, dim)
    model = ClassicalModel(kind=kind, label_count=num_classes, feature_count=dim,
                           shrinkage=spec.learning_rate)
    if kind == "LR":
        model.weights, model.bias = _train_lr(M, y, num_classes, spec)
    elif kind == "LSVM":
        model.weights, model.bias = _train_margin_ovr(M, y, num_classes, spec,
                                                      _train_lsvm_binary)
    elif kind == "PAC":
        model.weights, model.bias = _train_margin_ovr(M, y, num_classes, spec,
                                                      _train_pac_binary)
    elif kind == "RF":
        model.trees = _train_rf(M, y, num_classes, spec)
    else:  # GB | LGBM
        growth = "leaf" if kind == "LGBM" else "level"
        model.trees, model.base_score = _train_gb(M, y, num_classes, spec, growth)
    return model


def decision_scores(model: ClassicalModel, X: list[SparseVector]) -> np.ndarray:
    M = _dense(X, model.feature_count)
    n = M.shape[0]
    c = model.label_count
    if model.kind in ("LR", "LSVM", "PAC"):
        return M @ model.weights.T + model.bias
    if model.kind == "RF":
        acc = np.zeros((n, c))
        for tree in model.trees:
            acc += predict_tree(tree, M)
        return acc / len(model.trees)
    # GB | LGBM: accumulated boosted scores
    F = np.tile(model.base_score, (n, 1))
    for per_class in model.trees:
        for ci, tree in enumerate(per_class):
            F[:, ci] += model.shrinkage * predict_tree(tree, M)
    return F


def predict_proba(model: ClassicalModel, X: list[SparseVector]) -> np.ndarray:
    scores = decision_scores(model, X)
    if model.kind == "RF":
        # leaf class-frequency averages are already probabilities
        return scores
    if model.kind in ("LSVM", "PAC") and model.weights.shape[0] == 1:
        p1 = _sigmoid(scores[:, 0])
        return np.column_stack([1.0 - p1, p1])
    if model.kind == "LR" and model.weights.shape[0] == model.label_count:
        return _softmax(scores)
    return _softmax(scores)


def predict(model: ClassicalModel, X: list[SparseVector]) -> np.ndarray:
    return np.argmax(predict_proba(model, X), axis=1)


# ---------------------------------------------------------------------------
# persistence (versioned JSON container)

FORMAT_VERSION = 1


def save_classical(model: ClassicalModel, path) -> None:
    doc = {
        "format": "stacktext-classical",
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "label_count": model.label_count,
        "feature_count": model.feature_count,
        "shrinkage": model.shrinkage,
        "weights": None if model.weights is None else model.weights.tolist(),
        "bias": None if model.bias is None else model.bias.tolist(),
        "base_score": None if model.base_score is None else model.base_score.tolist(),
    }
    if model.kind == "RF":
        doc["trees"] = [tree_to_dict(t) for t in model.trees]
    elif model.kind in ("GB", "LGBM"):
        doc["trees"] = [[tree_to_dict(t) for t in rnd] for rnd in model.trees]
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_classical(path) -> ClassicalModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "stacktext-classical" or doc.get("version") != FORMAT_VERSION:
        raise ClassicalError(f"unsupported model container in {path}")
    model = ClassicalModel(kind=doc["kind"], label_count=doc["label_count"],
                           feature_count=doc["feature_count"],
                           shrinkage=doc["shrinkage"])
    if doc["weights"] is not None:
        model.weights = np.asarray(doc["weights"], dtype=np.float64)
    if doc["bias"] is not None:
        model.bias = np.asarray(doc["bias"], dtype=np.float64)
    if doc["base_score"] is not None:
        model.base_score = np.asarray(doc["base_score"], dtype=np.float64)
    if model.kind == "RF":
        model.trees = [tree_from_dict(t) for t in doc["trees"]]
    elif model.kind in ("GB", "LGBM"):
        model.trees = [[tree_from_dict(t) for t in rnd] for rnd in doc["trees"]]
    return model
