"""Decision-tree building blocks for the forest and boosting classifiers.

Two tree kinds: Gini classification trees (used bagged in the random
forest) and second-order regression trees fit to gradient/hessian targets
(used by the boosting classifiers, grown level-wise or leaf-wise).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: np.ndarray | float | None = None  # leaf payload

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def predict_tree(node: TreeNode, X: np.ndarray) -> np.ndarray:
    """Vectorized traversal; returns stacked leaf payloads per row."""
    n = X.shape[0]
    first = node.value if node.is_leaf else None
    if first is not None and np.ndim(first) > 0:
        out = np.tile(np.asarray(first, dtype=np.float64), (n, 1))
        return out
    out = None
    idx = np.arange(n)
    stack = [(node, idx)]
    while stack:
        nd, rows = stack.pop()
        if rows.size == 0:
            continue
        if nd.is_leaf:
            payload = np.asarray(nd.value, dtype=np.float64)
            if out is None:
                shape = (n,) if payload.ndim == 0 else (n, payload.shape[0])
                out = np.zeros(shape, dtype=np.float64)
            out[rows] = payload
        else:
            go_left = X[rows, nd.feature] <= nd.threshold
            stack.append((nd.left, rows[go_left]))
            stack.append((nd.right, rows[~go_left]))
    return out


# ---------------------------------------------------------------------------
# Gini classification tree (random forest base learner)


def _gini_best_split(X, y, rows, features, num_classes, min_leaf):
    """Best (feature, threshold, gain) over candidate features, or None."""
    n = rows.size
    counts = np.bincount(y[rows], minlength=num_classes).astype(np.float64)
    parent_gini = 1.0 - np.sum((counts / n) ** 2)
    best = None
    for f in features:
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sy = y[rows][order]
        # cumulative class counts left of each split point
        left = np.zeros(num_classes, dtype=np.float64)
        for i in range(n - 1):
            left[sy[i]] += 1
            if sv[i] == sv[i + 1]:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            right = counts - left
            gini_l = 1.0 - np.sum((left / nl) ** 2)
            gini_r = 1.0 - np.sum((right / nr) ** 2)
            gain = parent_gini - (nl * gini_l + nr * gini_r) / n
            if gain > 1e-12 and (best is None or gain > best[2]):
                best = (f, 0.5 * (sv[i] + sv[i + 1]), gain)
    return best


def build_gini_tree(X: np.ndarray, y: np.ndarray, num_classes: int,
                    max_depth: int, rng: np.random.Generator,
                    feature_subsample: bool = True, min_leaf: int = 1) -> TreeNode:
    n_features = X.shape[1]
    k = max(1, int(np.sqrt(n_features))) if feature_subsample else n_features

    def leaf(rows):
        counts = np.bincount(y[rows], minlength=num_classes).astype(np.float64)
        return TreeNode(value=counts / counts.sum())

    def grow(rows, depth):
        if depth >= max_depth or rows.size < 2 * min_leaf or \
                np.unique(y[rows]).size == 1:
            return leaf(rows)
        feats = rng.choice(n_features, size=k, replace=False) if k < n_features \
            else np.arange(n_features)
        split = _gini_best_split(X, y, rows, np.sort(feats), num_classes, min_leaf)
        if split is None:
            return leaf(rows)
        f, thr, _ = split
        go_left = X[rows, f] <= thr
        node = TreeNode(feature=int(f), threshold=float(thr))
        node.left = grow(rows[go_left], depth + 1)
        node.right = grow(rows[~go_left], depth + 1)
        return node

    return grow(np.arange(X.shape[0]), 0)


# ---------------------------------------------------------------------------
# Second-order regression tree on gradient/hessian targets (boosting)


def _grad_best_split(X, g, h, rows, lam, min_child_weight):
    gtot = g[rows].sum()
    htot = h[rows].sum()
    parent = gtot * gtot / (htot + lam)
    best = None
    for f in range(X.shape[1]):
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sg = np.cumsum(g[rows][order])
        sh = np.cumsum(h[rows][order])
        for i in range(rows.size - 1):
            if sv[i] == sv[i + 1]:
                continue
            hl = sh[i]
            hr = htot - hl
            if hl < min_child_weight or hr < min_child_weight:
                continue
            gl = sg[i]
            gr = gtot - gl
            gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
            if gain > 1e-12 and (best is None or gain > best[2]):
                best = (f, 0.5 * (sv[i] + sv[i + 1]), gain)
    return best


def _grad_leaf_value(g, h, rows, lam):
    return float(-g[rows].sum() / (h[rows].sum() + lam))


def build_boosted_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray,
                       growth: str, max_depth: int = 4, max_leaves: int = 31,
                       lam: float = 1.0, min_child_weight: float = 1e-3) -> TreeNode:
    """growth="level" expands breadth-first to max_depth; growth="leaf"
    expands best-gain-first until max_leaves."""
    all_rows = np.arange(X.shape[0])

    if growth == "level":
        def grow(rows, depth):
            if depth >= max_depth or rows.size < 2:
                return TreeNode(value=_grad_leaf_value(g, h, rows, lam))
            split = _grad_best_split(X, g, h, rows, lam, min_child_weight)
            if split is None:
                return TreeNode(value=_grad_leaf_value(g, h, rows, lam))
            f, thr, _ = split
            go_left = X[rows, f] <= thr
            node = TreeNode(feature=int(f), threshold=float(thr))
            node.left = grow(rows[go_left], depth + 1)
            node.right = grow(rows[~go_left], depth + 1)
            return node
        return grow(all_rows, 0)

    if growth != "leaf":
        raise ValueError(f"unknown growth {growth!r}")

    # leaf-wise: priority queue of candidate splits, highest gain first
    root = TreeNode(value=_grad_leaf_value(g, h, all_rows, lam))
    heap: list = []
    counter = 0  # heapq tiebreak keeps expansion deterministic

    def push(node, rows):
        nonlocal counter
        if rows.size < 2:
            return
        split = _grad_best_split(X, g, h, rows, lam, min_child_weight)
        if split is not None:
            heapq.heappush(heap, (-split[2], counter, node, rows, split))
            counter += 1

    push(root, all_rows)
    n_leaves = 1
    while heap and n_leaves < max_leaves:
        _, _, node, rows, (f, thr, _) = heapq.heappop(heap)
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        node.feature, node.threshold, node.value = int(f), float(thr), None
        node.left = TreeNode(value=_grad_leaf_value(g, h, lrows, lam))
        node.right = TreeNode(value=_grad_leaf_value(g, h, rrows, lam))
        n_leaves += 1
        push(node.left, lrows)
        push(node.right, rrows)
    return root


def tree_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        val = node.value
        return {"value": val.tolist() if isinstance(val, np.ndarray) else val}
    return {"feature": node.feature, "threshold": node.threshold,
            "left": tree_to_dict(node.left), "right": tree_to_dict(node.right)}


def tree_from_dict(d: dict) -> TreeNode:
    if "value" in d:
        val = d["value"]
        if isinstance(val, list):
            val = np.asarray(val, dtype=np.float64)
        return TreeNode(value=val)
    return TreeNode(feature=d["feature"], threshold=d["threshold"],
                    left=tree_from_dict(d["left"]), right=tree_from_dict(d["right"]))
