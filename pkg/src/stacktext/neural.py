"""Toy-scale transformer encoder classifier with hand-derived backprop.

Pre-norm residual blocks, learned positional embeddings, multi-head scaled
dot-product attention with padding masks, GELU feed-forward, first-token
pooling into a linear classification head. Everything runs in float64
numpy; gradients are derived by hand and checked against central finite
differences (see grad_check).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf

NEG_INF = -1e30
LN_EPS = 1e-5
INIT_STD = 0.02


class NeuralError(ValueError):
    pass


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 4
    hidden: int = 64
    heads: int = 4
    ffn_multiplier: int = 4
    max_len: int = 64
    vocab_size: int = 2000
    num_classes: int = 2
    lineage: str = "bert-like"
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise NeuralError("hidden must be divisible by heads")
        if self.layers < 1:
            raise NeuralError("layers must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def ffn_dim(self) -> int:
        return self.hidden * self.ffn_multiplier

    @property
    def tokenizer_mode(self) -> str:
        return "byte" if self.lineage == "roberta-like" else "char"


LINEAGES = ("bert-like", "electra-like", "distil-like", "roberta-like")

_PAPER_PRESETS = {
    "bert-like": (12, 768, 12),
    "electra-like": (12, 768, 12),
    "distil-like": (6, 768, 12),
    "roberta-like": (12, 768, 12),
}
# desk scale keeps the 2:1 bert/distil depth ratio
_DESK_PRESETS = {
    "bert-like": (4, 64, 4),
    "electra-like": (4, 64, 4),
    "distil-like": (2, 64, 4),
    "roberta-like": (4, 64, 4),
}


def preset(lineage: str, scale: str = "desk", **overrides) -> TransformerConfig:
    if lineage not in LINEAGES:
        raise NeuralError(f"unknown lineage {lineage!r}")
    table = {"paper": _PAPER_PRESETS, "desk": _DESK_PRESETS}.get(scale)
    if table is None:
        raise NeuralError(f"unknown scale {scale!r}")
    layers, hidden, heads = table[lineage]
    cfg = TransformerConfig(layers=layers, hidden=hidden, heads=heads,
                            lineage=lineage)
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class TransformerModel:
    config: TransformerConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def clone(self) -> "TransformerModel":
        return TransformerModel(config=self.config,
                                params={k: v.copy() for k, v in self.params.items()})


@dataclass
class LossCurve:
    entries: list[tuple[float, float]] = field(default_factory=list)  # (train, val)

    def append(self, train_loss: float, val_loss: float) -> None:
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise NeuralError(f"non-finite loss at epoch {len(self.entries)}")
        self.entries.append((float(train_loss), float(val_loss)))

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        for e, (tr, va) in enumerate(self.entries):
            lines.append(f"{e},{tr!r},{va!r}")
        return "\n".join(lines) + "\n"


def init_transformer(cfg: TransformerConfig, seed: int = 0) -> TransformerModel:
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}

    def normal(*shape):
        return rng.normal(0.0, INIT_STD, size=shape)

    p["tok_emb"] = normal(cfg.vocab_size, cfg.hidden)
    p["pos_emb"] = normal(cfg.max_len, cfg.hidden)
    h, f = cfg.hidden, cfg.ffn_dim
    for i in range(cfg.layers):
        pre = f"l{i}."
        p[pre + "ln1.g"] = np.ones(h)
        p[pre + "ln1.b"] = np.zeros(h)
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = normal(h, h)
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + name] = np.zeros(h)
        p[pre + "ln2.g"] = np.ones(h)
        p[pre + "ln2.b"] = np.zeros(h)
        p[pre + "w1"] = normal(h, f)
        p[pre + "b1"] = np.zeros(f)
        p[pre + "w2"] = normal(f, h)
        p[pre + "b2"] = np.zeros(h)
    p["lnf.g"] = np.ones(h)
    p["lnf.b"] = np.zeros(h)
    p["head.w"] = normal(h, cfg.num_classes)
    p["head.b"] = np.zeros(cfg.num_classes)
    return TransformerModel(config=cfg, params=p)


# ---------------------------------------------------------------------------
# primitive forward/backward pairs


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _gelu_fwd(x):
    phi = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    return x * phi, (x, phi)


def _gelu_bwd(dy, cache):
    x, phi = cache
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return dy * (phi + x * pdf)


def _split_heads(x, heads):
    n, L, h = x.shape
    return x.reshape(n, L, heads, h // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    n, heads, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, L, heads * dh)


def _attention_fwd(h1, mask, p, pre, cfg):
    q = _split_heads(h1 @ p[pre + "wq"] + p[pre + "bq"], cfg.heads)
    k = _split_heads(h1 @ p[pre + "wk"] + p[pre + "bk"], cfg.heads)
    v = _split_heads(h1 @ p[pre + "wv"] + p[pre + "bv"], cfg.heads)
    scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(cfg.head_dim)
    # masked key positions get -inf before the softmax
    key_mask = mask[:, None, None, :]
    scores = np.where(key_mask > 0, scores, NEG_INF)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(attn @ v)
    out = ctx @ p[pre + "wo"] + p[pre + "bo"]
    return out, (h1, q, k, v, attn, ctx)


def _attention_bwd(dout, cache, mask, p, pre, cfg, grads):
    h1, q, k, v, attn, ctx = cache
    grads[pre + "wo"] += ctx.reshape(-1, cfg.hidden).T @ dout.reshape(-1, cfg.hidden)
    grads[pre + "bo"] += dout.sum(axis=(0, 1))
    dctx = _split_heads(dout @ p[pre + "wo"].T, cfg.heads)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = attn * (dattn - np.sum(dattn * attn, axis=-1, keepdims=True))
    dscores /= math.sqrt(cfg.head_dim)
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dh1 = np.zeros_like(h1)
    flat = h1.reshape(-1, cfg.hidden)
    for name, grad in (("wq", dq), ("wk", dk), ("wv", dv)):
        g2d = _merge_heads(grad).reshape(-1, cfg.hidden)
        grads[pre + "w" + name[1]] += flat.T @ g2d
        grads[pre + "b" + name[1]] += g2d.sum(axis=0)
        dh1 += g2d.reshape(h1.shape) @ p[pre + name].T
    return dh1


def _dropout_fwd(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def _dropout_bwd(dy, keep):
    return dy if keep is None else dy * keep


# ---------------------------------------------------------------------------
# encoder stack


def encoder_forward(model: TransformerModel, x0: np.ndarray, mask: np.ndarray,
                    train: bool = False, rng: np.random.Generator | None = None):
    """Run the residual stack on already-embedded inputs x0 (N, L, H).

    Returns final hidden states (after the closing layer norm) plus the
    cache needed by encoder_backward. Dropout fires only when train=True.
    """
    cfg = model.config
    p = model.params
    drop_rng = rng if (train and cfg.dropout > 0.0) else None
    x = x0
    layer_caches = []
    for i in range(cfg.layers):
        pre = f"l{i}."
        h1, ln1_cache = _layernorm_fwd(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        attn_out, attn_cache = _attention_fwd(h1, mask, p, pre, cfg)
        attn_out, keep1 = _dropout_fwd(attn_out, cfg.dropout if drop_rng is not None else 0.0, drop_rng)
        x_mid = x + attn_out
        h2, ln2_cache = _layernorm_fwd(x_mid, p[pre + "ln2.g"], p[pre + "ln2.b"])
        z1 = h2 @ p[pre + "w1"] + p[pre + "b1"]
        a1, gelu_cache = _gelu_fwd(z1)
        ffn_out = a1 @ p[pre + "w2"] + p[pre + "b2"]
        ffn_out, keep2 = _dropout_fwd(ffn_out, cfg.dropout if drop_rng is not None else 0.0, drop_rng)
        x_next = x_mid + ffn_out
        layer_caches.append((ln1_cache, attn_cache, keep1, ln2_cache,
                             h2, gelu_cache, a1, keep2))
        x = x_next
    hidden, lnf_cache = _layernorm_fwd(x, p["lnf.g"], p["lnf.b"])
    return hidden, (layer_caches, lnf_cache, mask)


def encoder_backward(model: TransformerModel, cache, dhidden: np.ndarray,
                     grads: dict[str, np.ndarray]):
    """Backprop dhidden through the stack; returns gradient w.r.t. x0."""
    cfg = model.config
    p = model.params
    layer_caches, lnf_cache, mask = cache
    dx, dg, db = _layernorm_bwd(dhidden, lnf_cache)
    grads["lnf.g"] += dg
    grads["lnf.b"] += db
    for i in reversed(range(cfg.layers)):
        pre = f"l{i}."
        (ln1_cache, attn_cache, keep1, ln2_cache,
         h2, gelu_cache, a1, keep2) = layer_caches[i]
        dffn = _dropout_bwd(dx, keep2)
        grads[pre + "w2"] += a1.reshape(-1, cfg.ffn_dim).T @ dffn.reshape(-1, cfg.hidden)
        grads[pre + "b2"] += dffn.sum(axis=(0, 1))
        da1 = dffn @ p[pre + "w2"].T
        dz1 = _gelu_bwd(da1, gelu_cache)
        grads[pre + "w1"] += h2.reshape(-1, cfg.hidden).T @ dz1.reshape(-1, cfg.ffn_dim)
        grads[pre + "b1"] += dz1.sum(axis=(0, 1))
        dh2 = dz1 @ p[pre + "w1"].T
        dx_mid, dg2, db2 = _layernorm_bwd(dh2, ln2_cache)
        grads[pre + "ln2.g"] += dg2
        grads[pre + "ln2.b"] += db2
        dx_mid += dx  # residual
        dattn_out = _dropout_bwd(dx_mid, keep1)
        dh1 = _attention_bwd(dattn_out, attn_cache, mask, p, pre, cfg, grads)
        dx_prev, dg1, db1 = _layernorm_bwd(dh1, ln1_cache)
        grads[pre + "ln1.g"] += dg1
        grads[pre + "ln1.b"] += db1
        dx = dx_mid + dx_prev
    return dx


def embed(model: TransformerModel, ids: np.ndarray) -> np.ndarray:
    p = model.params
    return p["tok_emb"][ids] + p["pos_emb"][None, :ids.shape[1], :]


def _zero_grads(model: TransformerModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def forward(model: TransformerModel, ids: np.ndarray, mask: np.ndarray,
            train: bool = False, rng: np.random.Generator | None = None,
            with_cache: bool = False):
    """Return (logits N x C, pooled N x H); pooled is the position-0 state."""
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    if ids.shape[1] != model.config.max_len:
        raise NeuralError(
            f"sequence length {ids.shape[1]} != configured {model.config.max_len}")
    hidden, cache = encoder_forward(model, embed(model, ids), mask,
                                    train=train, rng=rng)
    pooled = hidden[:, 0, :]
    logits = pooled @ model.params["head.w"] + model.params["head.b"]
    if not np.all(np.isfinite(logits)):
        raise NeuralError("non-finite activations (training divergence)")
    if with_cache:
        return logits, pooled, hidden, cache
    return logits, pooled


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def nn_predict_proba(model: TransformerModel, ids, mask) -> np.ndarray:
    logits, _ = forward(model, ids, mask)
    return softmax(logits)


def backprop_from_logits(model: TransformerModel, ids, pooled, hidden, cache,
                         dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Backprop a classification-head logit gradient through the model."""
    grads = _zero_grads(model)
    grads["head.w"] += pooled.T @ dlogits
    grads["head.b"] += dlogits.sum(axis=0)
    dhidden = np.zeros_like(hidden)
    dhidden[:, 0, :] = dlogits @ model.params["head.w"].T
    dx0 = encoder_backward(model, cache, dhidden, grads)
    np.add.at(grads["tok_emb"], ids, dx0)
    grads["pos_emb"] += dx0.sum(axis=0)
    return grads


def classifier_loss_and_grads(model: TransformerModel, ids, mask, labels,
                              train: bool = False,
                              rng: np.random.Generator | None = None):
    """Mean softmax cross-entropy on the classification head."""
    labels = np.asarray(labels, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    n = ids.shape[0]
    logits, pooled, hidden, cache = forward(model, ids, mask, train=train,
                                            rng=rng, with_cache=True)
    probs = softmax(logits)
    picked = np.clip(probs[np.arange(n), labels], 1e-300, None)
    loss = -float(np.mean(np.log(picked)))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = backprop_from_logits(model, ids, pooled, hidden, cache, dlogits)
    return loss, grads


# ---------------------------------------------------------------------------
# Adam optimizer


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / corr1
            vhat = self.v[k] / corr2
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# supervised training


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_classifier(model: TransformerModel, train_data, val_data,
                     epochs: int = 10, lr: float = 3e-4, batch_size: int = 32,
                     seed: int = 0) -> tuple[TransformerModel, LossCurve]:
    """train_data/val_data are (ids N x L, mask N x L, labels N) triples."""
    ids_tr, mask_tr, y_tr = (np.asarray(a) for a in train_data)
    ids_va, mask_va, y_va = (np.asarray(a) for a in val_data)
    if y_tr.max() >= model.config.num_classes:
        raise NeuralError("label outside configured class count")
    model = model.clone()
    opt = Adam(model.params, lr=lr)
    rng = np.random.default_rng(seed)
    curve = LossCurve()
    for epoch in range(epochs):
        epoch_loss = 0.0
        n_batches = 0
        for idx in _batches(len(y_tr), batch_size, rng):
            loss, grads = classifier_loss_and_grads(
                model, ids_tr[idx], mask_tr[idx], y_tr[idx],
                train=True, rng=rng)
            if not math.isfinite(loss):
                raise NeuralError(f"training diverged at epoch {epoch}")
            if lr > 0:
                opt.step(model.params, grads)
            epoch_loss += loss
            n_batches += 1
        val_loss, _ = evaluate_classifier(model, ids_va, mask_va, y_va)
        curve.append(epoch_loss / max(n_batches, 1), val_loss)
    return model, curve


def evaluate_classifier(model: TransformerModel, ids, mask, labels):
    probs = nn_predict_proba(model, ids, mask)
    labels = np.asarray(labels, dtype=np.int64)
    picked = np.clip(probs[np.arange(len(labels)), labels], 1e-300, None)
    loss = -float(np.mean(np.log(picked)))
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))
    return loss, acc


# ---------------------------------------------------------------------------
# finite-difference gradient verification


def grad_check(model: TransformerModel, ids, mask, labels,
               epsilon: float = 1e-5, n_coords: int = 200,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients
    over a random coordinate sample spanning every parameter group."""
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    _, grads = classifier_loss_and_grads(model, ids, mask, labels)

    names = sorted(model.params)
    picks: list[tuple[str, int]] = []
    for name in names:  # at least one coordinate per parameter group
        size = model.params[name].size
        if name == "tok_emb":
            # sample embeddings actually used by the batch so the analytic
            # gradient is nonzero
            used = np.unique(ids)
            row = int(rng.choice(used))
            col = int(rng.integers(model.config.hidden))
            picks.append((name, row * model.config.hidden + col))
        else:
            picks.append((name, int(rng.integers(size))))
    while len(picks) < n_coords:
        name = names[int(rng.integers(len(names)))]
        if name == "tok_emb":
            used = np.unique(ids)
            row = int(rng.choice(used))
            col = int(rng.integers(model.config.hidden))
            picks.append((name, row * model.config.hidden + col))
        else:
            picks.append((name, int(rng.integers(model.params[name].size))))

    def loss_at() -> float:
        loss, _ = classifier_loss_and_grads(model, ids, mask, labels)
        return loss

    max_rel = 0.0
    for name, flat_idx in picks:
        p = model.params[name].reshape(-1)
        orig = p[flat_idx]
        p[flat_idx] = orig + epsilon
        lp = loss_at()
        p[flat_idx] = orig - epsilon
        lm = loss_at()
        p[flat_idx] = orig
        numeric = (lp - lm) / (2.0 * epsilon)
        analytic = grads[name].reshape(-1)[flat_idx]
        # floor the denominator at 1e-6: below that, central differences
        # are dominated by float64 roundoff (~|loss| * eps_mach / epsilon),
        # e.g. attention key biases whose true gradient is exactly zero
        denom = max(abs(numeric), abs(analytic), 1e-6)
        max_rel = max(max_rel, abs(numeric - analytic) / denom)
    return max_rel


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_transformer(model: TransformerModel, path, phase: str = "finetuned") -> None:
    header = {"format": "stacktext-transformer", "version": CHECKPOINT_VERSION,
              "phase": phase, "config": model.config.__dict__}
    np.savez(path, __header__=json.dumps(header),
             **{k: v for k, v in model.params.items()})


def load_transformer(path) -> TransformerModel:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format") != "stacktext-transformer":
            raise NeuralError(f"not a transformer checkpoint: {path}")
        cfg = TransformerConfig(**header["config"])
        params = {k: data[k].copy() for k in data.files if k != "__header__"}
    return TransformerModel(config=cfg, params=params)
