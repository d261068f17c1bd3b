"""Architecture-distinguishing pretraining objectives at desk scale:
masked language modeling (static or dynamic masking), replaced-token
detection, and knowledge distillation.

The MLM output projection is tied to the token embedding table; a separate
vocabulary bias is the only extra parameter. Mask sampling for epoch e
depends only on (seed, e), so dynamic masking is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neural import (Adam, TransformerConfig, TransformerModel,
                     backprop_from_logits, embed, encoder_backward,
                     encoder_forward, forward, init_transformer, softmax,
                     _zero_grads)
from .tokenizer import MASK, NUM_SPECIALS


class PretrainError(ValueError):
    pass


@dataclass(frozen=True)
class MaskingSpec:
    mask_rate: float = 0.15
    dynamic: bool = False
    mask_token_fraction: float = 0.8
    random_fraction: float = 0.1
    keep_fraction: float = 0.1

    def __post_init__(self):
        total = self.mask_token_fraction + self.random_fraction + self.keep_fraction
        if abs(total - 1.0) > 1e-9:
            raise PretrainError("masking fractions must sum to 1")
        if not 0.0 < self.mask_rate <= 1.0:
            raise PretrainError("mask_rate must be in (0, 1]")


@dataclass(frozen=True)
class DistillSpec:
    temperature: float = 2.0
    soft_weight: float = 0.5
    hard_weight: float = 0.5

    def __post_init__(self):
        if self.temperature <= 0:
            raise PretrainError("temperature must be positive")
        if self.soft_weight < 0 or self.hard_weight < 0 or \
                (self.soft_weight == 0 and self.hard_weight == 0):
            raise PretrainError("weights must be >= 0 and not both zero")


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def sample_masks(ids: np.ndarray, attn_mask: np.ndarray, spec: MaskingSpec,
                 seed: int, epoch: int) -> np.ndarray:
    """Boolean mask of positions selected for prediction. Position 0 (the
    sequence-start token) and padding are never maskable. Static masking
    reuses epoch 0's sample."""
    effective_epoch = epoch if spec.dynamic else 0
    rng = _epoch_rng(seed, effective_epoch)
    maskable = (attn_mask > 0)
    maskable[:, 0] = False
    draw = rng.random(ids.shape)
    return maskable & (draw < spec.mask_rate)


def corrupt_inputs(ids: np.ndarray, selected: np.ndarray, spec: MaskingSpec,
                   vocab_size: int, rng: np.random.Generator) -> np.ndarray:
    """Apply the 80/10/10 mask-token / random-token / keep split."""
    corrupted = ids.copy()
    rows, cols = np.nonzero(selected)
    u = rng.random(rows.size)
    mask_cut = spec.mask_token_fraction
    rand_cut = mask_cut + spec.random_fraction
    to_mask = u < mask_cut
    to_rand = (u >= mask_cut) & (u < rand_cut)
    corrupted[rows[to_mask], cols[to_mask]] = MASK
    n_rand = int(to_rand.sum())
    if n_rand:
        corrupted[rows[to_rand], cols[to_rand]] = rng.integers(
            NUM_SPECIALS, vocab_size, size=n_rand)
    return corrupted


def _ensure_mlm_bias(model: TransformerModel) -> None:
    if "mlm.b" not in model.params:
        model.params["mlm.b"] = np.zeros(model.config.vocab_size)


def mlm_loss_and_grads(model: TransformerModel, corrupted: np.ndarray,
                       attn_mask: np.ndarray, targets: np.ndarray,
                       selected: np.ndarray):
    """Cross-entropy over the vocabulary at selected positions only.

    The output projection is the transpose of the token embedding table,
    so tok_emb receives gradient from both the lookup and the projection.
    """
    p = model.params
    hidden, cache = encoder_forward(model, embed(model, corrupted), attn_mask)
    h_sel = hidden[selected]  # (M, H)
    m = h_sel.shape[0]
    if m == 0:
        raise PretrainError("mask_rate yielded zero masked positions")
    logits = h_sel @ p["tok_emb"].T + p["mlm.b"]
    probs = softmax(logits)
    y = targets[selected]
    picked = np.clip(probs[np.arange(m), y], 1e-300, None)
    loss = -float(np.mean(np.log(picked)))
    dlogits = probs.copy()
    dlogits[np.arange(m), y] -= 1.0
    dlogits /= m
    grads = _zero_grads(model)
    grads["mlm.b"] += dlogits.sum(axis=0)
    grads["tok_emb"] += dlogits.T @ h_sel  # projection side of the tie
    dhidden = np.zeros_like(hidden)
    dhidden[selected] = dlogits @ p["tok_emb"]
    dx0 = encoder_backward(model, cache, dhidden, grads)
    np.add.at(grads["tok_emb"], corrupted, dx0)
    grads["pos_emb"] += dx0.sum(axis=0)
    return loss, grads


def mlm_pretrain(model: TransformerModel, ids: np.ndarray, attn_mask: np.ndarray,
                 spec: MaskingSpec, epochs: int = 5, lr: float = 3e-4,
                 batch_size: int = 32, seed: int = 0
                 ) -> tuple[TransformerModel, list[float]]:
    ids = np.asarray(ids, dtype=np.int64)
    attn_mask = np.asarray(attn_mask, dtype=np.float64)
    model = model.clone()
    _ensure_mlm_bias(model)
    opt = Adam(model.params, lr=lr)
    order_rng = np.random.default_rng(seed)
    losses = []
    for epoch in range(epochs):
        selected = sample_masks(ids, attn_mask, spec, seed, epoch)
        if not selected.any():
            raise PretrainError("mask_rate yielded zero masked positions on every sequence")
        corrupted = corrupt_inputs(ids, selected, spec, model.config.vocab_size,
                                   _epoch_rng(seed + 1, epoch if spec.dynamic else 0))
        n = ids.shape[0]
        perm = order_rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            if not selected[idx].any():
                continue
            loss, grads = mlm_loss_and_grads(model, corrupted[idx], attn_mask[idx],
                                             ids[idx], selected[idx])
            if not math.isfinite(loss):
                raise PretrainError(f"MLM diverged at epoch {epoch}")
            opt.step(model.params, grads)
            epoch_loss += loss
            n_batches += 1
        losses.append(epoch_loss / max(n_batches, 1))
    return model, losses


# ---------------------------------------------------------------------------
# replaced token detection


def _ensure_rtd_head(model: TransformerModel) -> None:
    if "rtd.w" not in model.params:
        rng = np.random.default_rng(0)
        model.params["rtd.w"] = rng.normal(0.0, 0.02, size=model.config.hidden)
        model.params["rtd.b"] = np.zeros(1)


def sample_replacements(generator: TransformerModel, ids: np.ndarray,
                        attn_mask: np.ndarray, selected: np.ndarray,
                        spec: MaskingSpec, rng: np.random.Generator
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Fill selected positions with generator samples; the label vector is
    exactly the indicator of sampled-token != original-token."""
    corrupted = corrupt_inputs(ids, selected, spec, generator.config.vocab_size, rng)
    hidden, _ = encoder_forward(generator, embed(generator, corrupted), attn_mask)
    h_sel = hidden[selected]
    logits = h_sel @ generator.params["tok_emb"].T + generator.params["mlm.b"]
    probs = softmax(logits)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    sampled = np.minimum((cdf < u[:, None]).sum(axis=1), probs.shape[1] - 1)
    filled = ids.copy()
    filled[selected] = sampled
    labels = (filled != ids).astype(np.float64)
    labels[attn_mask == 0] = 0.0
    return filled, labels


def rtd_loss_and_grads(discriminator: TransformerModel, filled: np.ndarray,
                       attn_mask: np.ndarray, labels: np.ndarray):
    """Per-position binary cross-entropy at every non-pad position."""
    p = discriminator.params
    hidden, cache = encoder_forward(discriminator, embed(discriminator, filled),
                                    attn_mask)
    logit = hidden @ p["rtd.w"] + p["rtd.b"][0]
    prob = 1.0 / (1.0 + np.exp(-np.clip(logit, -500, 500)))
    valid = attn_mask > 0
    count = int(valid.sum())
    pc = np.clip(prob, 1e-300, 1.0 - 1e-16)
    per_pos = labels * np.log(pc) + (1.0 - labels) * np.log(1.0 - pc)
    loss = -float(per_pos[valid].sum() / count)
    dlogit = (prob - labels) * valid / count
    grads = _zero_grads(discriminator)
    grads["rtd.w"] += np.einsum("nl,nlh->h", dlogit, hidden)
    grads["rtd.b"] += np.array([dlogit.sum()])
    dhidden = dlogit[:, :, None] * p["rtd.w"][None, None, :]
    dx0 = encoder_backward(discriminator, cache, dhidden, grads)
    np.add.at(grads["tok_emb"], filled, dx0)
    grads["pos_emb"] += dx0.sum(axis=0)
    return loss, grads


def rtd_pretrain(generator: TransformerModel, discriminator: TransformerModel,
                 ids: np.ndarray, attn_mask: np.ndarray, spec: MaskingSpec,
                 epochs: int = 5, lr: float = 3e-4, batch_size: int = 32,
                 seed: int = 0, train_generator: bool = True
                 ) -> tuple[TransformerModel, list[float]]:
    """Jointly train a small MLM generator and a replaced-token-detection
    discriminator; returns the discriminator."""
    ids = np.asarray(ids, dtype=np.int64)
    attn_mask = np.asarray(attn_mask, dtype=np.float64)
    generator = generator.clone()
    _ensure_mlm_bias(generator)
    discriminator = discriminator.clone()
    _ensure_rtd_head(discriminator)
    gen_opt = Adam(generator.params, lr=lr)
    disc_opt = Adam(discriminator.params, lr=lr)
    order_rng = np.random.default_rng(seed)
    losses = []
    for epoch in range(epochs):
        selected = sample_masks(ids, attn_mask, spec, seed, epoch)
        if not selected.any():
            raise PretrainError("mask_rate yielded zero masked positions on every sequence")
        fill_rng = _epoch_rng(seed + 2, epoch)
        filled, labels = sample_replacements(generator, ids, attn_mask, selected,
                                             spec, fill_rng)
        n = ids.shape[0]
        perm = order_rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            if train_generator and selected[idx].any():
                corrupted = corrupt_inputs(ids[idx], selected[idx], spec,
                                           generator.config.vocab_size,
                                           _epoch_rng(seed + 3, epoch))
                gloss, ggrads = mlm_loss_and_grads(generator, corrupted,
                                                   attn_mask[idx], ids[idx],
                                                   selected[idx])
                gen_opt.step(generator.params, ggrads)
            dloss, dgrads = rtd_loss_and_grads(discriminator, filled[idx],
                                               attn_mask[idx], labels[idx])
            if not math.isfinite(dloss):
                raise PretrainError(f"RTD diverged at epoch {epoch}")
            disc_opt.step(discriminator.params, dgrads)
            epoch_loss += dloss
            n_batches += 1
        losses.append(epoch_loss / max(n_batches, 1))
    return discriminator, losses


# ---------------------------------------------------------------------------
# knowledge distillation


def distill_batch_loss(student_probs_t: np.ndarray, teacher_probs_t: np.ndarray) -> float:
    """KL(teacher || student) at temperature, in nats, mean over the batch."""
    ratio = np.log(np.clip(teacher_probs_t, 1e-300, None)) - \
        np.log(np.clip(student_probs_t, 1e-300, None))
    return float(np.mean(np.sum(teacher_probs_t * ratio, axis=1)))


def distill_loss_and_grads(student: TransformerModel, ids, attn_mask, labels,
                           teacher_soft: np.ndarray, spec: DistillSpec):
    """soft_weight * T^2 * KL(teacher || student at T) + hard_weight * CE."""
    t = spec.temperature
    logits, pooled, hidden, cache = forward(student, ids, attn_mask,
                                            with_cache=True)
    n = ids.shape[0]
    p_soft = softmax(logits / t)
    kl = distill_batch_loss(p_soft, teacher_soft)
    loss = spec.soft_weight * t * t * kl
    # d/dlogits of T^2 * KL = T * (p_soft - teacher_soft)
    dlogits = spec.soft_weight * t * (p_soft - teacher_soft) / n
    if spec.hard_weight > 0:
        probs = softmax(logits)
        picked = np.clip(probs[np.arange(n), labels], 1e-300, None)
        loss += spec.hard_weight * -float(np.mean(np.log(picked)))
        dhard = probs.copy()
        dhard[np.arange(n), labels] -= 1.0
        dlogits = dlogits + spec.hard_weight * dhard / n
    grads = backprop_from_logits(student, ids, pooled, hidden, cache, dlogits)
    return loss, kl, grads


def distill(teacher: TransformerModel, student_cfg: TransformerConfig,
            ids: np.ndarray, attn_mask: np.ndarray, labels: np.ndarray,
            spec: DistillSpec, epochs: int = 10, lr: float = 3e-4,
            batch_size: int = 32, seed: int = 0
            ) -> tuple[TransformerModel, list[float]]:
    """Train a student to match the teacher's output distributions (softened
    at spec.temperature, scaled by T^2) mixed with the hard-label loss.
    Returns the student and the per-epoch mean KL term."""
    if student_cfg.layers > teacher.config.layers:
        raise PretrainError("student depth exceeds teacher depth")
    ids = np.asarray(ids, dtype=np.int64)
    attn_mask = np.asarray(attn_mask, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    t = spec.temperature
    teacher_logits, _ = forward(teacher, ids, attn_mask)
    teacher_soft = softmax(teacher_logits / t)

    student = init_transformer(student_cfg, seed)
    opt = Adam(student.params, lr=lr)
    rng = np.random.default_rng(seed)
    kl_curve = []
    n = ids.shape[0]
    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_kl, n_batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            loss, kl, grads = distill_loss_and_grads(
                student, ids[idx], attn_mask[idx], labels[idx],
                teacher_soft[idx], spec)
            if not math.isfinite(loss):
                raise PretrainError(f"distillation diverged at epoch {epoch}")
            if kl < -1e-12:
                raise PretrainError("negative KL term (numerical fault)")
            opt.step(student.params, grads)
            epoch_kl += kl
            n_batches += 1
        kl_curve.append(epoch_kl / max(n_batches, 1))
    return student, kl_curve
