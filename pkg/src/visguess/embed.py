"""Visual dialog semantic embedding.

A caption-conditioned attention over the dialog history produces an
attended history vector, which is concatenated with the caption and
pushed through an MLP with l2 normalization to give the text embedding T.
Images go through their own MLP + l2 norm. Both live in the same joint
space and are trained jointly with a pairwise ranking loss on cosine
similarities, then frozen for RL.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .numcore import (NumericError, ParamSet, Tape, build_mlp,
                      l2_normalize_np, mlp_forward_np, mlp_forward_tape,
                      rmsprop_step, softmax_np)
from .seeding import substream


@dataclass
class AttentionTrace:
    z: np.ndarray        # raw attention scores, one per history item
    alpha: np.ndarray    # softmax weights
    attended: np.ndarray


class EncoderParams:
    """Attention weights plus the text and image MLPs.

    ``k`` is the joint embedding size, ``d`` the history-vector size and
    ``a`` the attention hidden size; here history vectors already live in
    the joint space, so d defaults to k and a to d.
    """

    def __init__(self, k: int, d: int | None = None, a: int | None = None,
                 seed: int = 0):
        self.k = k
        self.d = d if d is not None else k
        self.a = a if a is not None else self.d
        rng = substream(seed, "encoder-init")
        p = ParamSet()
        p.add("att.W_h", _glorot(self.a, self.d, rng))
        p.add("att.W_c", _glorot(self.a, self.d, rng))
        p.add("att.w_a", rng.uniform(-1, 1, self.a) / np.sqrt(self.a))
        build_mlp(p, "text", [self.d + self.d, k, k], rng)
        build_mlp(p, "img", [k, k, k], rng)
        self.pset = p


def _glorot(n_out, n_in, rng):
    s = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-s, s, (n_out, n_in))


def encode_history(caption: np.ndarray, history,
                   enc: EncoderParams) -> tuple[np.ndarray, AttentionTrace]:
    """Encode caption + QA history into a unit vector T.

    ``history`` is a sequence of d-dim vectors (one per answered
    question); with an empty history the attended vector is zero and T
    depends on the caption alone.
    """
    p = enc.pset
    caption = np.asarray(caption, dtype=np.float64)
    if caption.shape != (enc.d,):
        raise ValueError(f"caption must have dim {enc.d}")
    t = len(history)
    if t == 0:
        z = np.empty(0)
        alpha = np.empty(0)
        attended = np.zeros(enc.d)
    else:
        h = np.asarray(history, dtype=np.float64).T      # (d, t)
        if h.shape[0] != enc.d:
            raise ValueError(f"history vectors must have dim {enc.d}")
        z = p["att.w_a"] @ np.tanh(
            p["att.W_h"] @ h + (p["att.W_c"] @ caption)[:, None])
        alpha = softmax_np(z)
        attended = h @ alpha
    x = np.concatenate([attended, caption])
    raw = mlp_forward_np(p, "text", x)
    return (l2_normalize_np(raw, name="text embedding"),
            AttentionTrace(z=z, alpha=alpha, attended=attended))


def encode_image(image: np.ndarray, enc: EncoderParams) -> np.ndarray:
    return l2_normalize_np(mlp_forward_np(enc.pset, "img", image),
                           name="image embedding")


def encode_images(images: np.ndarray, enc: EncoderParams) -> np.ndarray:
    """Encode a stack of images (rows) to unit rows in one pass."""
    out = mlp_forward_np(enc.pset, "img", images.T)
    norms = np.linalg.norm(out, axis=0)
    if np.any(norms == 0.0):
        raise NumericError("zero-norm image embedding")
    return (out / norms).T


def ranking_loss(t_vec, pos, negs, margin: float = 0.2) -> float:
    """Mean hinge over negatives: max(0, margin - cos(T,pos) + cos(T,neg))."""
    t_vec = np.asarray(t_vec, dtype=np.float64)
    negs = np.asarray(negs, dtype=np.float64)
    if negs.ndim != 2 or negs.shape[0] < 1:
        raise ValueError("need at least one negative")
    cos_pos = _cos(t_vec, pos)
    cos_negs = negs @ t_vec / (np.linalg.norm(negs, axis=1)
                               * np.linalg.norm(t_vec))
    return float(np.mean(np.maximum(0.0, margin - cos_pos + cos_negs)))


def _cos(a, b):
    return float(np.dot(a, b)
                 / (np.linalg.norm(a) * np.linalg.norm(b)))


# ---------------------------------------------------------------------------
# tape (training) path


def _encode_history_tape(tape: Tape, enc: EncoderParams, caption, history):
    p = enc.pset
    cap = tape.const(caption)
    if len(history) == 0:
        attended = tape.const(np.zeros(enc.d))
    else:
        h = tape.const(np.asarray(history, dtype=np.float64).T)
        w_h = tape.param("att.W_h", p["att.W_h"])
        w_c = tape.param("att.W_c", p["att.W_c"])
        w_a = tape.param("att.w_a", p["att.w_a"])
        scores = tape.tanh(tape.add_col(tape.matmul(w_h, h),
                                        tape.matmul(w_c, cap)))
        z = tape.matmul(w_a, scores)
        alpha = tape.softmax(z)
        attended = tape.matmul(h, alpha)
    x = tape.concat(attended, cap)
    raw = mlp_forward_tape(tape, p, "text", x)
    return tape.l2_normalize(raw, name="text embedding")


def _example_loss_tape(tape: Tape, enc: EncoderParams, world, t: int,
                       margin: float):
    t_node = _encode_history_tape(tape, enc, world.caption,
                                  world.a_vecs[:t])
    pos_raw = mlp_forward_tape(tape, enc.pset, "img",
                               tape.const(world.target))
    pos = tape.l2_normalize(pos_raw, name="image embedding")
    neg_idx = [i for i in range(world.n_images) if i != world.target_idx]
    negs_raw = mlp_forward_tape(tape, enc.pset, "img",
                                tape.const(world.images[neg_idx].T))
    negs = tape.l2_normalize(negs_raw, name="image embeddings")
    cos_pos = tape.cosine_similarity(t_node, pos)
    cos_negs = tape.cosine_columns(t_node, negs)
    gap = tape.add_const(tape.scale(cos_pos, -1.0), margin)
    return tape.mean(tape.relu(tape.add_scalar(cos_negs, gap)))


def pretrain(worlds, enc: EncoderParams, epochs: int = 20, lr: float = 1e-3,
             margin: float = 0.2, batch_size: int = 64,
             seed: int = 0) -> list[float]:
    """Train the encoder on (world, history-prefix) examples.

    Returns the per-epoch mean ranking loss. Halts with a warning if the
    loss stops decreasing over a 5-epoch window; aborts on divergence.
    """
    if len(worlds) < 1:
        raise ValueError("pretrain needs at least one world")
    rng = substream(seed, "pretrain")
    examples = [(wi, t) for wi in range(len(worlds))
                for t in range(worlds[wi].pool_size + 1)]
    curve: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(len(examples))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            grads: dict[str, np.ndarray] = {}
            batch_loss = 0.0
            for j in idx:
                wi, t = examples[j]
                tape = Tape()
                loss = _example_loss_tape(tape, enc, worlds[wi], t, margin)
                batch_loss += float(loss.value)
                for name, g in tape.backward(loss).items():
                    grads[name] = grads.get(name, 0.0) + g
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"pretraining diverged (NaN loss) at epoch {epoch}")
            for name in grads:
                grads[name] /= len(idx)
            rmsprop_step(enc.pset, grads, lr)
            total += batch_loss
        curve.append(total / len(examples))
        if len(curve) >= 6 and curve[-1] > curve[-6] + 1e-9:
            warnings.warn("pretraining loss stopped decreasing; halting "
                          f"after epoch {epoch}")
            break
    return curve


def recall_at_k(worlds, enc: EncoderParams, n_history: int | None = None,
                k: int = 1) -> float:
    """Fraction of worlds where the target ranks in the top k by cosine
    to the history encoding (full history when n_history is None)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = 0
    for w in worlds:
        t = w.pool_size if n_history is None else n_history
        t_vec, _ = encode_history(w.caption, w.a_vecs[:t], enc)
        cos = encode_images(w.images, enc) @ t_vec
        if int(np.sum(cos > cos[w.target_idx])) < k:
            hits += 1
    return hits / len(worlds)
