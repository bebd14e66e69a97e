"""The two learners: a Double-DQN master over {ask, guess} and a DRRN
question selector, with prioritized replay.

The DRRN scores a (context, question) pair as the dot product of a state
tower and an action tower, so it handles question pools of any size. The
Double-DQN target picks the bootstrap action with the online network and
evaluates it with the target network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import (ParamSet, Tape, build_mlp, mlp_forward_np,
                      mlp_forward_tape, rmsprop_step, softmax_np)
from .seeding import substream

ASK, GUESS = 0, 1


# ---------------------------------------------------------------------------
# networks


class DqnParams:
    """Online and target MLPs mapping the dialog feature vector to
    [q_ask, q_guess]."""

    def __init__(self, input_dim: int, hidden=(128, 64, 32), seed: int = 0):
        self.input_dim = input_dim
        self.hidden = tuple(hidden)
        rng = substream(seed, "dqn-init")
        self.online = ParamSet()
        build_mlp(self.online, "dqn", [input_dim, *hidden, 2], rng)
        self.target = self.online.copy()


def dqn_q(pset: ParamSet, s: np.ndarray) -> np.ndarray:
    """Q-values for a feature vector, or a (dim, batch) matrix."""
    return mlp_forward_np(pset, "dqn", s)


def select_master(dqn: DqnParams, s: np.ndarray, eps: float,
                  rng: np.random.Generator, pool_empty: bool = False) -> int:
    """Epsilon-greedy over {ask, guess}; ask is masked out when the
    question pool is empty; greedy ties break toward ask."""
    if pool_empty:
        return GUESS
    if rng.random() < eps:
        return int(rng.integers(2))
    q = dqn_q(dqn.online, s)
    return GUESS if q[GUESS] > q[ASK] else ASK


class DrrnParams:
    """State and action towers with a dot-product interaction."""

    def __init__(self, k: int, hidden=(256, 128), seed: int = 0):
        self.k = k
        self.hidden = tuple(hidden)
        rng = substream(seed, "drrn-init")
        self.online = ParamSet()
        build_mlp(self.online, "state", [k, *hidden], rng)
        build_mlp(self.online, "action", [k, *hidden], rng)


def drrn_q(drrn: DrrnParams, vc: np.ndarray, q_vec: np.ndarray) -> float:
    s = mlp_forward_np(drrn.online, "state", vc)
    a = mlp_forward_np(drrn.online, "action", q_vec)
    return float(s @ a)


def drrn_q_pool(drrn: DrrnParams, vc: np.ndarray,
                pool: np.ndarray) -> np.ndarray:
    """Scores for every question in pool (rows)."""
    s = mlp_forward_np(drrn.online, "state", vc)
    a = mlp_forward_np(drrn.online, "action", pool.T)
    return s @ a


def select_question(drrn: DrrnParams, vc: np.ndarray, pool: np.ndarray,
                    mode: str, rng: np.random.Generator) -> int:
    """Pick an index into pool: 'softmax' samples at temperature 1,
    'greedy' takes the argmax (ties to the lowest index)."""
    if pool.shape[0] == 0:
        raise ValueError("cannot select from an empty question pool")
    scores = drrn_q_pool(drrn, vc, pool)
    if mode == "greedy":
        return int(np.argmax(scores))
    if mode == "softmax":
        return int(rng.choice(len(scores), p=softmax_np(scores)))
    raise ValueError(f"unknown selection mode {mode!r}")


def epsilon_schedule(iteration: int, anneal_steps: int) -> float:
    """Linear 1 -> 0.1 over anneal_steps, then flat."""
    return max(0.1, 1.0 - 0.9 * iteration / max(1, anneal_steps))


# ---------------------------------------------------------------------------
# replay


@dataclass
class Transition:
    s: np.ndarray
    a: int
    s_next: np.ndarray
    r: float
    terminal: bool


@dataclass
class QTransition:
    vc: np.ndarray
    q: np.ndarray
    vc_next: np.ndarray
    r: float
    next_pool: np.ndarray   # (m, k); may be empty
    terminal: bool


class PrioritizedReplay:
    """Ring buffer with proportional prioritized sampling."""

    def __init__(self, capacity: int, alpha: float = 0.6):
        self.capacity = capacity
        self.alpha = alpha
        self.items: list = []
        self.priorities = np.zeros(capacity)
        self.pos = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return len(self.items)

    def push(self, item) -> None:
        if len(self.items) < self.capacity:
            self.items.append(item)
            self.priorities[len(self.items) - 1] = self.max_priority
        else:
            self.items[self.pos] = item
            self.priorities[self.pos] = self.max_priority
            self.pos = (self.pos + 1) % self.capacity

    def sample(self, batch_size: int, beta: float,
               rng: np.random.Generator):
        """Returns (indices, items, importance weights)."""
        n = len(self.items)
        if n < batch_size:
            raise RuntimeError(
                f"replay has {n} items, cannot sample {batch_size}")
        scaled = self.priorities[:n] ** self.alpha
        probs = scaled / scaled.sum()
        idx = rng.choice(n, size=batch_size, p=probs)
        weights = (n * probs[idx]) ** (-beta)
        weights /= (n * probs.min()) ** (-beta)
        return idx, [self.items[i] for i in idx], weights

    def update_priorities(self, idx, td_errors) -> None:
        p = np.abs(np.asarray(td_errors, dtype=np.float64)) + 1e-6
        self.priorities[np.asarray(idx)] = p
        self.max_priority = max(self.max_priority, float(p.max()))


# ---------------------------------------------------------------------------
# updates


def sync_target(dqn: DqnParams) -> None:
    dqn.target = dqn.online.copy()


def dqn_update(dqn: DqnParams, batch: list[Transition], gamma: float,
               lr: float, weights=None):
    """One Double-DQN step on the online net.

    Returns (weighted loss, per-item TD errors, n dropped for non-finite
    targets).
    """
    if not batch:
        raise ValueError("empty batch")
    if weights is None:
        weights = np.ones(len(batch))
    s = np.stack([t.s for t in batch], axis=1)
    s_next = np.stack([t.s_next for t in batch], axis=1)
    r = np.array([t.r for t in batch])
    a = np.array([t.a for t in batch])
    live = 1.0 - np.array([t.terminal for t in batch], dtype=np.float64)

    a_star = np.argmax(dqn_q(dqn.online, s_next), axis=0)
    q_eval = dqn_q(dqn.target, s_next)[a_star, np.arange(len(batch))]
    y = r + gamma * live * q_eval

    keep = np.isfinite(y)
    dropped = int((~keep).sum())
    if dropped:
        s, a, y, weights = s[:, keep], a[keep], y[keep], weights[keep]
        if s.shape[1] == 0:
            return 0.0, np.zeros(len(batch)), dropped

    tape = Tape()
    q_all = mlp_forward_tape(tape, dqn.online, "dqn", tape.const(s))
    onehot = np.zeros((2, len(a)))
    onehot[a, np.arange(len(a))] = 1.0
    q_sel = tape.sum_axis0(tape.mul(q_all, tape.const(onehot)))
    resid = tape.add(q_sel, tape.const(-y))
    sq = tape.mul(resid, resid)
    loss = tape.dot(sq, tape.const(weights / len(a)))
    grads = tape.backward(loss)
    rmsprop_step(dqn.online, grads, lr)

    td = np.zeros(len(batch))
    td[np.flatnonzero(keep)] = resid.value
    return float(loss.value), td, dropped


def drrn_update(drrn: DrrnParams, batch: list[QTransition], gamma: float,
                lr: float, weights=None):
    """One TD step on the DRRN; the bootstrap max ranges over each
    transition's next question pool."""
    if not batch:
        raise ValueError("empty batch")
    if weights is None:
        weights = np.ones(len(batch))
    y = np.empty(len(batch))
    for i, t in enumerate(batch):
        if t.terminal or t.next_pool.shape[0] == 0:
            y[i] = t.r
        else:
            y[i] = t.r + gamma * float(
                np.max(drrn_q_pool(drrn, t.vc_next, t.next_pool)))

    keep = np.isfinite(y)
    dropped = int((~keep).sum())
    kept = [t for t, k in zip(batch, keep) if k]
    if not kept:
        return 0.0, np.zeros(len(batch)), dropped
    y_k, w_k = y[keep], np.asarray(weights)[keep]

    vc = np.stack([t.vc for t in kept], axis=1)
    qv = np.stack([t.q for t in kept], axis=1)
    tape = Tape()
    s_emb = mlp_forward_tape(tape, drrn.online, "state", tape.const(vc))
    a_emb = mlp_forward_tape(tape, drrn.online, "action", tape.const(qv))
    q_sel = tape.sum_axis0(tape.mul(s_emb, a_emb))
    resid = tape.add(q_sel, tape.const(-y_k))
    sq = tape.mul(resid, resid)
    loss = tape.dot(sq, tape.const(w_k / len(kept)))
    grads = tape.backward(loss)
    rmsprop_step(drrn.online, grads, lr)

    td = np.zeros(len(batch))
    td[np.flatnonzero(keep)] = resid.value
    return float(loss.value), td, dropped
