"""Dialog state tracking: META counters, vision belief and vision context.

The vision belief (VB) is the history encoding of caption + revealed
answers. The vision context (VC) starts as the plain image mean and,
when state adaptation is on, is recomputed as a sigmoid-affinity-weighted
mean of the images with wrongly guessed images zeroed out.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .embed import EncoderParams, encode_history
from .numcore import sigmoid_np

LAST_NONE, LAST_QUESTION, LAST_GUESS = 0, 1, 2
META_DIM = 5


@dataclass(frozen=True)
class DialogState:
    vb: np.ndarray               # unit vector, dim k
    vc: np.ndarray               # convex combination of live images
    excluded: np.ndarray         # bool mask over images (wrong guesses)
    asked: np.ndarray            # bool mask over the question pool
    ask_order: tuple             # question indices in ask order
    n_questions_asked: int = 0
    n_guesses_made: int = 0
    last_action: int = LAST_NONE
    turn: int = 0


def init_state(world, enc: EncoderParams) -> DialogState:
    vb, _ = encode_history(world.caption, [], enc)
    return DialogState(
        vb=vb,
        vc=world.images.mean(axis=0),
        excluded=np.zeros(world.n_images, dtype=bool),
        asked=np.zeros(world.pool_size, dtype=bool),
        ask_order=(),
    )


def update_belief(state: DialogState, world,
                  enc: EncoderParams) -> DialogState:
    if state.n_questions_asked == 0:
        raise ValueError("update_belief requires at least one asked question")
    history = [world.a_vecs[j] for j in state.ask_order]
    vb, _ = encode_history(world.caption, history, enc)
    return replace(state, vb=vb)


def adaptation_weights(state: DialogState, world) -> np.ndarray:
    """Normalized sigmoid affinities, zero on excluded images."""
    alpha = sigmoid_np(world.images @ state.vb)
    alpha[state.excluded] = 0.0
    total = alpha.sum()
    if total == 0.0:
        raise RuntimeError("all images excluded; cannot adapt context")
    return alpha / total


def adapt_context(state: DialogState, world) -> DialogState:
    w = adaptation_weights(state, world)
    return replace(state, vc=w @ world.images)


def to_feature_vector(state: DialogState, max_turns: int,
                      max_guesses: int) -> np.ndarray:
    """concat(META, vb, vc); META = [questions asked / max_turns,
    guesses / max_guesses, one-hot last action] so every entry is in
    [0, 1]."""
    meta = np.zeros(META_DIM)
    meta[0] = state.n_questions_asked / max_turns
    meta[1] = state.n_guesses_made / max_guesses
    meta[2 + state.last_action] = 1.0
    return np.concatenate([meta, state.vb, state.vc])
