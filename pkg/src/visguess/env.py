"""Game simulator: episode lifecycle, termination and decomposed rewards.

Rewards decompose as r = r_g + r_q + r_i: the terminal game reward
(win/loss = +-10), the shaping reward (per-turn change in target
affinity) and the wrong-guess penalty (-3). A guess consumes a dialog
turn just like a question. Losing on the final wrong guess stacks the
penalty and the loss reward (-13).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import state as st
from .embed import EncoderParams
from .numcore import sigmoid_np


@dataclass(frozen=True)
class EnvConfig:
    max_turns: int = 10
    max_guesses: int = 3
    r_win: float = 10.0
    r_loss: float = -10.0
    r_wrong_guess: float = -3.0
    shaping_enabled: bool = False
    state_adaptation: bool = True
    gamma: float = 0.99

    def validate(self) -> None:
        if self.max_turns < 1 or self.max_guesses < 1:
            raise ValueError("max_turns and max_guesses must be >= 1")


@dataclass
class StepOutcome:
    reward: float
    r_g: float
    r_q: float
    r_i: float
    terminal: bool
    won: bool
    revealed_answer: np.ndarray | None = None
    guess_correct: bool | None = None


def affinity(vb: np.ndarray, world) -> float:
    """sigmoid(vb . I_target), in (0, 1)."""
    return float(sigmoid_np(np.array(vb @ world.target)))


class Episode:
    """One live game; stepping a finished episode is a hard error."""

    def __init__(self, world, enc: EncoderParams, cfg: EnvConfig):
        cfg.validate()
        self.world = world
        self.enc = enc
        self.cfg = cfg
        self.state = st.init_state(world, enc)
        if cfg.state_adaptation:
            self.state = st.adapt_context(self.state, world)
        self.a0 = affinity(self.state.vb, world)
        self.a_prev = self.a0
        self.done = False
        self.won = False

    def _require_live(self):
        if self.done:
            raise RuntimeError("cannot step a finished episode")

    def available_questions(self) -> list[int]:
        return [j for j in range(self.world.pool_size)
                if not self.state.asked[j]]

    def available_images(self) -> list[int]:
        return [i for i in range(self.world.n_images)
                if not self.state.excluded[i]]

    def step_question(self, q_idx: int) -> StepOutcome:
        self._require_live()
        s = self.state
        if s.asked[q_idx]:
            raise ValueError(f"question {q_idx} already asked")
        asked = s.asked.copy()
        asked[q_idx] = True
        s = replace(s, asked=asked, ask_order=s.ask_order + (q_idx,),
                    n_questions_asked=s.n_questions_asked + 1,
                    last_action=st.LAST_QUESTION, turn=s.turn + 1)
        s = st.update_belief(s, self.world, self.enc)
        if self.cfg.state_adaptation:
            s = st.adapt_context(s, self.world)
        self.state = s

        a_t = affinity(s.vb, self.world)
        r_q = (a_t - self.a_prev) if self.cfg.shaping_enabled else 0.0
        self.a_prev = a_t
        r_g = 0.0
        if s.turn >= self.cfg.max_turns:
            r_g = self.cfg.r_loss
            self.done = True
        return StepOutcome(reward=r_g + r_q, r_g=r_g, r_q=r_q, r_i=0.0,
                           terminal=self.done, won=False,
                           revealed_answer=self.world.a_vecs[q_idx])

    def step_guess(self, img_idx: int) -> StepOutcome:
        self._require_live()
        s = self.state
        if s.excluded[img_idx]:
            raise ValueError(f"image {img_idx} already guessed wrong")
        correct = img_idx == self.world.target_idx
        if correct:
            self.state = replace(s, last_action=st.LAST_GUESS,
                                 turn=s.turn + 1)
            self.done = True
            self.won = True
            r_g = self.cfg.r_win
            return StepOutcome(reward=r_g, r_g=r_g, r_q=0.0, r_i=0.0,
                               terminal=True, won=True, guess_correct=True)
        excluded = s.excluded.copy()
        excluded[img_idx] = True
        s = replace(s, excluded=excluded, last_action=st.LAST_GUESS,
                    n_guesses_made=s.n_guesses_made + 1, turn=s.turn + 1)
        if self.cfg.state_adaptation:
            s = st.adapt_context(s, self.world)
        self.state = s
        r_i = self.cfg.r_wrong_guess
        r_g = 0.0
        if (s.n_guesses_made >= self.cfg.max_guesses
                or s.turn >= self.cfg.max_turns):
            r_g = self.cfg.r_loss
            self.done = True
        return StepOutcome(reward=r_g + r_i, r_g=r_g, r_q=0.0, r_i=r_i,
                           terminal=self.done, won=False,
                           guess_correct=False)


def reset(world, enc: EncoderParams, cfg: EnvConfig) -> tuple:
    ep = Episode(world, enc, cfg)
    return ep.state, ep
