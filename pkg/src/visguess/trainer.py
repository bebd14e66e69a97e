"""Outer training loop, ablation variants, evaluation, oracle baselines
and bootstrap significance tests.

One iteration is one episode. Each episode samples a world uniformly
from the training pool; evaluation runs greedily on a disjoint held-out
pool. All belief/context/guess computations happen in the joint
embedding space, so worlds are embedded once (image MLP + l2 norm) before
play.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import policy as pol
from .embed import EncoderParams, encode_images
from .env import EnvConfig, Episode
from .seeding import substream
from .state import to_feature_vector
from .worldgen import GameWorld

VARIANTS = ("rnd", "rnd_dqn", "hrl", "hrl_sa", "hrl_sar")


def variant_flags(variant: str) -> dict:
    """What each ablation variant turns on."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; "
                         f"expected one of {VARIANTS}")
    return {
        "uses_dqn": variant != "rnd",
        "uses_drrn": variant in ("hrl", "hrl_sa", "hrl_sar"),
        "state_adaptation": variant in ("hrl_sa", "hrl_sar"),
        "shaping": variant == "hrl_sar",
    }


@dataclass
class GameRecord:
    game_idx: int
    world_id: str
    won: bool
    turns: int
    total_reward: float


@dataclass
class EvalReport:
    iteration: int
    variant: str
    n_games: int
    win_rate: float
    avg_turns: float
    mean_reward: float
    games: list[GameRecord] = field(default_factory=list)


@dataclass(frozen=True)
class RunConfig:
    variant: str = "hrl_sar"
    iterations: int = 20000
    eval_every: int = 1000
    eval_games: int = 100
    seed: int = 0
    batch_size: int = 64
    update_every: int = 5
    target_sync_every: int = 500
    dqn_capacity: int = 25000
    drrn_capacity: int = 50000
    pr_alpha: float = 0.6
    pr_beta_start: float = 0.4
    dqn_hidden: tuple = (128, 64, 32)
    drrn_hidden: tuple = (256, 128)
    dqn_lr: float = 3e-4
    drrn_lr: float = 1e-3
    anneal_episodes: int | None = None   # defaults to iterations // 2

    def validate(self) -> None:
        variant_flags(self.variant)
        if self.iterations < self.eval_every:
            raise ValueError("iterations must be >= eval_every")


def embed_world(world: GameWorld, enc: EncoderParams) -> GameWorld:
    """Replace raw image vectors with their joint-space embeddings."""
    return replace(world, images=encode_images(world.images, enc))


def best_guess(vb: np.ndarray, world, excluded) -> int:
    """Non-excluded image with the smallest cosine distance to vb."""
    norms = np.linalg.norm(world.images, axis=1) * np.linalg.norm(vb)
    cos = (world.images @ vb) / norms
    cos = np.where(excluded, -np.inf, cos)
    return int(np.argmax(cos))


@dataclass
class TrainResult:
    dqn: pol.DqnParams | None
    drrn: pol.DrrnParams | None
    reports: list[EvalReport]
    warnings: int = 0


def _play_episode(world, enc, env_cfg, flags, dqn, drrn, eps, mode, rng,
                  log=None, episode_idx=0):
    """Run one episode without learning. Returns (won, turns,
    total_reward)."""
    ep = Episode(world, enc, env_cfg)
    total = 0.0
    while not ep.done:
        s = to_feature_vector(ep.state, env_cfg.max_turns,
                              env_cfg.max_guesses)
        avail_q = ep.available_questions()
        if not flags["uses_dqn"]:
            action = pol.GUESS if not avail_q else int(rng.integers(2))
        else:
            action = pol.select_master(dqn, s, eps, rng,
                                       pool_empty=not avail_q)
        if action == pol.ASK:
            pool = world.q_vecs[avail_q]
            if flags["uses_drrn"]:
                sel_mode = "greedy" if mode == "eval" else "softmax"
                ji = pol.select_question(drrn, ep.state.vc, pool,
                                         sel_mode, rng)
            else:
                ji = int(rng.integers(len(avail_q)))
            q_idx = avail_q[ji]
            out = ep.step_question(q_idx)
            act_idx = q_idx
        else:
            img = best_guess(ep.state.vb, world, ep.state.excluded)
            out = ep.step_guess(img)
            act_idx = img
        total += out.reward
        if log is not None:
            log.write(json.dumps({
                "episode": episode_idx, "turn": ep.state.turn,
                "action_type": "question" if action == pol.ASK else "guess",
                "action_index": act_idx,
                "reward_parts": {"r_g": out.r_g, "r_q": out.r_q,
                                 "r_i": out.r_i},
                "affinity": ep.a_prev,
                "terminal": out.terminal, "won": out.won}) + "\n")
    return ep.won, ep.state.turn, total


def train(cfg: RunConfig, worlds_train, worlds_eval, enc: EncoderParams,
          env_cfg: EnvConfig | None = None, log_file=None) -> TrainResult:
    """Hierarchical policy learning over episodes (Algorithm-1 loop)."""
    cfg.validate()
    flags = variant_flags(cfg.variant)
    base_env = env_cfg or EnvConfig()
    env_cfg = replace(base_env,
                      state_adaptation=flags["state_adaptation"],
                      shaping_enabled=flags["shaping"])
    worlds_train = [embed_world(w, enc) for w in worlds_train]
    worlds_eval = [embed_world(w, enc) for w in worlds_eval]
    k = worlds_train[0].images.shape[1]
    feat_dim = 5 + 2 * k

    dqn = (pol.DqnParams(feat_dim, cfg.dqn_hidden, seed=cfg.seed)
           if flags["uses_dqn"] else None)
    drrn = (pol.DrrnParams(k, cfg.drrn_hidden, seed=cfg.seed)
            if flags["uses_drrn"] else None)
    dqn_buf = pol.PrioritizedReplay(cfg.dqn_capacity, cfg.pr_alpha)
    drrn_buf = pol.PrioritizedReplay(cfg.drrn_capacity, cfg.pr_alpha)

    rng_world = substream(cfg.seed, "episode-worlds")
    rng_explore = substream(cfg.seed, "exploration")
    rng_replay = substream(cfg.seed, "replay")
    anneal = cfg.anneal_episodes or max(1, cfg.iterations // 2)

    reports: list[EvalReport] = []
    step_count = 0
    n_updates = 0
    warn_count = 0

    for episode in range(cfg.iterations):
        world = worlds_train[int(rng_world.integers(len(worlds_train)))]
        eps = pol.epsilon_schedule(episode, anneal)
        collector = flags["uses_dqn"] or flags["uses_drrn"]

        ep = Episode(world, enc, env_cfg)
        # question-level semi-MDP transition in flight: rewards of every
        # step since the last question (guesses included) accrue to it,
        # so question values are grounded in game outcomes.
        pending: pol.QTransition | None = None
        while not ep.done:
            s = to_feature_vector(ep.state, env_cfg.max_turns,
                                  env_cfg.max_guesses)
            avail_q = ep.available_questions()
            if not flags["uses_dqn"]:
                action = (pol.GUESS if not avail_q
                          else int(rng_explore.integers(2)))
            else:
                action = pol.select_master(dqn, s, eps, rng_explore,
                                           pool_empty=not avail_q)
            if action == pol.ASK:
                pool = world.q_vecs[avail_q]
                if flags["uses_drrn"]:
                    ji = pol.select_question(drrn, ep.state.vc, pool,
                                             "softmax", rng_explore)
                else:
                    ji = int(rng_explore.integers(len(avail_q)))
                q_idx = avail_q[ji]
                vc_before = ep.state.vc
                out = ep.step_question(q_idx)
                if collector and flags["uses_drrn"]:
                    if pending is not None:
                        drrn_buf.push(replace(
                            pending, vc_next=vc_before,
                            next_pool=world.q_vecs[avail_q],
                            terminal=False))
                    pending = pol.QTransition(
                        vc=vc_before, q=world.q_vecs[q_idx],
                        vc_next=ep.state.vc, r=out.reward,
                        next_pool=np.empty((0, world.q_vecs.shape[1])),
                        terminal=True)
            else:
                img = best_guess(ep.state.vb, world, ep.state.excluded)
                out = ep.step_guess(img)
                if pending is not None:
                    pending = replace(pending, r=pending.r + out.reward)
            if collector and flags["uses_dqn"]:
                s_next = to_feature_vector(ep.state, env_cfg.max_turns,
                                           env_cfg.max_guesses)
                dqn_buf.push(pol.Transition(s=s, a=action, s_next=s_next,
                                            r=out.reward,
                                            terminal=out.terminal))
            if log_file is not None:
                log_file.write(json.dumps({
                    "episode": episode, "turn": ep.state.turn,
                    "action_type": ("question" if action == pol.ASK
                                    else "guess"),
                    "action_index": (q_idx if action == pol.ASK else img),
                    "reward_parts": {"r_g": out.r_g, "r_q": out.r_q,
                                     "r_i": out.r_i},
                    "affinity": ep.a_prev,
                    "terminal": out.terminal, "won": out.won}) + "\n")
            step_count += 1

            if collector and step_count % cfg.update_every == 0:
                beta = (cfg.pr_beta_start
                        + (1.0 - cfg.pr_beta_start)
                        * min(1.0, episode / cfg.iterations))
                if flags["uses_dqn"] and len(dqn_buf) >= cfg.batch_size:
                    idx, batch, w = dqn_buf.sample(cfg.batch_size, beta,
                                                   rng_replay)
                    loss, td, dropped = pol.dqn_update(
                        dqn, batch, env_cfg.gamma, cfg.dqn_lr, w)
                    dqn_buf.update_priorities(idx, td)
                    warn_count += dropped
                    if not np.isfinite(loss):
                        raise ArithmeticError(
                            f"DQN loss diverged at episode {episode}")
                    n_updates += 1
                    if n_updates % cfg.target_sync_every == 0:
                        pol.sync_target(dqn)
                if flags["uses_drrn"] and len(drrn_buf) >= cfg.batch_size:
                    idx, batch, w = drrn_buf.sample(cfg.batch_size, beta,
                                                    rng_replay)
                    loss, td, dropped = pol.drrn_update(
                        drrn, batch, env_cfg.gamma, cfg.drrn_lr, w)
                    drrn_buf.update_priorities(idx, td)
                    warn_count += dropped
                    if not np.isfinite(loss):
                        raise ArithmeticError(
                            f"DRRN loss diverged at episode {episode}")

        if collector and flags["uses_drrn"] and pending is not None:
            drrn_buf.push(pending)

        if (episode + 1) % cfg.eval_every == 0:
            reports.append(evaluate_embedded(
                dqn, drrn, cfg.variant, enc, worlds_eval, env_cfg,
                cfg.eval_games, cfg.seed, iteration=episode + 1))
            if log_file is not None:
                log_file.flush()

    return TrainResult(dqn=dqn, drrn=drrn, reports=reports,
                       warnings=warn_count)


def evaluate_embedded(dqn, drrn, variant, enc, worlds_embedded, env_cfg,
                      n_games, seed, iteration=0) -> EvalReport:
    """Greedy evaluation on already-embedded worlds; no exploration, no
    parameter or buffer mutation."""
    if n_games < 1:
        raise ValueError("n_games must be >= 1")
    flags = variant_flags(variant)
    env_cfg = replace(env_cfg,
                      state_adaptation=flags["state_adaptation"],
                      shaping_enabled=flags["shaping"])
    games = []
    for g in range(n_games):
        rng = substream(seed, "eval", iteration, g)
        world = worlds_embedded[int(rng.integers(len(worlds_embedded)))]
        won, turns, total = _play_episode(
            world, enc, env_cfg, flags, dqn, drrn, eps=0.0, mode="eval",
            rng=rng, episode_idx=g)
        games.append(GameRecord(game_idx=g, world_id=world.world_id,
                                won=won, turns=turns, total_reward=total))
    return EvalReport(
        iteration=iteration, variant=variant, n_games=n_games,
        win_rate=sum(g.won for g in games) / n_games,
        avg_turns=sum(g.turns for g in games) / n_games,
        mean_reward=sum(g.total_reward for g in games) / n_games,
        games=games)


def evaluate(dqn, drrn, variant, enc, worlds, env_cfg, n_games,
             seed, iteration=0) -> EvalReport:
    worlds_embedded = [embed_world(w, enc) for w in worlds]
    return evaluate_embedded(dqn, drrn, variant, enc, worlds_embedded,
                             env_cfg, n_games, seed, iteration=iteration)


def oracle_baseline(worlds, enc: EncoderParams, n_rounds: int,
                    env_cfg: EnvConfig | None = None) -> EvalReport:
    """Ask the first n_rounds questions in canonical order, then make a
    single guess by cosine to the belief."""
    env_cfg = env_cfg or EnvConfig(max_turns=max(n_rounds + 1, 1))
    games = []
    for g, raw in enumerate(worlds):
        if n_rounds > raw.pool_size:
            raise ValueError(f"n_rounds {n_rounds} exceeds pool size "
                             f"{raw.pool_size}")
        world = embed_world(raw, enc)
        cfg = replace(env_cfg, max_turns=max(env_cfg.max_turns,
                                             n_rounds + 1))
        ep = Episode(world, enc, cfg)
        total = 0.0
        for j in range(n_rounds):
            total += ep.step_question(j).reward
        img = best_guess(ep.state.vb, world, ep.state.excluded)
        out = ep.step_guess(img)
        total += out.reward
        games.append(GameRecord(game_idx=g, world_id=world.world_id,
                                won=out.won, turns=n_rounds + 1,
                                total_reward=total))
    n = len(games)
    return EvalReport(
        iteration=0, variant=f"oracle@{n_rounds}", n_games=n,
        win_rate=sum(g.won for g in games) / n,
        avg_turns=sum(g.turns for g in games) / n,
        mean_reward=sum(g.total_reward for g in games) / n,
        games=games)


# ---------------------------------------------------------------------------
# bootstrap significance test


def _stat(records, statistic: str) -> float:
    if statistic == "win_rate":
        return float(np.mean([r.won for r in records]))
    if statistic == "avg_turns":
        return float(np.mean([r.turns for r in records]))
    raise ValueError(f"unknown statistic {statistic!r}")


def bootstrap_test(results_a, results_b, n_resamples: int = 1000,
                   statistic: str = "win_rate", seed: int = 0) -> float:
    """Two-sided sign-flip bootstrap p-value for the difference in the
    statistic, resampling each result list with replacement."""
    if not results_a or not results_b:
        raise ValueError("both result lists must be non-empty")
    rng = substream(seed, "bootstrap")
    observed = _stat(results_a, statistic) - _stat(results_b, statistic)
    if observed == 0.0:
        return 1.0
    a = np.asarray([(r.won if statistic == "win_rate" else r.turns)
                    for r in results_a], dtype=np.float64)
    b = np.asarray([(r.won if statistic == "win_rate" else r.turns)
                    for r in results_b], dtype=np.float64)
    flips = 0
    for _ in range(n_resamples):
        da = a[rng.integers(len(a), size=len(a))].mean()
        db = b[rng.integers(len(b), size=len(b))].mean()
        if (da - db) * observed <= 0.0:
            flips += 1
    return min(1.0, 2.0 * flips / n_resamples)


# ---------------------------------------------------------------------------
# CSV interfaces


def write_metrics_csv(path, reports: list[EvalReport]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "variant", "win_rate", "avg_turns",
                    "mean_reward", "n_games"])
        for r in reports:
            w.writerow([r.iteration, r.variant, f"{r.win_rate:.6f}",
                        f"{r.avg_turns:.6f}", f"{r.mean_reward:.6f}",
                        r.n_games])


def write_games_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["game_idx", "world_id", "won", "turns", "total_reward"])
        for g in report.games:
            w.writerow([g.game_idx, g.world_id, int(g.won), g.turns,
                        f"{g.total_reward:.6f}"])


def read_games_csv(path) -> list[GameRecord]:
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            records.append(GameRecord(
                game_idx=int(row["game_idx"]), world_id=row["world_id"],
                won=bool(int(row["won"])), turns=int(float(row["turns"])),
                total_reward=float(row["total_reward"])))
    if not records:
        raise ValueError(f"{path}: no game records")
    return records
