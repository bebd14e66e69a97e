import numpy as np
import pytest

from visguess.embed import EncoderParams
from visguess.env import EnvConfig, Episode, affinity
from visguess.numcore import sigmoid_np
from visguess.trainer import best_guess, embed_world
from visguess.worldgen import WorldConfig, generate_world


def make_world(seed=0, **kw):
    cfg = WorldConfig(embed_dim=16, **kw)
    return generate_world(cfg, seed), EncoderParams(k=16, seed=1)


def test_affinity_values():
    w, enc = make_world()
    ew = embed_world(w, enc)
    perp = np.zeros(16)
    # build a vb orthogonal to the embedded target
    t = ew.target
    perp[:] = np.array([*(-t[1:2]), *t[0:1], *np.zeros(14)])
    perp = np.concatenate([[-t[1]], [t[0]], np.zeros(14)])
    assert abs(affinity(perp, ew) - 0.5) < 1e-12
    assert abs(affinity(t, ew) - sigmoid_np(np.array(1.0))) < 1e-12
    assert abs(float(sigmoid_np(np.array(1.0))) - 0.73106) < 1e-5


def test_reset_state():
    w, enc = make_world()
    ep = Episode(embed_world(w, enc), enc, EnvConfig())
    assert ep.state.turn == 0
    assert ep.a0 == affinity(ep.state.vb, ep.world)
    ep2 = Episode(embed_world(w, enc), enc, EnvConfig())
    assert ep.a0 == ep2.a0


def test_correct_guess_wins():
    w, enc = make_world()
    ew = embed_world(w, enc)
    ep = Episode(ew, enc, EnvConfig())
    out = ep.step_guess(ew.target_idx)
    assert out.reward == 10.0 and out.terminal and out.won
    assert out.r_g == 10.0 and out.r_q == 0.0 and out.r_i == 0.0


def test_wrong_guess_penalty_and_exclusion():
    w, enc = make_world()
    ew = embed_world(w, enc)
    ep = Episode(ew, enc, EnvConfig())
    wrong = (ew.target_idx + 1) % ew.n_images
    out = ep.step_guess(wrong)
    assert out.reward == -3.0 and not out.terminal
    assert ep.state.excluded[wrong]
    with pytest.raises(ValueError):
        ep.step_guess(wrong)


def test_third_wrong_guess_stacks_loss():
    w, enc = make_world()
    ew = embed_world(w, enc)
    ep = Episode(ew, enc, EnvConfig())
    wrongs = [i for i in range(ew.n_images) if i != ew.target_idx][:3]
    assert ep.step_guess(wrongs[0]).reward == -3.0
    assert ep.step_guess(wrongs[1]).reward == -3.0
    out = ep.step_guess(wrongs[2])
    assert out.reward == -13.0 and out.terminal and not out.won
    assert out.r_i == -3.0 and out.r_g == -10.0


def test_timeout_on_question_is_loss():
    w, enc = make_world()
    ew = embed_world(w, enc)
    ep = Episode(ew, enc, EnvConfig(max_turns=3))
    assert not ep.step_question(0).terminal
    assert not ep.step_question(1).terminal
    out = ep.step_question(2)
    assert out.terminal and out.r_g == -10.0 and not out.won
    with pytest.raises(RuntimeError):
        ep.step_question(3)


def test_reask_is_hard_error():
    w, enc = make_world()
    ep = Episode(embed_world(w, enc), enc, EnvConfig())
    ep.step_question(4)
    with pytest.raises(ValueError):
        ep.step_question(4)


def test_shaping_off_zero_question_reward():
    w, enc = make_world()
    ep = Episode(embed_world(w, enc), enc,
                 EnvConfig(shaping_enabled=False))
    out = ep.step_question(0)
    assert out.reward == 0.0 and out.r_q == 0.0


def test_shaping_telescopes_to_total_affinity_change():
    w, enc = make_world(seed=5)
    ew = embed_world(w, enc)
    cfg = EnvConfig(shaping_enabled=True, max_turns=20)
    ep = Episode(ew, enc, cfg)
    total_rq = 0.0
    rng = np.random.default_rng(2)
    wrongs = iter([i for i in range(20) if i != ew.target_idx])
    for step in range(12):
        if ep.done:
            break
        if rng.random() < 0.25:
            out = ep.step_guess(next(wrongs))
        else:
            avail = ep.available_questions()
            if not avail:
                break
            out = ep.step_question(avail[0])
        total_rq += out.r_q
        assert abs(out.reward - (out.r_g + out.r_q + out.r_i)) == 0.0
    a_final = affinity(ep.state.vb, ew)
    assert abs(total_rq - (a_final - ep.a0)) < 1e-9


def test_shaping_does_not_change_dynamics():
    w, enc = make_world(seed=9)
    ew = embed_world(w, enc)
    finals = []
    for shaping in (False, True):
        ep = Episode(ew, enc, EnvConfig(shaping_enabled=shaping))
        for q in range(5):
            ep.step_question(q)
        finals.append(affinity(ep.state.vb, ew))
    assert finals[0] == finals[1]


def test_episode_termination_exclusive():
    # exactly one of: correct guess, guesses exhausted, turns exhausted
    w, enc = make_world(seed=3)
    ew = embed_world(w, enc)
    rng = np.random.default_rng(7)
    for trial in range(50):
        cfg = EnvConfig(max_turns=6)
        ep = Episode(ew, enc, cfg)
        while not ep.done:
            avail_q = ep.available_questions()
            if avail_q and rng.random() < 0.6:
                ep.step_question(avail_q[0])
            else:
                choices = ep.available_images()
                ep.step_guess(int(rng.choice(choices)))
        conds = [ep.won,
                 (not ep.won) and ep.state.n_guesses_made
                 >= cfg.max_guesses,
                 (not ep.won) and ep.state.n_guesses_made
                 < cfg.max_guesses and ep.state.turn >= cfg.max_turns]
        assert sum(conds) == 1
        assert ep.state.turn <= cfg.max_turns
        assert ep.state.n_guesses_made <= cfg.max_guesses


def test_best_guess_skips_excluded():
    w, enc = make_world()
    ew = embed_world(w, enc)
    excluded = np.zeros(ew.n_images, dtype=bool)
    vb = ew.target
    assert best_guess(vb, ew, excluded) == ew.target_idx
    excluded[ew.target_idx] = True
    assert best_guess(vb, ew, excluded) != ew.target_idx
