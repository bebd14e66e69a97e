"""Command-line surface: gen-world, pretrain, train, eval, oracle, stats.

Exit codes: 0 success, 2 config error, 3 IO error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, checkpoint as ckpt, config as cfgmod, trainer
from .config import ConfigError
from .embed import EncoderParams, pretrain, recall_at_k
from .numcore import NumericError
from .worldgen import WorldFileError, generate_worlds, load_worlds, \
    save_worlds


def _manifest(out_dir: Path, cfg: dict, args_ns) -> None:
    doc = {
        "config": cfg,
        "args": {k: v for k, v in vars(args_ns).items()
                 if k != "func" and not isinstance(v, Path)},
        "versions": {"visguess": __version__, "numpy": np.__version__,
                     "python": sys.version.split()[0]},
    }
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=2,
                                                      default=str))


def cmd_gen_world(args) -> int:
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg["world"]["seed"] = args.seed
    wc = cfgmod.world_config(cfg)
    worlds = generate_worlds(wc, args.n, first_seed=args.first_seed)
    save_worlds(args.out, wc, worlds)
    print(f"wrote {len(worlds)} worlds to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg["pretrain"]["seed"] = args.seed
    pc = cfg["pretrain"]
    _, worlds = load_worlds(args.worlds)
    k = worlds[0].images.shape[1]
    enc = EncoderParams(k=k, seed=pc["seed"])
    curve = pretrain(worlds, enc, epochs=pc["epochs"], lr=pc["lr"],
                     margin=pc["margin"], batch_size=pc["batch_size"],
                     seed=pc["seed"])
    meta = {"seed": pc["seed"], "epochs_run": len(curve),
            "config_hash": ckpt.config_hash(
                {"world": cfg["world"], "pretrain": cfg["pretrain"]})}
    ckpt.save_encoder(args.out, enc, meta)
    if args.curve:
        with open(args.curve, "w") as f:
            f.write("epoch,loss\n")
            for i, loss in enumerate(curve):
                f.write(f"{i},{loss:.8f}\n")
    r1 = recall_at_k(worlds[: min(len(worlds), 200)], enc)
    print(f"pretrained encoder: final loss {curve[-1]:.5f}, "
          f"recall@1 (train sample) {r1:.3f}; wrote {args.out}")
    return 0


def _load_encoder_checked(args, cfg):
    enc, meta = ckpt.load_encoder(args.encoder)
    expect = ckpt.config_hash({"world": cfg["world"],
                               "pretrain": cfg["pretrain"]})
    if meta.get("config_hash") not in (None, expect) and not args.force:
        raise ConfigError(
            f"{args.encoder}: encoder config hash {meta.get('config_hash')}"
            f" does not match the resolved config ({expect}); "
            "pass --force to override")
    return enc


def cmd_train(args) -> int:
    overrides: dict = {"run": {}}
    if args.variant:
        overrides["run"]["variant"] = args.variant
    if args.seed is not None:
        overrides["run"]["seed"] = args.seed
    cfg = cfgmod.load_config(args.config, overrides)
    rc = cfgmod.run_config(cfg)
    ec = cfgmod.env_config(cfg)
    enc = _load_encoder_checked(args, cfg)
    _, worlds_train = load_worlds(args.worlds)
    _, worlds_eval = load_worlds(args.eval_worlds)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _manifest(out, cfg, args)
    log_file = open(out / "episodes.jsonl", "w") if args.episode_log \
        else None
    try:
        result = trainer.train(rc, worlds_train, worlds_eval, enc,
                               env_cfg=ec, log_file=log_file)
    finally:
        if log_file:
            log_file.close()

    trainer.write_metrics_csv(out / "metrics.csv", result.reports)
    if result.reports:
        trainer.write_games_csv(out / "games_final.csv",
                                result.reports[-1])
    policy_hash = ckpt.config_hash({"world": cfg["world"],
                                    "env": cfg["env"],
                                    "variant": rc.variant})
    meta = {"seed": rc.seed, "iteration": rc.iterations,
            "variant": rc.variant, "config_hash": policy_hash}
    if result.dqn is not None:
        ckpt.save_dqn(out / "dqn.ckpt", result.dqn, meta)
    if result.drrn is not None:
        ckpt.save_drrn(out / "drrn.ckpt", result.drrn, meta)
    final = result.reports[-1] if result.reports else None
    if final:
        print(f"variant {rc.variant}: final win_rate {final.win_rate:.3f}, "
              f"avg_turns {final.avg_turns:.2f}; outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    overrides: dict = {"run": {}}
    if args.variant:
        overrides["run"]["variant"] = args.variant
    cfg = cfgmod.load_config(args.config, overrides)
    rc = cfgmod.run_config(cfg)
    ec = cfgmod.env_config(cfg)
    enc = _load_encoder_checked(args, cfg)
    flags = trainer.variant_flags(rc.variant)
    policy_hash = ckpt.config_hash({"world": cfg["world"],
                                    "env": cfg["env"],
                                    "variant": rc.variant})
    dqn = drrn = None
    if flags["uses_dqn"]:
        dqn, meta = ckpt.load_dqn(args.dqn)
        if meta.get("config_hash") != policy_hash and not args.force:
            raise ConfigError(f"{args.dqn}: config hash mismatch; "
                              "pass --force to override")
    if flags["uses_drrn"]:
        drrn, meta = ckpt.load_drrn(args.drrn)
        if meta.get("config_hash") != policy_hash and not args.force:
            raise ConfigError(f"{args.drrn}: config hash mismatch; "
                              "pass --force to override")
    _, worlds = load_worlds(args.worlds)
    n_games = args.games if args.games is not None else rc.eval_games
    seed = args.seed if args.seed is not None else rc.seed
    report = trainer.evaluate(dqn, drrn, rc.variant, enc, worlds, ec,
                              n_games, seed)
    trainer.write_games_csv(args.out, report)
    print(f"variant {rc.variant}: win_rate {report.win_rate:.3f}, "
          f"avg_turns {report.avg_turns:.2f} over {n_games} games; "
          f"wrote {args.out}")
    return 0


def cmd_oracle(args) -> int:
    cfg = cfgmod.load_config(args.config)
    ec = cfgmod.env_config(cfg)
    enc = _load_encoder_checked(args, cfg)
    _, worlds = load_worlds(args.worlds)
    report = trainer.oracle_baseline(worlds, enc, args.rounds, ec)
    trainer.write_games_csv(args.out, report)
    print(f"oracle@{args.rounds}: win_rate {report.win_rate:.3f} over "
          f"{report.n_games} games; wrote {args.out}")
    return 0


def cmd_stats(args) -> int:
    a = trainer.read_games_csv(args.a)
    b = trainer.read_games_csv(args.b)
    for stat in ("win_rate", "avg_turns"):
        p = trainer.bootstrap_test(a, b, n_resamples=args.resamples,
                                   statistic=stat, seed=args.seed or 0)
        print(f"{stat}: p = {p:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="visguess",
        description="Hierarchical RL for the 20-image guessing game on "
                    "synthetic embedding worlds")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, force=False):
        sp.add_argument("--config", type=str, default=None,
                        help="JSON config file (defaults apply otherwise)")
        sp.add_argument("--seed", type=int, default=None)
        if force:
            sp.add_argument("--force", action="store_true",
                            help="ignore checkpoint config-hash mismatches")

    sp = sub.add_parser("gen-world", help="generate a world file")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--first-seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_world)

    sp = sub.add_parser("pretrain", help="pretrain the embedding")
    common(sp)
    sp.add_argument("--worlds", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--curve", default=None, help="loss curve CSV path")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train", help="train a policy variant")
    common(sp, force=True)
    sp.add_argument("--worlds", required=True)
    sp.add_argument("--eval-worlds", required=True)
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--variant", default=None,
                    choices=list(trainer.VARIANTS))
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--episode-log", action="store_true",
                    help="also write per-step episodes.jsonl")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate checkpoints greedily")
    common(sp, force=True)
    sp.add_argument("--worlds", required=True)
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--dqn", default=None)
    sp.add_argument("--drrn", default=None)
    sp.add_argument("--variant", default=None,
                    choices=list(trainer.VARIANTS))
    sp.add_argument("--games", type=int, default=None)
    sp.add_argument("--out", required=True, help="per-game CSV path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("oracle", help="fixed-order oracle baseline")
    common(sp, force=True)
    sp.add_argument("--worlds", required=True)
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--rounds", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("stats", help="bootstrap test on two game CSVs")
    common(sp)
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--resamples", type=int, default=1000)
    sp.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, cfgmod.ConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (WorldFileError, ckpt.CheckpointError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3
    except (NumericError, ArithmeticError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
