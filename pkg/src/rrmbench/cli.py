"""Command-line entry point.

Subcommands: generate, label, train, eval, dqn, bench, report.  All accept
a JSON config file whose values individual flags override.  Exit codes:
0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import bench, dqn, envgen, nn, optim, pipeline
from .config import (ConfigError, dqn_config, env_config, load_config,
                     subset_spec, train_config)

TRAIN_PRESETS = ("sm1", "sm1-desk", "pipeline", "sm3-conv")


def default_seed() -> int:
    return int(os.environ.get("RRMBENCH_SEED", "0"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrmbench",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        description="Radio resource management benchmark: dataset generation, "
                    "classical allocators, supervised/unsupervised/Q-learning "
                    "training, and experiment drivers.")
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (default: $RRMBENCH_SEED or 0)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker processes for parallel labeling")
    sub = parser.add_subparsers(dest="command", required=True)

    def sub_parser(name, help_text):
        return sub.add_parser(name, help=help_text,
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    p = sub_parser("generate", "generate and optionally label a dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--l-max", type=int, default=None)
    p.add_argument("--m-max", type=int, default=None)
    p.add_argument("--labeler", default=None,
                   help=f"label during generation; one of {envgen.LABELERS}")

    p = sub_parser("label", "label an existing dataset in place")
    p.add_argument("--dataset", required=True)
    p.add_argument("--labeler", required=True)

    p = sub_parser("train", "train a preset model on a labeled dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--preset", required=True, help=f"one of {TRAIN_PRESETS}")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--beta", type=float, default=None,
                   help="budget-penalty weight")

    p = sub_parser("eval", "evaluate a checkpoint on a dataset's test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub_parser("dqn", "online Q-learning on the single-carrier environment")
    p.add_argument("--users", type=int, default=3)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", required=True, help="episode log CSV path")

    p = sub_parser("bench", "run an experiment driver")
    p.add_argument("experiment", help=f"one of {bench.EXPERIMENT_IDS}")
    p.add_argument("--out", default="results")
    p.add_argument("--run-id", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="driver override, e.g. --set epochs=10")

    p = sub_parser("report", "render figures from bench CSV results")
    p.add_argument("figure", help="figure id, or 'all'")
    p.add_argument("--results", default="results")
    p.add_argument("--out", default="figures")
    return parser


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def cmd_generate(args, cfg):
    overrides = {}
    if args.count is not None:
        overrides.setdefault("dataset", {})["count"] = args.count
    if args.k is not None:
        overrides.setdefault("nonstat", {})["k"] = args.k
    if args.l_max is not None:
        overrides.setdefault("universe", {})["l_max"] = args.l_max
    if args.m_max is not None:
        overrides.setdefault("universe", {})["m_max"] = args.m_max
    if args.labeler is not None:
        overrides.setdefault("dataset", {})["labeler"] = args.labeler
    cfg = load_config(args.config, overrides) if overrides else cfg

    env = env_config(cfg)
    universe = envgen.build_universe(cfg["universe"]["l_max"], cfg["universe"]["m_max"])
    spec = subset_spec(cfg)
    count = cfg["dataset"]["count"]
    print(f"universe cardinality {universe.cardinality}, k={spec.k}, count={count}")
    samples = envgen.generate_samples(env, spec, count, cfg["seed"])
    labeler = cfg["dataset"]["labeler"]
    if labeler:
        if labeler not in envgen.LABELERS:
            raise ConfigError(f"unknown labeler {labeler!r}")
        t1 = envgen.label_dataset(samples, labeler, env.network, jobs=args.jobs)
        flagged = sum(not s.label_ok for s in samples)
        print(f"labeled with {labeler} in {t1:.2f}s ({flagged} samples flagged)")
    counts = cfg["dataset"]["split"] or envgen.default_split_counts(count)
    manifest = envgen.make_manifest(env, universe, spec, counts,
                                    labeler or None, cfg["seed"], count)
    envgen.save_dataset(args.out, samples, manifest)
    print(f"wrote {count} samples to {args.out} "
          f"(train/val/test = {counts[0]}/{counts[1]}/{counts[2]})")
    return 0


def cmd_label(args, cfg):
    samples, manifest = envgen.load_dataset(args.dataset)
    net = optim.NetworkConfig(**manifest.network)
    t1 = envgen.label_dataset(samples, args.labeler, net, jobs=args.jobs)
    manifest.labeler_id = args.labeler
    envgen.save_dataset(args.dataset, samples, manifest)
    flagged = sum(not s.label_ok for s in samples)
    print(f"labeled {len(samples)} samples in {t1:.2f}s ({flagged} flagged); "
          f"t1. per sample {t1 / max(1, len(samples)):.2e}s")
    return 0


def _require_labels(samples):
    if not any(s.labeled for s in samples):
        raise RuntimeError("dataset not labeled; run the label command first")


def _load_split(path):
    samples, manifest = envgen.load_dataset(path)
    train, val, test = envgen.split(samples, manifest.counts)
    net = optim.NetworkConfig(**manifest.network)
    return samples, manifest, net, train, val, test


def cmd_train(args, cfg):
    if args.preset not in TRAIN_PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; choose from {TRAIN_PRESETS}")
    samples, manifest, net, train, val, test = _load_split(args.dataset)
    epochs = args.epochs if args.epochs is not None else cfg["train"]["max_epochs"]
    beta = args.beta if args.beta is not None else cfg["train"]["beta_power"]
    seed = cfg["train"]["seed"] if cfg["train"]["seed"] is not None else cfg["seed"]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    if args.preset in ("sm1", "sm1-desk"):
        _require_labels(train)
        model = bench.train_sm1(train, val, net, preset=args.preset, beta=beta,
                                epochs=epochs, seed=seed,
                                norm_kind=cfg["train"]["norm"])
        nn.save_checkpoint(out, model.spec, model.weights, normalizer=model.norm,
                           extra={"preset": args.preset, "kind": "sm1"})
        history = model.history
    elif args.preset == "pipeline":
        _require_labels(train)
        tc = train_config(cfg)
        tc.max_epochs = epochs
        tc.patience = min(tc.patience, epochs)
        trained = pipeline.train_pipeline(train + val, net, tc, beta=beta)
        nn.save_checkpoint(out, trained.spec.model_a, trained.weights_a,
                           normalizer=trained.norm_a,
                           extra={"preset": "pipeline-a", "kind": "pipeline"})
        b_path = out.with_name(out.stem + "_b" + out.suffix)
        nn.save_checkpoint(b_path, trained.spec.model_b, trained.weights_b,
                           normalizer=trained.norm_b,
                           extra={"preset": "pipeline-b", "kind": "pipeline"})
        history = trained.history_a + trained.history_b
        print(f"wrote second-stage checkpoint to {b_path}")
    else:  # sm3-conv trains without labels
        model = bench.train_sm3_unsupervised(train, val, net, beta=beta,
                                             epochs=epochs, seed=seed)
        nn.save_checkpoint(out, model.spec, model.weights, normalizer=model.norm,
                           extra={"preset": "sm3-conv", "kind": "sm3",
                                  "power_scale": model.power_scale})
        history = model.history

    hist_path = out.with_suffix(".history.csv")
    with open(hist_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss",
                                                "wall_time"])
        writer.writeheader()
        writer.writerows(history)
    print(f"wrote checkpoint to {out} and history to {hist_path}")
    return 0


def cmd_eval(args, cfg):
    samples, manifest, net, train, val, test = _load_split(args.dataset)
    spec, weights, norm, extra = nn.load_checkpoint(args.checkpoint)
    kind = extra.get("kind", "sm1")
    if kind == "sm1":
        _require_labels(test)
        model = bench.Sm1Model(spec=spec, weights=weights, norm=norm, history=[],
                               train_seconds=0.0)
        ev = bench.eval_sm1(model, test, net)
        print(f"relative sum rate {ev['r_bar']:.2f}% over {len(test)} test samples; "
              f"t3' per sample {ev['t3_per_sample']:.2e}s")
    elif kind == "sm3":
        model = bench.Sm3Model(spec=spec, weights=weights, norm=norm,
                               power_scale=extra["power_scale"], history=[],
                               train_seconds=0.0)
        powers, t3 = bench.sm3_model_powers(model, test, net)
        rates = bench.sm3_rates(powers, test, net)
        print(f"mean sum rate {rates.mean():.3f} over {len(test)} test samples; "
              f"t3' per sample {t3:.2e}s")
    else:
        raise RuntimeError(f"eval does not support checkpoints of kind {kind!r}")
    return 0


def cmd_dqn(args, cfg):
    d = dqn_config(cfg)
    episodes = args.episodes if args.episodes is not None else cfg["dqn"]["episodes"]
    users = args.users
    net = optim.NetworkConfig(num_bs=users, num_users=users, num_subcarriers=1,
                              p_max=cfg["network"]["p_max"],
                              sigma2=cfg["network"]["sigma2"])
    env = dqn.SingleCarrierEnv(net, actions=d.actions,
                               steps_per_episode=d.steps_per_episode)
    gains_for = bench.sc_gain_stream(users, cfg["seed"])
    _, logs, _ = dqn.run_online(env, gains_for, episodes, d)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["episode", "steps", "total_reward",
                                                "mean_reward", "final_reward",
                                                "epsilon", "wall_time", "phase"])
        writer.writeheader()
        for log in logs:
            writer.writerow(log.__dict__)
    print(f"wrote {episodes} episode logs to {out}; "
          f"final mean reward {logs[-1].mean_reward:.3f}")
    return 0


def cmd_bench(args, cfg):
    overrides = dict(_parse_override(item) for item in args.set)
    result = bench.run_experiment(args.experiment, seed=cfg["seed"],
                                  out_root=args.out, run_id=args.run_id, **overrides)
    print(f"experiment {args.experiment} wrote "
          f"{', '.join(f.name for f in result['files'])} under {result['dir']}")
    return 0


def cmd_report(args, cfg):
    try:
        from rrmplots import render
    except ImportError as exc:
        raise RuntimeError(
            "the plots package (rrmplots) is not installed; "
            "install it from the plots/ directory to render figures") from exc
    made = render.render(args.figure, args.results, args.out)
    for path in made:
        print(f"wrote {path}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "label": cmd_label,
    "train": cmd_train,
    "eval": cmd_eval,
    "dqn": cmd_dqn,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {"seed": args.seed} if args.seed is not None else {}
        cfg = load_config(args.config, overrides)
        if args.seed is None and "RRMBENCH_SEED" in os.environ and args.config is None:
            cfg["seed"] = default_seed()
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (envgen.LabelerMismatch, bench.ExperimentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
