"""Command-line entry point: ``layermask <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import nn
from .attack import build_attack_dataset, materialize_attacker_view, mc_attack
from .audit import audit_config
from .config import MODES, RunConfig
from .data import load_dataset, vertical_split
from .framework import ATTACK_FILE, run, sweep_budget, write_csv


def _config(args, **forced) -> RunConfig:
    overrides = {
        "mode": getattr(args, "mode", None),
        "seed": getattr(args, "seed", None),
        "budget": getattr(args, "budget", None),
        "out_dir": getattr(args, "out", None),
        "epochs": getattr(args, "epochs", None),
        "transport": getattr(args, "transport", None),
        "share_domain": getattr(args, "share_domain", None),
        "sigma": getattr(args, "sigma", None),
    }
    if getattr(args, "attack_every_epoch", False):
        overrides["attack_every_epoch"] = True
    overrides.update(forced)
    if args.config:
        return RunConfig.load(args.config, **overrides)
    return RunConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def _print_summary(summary: dict) -> None:
    for k, v in summary.items():
        print(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}")


def cmd_train(args) -> int:
    cfg = _config(args)
    result = run(cfg)
    _print_summary(result.summary)
    print(f"outputs in {result.out_dir}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _config(args, mode="scratch-baseline")
    result = run(cfg)
    _print_summary(result.summary)
    return 0


def cmd_attack(args) -> int:
    model, meta = nn.load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(meta["config"]) if args.config is None else RunConfig.load(args.config)
    party = int(meta.get("party", 1))
    ds = load_dataset(cfg.dataset, cfg.test_fraction, cfg.split_seed)
    x = np.vstack([vertical_split(ds.x_train, cfg.parties)[party - 1],
                   vertical_split(ds.x_test, cfg.parties)[party - 1]])
    y = np.concatenate([ds.y_train, ds.y_test])
    seed = cfg.seed if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    data = build_attack_dataset(x, y, args.labels_per_class, rng, n_classes=ds.n_classes)
    epochs = cfg.attack_epochs if args.epochs is None else args.epochs
    view = materialize_attacker_view(model, cfg.domain())
    res = mc_attack(data, view, epochs, cfg.attack_lr, rng, head_hidden=cfg.head_hidden)
    print(f"masked layers in checkpoint: {sorted(model.masked_indices)}")
    print(f"best attack accuracy: {res.best:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / ATTACK_FILE, [{
            "seed": seed, "party": party, "mode": "checkpoint", "m_per_class": args.labels_per_class,
            "attack_epochs": epochs, "per_epoch": ";".join(repr(a) for a in res.per_epoch),
            "best": res.best}], ["seed", "party", "mode", "m_per_class", "attack_epochs",
                                 "per_epoch", "best"])
    return 0


def cmd_check_security(args) -> int:
    cfg = _config(args)
    report = audit_config(cfg)
    print(report.format())
    if args.json:
        print(json.dumps(report.to_rows(), indent=2))
    if report.warnings and not args.allow_insecure:
        return 1
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    budgets = sorted((float(b) for b in args.budgets.split(",") if b.strip()), reverse=True)
    rows, _ = sweep_budget(cfg, budgets)
    print("budget,attack_acc,main_acc,mask_ratio")
    for r in rows:
        print(f"{r['budget']},{r['attack_acc']:.4f},{r['main_acc']:.4f},{r['mask_ratio']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layermask", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_mode=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--epochs", type=int)
        p.add_argument("--transport", choices=["inprocess", "socket"])
        p.add_argument("--share-domain", choices=["float", "ring"])
        p.add_argument("--sigma", type=float)
        p.add_argument("--budget", type=float)
        if with_mode:
            p.add_argument("--mode", choices=MODES)

    p = sub.add_parser("train", help="run VFL training with or without layer masking")
    common(p)
    p.add_argument("--attack-every-epoch", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="model-completion attack on a saved passive checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels-per-class", type=int, default=4)
    p.add_argument("--config", help="override the config stored in the checkpoint")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("baseline-scratch", help="attack a freshly initialized bottom model")
    common(p, with_mode=False)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("check-security", help="audit masked layers against batch-size rules")
    common(p)
    p.add_argument("--allow-insecure", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_check_security)

    p = sub.add_parser("sweep-budget", help="one run per privacy budget")
    common(p)
    p.add_argument("--budgets", default="0.6,0.5,0.4,0.3,0.2")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
