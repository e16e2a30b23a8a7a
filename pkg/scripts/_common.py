import argparse
from pathlib import Path

from cpfscope.config import ExperimentConfig, load_config


def parser(doc: str, trials: int = 10) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--config", help="YAML experiment config (defaults otherwise)")
    p.add_argument("--trials", type=int, default=trials)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, help="optional CSV destination")
    return p


def config(args) -> ExperimentConfig:
    from dataclasses import replace

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return replace(cfg, trials=args.trials, seed=args.seed, jobs=args.jobs)


def table(rows, cols):
    w = [max(len(c), 8) + 2 for c in cols]
    print("".join(f"{c:>{n}}" for c, n in zip(cols, w)))
    for r in rows:
        cells = (r[c] if isinstance(r[c], (str, int)) else f"{r[c]:.2f}" for c in cols)
        print("".join(f"{v:>{n}}" for v, n in zip(cells, w)))
