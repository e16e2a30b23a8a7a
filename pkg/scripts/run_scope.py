"""SCOPE trials on synthetic poker/wrench scenarios with default parameters."""

from _common import config, parser, table
from cpfscope import experiments as ex
from cpfscope.cli import write_csv


def main():
    p = parser(__doc__)
    p.add_argument("--loss-mask", default=None)
    args = p.parse_args()
    cfg = config(args)
    if args.loss_mask:
        from dataclasses import replace

        cfg = replace(cfg, loss_mask=args.loss_mask)
    rows = ex.run_trials(ex.scope_trial, cfg)
    table(rows, ["trial", *ex.ERROR_KEYS])
    s = ex.summarize(rows)
    print("mean  " + "  ".join(f"{k}={s[k + '_mean']:.2f}" for k in ex.ERROR_KEYS))
    if args.out:
        write_csv(rows, args.out)


if __name__ == "__main__":
    main()
