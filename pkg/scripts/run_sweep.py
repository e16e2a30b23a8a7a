"""Particle-count sweep over N_clp x N_opp."""

from dataclasses import replace

from _common import config, parser, table
from cpfscope import experiments as ex
from cpfscope.cli import write_csv


def main():
    p = parser(__doc__)
    p.add_argument("--n-clp", default="10,20")
    p.add_argument("--n-opp", default="5,10")
    args = p.parse_args()
    cfg = replace(
        config(args),
        sweep_n_clp=[int(v) for v in args.n_clp.split(",")],
        sweep_n_opp=[int(v) for v in args.n_opp.split(",")],
    )
    rows = ex.sweep(cfg)
    table(rows, ["n_clp", "n_opp", *(k + "_mean" for k in ex.ERROR_KEYS)])
    if args.out:
        write_csv(rows, args.out)


if __name__ == "__main__":
    main()
