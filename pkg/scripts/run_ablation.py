"""Loss ablation over all seven non-empty subsets of {P, C, F}."""

from _common import config, parser, table
from cpfscope import experiments as ex
from cpfscope.cli import write_csv


def main():
    p = parser(__doc__)
    p.add_argument("--subsets", default=",".join(ex.LOSS_SUBSETS))
    args = p.parse_args()
    rows = ex.ablation(config(args), subsets=args.subsets.split(","))
    table(rows, ["losses", *(k + "_mean" for k in ex.ERROR_KEYS)])
    if args.out:
        write_csv(rows, args.out)


if __name__ == "__main__":
    main()
