"""Single-arm contact localization on the hex key with default parameters."""

import numpy as np

from _common import config, parser
from cpfscope import experiments as ex
from cpfscope.cli import write_csv


def main():
    args = parser(__doc__).parse_args()
    cfg = config(args)
    rows = ex.run_trials(ex.cpf_trial, cfg)
    err = np.array([r["contact_error_mm"] for r in rows])
    for r in rows:
        print(f"trial {r['trial']:3d}  seed {r['seed']:4d}  error {r['contact_error_mm']:6.2f} mm  {r['wall_time_s']:.3f} s")
    print(f"mean {err.mean():.2f} mm, std {err.std(ddof=1) if len(err) > 1 else 0:.2f} mm, "
          f"{np.sum(err <= 5)}/{len(err)} within 5 mm")
    if args.out:
        write_csv(rows, args.out)


if __name__ == "__main__":
    main()
