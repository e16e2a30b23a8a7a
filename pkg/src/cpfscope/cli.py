"""Command-line driver: preprocessing, calibration and batch experiments.

Exit codes: 0 success, 2 configuration error, 3 compute error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .geometry import DEFAULT_VOXEL_SIZE, load_mesh
from .models import build_model, bundle_paths, save_bundle
from .synth import calibrate_sigma, load_wrench_log, steady_window

log = logging.getLogger("cpfscope")

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 2, 3

UNITS = {
    "trial": "trial (index)",
    "seed": "seed (int)",
    "contact_error_mm": "contact_error (mm)",
    "trans_error_p_cm": "trans_error_poker (cm)",
    "trans_error_t_cm": "trans_error_tool (cm)",
    "rot_error_p_deg": "rot_error_poker (deg)",
    "rot_error_t_deg": "rot_error_tool (deg)",
    "e_agg_cm": "e_agg (cm)",
    "L_P": "L_P (points)",
    "L_C_m": "L_C (m)",
    "L_F_N": "L_F (N)",
    "wall_time_s": "wall_time (s)",
    "losses": "losses (subset)",
    "n_clp": "n_clp (count)",
    "n_opp": "n_opp (count)",
    "trials": "trials (count)",
    "component": "component",
    "variance": "variance (N^2 | (N m)^2)",
}


def _unit(key: str) -> str:
    for suffix in ("_mean", "_std"):
        if key.endswith(suffix):
            base = key[: -len(suffix)]
            return UNITS.get(base, base).replace(" (", f"{suffix} (", 1)
    return UNITS.get(key, key)


def write_csv(rows: list[dict], path: Path, extra_rows: list[dict] = ()) -> None:
    """CSV with a header naming units; ``None`` marks a quantity that was not applied."""
    keys = list(rows[0]) if rows else list(extra_rows[0])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([_unit(k) for k in keys])
        for r in list(rows) + list(extra_rows):
            w.writerow(["not-applied" if r.get(k) is None else _fmt(r.get(k)) for k in keys])


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def _progress(row: dict) -> None:
    e = row.get("e_agg_cm", row.get("contact_error_mm"))
    print(f"trial {row['trial']} seed {row['seed']}: {e:.3f}", file=sys.stderr)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    for key in ("seed", "trials", "jobs"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    if getattr(args, "out", None):
        over["out_dir"] = args.out
    if getattr(args, "loss_mask", None):
        over["loss_mask"] = args.loss_mask
    if over:
        cfg = config_from_dict({**cfg.to_dict(), **over})
    return cfg


def _prepare_out(cfg: ExperimentConfig, args) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        (out / "config.yaml").write_text(Path(args.config).read_text(encoding="utf-8"), encoding="utf-8")
    (out / "resolved_config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
    return out


def _split_timing(rows: list[dict], out: Path) -> list[dict]:
    # wall times go to their own file so the result CSVs stay bitwise reproducible
    write_csv([{"trial": r["trial"], "wall_time_s": r["wall_time_s"]} for r in rows], out / "timings.csv")
    return [{k: v for k, v in r.items() if k != "wall_time_s"} for r in rows]


def cmd_preprocess(args) -> int:
    out = Path(args.out or ".")
    mesh_path = Path(args.mesh)
    name = args.name or mesh_path.stem
    vs = args.voxel_size
    digest = hashlib.sha256(mesh_path.read_bytes() + repr((vs, args.eps_s)).encode()).hexdigest()
    stamp = out / f"{name}.hash"
    paths = bundle_paths(out, name)
    if stamp.exists() and stamp.read_text().strip() == digest and all(p.exists() for p in paths.values()):
        print(f"{name}: skipped (up to date)", file=sys.stderr)
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(name, load_mesh(mesh_path), vs, args.eps_s)
    save_bundle(model, out)
    stamp.write_text(digest + "\n")
    print(f"{name}: wrote {', '.join(p.name for p in paths.values())}", file=sys.stderr)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    wlog = load_wrench_log(args.log)
    if args.window:
        try:
            t0, t1 = (float(v) for v in args.window.split(","))
        except ValueError:
            raise ConfigError("--window expects t0,t1") from None
    else:
        t0, t1 = steady_window(wlog)
        print(f"using lowest-variance window [{t0:g}, {t1:g}] s", file=sys.stderr)
    noise = calibrate_sigma(wlog, (t0, t1))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    names = ["fx", "fy", "fz", "mx", "my", "mz"]
    write_csv([{"component": n, "variance": float(v)} for n, v in zip(names, noise.sigma_diag)], out / "noise.csv")
    return EXIT_OK


def cmd_run_cpfgrasp(args) -> int:
    cfg = _config(args)
    out = _prepare_out(cfg, args)
    rows = ex.run_trials(ex.cpf_trial, cfg, _progress)
    rows = _split_timing(rows, out)
    summary = []
    if len(rows) > 1:
        s = ex.summarize(rows, ["contact_error_mm"])
        summary = [{"trial": "mean", "seed": "", "contact_error_mm": s["contact_error_mm_mean"]},
                   {"trial": "std", "seed": "", "contact_error_mm": s["contact_error_mm_std"]}]  # fmt: skip
    write_csv(rows, out / "cpfgrasp.csv", summary)
    return EXIT_OK


def cmd_run_scope(args) -> int:
    cfg = _config(args)
    out = _prepare_out(cfg, args)
    rows = ex.run_trials(ex.scope_trial, cfg, _progress, with_history=True)
    with (out / "history.jsonl").open("w") as fh:
        for r in rows:
            for h in r.pop("history"):
                fh.write(json.dumps({"trial": r["trial"], **h}) + "\n")
    rows = _split_timing(rows, out)
    summary = []
    if len(rows) > 1:
        keys = [k for k in rows[0] if k not in ("trial", "seed")]
        s = ex.summarize(rows, keys)
        for stat in ("mean", "std"):
            summary.append({"trial": stat, "seed": "", **{k: s[f"{k}_{stat}"] for k in keys}})
    write_csv(rows, out / "scope.csv", summary)
    return EXIT_OK


def cmd_ablation(args) -> int:
    cfg = _config(args)
    out = _prepare_out(cfg, args)
    write_csv(ex.ablation(cfg, progress=_progress), out / "ablation.csv")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.n_clp is not None:
        cfg = replace(cfg, sweep_n_clp=_int_list(args.n_clp))
    if args.n_opp is not None:
        cfg = replace(cfg, sweep_n_opp=_int_list(args.n_opp))
    out = _prepare_out(cfg, args)
    write_csv(ex.sweep(cfg, progress=_progress), out / "sweep.csv")
    return EXIT_OK


def _int_list(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpfscope", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="voxelize a mesh, compute its SDF and surface points")
    pre.add_argument("mesh")
    pre.add_argument("--voxel-size", type=float, default=DEFAULT_VOXEL_SIZE)
    pre.add_argument("--eps-s", type=float, default=None)
    pre.add_argument("--name")
    pre.add_argument("--out")
    pre.set_defaults(func=cmd_preprocess)

    cal = sub.add_parser("calibrate", help="estimate sensor noise variances from a wrench log")
    cal.add_argument("log")
    cal.add_argument("--window", help="t0,t1 in seconds (default: lowest-variance 2 s window)")
    cal.add_argument("--out")
    cal.set_defaults(func=cmd_calibrate)

    for name, func, doc in [
        ("run-cpfgrasp", cmd_run_cpfgrasp, "single-arm contact filter trials"),
        ("run-scope", cmd_run_scope, "joint pose and contact estimation trials"),
        ("ablation", cmd_ablation, "SCOPE over all seven loss subsets"),
        ("sweep", cmd_sweep, "SCOPE over a grid of N_clp x N_opp"),
    ]:
        sp = sub.add_parser(name, help=doc)
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--out")
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--loss-mask", help="subset of PCF, e.g. PC")
        if name == "sweep":
            sp.add_argument("--n-clp", help="comma-separated grid, e.g. 10,20")
            sp.add_argument("--n-opp", help="comma-separated grid, e.g. 5,10")
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any compute failure maps to one exit code
        log.debug("compute error", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
