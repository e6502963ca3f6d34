"""``robust-vvc`` command line.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import forecast as fc
from .bench.config import ConfigError, ExperimentConfig
from .bench.runner import NumericalError, cmd_bruteforce, cmd_eval, cmd_report, cmd_train, network
from .delay import DelayError
from .forecast import ForecastError
from .grid import CaseError, import_matpower_tables, read_table_csv
from .powerflow import NotConvergedError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _config(args) -> ExperimentConfig:
    over = {"out": args.out}
    if args.seed is not None:
        over["train_seed"] = args.seed
        over["eval_seed"] = args.seed
    for key in ("case", "episodes", "algorithm", "delays"):
        if getattr(args, key, None) is not None:
            over[key] = getattr(args, key)
    if args.config:
        return ExperimentConfig.load(args.config, **over)
    return ExperimentConfig(**{k: v for k, v in over.items() if v is not None})


def parse_regions(text: str) -> list[list[int]]:
    """``"1-3,6;4-5"`` -> [[1, 2, 3, 6], [4, 5]]."""
    regions = []
    for group in text.split(";"):
        members = []
        for part in group.split(","):
            part = part.strip()
            if not part:
                continue
            try:
                if "-" in part:
                    lo, hi = (int(v) for v in part.split("-", 1))
                    members.extend(range(lo, hi + 1))
                else:
                    members.append(int(part))
            except ValueError:
                raise ConfigError(f"bad region list {text!r}") from None
        if members:
            regions.append(members)
    if not regions:
        raise ConfigError("empty region list")
    return regions


def _train(args) -> None:
    cfg = _config(args)
    done = cmd_train(cfg, progress=_progress if args.verbose else None)
    print(f"trained delay indices: {done or 'none (all complete)'}")


def _progress(row):
    logging.getLogger("robust_vvc").info("episode %d  mean reward %.5f", row["episode"], row["mean_reward"])


def _eval(args) -> None:
    rep = cmd_eval(_config(args))
    for m in rep["metrics"]:
        print(f"{m['method']}: AverObjValue={m['AverObjValue']:.6f} MaxVolDevia={m['MaxVolDevia']:.5f}")


def _bruteforce(args) -> None:
    rows = cmd_bruteforce(_config(args), args.grid)
    for r in rows:
        print(f"t={r['t']} ratios={[round(v, 3) for v in r['ratios']]} objective={r['objective']:.6f}")


def _report(args) -> None:
    print(cmd_report(args.run_dir or args.out), end="")


def _gen_profiles(args) -> None:
    cfg = _config(args)
    net = network(cfg)
    seed = cfg.profile_seed if args.seed is None else args.seed
    prof = fc.generate_profiles(seed, args.duration or cfg.profile_duration_s, net)
    fc.write_profiles(args.output, prof, net)
    print(f"wrote {len(prof)} s of profiles for {net.n_bus} buses to {args.output}")


def _import_case(args) -> None:
    pv = read_table_csv(args.pv) if args.pv else ()
    regions = parse_regions(args.regions) if args.regions else None
    text = import_matpower_tables(read_table_csv(args.bus), read_table_csv(args.branch), args.base_mva,
                                  name=args.name, v_ref=args.v_ref, pv=pv, regions=regions)
    with open(args.output, "w") as fh:
        fh.write(text)
    print(f"wrote {args.output}")


def _global_flags(p: argparse.ArgumentParser, default) -> None:
    p.add_argument("--config", default=default, help="experiment config file (INI key-value format)")
    p.add_argument("--seed", type=int, default=default, help="overrides train_seed and eval_seed")
    p.add_argument("--out", default=default, help="run directory")
    p.add_argument("-v", "--verbose", action="store_true", default=default if default is not None else False)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-vvc",
                                description="Delay-adaptive robust Volt/Var control experiments")
    _global_flags(p, None)
    # global flags are accepted after the verb too; SUPPRESS keeps the
    # subparser from resetting values given before it
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, fn, help_):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.set_defaults(fn=fn)
        return s

    for name, fn, help_ in (("train", _train, "train one ensemble per delay candidate"),
                            ("eval", _eval, "closed-loop test with delay-adaptive composition"),
                            ("bruteforce", _bruteforce, "grid-search robust oracle (at most 3 inverters)")):
        s = verb(name, fn, help_)
        s.add_argument("--case")
        s.add_argument("--algorithm")
        s.add_argument("--episodes", type=int)
        s.add_argument("--delays", help="comma-separated delay indices to train")
        if name == "bruteforce":
            s.add_argument("--grid", type=int, help="grid points per inverter (<= 21)")

    s = verb("report", _report, "summary table and plot-data CSVs of a run directory")
    s.add_argument("run_dir", nargs="?")

    s = verb("gen-profiles", _gen_profiles, "write a synthetic profile CSV")
    s.add_argument("output")
    s.add_argument("--case")
    s.add_argument("--duration", type=int)

    s = verb("import-case", _import_case, "convert MATPOWER bus/branch CSV tables to a case file")
    s.add_argument("--bus", required=True, help="MATPOWER bus table CSV")
    s.add_argument("--branch", required=True, help="MATPOWER branch table CSV (r, x in p.u.)")
    s.add_argument("--base-mva", type=float, default=10.0)
    s.add_argument("--name", default="imported")
    s.add_argument("--v-ref", type=float, default=1.0)
    s.add_argument("--pv", help="CSV rows: bus, s_mva, p_max_mw, p_min_mw, beta")
    s.add_argument("--regions", help='bus groups, e.g. "1-3;4-6"')
    s.add_argument("output")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (ConfigError, CaseError, DelayError, ForecastError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, NotConvergedError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
