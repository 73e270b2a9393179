"""Command-line entry points.

Subcommands:

- ``run``       one scheme on one scenario, text record to stdout or a file
- ``sweep``     parameter sweep, one CSV per sweep in the output directory
- ``labelgen``  sample positions and produce a solver-labeled dataset
- ``train``     pretrain a surrogate model from a dataset
- ``finetune``  adapt a trained model to a new dataset
- ``report``    render figures next to previously written sweep CSVs

Errors leave a single machine-readable JSON record on stderr and a nonzero
exit code (2 for configuration problems, 1 otherwise).
"""

import argparse
import json
import os
import sys

from . import surrogate
from .beamform import build_dictionary
from .channel import AngularGrid
from .config import (ConfigError, SweepConfig, load_config, preset,
                     validate_config)
from .experiments import format_record, run_scheme, run_sweep
from .posopt import (TAG_PRETRAIN_LABELS, TAG_PRETRAIN_POS, FeasibleSet,
                     sample_positions)
from .scenario import generate_scenario


def _add_common(parser, scheme=False):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--config", help="YAML configuration file")
    group.add_argument("--scale", choices=("desk", "paper"), default=None,
                       help="built-in preset (default: desk)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured seed")
    if scheme:
        parser.add_argument("--scheme", default=None,
                            help="override the configured scheme")


def _load(args):
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = preset(args.scale or "desk")
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if getattr(args, "scheme", None) is not None:
        cfg.scheme = args.scheme
    return validate_config(cfg)


def _cmd_run(args):
    cfg = _load(args)
    rec = run_scheme(cfg)
    text = format_record(rec)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"run_{rec.scheme}.txt")
        with open(path, "w") as f:
            f.write(text)
        print(f"wrote {path}")
    sys.stdout.write(text)
    return 0


def _cmd_sweep(args):
    cfg = _load(args)
    if cfg.sweep is None:
        cfg.sweep = SweepConfig()
    rows = run_sweep(cfg, out_dir=args.out)
    from .experiments import sweep_csv_path
    print(f"wrote {sweep_csv_path(args.out, cfg.sweep.variable)}")
    for row in rows:
        print(f"{cfg.sweep.variable}={row.sweep_value:g} {row.scheme}: "
              f"{row.mean_rate:.4f} +/- {row.std_rate:.4f} bits/s/Hz "
              f"({row.n_seeds} seeds)")
    return 0


def _cmd_labelgen(args):
    cfg = _load(args)
    em_map = generate_scenario(cfg, cfg.seed)
    grid = AngularGrid(cfg.dictionary.num_angle_bins)
    dictionary = build_dictionary(cfg.dictionary.num_angle_bins,
                                  cfg.dictionary.num_patterns,
                                  cfg.dictionary.beamwidth)
    fs = FeasibleSet(rail_length=cfg.geometry.rail_length,
                     min_spacing=cfg.optimizer.min_spacing,
                     num_antennas=cfg.population.num_antennas)
    positions = sample_positions(fs, cfg.sampling.num_pretrain,
                                 (cfg.seed, TAG_PRETRAIN_POS))
    dataset = surrogate.generate_labels(
        em_map, grid, dictionary, positions, cfg.power.rho, cfg.power.sigma2,
        cfg.sampling.num_samples, (cfg.seed, TAG_PRETRAIN_LABELS),
        max_iters=cfg.solver.label_max_iters, tol=cfg.solver.label_tol,
        line_search=cfg.solver.line_search, away_steps=cfg.solver.away_steps,
    )
    surrogate.save_dataset(dataset, args.out)
    print(f"wrote {args.out} ({len(dataset.labels)} rows)")
    return 0


def _cmd_train(args):
    cfg = _load(args)
    dataset = surrogate.load_dataset(args.dataset)
    params, norm, losses = surrogate.train(dataset, cfg.training, cfg.seed)
    surrogate.save_model(params, norm, args.out)
    print(f"wrote {args.out} (final training loss {losses[-1]:.6g})")
    return 0


def _cmd_finetune(args):
    cfg = _load(args)
    params, norm = surrogate.load_model(args.model)
    dataset = surrogate.load_dataset(args.dataset)
    params, losses = surrogate.fine_tune(params, norm, dataset, cfg.training,
                                         cfg.seed)
    surrogate.save_model(params, norm, args.out)
    print(f"wrote {args.out} (final fine-tune loss {losses[-1]:.6g})")
    return 0


def _cmd_report(args):
    from .plotting import render_all
    written = render_all(args.results_dir)
    if not written:
        raise FileNotFoundError(
            f"no sweep_*.csv files found in {args.results_dir!r}")
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flexcoupler",
        description="desk-scale flexible-coupler antenna array simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a single scheme")
    _add_common(p, scheme=True)
    p.add_argument("--out", default=None, help="directory for the run record")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run the configured parameter sweep")
    _add_common(p, scheme=False)
    p.add_argument("--out", default="results", help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("labelgen", help="generate a solver-labeled dataset")
    _add_common(p)
    p.add_argument("--out", default="labels.txt", help="dataset file to write")
    p.set_defaults(func=_cmd_labelgen)

    p = sub.add_parser("train", help="pretrain a surrogate from a dataset")
    _add_common(p)
    p.add_argument("dataset", help="dataset file from labelgen")
    p.add_argument("--out", default="model.bin", help="model file to write")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="adapt a model to a new dataset")
    _add_common(p)
    p.add_argument("model", help="model file from train")
    p.add_argument("dataset", help="dataset file from labelgen")
    p.add_argument("--out", default="model_tuned.bin",
                   help="model file to write")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("report", help="render figures for sweep CSVs")
    p.add_argument("results_dir", help="directory containing sweep_*.csv")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        json.dump({"error": "config", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except Exception as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
