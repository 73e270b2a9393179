"""Deployment schemes, the nested baseline, and parameter sweeps.

Each scheme returns the same kind of record: rail positions, one dictionary
pattern per antenna, and the sum rate those achieve on the cluster-core
channel.  Every scheme also scores the do-nothing configuration (uniform
positions, broadside patterns) and keeps whichever is better, so a scheme
whose search space contains another's configuration can never score below
it on the same scenario.

``run_sweep`` evaluates schemes over a parameter grid with matched seeds
(every scheme at a grid point sees the same scenario draw) and writes one
CSV per sweep.
"""

from dataclasses import dataclass, field
import csv
import logging
import os
import time

import numpy as np

from .beamform import (Beamformer, CallCounter, PatternDictionary,
                       broadside_index, build_dictionary, ergodic_rate,
                       project_onto_patterns, round_selector, solve_relaxed)
from .channel import AngularGrid, cluster_core_channel, \
    sample_multipath_channels, sum_rate
from .config import SCHEMES, ConfigError, validate_config, with_sweep_value
from .posopt import (FeasibleSet, finite_difference_gradient,
                     project_feasible, run_two_timescale, uniform_positions)
from .scenario import generate_scenario, redraw_clusters

log = logging.getLogger(__name__)

# rng stream tags local to this module (pipeline tags live in posopt)
TAG_ROTATABLE = 8
TAG_BASELINE = 9
TAG_SWEEP = 10


@dataclass
class RunRecord:
    """One scheme run on one scenario."""

    scheme: str
    positions: np.ndarray
    pattern_indices: np.ndarray
    rate: float
    relaxed_solves: int
    online_relaxed_solves: int
    seconds: float
    online_seconds: float
    detail: dict = field(default_factory=dict)


@dataclass
class ResultRow:
    """Per grid point and scheme aggregate over seeds."""

    sweep_value: float
    scheme: str
    mean_rate: float
    std_rate: float
    n_seeds: int
    calls: int
    seconds: float
    # per-seed rates in seed order; kept out of the CSV, so rows read back
    # from disk carry an empty tuple here
    rates: tuple = ()


CSV_COLUMNS = ("sweep_var", "scheme", "mean_rate", "std_rate", "n_seeds",
               "calls", "seconds")


def _deploy_rate(em_map, grid, dictionary, positions, pattern_indices,
                 rho, sigma2):
    core = cluster_core_channel(em_map, grid, np.asarray(positions, float))
    combiner = Beamformer(dictionary=dictionary,
                          pattern_indices=np.asarray(pattern_indices, int))
    return sum_rate(core, combiner, rho, sigma2)


def _best_candidate(em_map, grid, dictionary, candidates, rho, sigma2):
    """Highest core-channel rate among (positions, patterns) candidates."""
    best = None
    for positions, patterns in candidates:
        rate = _deploy_rate(em_map, grid, dictionary, positions, patterns,
                            rho, sigma2)
        if best is None or rate > best[0]:
            best = (rate, np.asarray(positions, float),
                    np.asarray(patterns, int))
    return best


def _default_candidate(fs, dictionary):
    return (uniform_positions(fs),
            np.full(fs.num_antennas, broadside_index(dictionary), dtype=int))


def broadside_subdictionary(dictionary: PatternDictionary):
    """Single-column dictionary holding only the broadside pattern."""
    b = broadside_index(dictionary)
    return PatternDictionary(gains=dictionary.gains[:, b:b + 1].copy(),
                             centers=dictionary.centers[b:b + 1].copy(),
                             beamwidth=dictionary.beamwidth,
                             kappa=dictionary.kappa)


def _feasible_set(cfg):
    return FeasibleSet(rail_length=cfg.geometry.rail_length,
                       min_spacing=cfg.optimizer.min_spacing,
                       num_antennas=cfg.population.num_antennas)


def _run_fixed(cfg, seed, em_map, grid, dictionary, fs, extra):
    t0 = time.perf_counter()
    positions, patterns = _default_candidate(fs, dictionary)
    rate = _deploy_rate(em_map, grid, dictionary, positions, patterns,
                        cfg.power.rho, cfg.power.sigma2)
    elapsed = time.perf_counter() - t0
    return RunRecord(scheme="fixed_antenna", positions=positions,
                     pattern_indices=patterns, rate=rate, relaxed_solves=0,
                     online_relaxed_solves=0, seconds=elapsed,
                     online_seconds=elapsed)


def _run_pipeline(cfg, seed, em_map, live_map, grid, dictionary, fs, extra,
                  scheme):
    """Two-timescale pipeline; translatable restricts to one fixed pattern.

    The pipeline pretrains on the pristine map and drifts internally with
    the same seed, so candidates are scored on the shared live map.
    """
    t0 = time.perf_counter()
    if scheme == "translatable_fixed_pattern":
        solve_dict = broadside_subdictionary(dictionary)
    else:
        solve_dict = dictionary
    report = run_two_timescale(cfg, seed, em_map=em_map,
                               dictionary=solve_dict)
    if scheme == "translatable_fixed_pattern":
        chosen_patterns = np.full(fs.num_antennas, broadside_index(dictionary),
                                  dtype=int)
    else:
        chosen_patterns = report.pattern_indices
    candidates = [(report.positions, chosen_patterns),
                  _default_candidate(fs, dictionary)] + list(extra)
    rate, positions, patterns = _best_candidate(
        live_map, grid, dictionary, candidates, cfg.power.rho, cfg.power.sigma2
    )
    total_solves = sum(ph.relaxed_solves for ph in report.phases.values())
    return RunRecord(scheme=scheme, positions=positions,
                     pattern_indices=patterns, rate=rate,
                     relaxed_solves=total_solves,
                     online_relaxed_solves=report.online_relaxed_solves,
                     seconds=time.perf_counter() - t0,
                     online_seconds=report.online_seconds,
                     detail={"report": report})


def _run_rotatable(cfg, seed, em_map, grid, dictionary, fs, extra):
    """Fixed positions; per-antenna pattern picked by single-block search.

    One sweep over antennas, each scored on the sampled ergodic rate with
    the other antennas' choices held fixed.
    """
    t0 = time.perf_counter()
    rho, sigma2 = cfg.power.rho, cfg.power.sigma2
    positions = uniform_positions(fs)
    batch = sample_multipath_channels(em_map, grid, positions,
                                      cfg.sampling.num_samples,
                                      (seed, TAG_ROTATABLE))
    W = project_onto_patterns(batch.samples, dictionary, fs.num_antennas)
    U = dictionary.num_patterns
    indices = np.full(fs.num_antennas, broadside_index(dictionary), dtype=int)

    def score(idx):
        v = np.zeros(U * fs.num_antennas)
        v[np.arange(fs.num_antennas) * U + idx] = 1.0
        return ergodic_rate(v, W, rho, sigma2)

    for n in range(fs.num_antennas):
        trial = indices.copy()
        best_u, best_val = indices[n], -np.inf
        for u in range(U):
            trial[n] = u
            val = score(trial)
            if val > best_val:
                best_u, best_val = u, val
        indices[n] = best_u
    candidates = [(positions, indices), _default_candidate(fs, dictionary)]
    rate, positions, patterns = _best_candidate(
        em_map, grid, dictionary, candidates, rho, sigma2
    )
    elapsed = time.perf_counter() - t0
    return RunRecord(scheme="rotatable_fixed_pattern", positions=positions,
                     pattern_indices=patterns, rate=rate, relaxed_solves=0,
                     online_relaxed_solves=0, seconds=elapsed,
                     online_seconds=elapsed)


def _linear_oracle(direction, fs: FeasibleSet):
    """Exact maximizer of a linear function over the feasible set.

    In shifted coordinates the set is the nondecreasing chain inside a box,
    whose vertices put the box width on a suffix of coordinates; the best
    suffix maximizes the suffix sum of the direction.
    """
    g = np.asarray(direction, dtype=float)
    suffix = np.concatenate([np.cumsum(g[::-1])[::-1], [0.0]])
    j = int(np.argmax(suffix))
    q = np.zeros(fs.num_antennas)
    q[j:] = fs.width
    return q + fs.offsets


def run_nested_baseline(cfg, seed=None, em_map=None, dictionary=None):
    """Conditional-gradient position loop with nested fast-timescale solves.

    Every outer iteration draws fresh sample batches at the current
    positions and re-solves the relaxed selection on each (the instrumented
    cost this baseline exists to expose), keeps the best rounding, then
    takes a conditional-gradient step on the core-channel rate with the
    pattern held fixed.

    The baseline has no pretraining phase, so it runs in whatever
    environment it is given; drift handling lives in run_scheme.
    """
    seed = cfg.seed if seed is None else seed
    if em_map is None:
        em_map = generate_scenario(cfg, seed)
    grid = AngularGrid(cfg.dictionary.num_angle_bins)
    if dictionary is None:
        dictionary = build_dictionary(cfg.dictionary.num_angle_bins,
                                      cfg.dictionary.num_patterns,
                                      cfg.dictionary.beamwidth)
    fs = _feasible_set(cfg)
    rho, sigma2 = cfg.power.rho, cfg.power.sigma2
    counter = CallCounter()
    inner_iterations = 0
    positions = uniform_positions(fs)
    patterns = np.full(fs.num_antennas, broadside_index(dictionary), dtype=int)
    trace = []

    t0 = time.perf_counter()
    for t in range(cfg.baseline.outer_iters):
        best = None
        for h in range(cfg.baseline.samples_per_update):
            batch = sample_multipath_channels(
                em_map, grid, positions, cfg.sampling.num_samples,
                (seed, TAG_BASELINE, t, h),
            )
            sol = solve_relaxed(batch.samples, dictionary, rho, sigma2,
                                max_iters=cfg.solver.max_iters,
                                tol=cfg.solver.tol,
                                line_search=cfg.solver.line_search,
                                away_steps=cfg.solver.away_steps,
                                counter=counter)
            inner_iterations += sol.iterations
            idx, combiner = round_selector(sol.weights, dictionary)
            rate = sum_rate(batch.core, combiner, rho, sigma2)
            if best is None or rate > best[0]:
                best = (rate, combiner.pattern_indices)
        patterns = np.asarray(best[1], dtype=int)
        trace.append(best[0])
        combiner = Beamformer(dictionary=dictionary, pattern_indices=patterns)

        def core_rate(q):
            return sum_rate(cluster_core_channel(em_map, grid, q), combiner,
                            rho, sigma2)

        grad = finite_difference_gradient(core_rate, positions,
                                          fs.rail_length,
                                          fd_step=cfg.optimizer.fd_step)
        vertex = _linear_oracle(grad, fs)
        gamma = 2.0 / (t + 2.0)
        positions = project_feasible(positions + gamma * (vertex - positions),
                                     fs)
    elapsed = time.perf_counter() - t0

    candidates = [(positions, patterns), _default_candidate(fs, dictionary)]
    rate, positions, patterns = _best_candidate(
        em_map, grid, dictionary, candidates, rho, sigma2
    )
    return RunRecord(scheme="nested_baseline", positions=positions,
                     pattern_indices=patterns, rate=rate,
                     relaxed_solves=counter.count,
                     online_relaxed_solves=counter.count,
                     seconds=elapsed, online_seconds=elapsed,
                     detail={"inner_iterations": inner_iterations,
                             "outer_iterations": cfg.baseline.outer_iters,
                             "rate_trace": trace})


def run_scheme(cfg, scheme=None, seed=None, em_map=None, dictionary=None,
               extra_candidates=()):
    """Run one deployment scheme and report its achieved configuration.

    ``extra_candidates`` lets a caller seed the candidate set with
    configurations found by a scheme whose search space this one contains.
    """
    scheme = cfg.scheme if scheme is None else scheme
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    seed = cfg.seed if seed is None else seed
    if em_map is None:
        em_map = generate_scenario(cfg, seed)
    live_map = em_map
    if cfg.drift is not None:
        live_map = redraw_clusters(em_map, cfg, cfg.drift.distance_range,
                                   seed)
    grid = AngularGrid(cfg.dictionary.num_angle_bins)
    if dictionary is None:
        dictionary = build_dictionary(cfg.dictionary.num_angle_bins,
                                      cfg.dictionary.num_patterns,
                                      cfg.dictionary.beamwidth)
    fs = _feasible_set(cfg)
    extra = list(extra_candidates)
    if scheme == "fixed_antenna":
        return _run_fixed(cfg, seed, live_map, grid, dictionary, fs, extra)
    if scheme in ("flexible", "translatable_fixed_pattern"):
        return _run_pipeline(cfg, seed, em_map, live_map, grid, dictionary,
                             fs, extra, scheme)
    if scheme == "rotatable_fixed_pattern":
        return _run_rotatable(cfg, seed, live_map, grid, dictionary, fs,
                              extra)
    return run_nested_baseline(cfg, seed=seed, em_map=live_map,
                               dictionary=dictionary)


# candidate handoff between schemes: a scheme inherits the configurations
# found by every scheme whose search space it contains, so poorer schemes
# must run first
_CONTAINS = {
    "translatable_fixed_pattern": ("fixed_antenna",),
    "flexible": ("translatable_fixed_pattern", "fixed_antenna"),
}
_RUN_ORDER = ("fixed_antenna", "translatable_fixed_pattern", "flexible",
              "rotatable_fixed_pattern", "nested_baseline")


def run_sweep(cfg, out_dir=None):
    """Evaluate the configured schemes over the sweep grid.

    For each grid point and seed every scheme sees the same scenario draw.
    Schemes run in nesting order so that a richer scheme's candidate set
    contains the configurations the poorer ones chose; with matched draws
    the mean rates are then ordered by construction.  Per-row failures are
    logged and skipped.  When ``out_dir`` is set the aggregate table is
    written to ``sweep_<variable>.csv`` there.
    """
    validate_config(cfg)
    if cfg.sweep is None:
        raise ConfigError("config has no sweep block")
    variable = cfg.sweep.variable
    schemes = list(cfg.sweep.schemes)
    order = [s for s in _RUN_ORDER if s in schemes]
    rows = []
    for value in cfg.sweep.grid:
        point_cfg = with_sweep_value(cfg, variable, value)
        per_scheme = {s: [] for s in order}
        for s_idx in range(cfg.sweep.num_seeds):
            seed = (cfg.seed, TAG_SWEEP, s_idx)
            em_map = generate_scenario(point_cfg, seed)
            chosen = {}
            for scheme in order:
                extra = [chosen[src] for src in _CONTAINS.get(scheme, ())
                         if src in chosen]
                try:
                    rec = run_scheme(point_cfg, scheme=scheme, seed=seed,
                                     em_map=em_map, extra_candidates=extra)
                except Exception:
                    log.exception("scheme %s failed at %s=%r seed %d",
                                  scheme, variable, value, s_idx)
                    continue
                chosen[scheme] = (rec.positions, rec.pattern_indices)
                per_scheme[scheme].append(rec)
        for scheme in order:
            recs = per_scheme[scheme]
            if not recs:
                log.error("scheme %s produced no results at %s=%r",
                          scheme, variable, value)
                continue
            rates = np.array([r.rate for r in recs])
            std = float(np.std(rates, ddof=1)) if len(rates) > 1 else 0.0
            rows.append(ResultRow(
                sweep_value=float(value), scheme=scheme,
                mean_rate=float(np.mean(rates)), std_rate=std,
                n_seeds=len(recs),
                calls=int(sum(r.online_relaxed_solves for r in recs)),
                seconds=float(sum(r.seconds for r in recs)),
                rates=tuple(float(r) for r in rates),
            ))
    if out_dir is not None:
        write_sweep_csv(rows, variable, out_dir)
    return rows


def format_record(rec: RunRecord):
    """Flat key = value text record of one scheme run."""
    from .posopt import format_report
    lines = [
        "record = scheme run",
        f"scheme = {rec.scheme}",
        "positions = " + ",".join(f"{x:.17g}" for x in rec.positions),
        "pattern_indices = " + ",".join(str(i) for i in rec.pattern_indices),
        f"rate_bit_per_s_per_hz = {rec.rate:.17g}",
        f"relaxed_solves = {rec.relaxed_solves}",
        f"online_relaxed_solves = {rec.online_relaxed_solves}",
        f"seconds = {rec.seconds:.6f}",
        f"online_seconds = {rec.online_seconds:.6f}",
    ]
    text = "\n".join(lines) + "\n"
    report = rec.detail.get("report")
    if report is not None:
        text += format_report(report)
    return text


def sweep_csv_path(out_dir, variable):
    return os.path.join(out_dir, f"sweep_{variable}.csv")


def write_sweep_csv(rows, variable, out_dir):
    """One header row plus one aggregate row per (grid value, scheme)."""
    os.makedirs(out_dir, exist_ok=True)
    path = sweep_csv_path(out_dir, variable)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([
                f"{row.sweep_value:.17g}", row.scheme,
                f"{row.mean_rate:.17g}", f"{row.std_rate:.17g}",
                row.n_seeds, row.calls, f"{row.seconds:.6f}",
            ])
    return path


def read_sweep_csv(path):
    """Inverse of write_sweep_csv."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected sweep CSV header in {path}")
        for rec in reader:
            rows.append(ResultRow(
                sweep_value=float(rec[0]), scheme=rec[1],
                mean_rate=float(rec[2]), std_rate=float(rec[3]),
                n_seeds=int(rec[4]), calls=int(rec[5]),
                seconds=float(rec[6]),
            ))
    return rows
