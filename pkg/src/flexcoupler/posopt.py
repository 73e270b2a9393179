"""Slow-timescale antenna positioning on the rail.

Feasible position vectors are ordered, keep a minimum spacing, and stay on
the rail.  Shifting coordinate n by n*min_spacing turns the set into the
nondecreasing cone intersected with a constant box, so the exact Euclidean
projection is isotonic regression (pool adjacent violators) followed by
clamping.  Positions are improved by projected gradient ascent on the
surrogate, with gradients taken by central finite differences through the
exact cluster-core channel map.

``run_two_timescale`` is the full pipeline: pretrain the surrogate from
solver-labeled rows, optionally drift the environment and fine-tune, then
optimize positions (no fast-timescale solves inside the loop) and finish
with a single relaxed solve at the returned positions.
"""

from dataclasses import dataclass, field
import time

import numpy as np

from . import surrogate
from .beamform import (Beamformer, CallCounter, broadside_index,
                       build_dictionary, round_selector, solve_relaxed)
from .channel import (AngularGrid, cluster_core_channel,
                      sample_multipath_channels, sum_rate)
from .scenario import generate_scenario, redraw_clusters, rng_from

# pipeline rng stream tags; the drift stream tag (6) lives inside
# scenario.redraw_clusters
TAG_PRETRAIN_POS = 1
TAG_PRETRAIN_LABELS = 2
TAG_FINETUNE_POS = 4
TAG_FINETUNE_LABELS = 5
TAG_FINAL_BATCH = 7


@dataclass(frozen=True)
class FeasibleSet:
    """Rail positions with ordering and minimum-spacing constraints."""

    rail_length: float
    min_spacing: float
    num_antennas: int

    def __post_init__(self):
        if self.rail_length <= 0 or self.min_spacing <= 0:
            raise ValueError("rail_length and min_spacing must be positive")
        if self.width < 0:
            raise ValueError("rail too short for this spacing and antenna count")

    @property
    def width(self):
        """Length of the box the shifted coordinates live in."""
        return self.rail_length - (self.num_antennas - 1) * self.min_spacing

    @property
    def offsets(self):
        return self.min_spacing * np.arange(self.num_antennas)

    def contains(self, p, tol=1.0e-9):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.num_antennas,):
            return False
        if p[0] < -tol or p[-1] > self.rail_length + tol:
            return False
        return bool(np.all(np.diff(p) >= self.min_spacing - tol))


def _isotonic_increasing(y):
    """Pool-adjacent-violators projection onto the nondecreasing cone."""
    n = len(y)
    value = np.asarray(y, dtype=float).copy()
    weight = np.ones(n)
    idx = np.zeros(n, dtype=int)
    top = -1
    for i in range(n):
        top += 1
        value[top] = y[i]
        weight[top] = 1.0
        idx[top] = i
        while top > 0 and value[top - 1] > value[top]:
            total = weight[top - 1] + weight[top]
            value[top - 1] = (weight[top - 1] * value[top - 1]
                              + weight[top] * value[top]) / total
            weight[top - 1] = total
            top -= 1
    out = np.empty(n)
    start = 0
    for level in range(top + 1):
        end = idx[level + 1] if level < top else n
        out[start:end] = value[level]
        start = end
    return out


def project_feasible(x, fs: FeasibleSet):
    """Exact Euclidean projection onto the feasible set.

    Shift to the nondecreasing cone, pool adjacent violators, clamp to the
    constant box, shift back.  For chain constraints with constant bounds
    this composition is the exact projection.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (fs.num_antennas,):
        raise ValueError(f"expected {fs.num_antennas} coordinates")
    q = _isotonic_increasing(x - fs.offsets)
    q = np.clip(q, 0.0, fs.width)
    return q + fs.offsets


def uniform_positions(fs: FeasibleSet):
    """Evenly spread positions covering the whole rail."""
    if fs.num_antennas == 1:
        return np.array([0.5 * fs.rail_length])
    return np.linspace(0.0, fs.rail_length, fs.num_antennas)


def sample_positions(fs: FeasibleSet, count, seed):
    """Uniform coverage of the feasible set.

    Latin-hypercube strata in the shifted box, sorted per row and shifted
    back, so samples stratify every coordinate while staying feasible.
    """
    rng = rng_from(seed)
    N = fs.num_antennas
    q = np.empty((count, N))
    for n in range(N):
        strata = rng.permutation(count)
        q[:, n] = (strata + rng.uniform(size=count)) / count * fs.width
    q.sort(axis=1)
    return q + fs.offsets[None, :]


def finite_difference_gradient(value_fn, p, rail_length, fd_step=1.0e-3):
    """Central-difference gradient of a rail-position objective.

    Falls back to a one-sided difference at the rail ends.  Probe points may
    violate spacing; only the rail bounds restrict them.
    """
    p = np.asarray(p, dtype=float)
    grad = np.zeros_like(p)
    for n in range(len(p)):
        hi = p.copy()
        lo = p.copy()
        if p[n] + fd_step <= rail_length:
            hi[n] = p[n] + fd_step
        if p[n] - fd_step >= 0.0:
            lo[n] = p[n] - fd_step
        denom = hi[n] - lo[n]
        if denom == 0.0:
            raise ValueError("fd_step exceeds the rail length")
        grad[n] = (value_fn(hi) - value_fn(lo)) / denom
    return grad


def position_gradient(params, norm, em_map, grid, p, fs: FeasibleSet,
                      fd_step=1.0e-3):
    """Central-difference surrogate gradient through the exact channel map."""

    def value(q):
        core = cluster_core_channel(em_map, grid, q)
        return surrogate.predict_rate(params, norm, core)

    return finite_difference_gradient(value, p, em_map.env.rail_length,
                                      fd_step=fd_step)


@dataclass
class PositionOptResult:
    positions: np.ndarray
    values: list
    gradient_norms: list
    iterations: int
    converged: bool


def projected_gradient_ascent(value_fn, grad_fn, p0, fs: FeasibleSet,
                              step_size, tolerance, max_iters,
                              backtracking=True, max_halvings=20):
    """Maximize a callable over the feasible set by projected ascent.

    With backtracking on, a step is only accepted if it does not decrease
    the objective, so the returned value never undercuts the start.
    """
    p = np.asarray(p0, dtype=float)
    if not fs.contains(p):
        raise ValueError("starting point is not feasible")
    val = value_fn(p)
    values = [val]
    grad_norms = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        g = grad_fn(p)
        gn = float(np.linalg.norm(g))
        grad_norms.append(gn)
        if gn < tolerance:
            converged = True
            break
        eta = step_size
        accepted = False
        for _ in range(max_halvings + 1):
            cand = project_feasible(p + eta * g, fs)
            cand_val = value_fn(cand)
            if not backtracking or cand_val >= val - 1.0e-12:
                p, val = cand, cand_val
                accepted = True
                break
            eta *= 0.5
        values.append(val)
        if not accepted:
            break
    return PositionOptResult(positions=p, values=values,
                             gradient_norms=grad_norms, iterations=it,
                             converged=converged)


def optimize_positions(params, norm, em_map, grid, p0, fs: FeasibleSet,
                       step_size=0.05, tolerance=1.0e-3, max_iters=200,
                       fd_step=1.0e-3, backtracking=True):
    """Projected gradient ascent of the surrogate over rail positions."""

    def value(p):
        return surrogate.predict_rate(
            params, norm, cluster_core_channel(em_map, grid, p)
        )

    def grad(p):
        return position_gradient(params, norm, em_map, grid, p, fs,
                                 fd_step=fd_step)

    return projected_gradient_ascent(value, grad, p0, fs, step_size,
                                     tolerance, max_iters,
                                     backtracking=backtracking)


@dataclass
class PhaseStats:
    seconds: float = 0.0
    relaxed_solves: int = 0


@dataclass
class TwoTimescaleReport:
    """Everything the pipeline did, for inspection and the run report."""

    positions: np.ndarray
    pattern_indices: np.ndarray
    rate: float
    phases: dict = field(default_factory=dict)
    rate_trace: list = field(default_factory=list)
    train_losses: list = field(default_factory=list)
    finetune_losses: list = field(default_factory=list)
    position_iterations: int = 0
    position_converged: bool = False
    solver_gap: float = float("nan")
    num_resampled: int = 0

    @property
    def online_seconds(self):
        return (self.phases["positions"].seconds
                + self.phases["final_solve"].seconds)

    @property
    def online_relaxed_solves(self):
        return (self.phases["positions"].relaxed_solves
                + self.phases["final_solve"].relaxed_solves)


def run_two_timescale(cfg, seed=None, em_map=None, dictionary=None):
    """Pretrain, optionally drift and fine-tune, position, then one solve.

    The position loop never touches the fast-timescale solver; the online
    phase performs exactly one relaxed solve, at the returned positions.
    """
    seed = cfg.seed if seed is None else seed
    if em_map is None:
        em_map = generate_scenario(cfg, seed)
    grid = AngularGrid(cfg.dictionary.num_angle_bins)
    if dictionary is None:
        dictionary = build_dictionary(cfg.dictionary.num_angle_bins,
                                      cfg.dictionary.num_patterns,
                                      cfg.dictionary.beamwidth)
    fs = FeasibleSet(rail_length=cfg.geometry.rail_length,
                     min_spacing=cfg.optimizer.min_spacing,
                     num_antennas=cfg.population.num_antennas)
    rho, sigma2 = cfg.power.rho, cfg.power.sigma2
    phases = {name: PhaseStats() for name in
              ("pretrain", "finetune", "positions", "final_solve")}

    # offline: label and pretrain
    t0 = time.perf_counter()
    counter = CallCounter()
    pos = sample_positions(fs, cfg.sampling.num_pretrain, (seed, TAG_PRETRAIN_POS))
    labels = surrogate.generate_labels(
        em_map, grid, dictionary, pos, rho, sigma2, cfg.sampling.num_samples,
        (seed, TAG_PRETRAIN_LABELS), max_iters=cfg.solver.label_max_iters,
        tol=cfg.solver.label_tol, line_search=cfg.solver.line_search,
        away_steps=cfg.solver.away_steps, counter=counter,
    )
    params, norm, train_losses = surrogate.train(labels, cfg.training, seed)
    phases["pretrain"] = PhaseStats(time.perf_counter() - t0, counter.count)

    # online: drift, fine-tune
    live_map = em_map
    finetune_losses = []
    if cfg.drift is not None:
        live_map = redraw_clusters(em_map, cfg, cfg.drift.distance_range,
                                   seed)
        if cfg.sampling.num_finetune > 0:
            t0 = time.perf_counter()
            counter = CallCounter()
            fpos = sample_positions(fs, cfg.sampling.num_finetune,
                                    (seed, TAG_FINETUNE_POS))
            flabels = surrogate.generate_labels(
                live_map, grid, dictionary, fpos, rho, sigma2,
                cfg.sampling.num_samples, (seed, TAG_FINETUNE_LABELS),
                max_iters=cfg.solver.label_max_iters, tol=cfg.solver.label_tol,
                line_search=cfg.solver.line_search,
                away_steps=cfg.solver.away_steps, counter=counter,
            )
            params, finetune_losses = surrogate.fine_tune(
                params, norm, flabels, cfg.training, seed
            )
            phases["finetune"] = PhaseStats(time.perf_counter() - t0,
                                            counter.count)

    # online: position optimization, zero fast-timescale solves inside
    t0 = time.perf_counter()
    opt = optimize_positions(
        params, norm, live_map, grid, uniform_positions(fs), fs,
        step_size=cfg.optimizer.step_size, tolerance=cfg.optimizer.tolerance,
        max_iters=cfg.optimizer.max_iters, fd_step=cfg.optimizer.fd_step,
        backtracking=cfg.optimizer.backtracking,
    )
    phases["positions"] = PhaseStats(time.perf_counter() - t0, 0)

    # online: the single relaxed solve at the chosen positions
    t0 = time.perf_counter()
    counter = CallCounter()
    batch = sample_multipath_channels(live_map, grid, opt.positions,
                                      cfg.sampling.num_samples,
                                      (seed, TAG_FINAL_BATCH))
    sol = solve_relaxed(batch.samples, dictionary, rho, sigma2,
                        max_iters=cfg.solver.max_iters, tol=cfg.solver.tol,
                        line_search=cfg.solver.line_search,
                        away_steps=cfg.solver.away_steps, counter=counter)
    _, combiner = round_selector(sol.weights, dictionary)
    core = batch.core
    rate = sum_rate(core, combiner, rho, sigma2)
    fallback = Beamformer(
        dictionary=dictionary,
        pattern_indices=np.full(fs.num_antennas, broadside_index(dictionary),
                                dtype=int),
    )
    fb_rate = sum_rate(core, fallback, rho, sigma2)
    if fb_rate > rate:
        rate, combiner = fb_rate, fallback
    phases["final_solve"] = PhaseStats(time.perf_counter() - t0, counter.count)

    return TwoTimescaleReport(
        positions=opt.positions,
        pattern_indices=np.asarray(combiner.pattern_indices),
        rate=rate,
        phases=phases,
        rate_trace=list(opt.values),
        train_losses=train_losses,
        finetune_losses=finetune_losses,
        position_iterations=opt.iterations,
        position_converged=opt.converged,
        solver_gap=sol.gap,
        num_resampled=batch.num_resampled,
    )


def format_report(report: TwoTimescaleReport):
    """Flat key = value text record of one pipeline run."""
    lines = [
        "record = two-timescale run",
        "positions = " + ",".join(f"{x:.17g}" for x in report.positions),
        "pattern_indices = " + ",".join(str(i) for i in report.pattern_indices),
        f"rate_bit_per_s_per_hz = {report.rate:.17g}",
        f"position_iterations = {report.position_iterations}",
        f"position_converged = {report.position_converged}",
        f"final_solver_gap = {report.solver_gap:.17g}",
        f"num_resampled_paths = {report.num_resampled}",
    ]
    for name, st in report.phases.items():
        lines.append(f"phase_{name}_seconds = {st.seconds:.6f}")
        lines.append(f"phase_{name}_relaxed_solves = {st.relaxed_solves}")
    lines.append("surrogate_rate_trace = "
                 + ",".join(f"{x:.17g}" for x in report.rate_trace))
    return "\n".join(lines) + "\n"
