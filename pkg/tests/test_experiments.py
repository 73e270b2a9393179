import numpy as np
import pytest

from flexcoupler.beamform import (Beamformer, broadside_index,
                                  build_dictionary)
from flexcoupler.channel import AngularGrid, cluster_core_channel, sum_rate
from flexcoupler.config import ConfigError, DriftConfig, SweepConfig
from flexcoupler.experiments import (CSV_COLUMNS, broadside_subdictionary,
                                     format_record, read_sweep_csv,
                                     run_nested_baseline, run_scheme,
                                     run_sweep, sweep_csv_path,
                                     write_sweep_csv)
from flexcoupler.posopt import FeasibleSet, uniform_positions
from flexcoupler.scenario import generate_scenario, redraw_clusters
from conftest import make_environment, make_map, small_config


def feasible_set(cfg):
    return FeasibleSet(rail_length=cfg.geometry.rail_length,
                       min_spacing=cfg.optimizer.min_spacing,
                       num_antennas=cfg.population.num_antennas)


# ----------------------------------------------------------------- schemes

def test_unknown_scheme_is_rejected(tiny_cfg):
    with pytest.raises(ConfigError):
        run_scheme(tiny_cfg, scheme="clairvoyant")


def test_fixed_scheme_reports_the_default_configuration(tiny_cfg):
    rec = run_scheme(tiny_cfg, scheme="fixed_antenna", seed=0)
    fs = feasible_set(tiny_cfg)
    dic = build_dictionary(tiny_cfg.dictionary.num_angle_bins,
                           tiny_cfg.dictionary.num_patterns,
                           tiny_cfg.dictionary.beamwidth)
    assert rec.scheme == "fixed_antenna"
    assert np.array_equal(rec.positions, uniform_positions(fs))
    assert np.all(rec.pattern_indices == broadside_index(dic))
    assert rec.relaxed_solves == 0
    assert rec.online_relaxed_solves == 0
    em = generate_scenario(tiny_cfg, seed=0)
    grid = AngularGrid(tiny_cfg.dictionary.num_angle_bins)
    combiner = Beamformer(dictionary=dic,
                          pattern_indices=rec.pattern_indices)
    expected = sum_rate(cluster_core_channel(em, grid, rec.positions),
                        combiner, tiny_cfg.power.rho, tiny_cfg.power.sigma2)
    assert rec.rate == expected


def test_fixed_scheme_rate_is_zero_without_scatterers(tiny_cfg):
    env = make_environment()
    em = make_map(env, cores=[[[3.0, 4.0, 0.5]], [[7.0, 4.0, 0.5]]],
                  coeffs=np.zeros((2, 1, 2)))
    rec = run_scheme(tiny_cfg, scheme="fixed_antenna", seed=0, em_map=em)
    assert rec.rate == 0.0


def test_fixed_scheme_rate_grows_with_power(tiny_cfg):
    em = generate_scenario(tiny_cfg, seed=1)
    low = small_config()
    low.power.rho = 0.5
    high = small_config()
    high.power.rho = 2.0
    r_low = run_scheme(low, scheme="fixed_antenna", seed=1, em_map=em)
    r_high = run_scheme(high, scheme="fixed_antenna", seed=1, em_map=em)
    assert r_high.rate > r_low.rate


def test_pipeline_scheme_records_are_complete(tiny_cfg):
    rec = run_scheme(tiny_cfg, scheme="flexible", seed=2)
    fs = feasible_set(tiny_cfg)
    assert fs.contains(rec.positions)
    assert rec.online_relaxed_solves == 1
    assert rec.relaxed_solves == tiny_cfg.sampling.num_pretrain + 1
    assert rec.online_seconds <= rec.seconds
    assert "report" in rec.detail
    assert rec.rate > 0.0


def test_translatable_scheme_keeps_the_broadside_pattern(tiny_cfg):
    rec = run_scheme(tiny_cfg, scheme="translatable_fixed_pattern", seed=3)
    dic = build_dictionary(tiny_cfg.dictionary.num_angle_bins,
                           tiny_cfg.dictionary.num_patterns,
                           tiny_cfg.dictionary.beamwidth)
    assert np.all(rec.pattern_indices == broadside_index(dic))


def test_rotatable_scheme_keeps_uniform_positions(tiny_cfg):
    rec = run_scheme(tiny_cfg, scheme="rotatable_fixed_pattern", seed=4)
    fs = feasible_set(tiny_cfg)
    assert np.array_equal(rec.positions, uniform_positions(fs))
    assert rec.relaxed_solves == 0
    assert np.all(rec.pattern_indices >= 0)
    assert np.all(rec.pattern_indices < tiny_cfg.dictionary.num_patterns)
    # candidate max keeps it at or above the all-broadside default
    em = generate_scenario(tiny_cfg, seed=4)
    grid = AngularGrid(tiny_cfg.dictionary.num_angle_bins)
    dic = build_dictionary(tiny_cfg.dictionary.num_angle_bins,
                           tiny_cfg.dictionary.num_patterns,
                           tiny_cfg.dictionary.beamwidth)
    default = Beamformer(
        dictionary=dic,
        pattern_indices=np.full(2, broadside_index(dic), dtype=int),
    )
    fb = sum_rate(cluster_core_channel(em, grid, uniform_positions(fs)),
                  default, tiny_cfg.power.rho, tiny_cfg.power.sigma2)
    assert rec.rate >= fb - 1e-12


def test_schemes_are_deterministic(tiny_cfg):
    for scheme in ("fixed_antenna", "rotatable_fixed_pattern"):
        a = run_scheme(tiny_cfg, scheme=scheme, seed=5)
        b = run_scheme(tiny_cfg, scheme=scheme, seed=5)
        assert a.rate == b.rate
        assert np.array_equal(a.pattern_indices, b.pattern_indices)


# ---------------------------------------------------------------- baseline

def test_nested_baseline_counts_every_inner_solve(tiny_cfg):
    tiny_cfg.baseline.outer_iters = 3
    tiny_cfg.baseline.samples_per_update = 2
    rec = run_nested_baseline(tiny_cfg, seed=6)
    assert rec.relaxed_solves == 6
    assert rec.online_relaxed_solves == 6
    assert rec.detail["outer_iterations"] == 3
    assert len(rec.detail["rate_trace"]) == 3
    assert rec.detail["inner_iterations"] >= 6
    assert feasible_set(tiny_cfg).contains(rec.positions)


def test_nested_baseline_single_round_runs_one_solve(tiny_cfg):
    tiny_cfg.baseline.outer_iters = 1
    tiny_cfg.baseline.samples_per_update = 1
    rec = run_nested_baseline(tiny_cfg, seed=7)
    assert rec.relaxed_solves == 1


def test_nested_baseline_dominates_the_default(tiny_cfg):
    rec = run_nested_baseline(tiny_cfg, seed=8)
    em = generate_scenario(tiny_cfg, seed=8)
    grid = AngularGrid(tiny_cfg.dictionary.num_angle_bins)
    dic = build_dictionary(tiny_cfg.dictionary.num_angle_bins,
                           tiny_cfg.dictionary.num_patterns,
                           tiny_cfg.dictionary.beamwidth)
    fs = feasible_set(tiny_cfg)
    default = Beamformer(
        dictionary=dic,
        pattern_indices=np.full(2, broadside_index(dic), dtype=int),
    )
    fb = sum_rate(cluster_core_channel(em, grid, uniform_positions(fs)),
                  default, tiny_cfg.power.rho, tiny_cfg.power.sigma2)
    assert rec.rate >= fb - 1e-12


# ------------------------------------------------------------------- drift

def test_drift_moves_every_scheme_to_the_same_live_map():
    cfg = small_config()
    cfg.drift = DriftConfig(distance_range=(3.0, 5.0))
    seed = 9
    em = generate_scenario(cfg, seed)
    live = redraw_clusters(em, cfg, cfg.drift.distance_range, seed)
    rec = run_scheme(cfg, scheme="fixed_antenna", seed=seed, em_map=em)
    grid = AngularGrid(cfg.dictionary.num_angle_bins)
    dic = build_dictionary(cfg.dictionary.num_angle_bins,
                           cfg.dictionary.num_patterns,
                           cfg.dictionary.beamwidth)
    combiner = Beamformer(dictionary=dic,
                          pattern_indices=rec.pattern_indices)
    expected = sum_rate(cluster_core_channel(live, grid, rec.positions),
                        combiner, cfg.power.rho, cfg.power.sigma2)
    assert rec.rate == expected
    stale = sum_rate(cluster_core_channel(em, grid, rec.positions),
                     combiner, cfg.power.rho, cfg.power.sigma2)
    assert rec.rate != stale


# --------------------------------------------------------------- dominance

def test_candidate_handoff_orders_the_nested_schemes(tiny_cfg):
    seed = 10
    em = generate_scenario(tiny_cfg, seed)
    fixed = run_scheme(tiny_cfg, scheme="fixed_antenna", seed=seed, em_map=em)
    trans = run_scheme(
        tiny_cfg, scheme="translatable_fixed_pattern", seed=seed, em_map=em,
        extra_candidates=[(fixed.positions, fixed.pattern_indices)],
    )
    flex = run_scheme(
        tiny_cfg, scheme="flexible", seed=seed, em_map=em,
        extra_candidates=[(fixed.positions, fixed.pattern_indices),
                          (trans.positions, trans.pattern_indices)],
    )
    assert trans.rate >= fixed.rate - 1e-12
    assert flex.rate >= trans.rate - 1e-12


# ------------------------------------------------------------------ sweeps

def sweep_config(**overrides):
    cfg = small_config(**overrides)
    cfg.sweep = SweepConfig(variable="rho", grid=(0.5, 2.0),
                            schemes=("fixed_antenna",
                                     "translatable_fixed_pattern",
                                     "flexible"),
                            num_seeds=2)
    return cfg


def test_sweep_requires_a_sweep_block(tiny_cfg):
    with pytest.raises(ConfigError):
        run_sweep(tiny_cfg)


def test_sweep_covers_grid_in_nesting_order():
    cfg = sweep_config()
    rows = run_sweep(cfg)
    keys = [(r.sweep_value, r.scheme) for r in rows]
    assert keys == [
        (0.5, "fixed_antenna"), (0.5, "translatable_fixed_pattern"),
        (0.5, "flexible"),
        (2.0, "fixed_antenna"), (2.0, "translatable_fixed_pattern"),
        (2.0, "flexible"),
    ]
    for row in rows:
        assert row.n_seeds == 2
        assert row.seconds > 0.0
    by = {(r.sweep_value, r.scheme): r for r in rows}
    assert by[(0.5, "fixed_antenna")].calls == 0
    assert by[(0.5, "flexible")].calls == 2  # one online solve per seed
    # richer schemes inherit poorer schemes' configurations per seed
    for value in (0.5, 2.0):
        assert by[(value, "flexible")].mean_rate >= \
            by[(value, "translatable_fixed_pattern")].mean_rate - 1e-12
        assert by[(value, "translatable_fixed_pattern")].mean_rate >= \
            by[(value, "fixed_antenna")].mean_rate - 1e-12


def test_sweep_statistics_are_reproducible():
    cfg = sweep_config()
    a = run_sweep(cfg)
    b = run_sweep(cfg)
    for ra, rb in zip(a, b):
        assert ra.mean_rate == rb.mean_rate
        assert ra.std_rate == rb.std_rate
        assert ra.calls == rb.calls


def test_sweep_single_seed_reports_zero_std():
    cfg = sweep_config()
    cfg.sweep = SweepConfig(variable="rho", grid=(1.0,),
                            schemes=("fixed_antenna",), num_seeds=1)
    rows = run_sweep(cfg)
    assert len(rows) == 1
    assert rows[0].std_rate == 0.0
    assert rows[0].n_seeds == 1


def test_sweep_csv_round_trip(tmp_path):
    cfg = sweep_config()
    cfg.sweep = SweepConfig(variable="rho", grid=(0.5, 2.0),
                            schemes=("fixed_antenna",), num_seeds=3)
    rows = run_sweep(cfg, out_dir=tmp_path)
    path = sweep_csv_path(tmp_path, "rho")
    with open(path) as f:
        assert f.readline().strip() == ",".join(CSV_COLUMNS)
    loaded = read_sweep_csv(path)
    assert len(loaded) == len(rows)
    for got, want in zip(loaded, rows):
        assert got.sweep_value == want.sweep_value
        assert got.scheme == want.scheme
        assert got.mean_rate == want.mean_rate
        assert got.std_rate == want.std_rate
        assert got.n_seeds == want.n_seeds
        assert got.calls == want.calls
        assert got.seconds == pytest.approx(want.seconds, abs=1e-6)


def test_sweep_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "sweep_rho.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_sweep_csv(path)


def test_write_sweep_csv_creates_directories(tmp_path):
    from flexcoupler.experiments import ResultRow
    rows = [ResultRow(sweep_value=1.0, scheme="fixed_antenna", mean_rate=2.5,
                      std_rate=0.25, n_seeds=4, calls=0, seconds=0.125)]
    out = tmp_path / "nested" / "dir"
    path = write_sweep_csv(rows, "rho", out)
    loaded = read_sweep_csv(path)
    assert loaded[0].mean_rate == 2.5
    assert loaded[0].seconds == 0.125


# ----------------------------------------------------------------- records

def test_format_record_reports_the_run(tiny_cfg):
    rec = run_scheme(tiny_cfg, scheme="flexible", seed=11)
    text = format_record(rec)
    assert "scheme = flexible" in text
    assert f"online_relaxed_solves = {rec.online_relaxed_solves}" in text
    assert "record = two-timescale run" in text  # pipeline detail appended
    fixed = run_scheme(tiny_cfg, scheme="fixed_antenna", seed=11)
    text = format_record(fixed)
    assert "scheme = fixed_antenna" in text
    assert "record = two-timescale run" not in text


def test_broadside_subdictionary_is_a_single_column(tiny_cfg):
    dic = build_dictionary(tiny_cfg.dictionary.num_angle_bins,
                           tiny_cfg.dictionary.num_patterns,
                           tiny_cfg.dictionary.beamwidth)
    sub = broadside_subdictionary(dic)
    b = broadside_index(dic)
    assert sub.num_patterns == 1
    assert np.array_equal(sub.gains[:, 0], dic.gains[:, b])
    assert sub.centers[0] == dic.centers[b]
    assert broadside_index(sub) == 0
