import itertools

import numpy as np
import pytest

from flexcoupler.beamform import (Beamformer, CallCounter, broadside_index,
                                  build_dictionary, ergodic_rate,
                                  exhaustive_oracle, load_dictionary,
                                  load_selector, project_onto_patterns,
                                  round_selector, save_dictionary,
                                  save_selector, selector_gradient,
                                  solve_relaxed)
from flexcoupler.channel import sum_rate


def random_samples(rng, Z, M, N, K, scale=None):
    scale = scale or 1.0 / np.sqrt(2 * M * N)
    return scale * (rng.standard_normal((Z, M * N, K))
                    + 1j * rng.standard_normal((Z, M * N, K)))


# --------------------------------------------------------------- dictionary

def test_dictionary_columns_are_unit_norm_and_positive():
    dic = build_dictionary(36, 6, 2 * np.pi / 6)
    assert dic.gains.shape == (36, 6)
    assert np.all(dic.gains > 0)
    assert np.allclose(np.linalg.norm(dic.gains, axis=0), 1.0, rtol=1e-12)


def test_dictionary_centers_are_evenly_spaced():
    dic = build_dictionary(24, 8, 2 * np.pi / 8)
    assert np.allclose(dic.centers, 2 * np.pi * np.arange(8) / 8)
    # each column peaks at the bin nearest its center
    peaks = dic.gains.argmax(axis=0)
    grid_angles = 2 * np.pi * np.arange(24) / 24
    for u, pk in enumerate(peaks):
        assert abs(grid_angles[pk] - dic.centers[u]) < 2 * np.pi / 24 + 1e-12


def test_dictionary_power_halves_at_half_beamwidth():
    # M chosen so that center + beamwidth/2 lands exactly on a bin
    M, U = 12, 6
    bw = 2 * np.pi / 6
    dic = build_dictionary(M, U, bw)
    col = dic.gains[:, 0]  # centered at angle 0 = bin 0
    half_bin = 1  # beamwidth/2 = pi/6 = one bin of 2*pi/12
    ratio = (col[half_bin] / col[0]) ** 2
    assert ratio == pytest.approx(0.5, rel=1e-10)


def test_zero_concentration_gives_uniform_patterns():
    dic = build_dictionary(16, 4, 2 * np.pi / 4, kappa=0.0)
    assert np.allclose(dic.gains, 1.0 / 4.0)


def test_dictionary_survives_narrow_beams_without_overflow():
    dic = build_dictionary(360, 14, 2 * np.pi * 50 / 360)
    assert np.all(np.isfinite(dic.gains))
    assert np.allclose(np.linalg.norm(dic.gains, axis=0), 1.0, rtol=1e-12)


def test_broadside_index_picks_nearest_to_quarter_turn():
    dic = build_dictionary(16, 4, 2 * np.pi / 4)
    assert broadside_index(dic) == 1  # centers 0, pi/2, pi, 3pi/2
    dic3 = build_dictionary(12, 3, 2 * np.pi / 3)
    # centers 0, 2pi/3, 4pi/3; 2pi/3 is nearest to pi/2
    assert broadside_index(dic3) == 1


def test_broadside_tie_takes_lowest_index():
    dic = build_dictionary(16, 4, 2 * np.pi / 4)
    # pi/4 is equidistant from centers 0 and pi/2
    assert broadside_index(dic, target=np.pi / 4) == 0


# --------------------------------------------------------------- beamformer

def test_apply_matches_dense_block_diagonal_matrix():
    rng = np.random.default_rng(0)
    M, N, K = 8, 3, 2
    dic = build_dictionary(M, 4, 2 * np.pi / 4)
    bf = Beamformer(dictionary=dic, pattern_indices=np.array([0, 3, 1]))
    H = random_samples(rng, 1, M, N, K)[0]
    dense = bf.matrix()
    assert dense.shape == (M * N, N)
    # block diagonal: row block n only feeds output n
    for n in range(N):
        block = dense[n * M:(n + 1) * M]
        assert np.array_equal(block[:, n], dic.gains[:, bf.pattern_indices[n]])
        other = np.delete(block, n, axis=1)
        assert np.all(other == 0)
    assert np.allclose(bf.apply(H), dense.conj().T @ H, rtol=1e-13)


def test_apply_broadcasts_over_sample_stacks():
    rng = np.random.default_rng(1)
    M, N, K = 8, 2, 3
    dic = build_dictionary(M, 3, 2 * np.pi / 3)
    bf = Beamformer(dictionary=dic, pattern_indices=np.array([2, 0]))
    batch = random_samples(rng, 5, M, N, K)
    out = bf.apply(batch)
    assert out.shape == (5, N, K)
    for z in range(5):
        assert np.allclose(out[z], bf.apply(batch[z]), rtol=1e-14)


def test_beamformer_rejects_out_of_range_indices():
    dic = build_dictionary(8, 3, 2 * np.pi / 3)
    with pytest.raises(ValueError):
        Beamformer(dictionary=dic, pattern_indices=np.array([0, 3]))


# ------------------------------------------------------------ relaxed rate

def test_ergodic_rate_of_binary_selector_matches_mean_sum_rate():
    rng = np.random.default_rng(2)
    M, N, K, U, Z = 8, 2, 2, 3, 6
    dic = build_dictionary(M, U, 2 * np.pi / U)
    batch = random_samples(rng, Z, M, N, K)
    W = project_onto_patterns(batch, dic, N)
    for idx in itertools.product(range(U), repeat=N):
        v = np.zeros(N * U)
        v[np.arange(N) * U + np.array(idx)] = 1.0
        bf = Beamformer(dictionary=dic, pattern_indices=np.array(idx))
        direct = np.mean([sum_rate(batch[z], bf, 1.3, 0.7) for z in range(Z)])
        assert ergodic_rate(v, W, 1.3, 0.7) == pytest.approx(direct, rel=1e-10)


def test_selector_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    M, N, K, U, Z = 8, 2, 2, 3, 4
    dic = build_dictionary(M, U, 2 * np.pi / U)
    W = project_onto_patterns(random_samples(rng, Z, M, N, K), dic, N)
    v = rng.uniform(0.2, 1.0, N * U)
    v = (v.reshape(N, U) / v.reshape(N, U).sum(axis=1, keepdims=True)).ravel()
    grad = selector_gradient(v, W, 1.0, 1.0)
    h = 1e-6
    for i in range(N * U):
        e = np.zeros(N * U)
        e[i] = h
        fd = (ergodic_rate(v + e, W, 1.0, 1.0)
              - ergodic_rate(v - e, W, 1.0, 1.0)) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_ergodic_rate_accepts_single_draw():
    rng = np.random.default_rng(4)
    dic = build_dictionary(8, 3, 2 * np.pi / 3)
    W = project_onto_patterns(random_samples(rng, 1, 8, 2, 2)[0], dic, 2)
    v = np.full(6, 1 / 3)
    assert np.isfinite(ergodic_rate(v, W, 1.0, 1.0))


# ------------------------------------------------------------------ solver

def test_solver_with_single_pattern_converges_immediately():
    rng = np.random.default_rng(5)
    dic = build_dictionary(8, 1, 2 * np.pi)
    sol = solve_relaxed(random_samples(rng, 3, 8, 2, 2), dic, 1.0, 1.0)
    assert sol.converged
    assert sol.iterations == 0
    assert np.array_equal(sol.weights, np.ones(2))


def test_solver_weights_stay_on_the_block_simplices():
    rng = np.random.default_rng(6)
    U, N = 4, 3
    dic = build_dictionary(12, U, 2 * np.pi / U)
    sol = solve_relaxed(random_samples(rng, 4, 12, N, 2), dic, 2.0, 1.0)
    v = sol.weights.reshape(N, U)
    assert np.all(v >= 0)
    assert np.allclose(v.sum(axis=1), 1.0, atol=1e-12)


def test_solver_certifies_gap_and_dominates_rounding():
    rng = np.random.default_rng(7)
    M, N, K, U, Z = 8, 2, 2, 3, 4
    dic = build_dictionary(M, U, 2 * np.pi / U)
    for _ in range(10):
        batch = random_samples(rng, Z, M, N, K)
        sol = solve_relaxed(batch, dic, 1.0, 1.0, max_iters=500, tol=1e-4)
        assert sol.converged
        assert sol.gap <= 1e-4
        W = project_onto_patterns(batch, dic, N)
        _, bf = round_selector(sol.weights, dic)
        rounded = np.mean([sum_rate(batch[z], bf, 1.0, 1.0)
                           for z in range(Z)])
        _, _, exhaustive = exhaustive_oracle(batch, dic, 1.0, 1.0)
        relaxed = ergodic_rate(sol.weights, W, 1.0, 1.0)
        assert rounded <= exhaustive + 1e-12
        assert exhaustive <= relaxed + sol.gap + 1e-12


def test_solver_matches_fine_grid_search_on_one_block():
    # U=2, N=1: the relaxed problem is one-dimensional, so a dense grid
    # over v = (x, 1-x) is an independent oracle for the optimum
    rng = np.random.default_rng(8)
    M, U, K, Z = 8, 2, 2, 3
    dic = build_dictionary(M, U, 2 * np.pi / U)
    batch = random_samples(rng, Z, M, 1, K)
    W = project_onto_patterns(batch, dic, 1)
    xs = np.linspace(0.0, 1.0, 2001)
    grid_best = max(ergodic_rate(np.array([x, 1 - x]), W, 1.0, 1.0)
                    for x in xs)
    sol = solve_relaxed(batch, dic, 1.0, 1.0, tol=1e-6)
    assert sol.objective >= grid_best - 1e-5
    # the grid undershoots a smooth interior maximum by O(spacing**2)
    assert sol.objective <= grid_best + sol.gap + 1e-7


def test_solver_without_line_search_still_converges():
    rng = np.random.default_rng(9)
    dic = build_dictionary(8, 3, 2 * np.pi / 3)
    batch = random_samples(rng, 3, 8, 2, 2)
    ref = solve_relaxed(batch, dic, 1.0, 1.0, tol=1e-5)
    slow = solve_relaxed(batch, dic, 1.0, 1.0, tol=1e-3, line_search=False,
                         max_iters=2000)
    assert slow.converged
    assert slow.objective >= ref.objective - 1e-3


def test_solver_without_away_steps_matches_objective():
    rng = np.random.default_rng(10)
    dic = build_dictionary(8, 3, 2 * np.pi / 3)
    batch = random_samples(rng, 3, 8, 2, 2)
    a = solve_relaxed(batch, dic, 1.0, 1.0, tol=1e-5)
    b = solve_relaxed(batch, dic, 1.0, 1.0, tol=1e-5, away_steps=False)
    assert a.objective == pytest.approx(b.objective, abs=1e-4)


def test_solver_reports_honest_nonconvergence():
    rng = np.random.default_rng(11)
    dic = build_dictionary(8, 3, 2 * np.pi / 3)
    sol = solve_relaxed(random_samples(rng, 3, 8, 2, 2), dic, 1.0, 1.0,
                        max_iters=1, tol=1e-12)
    assert not sol.converged
    assert sol.gap > 0
    v = sol.weights.reshape(2, 3)
    assert np.allclose(v.sum(axis=1), 1.0, atol=1e-12)


def test_solver_increments_call_counter():
    rng = np.random.default_rng(12)
    dic = build_dictionary(8, 3, 2 * np.pi / 3)
    counter = CallCounter()
    batch = random_samples(rng, 2, 8, 1, 2)
    solve_relaxed(batch, dic, 1.0, 1.0, counter=counter)
    solve_relaxed(batch, dic, 1.0, 1.0, counter=counter)
    assert counter.count == 2


# ---------------------------------------------------------------- rounding

def test_round_selector_takes_blockwise_argmax():
    dic = build_dictionary(8, 3, 2 * np.pi / 3)
    v = np.array([0.2, 0.5, 0.3, 0.6, 0.1, 0.3])
    binary, bf = round_selector(v, dic)
    assert np.array_equal(bf.pattern_indices, [1, 0])
    assert np.array_equal(binary, [0, 1, 0, 1, 0, 0])


def test_round_selector_breaks_ties_to_lowest_index():
    dic = build_dictionary(8, 4, 2 * np.pi / 4)
    v = np.full(4, 0.25)
    _, bf = round_selector(v, dic)
    assert bf.pattern_indices[0] == 0


def test_exhaustive_oracle_refuses_oversized_search():
    rng = np.random.default_rng(13)
    dic = build_dictionary(16, 10, 2 * np.pi / 10)
    batch = random_samples(rng, 1, 16, 6, 2)
    with pytest.raises(ValueError, match="exceeds"):
        exhaustive_oracle(batch, dic, 1.0, 1.0, limit=1000)


def test_exhaustive_oracle_matches_manual_enumeration():
    rng = np.random.default_rng(14)
    M, N, K, U, Z = 8, 2, 2, 3, 3
    dic = build_dictionary(M, U, 2 * np.pi / U)
    batch = random_samples(rng, Z, M, N, K)
    binary, bf, rate = exhaustive_oracle(batch, dic, 1.5, 0.5)
    best = -np.inf
    best_idx = None
    for idx in itertools.product(range(U), repeat=N):
        cand = Beamformer(dictionary=dic, pattern_indices=np.array(idx))
        r = np.mean([sum_rate(batch[z], cand, 1.5, 0.5) for z in range(Z)])
        if r > best:
            best, best_idx = r, idx
    assert rate == pytest.approx(best, rel=1e-12)
    assert tuple(bf.pattern_indices) == best_idx
    assert np.array_equal(np.flatnonzero(binary) % U, bf.pattern_indices)


# ------------------------------------------------------------- round trips

def test_selector_save_load_round_trip(tmp_path):
    dic = build_dictionary(8, 3, 2 * np.pi / 3)
    v = np.array([0.25, 0.5, 0.25, 1.0, 0.0, 0.0])
    path = tmp_path / "selector.txt"
    save_selector(v, dic, path)
    assert np.array_equal(load_selector(path), v)


def test_dictionary_save_load_round_trip(tmp_path):
    dic = build_dictionary(12, 5, 2 * np.pi / 5)
    path = tmp_path / "dictionary.txt"
    save_dictionary(dic, path)
    loaded = load_dictionary(path)
    assert np.array_equal(loaded.gains, dic.gains)
    assert np.array_equal(loaded.centers, dic.centers)
    assert loaded.beamwidth == dic.beamwidth
    assert loaded.kappa == dic.kappa


def test_dictionary_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.txt"
    path.write_text("# something else\n")
    with pytest.raises(ValueError):
        load_dictionary(path)
