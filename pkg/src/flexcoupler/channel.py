"""Multipath channel synthesis on an angular grid, and the sum-rate metric.

Each antenna sees the world through M azimuth bins.  A path contributes
``alpha / (r_a * r_u) * exp(-2j*pi*(r_a + r_u)/wavelength)`` to the bin that
contains its scatter point's bearing, where ``r_a`` and ``r_u`` are the
antenna-side and user-side propagation distances.  Stacking the N antennas'
bins gives an (M*N, K) matrix per fast-timescale draw.

Samples and the cluster-core channel run through one assembly routine, so a
zero-spread draw reproduces the core channel bitwise.
"""

from dataclasses import dataclass

import numpy as np

from .scenario import EmMap, azimuth, rng_from

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class AngularGrid:
    """Uniform azimuth grid: bin m is centered at 2*pi*m/M."""

    num_bins: int

    def __post_init__(self):
        if self.num_bins < 1:
            raise ValueError("num_bins must be >= 1")

    @property
    def bin_width(self):
        return TWO_PI / self.num_bins

    @property
    def bin_centers(self):
        return TWO_PI * np.arange(self.num_bins) / self.num_bins


def quantize_angle(theta, grid: AngularGrid):
    """Index of the bin whose center is nearest ``theta``.

    Bins own the half-open interval (center - width/2, center + width/2], so
    an exact midpoint resolves to the lower index.  Works elementwise.
    """
    x = np.asarray(theta, dtype=float) / grid.bin_width
    idx = np.ceil(x - 0.5).astype(int) % grid.num_bins
    if np.ndim(theta) == 0:
        return int(idx)
    return idx


@dataclass(frozen=True)
class ChannelBatch:
    """Fast-timescale draws plus the cluster-core channel at one position."""

    samples: np.ndarray        # (Z, M*N, K) complex
    core: np.ndarray           # (M*N, K) complex
    positions: np.ndarray      # (N,) rail coordinates
    num_bins: int
    num_resampled: int = 0

    @property
    def num_samples(self):
        return self.samples.shape[0]


def _path_rows(em_map: EmMap):
    """Flatten (user, cluster, path) into row arrays, lexicographic order."""
    cl = em_map.clusters
    K, C, L = cl.core_positions.shape[0], cl.num_clusters, cl.paths_per_cluster
    cores = np.repeat(cl.core_positions.reshape(K * C, 3), L, axis=0)
    users = np.repeat(em_map.user_positions, C * L, axis=0)
    user_idx = np.repeat(np.arange(K), C * L)
    alphas = cl.path_coeffs.reshape(K * C * L)
    spread_a = np.repeat(cl.antenna_spread.reshape(K * C), L)
    spread_u = np.repeat(cl.user_spread.reshape(K * C), L)
    return cores, users, user_idx, alphas, spread_a, spread_u


def _path_geometry(env, positions, scatter_a, user_pos):
    """Per-path distances to every antenna and the user-side distance."""
    dx = scatter_a[:, 0][:, None] - positions[None, :]
    dy = scatter_a[:, 1][:, None]
    dz = scatter_a[:, 2][:, None] - env.rail_height
    r_a = np.sqrt(dx * dx + dy * dy + dz * dz)
    return r_a, dx, dy


def _accumulate(H, env, grid, positions, user_idx, scatter_a, scatter_u,
                user_pos, alphas):
    """Add every path's contribution to H in fixed (path, antenna) order."""
    N, M = env.num_antennas, grid.num_bins
    r_a, dx, dy = _path_geometry(env, positions, scatter_a, user_pos)
    r_u = np.linalg.norm(scatter_u - user_pos, axis=1)
    bins = quantize_angle(azimuth(dx, dy), grid)
    phase = np.exp(-1j * TWO_PI / env.wavelength * (r_a + r_u[:, None]))
    vals = alphas[:, None] / (r_a * r_u[:, None]) * phase
    rows = np.arange(N)[None, :] * M + bins
    cols = np.broadcast_to(user_idx[:, None], rows.shape)
    np.add.at(H, (rows.ravel(), cols.ravel()), vals.ravel())


def cluster_core_channel(em_map: EmMap, grid: AngularGrid, positions):
    """Channel assembled from cluster cores only (slow-timescale CSI).

    Every path of a cluster enters at the core's nominal distances and
    bearing, so each cluster occupies a single bin per antenna and its
    aggregate coefficient is the sum of the cluster's path coefficients.
    """
    env = em_map.env
    p = np.asarray(positions, dtype=float)
    env.antenna_positions(p)  # validates shape and rail bounds
    cores, users, user_idx, alphas, _, _ = _path_rows(em_map)
    H = np.zeros((grid.num_bins * env.num_antennas, env.num_users), dtype=complex)
    _accumulate(H, env, grid, p, user_idx, cores, cores, users, alphas)
    return H


def sample_multipath_channels(em_map: EmMap, grid: AngularGrid, positions,
                              num_samples, seed) -> ChannelBatch:
    """Draw ``num_samples`` fast-timescale channel realizations.

    Path scatter points are the cluster core plus an isotropic in-plane
    Gaussian offset on each side (antenna side and user side).  Each draw
    uses its own (seed, draw-index) stream, so results do not depend on
    execution order.  Paths that land at a nonpositive distance are redrawn
    and counted in ``num_resampled``.
    """
    env = em_map.env
    p = np.asarray(positions, dtype=float)
    env.antenna_positions(p)
    cores, users, user_idx, alphas, spread_a, spread_u = _path_rows(em_map)
    P = cores.shape[0]
    MN = grid.num_bins * env.num_antennas
    samples = np.zeros((num_samples, MN, env.num_users), dtype=complex)
    resampled = 0

    for t in range(num_samples):
        rng = rng_from(seed, t)
        off_a = rng.standard_normal((P, 2)) * spread_a[:, None]
        off_u = rng.standard_normal((P, 2)) * spread_u[:, None]
        scatter_a = cores.copy()
        scatter_u = cores.copy()
        scatter_a[:, :2] += off_a
        scatter_u[:, :2] += off_u
        for _ in range(100):
            r_a, _, _ = _path_geometry(env, p, scatter_a, users)
            r_u = np.linalg.norm(scatter_u - users, axis=1)
            bad = (r_a <= 0).any(axis=1) | (r_u <= 0)
            if not bad.any():
                break
            resampled += int(bad.sum())
            nbad = int(bad.sum())
            scatter_a[bad, :2] = cores[bad, :2] + \
                rng.standard_normal((nbad, 2)) * spread_a[bad, None]
            scatter_u[bad, :2] = cores[bad, :2] + \
                rng.standard_normal((nbad, 2)) * spread_u[bad, None]
        else:
            raise RuntimeError("path resampling failed to find positive distances")
        _accumulate(samples[t], env, grid, p, user_idx, scatter_a, scatter_u,
                    users, alphas)

    core = cluster_core_channel(em_map, grid, p)
    return ChannelBatch(samples=samples, core=core, positions=p,
                        num_bins=grid.num_bins, num_resampled=resampled)


def sum_rate(H, G, rho, sigma2):
    """Uplink sum rate log2 det(I + (rho/sigma2) * Gram) in bit/s/Hz.

    ``G`` is either an (M*N, N) combining matrix or any object with an
    ``apply(H)`` method returning the combined (N, K) channel.  The
    determinant is evaluated on the smaller of the two Gram sides through a
    Cholesky factorization.
    """
    if rho <= 0 or sigma2 <= 0:
        raise ValueError("rho and sigma2 must be positive")
    if hasattr(G, "apply"):
        Y = G.apply(H)
    else:
        G = np.asarray(G)
        if G.shape[0] != H.shape[0]:
            raise ValueError("G and H disagree on the stacked-bin dimension")
        Y = G.conj().T @ H
    c = rho / sigma2
    n, k = Y.shape
    if n <= k:
        A = np.eye(n) + c * (Y @ Y.conj().T)
    else:
        A = np.eye(k) + c * (Y.conj().T @ Y)
    A = 0.5 * (A + A.conj().T)
    L = np.linalg.cholesky(A)
    return float(2.0 * np.sum(np.log2(np.real(np.diag(L)))))


BATCH_MAGIC = "flexcoupler-channel-batch-v1"


def save_batch(batch: ChannelBatch, path):
    """Write a batch to the documented sparse text container.

    Line 1: magic; line 2: dimensions; line 3: rail coordinates; line 4:
    column header; then one row per nonzero entry, ``sample`` -1 meaning the
    cluster-core channel.  Floats use repr-exact formatting.
    """
    Z, MN, K = batch.samples.shape
    M = batch.num_bins
    N = MN // M
    lines = [
        f"# {BATCH_MAGIC}",
        f"# num_samples={Z} num_bins={M} num_antennas={N} num_users={K} "
        f"num_resampled={batch.num_resampled}",
        "# positions=" + ",".join(f"{x:.17g}" for x in batch.positions),
        "sample,user,antenna,bin,real,imag",
    ]

    def emit(tag, mat):
        rows, cols = np.nonzero(mat)
        for r, k in zip(rows, cols):
            v = mat[r, k]
            lines.append(
                f"{tag},{k},{r // M},{r % M},{v.real:.17g},{v.imag:.17g}"
            )

    emit(-1, batch.core)
    for t in range(Z):
        emit(t, batch.samples[t])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_batch(path) -> ChannelBatch:
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != f"# {BATCH_MAGIC}":
            raise ValueError(f"{path}: not a channel batch container")
        meta = dict(
            item.split("=") for item in fh.readline().lstrip("# ").split()
        )
        Z = int(meta["num_samples"])
        M = int(meta["num_bins"])
        N = int(meta["num_antennas"])
        K = int(meta["num_users"])
        positions = np.array(
            [float(x) for x in fh.readline().split("=", 1)[1].split(",")]
        )
        header = fh.readline().strip()
        if header != "sample,user,antenna,bin,real,imag":
            raise ValueError(f"{path}: unexpected column header {header!r}")
        samples = np.zeros((Z, M * N, K), dtype=complex)
        core = np.zeros((M * N, K), dtype=complex)
        for line in fh:
            t, k, n, b, re, im = line.split(",")
            value = complex(float(re), float(im))
            target = core if int(t) < 0 else samples[int(t)]
            target[int(n) * M + int(b), int(k)] = value
    return ChannelBatch(samples=samples, core=core, positions=positions,
                        num_bins=M, num_resampled=int(meta["num_resampled"]))
