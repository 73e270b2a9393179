"""Deployment geometry and the electromagnetic map of scattering clusters.

The array slides along a straight rail on the x axis at a fixed height.
Users stand on the ground plane (z = 0).  Each user couples to the array
through a handful of scattering clusters; a cluster is summarized by a core
point in 3D plus per-path complex coefficients and positional spreads.  All
downstream channel quantities (distances, azimuths) derive from these core
points, so the map is the single geometric source of truth.
"""

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig


def _flatten_seed(value):
    if isinstance(value, (tuple, list)):
        out = []
        for item in value:
            out.extend(_flatten_seed(item))
        return out
    return [int(value)]


def rng_from(seed, *tags):
    """Deterministic generator for a (seed, tag...) stream.

    ``seed`` may be an int or an arbitrarily nested tuple of ints; tags
    extend the entropy so independent streams never collide.
    """
    entropy = tuple(_flatten_seed(seed) + _flatten_seed(list(tags)))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def azimuth(dx, dy):
    """Horizontal-plane bearing in [0, 2*pi)."""
    return np.mod(np.arctan2(dy, dx), 2.0 * np.pi)


@dataclass(frozen=True)
class Environment:
    """Immutable deployment geometry shared by every module."""

    rail_length: float
    rail_height: float
    region_x: float
    region_y: float
    region_standoff: float
    wavelength: float
    num_antennas: int
    num_users: int

    def __post_init__(self):
        for name in ("rail_length", "rail_height", "wavelength"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_antennas < 1 or self.num_users < 1:
            raise ValueError("need at least one antenna and one user")

    def antenna_positions(self, p):
        """3D coordinates of the array for rail coordinates ``p``."""
        p = np.asarray(p, dtype=float)
        if p.shape != (self.num_antennas,):
            raise ValueError(
                f"expected {self.num_antennas} rail coordinates, got shape {p.shape}"
            )
        if np.any(p < 0) or np.any(p > self.rail_length):
            raise ValueError("rail coordinate outside [0, rail_length]")
        out = np.zeros((self.num_antennas, 3))
        out[:, 0] = p
        out[:, 2] = self.rail_height
        return out

    @property
    def rail_midpoint(self):
        return np.array([0.5 * self.rail_length, 0.0, self.rail_height])


@dataclass(frozen=True)
class ClusterGeometry:
    """Scattering clusters for every user, fixed for a scenario's lifetime.

    core_positions : (K, C, 3) cluster core points, all at rail height
    antenna_spread : (K, C) per-axis std of antenna-side scatter points
    user_spread    : (K, C) per-axis std of user-side scatter points
    path_coeffs    : (K, C, L) complex per-path coefficients
    """

    core_positions: np.ndarray
    antenna_spread: np.ndarray
    user_spread: np.ndarray
    path_coeffs: np.ndarray

    def __post_init__(self):
        K, C, three = self.core_positions.shape
        if three != 3:
            raise ValueError("core_positions must be (K, C, 3)")
        if self.antenna_spread.shape != (K, C) or self.user_spread.shape != (K, C):
            raise ValueError("spread arrays must be (K, C)")
        if self.path_coeffs.shape[:2] != (K, C):
            raise ValueError("path_coeffs must be (K, C, L)")
        if np.any(self.antenna_spread < 0) or np.any(self.user_spread < 0):
            raise ValueError("spreads must be nonnegative")

    @property
    def num_clusters(self):
        return self.core_positions.shape[1]

    @property
    def paths_per_cluster(self):
        return self.path_coeffs.shape[2]


@dataclass(frozen=True)
class StatCsi:
    """Statistical CSI of one cluster as seen from one antenna position."""

    antenna_distance: float      # antenna to core
    user_distance: float         # user to core
    antenna_spread_sq: float     # variance of antenna-side positional scatter
    user_spread_sq: float        # variance of user-side positional scatter
    core_azimuth: float          # bearing of the core from the antenna, [0, 2pi)


@dataclass(frozen=True)
class EmMap:
    """Environment + user positions + cluster geometry."""

    env: Environment
    user_positions: np.ndarray   # (K, 3)
    clusters: ClusterGeometry

    def __post_init__(self):
        if self.user_positions.shape != (self.env.num_users, 3):
            raise ValueError("user_positions must be (num_users, 3)")
        if self.clusters.core_positions.shape[0] != self.env.num_users:
            raise ValueError("clusters and users disagree on K")


def _place_users(cfg: ScenarioConfig, env, rng):
    geo, place = cfg.geometry, cfg.placement
    K = cfg.population.num_users
    users = np.zeros((K, 3))
    if place.mode == "region":
        # the rectangle is centered on the rail midpoint in x and on the
        # standoff line in y, so growing either side widens the user spread
        # without shifting its centroid
        half_x, half_y = 0.5 * geo.region_x, 0.5 * geo.region_y
        users[:, 0] = env.rail_midpoint[0] + rng.uniform(-half_x, half_x, size=K)
        users[:, 1] = geo.region_standoff + rng.uniform(-half_y, half_y, size=K)
    elif place.mode == "angle":
        ang = np.full(K, place.angle)
        users[:, 0] = env.rail_midpoint[0] + place.radius * np.cos(ang)
        users[:, 1] = place.radius * np.sin(ang)
    elif place.mode == "sector":
        half = 0.5 * place.sector_width
        ang = rng.uniform(place.sector_center - half, place.sector_center + half, size=K)
        users[:, 0] = env.rail_midpoint[0] + place.radius * np.cos(ang)
        users[:, 1] = place.radius * np.sin(ang)
    else:
        raise ValueError(f"unknown placement mode {place.mode!r}")
    return users


def _draw_clusters(cfg: ScenarioConfig, env, users, rng, distance_range=None):
    """Place cluster cores and draw per-path coefficients.

    Cores alternate between two anchors: even cluster indices anchor at the
    user, odd ones at the rail midpoint.  The anchored straight-line distance
    is drawn uniformly from the configured nominal range; cores sit at rail
    height, so the planar offset from a ground-level anchor is shortened
    accordingly.  A single core cannot put both of its nominal distances
    inside the range when user and rail are far apart, so only the anchored
    side is guaranteed.
    """
    pop, stat = cfg.population, cfg.statistics
    lo, hi = distance_range if distance_range is not None else stat.distance_range
    K, C, L = pop.num_users, pop.clusters_per_user, pop.paths_per_cluster
    h = env.rail_height

    cores = np.zeros((K, C, 3))
    for k in range(K):
        for c in range(C):
            anchor = users[k] if c % 2 == 0 else env.rail_midpoint
            r = rng.uniform(max(lo, abs(anchor[2] - h)), hi)
            phi = rng.uniform(0.0, 2.0 * np.pi)
            planar = np.sqrt(max(r * r - (anchor[2] - h) ** 2, 0.0))
            cores[k, c] = [
                anchor[0] + planar * np.cos(phi),
                anchor[1] + planar * np.sin(phi),
                h,
            ]

    coeffs = (rng.standard_normal((K, C, L)) + 1j * rng.standard_normal((K, C, L)))
    coeffs *= np.sqrt(0.5)
    spreads_a = np.full((K, C), stat.antenna_spread)
    spreads_u = np.full((K, C), stat.user_spread)
    return ClusterGeometry(cores, spreads_a, spreads_u, coeffs)


def generate_scenario(cfg: ScenarioConfig, seed=None) -> EmMap:
    """Draw users and scattering clusters for one deployment.

    Deterministic given (config, seed); the map is immutable afterwards.
    """
    seed = cfg.seed if seed is None else seed
    geo, pop = cfg.geometry, cfg.population
    env = Environment(
        rail_length=geo.rail_length,
        rail_height=geo.rail_height,
        region_x=geo.region_x,
        region_y=geo.region_y,
        region_standoff=geo.region_standoff,
        wavelength=geo.wavelength,
        num_antennas=pop.num_antennas,
        num_users=pop.num_users,
    )
    rng = rng_from(seed, 0)
    users = _place_users(cfg, env, rng)
    clusters = _draw_clusters(cfg, env, users, rng)
    return EmMap(env=env, user_positions=users, clusters=clusters)


def redraw_clusters(em_map: EmMap, cfg: ScenarioConfig, distance_range, seed) -> EmMap:
    """Environment drift: same users, clusters redrawn in a new range."""
    rng = rng_from(seed, 6)
    clusters = _draw_clusters(
        cfg, em_map.env, em_map.user_positions, rng, distance_range=distance_range
    )
    return EmMap(env=em_map.env, user_positions=em_map.user_positions,
                 clusters=clusters)


def query_stat_csi(em_map: EmMap, user, antenna_position):
    """Statistical CSI of every cluster of ``user`` at one rail coordinate.

    Returns a list of StatCsi, one per cluster, with distances and the core
    bearing recomputed from the stored 3D geometry.
    """
    env = em_map.env
    if not 0.0 <= antenna_position <= env.rail_length:
        raise ValueError("antenna_position outside [0, rail_length]")
    ant = np.array([antenna_position, 0.0, env.rail_height])
    upos = em_map.user_positions[user]
    out = []
    for c in range(em_map.clusters.num_clusters):
        core = em_map.clusters.core_positions[user, c]
        out.append(StatCsi(
            antenna_distance=float(np.linalg.norm(core - ant)),
            user_distance=float(np.linalg.norm(core - upos)),
            antenna_spread_sq=float(em_map.clusters.antenna_spread[user, c] ** 2),
            user_spread_sq=float(em_map.clusters.user_spread[user, c] ** 2),
            core_azimuth=float(azimuth(core[0] - ant[0], core[1] - ant[1])),
        ))
    return out
