"""Shared test helpers: small configurations and hand-built scatter maps."""

import numpy as np
import pytest

from flexcoupler.config import desk_config
from flexcoupler.scenario import ClusterGeometry, EmMap, Environment


def small_config(**overrides):
    """Desk config shrunk so a full pipeline run takes well under a second.

    The carrier sits at 300 MHz (1 m wavelength) so channel phases vary
    smoothly over centimeter position changes.
    """
    cfg = desk_config()
    cfg.geometry.carrier_frequency = 3.0e8
    cfg.population.num_antennas = 2
    cfg.population.num_users = 2
    cfg.population.clusters_per_user = 1
    cfg.population.paths_per_cluster = 2
    cfg.dictionary.num_angle_bins = 12
    cfg.dictionary.num_patterns = 4
    cfg.dictionary.beamwidth = 2.0 * np.pi / 4
    cfg.sampling.num_samples = 4
    cfg.sampling.num_pretrain = 12
    cfg.sampling.num_finetune = 6
    cfg.training.hidden_layers = (16, 8)
    cfg.training.freeze_depth = 1
    cfg.training.pretrain_iters = 60
    cfg.training.finetune_iters = 20
    cfg.optimizer.max_iters = 8
    cfg.solver.max_iters = 40
    cfg.solver.label_max_iters = 20
    cfg.baseline.outer_iters = 2
    for key, value in overrides.items():
        block = cfg
        *parents, leaf = key.split(".")
        for name in parents:
            block = getattr(block, name)
        if not hasattr(block, leaf):
            raise AttributeError(f"no config field {key!r}")
        setattr(block, leaf, value)
    return cfg


def make_environment(num_antennas=2, num_users=2, rail_length=10.0,
                     rail_height=0.5, wavelength=1.0):
    return Environment(rail_length=rail_length, rail_height=rail_height,
                       region_x=5.0, region_y=8.0, region_standoff=1.0,
                       wavelength=wavelength, num_antennas=num_antennas,
                       num_users=num_users)


def make_map(env, cores, coeffs, antenna_spread=0.0, user_spread=0.0,
             users=None):
    """EmMap from explicit cluster cores and path coefficients.

    ``cores`` is (K, C, 3) and ``coeffs`` is (K, C, L); scalar spreads are
    broadcast.  Users default to points straight ahead of the rail.
    """
    cores = np.asarray(cores, dtype=float)
    coeffs = np.asarray(coeffs, dtype=complex)
    K, C = cores.shape[:2]
    if users is None:
        users = np.zeros((K, 3))
        users[:, 0] = np.linspace(2.0, env.rail_length - 2.0, K)
        users[:, 1] = 6.0
    clusters = ClusterGeometry(
        core_positions=cores,
        antenna_spread=np.broadcast_to(np.asarray(antenna_spread, float),
                                       (K, C)).copy(),
        user_spread=np.broadcast_to(np.asarray(user_spread, float),
                                    (K, C)).copy(),
        path_coeffs=coeffs,
    )
    return EmMap(env=env, user_positions=np.asarray(users, dtype=float),
                 clusters=clusters)


@pytest.fixture
def tiny_cfg():
    return small_config()
