"""Desk-scale simulator and optimizer for a flexible-coupler antenna array.

A rail of antennas serves several users through clustered multipath.  The
fast timescale selects one radiation pattern per antenna from a shared
dictionary (convex relaxation plus rounding); the slow timescale moves the
antennas along the rail using a learned surrogate of the already-optimized
sum rate, so position updates need no further solver calls.
"""

from .config import (ConfigError, ScenarioConfig, desk_config, load_config,
                     paper_config, preset, save_config, validate_config)
from .scenario import EmMap, generate_scenario, query_stat_csi, redraw_clusters
from .channel import (AngularGrid, ChannelBatch, cluster_core_channel,
                      quantize_angle, sample_multipath_channels, sum_rate)
from .beamform import (Beamformer, PatternDictionary, broadside_index,
                       build_dictionary, ergodic_rate, exhaustive_oracle,
                       round_selector, solve_relaxed)
from .surrogate import (LabeledDataset, featurize, fine_tune, generate_labels,
                        load_dataset, load_model, predict_rate, save_dataset,
                        save_model, train)
from .posopt import (FeasibleSet, optimize_positions, project_feasible,
                     run_two_timescale, sample_positions, uniform_positions)
from .experiments import (ResultRow, RunRecord, run_nested_baseline,
                          run_scheme, run_sweep)

__version__ = "0.1.0"
