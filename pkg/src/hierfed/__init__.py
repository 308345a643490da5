"""Hierarchical federated learning simulator with self-organizing agent groups."""

from .aggregation import update_all_levels, update_group_gmp
from .datagen import PopulationConfig, generate_population, load_csv
from .engine import RunConfig, run, run_fedavg_baseline
from .errors import ConfigurationError, DataFormatError, DivergenceError
from .hierarchy import Hierarchy, adapt, build_initial, distance, eliminate_outliers, \
    place_new_agent, validate
from .local_training import LocalSolverConfig, local_update, objective_gradient, \
    objective_value
from .models import DatasetShard, ModelSpec, accuracy, init_params, loss, loss_gradient
from .schedule import MetaLawSchedule

__version__ = "0.1.0"
