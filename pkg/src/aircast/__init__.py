"""Physics-guided PM2.5 forecasting on a sensor-network graph.

The model encodes recent observations into a latent field, evolves it
with a learned diffusion and advection differential equation on the
station graph, and decodes the trajectory into a forecast. Everything
runs on a small reverse-mode autodiff engine over numpy arrays.
"""

from .autodiff import Parameter, Tensor, finite_diff_check, no_grad
from .data import (Dataset, chronological_split, impute_missing, load_dataset,
                   make_windows, parse_readings, resample_3h, save_dataset)
from .errors import (AircastError, ConfigurationError, ContractError,
                     DataError, DimensionError, NumericError)
from .graph import SensorGraph, Station, load_stations, scaled_laplacian
from .model import (Model, ModelConfig, load_checkpoint, model_from_checkpoint,
                    save_checkpoint)
from .odeint import SolverConfig, TimeGrid, ode_solve
from .physics import simulate_advection_reference, simulate_diffusion_reference
from .training import TrainConfig, train_loop

__version__ = "0.1.0"

__all__ = [
    "AircastError", "ConfigurationError", "ContractError", "DataError",
    "Dataset", "DimensionError", "Model", "ModelConfig", "NumericError",
    "Parameter", "SensorGraph", "SolverConfig", "Station", "Tensor",
    "TimeGrid", "TrainConfig", "__version__", "chronological_split",
    "finite_diff_check", "impute_missing", "load_checkpoint", "load_dataset",
    "load_stations", "make_windows", "model_from_checkpoint", "no_grad",
    "ode_solve", "parse_readings", "resample_3h", "save_checkpoint",
    "save_dataset", "scaled_laplacian", "simulate_advection_reference",
    "simulate_diffusion_reference", "train_loop",
]
