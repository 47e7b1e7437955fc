"""Parameter and functional-form discovery for cellulose degradation kinetics."""

from .data import TimeSeries, add_noise, load_csv, make_ekenstam_dataset, make_emsley_dataset, write_csv
from .kinetics import (
    REFERENCE_ARRHENIUS,
    REFERENCE_EKENSTAM,
    REFERENCE_EMSLEY,
    ArrheniusParams,
    EkenstamModel,
    EmsleyParams,
    end_of_life,
    integrate,
)
from .pinn_ekenstam import EkenstamInverseConfig, EkenstamPINN
from .pinn_emsley import EmsleyInverseConfig, EmsleyPINN
from .symreg import SymbolicRegressor, SymregConfig, evolve, select_best

__all__ = [
    "ArrheniusParams",
    "EkenstamInverseConfig",
    "EkenstamModel",
    "EkenstamPINN",
    "EmsleyInverseConfig",
    "EmsleyParams",
    "EmsleyPINN",
    "REFERENCE_ARRHENIUS",
    "REFERENCE_EKENSTAM",
    "REFERENCE_EMSLEY",
    "SymbolicRegressor",
    "SymregConfig",
    "TimeSeries",
    "add_noise",
    "end_of_life",
    "evolve",
    "integrate",
    "load_csv",
    "make_ekenstam_dataset",
    "make_emsley_dataset",
    "select_best",
    "write_csv",
]
