"""Online weighted adaptation regularization for regression (OwARR)."""
from ._kernels import BACKEND
from .core import BaseModel, RankDeficientError, train_base
from .datamodel import (ALGORITHMS, DataError, DomainDataset, ExperimentRecord,
                        Hyperparams, load_dataset, save_dataset)
from .ensemble import (CalibrationError, EnsembleModel, bl1_train, bl2_train, damf_train,
                       owarr_train)
from .sds import owarr_sds_train, select_sources

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "BACKEND", "BaseModel", "CalibrationError", "DataError", "DomainDataset",
    "EnsembleModel", "ExperimentRecord", "Hyperparams", "RankDeficientError", "bl1_train",
    "bl2_train", "damf_train", "load_dataset", "owarr_sds_train", "owarr_train",
    "save_dataset", "select_sources", "train_base",
]
