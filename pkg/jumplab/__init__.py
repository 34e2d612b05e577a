from .async_ensemble import AsyncEnsembleRunner
from .config import ExperimentConfig, LabSettings, Tolerances, load_experiment_config
from .criteria import CriterionSpec, CriterionVerdict, criterion_process, evaluate_condition
from .exceptions import (
    CompensatorDivergesException,
    ConfigError,
    DomainException,
    IntegrabilityException,
    InvalidParametersException,
    JumpBelowMinusOneException,
    NotNonnegativeException,
    OracleUnavailableException,
    QueryAfterExplosionException,
    QueryBeyondHorizonException,
    RevivesAfterZeroException,
    UnknownExampleException,
    UnknownPresetException,
    UnsupportedModelException,
)
from .follmer_mc import DualModelPair, duality_check, tilt_model, ui_probe
from .functionals import CompensatorSpec, TestFunction
from .jumplab_types import ExperimentContext
from .lab import ExperimentReport, classify_events, event_equality_test, reproduce, run_experiment
from .models import analytic_oracle, load_model, preset, preset_ids, sample_path
from .path_core import CadlagPath
from .stochexp import stoch_exp, stoch_log
from .sync_ensemble import EnsembleRunner

__all__ = [
    "CadlagPath",
    "CompensatorSpec",
    "TestFunction",
    "stoch_exp",
    "stoch_log",
    "preset",
    "preset_ids",
    "load_model",
    "sample_path",
    "analytic_oracle",
    "CriterionSpec",
    "CriterionVerdict",
    "criterion_process",
    "evaluate_condition",
    "DualModelPair",
    "tilt_model",
    "duality_check",
    "ui_probe",
    "ExperimentReport",
    "classify_events",
    "event_equality_test",
    "reproduce",
    "run_experiment",
    "ExperimentConfig",
    "LabSettings",
    "Tolerances",
    "load_experiment_config",
    "EnsembleRunner",
    "AsyncEnsembleRunner",
    "ExperimentContext",
    "QueryAfterExplosionException",
    "QueryBeyondHorizonException",
    "DomainException",
    "IntegrabilityException",
    "CompensatorDivergesException",
    "JumpBelowMinusOneException",
    "NotNonnegativeException",
    "RevivesAfterZeroException",
    "InvalidParametersException",
    "OracleUnavailableException",
    "UnknownPresetException",
    "UnknownExampleException",
    "UnsupportedModelException",
    "ConfigError",
]
