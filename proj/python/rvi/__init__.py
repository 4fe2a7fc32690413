"""Relay variational inference with VAD and VAE baselines."""

from ._core import (
    ArgumentError,
    ConfigError,
    ContractError,
    Dataset,
    DimensionError,
    DomainError,
    Error,
    FormatError,
    IoError,
    Model,
    ParseError,
    UndefinedMetricError,
    apply_missing,
    budget_for,
    elastic_metric,
    gen_artificial,
    imputation_loss,
    infer,
    kl_diag_gaussian,
    load_data,
    load_idx,
    mean_imputation_baseline,
    select_top,
    supervised_probe,
    train,
)

__all__ = [
    "ArgumentError",
    "ConfigError",
    "ContractError",
    "Dataset",
    "DimensionError",
    "DomainError",
    "Error",
    "FormatError",
    "IoError",
    "Model",
    "ParseError",
    "UndefinedMetricError",
    "apply_missing",
    "budget_for",
    "elastic_metric",
    "gen_artificial",
    "imputation_loss",
    "infer",
    "kl_diag_gaussian",
    "load_data",
    "load_idx",
    "mean_imputation_baseline",
    "select_top",
    "supervised_probe",
    "train",
]
