"""Bilevel pathway-weight schedule search for feature distillation."""

from ._distsearch import (
    ConfigError,
    ContractError,
    FormatError,
    NumericError,
    ShapeError,
    SpecError,
    check_hypergradient,
    config_keys,
    dataset_info,
    gen_dataset,
    interpolate_schedule,
    load_schedule,
    normalize_alpha,
    quadratic_hypergradient,
    save_schedule,
    toy_retrain,
    toy_search,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "FormatError",
    "NumericError",
    "ShapeError",
    "SpecError",
    "check_hypergradient",
    "config_keys",
    "dataset_info",
    "gen_dataset",
    "interpolate_schedule",
    "load_schedule",
    "normalize_alpha",
    "quadratic_hypergradient",
    "save_schedule",
    "toy_retrain",
    "toy_search",
]
