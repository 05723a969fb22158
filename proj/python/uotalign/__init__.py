"""Entropic OT/UOT solvers and dual-context prompt alignment."""

from ._core import (
    INF,
    UotalignError,
    compare_outliers,
    cost_matrix,
    evaluate,
    likelihood,
    primal_value,
    read_embedding,
    run_cli,
    solve_uot,
    synth_dataset,
    train,
    write_embedding,
)

__all__ = [
    "INF",
    "UotalignError",
    "compare_outliers",
    "cost_matrix",
    "evaluate",
    "likelihood",
    "primal_value",
    "read_embedding",
    "run_cli",
    "solve_uot",
    "synth_dataset",
    "train",
    "write_embedding",
]
