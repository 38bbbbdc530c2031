"""Python access to the coached core library."""

from ._coached import (
    CoachedError,
    Index,
    ancova,
    blind_shuffle,
    build_report,
    chunk_document,
    load_config,
    load_trial_bank,
    normalize_document,
    parse_supervisor_output,
    pooled_t,
    read_turn_log,
    welch_t,
)

__all__ = [
    "CoachedError",
    "Index",
    "ancova",
    "blind_shuffle",
    "build_report",
    "chunk_document",
    "load_config",
    "load_trial_bank",
    "normalize_document",
    "parse_supervisor_output",
    "pooled_t",
    "read_turn_log",
    "welch_t",
]
