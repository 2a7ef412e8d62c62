# SPDX-License-Identifier: Apache-2.0
"""Test-time blind backdoor defense engine.

Images are float64 arrays of shape (H, W, 3) with values in [0, 1].
Configuration overrides use the JSON schema of the command-line tool.
"""

from ._bdmae import (
    TOKEN_GRID,
    ConfigError,
    CoverageViolation,
    DefenseError,
    InvalidArgument,
    OracleError,
    default_config,
    defend,
    fuse_restorations,
    generate_corpus,
    image_score,
    run_cli,
    ssim_map,
)

__all__ = [
    "TOKEN_GRID",
    "ConfigError",
    "CoverageViolation",
    "DefenseError",
    "InvalidArgument",
    "OracleError",
    "default_config",
    "defend",
    "fuse_restorations",
    "generate_corpus",
    "image_score",
    "run_cli",
    "ssim_map",
]
