# Copyright 2026 The DGIQA-cpp Authors
# SPDX-License-Identifier: Apache-2.0
"""Depth-guided no-reference image quality assessment."""

from ._core import (
    DataError,
    DegenerateError,
    DimensionError,
    Model,
    ModelConfig,
    NumericError,
    cli,
    count_params,
    density_separation,
    gaussian_overlap,
    gradcheck,
    load_pair,
    plcc,
    render_scene,
    srocc,
)

__all__ = [
    "DataError",
    "DegenerateError",
    "DimensionError",
    "Model",
    "ModelConfig",
    "NumericError",
    "cli",
    "count_params",
    "density_separation",
    "gaussian_overlap",
    "gradcheck",
    "load_pair",
    "plcc",
    "render_scene",
    "srocc",
]
