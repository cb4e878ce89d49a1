"""Region objective/constraint evaluators (BIM and BFM) with analytic derivatives."""

from __future__ import annotations

from ..exceptions import ModelError
from ..partition import RegionSpec
from .base import EvalResult, RegionModel, conic_residual, eval_all
from .bfm import BfmModel, build_bfm_model
from .bim import BimModel, build_bim_model
from .check import check_model_derivatives, fd_gradient, fd_jacobian, sample_interior_point
from .layout import VariableLayout


def build_region_model(spec: RegionSpec, relaxed: bool = True) -> RegionModel:
    if spec.kind == "bim":
        return build_bim_model(spec)
    if spec.kind == "bfm":
        return build_bfm_model(spec, relaxed=relaxed)
    raise ModelError(f"region {spec.name}: unknown kind {spec.kind!r}")


def build_region_models(specs: list[RegionSpec], relaxed: bool = True) -> list[RegionModel]:
    """Build one evaluator set per region spec (BFM regions relaxed by default)."""
    return [build_region_model(s, relaxed=relaxed) for s in specs]


__all__ = [
    "BfmModel", "BimModel", "EvalResult", "RegionModel", "VariableLayout",
    "build_bfm_model", "build_bim_model", "build_region_model", "build_region_models",
    "check_model_derivatives", "conic_residual", "eval_all",
    "fd_gradient", "fd_jacobian", "sample_interior_point",
]
