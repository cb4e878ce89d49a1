"""Distributed AC optimal power flow for integrated transmission-distribution systems."""

from .cases import (
    Branch,
    Bus,
    CostPoly,
    Generator,
    InterconnectionSpec,
    ItdCase,
    NetworkCase,
    dump_json_case,
    load_json_case,
    merge_itd,
    parse_matpower,
)
from .partition import ConsensusStructure, CouplingVarDescriptor, RegionSpec, build_consensus, coupling_residual, decompose
from .models import build_bfm_model, build_bim_model, build_region_models, conic_residual, eval_all
from .nlp import NlpProblem, NlpSolution, solve_nlp
from .centralized import solve_centralized
from .aladin import AladinConfig, ConvergenceRecord, IterateState, SensitivityPacket, run

__version__ = "0.1.0"

__all__ = [
    "Branch", "Bus", "CostPoly", "Generator", "InterconnectionSpec", "ItdCase",
    "NetworkCase", "dump_json_case", "load_json_case", "merge_itd", "parse_matpower",
    "ConsensusStructure", "CouplingVarDescriptor", "RegionSpec", "build_consensus",
    "coupling_residual", "decompose",
    "build_bfm_model", "build_bim_model", "build_region_models", "conic_residual", "eval_all",
    "NlpProblem", "NlpSolution", "solve_nlp", "solve_centralized",
    "AladinConfig", "ConvergenceRecord", "IterateState", "SensitivityPacket", "run",
]
