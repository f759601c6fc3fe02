"""Sensor path placement for lattice-embedded pneumatic actuators.

Pipeline: parametric geometry -> structured tet mesh -> corotational FEM
under a cavity pressure program -> deviation of each sensorized variant
from the plain one -> exhaustive ranking of contiguous anchor windows.
"""
__version__ = "0.1.0"

from .candidates import CandidatePath, enumerate_candidates
from .config import RunConfig, load_config, parse_config
from .deviation import DeviationReport, deviation_matrix, objective, reparameterize
from .errors import (AssemblyError, ComparisonError, ConfigurationError, EnumerationError,
                     MeshingError, MusenseError, SearchError, SolverError, ValidationError)
from .fem import (MaterialConfig, PressureProgram, TrajectorySet, assemble_material, bending_angle,
                  default_program, solve_quasistatic)
from .geometry import MuDesign, anchor_nodes, build_design, solid_outline
from .mesh import TetMesh, mesh_outline, roi_elements
from .search import RankingTable, evaluate_candidate, exhaustive_search, run_baseline

__all__ = [
    "AssemblyError", "CandidatePath", "ComparisonError", "ConfigurationError", "DeviationReport",
    "EnumerationError", "MaterialConfig", "MeshingError", "MuDesign", "MusenseError",
    "PressureProgram", "RankingTable", "RunConfig", "SearchError", "SolverError", "TetMesh",
    "TrajectorySet", "ValidationError", "anchor_nodes", "assemble_material", "bending_angle",
    "build_design", "default_program", "deviation_matrix", "enumerate_candidates",
    "evaluate_candidate", "exhaustive_search", "load_config", "mesh_outline", "objective",
    "parse_config", "reparameterize", "roi_elements", "run_baseline", "solid_outline",
    "solve_quasistatic",
]
