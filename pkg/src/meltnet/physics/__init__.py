"""Desk-scale conduction model of a single laser track."""

from .cases import StoredCase, case_grid, case_id_for, generate_cases, list_cases, read_case, write_case
from .materials import (
    MATERIALS,
    SS316L,
    TI64,
    EnthalpyModel,
    MaterialProperties,
    get_material,
    interpolate_property,
    thermal_diffusivity,
)
from .solver import (
    CaseResult,
    HeatSolver,
    SimulationConfig,
    SimulationState,
    absorptivity,
    absorptivity_from_scaling,
    carve_keyhole,
    gaussian_flux,
    max_diffusivity,
    run_case,
    scaling_parameter_normalized_enthalpy,
    scaling_parameter_verbatim,
    stable_timestep,
    step_heat_equation,
    substep_count,
)

__all__ = [
    "MATERIALS",
    "SS316L",
    "TI64",
    "CaseResult",
    "EnthalpyModel",
    "HeatSolver",
    "MaterialProperties",
    "SimulationConfig",
    "SimulationState",
    "StoredCase",
    "absorptivity",
    "absorptivity_from_scaling",
    "carve_keyhole",
    "case_grid",
    "case_id_for",
    "gaussian_flux",
    "generate_cases",
    "get_material",
    "interpolate_property",
    "list_cases",
    "max_diffusivity",
    "read_case",
    "run_case",
    "scaling_parameter_normalized_enthalpy",
    "scaling_parameter_verbatim",
    "stable_timestep",
    "step_heat_equation",
    "substep_count",
    "thermal_diffusivity",
    "write_case",
]
