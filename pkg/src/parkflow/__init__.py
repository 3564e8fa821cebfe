"""Design optimization for eco-industrial park waste treatment networks."""

from parkflow.evaluator import (
    DesignReport,
    Violation,
    brute_force_optimum,
    check_feasibility,
    derive_pathways,
    evaluate_design,
)
from parkflow.formulation import (
    Design,
    ExtractionError,
    Placement,
    VariableIndex,
    build_model,
    design_from_dict,
    design_to_dict,
    extract_design,
    load_design,
    pipe_pair_cost,
    save_design,
)
from parkflow.milp import MilpModel, ModelError
from parkflow.park import (
    Cell,
    Economics,
    ParkTopology,
    PipeOption,
    Scenario,
    ScenarioError,
    Technology,
    ValidationReport,
    WasteStream,
    cell_distance,
    elevation_class,
    load_scenario,
    save_scenario,
    validate_scenario,
)
from parkflow.solver import (
    SolveOptions,
    SolveResult,
    check_assignment,
    solve_external,
    solve_lp,
    solve_milp,
)

__version__ = "0.1.0"

__all__ = [
    "Cell",
    "Design",
    "DesignReport",
    "Economics",
    "ExtractionError",
    "MilpModel",
    "ModelError",
    "ParkTopology",
    "PipeOption",
    "Placement",
    "Scenario",
    "ScenarioError",
    "SolveOptions",
    "SolveResult",
    "Technology",
    "ValidationReport",
    "VariableIndex",
    "Violation",
    "WasteStream",
    "brute_force_optimum",
    "build_model",
    "cell_distance",
    "check_assignment",
    "check_feasibility",
    "derive_pathways",
    "design_from_dict",
    "design_to_dict",
    "elevation_class",
    "evaluate_design",
    "extract_design",
    "load_design",
    "load_scenario",
    "pipe_pair_cost",
    "save_design",
    "save_scenario",
    "solve_external",
    "solve_lp",
    "solve_milp",
    "validate_scenario",
    "__version__",
]
