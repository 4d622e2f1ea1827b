from .cem import (
    ALPHA_DEFAULT,
    CEMConfig,
    CONTACT_IMPEDANCES,
    CURRENT_AMPLITUDE,
    EITForwardModel,
    ELECTRODE_COVERAGE,
    LAMBDA_DEFAULT,
    N_ELECTRODES,
    SIGMA_BG,
    SIGMA_FLOOR,
    TANK_RADIUS,
    adjacent_patterns,
    default_config,
    forward,
    jacobian,
    measurements,
    paint_disk_inclusion,
    solve_forward,
    synth_data,
)
from .mesh import Mesh, gen_disk_mesh, read_mesh, triangle_areas, validate_mesh, write_mesh

__all__ = [
    "ALPHA_DEFAULT",
    "CEMConfig",
    "CONTACT_IMPEDANCES",
    "CURRENT_AMPLITUDE",
    "EITForwardModel",
    "ELECTRODE_COVERAGE",
    "LAMBDA_DEFAULT",
    "Mesh",
    "N_ELECTRODES",
    "SIGMA_BG",
    "SIGMA_FLOOR",
    "TANK_RADIUS",
    "adjacent_patterns",
    "default_config",
    "forward",
    "gen_disk_mesh",
    "jacobian",
    "measurements",
    "paint_disk_inclusion",
    "read_mesh",
    "solve_forward",
    "synth_data",
    "triangle_areas",
    "validate_mesh",
    "write_mesh",
]
