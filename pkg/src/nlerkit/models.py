"""Case-study model factory.

Scale knobs cover the desk-scale configurations used in tests (4-node SIS
graph, 8x8 spatial grids) as well as the full-size setups (8 nodes, 25x25).
"""

from .sis import SisConfig, SisModel, default_node_positions
from .spatial import GpModel, GridSpec, StpModel
from .toy import ToyModel

CASES = ("sis", "gp", "stp", "toy")


def build_model(case, *, sis_nodes=8, grid_side=25, grid_extent=(-3.0, 3.0)):
    case = case.lower()
    if case == "sis":
        return SisModel(SisConfig(default_node_positions(sis_nodes)))
    if case == "gp":
        return GpModel(GridSpec(side=grid_side, extent=grid_extent))
    if case == "stp":
        return StpModel(GridSpec(side=grid_side, extent=grid_extent))
    if case == "toy":
        return ToyModel()
    raise ValueError(f"unknown case {case!r}, expected one of {CASES}")
