"""
Plasma boundary reconstruction from magnetic measurements: a toroidal
harmonic fit outside the plasma followed by a finite element Cauchy
problem solved through a Kohn-Vogelius type control on an annulus.
"""
from .boundary import LimiterContour, PlasmaBoundary, XPoint, find_xpoints, plasma_boundary
from .cache import load_bank, save_bank
from .errors import PlasmaBoundError
from .fem import FemField, MeshBank, build_system, kv_functional, mesh_bank_build, mesh_bank_select
from .fit import (CauchyData, CurrentCenter, FluxLoop, MagneticProbe, MeasurementSet, SaddleLoop, Sensors,
                  build_design_matrix, current_center, eval_cauchy, fit_coefficients)
from .machine import MachineDescription, west_like_machine
from .magnetostatics import MU0, CoilSet, Filament, green_B, green_psi
from .mesh import InnerContour, TriMesh, build_annulus_mesh, refine_mesh
from .pipeline import PipelineConfig, ReconstructionResult, Reconstructor, build_bank, reconstruct
from .synth import SyntheticEquilibrium, d_shaped_equilibrium, generate_measurements, reference_boundary
from .toroidal import HarmonicCoeffs, ToroidalPole, eval_B_th, eval_psi_th, harmonic_basis, legendre_half

__all__ = [
    "LimiterContour", "PlasmaBoundary", "XPoint", "find_xpoints", "plasma_boundary",
    "load_bank", "save_bank", "PlasmaBoundError",
    "FemField", "MeshBank", "build_system", "kv_functional", "mesh_bank_build", "mesh_bank_select",
    "CauchyData", "CurrentCenter", "FluxLoop", "MagneticProbe", "MeasurementSet", "SaddleLoop", "Sensors",
    "build_design_matrix", "current_center", "eval_cauchy", "fit_coefficients",
    "MachineDescription", "west_like_machine", "MU0", "CoilSet", "Filament", "green_B", "green_psi",
    "InnerContour", "TriMesh", "build_annulus_mesh", "refine_mesh",
    "PipelineConfig", "ReconstructionResult", "Reconstructor", "build_bank", "reconstruct",
    "SyntheticEquilibrium", "d_shaped_equilibrium", "generate_measurements", "reference_boundary",
    "HarmonicCoeffs", "ToroidalPole", "eval_B_th", "eval_psi_th", "harmonic_basis", "legendre_half",
]
