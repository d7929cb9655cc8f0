"""Second-order asymptotic homogenization of stochastic voxel microstructures."""
from .errors import *  # noqa: F401,F403
from .tensors import (ElasticTensor, CouplingTensor5, GradTensor3, IsotropicMaterial,  # noqa: F401
                      SymTensor2, isotropic_stiffness, reuss_bound, voigt_bound)

__version__ = "0.1.0"
