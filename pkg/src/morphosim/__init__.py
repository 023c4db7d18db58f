"""Longitudinal MR follow-up simulation from voxel-based morphometry."""

__version__ = "0.1.0"

from .deformation import DisplacementField3, compose, invert, jacobian_map, warp
from .errors import (ConfigError, DegenerateInputError, DimensionError, FormatError,
                     InvalidArgumentError, MorphosimError)
from .harness import LooResult, evaluate_pair, run_loo
from .morphometry import VbmMap, intensity_distance, vbm_distance
from .nifti import read_field, read_mask, read_nifti, write_field, write_mask, write_nifti
from .phantom import PhantomSpec, atlas_support, generate_phantom, phantom_atlas, phantom_population
from .registration import RegistrationParams, check_inverse_consistency, register_symmetric
from .simulation import (DistanceTable, SimulationConfig, TemplateRecord, average_followup_field,
                         build_template, combine_distances, kernel_weights, normalize_distances,
                         select_neighbors, simulate_followup)
from .volume import Grid3, Mask3, Volume3, dilate_mask, sample_trilinear
