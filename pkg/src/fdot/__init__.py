"""Time-domain fluorescence diffuse optical tomography in a half space.

Forward models for cuboid and ellipsoid fluorescent targets, sensitivity
analysis of the cuboid parameters, a projected Levenberg-Marquardt solver and
the three-stage Gamma -> cube -> cuboid reconstruction pipeline.
"""
from .optics import OpticalMedium, Fluorophore, BoundaryPoint, green_kernel, green_k3
from .forward import (
    CuboidTarget,
    CubeTarget,
    EllipsoidTarget,
    SphereTarget,
    TimeGrid,
    TPSF,
    IRF,
    cuboid_model,
    cuboid_tpsf,
    cuboid_tpsfs,
    ellipsoid_tpsf,
    ellipsoid_tpsfs,
    convolve_irf,
    emission_intensity,
    add_noise,
)
from .measurement import (
    SDPair,
    HolderLayout,
    MeasurementSet,
    MeasurementFormatError,
    ExperimentBundle,
    holder_pairs,
    simulate_measurements,
    ingest_experiment,
)
from .lm import LMSettings, LMResult, lm_iterate
from .inversion import (
    GammaRegion,
    step1_prior,
    step2_cube_fit,
    step3_cuboid_fit,
    run_pipeline,
)
from .config import PipelineConfig, ConfigError, load_config, parse_config
from .estimator import CuboidFDOT

__version__ = "0.1.0"
