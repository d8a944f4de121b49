"""Subarray-structured wideband MIMO channel models and two-phase estimation.

Three channel syntheses over the same scene description — exact spherical
(SWM), planar (PWM), and the hybrid spherical-planar model (HSPM) that is
planar within subarrays and spherical across them — plus closed-form
approximation-error analysis, a hybrid-beamforming observation pipeline,
Phase-1 reference estimators, and the geometric Phase-2 extension that
grows a reference-subarray estimate to the full array.

Distance-critical inner loops run through a compiled extension when it is
available; set HSPM_FORCE_PY=1 to force the pure-numpy fallback.  See
`hspm.backend.backend_name()` for the active choice.
"""

from .backend import backend_name
from .channel import (
    ApproxErrorReport,
    ChannelMatrix,
    approx_error_report,
    array_response,
    farfield_metric,
    farfield_metric_layouts,
    model_mismatch_db,
    pairwise_error_closed_form,
    pairwise_error_grid,
    pairwise_error_numeric,
    pwm_elementwise,
    synth_hspm,
    synth_pwm,
    synth_swm,
)
from .dataset import (
    CodebookConfig,
    DatasetManifest,
    denormalize_labels,
    export_dataset,
    load_labels,
    load_manifest,
    load_samples,
)
from .errors import (
    ConvergenceError,
    DegenerateGeometryError,
    HspmError,
    InvalidArgumentError,
    NoSpecularPathError,
    NumericalFailureError,
    SingularSystemError,
    UsageError,
    ValidationError,
)
from .estimation import (
    ExtendedParams,
    NewtonConfig,
    ReferenceParamsEstimate,
    extend_los,
    extend_nlos,
    extend_reference,
    newton_solve,
    nmse_db,
    omp_estimate,
    param_errors,
    phase1_grid,
    phase1_oracle,
    reconstruct_hspm,
    reference_truth,
    two_phase_from_reference,
)
from .geometry import (
    ArrayLayout,
    GainModel,
    PathParams,
    ReflectorPlane,
    Scene,
    antenna_position,
    arr_angles,
    dep_angles,
    free_space_amp,
    mirror_reflection_point,
    reflector_from_reference_params,
    reflector_from_reference_path,
    specular_residual,
    u_dep,
    wrap_azimuth,
)
from .sceneio import (
    export_reference_estimate,
    import_external_estimates,
    load_channel,
    load_scene,
    save_channel,
    save_scene,
    scene_from_dict,
)
from .scenegen import SamplerConfig, sample_scene, sampler_from_dict
from .signal import (
    Codebook,
    Codeword,
    Observation,
    assemble_frame,
    denormalize_minmax,
    normalize_minmax,
    observe_pair,
    random_codebook,
    stack_observations,
    tensorize,
)
from .sweeps import SweepConfig, run_sweep

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
