"""Deterministic downlink studies for a reflecting-panel assisted multiuser link.

The pipeline: geometric channel synthesis, analytic-gradient phase
optimization of the panel, zero-forcing precoding, least-squares uplink
channel estimation with exact error statistics, and BER/rate evaluation
under perfect and estimated channel knowledge.
"""

from .channel import (
    ChannelSet,
    PathlossModel,
    assemble_compound,
    build_h12,
    compound_from_h12,
    direct_pathloss_db,
    synthesize,
)
from .errors import (
    ConfigurationError,
    GeometryError,
    IdentifiabilityError,
    ModelRangeError,
    NonConvergenceError,
    SingularChannelError,
)
from .estimation import (
    EstimatedChannel,
    EstimationOutcome,
    PilotPlan,
    design_pilots,
    estimated_channel,
    inject_error_model,
    ls_error_samples,
    reconstruct_channel,
    simulate_uplink_ls,
    true_v_blocks,
)
from .experiments import (
    MultiUeStudySpec,
    OutageTable,
    PointRecord,
    SweepSpec,
    cdf_and_outage,
    evaluate_point,
    run_coverage,
    run_multi_ue,
)
from .optimizer import (
    OptimizerSettings,
    OptimizerTrace,
    RisState,
    gradient,
    objective,
    optimize,
    verify_gradient,
)
from .performance import (
    BerEstimate,
    ErrorStatistics,
    LinkReport,
    RobustAllocation,
    achievable_rate,
    assemble_snr,
    ber_bound_imperfect,
    ber_exact_complex_average,
    ber_integral_quadrature,
    build_link_report,
    error_statistics,
    mc_ber,
    perfect_csi_statistics,
    qam_ber,
    qam_ber_exponential_bound,
    robust_pilot_allocation,
)
from .precoder import PrecoderSolution, SpectralReport, spectral_report, zero_forcing
from .scenario import (
    GeometryReport,
    GridSpec,
    Obstacle,
    ScenarioConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    element_positions,
    load_config,
    resolve_preset,
    save_config,
    with_panel_elements,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelSet", "PathlossModel", "assemble_compound", "build_h12",
    "compound_from_h12", "direct_pathloss_db", "synthesize",
    "ConfigurationError", "GeometryError", "IdentifiabilityError",
    "ModelRangeError", "NonConvergenceError", "SingularChannelError",
    "EstimatedChannel", "EstimationOutcome", "PilotPlan", "design_pilots",
    "estimated_channel", "inject_error_model", "ls_error_samples",
    "reconstruct_channel", "simulate_uplink_ls", "true_v_blocks",
    "MultiUeStudySpec", "OutageTable", "PointRecord", "SweepSpec",
    "cdf_and_outage", "evaluate_point", "run_coverage", "run_multi_ue",
    "OptimizerSettings", "OptimizerTrace", "RisState", "gradient",
    "objective", "optimize", "verify_gradient",
    "BerEstimate", "ErrorStatistics", "LinkReport", "RobustAllocation",
    "achievable_rate", "assemble_snr", "ber_bound_imperfect",
    "ber_exact_complex_average", "ber_integral_quadrature",
    "build_link_report", "error_statistics", "mc_ber",
    "perfect_csi_statistics", "qam_ber", "qam_ber_exponential_bound",
    "robust_pilot_allocation",
    "PrecoderSolution", "SpectralReport", "spectral_report", "zero_forcing",
    "GeometryReport", "GridSpec", "Obstacle", "ScenarioConfig",
    "apply_overrides", "config_from_dict", "config_to_dict",
    "element_positions", "load_config", "resolve_preset", "save_config",
    "with_panel_elements",
    "__version__",
]
