"""Switching control of continuously monitored open quantum systems."""

from .certificate import (
    CertificateEstimator,
    LyapunovCertificate,
    build_certificate,
    check_A2_sampled,
    compute_l_bounds,
    compute_modulation_bound,
)
from .lindblad import GeneratorBank, LindbladGenerator, MeasurementChannel, check_invariance, spectral_abscissa
from .operators import SubspaceDecomposition, subspace_distance
from .sme import IntegratorConfig, NoiseStream, simulate_ensemble, simulate_trajectory

__version__ = "0.1.0"

__all__ = [
    "CertificateEstimator",
    "GeneratorBank",
    "IntegratorConfig",
    "LindbladGenerator",
    "LyapunovCertificate",
    "MeasurementChannel",
    "NoiseStream",
    "SubspaceDecomposition",
    "build_certificate",
    "check_A2_sampled",
    "check_invariance",
    "compute_l_bounds",
    "compute_modulation_bound",
    "simulate_ensemble",
    "simulate_trajectory",
    "spectral_abscissa",
    "subspace_distance",
]
