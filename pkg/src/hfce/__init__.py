"""Hybrid near/far-field channel estimation for extremely large linear arrays."""
from . import analysis, channel, dictionary, estimators, geometry, harness, measurement
from .channel import FieldType, PathComponent, Scenario, ScenarioSampler, sample_scenario, synth_hybrid, synth_path
from .dictionary import Dictionary, build_angular, build_joint, build_polar, coherence, transform_magnitude
from .estimators import (Estimate, PdOmpConfig, far_omp, hf_omp, lmmse, near_omp, nmse, npd_omp, pd_omp,
                         pd_range, sd_omp)
from .geometry import ArrayConfig, far_steering, near_steering, rayleigh_distance
from .harness import ExperimentConfig, ResultTable, run_campaign, run_gamma_study, runtime_scaling_probe
from .measurement import (BeamformingCodebook, PilotObservation, build_whitener, gen_beamforming,
                          measurement_matrix, observe, snr_to_sigma2)

__version__ = "0.1.0"
