"""Phylogenetic latent feature model for clonal deconvolution of bulk sequencing data."""

from .model import (ModelParams, ObservedData, Phylogeny, betabinomial_log_pmf, clamp_af,
                    data_log_likelihood, expected_af, fractions_log_prior,
                    genotype_row_log_prior, isa_indicator, joint_log_posterior, mrca,
                    tree_log_prior)
from .sampler import MapEstimate, SamplerConfig, Trace, run, sample, temperature
from .simulate import GroundTruth, SimulationSpec, simulate_dataset
from .evaluate import f_error, model_select, z_error
from .diagnostics import effective_sample_size, gelman_rubin

__version__ = "0.1.0"
