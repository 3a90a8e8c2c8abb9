"""cdmalab: a numerical laboratory for sparse-CDMA multiuser detection.

Code-ensemble sampling, BIAWGN channel simulation, exact and
belief-propagation detection, population-dynamics solution of the cavity
equations, and energy-landscape analysis.
"""

__version__ = "0.1.0"

from .ensemble import (BPSK, EnsembleSpec, FULLY_REGULAR, PURE_RANDOM,
                       SparseCode, UNMODULATED, USER_REGULAR, amplitude,
                       load_code, sample_code, save_code, validate_code)
from .channel import (TransmissionRecord, load_record, psd_Q, sample_bits,
                      save_record, sigma0_from_Q, transmit)
from .detector import (BPParams, PosteriorMarginals, bp_detect,
                       exact_marginals, hard_decisions, overlap_ber)
from .landscape import (CouplingField, MomentPrediction, NaesatResult,
                        chip_clique_spin_energy, coupling_field_decomposition,
                        empirical_field_moments, energy_difference_check,
                        hamiltonian, naesat_ground_states,
                        predicted_coupling_moments, predicted_field_moments,
                        rank_states_by_field)
from .popdyn import (PDParams, Population, SaddleSolution, ber_from_population,
                     free_energy, init_population, metastability_scan,
                     pd_sweep_modulated, pd_sweep_unmodulated,
                     run_to_convergence, spectral_efficiency, symmetry_check,
                     symmetry_noise_floor)
from .harness import (ExperimentConfig, ExperimentResult, expand_seeds,
                      load_config, parse_config, run_experiment)
