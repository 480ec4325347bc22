"""Analog-RF computing toolkit: waveform emulation, channel generation,
physical-layer design, precision allocation, and noisy CNN inference."""

from .channel import (ChannelRealization, ClientGeometry, GeometryParams,
                      large_scale_gain, path_loss_db, sample_channels,
                      sample_geometry, upa_steering)
from .cnn import (CnnModel, TrainConfig, calibrate_sref, evaluate,
                  forward_noisy, im2col, train_or_load)
from .phymetrics import (EnergyBreakdown, LayerSpec, SystemParams,
                         aggregate_energy, clip_gain, compute_kappa,
                         lenet_layers, nmse_ref, per_mac_energies,
                         required_gain, tw_schedule)
from .precision import (AdamConfig, BudgetSpec, PrecisionProfile,
                        budget_from_uniform, closed_form_energy_lambda0,
                        omega_weights, optimize_mixed_precision,
                        shares_to_targets)
from .solver import (LayerProblem, PhyDesign, Surrogate, build_surrogate,
                     mrt_init, optimal_beta, solve_layer, solve_subproblem,
                     subspace_reduce)
from .waveform import (MixerMode, OfdmSymbol, SubcarrierMap,
                       analog_mvm_oracle, build_subcarrier_maps, decode_if,
                       encode_symbol, mixer_emulate)

__version__ = "0.1.0"
