"""rmlab: a synthetic lab for studying text-only shortcut learning in
multimodal reward models, and for training shortcut-aware ones."""

from .envs import (DirectionRule, EnvironmentSpec, PreferenceSample, Dataset,
                   default_family, make_family, sample_env, shortcut_oracle_label)
from .net import NetDims, RewardNet, forward, masked_forward, pair_grad, fd_check
from .training import TrainConfig, TrainRun, sfc, train, proxy_mask
from .evaluation import (accuracy, gen_matrix, shortcut_split, sfd, sfd_report,
                         score_correlation, length_balanced_subset,
                         sfc_rho_diagnostic)
from .bestofn import (CandidatePool, simulated_judge, make_pools, score_pool,
                      bon_exhaustive, bon_fast, bon_mc_check, bon_curve)

__version__ = "0.1.0"
