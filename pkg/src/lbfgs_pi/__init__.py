"""L-BFGS with a learned step-size policy."""

from .lbfgs import LbfgsHistory, gamma, push_pair, two_loop
from .policy import PolicyParams, init_params, load_params, make_cosphi_params, policy_step, save_params
from .trainer import TrainConfig, train, unroll, warm_start_train

__version__ = "0.1.0"
