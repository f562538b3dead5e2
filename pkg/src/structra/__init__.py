"""structra: text-HMM structure transfer for patch-based time-series forecasting."""
from .analysis import export_transition_graph, l1_distance, state_prob_trace
from .hmm import Hmm, log_forward, train_hmm
from .model import AlignedForecaster, load_model, save_model
from .structal import init_prior_from_text, memm_decode

__version__ = "0.1.0"

__all__ = [
    "AlignedForecaster", "Hmm", "export_transition_graph", "init_prior_from_text", "l1_distance",
    "load_model", "log_forward", "memm_decode", "save_model", "state_prob_trace", "train_hmm",
]
