"""Personalized federated learning that keeps client models apart.

Each round the server moves every client model one gradient step along a
softmax-over-distances loss and hands the result back as a proximal anchor.
"""
from .client import ClientHyper, ClientState, local_update
from .config import ConfigError, RunConfig, parse_config
from .distance import (ServerHyper, combination_weights, model_distance_grad, model_distance_loss,
                       server_step)
from .neural import MlpSpec
from .orchestrator import RoundRecord, RunReport, run
from .params import ModelPool, distance_row

__all__ = [
    "ClientHyper", "ClientState", "ConfigError", "MlpSpec", "ModelPool", "RoundRecord", "RunConfig",
    "RunReport", "ServerHyper", "combination_weights", "distance_row", "local_update",
    "model_distance_grad", "model_distance_loss", "parse_config", "run", "server_step",
]
