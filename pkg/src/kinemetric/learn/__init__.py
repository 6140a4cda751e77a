"""Volumetric joint-angle regressor implemented in numpy."""
from .network import KinematicNet, NetConfig
from .rotrep import loss, map_to_so3
from .trainer import TrainConfig, evaluate, train
