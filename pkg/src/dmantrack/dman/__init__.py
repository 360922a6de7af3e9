"""Spatial and temporal attention networks (numpy, hand-written backprop)."""

from .model import DmanModel, affinity, load_san, load_tan, save_san, save_tan
from .san import SanConfig, san_forward
from .tan import TanConfig, tan_forward

__all__ = ["DmanModel", "affinity", "load_san", "load_tan", "save_san", "save_tan",
           "SanConfig", "san_forward", "TanConfig", "tan_forward"]
