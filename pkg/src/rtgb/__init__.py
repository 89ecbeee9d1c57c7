"""Recurrent temporal Gaussian-Bernoulli RBMs and transition-rule extraction."""
from .core_rbm import GbRbmParams, SpinConvention
from .dynamics_data import BallWorldConfig, Dataset, SpriteWorldConfig, load_dataset, save_dataset
from .rules import GibbsConfig, Literal, Rule, RuleSet
from .temporal import RtgbParams, TrainConfig, VisibleMode, load_rtgb, save_rtgb

__version__ = "0.1.0"
