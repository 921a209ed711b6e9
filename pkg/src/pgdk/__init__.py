"""Online policy gradient with a deep Koopman dynamics model.

Submodules: ``numkit`` (linear algebra, Adam, seeding), ``nets`` (MLPs with
manual gradients), ``dko`` (Koopman model), ``critic``, ``actor``,
``replay`` (memory and exploration noise), ``envs``, ``lqr``, ``config``,
``harness`` (training and evaluation), ``report`` and ``cli``.
"""

from .config import TrainConfig, load_config, preset
from .harness import Agent, evaluate, load_agent, train, train_offline

__version__ = "0.1.0"

__all__ = ["Agent", "TrainConfig", "evaluate", "load_agent", "load_config", "preset", "train", "train_offline"]
