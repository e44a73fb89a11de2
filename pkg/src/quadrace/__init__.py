"""quadrace: multi-drone gate racing with self-play PPO training.

Layers, bottom up: rigid-body quadrotor dynamics (``dynamics``), a cascade
PID flight controller (``control``), the gate-circuit race environment
(``track``, ``rewards``, ``observations``, ``race``), a from-scratch PPO
learner (``learner``), the staged self-play orchestration (``selfplay``),
the randomized evaluation harness (``evaluation``), and the configuration /
CLI front end (``config``, ``trajlog``, ``cli``).
"""

__version__ = "0.1.0"
