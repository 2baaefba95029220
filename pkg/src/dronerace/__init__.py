"""Quadcopter drone-racing simulation and reinforcement-learning toolkit.

Two control architectures over the same race task: a policy issuing direct
motor RPM commands against a full hybrid (nominal + neural-residual)
quadcopter model, and a policy issuing thrust/body-rate commands against a
first-order closed-loop abstraction. Includes PPO training, evaluation
with lap timing, and flight-log system identification.
"""

__version__ = "0.1.0"
