"""mcglab: meta-causal graph world models on tabular environments.

Subpackages and modules, bottom up: ``numkit`` (autodiff, Adam, seeded
streams, Gumbel relaxation), ``metagraph`` (skeleton matrices and graph
comparison), ``envsim`` (tabular environments with a hidden ground truth),
``reach`` (intervention reachability), ``worldmodel`` (VQ meta-state encoder,
skeleton decoder, masked predictor, losses, checkpoints), ``agent``
(curiosity, intervention verification, training loop), ``planner`` (CEM) and
``harness`` (configuration, evaluation, runner).
"""
__version__ = "0.1.0"
