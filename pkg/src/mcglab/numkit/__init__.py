"""Deterministic numeric substrate: tensors with reverse-mode gradients,
Adam, seeded random streams and binary stochastic relaxations."""
from .autodiff import (
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    div,
    exp,
    forward_mlp,
    gather,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    softmax,
    sq_dist,
    square,
    stop_gradient,
    sub,
    take_along,
    tanh,
    transpose,
    tsum,
)
from .gradcheck import analytic_grads, max_relative_error, numeric_grads
from .optim import Adam
from .rng import RandomSource, as_rng
from .stochastic import (
    EPS,
    bernoulli_entropy,
    gumbel_bernoulli,
    gumbel_bernoulli_logits,
    temperature_schedule,
)
