"""Random gradient-check instances shared by the module tests and the acceptance suite."""
import numpy as np

from mcglab import numkit as nk
from mcglab.worldmodel import loss_mask, loss_mle, loss_quantization, loss_sparse


def operator_cases(rng):
    """(name, fn, inputs) for every differentiable operator on random smooth inputs."""
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    m = rng.standard_normal((4, 2))
    idx = rng.integers(0, 3, size=5)
    col = rng.integers(0, 4, size=(3, 1))
    return [
        ("add", lambda x, y: nk.tsum(nk.add(x, y) * nk.add(x, y)), [a, b]),
        ("sub", lambda x, y: nk.tsum(nk.square(nk.sub(x, y))), [a, b]),
        ("mul", lambda x, y: nk.tsum(nk.mul(x, y)), [a, b]),
        ("div", lambda x, y: nk.tsum(nk.div(x, y)), [a, pos]),
        ("neg", lambda x: nk.tsum(nk.square(nk.neg(x))), [a]),
        ("square", lambda x: nk.tsum(nk.square(x)), [a]),
        ("relu", lambda x: nk.tsum(nk.square(nk.relu(x))), [a + np.sign(a) * 0.1]),
        ("tanh", lambda x: nk.tsum(nk.tanh(x)), [a]),
        ("sigmoid", lambda x: nk.tsum(nk.sigmoid(x)), [a]),
        ("log", lambda x: nk.tsum(nk.log(x)), [pos]),
        ("exp", lambda x: nk.tsum(nk.exp(x)), [a]),
        ("clamp", lambda x: nk.tsum(nk.square(nk.clamp(x, -5.0, 5.0))), [a]),
        ("log_softmax", lambda x: nk.tsum(nk.log_softmax(x, axis=1) * b), [a]),
        ("softmax", lambda x: nk.tsum(nk.softmax(x, axis=1) * b), [a]),
        ("tsum_axis", lambda x: nk.tsum(nk.square(nk.tsum(x, axis=0))), [a]),
        ("mean", lambda x: nk.tsum(nk.square(nk.mean(x, axis=1))), [a]),
        ("reshape", lambda x: nk.tsum(nk.reshape(x, (4, 3)) * b.reshape(4, 3)), [a]),
        ("transpose", lambda x: nk.tsum(nk.transpose(x, (1, 0)) * b.T), [a]),
        ("getitem", lambda x: nk.tsum(nk.square(x[1:, ::2])), [a]),
        ("gather", lambda x: nk.tsum(nk.square(nk.gather(x, idx, axis=0))), [a]),
        ("take_along", lambda x: nk.tsum(nk.square(nk.take_along(x, col, axis=1))), [a]),
        ("concat", lambda x, y: nk.tsum(nk.square(nk.concat([x, y], axis=1))), [a, b]),
        ("matmul", lambda x, y: nk.tsum(nk.square(nk.matmul(x, y))), [a, m]),
        ("matmul_batched", lambda x, y: nk.tsum(nk.matmul(x, y)),
         [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 2))]),
        ("sq_dist", lambda x, y: nk.tsum(nk.sq_dist(x, y)), [a, b]),
    ]


def _relative(a, n, floor=1e-6):
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max())


def loss_errors(rng) -> dict:
    """Max relative finite-difference error of each of the four losses on one random instance.

    The quantization loss carries stop-gradients, so each argument is checked
    against the frozen counterpart that only keeps its own term.
    """
    p, B, c = 4, 6, 3
    logits = rng.standard_normal((p, B, c))
    nxt = rng.integers(0, c, size=(B, p))
    probs = rng.uniform(0.05, 0.95, (p, p))
    delta = rng.uniform(0.0, 1.0, (p, p))
    delta[np.abs(delta - 0.3) < 0.02] = np.nan
    delta[0, 1] = np.nan
    e, z = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    beta = 0.25
    gz = nk.numeric_grads(lambda zz: nk.mean(nk.sq_dist(e, zz)), [z])[0]
    ge = nk.numeric_grads(lambda ee: nk.mean(nk.sq_dist(ee, z)) * beta, [e])[0]
    az = nk.analytic_grads(lambda zz: loss_quantization(e, zz, beta), [z])[0]
    ae = nk.analytic_grads(lambda ee: loss_quantization(ee, z, beta), [e])[0]
    return {
        "mle": nk.max_relative_error(lambda x: loss_mle(x, nxt), [logits]),
        "sparse": nk.max_relative_error(loss_sparse, [probs]),
        "mask": nk.max_relative_error(lambda m: loss_mask(m, delta), [probs]),
        "quantization": max(_relative(az, gz), _relative(ae, ge)),
    }
