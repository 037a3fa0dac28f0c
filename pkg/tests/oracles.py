"""Independent reference implementations used as test oracles."""

import itertools

import numpy as np


def brute_reconstruct(U, T, F):
    I, J, K = len(U), len(T), len(F)
    out = np.zeros((I, J, K))
    for i, j, k in itertools.product(range(I), range(J), range(K)):
        out[i, j, k] = sum(U[i, r] * T[j, r] * F[k, r] for r in range(U.shape[1]))
    return out


def dense_masked_loss(U, T, F, X, mask):
    """Half the squared error over cells of observed slices, by dense evaluation."""
    model = np.einsum("ir,jr,kr->ijk", U, T, F)
    diff = np.where(mask[:, :, None], X - model, 0.0)
    return 0.5 * float(np.sum(diff * diff))


def finite_difference_gradient(fun, params, step=1e-6):
    """Central differences of ``fun()`` with respect to each array in ``params`` (perturbed in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            up = fun()
            p[idx] = old - step
            down = fun()
            p[idx] = old
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, b in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def mlp_objective(net, X, y, beta):
    """Forward pass written out afresh: leaky ReLU layers, then BCE or MSE."""
    a = X
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = a @ W + b
        a = np.maximum(z, 0) + net.negative_slope * np.minimum(z, 0)
    z = (a @ net.weights[-1] + net.biases[-1])[:, 0]
    if net.output_activation == "sigmoid":
        p = 1 / (1 + np.exp(-z))
        data = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    else:
        out = np.maximum(z, 0) if net.output_activation == "relu" else z
        data = np.mean((out - y) ** 2)
    return data + beta * sum(np.sum(W ** 2) for W in net.weights)
