"""Independent reference implementations used by the tests."""

import math

import numpy as np

from neurodyn import autodiff as ad


def brute_nt_xent(Z, tau):
    """Double loop over rows; rows 2i and 2i+1 are positives."""
    Z = np.asarray(Z, dtype=np.float64)
    n2 = Z.shape[0]
    U = [z / math.sqrt(sum(v * v for v in z)) for z in Z]
    total = 0.0
    for i in range(n2):
        j = i ^ 1
        num = math.exp(float(np.dot(U[i], U[j])) / tau)
        den = 0.0
        for k in range(n2):
            if k != i:
                den += math.exp(float(np.dot(U[i], U[k])) / tau)
        total += -math.log(num / den)
    return total / n2


def brute_cross_entropy(logits, labels):
    out = 0.0
    for row, y in zip(np.asarray(logits), labels):
        m = max(row)
        out += -(row[y] - m - math.log(sum(math.exp(v - m) for v in row)))
    return out / len(labels)


def brute_bce(logits, targets):
    out = 0.0
    for x, y in zip(np.asarray(logits), targets):
        p = 1.0 / (1.0 + math.exp(-x))
        out += -(y * math.log(p) + (1 - y) * math.log(1 - p))
    return out / len(targets)


def _away_from_zero(rng, shape, lo=0.2):
    x = rng.uniform(lo, 2.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


# op name -> (builder of named inputs, function of the tensors)
def op_gradient_cases():
    return {
        "add": (lambda r: {"a": r.normal(size=(3, 4)), "b": r.normal(size=(4,))},
                lambda p: p["a"] + p["b"]),
        "sub": (lambda r: {"a": r.normal(size=(3, 1)), "b": r.normal(size=(3, 4))},
                lambda p: p["a"] - p["b"]),
        "mul": (lambda r: {"a": r.normal(size=(2, 3)), "b": r.normal(size=(2, 3))},
                lambda p: p["a"] * p["b"]),
        "div": (lambda r: {"a": r.normal(size=(2, 3)), "b": _away_from_zero(r, (2, 3), 0.5)},
                lambda p: p["a"] / p["b"]),
        "scalar_mul": (lambda r: {"a": r.normal(size=(5,))}, lambda p: ad.scalar_mul(p["a"], -1.7)),
        "matmul": (lambda r: {"a": r.normal(size=(2, 3, 4)), "b": r.normal(size=(4, 5))},
                   lambda p: p["a"] @ p["b"]),
        "conv1d": (lambda r: {"x": r.normal(size=(2, 3, 9)), "w": r.normal(size=(4, 3, 3)),
                              "b": r.normal(size=(4,))},
                   lambda p: ad.conv1d(p["x"], p["w"], p["b"], padding=1)),
        "transpose": (lambda r: {"a": r.normal(size=(2, 3, 4))}, lambda p: ad.transpose(p["a"], (2, 0, 1))),
        "reshape": (lambda r: {"a": r.normal(size=(2, 6))}, lambda p: ad.reshape(p["a"], (3, 4))),
        "relu": (lambda r: {"a": _away_from_zero(r, (3, 4))}, lambda p: ad.relu(p["a"])),
        "sigmoid": (lambda r: {"a": r.normal(size=(3, 4))}, lambda p: ad.sigmoid(p["a"])),
        "exp": (lambda r: {"a": r.normal(size=(3, 4))}, lambda p: ad.exp(p["a"])),
        "log": (lambda r: {"a": r.uniform(0.3, 3.0, (3, 4))}, lambda p: ad.log(p["a"])),
        "square": (lambda r: {"a": r.normal(size=(3, 4))}, lambda p: ad.square(p["a"])),
        "sqrt": (lambda r: {"a": r.uniform(0.3, 3.0, (3, 4))}, lambda p: ad.sqrt(p["a"])),
        "abs": (lambda r: {"a": _away_from_zero(r, (3, 4))}, lambda p: ad.abs(p["a"])),
        "softmax": (lambda r: {"a": r.normal(size=(3, 5))}, lambda p: ad.softmax(p["a"], axis=1)),
        "log_softmax": (lambda r: {"a": r.normal(size=(3, 5))}, lambda p: ad.log_softmax(p["a"], axis=0)),
        "layer_norm": (lambda r: {"a": r.normal(size=(3, 6))}, lambda p: ad.layer_norm(p["a"], axis=-1)),
        "l2_normalize": (lambda r: {"a": r.normal(size=(4, 3))}, lambda p: ad.l2_normalize(p["a"], axis=1)),
        "sum": (lambda r: {"a": r.normal(size=(3, 4))}, lambda p: ad.sum(p["a"], axis=0, keepdims=True)),
        "mean": (lambda r: {"a": r.normal(size=(3, 4))}, lambda p: ad.mean(p["a"], axis=1)),
        "max": (lambda r: {"a": r.permutation(12).reshape(3, 4) * 0.5 + r.uniform(0, 0.1, (3, 4))},
                lambda p: ad.max(p["a"], axis=1)),
        "slice": (lambda r: {"a": r.normal(size=(4, 5))}, lambda p: p["a"][1:3, ::2]),
        "concat": (lambda r: {"a": r.normal(size=(2, 3)), "b": r.normal(size=(1, 3))},
                   lambda p: ad.concat([p["a"], p["b"]], axis=0)),
    }
