import numpy as np
import pytest


def triple_loop_full(values, a, b, c):
    """Independent brute-force oracle for the full contraction."""
    total = 0.0
    n1, n2, n3 = values.shape
    for i in range(n1):
        for j in range(n2):
            for k in range(n3):
                total += values[i, j, k] * a[i] * b[j] * c[k]
    return total


def triple_loop_mode(values, mode, p, q):
    """Brute-force one-free-mode contraction."""
    n1, n2, n3 = values.shape
    if mode == 1:
        out = np.zeros(n1)
        for i in range(n1):
            for j in range(n2):
                for k in range(n3):
                    out[i] += values[i, j, k] * p[j] * q[k]
    elif mode == 2:
        out = np.zeros(n2)
        for i in range(n1):
            for j in range(n2):
                for k in range(n3):
                    out[j] += values[i, j, k] * p[i] * q[k]
    else:
        out = np.zeros(n3)
        for i in range(n1):
            for j in range(n2):
                for k in range(n3):
                    out[k] += values[i, j, k] * p[i] * q[j]
    return out


def triple_loop_one(values, mode, p):
    """Brute-force single-mode contraction to a matrix."""
    n1, n2, n3 = values.shape
    if mode == 1:
        out = np.zeros((n2, n3))
        for i in range(n1):
            out += values[i] * p[i]
    elif mode == 2:
        out = np.zeros((n1, n3))
        for j in range(n2):
            out += values[:, j, :] * p[j]
    else:
        out = np.zeros((n1, n2))
        for k in range(n3):
            out += values[:, :, k] * p[k]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
