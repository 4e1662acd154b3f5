"""Brute-force references for the attack tests."""
import itertools

import numpy as np

from specsphere.autodiff import Value
from specsphere.graph import flip_edges
from specsphere.topology import topology


def exhaustive_flip_loss(obj, g, x):
    """Largest objective over the clean graph and every single pair flip."""
    best = obj.value(g, x)
    for i, j in zip(*np.triu_indices(g.n, 1)):
        best = max(best, obj.value(flip_edges(g, [(int(i), int(j))]), x))
    return best


def exhaustive_sign_loss(obj, g, x, eps):
    """Largest objective over all 2^(n*d) box vertices x + eps * s, s in {-1, +1}."""
    if x.size > 16:
        raise ValueError("sign oracle limited to 16 entries")
    topo = topology(g)
    best = -np.inf
    for signs in itertools.product((-1.0, 1.0), repeat=x.size):
        xv = x + eps * np.reshape(signs, x.shape)
        best = max(best, obj(topo, Value(xv)).item())
    return best
