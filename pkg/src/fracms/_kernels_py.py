"""Pure NumPy versions of the element scatter kernels."""
import numpy as np


def scatter_add(slots, coef, local, nnz):
    """Sum ``coef[e] * local[e, j]`` into ``out[slots[e, j]]``."""
    weights = (np.asarray(coef)[:, None] * local).ravel()
    return np.bincount(slots.ravel(), weights=weights, minlength=nnz)


def element_average(conn, values):
    return np.asarray(values)[conn].mean(axis=1)
