import numpy as np


def sample_box(box, n, rng):
    """Uniform samples from a product of intervals given as an (k, 2) array."""
    box = np.asarray(box, dtype=float)
    u = rng.random((n, box.shape[0]))
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def fd_lipschitz(fn, box, n_samples=100, delta=1e-6, rng=None):
    """Largest finite-difference ratio |fn(p + delta e) - fn(p)| / delta over random
    points p of the box and random unit directions e (sup-norm on the output)."""
    rng = np.random.default_rng(0) if rng is None else rng
    box = np.asarray(box, dtype=float)
    pts = sample_box(box, n_samples, rng)
    dirs = rng.standard_normal(pts.shape)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    f0 = np.asarray(fn(pts))
    f1 = np.asarray(fn(pts + delta * dirs))
    diff = np.abs(f1 - f0).reshape(n_samples, -1).max(axis=1)
    return float(diff.max() / delta)
