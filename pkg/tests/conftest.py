import numpy as np
import pytest


def orthogonal_group_2x2(step_deg: float = 1.0):
    """All rotations and reflections of the plane on a regular angle grid."""
    out = []
    for deg in np.arange(0.0, 360.0, step_deg):
        th = np.deg2rad(deg)
        c, s = np.cos(th), np.sin(th)
        out.append(np.array([[c, -s], [s, c]]))
        out.append(np.array([[c, s], [s, -c]]))
    return out


def random_with_condition(rng, shape, cond):
    """Random matrix with log-uniformly spread singular values in [1/cond, 1]."""
    m, n = shape
    k = min(m, n)
    q1, _ = np.linalg.qr(rng.standard_normal((m, k)))
    q2, _ = np.linalg.qr(rng.standard_normal((n, k)))
    sig = np.logspace(0.0, -np.log10(cond), k)
    return (q1 * sig) @ q2.T


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
