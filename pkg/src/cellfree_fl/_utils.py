import numpy as np
from scipy import sparse


def scale_rows(A, v):
    """Scale each row of A by the corresponding entry of v and return the
    result."""
    return sparse.diags(v) @ A


def db_to_linear(x_db):
    """Convert decibels to a linear power ratio."""
    return 10.0 ** (np.asarray(x_db, dtype="float64") / 10.0)


def dbm_to_watt(x_dbm):
    """Convert a power in dBm to watts."""
    return db_to_linear(x_dbm) / 1000.0


def wraparound_distance(a, b, side):
    """Pairwise distances between two point sets on a square torus.

    Parameters
    ----------
    a : (m, 2) array_like
    b : (k, 2) array_like
    side : float
        Side length of the square, in meters.

    Returns
    -------
    distances : (m, k) array
    """
    a = np.asarray(a, dtype="float64")
    b = np.asarray(b, dtype="float64")
    delta = np.abs(a[:, None, :] - b[None, :, :])
    delta = np.minimum(delta, side - delta)
    return np.sqrt(np.sum(delta ** 2, axis=-1))


def ceil_log2(n):
    """Smallest integer ``c`` with ``2**c >= n``, for positive integers ``n``."""
    return int(n - 1).bit_length()
