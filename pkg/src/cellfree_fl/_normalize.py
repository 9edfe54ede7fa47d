import numpy as np

from ._exceptions import DimensionMismatch


def as_vector(x, name, length=None):
    """Coerce ``x`` to a flat float64 array, checking its length.

    Parameters
    ----------
    x : array_like
    name : str
        Used in error messages.
    length : int, optional
        Required number of entries.

    Returns
    -------
    v : (n,) array
    """
    v = np.array(x, dtype="float64").ravel()
    if length is not None and v.size != length:
        raise DimensionMismatch(f"{name} has {v.size} entries, expected {length}")
    return v


def as_square(x, name, size):
    """Coerce ``x`` to a ``(size, size)`` float64 array."""
    M = np.array(x, dtype="float64")
    if M.shape != (size, size):
        raise DimensionMismatch(f"{name} has shape {M.shape}, expected {(size, size)}")
    return M


def normalize_bits(bits, n_users):
    """Check a per-user payload size vector.

    Parameters
    ----------
    bits : (K,) array_like
        Payload sizes ``b_t^j``; must be positive.
    n_users : int

    Returns
    -------
    bits : (K,) array
        float64 copy of ``bits``.
    """
    bits = as_vector(bits, "bits", n_users)
    if np.any(bits < 1):
        raise ValueError("bits must be >= 1 for every user")
    return bits


def normalize_coefficients(A_bar, B_bar, B_tilde, I_M):
    """Bring the SINR coefficient block into canonical form.

    The diagonal of ``B_tilde`` carries no meaning for the SINR expression and
    is zeroed so that ``B_tilde @ p`` sums over interferers only.

    Parameters
    ----------
    A_bar, B_bar, I_M : (K,) array_like
    B_tilde : (K, K) array_like

    Returns
    -------
    A_bar, B_bar, B_tilde, I_M : arrays
        float64 copies with consistent shapes.
    """
    A_bar = as_vector(A_bar, "A_bar")
    n_users = A_bar.size
    B_bar = as_vector(B_bar, "B_bar", n_users)
    I_M = as_vector(I_M, "I_M", n_users)
    B_tilde = as_square(B_tilde, "B_tilde", n_users)
    np.fill_diagonal(B_tilde, 0.0)

    for name, value in (("A_bar", A_bar), ("B_bar", B_bar), ("B_tilde", B_tilde), ("I_M", I_M)):
        if not np.all(np.isfinite(value)) or np.any(value < 0):
            raise ValueError(f"{name} must be finite and non-negative")

    return A_bar, B_bar, B_tilde, I_M
