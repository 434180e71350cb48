"""Seeded random streams with a fully specified bit path.

Bits come from Philox-4x64-10 (numpy's ``Philox``) keyed directly by
``(seed, stream)`` with a zero counter, which skips numpy's seed hashing.
Each uniform uses the top 53 bits of one 64-bit word,
``u = (word >> 11) * 2**-53`` in [0, 1). Normals use Box-Muller on
consecutive pairs ``(u1, u2)``::

    z_even = sqrt(-2 log(1 - u1)) * cos(2 pi u2)
    z_odd  = sqrt(-2 log(1 - u1)) * sin(2 pi u2)

so any implementation of Philox and IEEE double arithmetic reproduces the
same variates (up to libm rounding of log/cos/sin).
"""

import numpy as np

__all__ = ["Stream"]

_TWO_M53 = 2.0**-53


class Stream:
    """A deterministic source of uniform and Gaussian variates.

    Parameters
    ----------
    seed : int
        Nonnegative 64-bit seed.
    stream : int
        Sub-stream index; distinct indices give independent streams for the
        same seed (used for per-worker streams).
    """

    def __init__(self, seed, stream=0):
        seed = int(seed)
        stream = int(stream)
        if not (0 <= seed < 2**64 and 0 <= stream < 2**64):
            raise ValueError("seed and stream must be 64-bit nonnegative integers")
        self.seed = seed
        self.stream = stream
        self._bits = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))

    def raw(self, size):
        return self._bits.random_raw(int(size))

    def uniform(self, size):
        """``size`` doubles in [0, 1); ``size`` may be an int or a shape."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape))
        return ((self.raw(count) >> np.uint64(11)).astype(np.float64) * _TWO_M53).reshape(shape)

    def normal(self, size):
        """Standard normals in row-major fill order (see module docstring)."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape))
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        rad = np.sqrt(-2.0 * np.log1p(-u1))
        ang = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = rad * np.cos(ang)
        z[1::2] = rad * np.sin(ang)
        return z[:count].reshape(shape)

    def orthogonal(self, k):
        """A k x k orthogonal matrix (QR of a Gaussian matrix, sign-fixed)."""
        Q, R = np.linalg.qr(self.normal((k, k)))
        return Q * np.where(np.diag(R) < 0, -1.0, 1.0)
