"""Low-discrepancy Sobol' sequence over the unit hypercube.

Gray-code construction with the standard published direction numbers
(primitive polynomials and initial values m_j) for dimensions up to 64.
The raw sequence starts at the origin; callers normally skip it (see
LEADING_SKIP), after which the first delivered point is the all-0.5 vector.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

# Number of leading points of the raw sequence discarded by default: the
# stream starts at index 1, dropping only the degenerate all-zero origin.
LEADING_SKIP = 1

_BITS = 52  # fits a float64 mantissa

# (polynomial, (m_1..m_s)) per dimension starting at dimension 2; the
# polynomial integer encodes all coefficient bits of a degree-s primitive
# polynomial over GF(2).  Dimension 1 uses m_j = 1 (van der Corput).
_DIRECTIONS = (
    (3, (1,)), (7, (1, 3)), (11, (1, 3, 1)),
    (13, (1, 1, 1)), (19, (1, 1, 3, 3)), (25, (1, 3, 5, 13)),
    (37, (1, 1, 5, 5, 17)), (41, (1, 1, 5, 5, 5)), (47, (1, 1, 7, 11, 19)),
    (55, (1, 1, 5, 1, 1)), (59, (1, 1, 1, 3, 11)), (61, (1, 3, 5, 5, 31)),
    (67, (1, 3, 3, 9, 7, 49)), (91, (1, 1, 1, 15, 21, 21)), (97, (1, 3, 1, 13, 27, 49)),
    (103, (1, 1, 1, 15, 7, 5)), (109, (1, 3, 1, 15, 13, 25)), (115, (1, 1, 5, 5, 19, 61)),
    (131, (1, 3, 7, 11, 23, 15, 103)), (137, (1, 3, 7, 13, 13, 15, 69)),
    (143, (1, 1, 3, 13, 7, 35, 63)), (145, (1, 3, 5, 9, 1, 25, 53)),
    (157, (1, 3, 1, 13, 9, 35, 107)), (167, (1, 3, 1, 5, 27, 61, 31)),
    (171, (1, 1, 5, 11, 19, 41, 61)), (185, (1, 3, 5, 3, 3, 13, 69)),
    (191, (1, 1, 7, 13, 1, 19, 1)), (193, (1, 3, 7, 5, 13, 19, 59)),
    (203, (1, 1, 3, 9, 25, 29, 41)), (211, (1, 3, 5, 13, 23, 1, 55)),
    (213, (1, 3, 7, 3, 13, 59, 17)), (229, (1, 3, 1, 3, 5, 53, 69)),
    (239, (1, 1, 5, 5, 23, 33, 13)), (241, (1, 1, 7, 7, 1, 61, 123)),
    (247, (1, 1, 7, 9, 13, 61, 49)), (253, (1, 3, 3, 5, 3, 55, 33)),
    (285, (1, 3, 1, 15, 31, 13, 49, 245)), (299, (1, 3, 5, 15, 31, 59, 63, 97)),
    (301, (1, 3, 1, 11, 11, 11, 77, 249)), (333, (1, 3, 1, 11, 27, 43, 71, 9)),
    (351, (1, 1, 7, 15, 21, 11, 81, 45)), (355, (1, 3, 7, 3, 25, 31, 65, 79)),
    (357, (1, 3, 1, 1, 19, 11, 3, 205)), (361, (1, 1, 5, 9, 19, 21, 29, 157)),
    (369, (1, 3, 7, 11, 1, 33, 89, 185)), (391, (1, 3, 3, 3, 15, 9, 79, 71)),
    (397, (1, 3, 7, 11, 15, 39, 119, 27)), (425, (1, 1, 3, 1, 11, 31, 97, 225)),
    (451, (1, 1, 1, 3, 23, 43, 57, 177)), (463, (1, 3, 7, 7, 17, 17, 37, 71)),
    (487, (1, 3, 1, 5, 27, 63, 123, 213)), (501, (1, 1, 3, 5, 11, 43, 53, 133)),
    (529, (1, 3, 5, 5, 29, 17, 47, 173, 479)), (539, (1, 3, 3, 11, 3, 1, 109, 9, 69)),
    (545, (1, 1, 1, 5, 17, 39, 23, 5, 343)), (557, (1, 3, 1, 5, 25, 15, 31, 103, 499)),
    (563, (1, 1, 1, 11, 11, 17, 63, 105, 183)), (601, (1, 1, 5, 11, 9, 29, 97, 231, 363)),
    (607, (1, 1, 5, 15, 19, 45, 41, 7, 383)), (617, (1, 3, 7, 7, 31, 19, 83, 137, 221)),
    (623, (1, 1, 1, 3, 23, 15, 111, 223, 83)), (631, (1, 1, 5, 13, 31, 15, 55, 25, 161)),
    (637, (1, 1, 3, 13, 25, 47, 39, 87, 257)),
)

MAX_DIMENSION = len(_DIRECTIONS) + 1


def _direction_integers(dim: int) -> np.ndarray:
    """Direction integers V[j] = v_j * 2**(_BITS - 1 - j) for each dimension."""
    v = np.zeros((dim, _BITS), dtype=np.uint64)
    for j in range(_BITS):  # first dimension: m_j = 1
        v[0, j] = np.uint64(1) << np.uint64(_BITS - 1 - j)
    for d in range(1, dim):
        poly, m = _DIRECTIONS[d - 1]
        s = poly.bit_length() - 1
        a = (poly >> 1) & ((1 << (s - 1)) - 1)  # inner coefficient bits
        mj = list(m)
        for j in range(s, _BITS):
            # m_j = m_{j-s} xor 2^s m_{j-s} xor sum_q 2^q a_q m_{j-q}
            new = mj[j - s] ^ (mj[j - s] << s)
            for q in range(1, s):
                if (a >> (s - 1 - q)) & 1:
                    new ^= mj[j - q] << q
            mj.append(new)
        for j in range(_BITS):
            v[d, j] = np.uint64(mj[j]) << np.uint64(_BITS - 1 - j)
    return v


def sobol_points(n: int, dim: int, skip: int = LEADING_SKIP) -> np.ndarray:
    """First n points of the sequence after discarding `skip` leading points.

    Returns an (n, dim) float64 array in [0, 1).  Deterministic; no
    scrambling.
    """
    if dim < 1 or dim > MAX_DIMENSION:
        raise ConfigurationError(
            f"dimension must be in [1, {MAX_DIMENSION}], got {dim}")
    if n < 0 or skip < 0:
        raise ConfigurationError("n and skip must be nonnegative")
    if n == 0:
        return np.zeros((0, dim))
    v = _direction_integers(dim)
    out = np.empty((n, dim), dtype=np.uint64)
    x = np.zeros(dim, dtype=np.uint64)
    if skip == 0:
        out[0] = x  # raw point 0 is the origin
    for i in range(1, n + skip):
        # Gray-code order: flip the direction of the lowest set bit of i
        low = (i & -i).bit_length() - 1
        x ^= v[:, low]
        if i >= skip:
            out[i - skip] = x
    return out.astype(np.float64) / float(1 << _BITS)
