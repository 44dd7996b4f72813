"""Counter-based deterministic random streams.

Every variate is a pure function of ``(seed, stream_id, counter)``: a
64-bit avalanche mix of the counter under a stream-derived key produces
uniform bits, and Gaussians come from the Wichura PPND16 inverse normal
CDF applied to the 53-bit uniform.  There is no sequential hidden state,
so independent samples can be drawn from disjoint streams in any order
(or in vectorized blocks) with identical results.

The mixing function is the SplitMix64 finalizer applied twice with a
second key word injected between rounds; distinct stream keys are
themselves avalanche-hashed, so streams are statistically independent
and cannot alias each other by a counter shift.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["RngStream", "stream_keys", "normal_from_counters", "derive_child_id"]

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_SEED_TAG = 0xD1B54A32D192ED03
_STREAM_TAG = 0x8CB92BA72F3D8DD7
_KEY2_TAG = 0xEB44ACCAB455D165
_CHILD_TAG = 0x9E6C63D0876A9049

# ---------------------------------------------------------------------------
# scalar mixing on python ints (key derivation, child streams)
# ---------------------------------------------------------------------------


def _mix64_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def stream_key_words(seed: int, stream_id: int) -> tuple[int, int]:
    """Derive the two 64-bit key words of a stream."""
    k1 = _mix64_int(_mix64_int(seed + _SEED_TAG) ^ _mix64_int(stream_id + _STREAM_TAG))
    k2 = _mix64_int(k1 + _KEY2_TAG)
    return k1, k2


def derive_child_id(stream_id: int, index: int) -> int:
    """Deterministic id of the ``index``-th child stream."""
    return _mix64_int((stream_id + _CHILD_TAG) ^ _mix64_int(index * _GOLDEN + _CHILD_TAG))


# ---------------------------------------------------------------------------
# PPND16 inverse normal CDF (Wichura, AS 241), double precision
# ---------------------------------------------------------------------------

_A = (
    3.3871328727963666080e0,
    1.3314166789178437745e2,
    1.9715909503065514427e3,
    1.3731693765509461125e4,
    4.5921953931549871457e4,
    6.7265770927008700853e4,
    3.3430575583588128105e4,
    2.5090809287301226727e3,
)
_B = (
    1.0,
    4.2313330701600911252e1,
    6.8718700749205790830e2,
    5.3941960214247511077e3,
    2.1213794301586595867e4,
    3.9307895800092710610e4,
    2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_C = (
    1.42343711074968357734e0,
    4.63033784615654529590e0,
    5.76949722146069140550e0,
    3.64784832476320460504e0,
    1.27045825245236838258e0,
    2.41780725177450611770e-1,
    2.27238449892691845833e-2,
    7.74545014278341407640e-4,
)
_D = (
    1.0,
    2.05319162663775882187e0,
    1.67638483018380384940e0,
    6.89767334985100004550e-1,
    1.48103976427480074590e-1,
    1.51986665636164571966e-2,
    5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_E = (
    6.65790464350110377720e0,
    5.46378491116411436990e0,
    1.78482653991729133580e0,
    2.96560571828504891230e-1,
    2.65321895265761230930e-2,
    1.24266094738807843860e-3,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
)
_F = (
    1.0,
    5.99832206555887937690e-1,
    1.36929880922735805310e-1,
    1.48753612908506148525e-2,
    7.86869131145613259100e-4,
    1.84631831751005468180e-5,
    1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _poly7(c, r):
    # Horner; identical op order in the numpy and numba twins below.
    acc = c[7]
    for k in (6, 5, 4, 3, 2, 1, 0):
        acc = acc * r + c[k]
    return acc


def _ndtri_np(u: np.ndarray) -> np.ndarray:
    """Inverse normal CDF, vectorized reference implementation."""
    q = u - 0.5
    central = np.abs(q) <= 0.425
    r_c = 0.180625 - q * q
    x_c = q * (_poly7(_A, r_c) / _poly7(_B, r_c))

    with np.errstate(invalid="ignore", divide="ignore"):
        p_tail = np.where(q < 0.0, u, 1.0 - u)
        r_t = np.sqrt(-np.log(np.where(central, 0.25, p_tail)))
    near = r_t <= 5.0
    r1 = r_t - 1.6
    x1 = _poly7(_C, r1) / _poly7(_D, r1)
    r2 = r_t - 5.0
    x2 = _poly7(_E, r2) / _poly7(_F, r2)
    x_t = np.where(near, x1, x2)
    x_t = np.where(q < 0.0, -x_t, x_t)
    return np.where(central, x_c, x_t)


def _bits_np(k1, k2, counters):
    """Counter block -> uniform 64-bit words (numpy path)."""
    with np.errstate(over="ignore"):
        z = counters * np.uint64(_GOLDEN) + k1
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        z = z ^ k2
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return z


_TO_UNIT = 2.0**-53


def _uniform_np(k1, k2, counters):
    bits = _bits_np(k1, k2, counters)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * _TO_UNIT


def _normal_np(k1, k2, counters):
    return _ndtri_np(_uniform_np(k1, k2, counters))


# ---------------------------------------------------------------------------
# numba twins (used when importable; same arithmetic, element-wise)
# ---------------------------------------------------------------------------

try:  # pragma: no cover - exercised indirectly through normal_from_counters
    import numba as _nb

    @_nb.njit(inline="always", cache=True)
    def _ppnd16(u):
        q = u - 0.5
        if abs(q) <= 0.425:
            r = 0.180625 - q * q
            num = (
                (
                    (
                        (
                            (
                                ((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r + 6.7265770927008700853e4)
                                * r
                                + 4.5921953931549871457e4
                            )
                            * r
                            + 1.3731693765509461125e4
                        )
                        * r
                        + 1.9715909503065514427e3
                    )
                    * r
                    + 1.3314166789178437745e2
                )
                * r
                + 3.3871328727963666080e0
            )
            den = (
                (
                    (
                        (
                            (
                                ((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r + 3.9307895800092710610e4)
                                * r
                                + 2.1213794301586595867e4
                            )
                            * r
                            + 5.3941960214247511077e3
                        )
                        * r
                        + 6.8718700749205790830e2
                    )
                    * r
                    + 4.2313330701600911252e1
                )
                * r
                + 1.0
            )
            return q * (num / den)
        if q < 0.0:
            p = u
        else:
            p = 1.0 - u
        r = math.sqrt(-math.log(p))
        if r <= 5.0:
            r = r - 1.6
            num = (
                (
                    (
                        (
                            (
                                ((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1)
                                * r
                                + 1.27045825245236838258e0
                            )
                            * r
                            + 3.64784832476320460504e0
                        )
                        * r
                        + 5.76949722146069140550e0
                    )
                    * r
                    + 4.63033784615654529590e0
                )
                * r
                + 1.42343711074968357734e0
            )
            den = (
                (
                    (
                        (
                            (
                                ((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2)
                                * r
                                + 1.48103976427480074590e-1
                            )
                            * r
                            + 6.89767334985100004550e-1
                        )
                        * r
                        + 1.67638483018380384940e0
                    )
                    * r
                    + 2.05319162663775882187e0
                )
                * r
                + 1.0
            )
        else:
            r = r - 5.0
            num = (
                (
                    (
                        (
                            (
                                ((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3)
                                * r
                                + 2.65321895265761230930e-2
                            )
                            * r
                            + 2.96560571828504891230e-1
                        )
                        * r
                        + 1.78482653991729133580e0
                    )
                    * r
                    + 5.46378491116411436990e0
                )
                * r
                + 6.65790464350110377720e0
            )
            den = (
                (
                    (
                        (
                            (
                                ((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5)
                                * r
                                + 7.86869131145613259100e-4
                            )
                            * r
                            + 1.48753612908506148525e-2
                        )
                        * r
                        + 1.36929880922735805310e-1
                    )
                    * r
                    + 5.99832206555887937690e-1
                )
                * r
                + 1.0
            )
        x = num / den
        if q < 0.0:
            return -x
        return x

    @_nb.njit(inline="always", cache=True)
    def _bits_scalar(k1, k2, c):
        z = (c * _nb.uint64(_GOLDEN) + k1) & _nb.uint64(_MASK)
        z = ((z ^ (z >> _nb.uint64(30))) * _nb.uint64(_MIX1)) & _nb.uint64(_MASK)
        z = ((z ^ (z >> _nb.uint64(27))) * _nb.uint64(_MIX2)) & _nb.uint64(_MASK)
        z = z ^ (z >> _nb.uint64(31))
        z = z ^ k2
        z = ((z ^ (z >> _nb.uint64(30))) * _nb.uint64(_MIX1)) & _nb.uint64(_MASK)
        z = ((z ^ (z >> _nb.uint64(27))) * _nb.uint64(_MIX2)) & _nb.uint64(_MASK)
        return z ^ (z >> _nb.uint64(31))

    @_nb.njit(inline="always", cache=True)
    def _normal_scalar(k1, k2, c):
        bits = _bits_scalar(k1, k2, c)
        u = (float(bits >> _nb.uint64(11)) + 0.5) * _TO_UNIT
        return _ppnd16(u)

    @_nb.vectorize(["float64(uint64, uint64, uint64)"], cache=True)
    def _normal_ufunc(k1, k2, c):
        return _normal_scalar(k1, k2, c)

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False
    _normal_ufunc = None
    _ppnd16 = None
    _normal_scalar = None
    _bits_scalar = None


def normal_from_counters(k1, k2, counters):
    """Standard normals indexed by counter under key (k1, k2).

    Broadcasts like a ufunc; runs the compiled kernel when numba is
    available and the numpy reference otherwise.
    """
    if HAVE_NUMBA:
        return _normal_ufunc(k1, k2, counters)
    return _normal_np(np.asarray(k1, dtype=np.uint64), np.asarray(k2, dtype=np.uint64), np.asarray(counters, dtype=np.uint64))


def stream_keys(seed: int, stream_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized key derivation for a batch of stream ids."""
    sids = np.asarray(stream_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        a = _mix64_arr(np.uint64((seed + _SEED_TAG) & _MASK))
        b = _mix64_arr(sids + np.uint64(_STREAM_TAG))
        k1 = _mix64_arr(np.uint64(a) ^ b)
        k2 = _mix64_arr(k1 + np.uint64(_KEY2_TAG))
    return k1, k2


def _mix64_arr(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def child_stream_ids(stream_id: int, indices: np.ndarray) -> np.ndarray:
    """Vectorized ``derive_child_id`` over an index array."""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix64_arr(idx * np.uint64(_GOLDEN) + np.uint64(_CHILD_TAG))
        return _mix64_arr(np.uint64((stream_id + _CHILD_TAG) & _MASK) ^ h)


class RngStream:
    """One deterministic stream of variates.

    Identical ``(seed, stream_id, counter)`` triples reproduce identical
    output on every call.  Independent work should use distinct streams
    obtained through :meth:`child`.
    """

    __slots__ = ("seed", "stream_id", "counter", "_k1", "_k2")

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK
        self.stream_id = int(stream_id) & _MASK
        self.counter = int(counter)
        k1, k2 = stream_key_words(self.seed, self.stream_id)
        self._k1 = np.uint64(k1)
        self._k2 = np.uint64(k2)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def child(self, *indices: int) -> "RngStream":
        """Independent stream labelled by an index path; counter starts at 0."""
        sid = self.stream_id
        for ix in indices:
            sid = derive_child_id(sid, int(ix))
        return RngStream(self.seed, sid)

    def child_ids(self, n: int, offset: int = 0) -> np.ndarray:
        """Stream ids of children ``offset .. offset+n-1`` (for batch kernels)."""
        return child_stream_ids(self.stream_id, np.arange(offset, offset + n, dtype=np.uint64))

    def _take_counters(self, n: int) -> np.ndarray:
        c = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return c

    def normal(self, size=None) -> np.ndarray | float:
        """Standard normal draws; advances the counter by their count."""
        if size is None:
            return float(normal_from_counters(self._k1, self._k2, self._take_counters(1)[0]))
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        z = normal_from_counters(self._k1, self._k2, self._take_counters(n))
        return np.asarray(z, dtype=np.float64).reshape(shape)

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform (0,1) draws; advances the counter."""
        if size is None:
            u = _uniform_np(self._k1, self._k2, self._take_counters(1))
            return float(u[0])
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        u = _uniform_np(self._k1, self._k2, self._take_counters(n))
        return u.reshape(shape)

    def geometric_half(self) -> int:
        """Draw j with P[j = k] = 2^{-k}, k >= 1."""
        u = self.uniform()
        return int(math.ceil(-math.log2(u)))

    def keys(self) -> tuple[np.uint64, np.uint64]:
        return self._k1, self._k2
