"""Deterministic numeric kernel: seeded PRNG, Gaussian draws, stable softmax,
cosine similarity, and rank-2 PCA via power iteration.

The PRNG is a pure integer recurrence (a splitmix64-expanded seed driving a
256-bit xoshiro256** state), so a 64-bit seed reproduces the exact same
stream on any platform or language. All other routines are pure functions.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceFailure, DegenerateInput, InvalidInput

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (advanced state, 64-bit output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Deterministic child seed for an independent stream of randomness."""
    state, _ = splitmix64(seed & _MASK64)
    _, out = splitmix64((state ^ (stream & _MASK64)) & _MASK64)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator, state expanded from a 64-bit seed by splitmix64.

    Single-owner mutable state: callers that need parallel streams derive
    independent child seeds via ``derive_seed`` instead of sharing instances.
    """

    __slots__ = ("_s", "_gauss_spare")

    def __init__(self, seed: int):
        state = seed & _MASK64
        words = []
        for _ in range(4):
            state, word = splitmix64(state)
            words.append(word)
        self._s = words
        self._gauss_spare: float | None = None

    def next_u64(self) -> int:
        """Next raw 64-bit output."""
        s = self._s
        out = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return out

    def uniform(self) -> float:
        """Uniform double in (0, 1]; strictly positive so log() is safe."""
        return ((self.next_u64() >> 11) + 1) * 2.0**-53

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection sampling."""
        if n <= 0:
            raise InvalidInput("below() requires n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def gaussian(self) -> float:
        """Standard normal draw (Box-Muller over the uniform stream)."""
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
            return z
        radius = math.sqrt(-2.0 * math.log(self.uniform()))
        theta = 2.0 * math.pi * self.uniform()
        self._gauss_spare = radius * math.sin(theta)
        return radius * math.cos(theta)

    def gaussians(self, count: int) -> np.ndarray:
        """Batch of standard normal draws, identical to repeated gaussian()."""
        return np.array([self.gaussian() for _ in range(count)], dtype=np.float64)


def gaussian(rng: Rng) -> float:
    """Standard normal draw from the given generator."""
    return rng.gaussian()


def softmax_row(values) -> np.ndarray:
    """Probability vector from a row of scores, stable under shifts.

    Uses max-subtraction so arbitrarily large inputs cannot overflow, which
    also makes the result invariant under adding a constant to every entry.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInput("softmax_row expects a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInput("softmax_row requires finite inputs")
    weights = np.exp(v - v.max())
    return weights / weights.sum()


def cosine(u, v) -> float:
    """Cosine similarity clamped to [-1, 1] against rounding."""
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape or a.size == 0:
        raise InvalidInput("cosine expects two equal-length 1-D vectors")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInput("cosine undefined for a zero vector")
    if np.array_equal(a, b):  # identical inputs are exactly parallel
        return 1.0
    return float(min(1.0, max(-1.0, float(a @ b) / (na * nb))))


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    # Largest-magnitude component made positive so the axis is unique.
    idx = int(np.argmax(np.abs(v)))
    return -v if v[idx] < 0 else v


def _start_vector(mat: np.ndarray, orthogonal_to: np.ndarray | None) -> np.ndarray:
    # Column of largest norm is a cheap one-step head start; fall back to
    # basis vectors if the matrix is (numerically) zero.
    norms = np.linalg.norm(mat, axis=0)
    candidates = list(np.argsort(-norms))
    for j in candidates + list(range(mat.shape[0])):
        v = mat[:, int(j)].copy() if norms[int(j)] > 0 else np.eye(mat.shape[0])[int(j)]
        if orthogonal_to is not None:
            v = v - (v @ orthogonal_to) * orthogonal_to
        n = float(np.linalg.norm(v))
        if n > 1e-12:
            return v / n
    raise DegenerateInput("no usable start vector")


def _dominant_eigenpair(
    mat: np.ndarray,
    tol: float,
    max_iter: int,
    orthogonal_to: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    v = _start_vector(mat, orthogonal_to)
    residual = 1.0
    for _ in range(max_iter):
        w = mat @ v
        if orthogonal_to is not None:
            w = w - (w @ orthogonal_to) * orthogonal_to
        n = float(np.linalg.norm(w))
        if n < 1e-300:
            # v is (numerically) in the nullspace: eigenvalue 0.
            return v, 0.0
        w = w / n
        residual = 1.0 - abs(float(w @ v))
        v = w
        if residual <= tol:
            lam = float(v @ (mat @ v))
            return v, lam
    raise ConvergenceFailure("power iteration did not converge", residual)


def pca2(rows, *, tol: float = 1e-8, max_iter: int = 1000) -> tuple[np.ndarray, tuple[float, float]]:
    """Project rows onto the top-2 principal axes of their sample covariance.

    Power iteration with deflation; axes are sign-canonicalized (largest
    component positive) and returned eigenvalues satisfy ev1 >= ev2 >= 0.

    Returns:
        (projections n x 2, (ev1, ev2))
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise InvalidInput("pca2 expects a matrix with at least 3 rows")
    centered = x - x.mean(axis=0)
    cov = (centered.T @ centered) / (x.shape[0] - 1)
    v1, ev1 = _dominant_eigenpair(cov, tol, max_iter)
    deflated = cov - ev1 * np.outer(v1, v1)
    v2, ev2 = _dominant_eigenpair(deflated, tol, max_iter, orthogonal_to=v1)
    ev1 = max(ev1, 0.0)
    ev2 = min(max(ev2, 0.0), ev1)
    axes = np.stack([_canonical_sign(v1), _canonical_sign(v2)], axis=1)
    return centered @ axes, (ev1, ev2)
