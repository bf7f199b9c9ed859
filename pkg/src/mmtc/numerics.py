"""Special functions and seeded randomness shared by the other modules.

The generalized Marcum Q-function is evaluated through the noncentral
chi-square survival function,

    Q_m(a, b) = P(X > b^2),   X ~ chi'^2(2m, a^2),

which scipy computes with a Poisson-weighted series in the noncentrality
term and adaptive truncation.  Arguments far into either tail are clamped
(see ``MARCUM_CLAMP``) so that the result never under- or overflows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.stats import ncx2

__all__ = [
    "MARCUM_CLAMP",
    "marcum_q",
    "bessel_i",
    "gauss_q",
    "RngStream",
    "sample",
]

# |b - a| beyond this puts Q_m within 1e-300 of 0 or 1 for the orders used here.
MARCUM_CLAMP = 38.0


def marcum_q(m, a, b):
    """Generalized Marcum Q-function Q_m(a, b), vectorized over a and b."""
    m = int(m)
    if m < 1:
        raise ValueError(f"marcum_q: order must be a positive integer, got {m}")
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr < 0) or np.any(b_arr < 0):
        raise ValueError("marcum_q: arguments a and b must be nonnegative")
    a_arr, b_arr = np.broadcast_arrays(a_arr, b_arr)
    out = ncx2.sf(b_arr * b_arr, 2 * m, a_arr * a_arr)
    out = np.where(b_arr - a_arr > MARCUM_CLAMP + np.sqrt(2.0 * m), 0.0, out)
    out = np.where(a_arr - b_arr > MARCUM_CLAMP, 1.0, out)
    out = np.where(b_arr == 0.0, 1.0, out)
    out = np.clip(out, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def bessel_i(n, x, scaled=False):
    """Modified Bessel function of the first kind I_n(x) for n in {0, 1, 2}.

    With ``scaled=True`` returns exp(-x) I_n(x), which stays finite for
    large x.
    """
    if n not in (0, 1, 2):
        raise ValueError(f"bessel_i: order must be 0, 1 or 2, got {n}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("bessel_i: x must be nonnegative")
    out = special.ive(n, x) if scaled else special.iv(n, x)
    return out[()] if out.ndim == 0 else out


def gauss_q(x):
    """Standard normal tail probability Q(x) = P(Z > x)."""
    out = 0.5 * special.erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))
    return out[()] if np.ndim(out) == 0 else out


@dataclass
class RngStream:
    """Reproducible random stream keyed by (master_seed, stream_id).

    The generator is a PCG64 seeded from ``SeedSequence(master_seed,
    spawn_key=(stream_id,))``.  SeedSequence hashes the pair into the
    generator state, so distinct stream ids give independent streams and the
    same pair always gives the same sequence.  One stream must not be shared
    between concurrent workers.
    """

    master_seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.master_seed < 0 or self.master_seed >= 2**64:
            raise ValueError("RngStream: master_seed must be a 64-bit unsigned integer")
        if self.stream_id < 0:
            raise ValueError("RngStream: stream_id must be nonnegative")

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_id),))
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, index: int) -> "RngStream":
        """Sub-stream for trial ``index``; ids are interleaved so they never collide."""
        return RngStream(self.master_seed, self.stream_id * 1_000_003 + 1 + int(index))


def sample(stream: RngStream, kind: str, size=None, *, variance=1.0, scale=1.0):
    """Draw samples of the given kind from ``stream``.

    kind is one of ``standard_normal``, ``complex_gaussian`` (circular,
    E|x|^2 = variance), ``rayleigh`` (amplitude of a complex Gaussian with
    E|x|^2 = scale, so P(R > s) = exp(-s^2/scale)) or ``uniform`` on [0, 1).
    """
    g = stream.gen
    if kind == "standard_normal":
        return g.standard_normal(size)
    if kind == "uniform":
        return g.random(size)
    if kind == "complex_gaussian":
        if not variance > 0:
            raise ValueError(f"sample: complex_gaussian variance must be > 0, got {variance}")
        s = np.sqrt(variance / 2.0)
        return s * (g.standard_normal(size) + 1j * g.standard_normal(size))
    if kind == "rayleigh":
        if not scale > 0:
            raise ValueError(f"sample: rayleigh scale must be > 0, got {scale}")
        return g.rayleigh(np.sqrt(scale / 2.0), size)
    raise ValueError(f"sample: unknown kind {kind!r}")
