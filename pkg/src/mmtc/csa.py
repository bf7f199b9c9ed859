"""Coded slotted ALOHA over packet- and slot-erasure channels.

Each active user picks component code h with probability Lambda_h, encodes
k information segments into n_h coded packets and sends them in n_h distinct
slots of an N-slot frame.  The receiver peels singleton slots (SIC).  With
M users the load is G = k M / N.

Density evolution tracks p, the probability that a slot-to-user message is
still unresolved, and q, the user-to-slot counterpart:

    p_i = f_s(q_i),  q_i = f_u(p_{i-1}),  p_0 = 1.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import comb

__all__ = [
    "CodeSet",
    "DegreeDistribution",
    "ErasureChannelSpec",
    "DesignTarget",
    "FloorWarning",
    "exit_sn",
    "exit_un",
    "de_fixed_point",
    "user_recovery_prob",
    "error_floor",
    "expected_traffic_load",
    "optimize_distribution",
    "asymptotic_recovery",
    "asymptotic_throughput",
    "PAPER_DISTRIBUTIONS",
]


class FloorWarning(RuntimeWarning):
    """The recovery target lies above what the erasure floor allows."""


@dataclass(frozen=True)
class CodeSet:
    kind: str
    lengths: tuple
    k: int = 1

    def __post_init__(self):
        if self.kind not in ("repetition", "mds"):
            raise ValueError(f"CodeSet: kind must be 'repetition' or 'mds', got {self.kind!r}")
        if self.kind == "repetition" and self.k != 1:
            raise ValueError("CodeSet: repetition codes have k = 1")
        n = tuple(int(v) for v in self.lengths)
        if not n or list(n) != sorted(set(n)):
            raise ValueError("CodeSet: lengths must be nonempty, distinct and increasing")
        if n[0] <= self.k:
            raise ValueError("CodeSet: every length must exceed k")
        object.__setattr__(self, "lengths", n)

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.lengths, dtype=float)

    @classmethod
    def repetition(cls, lengths):
        return cls("repetition", tuple(lengths), 1)

    @classmethod
    def mds(cls, k, lengths):
        return cls("mds", tuple(lengths), int(k))


@dataclass(frozen=True)
class DegreeDistribution:
    codes: CodeSet
    probs: tuple

    def __post_init__(self):
        lam = np.asarray(self.probs, dtype=float)
        if lam.shape != (len(self.codes.lengths),):
            raise ValueError("DegreeDistribution: one probability per code is required")
        if np.any(lam < -1e-12) or abs(lam.sum() - 1) > 1e-9:
            raise ValueError("DegreeDistribution: probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", tuple(float(v) for v in np.clip(lam, 0, None)))

    @property
    def Lambda(self) -> np.ndarray:
        return np.asarray(self.probs)

    @property
    def n_bar(self) -> float:
        return float(self.Lambda @ self.codes.n)

    @property
    def rate(self) -> float:
        return self.codes.k / self.n_bar

    @property
    def edge(self) -> np.ndarray:
        """lambda_h = Lambda_h n_h / n_bar."""
        return self.Lambda * self.codes.n / self.n_bar

    @classmethod
    def from_poly(cls, terms: dict, k: int = 1):
        """Build from {n_h: Lambda_h}; MDS when k > 1."""
        n = sorted(terms)
        cs = CodeSet.repetition(n) if k == 1 else CodeSet.mds(k, n)
        return cls(cs, tuple(terms[v] for v in n))


@dataclass(frozen=True)
class ErasureChannelSpec:
    mode: str = "packet"
    eps: float = 0.0

    def __post_init__(self):
        if self.mode not in ("packet", "slot"):
            raise ValueError(f"ErasureChannelSpec: mode must be 'packet' or 'slot', got {self.mode!r}")
        if not 0 <= self.eps < 1:
            raise ValueError("ErasureChannelSpec: erasure rate must lie in [0, 1)")


@dataclass(frozen=True)
class DesignTarget:
    alpha: float = 0.97
    g_lo: float = 0.0
    g_hi: float = 1.5
    g_tol: float = 1e-4
    p_grid: int = 201

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("DesignTarget: alpha must lie in (0, 1)")


# Designed distributions reported for eps = 0.1, alpha = 0.97.
PAPER_DISTRIBUTIONS = {
    "r1": ({2: 0.0695, 3: 0.8957, 5: 0.0348}, 1, "packet", 0.835),
    "r2": ({2: 0.0915, 3: 0.8113, 6: 0.0972}, 1, "packet", 0.8604),
    "r3": ({2: 0.1529, 3: 0.5963, 6: 0.2508}, 1, "packet", 0.8877),
    "r5": ({2: 0.0915, 3: 0.8111, 6: 0.0974}, 1, "slot", 0.7744),
    "m1": ({4: 0.5943, 5: 0.2075, 8: 0.1982}, 2, "packet", 0.7875),
    "m2": ({5: 0.3081, 6: 0.3904, 12: 0.3015}, 3, "packet", 0.8131),
    "m7": ({5: 0.3081, 6: 0.3904, 12: 0.3015}, 3, "slot", 0.7318),
    "ref": ({2: 0.5631, 3: 0.0436, 5: 0.3933}, 1, "packet", None),
}


def exit_sn(q, G, dist: DegreeDistribution, ch: ErasureChannelSpec):
    """Slot-node EXIT function p = f_s(q)."""
    q = np.asarray(q, dtype=float)
    load = G / dist.rate
    if ch.mode == "packet":
        load = load * (1 - ch.eps)
    return -np.expm1(-load * q)


def _un_kernel(p, d, k, eps):
    """Per-degree user-node erasure probability for an edge of a degree-d user."""
    p = np.asarray(p, dtype=float)
    if k == 1:
        return ((1 - eps) * p + eps) ** (d - 1)
    out = np.zeros_like(p)
    for j in range(1, min(k, d) + 1):
        out = out + comb(d - 1, j - 1) * (1 - eps) ** (j - 1) * eps ** (d - j)
    for j in range(k + 1, d + 1):
        fail = np.zeros_like(p)
        for w in range(k):
            fail = fail + comb(j - 1, w) * (1 - p) ** w * p ** (j - 1 - w)
        out = out + comb(d - 1, j - 1) * (1 - eps) ** (j - 1) * eps ** (d - j) * fail
    return out


def exit_un(p, dist: DegreeDistribution, eps: float):
    """User-node EXIT function q = f_u(p), averaged over the edge distribution."""
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    for lam_h, d in zip(dist.edge, dist.codes.lengths):
        if lam_h > 0:
            out = out + lam_h * _un_kernel(p, d, dist.codes.k, eps)
    return np.clip(out, 0.0, 1.0)


def de_fixed_point(G, dist: DegreeDistribution, ch: ErasureChannelSpec, tol=1e-10, max_iters=10_000):
    """Iterate p_i = f_s(f_u(p_{i-1})) from p_0 = 1.  Returns (p, q, iterations)."""
    p = 1.0
    q = float(exit_un(p, dist, ch.eps))
    for i in range(1, max_iters + 1):
        q = float(exit_un(p, dist, ch.eps))
        p_new = float(exit_sn(q, G, dist, ch))
        assert p_new <= p + 1e-12, "density evolution must be nonincreasing"
        if abs(p_new - p) < tol:
            return p_new, q, i
        p = p_new
    return p, q, max_iters


def _recovery_kernel(p, d, k, eps):
    """P(at least k of d coded packets recovered), each w.p. (1-eps)(1-p)."""
    r = (1 - eps) * (1 - np.asarray(p, dtype=float))
    if k == 1:
        return 1 - (1 - r) ** d
    return sum(comb(d, j) * r ** j * (1 - r) ** (d - j) for j in range(k, d + 1))


def user_recovery_prob(p_inf, dist: DegreeDistribution, eps: float):
    """P_u for residual p_inf.  Repetition: 1 - sum Lambda_h ((1-eps) p + eps)^{n_h}."""
    return sum(
        lam * _recovery_kernel(p_inf, d, dist.codes.k, eps)
        for lam, d in zip(dist.Lambda, dist.codes.lengths)
    )


def error_floor(dist: DegreeDistribution, eps: float) -> float:
    """1 - P_u at p = 0, the loss that remains at vanishing load."""
    return float(1 - user_recovery_prob(0.0, dist, eps))


def _pu_at(G, dist, ch):
    p, _, _ = de_fixed_point(G, dist, ch)
    return float(user_recovery_prob(p, dist, ch.eps))


def expected_traffic_load(dist: DegreeDistribution, ch: ErasureChannelSpec, alpha=0.97, g_hi=1.5, g_tol=1e-4):
    """Largest G in [0, g_hi] with P_u(G) >= alpha, by bisection."""
    if 1 - error_floor(dist, ch.eps) < alpha:
        warnings.warn("expected_traffic_load: alpha is above the erasure floor", FloorWarning, stacklevel=2)
        return 0.0
    lo, hi = 0.0, g_hi
    if _pu_at(hi, dist, ch) >= alpha:
        return hi
    while hi - lo > g_tol:
        mid = 0.5 * (lo + hi)
        if _pu_at(mid, dist, ch) >= alpha:
            lo = mid
        else:
            hi = mid
    return lo


def _feasible(G, codes, eps, mode, alpha, n_bar, p_grid, floors):
    """Search for Lambda with mean degree n_bar that makes DE reach P_u >= alpha at load G."""
    n = codes.n
    k = codes.k
    R = k / n_bar
    slope = G / R * ((1 - eps) if mode == "packet" else 1.0)
    A_eq = np.vstack([np.ones_like(n), n])
    b_eq = np.array([1.0, n_bar])
    for pf in floors:
        grid = np.linspace(pf, 1.0, p_grid)[:-1]
        # f_s(f_u(p)) < p  <=>  sum_h Lambda_h n_h psi_h(p) / n_bar < -ln(1-p)/slope
        psi = np.stack([d * _un_kernel(grid, int(d), k, eps) / n_bar for d in n], axis=1)
        rhs = -np.log1p(-grid) / slope
        rhs = rhs * (1 - 1e-6) - 1e-12
        # P_u(p_floor) >= alpha
        rec = np.array([_recovery_kernel(pf, int(d), k, eps) for d in n])
        A_ub = np.vstack([psi, -rec[None, :]])
        b_ub = np.concatenate([rhs, [-alpha]])
        res = linprog(np.zeros(len(n)), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=[(0, None)] * len(n), method="highs")
        if res.status == 0:
            return np.clip(res.x, 0, None)
    return None


def optimize_distribution(codes: CodeSet, ch: ErasureChannelSpec, target: DesignTarget = DesignTarget(),
                          constraint: str = "n_bar", value: float | None = None):
    """Maximize G*_alpha over Lambda.

    constraint is ``n_bar`` (fixed mean length), ``rate`` (fixed k / n_bar) or
    ``none`` (scan n_bar in steps of 0.1, ties toward smaller n_bar).  Outer
    bisection on G; inner linear feasibility over a p-grid on [p_floor, 1]
    with a scan of candidate floors p_floor.  The returned G*_alpha is the
    value obtained by density evolution on the returned Lambda.
    """
    if constraint == "rate":
        n_bars = [codes.k / value]
    elif constraint == "n_bar":
        n_bars = [float(value)]
    elif constraint == "none":
        n_bars = list(np.round(np.arange(codes.n[0], codes.n[-1] + 1e-9, 0.1), 10))
    else:
        raise ValueError(f"optimize_distribution: unknown constraint {constraint!r}")
    if len(codes.lengths) == 1:
        dist = DegreeDistribution(codes, (1.0,))
        return dist, expected_traffic_load(dist, ch, target.alpha, target.g_hi, target.g_tol)
    floors = np.concatenate([np.logspace(-5, np.log10(0.5), 40)])
    best = None
    for nb in n_bars:
        if not codes.n[0] - 1e-9 <= nb <= codes.n[-1] + 1e-9:
            raise ValueError("optimize_distribution: mean length outside the code set range")
        lo, hi, lam_best = 0.0, target.g_hi, None
        while hi - lo > target.g_tol:
            mid = 0.5 * (lo + hi)
            x = _feasible(mid, codes, ch.eps, ch.mode, target.alpha, nb, target.p_grid, floors)
            if x is None:
                hi = mid
            else:
                lo, lam_best = mid, x
        if lam_best is None:
            continue
        dist = DegreeDistribution(codes, tuple(lam_best / lam_best.sum()))
        g = expected_traffic_load(dist, ch, target.alpha, target.g_hi, target.g_tol)
        if best is None or g > best[1] + 1e-12:
            best = (dist, g)
    if best is None:
        warnings.warn("optimize_distribution: infeasible at every load", FloorWarning, stacklevel=2)
        lam = np.zeros(len(codes.lengths))
        lam[-1] = 1.0
        return DegreeDistribution(codes, tuple(lam)), 0.0
    return best


def _require_repetition(dist):
    if dist.codes.kind != "repetition":
        raise ValueError("asymptotic recursions are defined for repetition code sets only")


def asymptotic_recovery(G, dist: DegreeDistribution, eps: float, n_iters: int = 10_000, tol=1e-12):
    """Packet recovery probability P_p after n_iters SIC iterations (packet erasure)."""
    _require_repetition(dist)
    n, lam = dist.codes.n, dist.Lambda
    pp = 0.0
    for _ in range(n_iters):
        new = float(np.exp(-G * (1 - eps) * np.sum(n * lam * (1 + (eps - 1) * pp) ** (n - 1))))
        if abs(new - pp) < tol:
            return new
        pp = new
    return pp


def asymptotic_throughput(G, dist: DegreeDistribution, eps: float, n_iters: int = 10_000):
    """(T, PLR) in the large-frame limit; PLR at G = 0 is the erasure floor."""
    _require_repetition(dist)
    n, lam = dist.codes.n, dist.Lambda
    pp = asymptotic_recovery(G, dist, eps, n_iters)
    lost = float(np.sum(lam * (1 + (eps - 1) * pp) ** n))
    return G * (1 - lost), lost
