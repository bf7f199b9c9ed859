"""Physical-layer network coding for collided slots, with frame-level SIC.

Real-valued slot model: y = sqrt(Es) h^T x + z, x = 2u - 1 in {-1, +1}^K,
z ~ N(0, sigma_z^2).  Two transmit vectors u, u' give constellation points
2 sqrt(Es) |h^T delta| apart with delta = u - u' in {-1, 0, 1}^K.  The
receiver sorts these distances, builds a ladder of GF(2)-independent
difference vectors v_j = delta_j mod 2, and decodes L linear combinations
g_l^T u (mod 2) whose coefficient matrix G satisfies G^T V = I.  Message l
then sees the (K - l + 1)-th ladder distance.

Correctly decoded messages from all slots of a frame form a sparse GF(2)
system over the users' bits, solved by peeling plus XOR cancellation along
length-4 cycles.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import comb, erf, logsumexp
from scipy import integrate

from .numerics import RngStream, gauss_q

__all__ = [
    "CollisionSlot",
    "DistanceLadder",
    "NcBatch",
    "FrameDecodeState",
    "SicResult",
    "delta_representatives",
    "gf2_rank",
    "gf2_inv",
    "distance_ladder",
    "design_nc_matrix",
    "map_decode",
    "decode_slot",
    "find_length4_cycles",
    "enhanced_sic",
    "MinDistanceDistributions",
    "min_distance_distributions",
    "pe_closed_forms",
    "ladder_distances",
    "eta_k",
    "eta_table",
    "ThroughputRecord",
    "throughput_chain",
    "optimize_replicas",
    "PncSimResult",
    "simulate_pnc_frame",
    "complex_to_real",
]


# ---------------------------------------------------------------- GF(2)

def gf2_rank(A) -> int:
    A = (np.asarray(A) & 1).astype(np.uint8).copy()
    r = 0
    rows, cols = A.shape
    for c in range(cols):
        piv = np.flatnonzero(A[r:, c])
        if piv.size == 0:
            continue
        p = r + piv[0]
        A[[r, p]] = A[[p, r]]
        others = np.flatnonzero(A[:, c])
        others = others[others != r]
        A[others] ^= A[r]
        r += 1
        if r == rows:
            break
    return r


def gf2_inv(A) -> np.ndarray:
    A = (np.asarray(A) & 1).astype(np.uint8)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("gf2_inv: square matrix required")
    aug = np.concatenate([A.copy(), np.eye(n, dtype=np.uint8)], axis=1)
    for c in range(n):
        piv = np.flatnonzero(aug[c:, c])
        if piv.size == 0:
            raise np.linalg.LinAlgError("gf2_inv: matrix is singular over GF(2)")
        p = c + piv[0]
        aug[[c, p]] = aug[[p, c]]
        others = np.flatnonzero(aug[:, c])
        others = others[others != c]
        aug[others] ^= aug[c]
    return aug[:, n:]


# ---------------------------------------------------------------- slot level

@dataclass
class CollisionSlot:
    users: tuple
    h: np.ndarray
    Es: float = 1.0
    noise_var: float = 1.0
    u: np.ndarray | None = None
    y: np.ndarray | None = None

    def __post_init__(self):
        self.users = tuple(int(v) for v in self.users)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        if len(self.users) != self.h.size:
            raise ValueError("CollisionSlot: one channel per user is required")
        if any(b <= a for a, b in zip(self.users, self.users[1:])):
            raise ValueError("CollisionSlot: user indices must be strictly increasing")

    @property
    def K(self) -> int:
        return len(self.users)

    def synthesize(self, stream: RngStream, n_symbols: int = 1):
        """Draw bits (if absent) and the received symbols."""
        g = stream.gen
        if self.u is None:
            self.u = g.integers(0, 2, size=(n_symbols, self.K)).astype(np.uint8)
        x = 2.0 * self.u - 1.0
        self.y = np.sqrt(self.Es) * x @ self.h + np.sqrt(self.noise_var) * g.standard_normal(self.u.shape[0])
        return self


@lru_cache(maxsize=None)
def delta_representatives(K: int) -> np.ndarray:
    """Nonzero delta in {-1,0,1}^K with first nonzero entry +1, lexicographic order."""
    reps = [d for d in itertools.product((-1, 0, 1), repeat=K) if any(d) and d[next(i for i, v in enumerate(d) if v)] == 1]
    out = np.array(reps, dtype=np.int8).reshape(-1, K)
    out.setflags(write=False)
    return out


@dataclass
class DistanceLadder:
    d: np.ndarray        # d_1 <= ... <= d_K
    deltas: np.ndarray   # row j is Delta_{j+1}

    @property
    def v(self) -> np.ndarray:
        """Row j is v_{j+1} = Delta_{j+1} mod 2."""
        return (self.deltas % 2).astype(np.uint8)

    @property
    def V(self) -> np.ndarray:
        """V = [v_K, ..., v_1] (columns)."""
        return self.v[::-1].T.copy()


KMAX_DEFAULT = 7
KMAX_LIMIT = 12


def distance_ladder(slot: CollisionSlot, k_limit: int = KMAX_LIMIT) -> DistanceLadder:
    K = slot.K
    if K == 0:
        return DistanceLadder(np.zeros(0), np.zeros((0, 0), dtype=np.int8))
    if K > k_limit:
        raise ValueError(f"distance_ladder: K={K} exceeds the enumeration limit {k_limit}")
    reps = delta_representatives(K)
    dist = 2.0 * np.sqrt(slot.Es) * np.abs(reps @ slot.h)
    order = np.argsort(dist, kind="stable")
    basis = {}   # leading bit -> reduced vector (as int)
    chosen = []
    weights = 1 << np.arange(K - 1, -1, -1)
    masks = (reps % 2).astype(np.int64) @ weights
    for idx in order:
        x = int(masks[idx])
        while x:
            top = x.bit_length() - 1
            if top not in basis:
                basis[top] = x
                chosen.append(idx)
                break
            x ^= basis[top]
        if len(chosen) == K:
            break
    return DistanceLadder(dist[chosen], reps[chosen].astype(np.int8))


def design_nc_matrix(ladder: DistanceLadder, L: int | None = None) -> np.ndarray:
    """K x L coefficient matrix G with G^T V = I; column l is g_l."""
    K = ladder.d.size
    L = K if L is None else L
    if not 0 <= L <= K:
        raise ValueError("design_nc_matrix: need 0 <= L <= K")
    Gt = gf2_inv(ladder.V)
    return Gt[:L].T.copy()


@lru_cache(maxsize=None)
def _bit_table(K: int) -> np.ndarray:
    t = np.array(list(itertools.product((0, 1), repeat=K)), dtype=np.uint8).reshape(-1, K)
    t.setflags(write=False)
    return t


def _map_decode_all(y, h, Es, noise_var, G):
    """Decoded bits, shape (n_symbols, L), for every column of G."""
    K = h.size
    U = _bit_table(K)
    pts = np.sqrt(Es) * (2.0 * U - 1.0) @ h
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ll = -((y[:, None] - pts[None, :]) ** 2) / (2.0 * noise_var)
    W = (U.astype(np.int64) @ np.asarray(G, dtype=np.int64)) % 2          # (2^K, L)
    out = np.zeros((y.size, W.shape[1]), dtype=np.uint8)
    for l in range(W.shape[1]):
        one = W[:, l] == 1
        l1 = logsumexp(ll[:, one], axis=1)
        l0 = logsumexp(ll[:, ~one], axis=1)
        out[:, l] = l1 > l0
    return out


def map_decode(slot: CollisionSlot, g) -> np.ndarray:
    """MAP estimate of g^T u (mod 2) per received symbol; ties resolve to 0."""
    g = np.asarray(g, dtype=np.uint8).reshape(-1, 1)
    return _map_decode_all(slot.y, slot.h, slot.Es, slot.noise_var, g)[:, 0]


@dataclass
class NcBatch:
    users: tuple
    coeffs: np.ndarray       # K x L', columns are coefficient vectors over the slot's users
    values: np.ndarray       # L' x n_symbols decoded message bits
    attempted: int = 0

    @property
    def size(self) -> int:
        return self.coeffs.shape[1]

    def global_coeffs(self, M: int) -> np.ndarray:
        out = np.zeros((M, self.size), dtype=np.uint8)
        if self.size:
            out[list(self.users)] = self.coeffs
        return out


def decode_slot(slot: CollisionSlot, k_max: int = KMAX_DEFAULT, L: int | None = None) -> NcBatch:
    """Design, MAP-decode and keep the messages that match the truth on every symbol.

    The comparison with ``slot.u`` stands in for a per-message CRC.
    """
    K = slot.K
    empty = NcBatch(slot.users, np.zeros((K, 0), dtype=np.uint8), np.zeros((0, 1), dtype=np.uint8), 0)
    if K == 0 or K > k_max:
        return empty
    ladder = distance_ladder(slot)
    G = design_nc_matrix(ladder, L)
    est = _map_decode_all(slot.y, slot.h, slot.Es, slot.noise_var, G)       # (S, L)
    truth = (slot.u.astype(np.int64) @ G.astype(np.int64)) % 2
    ok = np.all(est == truth, axis=0)
    return NcBatch(slot.users, G[:, ok], est[:, ok].T.copy(), G.shape[1])


# ---------------------------------------------------------------- frame level

@dataclass
class FrameDecodeState:
    G: np.ndarray            # M x L binary
    w: np.ndarray            # L x n_symbols
    recovered: np.ndarray = None
    bits: np.ndarray = None

    def __post_init__(self):
        self.G = (np.asarray(self.G) & 1).astype(np.uint8).copy()
        w = np.asarray(self.w, dtype=np.uint8)
        self.w = (w.reshape(-1, 1) if w.ndim == 1 else w).copy()
        M = self.G.shape[0]
        if self.recovered is None:
            self.recovered = np.zeros(M, dtype=bool)
        if self.bits is None:
            self.bits = np.zeros((M, self.w.shape[1]), dtype=np.uint8)

    @classmethod
    def from_batches(cls, M: int, batches) -> "FrameDecodeState":
        cols = [b.global_coeffs(M) for b in batches if b.size]
        vals = [b.values for b in batches if b.size]
        if not cols:
            return cls(np.zeros((M, 0), dtype=np.uint8), np.zeros((0, 1), dtype=np.uint8))
        return cls(np.concatenate(cols, axis=1), np.concatenate(vals, axis=0))

    @property
    def degrees(self) -> np.ndarray:
        return self.G.sum(axis=0)


@dataclass
class SicResult:
    recovered: np.ndarray
    bits: np.ndarray
    trace: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return int(self.recovered.sum())


def find_length4_cycles(state: FrameDecodeState):
    """Pairs of NCNs sharing two users where at least one has degree 2.

    Returns a list of (degree-2 NCN, other NCN, (user_a, user_b)).
    """
    G = state.G.astype(np.int64)
    deg = G.sum(axis=0)
    two = np.flatnonzero(deg == 2)
    out = []
    if two.size == 0:
        return out
    overlap = G[:, two].T @ G          # (n_two, L)
    for i, a in enumerate(two):
        users = tuple(int(v) for v in np.flatnonzero(G[:, a]))
        for b in np.flatnonzero(overlap[i] >= 2):
            if b == a or (deg[b] == 2 and b < a):
                continue
            out.append((int(a), int(b), users))
    return out


def _release(state: FrameDecodeState, trace):
    """Release every degree-1 NCN and substitute.  Returns True on progress."""
    deg = state.degrees
    ones = np.flatnonzero(deg == 1)
    if ones.size == 0:
        return False
    for c in ones:
        if state.G[:, c].sum() != 1:
            continue
        u = int(np.flatnonzero(state.G[:, c])[0])
        val = state.w[c].copy()
        state.recovered[u] = True
        state.bits[u] = val
        touched = np.flatnonzero(state.G[u])
        state.w[touched] ^= val
        state.G[u, touched] = 0
        trace.append(("release", int(c), u))
    bad = np.flatnonzero((state.G.sum(axis=0) == 0) & np.any(state.w != 0, axis=1))
    if bad.size:
        raise ValueError(f"enhanced_sic: inconsistent constraints at NCN {int(bad[0])}")
    return True


def enhanced_sic(state: FrameDecodeState, stream: RngStream | None = None, use_cycles: bool = True) -> SicResult:
    """Peeling over degree-1 NCNs, then XOR cancellation along length-4 cycles.

    One cycle is chosen at random (from ``stream``, or the first found when
    no stream is given) whenever no degree-1 NCN is left.  ``use_cycles=False``
    gives the plain degree-1 peeling decoder.
    """
    trace = []
    M = state.G.shape[0]
    while M and not state.recovered.all():
        if _release(state, trace):
            continue
        if not use_cycles:
            break
        cycles = find_length4_cycles(state)
        if not cycles:
            break
        pick = cycles[int(stream.gen.integers(len(cycles)))] if stream is not None else cycles[0]
        a, b, users = pick
        state.G[:, b] ^= state.G[:, a]
        state.w[b] ^= state.w[a]
        trace.append(("cycle", a, b, users))
    return SicResult(state.recovered.copy(), state.bits.copy(), trace)


# ---------------------------------------------------------------- analysis, K = 2

@dataclass(frozen=True)
class MinDistanceDistributions:
    """Distributions of the two ladder distances for K = 2 i.i.d. Gaussian channels."""

    Er: float

    def pdf_d2(self, D):
        D = np.asarray(D, dtype=float)
        Er = self.Er
        return (
            np.sqrt(2) / np.sqrt(np.pi * Er) * np.exp(-D ** 2 / (8 * Er))
            * (erf(D / np.sqrt(2 * Er)) - erf(D / (2 * np.sqrt(2 * Er))))
            - 1 / np.sqrt(np.pi * Er) * np.exp(-D ** 2 / (16 * Er))
            * (erf(D / (4 * np.sqrt(Er))) - erf(3 * D / (4 * np.sqrt(Er))))
        )

    def pdf_d1(self, D):
        D = np.asarray(D, dtype=float)
        Er = self.Er
        e = np.exp(-D ** 2 / (16 * Er))
        return e / np.sqrt(np.pi * Er) * (
            1 - erf(3 * D / (4 * np.sqrt(Er))) + np.sqrt(2) * e * (1 - erf(D / np.sqrt(2 * Er)))
        )

    # CDFs from the double-integral forms, in units where sigma_h = 1 and Es = Er.
    def cdf_d2(self, D):
        c = np.asarray(D, dtype=float) / (2 * np.sqrt(self.Er))

        def one(c):
            if c <= 0:
                return 0.0
            f = lambda h2: np.exp(-h2 ** 2 / 2) * 0.5 * (erf((c + h2) / np.sqrt(2)) - erf(h2 / np.sqrt(2)))
            return 8 / np.sqrt(2 * np.pi) * integrate.quad(f, 0, c)[0]

        return np.vectorize(one)(c)[()]

    def cdf_d1(self, D):
        c = np.asarray(D, dtype=float) / (2 * np.sqrt(self.Er))

        def one(c):
            if np.isinf(c):
                return 1.0
            f = lambda h2: np.exp(-h2 ** 2 / 2) * 0.5 * (1 - erf((c + h2) / np.sqrt(2)))
            return 1 - 8 / np.sqrt(2 * np.pi) * integrate.quad(f, max(c, 0.0), np.inf)[0]

        return np.vectorize(one)(c)[()]

    def check_normalization(self, tol=1e-6):
        for f in (self.pdf_d1, self.pdf_d2):
            val = integrate.quad(f, 0, np.inf)[0]
            if abs(val - 1) > tol:
                raise ArithmeticError(f"density integrates to {val}")
        return True


def min_distance_distributions(Er: float) -> MinDistanceDistributions:
    if not Er > 0:
        raise ValueError("min_distance_distributions: Er must be positive")
    return MinDistanceDistributions(float(Er))


def pe_closed_forms(s):
    """(P_e(w_1), P_e(w_2)) for K = 2 at receive SNR s = gamma sigma_h^2."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("pe_closed_forms: receive SNR must be positive")
    a4 = np.arctan(np.sqrt(4 * s / (s + 5)))
    a9 = np.arctan(np.sqrt(9 * s / (s + 5)))
    with np.errstate(divide="ignore"):
        pe1 = 0.5 + 2 / np.pi * (np.arctan(np.sqrt(s / (s + 2))) + np.arctan(np.sqrt(s / (s + 1))) - a4 - a9)
        pe2 = -1.5 + 2 / np.pi * (np.arctan(np.sqrt(1 / (2 * s))) + np.arctan(np.sqrt(1 / s)) + a4 + a9)
    return pe1[()], pe2[()]


# ---------------------------------------------------------------- analysis, general K

def ladder_distances(H, Es=1.0, chunk=20_000) -> np.ndarray:
    """Ladder distances d_1..d_K for each row of H (n x K), vectorized.

    For each mod-2 pattern the smallest |h^T delta| is kept, then patterns are
    taken in increasing order while they enlarge the GF(2) span.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n, K = H.shape
    reps = delta_representatives(K)
    weights = 1 << np.arange(K - 1, -1, -1)
    pat = (reps % 2).astype(np.int64) @ weights
    P = 1 << K
    xor_tab = np.arange(P)[None, :] ^ np.arange(P)[:, None]      # xor_tab[c] = arange ^ c
    out = np.empty((n, K))
    for lo in range(0, n, chunk):
        Hc = H[lo:lo + chunk]
        m = Hc.shape[0]
        dist = 2.0 * np.sqrt(Es) * np.abs(Hc @ reps.T)
        dmin = np.full((m, P), np.inf)
        for p in range(1, P):
            sel = pat == p
            dmin[:, p] = dist[:, sel].min(axis=1)
        order = np.argsort(dmin[:, 1:], axis=1) + 1
        span = np.zeros((m, P), dtype=bool)
        span[:, 0] = True
        count = np.zeros(m, dtype=np.int64)
        rows = np.arange(m)
        for j in range(P - 1):
            c = order[:, j]
            new = ~span[rows, c] & (count < K)
            if new.any():
                r = rows[new]
                out[lo + r, count[new]] = dmin[r, c[new]]
                span[r] |= span[r[:, None], xor_tab[c[new]]]
                count[new] += 1
            if (count == K).all():
                break
    return out


def eta_k(K: int, snr: float, mc_samples: int = 200_000, stream: RngStream | None = None, sigma_h2: float = 1.0):
    """Average number of correctly decoded NC messages in a K-collision slot.

    K = 1 and K = 2 use closed forms; larger K averages Q(d_j / 2 sigma_z)
    over Monte Carlo channel draws with empirical ladders.  Here snr is the
    linear receive SNR gamma sigma_h^2 with Es = 1.
    """
    if K < 1:
        raise ValueError("eta_k: K must be >= 1")
    if K == 1:
        return 1.0 - np.arctan(1.0 / np.sqrt(snr)) / np.pi
    if K == 2:
        pe1, pe2 = pe_closed_forms(snr)
        return 2.0 - pe1 - pe2
    stream = stream if stream is not None else RngStream(0xE7A, K)
    H = np.sqrt(sigma_h2) * stream.gen.standard_normal((mc_samples, K))
    sigma_z = np.sqrt(sigma_h2 / snr)
    d = ladder_distances(H, 1.0)
    return float(K - gauss_q(d / (2 * sigma_z)).mean(axis=0).sum())


@lru_cache(maxsize=64)
def _eta_table_cached(k_max, snr, mc_samples, seed):
    return tuple(eta_k(K, snr, mc_samples, RngStream(seed, K)) for K in range(1, k_max + 1))


def eta_table(k_max: int, snr: float, mc_samples: int = 200_000, seed: int = 0xE7A) -> np.ndarray:
    """eta_1..eta_{k_max}; cached since the chain re-uses it for every (M, r)."""
    return np.array(_eta_table_cached(int(k_max), float(snr), int(mc_samples), int(seed)))


@dataclass
class ThroughputRecord:
    M: int
    N: int
    r: int
    psi: np.ndarray
    N_f: float
    chi: np.ndarray          # chi_1..chi_Kmax
    phi: np.ndarray          # phi_1..phi_Kmax
    N_rd: float
    N_u: float
    T: float
    clamped: bool

    @property
    def energy_eff(self) -> float:
        return self.T / self.r


def _binom_pmf(n, k, p):
    return comb(n, k, exact=False) * p ** k * (1 - p) ** (n - k)


def throughput_chain(M, N, r, snr, k_max=KMAX_DEFAULT, eta=None, mc_samples=200_000) -> ThroughputRecord:
    """Analytic throughput approximation for M users sending r replicas in N slots."""
    if not r < N:
        raise ValueError("throughput_chain: need r < N")
    eta = eta_table(k_max, snr, mc_samples) if eta is None else np.asarray(eta, dtype=float)
    q = r / N
    Ks = np.arange(0, M + 1)
    psi = _binom_pmf(M, Ks, q)
    Kr = np.arange(1, k_max + 1)
    valid = Kr <= M
    N_f = N * float(np.sum(eta[valid] * psi[Kr[valid]]))
    p_K = eta / Kr
    chi = np.zeros(k_max)
    phi = np.zeros(k_max)
    # i = 1
    chi[0] = sum(p_K[K - 1] * comb(M - 1, K - 1) * q ** (K - 1) * (1 - q) ** (M - K) for K in Kr if K <= M)
    ls = np.arange(2, r + 1)
    phi[0] = M * float(np.sum((ls - 1) * comb(r, ls) * chi[0] ** ls * (1 - chi[0]) ** (r - ls)))
    for i in range(2, k_max + 1):
        if i > M:
            break
        chi[i - 1] = sum(
            comb(K, i) * p_K[K - 1] / (2 ** K - 1) * comb(M - i, K - i) * q ** (K - i) * (1 - q) ** (M - K)
            for K in range(i, k_max + 1) if K <= M
        )
        phi[i - 1] = comb(M, i) * q ** i * chi[i - 1]
    N_rd = phi[0] - float(np.sum((np.arange(2, k_max + 1) - 1) * phi[1:]))
    N_u = N_f - N_rd
    T = N_u / N
    clamped = T < 0
    return ThroughputRecord(M, N, r, psi, N_f, chi, phi, N_rd, N_u, max(T, 0.0), clamped)


def optimize_replicas(M, N, snr, k_max=KMAX_DEFAULT, r_range=range(2, 7), objective="throughput", eta=None):
    """r maximizing T (``throughput``) or T / r (``energy``); ties toward smaller r."""
    if objective not in ("throughput", "energy"):
        raise ValueError(f"optimize_replicas: unknown objective {objective!r}")
    best_r, best_v = None, -np.inf
    for r in sorted(r_range):
        rec = throughput_chain(M, N, r, snr, k_max, eta)
        v = rec.T if objective == "throughput" else rec.energy_eff
        if v > best_v + 1e-12:
            best_r, best_v = r, v
    return best_r


# ---------------------------------------------------------------- simulation

@dataclass
class PncSimResult:
    T: float
    T_ci: float
    tau: float
    tau_ci: float
    trials: int
    degree1_T: float
    nc_messages: float


def _simulate_one(M, N, r, snr, k_max, stream, n_symbols, Es, channel):
    g = stream.gen
    noise_var = Es / snr
    u = g.integers(0, 2, size=(M, n_symbols)).astype(np.uint8)
    h_user = g.standard_normal(M) if channel == "user" else None
    keys = g.random((M, N))
    slots = np.argsort(keys, axis=1)[:, :r]
    members = [[] for _ in range(N)]
    for m in range(M):
        for s in slots[m]:
            members[s].append(m)
    batches = []
    n_msgs = 0
    for s in range(N):
        users = sorted(members[s])
        if not users:
            continue
        h = h_user[users] if channel == "user" else g.standard_normal(len(users))
        slot = CollisionSlot(tuple(users), h, Es, noise_var, u=u[users].T.copy())
        slot.synthesize(stream)
        b = decode_slot(slot, k_max)
        n_msgs += b.size
        batches.append(b)
    full = enhanced_sic(FrameDecodeState.from_batches(M, batches), stream)
    if full.recovered.any() and np.any(full.bits[full.recovered] != u[full.recovered]):
        raise AssertionError("enhanced_sic recovered a wrong bit from correct messages")
    plain = enhanced_sic(FrameDecodeState.from_batches(M, batches), None, use_cycles=False)
    return full.count / N, plain.count / N, n_msgs


def simulate_pnc_frame(M, N, r, snr, k_max=KMAX_DEFAULT, stream: RngStream | None = None, trials=200,
                       n_symbols=1, Es=1.0, channel="user") -> PncSimResult:
    """End-to-end Monte Carlo: replica placement, slot decoding, frame SIC.

    Each user draws one N(0, 1) channel used by all of its replicas
    (``channel='user'``); ``channel='replica'`` redraws it per slot.  snr is
    the linear receive SNR, so sigma_z^2 = Es / snr.
    """
    if r > N:
        raise ValueError("simulate_pnc_frame: r must not exceed N")
    if trials < 1:
        raise ValueError("simulate_pnc_frame: trials must be >= 1")
    stream = stream if stream is not None else RngStream(0)
    T = np.empty(trials)
    T1 = np.empty(trials)
    msgs = np.empty(trials)
    for t in range(trials):
        T[t], T1[t], msgs[t] = _simulate_one(M, N, r, snr, k_max, stream.child(t), n_symbols, Es, channel)
    ci = float(1.96 * T.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return PncSimResult(float(T.mean()), ci, float(T.mean() / r), ci / r, trials, float(T1.mean()), float(msgs.mean()))


def complex_to_real(h) -> np.ndarray:
    """2 x 2K real matrix [[Re h, -Im h], [Im h, Re h]] acting on [Re x; Im x]."""
    h = np.asarray(h, dtype=complex).reshape(-1)
    return np.block([[h.real[None, :], -h.imag[None, :]], [h.imag[None, :], h.real[None, :]]])
