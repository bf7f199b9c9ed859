"""Grant-free user identification and channel estimation with transmission control.

Model: y = S x + w, with S an M x N pilot matrix of CN(0, 1/M) entries and
w ~ CN(0, sigma_w^2 I).  User n has a packet with probability eps, draws a
Rayleigh channel h_n ~ CN(0, beta), and transmits only if |h_n| > varsigma,
so x_n = h_n for transmitting users and 0 otherwise.  The receiver runs AMP
with the MMSE denoiser matched to this truncated prior and declares user n
active when the final pseudo-data |x~_n| exceeds a threshold l.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream, bessel_i, marcum_q

__all__ = [
    "NOISE_VAR_DEFAULT",
    "BETA_DEFAULT",
    "JuiceConfig",
    "DenoiserParams",
    "AmpResult",
    "DelayDistribution",
    "JuiceMetrics",
    "avg_transmission_probability",
    "mmse_denoiser",
    "denoiser_derivative",
    "conventional_denoiser",
    "conventional_derivative",
    "generate_pilots",
    "generate_scenario",
    "amp_recover",
    "detect_activity",
    "state_evolution",
    "detection_threshold",
    "error_probabilities",
    "delay_distribution",
    "network_throughput",
    "threshold_grid",
    "optimize_threshold",
    "simulate_juice",
]

# -169 dBm/Hz over 1 MHz, in watts
NOISE_VAR_DEFAULT = 10 ** (-169 / 10) * 1e-3 * 1e6
# -115 dB
BETA_DEFAULT = 10 ** (-115 / 10)


@dataclass(frozen=True)
class JuiceConfig:
    """System parameters.  The pilot length is M = ceil(ratio * N)."""

    n_users: int = 2000
    ratio: float = 0.4
    demand_prob: float = 0.24
    large_scale: float = BETA_DEFAULT
    control_threshold: float = 0.0
    noise_var: float = NOISE_VAR_DEFAULT
    max_iters: int = 50
    tol: float = 1e-3

    def __post_init__(self):
        if self.n_users < 1:
            raise ValueError("n_users must be a positive integer")
        if not 0 < self.ratio <= 1:
            raise ValueError("ratio must lie in (0, 1]")
        if not 0 <= self.demand_prob <= 1:
            raise ValueError("demand_prob must lie in [0, 1]")
        if not self.large_scale > 0:
            raise ValueError("large_scale must be positive")
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")
        if self.control_threshold < 0:
            raise ValueError("control_threshold must be nonnegative")
        if self.max_iters < 1 or not self.tol > 0:
            raise ValueError("max_iters must be >= 1 and tol > 0")

    @property
    def pilot_len(self) -> int:
        return int(math.ceil(self.ratio * self.n_users - 1e-9))

    @property
    def lam(self) -> float:
        return avg_transmission_probability(self.control_threshold, self.large_scale)

    def replace(self, **kw) -> "JuiceConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return JuiceConfig(**d)


def avg_transmission_probability(varsigma, beta):
    """lambda = P(|h| > varsigma) = exp(-varsigma^2 / beta) for h ~ CN(0, beta)."""
    if not beta > 0:
        raise ValueError("avg_transmission_probability: beta must be positive")
    return float(np.exp(-(varsigma ** 2) / beta))


@dataclass(frozen=True)
class DenoiserParams:
    """Per-iteration denoiser constants for state variable tau_t^2."""

    tau2: float
    beta: float
    eps: float
    varsigma: float

    def __post_init__(self):
        if not self.tau2 > 0:
            raise ValueError("DenoiserParams: tau2 must be positive")

    @classmethod
    def from_config(cls, tau2, cfg: JuiceConfig) -> "DenoiserParams":
        return cls(float(tau2), cfg.large_scale, cfg.demand_prob, cfg.control_threshold)

    @property
    def lam(self) -> float:
        return avg_transmission_probability(self.varsigma, self.beta)

    @property
    def mu(self) -> float:
        return self.beta / (self.beta + self.tau2)

    @property
    def sigma2(self) -> float:
        return self.beta * self.tau2 / (self.beta + self.tau2)

    @property
    def degenerate(self) -> bool:
        """True when eps = 0: the prior is a point mass at zero."""
        return self.eps == 0

    def marcum_args(self, r):
        s = np.sqrt(self.sigma2 / 2.0)
        return self.mu * np.asarray(r, dtype=float) / s, self.varsigma / s

    def alphas(self, u):
        """(alpha1, alpha2, alpha3) = (Q1/Q2, 1/Q2, Q1/Q3) at (a(u), b)."""
        a, b = self.marcum_args(np.abs(u))
        q1, q2, q3 = (marcum_q(m, a, b) for m in (1, 2, 3))
        with np.errstate(divide="ignore", invalid="ignore"):
            return q1 / q2, 1.0 / q2, q1 / q3


def _denoiser_terms(r, p: DenoiserParams):
    """Return (a, b, alpha1, q1, q2, T) with T = alpha2 c (beta+tau^2)/tau^2 exp(...).

    T is formed in the log domain so that a vanishing Q2 gives T = inf
    rather than inf * 0.
    """
    a, b = p.marcum_args(r)
    q1 = np.asarray(marcum_q(1, a, b), dtype=float)
    q2 = np.asarray(marcum_q(2, a, b), dtype=float)
    lam = p.lam
    c = (1.0 - p.eps * lam) / p.eps
    with np.errstate(divide="ignore", invalid="ignore"):
        log_t = (
            np.log(c)
            + np.log((p.beta + p.tau2) / p.tau2)
            - p.beta * r * r / (p.tau2 * (p.beta + p.tau2))
            - np.log(q2)
        )
        t = np.exp(log_t)
        alpha1 = np.where(q2 > 0, q1 / q2, 1.0)
    return a, b, alpha1, q1, q2, t


def mmse_denoiser(u, p: DenoiserParams):
    """Posterior mean of x_n given x~_n = u under the controlled prior."""
    u = np.asarray(u, dtype=complex)
    if p.degenerate:
        return np.zeros_like(u)
    r = np.abs(u)
    _, _, alpha1, _, _, t = _denoiser_terms(r, p)
    with np.errstate(invalid="ignore"):
        out = p.mu * u / (alpha1 + t)
    out = np.where(np.isfinite(t), out, 0.0)
    return out[()] if out.ndim == 0 else out


def denoiser_derivative(u, p: DenoiserParams):
    """Complex (Wirtinger) derivative d eta / d u of the MMSE denoiser.

    The denoiser has the form eta(u) = u g(|u|), so d eta/du = g + |u| g'/2,
    which is real.  This is the quantity averaged in the Onsager term.  It is
    computed from the closed-form derivatives of alpha1 and alpha2 in |u|;
    at u = 0 those vanish and the value is mu / (alpha1 + alpha2 c (beta +
    tau^2)/tau^2).
    """
    u = np.asarray(u, dtype=complex)
    if p.degenerate:
        return np.zeros(u.shape)
    r = np.abs(u)
    a, b, alpha1, q1, q2, t = _denoiser_terms(r, p)
    s = np.sqrt(p.sigma2 / 2.0)
    da = p.mu / s
    ab = a * b
    # exp(-(a^2+b^2)/2) I_m(ab) = ive(m, ab) exp(-(a-b)^2/2)
    g = np.exp(-0.5 * (a - b) ** 2)
    ei1 = bessel_i(1, ab, scaled=True) * g
    ei2 = bessel_i(2, ab, scaled=True) * g
    with np.errstate(divide="ignore", invalid="ignore"):
        b_over_a_i2 = np.where(a > 0, b * ei2 / a, 0.0)
        d_alpha1 = np.where(q2 > 0, b * da * (q2 * ei1 - q1 * b_over_a_i2) / q2 ** 2, 0.0)
        # d(alpha2)/dr divided by alpha2
        dlog_alpha2 = np.where(q2 > 0, -b * da * b_over_a_i2 / q2, 0.0)
        dlog_e = -2.0 * p.beta * r / (p.tau2 * (p.beta + p.tau2))
        den = alpha1 + t
        ratio = (d_alpha1 + t * (dlog_alpha2 + dlog_e)) / den
        out = p.mu / den * (1.0 - 0.5 * r * ratio)
    out = np.where(np.isfinite(t), out, 0.0)
    return out[()] if out.ndim == 0 else out


def conventional_denoiser(u, tau2, beta, eps):
    """Bernoulli-Gaussian MMSE denoiser for a prior without transmission control."""
    u = np.asarray(u, dtype=complex)
    if eps == 0:
        return np.zeros_like(u)
    mu = beta / (beta + tau2)
    lr = ((1 - eps) / eps) * ((beta + tau2) / tau2) * np.exp(-beta * np.abs(u) ** 2 / (tau2 * (beta + tau2)))
    return mu * u / (1.0 + lr)


def conventional_derivative(u, tau2, beta, eps):
    u = np.asarray(u, dtype=complex)
    if eps == 0:
        return np.zeros(u.shape)
    mu = beta / (beta + tau2)
    k = beta / (tau2 * (beta + tau2))
    r2 = np.abs(u) ** 2
    lr = ((1 - eps) / eps) * ((beta + tau2) / tau2) * np.exp(-k * r2)
    den = 1.0 + lr
    return mu / den + mu * r2 * k * lr / den ** 2


@dataclass
class AmpResult:
    x_hat: np.ndarray
    x_tilde: np.ndarray
    tau: float
    iterations: int
    tau2_trace: list = field(default_factory=list)


def generate_pilots(M, N, stream: RngStream):
    """M x N pilot matrix with CN(0, 1/M) entries."""
    g = stream.gen
    return (g.standard_normal((M, N)) + 1j * g.standard_normal((M, N))) / np.sqrt(2.0 * M)


def generate_scenario(cfg: JuiceConfig, stream: RngStream):
    """One frame: returns (y, S, x, demand, transmit)."""
    g = stream.gen
    N, M = cfg.n_users, cfg.pilot_len
    demand = g.random(N) < cfg.demand_prob
    h = np.sqrt(cfg.large_scale / 2.0) * (g.standard_normal(N) + 1j * g.standard_normal(N))
    transmit = demand & (np.abs(h) > cfg.control_threshold)
    x = np.where(transmit, h, 0.0)
    S = generate_pilots(M, N, stream)
    w = np.sqrt(cfg.noise_var / 2.0) * (g.standard_normal(M) + 1j * g.standard_normal(M))
    return S @ x + w, S, x, demand, transmit


def amp_recover(y, S, cfg: JuiceConfig, denoiser: str = "proposed") -> AmpResult:
    """AMP with the selected denoiser (``proposed`` or ``conventional``)."""
    y = np.asarray(y, dtype=complex)
    M, N = S.shape
    if y.shape != (M,) or N != cfg.n_users:
        raise ValueError("amp_recover: dimensions of y, pilots and cfg disagree")
    x_hat = np.zeros(N, dtype=complex)
    x_tilde = np.zeros(N, dtype=complex)
    z = y.copy()
    tau = float(np.linalg.norm(z) / np.sqrt(M))
    trace = []
    t = 0
    while t < cfg.max_iters:
        tau = float(np.linalg.norm(z) / np.sqrt(M))
        if tau == 0.0:
            break
        tau2 = tau * tau
        trace.append(tau2)
        x_tilde = S.conj().T @ z + x_hat
        if denoiser == "proposed":
            p = DenoiserParams.from_config(tau2, cfg)
            x_new = mmse_denoiser(x_tilde, p)
            onsager = float(np.mean(denoiser_derivative(x_tilde, p)))
        elif denoiser == "conventional":
            x_new = conventional_denoiser(x_tilde, tau2, cfg.large_scale, cfg.demand_prob)
            onsager = float(np.mean(conventional_derivative(x_tilde, tau2, cfg.large_scale, cfg.demand_prob)))
        else:
            raise ValueError(f"amp_recover: unknown denoiser {denoiser!r}")
        z = y - S @ x_new + (N / M) * onsager * z
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(z))):
            raise FloatingPointError(f"amp_recover: non-finite iterate at t={t} (tau^2={tau2:.3e})")
        prev = np.linalg.norm(x_hat)
        change = np.linalg.norm(x_new - x_hat)
        x_hat = x_new
        t += 1
        if prev > 0 and change <= cfg.tol * prev:
            break
    return AmpResult(x_hat, x_tilde, tau, t, trace)


def detect_activity(x_tilde, x_hat, l):
    """Users with |x~_n| > l; returns (sorted indices, channel estimates with zeros elsewhere)."""
    if l < 0:
        raise ValueError("detect_activity: threshold must be nonnegative")
    x_tilde = np.asarray(x_tilde)
    active = np.abs(x_tilde) > l
    return np.flatnonzero(active), np.where(active, x_hat, 0.0)


def _se_samples(cfg: JuiceConfig, n_samples, stream):
    """Stratified draws (active channel h, unit noise v_act, unit noise v_idle)."""
    g = stream.gen
    half = max(1, n_samples // 2)
    # |h|^2 given |h| > varsigma is varsigma^2 + Exp(beta)
    mag = np.sqrt(cfg.control_threshold ** 2 + g.exponential(cfg.large_scale, half))
    h = mag * np.exp(2j * np.pi * g.random(half))
    v_act = (g.standard_normal(half) + 1j * g.standard_normal(half)) / np.sqrt(2.0)
    v_idle = (g.standard_normal(half) + 1j * g.standard_normal(half)) / np.sqrt(2.0)
    return h, v_act, v_idle


def _mse_joint(tau2, cfg, h, v_act, v_idle):
    p = DenoiserParams.from_config(tau2, cfg)
    tau = np.sqrt(tau2)
    w = cfg.demand_prob * cfg.lam
    m_act = np.mean(np.abs(mmse_denoiser(h + tau * v_act, p) - h) ** 2)
    m_idle = np.mean(np.abs(mmse_denoiser(tau * v_idle, p)) ** 2)
    return w * m_act + (1 - w) * m_idle


def _mse_theorem(tau2, cfg, h, v_act, v_idle):
    """Expectation of the posterior-variance integrand over the x~ mixture."""
    p = DenoiserParams.from_config(tau2, cfg)
    tau = np.sqrt(tau2)
    beta, lam, eps = cfg.large_scale, cfg.lam, cfg.demand_prob
    w = eps * lam

    def integrand(u):
        r2 = np.abs(u) ** 2
        a, b = p.marcum_args(np.sqrt(r2))
        q1, q2, q3 = (marcum_q(m, a, b) for m in (1, 2, 3))
        # phi = eps lam P_xbar / P_x~, written as 1 / (1 + ratio of densities)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            log_odds = (
                np.log((1 - w) / w) if w < 1 else -np.inf
            ) + np.log(lam * (beta + tau2) / tau2) - np.log(q1) - r2 / tau2 + r2 / (beta + tau2)
            phi = 1.0 / (1.0 + np.exp(log_odds))
            inv_a1 = np.where(q1 > 0, q2 / q1, 0.0)
            inv_a3 = np.where(q1 > 0, q3 / q1, 0.0)
            val = phi * inv_a1 * p.sigma2 + (phi * inv_a3 - (phi * inv_a1) ** 2) * p.mu ** 2 * r2
        return np.nan_to_num(val)

    return w * np.mean(integrand(h + tau * v_act)) + (1 - w) * np.mean(integrand(tau * v_idle))


def state_evolution(cfg: JuiceConfig, n_samples: int = 200_000, stream: RngStream | None = None,
                    form: str = "joint", max_iters: int = 200, rtol: float = 1e-8):
    """tau_t^2 trajectory, iterated to a fixed point.

    ``form='joint'`` evaluates the per-entry MSE E|eta(x~) - x|^2 by sampling
    (x, x~) jointly; ``form='theorem'`` averages the posterior-variance
    integrand over x~ alone.  Both use one fixed stratified sample set, so the
    map is deterministic.  Initialization: tau_0^2 = sigma_w^2 + E|x|^2 / ratio
    with E|x|^2 = eps lam (varsigma^2 + beta).
    """
    stream = stream if stream is not None else RngStream(0x5E, 0)
    h, v_act, v_idle = _se_samples(cfg, n_samples, stream)
    mse = {"joint": _mse_joint, "theorem": _mse_theorem}[form]
    lam = cfg.lam
    tau2 = cfg.noise_var + cfg.demand_prob * lam * (cfg.control_threshold ** 2 + cfg.large_scale) / cfg.ratio
    traj = [tau2]
    if cfg.demand_prob == 0:
        traj.append(cfg.noise_var)
        return np.array(traj)
    for _ in range(max_iters):
        new = cfg.noise_var + mse(tau2, cfg, h, v_act, v_idle) / cfg.ratio
        traj.append(new)
        done = abs(new - tau2) < rtol * new
        tau2 = new
        if done:
            break
    return np.array(traj)


def detection_threshold(pf, tau):
    if not 0 < pf < 1:
        raise ValueError("detection_threshold: P_f must lie in (0, 1)")
    return float(tau * np.sqrt(-np.log(pf)))


def error_probabilities(l, tau, varsigma, beta, lam=None):
    """(P_f, P_m) for threshold l at the converged state variable tau."""
    if not tau > 0:
        raise ValueError("error_probabilities: tau must be positive")
    lam = avg_transmission_probability(varsigma, beta) if lam is None else lam
    tau2 = tau * tau
    mu = beta / (beta + tau2)
    s2 = beta * tau2 / (beta + tau2)
    pf = float(np.exp(-(l * l) / tau2))
    t1 = np.exp(-(varsigma ** 2) / (mu * beta + s2)) * marcum_q(
        1,
        l * np.sqrt(2 * (mu * mu / s2 + mu / beta)),
        np.sqrt(2 * beta * mu) * varsigma / (np.sqrt(s2) * np.sqrt(beta * mu + s2)),
    )
    s = np.sqrt(s2 / 2)
    t2 = np.exp(-(l * l) / (beta + tau2)) * marcum_q(1, mu * l / s, varsigma / s)
    pm = float(np.clip((t1 - t2) / lam, 0.0, 1.0))
    return pf, pm


@dataclass(frozen=True)
class DelayDistribution:
    """Geometric packet delay with per-frame success probability p = lam (1 - P_m)."""

    p: float

    def pmf(self, d):
        d = np.asarray(d)
        return np.where(d >= 1, self.p * (1 - self.p) ** (d - 1.0), 0.0)

    def cdf(self, d):
        d = np.asarray(d)
        return np.where(d >= 1, 1 - (1 - self.p) ** np.floor(d), 0.0)

    @property
    def mean(self) -> float:
        return np.inf if self.p == 0 else 1.0 / self.p

    @property
    def infinite_mean(self) -> bool:
        return self.p == 0


def delay_distribution(lam, pm) -> DelayDistribution:
    p = lam * (1 - pm)
    if not 0 <= p <= 1:
        raise ValueError("delay_distribution: lam (1 - P_m) must lie in [0, 1]")
    return DelayDistribution(float(p))


def network_throughput(N, eps, lam, pm):
    """Average number of users served per frame, N eps lam (1 - P_m)."""
    return float(N * eps * lam * (1 - pm))


def threshold_grid(beta, n=21, lo=0.1, hi=10.0):
    return np.sqrt(beta) * np.logspace(np.log10(lo), np.log10(hi), n)


def optimize_threshold(cfg: JuiceConfig, pf, grid=None, n_samples=50_000, stream=None):
    """Grid search for the throughput-maximizing control threshold.

    Returns (varsigma*, rows) with rows of (varsigma, lam, tau_inf^2, P_m, T).
    Ties go to the smaller threshold.
    """
    grid = threshold_grid(cfg.large_scale) if grid is None else np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("optimize_threshold: empty grid")
    rows = []
    for s in grid:
        c = cfg.replace(control_threshold=float(s))
        lam = c.lam
        if c.demand_prob == 0 or lam == 0:
            rows.append((float(s), lam, c.noise_var, 1.0, 0.0))
            continue
        tau2 = state_evolution(c, n_samples, stream)[-1]
        tau = np.sqrt(tau2)
        _, pm = error_probabilities(detection_threshold(pf, tau), tau, s, c.large_scale, lam)
        rows.append((float(s), lam, float(tau2), pm, network_throughput(c.n_users, c.demand_prob, lam, pm)))
    best = max(range(len(rows)), key=lambda i: (rows[i][4], -i))
    return rows[best][0], rows


@dataclass
class JuiceMetrics:
    trials: int
    pm_hat: float
    pm_ci: float
    pf_hat: float
    pf_ci: float
    nmse: float
    nmse_ci: float
    lam_hat: float
    tau2_mean: float
    throughput_hat: float
    mean_delay: float
    delays: np.ndarray
    counts: dict


def _band(k, n):
    p = k / n if n else 0.0
    return p, 1.96 * np.sqrt(max(p * (1 - p), 0.0) / n) if n else 0.0


def simulate_juice(cfg: JuiceConfig, pf, trials, stream: RngStream, denoiser="proposed",
                   threshold="empirical") -> JuiceMetrics:
    """Monte Carlo over independent frames.

    Each trial draws demands, channels, pilots and noise from its own child
    stream, runs AMP, and detects with l = tau sqrt(-ln P_f).  With
    ``threshold='empirical'`` tau is the per-frame estimate ||z|| / sqrt(M);
    a float is used as a fixed tau_inf instead.  Delay samples are the run
    lengths of the per-user success sequence over consecutive frames in which
    the user has a packet; ``mean_delay`` is the censoring-aware estimate
    (frames with a packet) / (successes), which keeps the unfinished runs at
    the end of the simulation.
    """
    if trials < 1:
        raise ValueError("simulate_juice: trials must be >= 1")
    N = cfg.n_users
    miss = n_tx = fa = n_idle = 0
    dem_total = tx_total = 0
    nmse = []
    tau2s = []
    served = []
    pending = np.zeros(N, dtype=np.int64)
    delays = []
    for k in range(trials):
        y, S, x, demand, transmit = generate_scenario(cfg, stream.child(k))
        res = amp_recover(y, S, cfg, denoiser)
        tau = res.tau if threshold == "empirical" else float(threshold)
        l = detection_threshold(pf, tau) if tau > 0 else 0.0
        det = np.abs(res.x_tilde) > l
        miss += int(np.sum(transmit & ~det))
        n_tx += int(np.sum(transmit))
        fa += int(np.sum(~transmit & det))
        n_idle += int(np.sum(~transmit))
        dem_total += int(np.sum(demand))
        tx_total += int(np.sum(transmit))
        xn = float(np.vdot(x, x).real)
        if xn > 0:
            nmse.append(float(np.vdot(res.x_hat - x, res.x_hat - x).real) / xn)
        tau2s.append(res.tau ** 2)
        ok = transmit & det
        served.append(int(np.sum(ok)))
        pending[demand] += 1
        delays.extend(pending[ok].tolist())
        pending[ok] = 0
    pm, pm_ci = _band(miss, n_tx)
    pfh, pf_ci = _band(fa, n_idle)
    nm = np.asarray(nmse)
    return JuiceMetrics(
        trials=trials,
        pm_hat=pm,
        pm_ci=pm_ci,
        pf_hat=pfh,
        pf_ci=pf_ci,
        nmse=float(nm.mean()) if nm.size else float("nan"),
        nmse_ci=float(1.96 * nm.std(ddof=1) / np.sqrt(nm.size)) if nm.size > 1 else 0.0,
        lam_hat=tx_total / dem_total if dem_total else float("nan"),
        tau2_mean=float(np.mean(tau2s)),
        throughput_hat=float(np.mean(served)),
        mean_delay=dem_total / sum(served) if sum(served) else float("inf"),
        delays=np.asarray(delays, dtype=np.int64),
        counts=dict(miss=miss, transmit=n_tx, false_alarm=fa, idle=n_idle, demand=dem_total),
    )
