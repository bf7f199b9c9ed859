import math

import numpy as np
import pytest
from scipy import integrate, special

from mmtc.juice import (BETA_DEFAULT, NOISE_VAR_DEFAULT, DenoiserParams, JuiceConfig, amp_recover,
                        avg_transmission_probability, conventional_denoiser, conventional_derivative,
                        delay_distribution, denoiser_derivative, detect_activity, detection_threshold,
                        error_probabilities, generate_scenario, mmse_denoiser, network_throughput,
                        optimize_threshold, simulate_juice, state_evolution)
from mmtc.numerics import RngStream, marcum_q

BETA = 10 ** -11.5
VS = 1.2e-6


def test_defaults_follow_units():
    assert BETA_DEFAULT == pytest.approx(BETA, rel=1e-12)
    # -169 dBm/Hz over 1 MHz, in watts
    assert NOISE_VAR_DEFAULT == pytest.approx(10 ** (-16.9) * 1e-3 * 1e6, rel=1e-12)
    assert JuiceConfig().pilot_len == 800


def test_transmission_probability():
    assert avg_transmission_probability(0.0, BETA) == 1.0
    assert avg_transmission_probability(VS, BETA) == pytest.approx(0.634, abs=0.005)
    assert avg_transmission_probability(1.0, BETA) == 0.0
    vals = [avg_transmission_probability(s, BETA) for s in np.linspace(0, 5e-6, 20)]
    assert np.all(np.diff(vals) < 0)


def test_config_errors_name_the_field():
    with pytest.raises(ValueError, match="demand_prob"):
        JuiceConfig(demand_prob=1.5)
    with pytest.raises(ValueError, match="large_scale"):
        JuiceConfig(large_scale=0.0)


def params(vs=VS, tau2=4e-14):
    return DenoiserParams(tau2, BETA, 0.24, vs)


def test_denoiser_basic_values():
    p = params()
    assert mmse_denoiser(0.0, p) == 0
    u = np.array([1e-7, 3e-7 + 2e-7j, 1e-6j])
    p0 = params(vs=0.0)
    assert np.allclose(mmse_denoiser(u, p0), conventional_denoiser(u, p0.tau2, BETA, 0.24), rtol=1e-9)
    big = 100 * VS / p.mu
    assert abs(mmse_denoiser(big, p) / (p.mu * big) - 1) < 1e-3


def test_denoiser_is_posterior_mean():
    """Compare with a direct numerical posterior mean over the controlled prior."""
    p = params()
    for r in (2e-7, 5e-7, 8e-7, 1e-6, 1.5e-6, 3e-6):
        # radial posterior: x = rho e^{j phi}, observation u = r (real) + CN(0, tau2)
        def w(rho, num):
            # exp(-(rho^2 + r^2)/tau2) I_n(2 rho r / tau2) in scaled form
            z = 2 * rho * r / p.tau2
            lik = special.ive(1 if num else 0, z) * np.exp(-(rho - r) ** 2 / p.tau2)
            return (rho if num else 1.0) * lik * 2 * rho / BETA * np.exp(-rho ** 2 / BETA)
        hi = VS + 40 * math.sqrt(BETA)
        pts = [max(r, 1.0001 * VS)]
        num = p.eps * integrate.quad(lambda x: w(x, True), VS, hi, points=pts, limit=800, epsabs=0)[0]
        den = (1 - p.eps * p.lam) * np.exp(-r ** 2 / p.tau2) + p.eps * integrate.quad(
            lambda x: w(x, False), VS, hi, points=pts, limit=800, epsabs=0)[0]
        assert mmse_denoiser(r, p).real == pytest.approx(num / den, rel=1e-9)


@pytest.mark.parametrize("vs", [VS, 5e-7])
def test_derivative_matches_finite_difference(vs):
    p = params(vs=vs)
    worst = 0.0
    for mag in np.geomspace(0.1 * vs, 10 * vs, 41) / p.mu:
        for phase in (0.0, 0.7):
            u = mag * np.exp(1j * phase)
            h = 1e-5 * mag
            # Wirtinger derivative of a radial map eta(u) = u g(|u|) is real
            fd = (mmse_denoiser(u + h * np.exp(1j * phase), p) - mmse_denoiser(u - h * np.exp(1j * phase), p)) / (2 * h)
            fd_wirt = 0.5 * (fd * np.exp(-1j * phase)).real + 0.5 * (mmse_denoiser(u, p) / u).real
            d = denoiser_derivative(u, p)
            worst = max(worst, abs(d - fd_wirt) / abs(fd_wirt))
    assert worst < 1e-4


def test_derivative_limits():
    p0 = params(vs=0.0)
    u = np.array([5e-8, 2e-7, 6e-7j])
    assert np.allclose(denoiser_derivative(u, p0), conventional_derivative(u, p0.tau2, BETA, 0.24), rtol=1e-8)
    p = params()
    assert denoiser_derivative(1e-3, p) == pytest.approx(p.mu, rel=1e-9)


def test_amp_zero_fixed_point():
    cfg = JuiceConfig(n_users=200)
    _, S, *_ = generate_scenario(cfg, RngStream(0))
    res = amp_recover(np.zeros(cfg.pilot_len), S, cfg)
    assert res.tau == 0.0 and np.all(res.x_hat == 0)


def test_amp_easy_regime():
    cfg = JuiceConfig(n_users=400, ratio=0.8, demand_prob=0.05, noise_var=1e-20, control_threshold=VS)
    m = simulate_juice(cfg, 1e-2, 3, RngStream(11))
    assert m.nmse < 1e-4 and m.pm_hat == 0.0


def test_controlled_state_variable_smaller():
    cfg = JuiceConfig(control_threshold=VS)
    y, S, *_ = generate_scenario(cfg, RngStream(21, 5))
    with_ctrl = amp_recover(y, S, cfg)
    y0, S0, *_ = generate_scenario(cfg.replace(control_threshold=0.0), RngStream(21, 5))
    no_ctrl = amp_recover(y0, S0, cfg.replace(control_threshold=0.0))
    assert with_ctrl.tau < no_ctrl.tau


def test_detect_activity():
    xt = np.array([0.5, 1.5])
    idx, est = detect_activity(xt, xt, 1.0)
    assert idx.tolist() == [1] and est.tolist() == [0.0, 1.5]
    assert detect_activity(xt, xt, 0.0)[0].tolist() == [0, 1]
    assert detect_activity(xt, xt, np.inf)[0].size == 0


def test_state_evolution_edge_cases():
    cfg = JuiceConfig(demand_prob=0.0)
    assert state_evolution(cfg)[-1] == cfg.noise_var


def test_state_evolution_forms_agree():
    for vs in (0.0, VS):
        cfg = JuiceConfig(control_threshold=vs)
        a = state_evolution(cfg, n_samples=100_000)[-1]
        b = state_evolution(cfg, n_samples=100_000, form="theorem")[-1]
        assert a == pytest.approx(b, rel=0.02)


def test_state_evolution_frozen_fixed_points():
    # fixed points of the two sampled forms; frozen from a 400k-sample run
    assert state_evolution(JuiceConfig(control_threshold=VS))[-1] == pytest.approx(1.988e-14, rel=0.01)
    assert state_evolution(JuiceConfig())[-1] == pytest.approx(4.48e-14, rel=0.02)


def test_detection_threshold():
    assert detection_threshold(math.exp(-1), 1.0) == pytest.approx(1.0)
    assert detection_threshold(1 - 1e-15, 1.0) < 1e-7
    assert detection_threshold(1e-3, 2e-7) == pytest.approx(5.257e-7, rel=1e-3)


def pm_quadrature(l, tau, vs, beta):
    """P(|h + tau v| < l | |h| > vs) with a Rician inner law."""
    lam = math.exp(-vs * vs / beta)
    f = lambda rho: (1 - marcum_q(1, math.sqrt(2) * rho / tau, math.sqrt(2) * l / tau)) * 2 * rho / beta * math.exp(-rho * rho / beta)
    return integrate.quad(f, vs, vs + 40 * math.sqrt(beta), limit=400, epsabs=1e-17, epsrel=1e-9)[0] / lam


@pytest.mark.parametrize("vs", [0.0, VS])
@pytest.mark.parametrize("pf", [1e-1, 1e-3])
@pytest.mark.parametrize("tau", [2e-7, 6e-7, 1e-6])
def test_error_probabilities(vs, pf, tau):
    l = detection_threshold(pf, tau)
    got_pf, pm = error_probabilities(l, tau, vs, BETA)
    assert got_pf == pytest.approx(pf, rel=1e-12)
    assert pm == pytest.approx(pm_quadrature(l, tau, vs, BETA), rel=1e-6, abs=1e-15)
    assert error_probabilities(0.0, tau, vs, BETA) == pytest.approx((1.0, 0.0))


def test_delay_distribution():
    d = delay_distribution(1.0, 0.0)
    assert d.pmf(1) == 1.0 and d.mean == 1.0
    d = delay_distribution(0.63, 0.1)
    assert d.mean == pytest.approx(1.7637, abs=1e-4)
    k = np.arange(1, 2000)
    assert abs(d.pmf(k).sum() - 1) < 1e-12
    assert d.cdf(3) == pytest.approx(d.pmf([1, 2, 3]).sum(), rel=1e-12)
    assert delay_distribution(0.5, 1.0).infinite_mean


def test_network_throughput():
    assert network_throughput(100, 0.24, 0.7, 1.0) == 0.0
    assert network_throughput(10000, 0.24, 0.634, 0.0) == pytest.approx(1521.6, abs=1e-9)
    for lam, pm in ((0.634, 0.02), (1.0, 0.3)):
        T = network_throughput(2000, 0.24, lam, pm)
        assert abs(T * delay_distribution(lam, pm).mean - 2000 * 0.24) < 1e-12 * 480


def test_optimize_threshold_trivial():
    cfg = JuiceConfig(demand_prob=0.0)
    grid = [3e-7, 1e-6, 2e-6]
    s, rows = optimize_threshold(cfg, 1e-2, grid)
    assert s == 3e-7 and all(r[4] == 0 for r in rows)
    s, _ = optimize_threshold(JuiceConfig(), 1e-2, [VS], n_samples=20_000)
    assert s == VS


def test_simulation_is_reproducible():
    cfg = JuiceConfig(n_users=300, control_threshold=VS)
    a = simulate_juice(cfg, 1e-2, 3, RngStream(5, 2))
    b = simulate_juice(cfg, 1e-2, 3, RngStream(5, 2))
    assert (a.nmse, a.pm_hat, a.pf_hat) == (b.nmse, b.pm_hat, b.pf_hat)
    assert np.array_equal(a.delays, b.delays)
