import csv
import dataclasses
import io
import math

import numpy as np
import pytest

from randcf import deviation as D
from randcf.errors import CertificateError, ConfigurationError, DomainError, InsufficientDataError, PrecisionError
from randcf.levy import levy_mc_direct, reference_levy
from randcf.processes import BUILTIN_SPECS, Explicit

GOLDEN = math.log((1 + math.sqrt(5)) / 2)
IID_NAMES = ["constant1", "uniform3", "geometric", "zeta3", "gauss_kuzmin_iid"]


def synthetic(ps, ns=None, trials=10**6, delta=0.1, ref=1.0):
    ns = ns or list(range(50, 50 * (len(ps) + 1), 50))
    grid = [D.DeviationPoint(n, trials, round(p * trials), p, p, p) for n, p in zip(ns, ps)]
    return D.DeviationCurve(delta, ref, grid)


# --------------------------------------------------------------------------
# moments and exponents


def test_mgf_log_constant():
    est = D.mgf_log(BUILTIN_SPECS["constant1"], 0.5, 100, 40, 1)
    assert est.log_moment == pytest.approx(0.5 * math.log((math.sqrt(5) - 1) / 2), abs=1e-12)
    assert est.log_moment == pytest.approx(-0.2406, abs=1e-4)
    assert est.stderr < 1e-12


@pytest.mark.parametrize("t", [0.0, 1.0, -1.0, 1.5])
def test_mgf_log_domain(t):
    with pytest.raises(DomainError):
        D.mgf_log(BUILTIN_SPECS["constant1"], t, 100, 40, 1)


@pytest.mark.parametrize("name", ["uniform3", "gauss_kuzmin_iid", "markov2"])
def test_mgf_log_continuity_at_zero(name):
    spec = BUILTIN_SPECS[name]
    est = D.mgf_log(spec, 0.001, 50_000, 40, 2)
    direct = levy_mc_direct(spec, 50_000, 40, 3)
    assert abs(est.log_moment / 0.001 + direct.point) < 0.05


def test_select_exponent_constant():
    assert D.select_exponent(BUILTIN_SPECS["constant1"], 0.8, "upper", 1, trials=1000) == 0.5
    assert D.select_exponent(BUILTIN_SPECS["constant1"], 0.8, "lower", 1, trials=1000) == 0.5


def test_select_exponent_monotone_in_delta():
    spec = BUILTIN_SPECS["gauss_kuzmin_iid"]
    for side in ("upper", "lower"):
        ts = [D.select_exponent(spec, d, side, 4, trials=20_000) for d in (0.1, 0.2, 0.4)]
        assert 0 < ts[0] <= ts[1] <= ts[2] < 1


def test_select_exponent_fails_after_30_halvings():
    # the gap at t = 2^-30 is about 2^-31 Var(ln X), far above delta/8 here
    with pytest.raises(PrecisionError):
        D.select_exponent(BUILTIN_SPECS["gauss_kuzmin_iid"], 1e-12, "upper", 1, trials=2000)


def test_select_exponent_bad_side():
    with pytest.raises(DomainError):
        D.select_exponent(BUILTIN_SPECS["constant1"], 0.5, "middle", 1, trials=100)


# --------------------------------------------------------------------------
# certificate


@pytest.mark.parametrize("delta,N0", [(0.1, 14), (0.15, 10), (0.8, 2)])
def test_certificate_arithmetic(delta, N0):
    cert = D.chernoff_certificate(BUILTIN_SPECS["uniform3"], delta, seed=3, trials=20_000)
    assert cert.N0 == N0 == math.ceil(2 * math.log(2) / delta)
    assert cert.epsilon1 == delta * cert.t0 / 8 and cert.epsilon2 == delta * cert.s0 / 8
    assert cert.lambda_ == cert.t0 / cert.N1 and cert.tau == cert.s0 / cert.N2
    assert cert.alpha1 == cert.lambda_ * delta / 8 and cert.alpha2 == cert.tau * delta / 8
    assert cert.alpha == min(cert.alpha1, cert.alpha2) > 0
    assert cert.B == cert.B1 + cert.B2 > 0 and cert.B1 >= 1
    assert cert.N == max(cert.N0, cert.N1, cert.N2)
    mx = cert.mean_log_X
    assert cert.B1 == max(1.0, math.exp(-cert.t0 * (mx + 3 * delta / 8)))
    assert cert.B2 == math.exp(-cert.s0 * (mx - 3 * delta / 8))
    assert cert.reverification["upper_ok"] and cert.reverification["lower_ok"]
    assert not cert.heuristic


def test_certificate_block_lengths_minimal():
    cert = D.chernoff_certificate(BUILTIN_SPECS["gauss_kuzmin_iid"], 0.2, seed=5, trials=20_000)
    md = cert.metadata
    m_up = md["moment_t0"] - 3 * md["moment_t0_stderr"]
    m_lo = md["moment_s0"] - 3 * md["moment_s0_stderr"]

    def ok1(N):
        return 2.0 ** (-(N - 1) * cert.t0) <= cert.epsilon1 / 2 * m_up

    def ok2(N):
        return 2.0 ** (-(N - 2) * cert.s0) <= cert.epsilon2 / 2 * m_lo

    assert ok1(cert.N1) and not ok1(cert.N1 - 1)
    assert ok2(cert.N2) and not ok2(cert.N2 - 1)


def test_certificate_constant_one():
    spec = BUILTIN_SPECS["constant1"]
    cert = D.chernoff_certificate(spec, 0.8, seed=1, trials=1000)
    assert cert.t0 == 0.5 and cert.alpha > 0
    assert cert.mean_log_X == pytest.approx(-GOLDEN, abs=1e-15)
    curve = D.empirical_deviation(spec, 0.8, [cert.N, 2 * cert.N], 1000, 1, GOLDEN)
    assert all(p.p_hat == 0 for p in curve.grid)
    assert D.verify_bound(curve, cert).passed


def test_certificate_requires_profile_for_markov():
    with pytest.raises(ConfigurationError):
        D.chernoff_certificate(BUILTIN_SPECS["markov2"], 0.2, seed=1, trials=1000)
    with pytest.raises(ConfigurationError):
        D.chernoff_certificate(Explicit((1, 2, 3)), 0.2, seed=1, trials=1000)


def test_certificate_markov_with_profile():
    profile = {1: 0.5, 10: 1e-3, 40: 1e-6, 200: 1e-9}
    cert = D.chernoff_certificate(BUILTIN_SPECS["markov2"], 0.2, psi_profile=profile, seed=2, trials=20_000)
    assert cert.heuristic
    eps = min(cert.epsilon1, cert.epsilon2)
    # psi condition on top of the truncation condition
    assert D._psi_at(profile, cert.N1) <= cert.epsilon1
    assert D._psi_at(profile, cert.N2) <= cert.epsilon2
    assert eps > 0 and cert.metadata["psi_profile"]


def test_certificate_profile_never_small():
    with pytest.raises(ConfigurationError):
        D.chernoff_certificate(BUILTIN_SPECS["markov2"], 0.2, psi_profile={1: 0.5, 5: 0.4}, seed=2, trials=5000)


def test_certificate_reverification_failure(monkeypatch):
    # the fresh sample is bimodal in ln X, so ln E(X^t)/t sits far from E ln X
    real = D._x_sample
    reverify_seed = D.seeding.derive_seed(1, D._SALT_REVERIFY)

    def fake(spec, trials, m, seed, threads=1):
        log_x, a1 = real(spec, trials, m, seed, threads)
        if seed == reverify_seed:
            log_x = np.where(np.arange(trials) % 2 == 0, -50.0, -0.01)
        return log_x, a1

    monkeypatch.setattr(D, "_x_sample", fake)
    with pytest.raises(CertificateError):
        D.chernoff_certificate(BUILTIN_SPECS["uniform3"], 0.2, seed=1, trials=5000)


def test_certificate_json():
    cert = D.chernoff_certificate(BUILTIN_SPECS["uniform3"], 0.3, seed=1, trials=5000)
    doc = cert.to_json()
    for key in ("delta", "t0", "s0", "epsilon1", "epsilon2", "N0", "N1", "N2", "lambda", "tau", "alpha1",
                "alpha2", "B1", "B2", "alpha", "B", "N", "mean_log_X", "metadata"):
        assert key in doc
    assert doc["metadata"]["trials"]["t0"] == 5000
    assert cert.bound(cert.N) == cert.B * math.exp(-cert.alpha * cert.N)


# --------------------------------------------------------------------------
# empirical curves


def test_deviation_constant_one_zero():
    curve = D.empirical_deviation(BUILTIN_SPECS["constant1"], 0.1, [50, 100, 200], 1000, 1, GOLDEN)
    assert [p.p_hat for p in curve.grid] == [0.0, 0.0, 0.0]
    # oracle: the trajectory is deterministic and (1/n) ln Fib(n+1) is within 0.1 of ln phi
    a, b = 1, 1
    for n in range(2, 51):
        a, b = b, a + b
    assert abs(math.log(b) / 50 - GOLDEN) < 0.1


def test_deviation_delta_zero_all_hits():
    curve = D.empirical_deviation(BUILTIN_SPECS["uniform3"], 0.0, [20, 40], 1000, 1, 1.0)
    assert all(p.p_hat == 1.0 for p in curve.grid)


def test_deviation_curve_invariants_and_csv():
    spec = BUILTIN_SPECS["gauss_kuzmin_iid"]
    curve = D.empirical_deviation(spec, 0.15, list(range(50, 401, 50)), 10_000, 7, 1.19)
    for p in curve.grid:
        assert 0 <= p.p_hat <= 1 and p.hits <= p.trials
        assert p.ci_lo <= p.p_hat <= p.ci_hi
        assert p.hits == p.hits_above + p.hits_below
    p = [q.p_hat for q in curve.grid]
    assert all(x > y for x, y in zip(p, p[1:]))
    rows = list(csv.reader(io.StringIO(curve.to_csv())))
    assert rows[0] == ["n", "trials", "hits", "p_hat", "ci_lo", "ci_hi"]
    assert len(rows) == 9


def test_deviation_thread_invariant():
    spec = BUILTIN_SPECS["zeta3"]
    a = D.empirical_deviation(spec, 0.2, [30, 60], 5000, 9, 0.9, threads=1)
    b = D.empirical_deviation(spec, 0.2, [30, 60], 5000, 9, 0.9, threads=4)
    assert a.to_csv() == b.to_csv()


def test_deviation_min_trials():
    with pytest.raises(DomainError):
        D.empirical_deviation(BUILTIN_SPECS["uniform3"], 0.1, [50], 999, 1, 1.0)


def test_clopper_pearson_against_closed_form():
    # for 0 hits the upper limit is 1 - (a/2)^(1/n)
    lo, hi = D.clopper_pearson(0, 100)
    assert lo == 0 and hi == pytest.approx(1 - 0.025 ** (1 / 100), rel=1e-10)
    lo, hi = D.clopper_pearson(100, 100)
    assert hi == 1 and lo == pytest.approx(0.025 ** (1 / 100), rel=1e-10)
    assert D.lower_confidence_limit(5, 5, 0.99) == pytest.approx(0.01 ** (1 / 5), rel=1e-10)


# --------------------------------------------------------------------------
# rate fit


def test_fit_rate_exact():
    ns = list(range(50, 401, 50))
    fit = D.fit_rate(synthetic([0.5 * math.exp(-0.02 * n) for n in ns], ns))
    assert fit.alpha_hat == pytest.approx(0.02, abs=1e-9)
    assert fit.B_hat == pytest.approx(0.5, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12) and fit.n_used == 8


@pytest.mark.parametrize("alpha,B", [(0.001, 2.0), (0.05, 0.1), (0.3, 1e-3)])
def test_fit_rate_recovers(alpha, B):
    ns = [10, 20, 35, 60]
    fit = D.fit_rate(synthetic([B * math.exp(-alpha * n) for n in ns], ns))
    assert abs(fit.alpha_hat - alpha) < 1e-9 and abs(fit.B_hat - B) < 1e-9 * max(1, B)


def test_fit_rate_skips_zero():
    ns = [50, 100, 150, 200, 250]
    ps = [0.5 * math.exp(-0.02 * n) for n in ns]
    ps[2] = 0.0
    fit = D.fit_rate(synthetic(ps, ns))
    assert fit.n_used == 4 and fit.alpha_hat == pytest.approx(0.02, abs=1e-9)


def test_fit_rate_insufficient():
    with pytest.raises(InsufficientDataError):
        D.fit_rate(synthetic([0.1, 0.05, 0.0, 0.0]))


# --------------------------------------------------------------------------
# bound verification


@pytest.fixture(scope="module")
def uniform_cert():
    return D.chernoff_certificate(BUILTIN_SPECS["uniform3"], 0.1, seed=4, trials=20_000, reference_L=1.0)


def test_verify_bound_falsified(uniform_cert):
    cert = dataclasses.replace(uniform_cert, alpha=10.0)
    curve = synthetic([0.2, 0.1], [cert.N, cert.N + 50], trials=10_000, delta=0.1, ref=1.0)
    check = D.verify_bound(curve, cert)
    assert not check.passed and check.n_checked == 2


def test_verify_bound_ignores_small_n(uniform_cert):
    curve = synthetic([0.9], [uniform_cert.N - 1], delta=0.1, ref=1.0)
    check = D.verify_bound(curve, dataclasses.replace(uniform_cert, alpha=10.0))
    assert check.passed and check.n_checked == 0


def test_verify_bound_mismatch(uniform_cert):
    with pytest.raises(ConfigurationError):
        D.verify_bound(synthetic([0.1], delta=0.2, ref=1.0), uniform_cert)
    with pytest.raises(ConfigurationError):
        D.verify_bound(synthetic([0.1], delta=0.1, ref=1.1), uniform_cert)


@pytest.mark.parametrize("name", IID_NAMES)
@pytest.mark.parametrize("delta", [0.1, 0.2, 0.3, 0.5])
def test_certificate_soundness(name, delta):
    spec = BUILTIN_SPECS[name]
    ref, _ = reference_levy(spec, 50_000, 31)
    cert = D.chernoff_certificate(spec, delta, seed=32, trials=20_000, reference_L=ref)
    curve = D.empirical_deviation(spec, delta, [cert.N, 2 * cert.N], 2000, 33, ref)
    check = D.verify_bound(curve, cert)
    assert check.n_checked == 2 and check.passed


# --------------------------------------------------------------------------
# containment of the deviation event in the tail-sum event


@pytest.mark.parametrize("name", ["gauss_kuzmin_iid", "uniform3", "markov2", "gauss_stationary"])
def test_lemma1_containment(name):
    spec = BUILTIN_SPECS[name]
    ref, _ = reference_levy(spec, 20_000, 1, m=40)
    out = D.lemma1_containment(spec, 0.1, 20, 2000, 5, ref)
    assert out["flagged"] > 0 and out["violations"] == 0


def test_lemma1_requires_large_n():
    with pytest.raises(DomainError):
        D.lemma1_containment(BUILTIN_SPECS["uniform3"], 0.2, 5, 1000, 1, 1.0)
