import math

import numpy as np
import pytest

from randcf import levy
from randcf.errors import DomainError
from randcf.processes import BUILTIN_SPECS, IID, Constant

GOLDEN = math.log((1 + math.sqrt(5)) / 2)


def test_analytic_values():
    assert levy.levy_analytic(BUILTIN_SPECS["gauss_stationary"]) == pytest.approx(1.1865691, abs=5e-8)
    assert levy.levy_analytic(BUILTIN_SPECS["gauss_stationary"]) == math.pi**2 / (12 * math.log(2))
    assert levy.levy_analytic(BUILTIN_SPECS["constant1"]) == pytest.approx(0.4812118, abs=5e-8)
    assert levy.levy_analytic(BUILTIN_SPECS["constant2"]) == pytest.approx(math.log(1 + math.sqrt(2)), abs=1e-15)
    assert levy.levy_analytic(BUILTIN_SPECS["gauss_kuzmin_iid"]) is None


def test_trajectory_constant():
    est = levy.levy_mc_trajectory(BUILTIN_SPECS["constant1"], 200, 5, 1)
    assert est.stderr == 0
    assert abs(est.point - GOLDEN) < 0.005
    assert est.method == "trajectory" and est.n == 200 and est.trials == 5


def test_trajectory_reproducible():
    spec = BUILTIN_SPECS["gauss_kuzmin_iid"]
    a = levy.levy_mc_trajectory(spec, 50, 2, 17)
    b = levy.levy_mc_trajectory(spec, 50, 2, 17)
    assert a.to_json() == b.to_json()


def test_trajectory_thread_invariant():
    spec = BUILTIN_SPECS["geometric"]
    a = levy.levy_mc_trajectory(spec, 100, 5000, 3, threads=1)
    b = levy.levy_mc_trajectory(spec, 100, 5000, 3, threads=4)
    assert a == b


def test_trajectory_preconditions():
    with pytest.raises(DomainError):
        levy.levy_mc_trajectory(BUILTIN_SPECS["constant1"], 9, 10, 1)
    with pytest.raises(DomainError):
        levy.levy_mc_trajectory(BUILTIN_SPECS["constant1"], 10, 1, 1)
    with pytest.raises(DomainError):
        levy.levy_mc_direct(BUILTIN_SPECS["constant1"], 10, 39, 1)


def test_direct_constant_exact():
    # bracket width plus float evaluation of -ln(midpoint)
    est = levy.levy_mc_direct(BUILTIN_SPECS["constant1"], 10, 64, 1)
    assert abs(est.point - GOLDEN) <= 2.0**-62 + 4 * math.ulp(GOLDEN)
    est = levy.levy_mc_direct(IID(Constant(3)), 10, 40, 1)
    assert abs(est.point - math.log((3 + math.sqrt(13)) / 2)) <= 2.0**-37


def test_direct_gauss():
    est = levy.levy_mc_direct(BUILTIN_SPECS["gauss_stationary"], 100_000, 40, 5)
    assert abs(est.point - levy.GAUSS_LEVY) < 0.01
    assert est.bias_bound > 0 and est.stderr >= est.bias_bound


def test_direct_vs_trajectory_gk_iid():
    spec = BUILTIN_SPECS["gauss_kuzmin_iid"]
    d = levy.levy_mc_direct(spec, 100_000, 64, 2)
    t = levy.levy_mc_trajectory(spec, 500, 2000, 3)
    assert abs(d.point - t.point) <= 3 * (math.hypot(d.stderr, t.stderr) + math.log(2) / 500)


@pytest.mark.parametrize("name", ["uniform3", "geometric", "zeta3", "gauss_kuzmin_iid", "markov2"])
def test_monotone_concentration(name):
    spec = BUILTIN_SPECS[name]
    sds = [np.std(levy.trajectory_samples(spec, n, 2000, 8), ddof=1) for n in (125, 250, 500)]
    assert sds[0] > sds[1] > sds[2]


@pytest.mark.parametrize("name", sorted(BUILTIN_SPECS))
def test_lower_bound(name):
    spec = BUILTIN_SPECS[name]
    for n in (10, 37, 200):
        samples = levy.trajectory_samples(spec, n, 300, 4)
        assert samples.min() >= (n - 1) / (2 * n) * math.log(2) - 1e-12


def test_reference_levy():
    assert levy.reference_levy(BUILTIN_SPECS["constant2"], 10, 1) == (levy.levy_analytic(BUILTIN_SPECS["constant2"]), 0.0)
    value, se = levy.reference_levy(BUILTIN_SPECS["uniform3"], 5000, 1)
    assert se > 0 and 0.5 < value < 2


def test_estimate_json():
    doc = levy.levy_mc_trajectory(BUILTIN_SPECS["constant1"], 20, 2, 1).to_json()
    assert {"method", "point", "stderr", "n", "trials", "seed", "analytic"} <= set(doc)
