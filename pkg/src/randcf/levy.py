"""Lévy constant estimators.

Two independent Monte Carlo routes: averaging ``(1/n) ln Q_n`` over sampled
trajectories, and averaging ``-ln X_1`` over sampled random continued
fractions.  For ergodic processes with ``E(ln A_1) < inf`` both converge to
the same constant; closed forms exist for the Gauss measure and for
constant digits.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import seeding
from .convergents import log_qn_batch, tail_log_sums_batch
from .errors import DomainError
from .processes import IID, Constant, GaussStationary, sample_paths

GAUSS_LEVY = math.pi**2 / (12.0 * math.log(2.0))

# salts keep the trajectory and direct seed streams disjoint
_SALT_DIRECT = 0xD1EC7


@dataclass(frozen=True)
class LevyEstimate:
    point: float
    stderr: float
    n: int
    trials: int
    method: str
    seed: int = None
    analytic: float = None
    bias_bound: float = 0.0

    def to_json(self):
        return asdict(self)


def levy_analytic(spec):
    """Closed-form Lévy constant when one is known, else ``None``.

    Gauss measure: ``pi^2 / (12 ln 2)``.  Constant digit a: X solves
    ``X = 1/(a + X)``, giving ``ln((a + sqrt(a^2 + 4)) / 2)``.
    """
    if isinstance(spec, GaussStationary):
        return GAUSS_LEVY
    if isinstance(spec, IID) and isinstance(spec.dist, Constant):
        a = spec.dist.a
        return math.log((a + math.sqrt(a * a + 4.0)) / 2.0)
    return None


def _mean_se(values):
    values = np.asarray(values, dtype=np.float64)
    point = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return point, se


def trajectory_samples(spec, n, trials, seed, threads=1):
    """``(1/n) ln Q_n`` for each trial."""
    seeds = seeding.trial_seeds(seed, trials)
    digits = sample_paths(spec, n, seeds, threads)
    return log_qn_batch(digits)[:, -1] / n


def levy_mc_trajectory(spec, n, trials, seed, threads=1):
    if n < 10:
        raise DomainError("trajectory length must be >= 10")
    if trials < 2:
        raise DomainError("need at least 2 trials")
    point, se = _mean_se(trajectory_samples(spec, n, trials, seed, threads))
    return LevyEstimate(point, se, n, trials, "trajectory", int(seed), levy_analytic(spec))


def sample_x1(spec, trials, m, seed, threads=1):
    """Brackets of ``X_1`` from m sampled digits, plus the first digit.

    Returns ``(lo, hi, a1)``; the bracket width is below ``2^-(m-1)``.
    """
    seeds = seeding.trial_seeds(seeding.derive_seed(seed, _SALT_DIRECT), trials)
    digits = sample_paths(spec, m, seeds, threads)
    _, _, lo, hi = tail_log_sums_batch(digits, 1)
    return lo, hi, digits[:, 0].astype(np.float64)


def levy_mc_direct(spec, trials, m, seed, threads=1):
    """Mean of ``-ln X_1`` with X_1 at the midpoint of its depth-m bracket.

    The midpoint is within half the bracket width of X_1, and
    ``|d(-ln x)/dx| = 1/x <= A_1 + 1`` on the bracket, so the bias is at most
    ``2^-(m-1) (A_1 + 1)`` per sample; its mean is added to the stderr.
    """
    if trials < 2:
        raise DomainError("need at least 2 trials")
    if m < 40:
        raise DomainError("truncation depth must be >= 40")
    lo, hi, a1 = sample_x1(spec, trials, m, seed, threads)
    point, se = _mean_se(-np.log((lo + hi) / 2.0))
    bias = float(np.mean(a1 + 1.0)) * 2.0 ** -(m - 1)
    return LevyEstimate(point, se + bias, 0, trials, "direct", int(seed), levy_analytic(spec), bias)


def reference_levy(spec, trials, seed, m=64, threads=1):
    """Reference constant: analytic when available, else a direct estimate.

    Returns ``(value, stderr)``.
    """
    exact = levy_analytic(spec)
    if exact is not None:
        return exact, 0.0
    est = levy_mc_direct(spec, trials, m, seed, threads)
    return est.point, est.stderr
