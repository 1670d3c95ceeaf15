"""Empirical stationarity and psi-mixing diagnostics.

All statistics are computed over finite cylinder families: words of ``d``
consecutive digits with every symbol at most ``k_max``.  The supremum defining
psi(n) ranges over far larger sigma-algebras, so the values here are
diagnostic lower bounds and never certified psi values.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import seeding
from .errors import ConfigurationError, DomainError, InsufficientDataError
from .levy import sample_x1
from .processes import GaussStationary, gauss_kuzmin_pmf, sample_paths

# variance guard: cylinders (and expected joint counts) below this are dropped
MIN_COUNT = 10
MAX_CELLS = 1 << 22
ENVELOPE_LEVEL = 0.999


def _check(spec, depth, k_max, trials):
    if not spec.is_random:
        raise ConfigurationError("explicit digits have no ensemble to tabulate")
    if depth < 1 or k_max < 1:
        raise DomainError("depth and k_max must be >= 1")
    if trials < 10_000:
        raise DomainError("need at least 10^4 trials")
    if k_max ** (2 * depth) > MAX_CELLS:
        raise ConfigurationError(f"k_max^(2 depth) = {k_max ** (2 * depth)} cells is too many")


def _encode(words, k_max):
    """Base-k_max code of each row of ``words``; -1 where a symbol exceeds k_max."""
    ok = np.all(words <= k_max, axis=1)
    code = np.zeros(len(words), dtype=np.int64)
    for j in range(words.shape[1]):
        code = code * k_max + (words[:, j] - 1)
    return np.where(ok, code, -1)


def _counts(code, size):
    return np.bincount(code[code >= 0], minlength=size)


@dataclass
class MixingEstimate:
    depth: int
    k_max: int
    lags: list
    psi_hat: dict
    noise_envelope: dict
    pairs: dict
    trials: int
    seed: int = None

    def to_json(self):
        doc = asdict(self)
        for key in ("psi_hat", "noise_envelope", "pairs"):
            doc[key] = {str(k): v for k, v in doc[key].items()}
        return doc


def _psi_from_digits(digits, lag, depth, k_max):
    size = k_max**depth
    T = len(digits)
    a = _encode(digits[:, :depth], k_max)
    start = depth + lag
    b = _encode(digits[:, start : start + depth], k_max)
    na = _counts(a, size)
    nb = _counts(b, size)
    both = (a >= 0) & (b >= 0)
    nab = np.bincount(a[both] * size + b[both], minlength=size * size).reshape(size, size)
    pa = na / T
    pb = nb / T
    expected = T * np.outer(pa, pb)
    keep = (na[:, None] >= MIN_COUNT) & (nb[None, :] >= MIN_COUNT) & (expected >= MIN_COUNT)
    n_pairs = int(np.count_nonzero(keep))
    if n_pairs == 0:
        raise InsufficientDataError(f"no well-sampled cylinder pair at lag {lag}")
    ratio = np.where(keep, nab / np.where(keep, expected, 1.0), 1.0)
    psi = float(np.max(np.abs(ratio[keep] - 1.0)))
    # under independence sd(ratio) ~ sqrt((1 - pA)(1 - pB) / E); Bonferroni over the pairs
    z = stats.norm.ppf(1.0 - (1.0 - ENVELOPE_LEVEL) / (2.0 * n_pairs))
    sd = np.sqrt(np.outer(1.0 - pa, 1.0 - pb) / np.where(keep, expected, 1.0))
    envelope = float(z * np.max(sd[keep]))
    return psi, envelope, n_pairs


def mixing_profile(spec, lags, depth, k_max, trials, seed, threads=1):
    """``psi_hat`` and its 99.9% independence envelope at each lag, from one ensemble.

    The A cylinder covers digits ``1..d`` and the B cylinder starts at digit
    ``d + n + 1``.
    """
    _check(spec, depth, k_max, trials)
    lags = sorted({int(n) for n in lags})
    if not lags or lags[0] < 0:
        raise DomainError("lags must be nonnegative")
    digits = sample_paths(spec, 2 * depth + lags[-1], seeding.trial_seeds(seed, trials), threads)
    psi, env, pairs = {}, {}, {}
    for n in lags:
        psi[n], env[n], pairs[n] = _psi_from_digits(digits, n, depth, k_max)
    return MixingEstimate(depth, k_max, lags, psi, env, pairs, trials, int(seed))


def psi_hat(spec, n, depth, k_max, trials, seed, threads=1):
    """Largest ``|P(A and B) / (P(A) P(B)) - 1|`` over well-sampled cylinder pairs at lag n."""
    return mixing_profile(spec, [n], depth, k_max, trials, seed, threads).psi_hat[int(n)]


@dataclass
class StationarityReport:
    depth: int
    k_max: int
    tv: dict
    noise_bound: dict
    trials: int

    def to_json(self):
        doc = asdict(self)
        doc["tv"] = {str(k): v for k, v in self.tv.items()}
        doc["noise_bound"] = {str(k): v for k, v in self.noise_bound.items()}
        return doc


def stationarity_check(spec, lags, depth, k_max, trials, seed, threads=1):
    """Total-variation distance between depth-d cylinder frequencies at offsets 0 and lag.

    Only words with every symbol ``<= k_max`` are tabulated; the distance is
    half the summed absolute difference of their frequencies.  The noise
    bound is three times the expected TV between two samples of the same
    distribution.
    """
    _check(spec, depth, k_max, trials)
    lags = sorted({int(n) for n in lags})
    if not lags or lags[0] < 1:
        raise DomainError("lags must be >= 1")
    digits = sample_paths(spec, depth + lags[-1], seeding.trial_seeds(seed, trials), threads)
    size = k_max**depth

    def freq(offset):
        return _counts(_encode(digits[:, offset : offset + depth], k_max), size) / trials

    base = freq(0)
    tv, noise = {}, {}
    for n in lags:
        other = freq(n)
        tv[n] = 0.5 * float(np.sum(np.abs(base - other)))
        p = (base + other) / 2.0
        noise[n] = 3.0 * 0.5 * float(np.sum(np.sqrt(2.0 * p * (1.0 - p) / trials))) * math.sqrt(2.0 / math.pi)
    return StationarityReport(depth, k_max, tv, noise, trials)


@dataclass
class MarginalReport:
    trials: int
    max_abs_diff: float
    tv: float
    chi2: float
    chi2_dof: int
    chi2_pvalue: float
    pmf_rows: list
    cdf_rows: list

    def to_json(self):
        return asdict(self)


def gauss_marginal_check(trials, seed, k_cut=20, m=40, threads=1):
    """Compare the first digit and ``X_1`` of the Gauss process with their closed forms.

    Digit frequencies for ``k <= k_cut`` (plus a pooled tail cell) go into a
    chi-squared statistic; the empirical CDF of ``X_1`` is compared with
    ``log2(1 + x)`` at the points where it equals 0.1, ..., 0.9.
    """
    if trials < 10_000:
        raise DomainError("need at least 10^4 trials")
    lo, hi, a1 = sample_x1(GaussStationary(), trials, m, seed, threads)
    a1 = a1.astype(np.int64)
    ks = np.arange(1, k_cut + 1)
    pmf = gauss_kuzmin_pmf(ks)
    counts = np.bincount(np.minimum(a1, k_cut + 1), minlength=k_cut + 2)[1:]
    p_hat = counts / trials
    probs = np.append(pmf, 1.0 - pmf.sum())
    diff = np.abs(p_hat - probs)
    expected = trials * probs
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    dof = k_cut
    x = (lo + hi) / 2.0
    cdf_rows = []
    for q in np.arange(1, 10) / 10.0:
        point = 2.0**q - 1.0
        cdf_rows.append({"x": float(point), "F": float(q), "F_hat": float(np.mean(x <= point))})
    pmf_rows = [{"k": int(k), "pmf": float(p), "p_hat": float(e)} for k, p, e in zip(ks, pmf, p_hat)]
    return MarginalReport(
        trials=trials,
        max_abs_diff=float(np.max(diff[:-1])),
        tv=0.5 * float(np.sum(diff)),
        chi2=chi2,
        chi2_dof=dof,
        chi2_pvalue=float(stats.chi2.sf(chi2, dof)),
        pmf_rows=pmf_rows,
        cdf_rows=cdf_rows,
    )
