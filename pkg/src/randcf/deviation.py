"""Chernoff-type deviation bounds for ``(1/n) ln Q_n``.

:func:`chernoff_certificate` turns the existence argument for
``P(|(1/n) ln Q_n - L| >= delta) <= B exp(-alpha n)`` into numbers: the
exponents ``t0, s0`` are found by scanning ``2^-j`` with Monte Carlo
estimates of ``E(X^t)``, the block lengths ``N1, N2`` follow from the
truncation inequalities, and ``alpha, B, N`` come out of the two Markov
inequality estimates.  :func:`empirical_deviation` measures the same
probability directly, :func:`fit_rate` fits ``B exp(-alpha n)`` to it and
:func:`verify_bound` checks the measured curve against a certificate.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import seeding
from .convergents import log_qn_batch, tail_log_sums_batch
from .errors import CertificateError, ConfigurationError, DomainError, InsufficientDataError, PrecisionError
from .levy import levy_analytic, sample_x1
from .processes import IID, sample_paths

LN2 = math.log(2.0)

_SALT_SELECT = 0x5E1EC7
_SALT_REVERIFY = 0x2EE7E2
_SALT_MGF = 0x3D6F

MAX_HALVINGS = 30


# --------------------------------------------------------------------------
# exponential moments of X_1


@dataclass(frozen=True)
class MomentEstimate:
    """``ln E(X_1^t)`` with its Monte Carlo standard error."""

    t: float
    log_moment: float
    stderr: float
    bracket_error: float


def _check_order(t):
    if t == 0:
        raise DomainError("moment order t = 0 is excluded")
    if not -1.0 < t < 1.0:
        raise DomainError(f"moment order must lie in (-1, 1), got {t!r}")


def _x_sample(spec, trials, m, seed, threads=1):
    lo, hi, a1 = sample_x1(spec, trials, m, seed, threads)
    return np.log((lo + hi) / 2.0), a1


def _moment_from_logs(log_x, a1, t, m):
    # expm1 keeps E(X^t) - 1 accurate for tiny t
    w1 = np.expm1(t * log_x)
    mean_w1 = float(np.mean(w1))
    M = 1.0 + mean_w1
    se_M = float(np.std(w1, ddof=1) / math.sqrt(len(w1)))
    per_sample = abs(t) * (a1 + 1.0) ** (1.0 + abs(t)) * 2.0 ** -(m - 1)
    return M, math.log1p(mean_w1), se_M, float(np.mean(per_sample)), w1


def mgf_log(spec, t, trials, m, seed, threads=1):
    """Monte Carlo ``ln E(X_1^t)`` for ``t`` in (-1, 1) \\ {0}.

    X_1 is taken at the midpoint of its depth-m bracket; the per-sample
    error is at most ``|t| (A_1 + 1)^(1+|t|) 2^-(m-1)``.
    """
    _check_order(t)
    if m < 40:
        raise DomainError("truncation depth must be >= 40")
    log_x, a1 = _x_sample(spec, trials, m, seeding.derive_seed(seed, _SALT_MGF), threads)
    M, log_M, se_M, err, _ = _moment_from_logs(log_x, a1, t, m)
    return MomentEstimate(t, log_M, se_M / M, err / M)


# --------------------------------------------------------------------------
# exponent selection


@dataclass(frozen=True)
class ExponentChoice:
    t: float
    side: str
    statistic: float
    stderr: float
    moment: float
    moment_stderr: float
    tried: int


def _side_sign(side):
    if side == "upper":
        return 1.0
    if side == "lower":
        return -1.0
    raise DomainError(f"side must be 'upper' or 'lower', got {side!r}")


def _scan(log_x, a1, delta, side, m):
    """Largest ``t = 2^-j`` with ``|ln E(X^{+-t})/t -+ E ln X| < delta/8 - 3 slack``.

    The gap is estimated with ``E ln X`` replaced by the mean of the same
    draws; the shared noise cancels to first order.
    """
    sign = _side_sign(side)
    for j in range(1, MAX_HALVINGS + 1):
        t = 2.0**-j
        M, stat, se, err, se_M = _paired_gap(log_x, a1, sign * t, m)
        slack = 3.0 * se + err
        if abs(stat) < delta / 8.0 - slack:
            return ExponentChoice(t, side, stat, se, M, se_M, j)
    raise PrecisionError(
        f"no exponent 2^-j (j <= {MAX_HALVINGS}) met the {side} delta/8 condition; raise trials"
    )


def _paired_gap(log_x, a1, t, m):
    """``ln E(X^t)/|t| - sign(t) E ln X`` with its delta-method stderr and bracket error."""
    M, log_M, se_M, err, w1 = _moment_from_logs(log_x, a1, t, m)
    a = abs(t)
    sign = 1.0 if t > 0 else -1.0
    stat = log_M / a - sign * float(np.mean(log_x))
    infl = (w1 - (M - 1.0)) / (M * a) - sign * (log_x - np.mean(log_x))
    se = float(np.std(infl, ddof=1) / math.sqrt(len(log_x)))
    return M, stat, se, err / (M * a), se_M


def select_exponent(spec, delta, side, seed, trials=100_000, m=64, threads=1):
    """Return the exponent for the ``upper`` (t0) or ``lower`` (s0) Chernoff estimate."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    log_x, a1 = _x_sample(spec, trials, m, seeding.derive_seed(seed, _SALT_SELECT), threads)
    return _scan(log_x, a1, delta, side, m).t


# --------------------------------------------------------------------------
# certificate


@dataclass
class ChernoffCertificate:
    delta: float
    t0: float
    s0: float
    epsilon1: float
    epsilon2: float
    N0: int
    N1: int
    N2: int
    lambda_: float
    tau: float
    alpha1: float
    alpha2: float
    B1: float
    B2: float
    alpha: float
    B: float
    N: int
    mean_log_X: float
    heuristic: bool = False
    reverification: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def bound(self, n):
        return self.B * math.exp(-self.alpha * n)

    def to_json(self):
        doc = asdict(self)
        doc["lambda"] = doc.pop("lambda_")
        return doc


def _psi_at(profile, n):
    # profile treated as nonincreasing: value at the largest lag <= n
    keys = [k for k in profile if k <= n]
    return profile[max(keys)] if keys else math.inf


def _block_length(t, eps, moment_lo, offset, psi_profile):
    """Smallest N with ``2^-((N - offset) t) <= (eps/2) moment_lo`` and ``psi(N) <= eps``."""
    target = eps / 2.0 * moment_lo
    N = max(1, offset + math.ceil(math.log2(1.0 / target) / t))
    while N > 1 and 2.0 ** -((N - 1 - offset) * t) <= target:
        N -= 1
    while 2.0 ** -((N - offset) * t) > target:
        N += 1
    if psi_profile is not None:
        while _psi_at(psi_profile, N) > eps:
            if N > max(psi_profile):
                raise ConfigurationError(f"psi profile never drops below epsilon = {eps:.3g}")
            N = min(k for k in psi_profile if k > N)
    return N


def _normalize_profile(psi_profile):
    if psi_profile is None:
        return None
    prof = {int(k): float(v) for k, v in dict(psi_profile).items()}
    if not prof or any(k < 1 or v < 0 for k, v in prof.items()):
        raise ConfigurationError("psi profile needs lags >= 1 and nonnegative values")
    return prof


def chernoff_certificate(
    spec,
    delta,
    psi_profile=None,
    seed=0,
    trials=100_000,
    m=64,
    reference_L=None,
    threads=1,
):
    """Explicit ``(alpha, B, N)`` with ``P(|(1/n) ln Q_n - L| >= delta) <= B e^{-alpha n}`` for n >= N.

    For i.i.d. digits the mixing condition on N1, N2 is vacuous.  Other
    processes need a ``psi_profile`` (lag -> psi); the result is then marked
    heuristic since an estimated psi is not a proof.  Moments entering the
    N1, N2 conditions are Monte Carlo means minus three standard errors.
    ``mean_log_X`` is ``-reference_L`` if given, else the analytic value or
    the sample mean; it enters B1 and B2.  Both delta/8 conditions are
    re-checked on an independent sample.
    """
    if delta <= 0:
        raise DomainError("delta must be positive")
    if not spec.is_random:
        raise ConfigurationError("certificates need a random process, not explicit digits")
    iid = isinstance(spec, IID)
    profile = _normalize_profile(psi_profile)
    if not iid and profile is None:
        raise ConfigurationError(f"{spec.kind} spec needs a psi profile for a certificate")
    if iid:
        profile = None

    select_seed = seeding.derive_seed(seed, _SALT_SELECT)
    log_x, a1 = _x_sample(spec, trials, m, select_seed, threads)
    if reference_L is not None:
        mean_log_x = -float(reference_L)
    else:
        exact = levy_analytic(spec)
        mean_log_x = float(np.mean(log_x)) if exact is None else -exact
    up = _scan(log_x, a1, delta, "upper", m)
    lo = _scan(log_x, a1, delta, "lower", m)

    t0, s0 = up.t, lo.t
    N0 = math.ceil(2.0 * LN2 / delta)
    eps1 = delta * t0 / 8.0
    eps2 = delta * s0 / 8.0
    moment_up = max(up.moment - 3.0 * up.moment_stderr, 1e-300)
    moment_lo = max(lo.moment - 3.0 * lo.moment_stderr, 1e-300)
    N1 = _block_length(t0, eps1, moment_up, 1, profile)
    N2 = _block_length(s0, eps2, moment_lo, 2, profile)
    lam = t0 / N1
    tau = s0 / N2
    alpha1 = lam * delta / 8.0
    alpha2 = tau * delta / 8.0
    B1 = max(1.0, math.exp(-t0 * (mean_log_x + 3.0 * delta / 8.0)))
    B2 = math.exp(-s0 * (mean_log_x - 3.0 * delta / 8.0))

    # re-verification on an independent sample
    check_seed = seeding.derive_seed(seed, _SALT_REVERIFY)
    log_x2, a1_2 = _x_sample(spec, trials, m, check_seed, threads)
    _, gap_up, _, _, _ = _paired_gap(log_x2, a1_2, t0, m)
    _, gap_lo, _, _, _ = _paired_gap(log_x2, a1_2, -s0, m)
    reverification = {
        "seed": check_seed,
        "upper_gap": gap_up,
        "lower_gap": gap_lo,
        "limit": delta / 8.0,
        "upper_ok": abs(gap_up) < delta / 8.0,
        "lower_ok": abs(gap_lo) < delta / 8.0,
    }
    if not (reverification["upper_ok"] and reverification["lower_ok"]):
        raise CertificateError(f"delta/8 conditions failed re-verification: {reverification}")

    metadata = {
        "spec": spec.to_json(),
        "seed": int(seed),
        "selection_seed": select_seed,
        "trials": {"t0": trials, "s0": trials, "moments": trials, "reverification": trials},
        "truncation_depth": m,
        "moment_t0": up.moment,
        "moment_t0_stderr": up.moment_stderr,
        "moment_s0": lo.moment,
        "moment_s0_stderr": lo.moment_stderr,
        "mixing_function": seeding.MIXING_FUNCTION,
    }
    if profile is not None:
        metadata["psi_profile"] = {str(k): v for k, v in sorted(profile.items())}

    return ChernoffCertificate(
        delta=delta,
        t0=t0,
        s0=s0,
        epsilon1=eps1,
        epsilon2=eps2,
        N0=N0,
        N1=N1,
        N2=N2,
        lambda_=lam,
        tau=tau,
        alpha1=alpha1,
        alpha2=alpha2,
        B1=B1,
        B2=B2,
        alpha=min(alpha1, alpha2),
        B=B1 + B2,
        N=max(N0, N1, N2),
        mean_log_X=mean_log_x,
        heuristic=not iid,
        reverification=reverification,
        metadata=metadata,
    )


# --------------------------------------------------------------------------
# empirical deviation probabilities


def clopper_pearson(hits, trials, confidence=0.95):
    """Two-sided exact binomial interval."""
    a = (1.0 - confidence) / 2.0
    lo = 0.0 if hits == 0 else float(stats.beta.ppf(a, hits, trials - hits + 1))
    hi = 1.0 if hits == trials else float(stats.beta.ppf(1.0 - a, hits + 1, trials - hits))
    return lo, hi


def lower_confidence_limit(hits, trials, confidence=0.99):
    """One-sided exact lower limit for a binomial proportion."""
    if hits == 0:
        return 0.0
    return float(stats.beta.ppf(1.0 - confidence, hits, trials - hits + 1))


@dataclass(frozen=True)
class DeviationPoint:
    n: int
    trials: int
    hits: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    hits_above: int = 0
    hits_below: int = 0


@dataclass
class DeviationCurve:
    delta: float
    reference_L: float
    grid: list
    seed: int = None
    spec_id: str = None

    CSV_FIELDS = ("n", "trials", "hits", "p_hat", "ci_lo", "ci_hi")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_FIELDS)
        for p in self.grid:
            w.writerow([p.n, p.trials, p.hits, format(p.p_hat, ".9g"), format(p.ci_lo, ".9g"), format(p.ci_hi, ".9g")])
        return buf.getvalue()

    def to_json(self):
        return {
            "delta": self.delta,
            "reference_L": self.reference_L,
            "seed": self.seed,
            "spec": json.loads(self.spec_id) if self.spec_id else None,
            "grid": [asdict(p) for p in self.grid],
        }


def deviation_seeds(seed, n, trials):
    """Trial seeds for grid point n; fixed for any worker count."""
    return seeding.trial_seeds(seeding.derive_seed(seed, n), trials)


def empirical_deviation(spec, delta, n_grid, trials, seed, reference_L, threads=1):
    """Fraction of trials with ``|(1/n) ln Q_n - reference_L| >= delta`` per grid point.

    The two sides of the event are also counted separately.
    """
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    if trials < 1000:
        raise DomainError("need at least 1000 trials per grid point")
    grid = []
    for n in n_grid:
        digits = sample_paths(spec, n, deviation_seeds(seed, n, trials), threads)
        dev = log_qn_batch(digits)[:, -1] / n - reference_L
        above = int(np.count_nonzero(dev >= delta))
        below = int(np.count_nonzero(dev <= -delta))
        hits = int(np.count_nonzero(np.abs(dev) >= delta))
        lo, hi = clopper_pearson(hits, trials)
        grid.append(DeviationPoint(int(n), trials, hits, hits / trials, lo, hi, above, below))
    return DeviationCurve(float(delta), float(reference_L), grid, int(seed), spec.spec_id)


def lemma1_containment(spec, delta, n, trials, seed, reference_L, m=40, threads=1):
    """Check that each deviating trajectory also deviates by delta/2 in ``(1/n) sum ln X_k``.

    Uses the same trials as :func:`empirical_deviation` at grid point n,
    extended by m digits to bracket the tail values.  A trial violates the
    containment only if ``|(1/n) sum ln X_k + L| < delta/2`` holds for the
    whole enclosure.
    """
    if n <= math.ceil(2.0 * LN2 / delta):
        raise DomainError("containment only holds for n > ceil(2 ln 2 / delta)")
    digits = sample_paths(spec, n + m, deviation_seeds(seed, n, trials), threads)
    dev = log_qn_batch(digits[:, :n])[:, -1] / n - reference_L
    flagged = np.abs(dev) >= delta
    s_lo, s_hi, _, _ = tail_log_sums_batch(digits, n)
    lo = s_lo / n + reference_L
    hi = s_hi / n + reference_L
    # largest |.| reachable inside the enclosure
    reach = np.maximum(np.abs(lo), np.abs(hi))
    violations = int(np.count_nonzero(flagged & (reach < delta / 2.0)))
    return {
        "n": n,
        "flagged": int(np.count_nonzero(flagged)),
        "violations": violations,
        "max_slack": float(np.max(hi - lo)) if len(hi) else 0.0,
    }


# --------------------------------------------------------------------------
# rate fitting and bound verification


@dataclass(frozen=True)
class RateFit:
    alpha_hat: float
    B_hat: float
    r_squared: float
    n_used: int

    def to_json(self):
        return asdict(self)


def fit_rate(curve):
    """Least-squares line through ``(n, ln p_hat)`` over grid points with ``p_hat > 0``."""
    pts = [(p.n, p.p_hat) for p in curve.grid if p.p_hat > 0]
    if len(pts) < 3:
        raise InsufficientDataError(f"need >= 3 grid points with p_hat > 0, have {len(pts)}")
    x = np.array([n for n, _ in pts], dtype=np.float64)
    y = np.log([p for _, p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(-slope), float(math.exp(intercept)), min(max(r2, 0.0), 1.0), len(pts))


@dataclass(frozen=True)
class BoundCheck:
    passed: bool
    n_checked: int
    confidence: float
    rows: list

    def to_json(self):
        return asdict(self)


def verify_bound(curve, certificate, confidence=0.99):
    """Pass iff no grid point ``n >= N`` has a lower confidence limit above ``B e^{-alpha n}``."""
    if not math.isclose(curve.delta, certificate.delta, rel_tol=0, abs_tol=1e-12):
        raise ConfigurationError(f"curve delta {curve.delta} != certificate delta {certificate.delta}")
    if not math.isclose(curve.reference_L, -certificate.mean_log_X, rel_tol=0, abs_tol=1e-9):
        raise ConfigurationError("curve and certificate use different reference constants")
    rows = []
    for p in curve.grid:
        if p.n < certificate.N:
            continue
        lcl = lower_confidence_limit(p.hits, p.trials, confidence)
        bound = certificate.bound(p.n)
        rows.append({"n": p.n, "p_hat": p.p_hat, "lower_limit": lcl, "bound": bound, "ok": lcl <= bound})
    return BoundCheck(all(r["ok"] for r in rows), len(rows), confidence, rows)
