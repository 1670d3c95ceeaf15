"""Exact convergent arithmetic and certified tail-value brackets.

Integers are Python ints (unbounded), so ``P_n`` and ``Q_n`` are exact for
any path length.  The tail values ``X_k = [A_k, A_{k+1}, ...]`` live on
infinite paths; a finite path pins each one down to an exact rational
bracket, and every statement about them is checked in interval arithmetic.
Floating intervals are rounded outward by a few ulps after each libm call.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .errors import DomainError, LengthError

LN2 = math.log(2.0)


def _digits(path):
    digits = getattr(path, "digits", path)
    return [int(d) for d in digits]


# --------------------------------------------------------------------------
# recurrences


@dataclass(frozen=True)
class ConvergentState:
    """``(P_{n-1}, P_n, Q_{n-1}, Q_n)`` after n steps."""

    n: int
    P_prev: int
    P_cur: int
    Q_prev: int
    Q_cur: int

    def step(self, a):
        return step(self, a)

    @property
    def value(self):
        return Fraction(self.P_cur, self.Q_cur)


def init():
    """State before any digit: ``P_{-1}=1, Q_{-1}=0, P_0=0, Q_0=1``."""
    return ConvergentState(0, 1, 0, 0, 1)


def step(state, a):
    """Append digit ``a``: ``P_n = a P_{n-1} + P_{n-2}``, same for Q."""
    if a < 1:
        raise DomainError(f"partial quotients must be >= 1, got {a}")
    return ConvergentState(
        state.n + 1,
        state.P_cur,
        a * state.P_cur + state.P_prev,
        state.Q_cur,
        a * state.Q_cur + state.Q_prev,
    )


def convergents(digits, step_fn=step):
    """Lists ``P, Q`` with ``P[j] = P_{j-1}`` for ``j = 0..n+1`` (index shifted by one)."""
    state = init()
    P, Q = [state.P_prev, state.P_cur], [state.Q_prev, state.Q_cur]
    for a in digits:
        state = step_fn(state, a)
        P.append(state.P_cur)
        Q.append(state.Q_cur)
    return P, Q


def levy_trajectory(path):
    """``(1/n) ln Q_n`` for ``n = 1..len(path)``, from exact ``Q_n``."""
    digits = _digits(path)
    if not digits:
        raise LengthError("path must be nonempty")
    out = []
    state = init()
    for n, a in enumerate(digits, start=1):
        state = step(state, a)
        # math.log on ints works from the leading bits, so no float overflow
        out.append(math.log(state.Q_cur) / n)
    return out


def trajectory_csv(path):
    """CSV text ``n,log_qn_over_n`` for the exact trajectory."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "log_qn_over_n"])
    for n, v in enumerate(levy_trajectory(path), start=1):
        writer.writerow([n, format(v, ".9g")])
    return buf.getvalue()


# --------------------------------------------------------------------------
# tail brackets


@dataclass(frozen=True)
class TailApprox:
    """Exact rational bracket ``value_lo <= X_k <= value_hi`` from m digits."""

    k: int
    m: int
    value_lo: Fraction
    value_hi: Fraction

    @property
    def width(self):
        return self.value_hi - self.value_lo

    def __contains__(self, x):
        return self.value_lo <= x <= self.value_hi


def _tail_pairs(digits):
    """Brackets of ``[d_k, ..., d_L + t]``, t in [0, 1], for every k.

    Returns ``(lo, hi)`` lists of ``(num, den)`` pairs indexed from 0.
    Tails 0 and 1 are pushed backwards together: ``1/(a + p/q) = q/(aq + p)``.
    """
    L = len(digits)
    t0, t1 = (0, 1), (1, 1)
    lo, hi = [None] * L, [None] * L
    for i in range(L - 1, -1, -1):
        a = digits[i]
        t0 = (t0[1], a * t0[1] + t0[0])
        t1 = (t1[1], a * t1[1] + t1[0])
        # tail 0 gives the larger value at the last digit; order flips each step
        if (L - 1 - i) % 2 == 0:
            hi[i], lo[i] = t0, t1
        else:
            hi[i], lo[i] = t1, t0
    return lo, hi


def tail_values(path, k, m):
    """Bracket for ``X_k`` using digits ``k..k+m-1`` (1-based); width <= 2^-(m-1)."""
    digits = _digits(path)
    if k < 1 or m < 1:
        raise DomainError("k and m must be >= 1")
    if len(digits) < k + m - 1:
        raise LengthError(f"need digits {k}..{k + m - 1}, path has {len(digits)}")
    lo, hi = _tail_pairs(digits[k - 1 : k - 1 + m])
    return TailApprox(k, m, Fraction(*lo[0]), Fraction(*hi[0]))


# --------------------------------------------------------------------------
# outward-rounded float intervals


def _down(x, ulps=2):
    return x - ulps * math.ulp(x)


def _up(x, ulps=2):
    return x + ulps * math.ulp(x)


def _log_pair(num, den):
    # ln(num/den) enclosure; int/int division is correctly rounded
    v = num / den
    return _down(math.log(_down(v, 1))), _up(math.log(_up(v, 1)))


def _log_int(q):
    v = math.log(q)
    return _down(v, 8), _up(v, 8)


def _frac_to_interval(x):
    v = x.numerator / x.denominator
    return _down(v, 1), _up(v, 1)


def _gap(lo1, hi1, lo2, hi2):
    """Distance between two intervals (0 when they overlap)."""
    return max(0.0, lo1 - hi2, lo2 - hi1)


def _extend(digits, n, m):
    if n is None:
        n = len(digits)
    if n < 1 or n > len(digits):
        raise LengthError(f"cannot check {n} indices on a path of length {len(digits)}")
    # identities hold for every continuation, so missing tail digits are synthesized as 1s
    pad = max(0, n + m - len(digits))
    return digits + [1] * pad, n


# --------------------------------------------------------------------------
# identity checks


@dataclass
class IdentityResult:
    passed: bool = True
    worst_residual: float = 0
    checked: int = 0
    first_failure: int = None

    def record(self, n, residual, ok):
        self.checked += 1
        if residual > self.worst_residual:
            self.worst_residual = residual
        if not ok and self.passed:
            self.passed = False
            self.first_failure = n


@dataclass
class IdentityReport:
    results: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.passed for r in self.results.values())

    def __getitem__(self, name):
        return self.results[name]

    def merge(self, other):
        for name, r in other.results.items():
            mine = self.results.setdefault(name, IdentityResult())
            mine.checked += r.checked
            if r.worst_residual > mine.worst_residual:
                mine.worst_residual = r.worst_residual
            if not r.passed and mine.passed:
                mine.passed = False
                mine.first_failure = r.first_failure
        return self

    def to_json(self):
        return {
            name: {"passed": r.passed, "worst_residual": r.worst_residual, "checked": r.checked}
            for name, r in self.results.items()
        }


EXACT_IDENTITIES = ("determinant", "second_determinant", "growth", "coprime")
INTERVAL_IDENTITIES = ("mobius", "approximation", "product")


def identity_suite(path, m=64, n=None, step_fn=step, exact_only=False):
    """Check the convergent identities on the first n indices of ``path``.

    Exact integer checks (residuals are integers, so "pass" means exactly 0):

    * ``determinant``: ``P_n Q_{n-1} - Q_n P_{n-1} = (-1)^(n-1)``
    * ``second_determinant``: ``P_n Q_{n-2} - Q_n P_{n-2} = (-1)^n A_n``
    * ``growth``: ``Q_n >= Q_{n-1} + Q_{n-2}`` and ``Q_n^2 >= 2^(n-1)``
    * ``coprime``: ``gcd(P_n, Q_n) = 1``

    Interval checks on the tail brackets (pass means the enclosure is
    consistent with the identity; residual is the gap otherwise):

    * ``mobius``: ``X_1 = (P_n + X_{n+1} P_{n-1}) / (Q_n + X_{n+1} Q_{n-1})``
    * ``approximation``: ``1/(2 Q_n Q_{n-1}) <= |X_1 - P_{n-1}/Q_{n-1}| <= 1/(Q_n Q_{n-1})``
    * ``product``: ``sum_k ln X_k = ln |X_1 Q_{n-1} - P_{n-1}|`` (log space)

    Digits past ``len(path)`` needed for depth-m brackets are synthesized.
    ``step_fn`` exists so a harness can inject a broken recurrence.
    """
    digits, n = _extend(_digits(path), n, m)
    P, Q = convergents(digits[:n], step_fn)
    report = IdentityReport({name: IdentityResult() for name in EXACT_IDENTITIES})
    for j in range(1, n + 1):
        i = j + 1  # P[i] = P_j
        r = abs(P[i] * Q[i - 1] - Q[i] * P[i - 1] - (-1) ** (j - 1))
        report["determinant"].record(j, r, r == 0)
        r = abs(P[i] * Q[i - 2] - Q[i] * P[i - 2] - (-1) ** j * digits[j - 1])
        report["second_determinant"].record(j, r, r == 0)
        grow_ok = Q[i] >= Q[i - 1] + Q[i - 2] and Q[i] * Q[i] >= 1 << (j - 1)
        report["growth"].record(j, 0 if grow_ok else 1, grow_ok)
        g = math.gcd(P[i], Q[i])
        report["coprime"].record(j, g - 1, g == 1)
    if exact_only:
        return report

    for name in INTERVAL_IDENTITIES:
        report.results[name] = IdentityResult()
    lo, hi = _tail_pairs(digits)
    X1 = (Fraction(*lo[0]), Fraction(*hi[0]))
    log_lo = log_hi = 0.0
    for j in range(1, n + 1):
        i = j + 1
        # mobius: evaluate the right-hand side at both ends of the X_{j+1} bracket
        t_lo, t_hi = Fraction(*lo[j]), Fraction(*hi[j])
        ends = [(P[i] + t * P[i - 1]) / (Q[i] + t * Q[i - 1]) for t in (t_lo, t_hi)]
        r_lo, r_hi = min(ends), max(ends)
        ok = r_lo <= X1[1] and X1[0] <= r_hi
        gap = 0.0 if ok else float(max(r_lo - X1[1], X1[0] - r_hi))
        report["mobius"].record(j, gap, ok)

        # approximation
        conv = Fraction(P[i - 1], Q[i - 1])
        d = sorted((abs(X1[0] - conv), abs(X1[1] - conv)))
        if X1[0] <= conv <= X1[1]:
            d[0] = Fraction(0)
        lower = Fraction(1, 2 * Q[i] * Q[i - 1])
        upper = Fraction(1, Q[i] * Q[i - 1])
        ok = d[0] >= lower and d[1] <= upper
        gap = 0.0 if ok else float(max(lower - d[0], d[1] - upper))
        report["approximation"].record(j, gap, ok)

        # product, in log space
        a, b = _log_pair(*lo[j - 1])
        c, e = _log_pair(*hi[j - 1])
        log_lo = _down(log_lo + min(a, c), 1)
        log_hi = _up(log_hi + max(b, e), 1)
        ends = sorted(abs(x * Q[i - 1] - P[i - 1]) for x in X1)
        if ends[0] == 0:
            report["product"].record(j, math.inf, False)
            continue
        rl = _log_pair(ends[0].numerator, ends[0].denominator)[0]
        rh = _log_pair(ends[1].numerator, ends[1].denominator)[1]
        gap = _gap(log_lo, log_hi, rl, rh)
        report["product"].record(j, gap, gap == 0.0)
    return report


class SandwichResult(NamedTuple):
    residual: float
    slack: float
    n: int


def sandwich_check(path, m=64, n=None):
    """Certified check of ``|(1/j) ln Q_j + (1/j) sum_k ln X_k| <= (ln 2)/j`` for j <= n.

    Returns the worst ``upper(|...|) - (ln 2)/j`` over j (<= 0 when the bound
    holds strictly) and the largest enclosure width ``slack`` divided by j.
    """
    digits, n = _extend(_digits(path), n, m)
    lo, hi = _tail_pairs(digits)
    state = init()
    s_lo = s_hi = 0.0
    residual, slack = -math.inf, 0.0
    for j in range(1, n + 1):
        state = step(state, digits[j - 1])
        a, b = _log_pair(*lo[j - 1])
        c, e = _log_pair(*hi[j - 1])
        s_lo = _down(s_lo + min(a, c), 1)
        s_hi = _up(s_hi + max(b, e), 1)
        q_lo, q_hi = _log_int(state.Q_cur)
        t_lo = _down(q_lo + s_lo, 1)
        t_hi = _up(q_hi + s_hi, 1)
        bound = _up(max(abs(t_lo), abs(t_hi)) / j, 1)
        residual = max(residual, bound - _down(LN2 / j, 1))
        slack = max(slack, _up((t_hi - t_lo) / j, 1))
    return SandwichResult(residual, slack, n)


# --------------------------------------------------------------------------
# vectorized float helpers for ensembles


def log_qn_batch(digits):
    """``ln Q_n`` for every prefix of every row of a digit matrix.

    Uses ``Q_n / Q_{n-1} = A_n + Q_{n-2} / Q_{n-1}`` so nothing overflows;
    the relative error stays near n machine epsilons.
    """
    a = np.asarray(digits, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    out = np.empty_like(a)
    r = a[:, 0].copy()
    out[:, 0] = np.log(r)
    for i in range(1, a.shape[1]):
        r = a[:, i] + 1.0 / r
        out[:, i] = np.log(r)
    return np.cumsum(out, axis=1)


def tail_log_sums_batch(digits, n):
    """Float enclosures of ``sum_{k<=n} ln X_k`` per row, with ``X_1`` brackets.

    Digits beyond column n act as the truncated tail.  Returns
    ``(sum_lo, sum_hi, x1_lo, x1_hi)``.
    """
    a = np.asarray(digits, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    T, L = a.shape
    if not 1 <= n <= L:
        raise LengthError(f"cannot sum {n} tail values over {L} digits")
    x0 = np.zeros(T)
    x1 = np.ones(T)
    s_lo = np.zeros(T)
    s_hi = np.zeros(T)
    for i in range(L - 1, -1, -1):
        x0 = 1.0 / (a[:, i] + x0)
        x1 = 1.0 / (a[:, i] + x1)
        if i < n:
            s_lo += np.log(np.minimum(x0, x1))
            s_hi += np.log(np.maximum(x0, x1))
    return s_lo, s_hi, np.minimum(x0, x1), np.maximum(x0, x1)
