"""Partial-quotient processes: laws of A_1, process specs, path sampling.

A process spec describes the stochastic process of partial quotients
``A_1, A_2, ...``.  Four kinds are supported:

* ``iid``: independent draws from a :class:`Distribution`;
* ``markov``: a finite, primitive Markov chain on ``{1..K}``;
* ``gauss_stationary``: the partial quotients of a Gauss-distributed real;
* ``explicit``: a fixed digit sequence.

Sampling is counter based (see :mod:`randcf.seeding`): the digits of trial
``t`` depend only on the trial seed, so batches can be split across workers
without changing a single bit of the output.
"""

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import gmpy2
import numpy as np
from scipy import integrate, special

from . import seeding
from .errors import ConfigurationError, DomainError, LengthError, PrecisionError, PrecisionExhaustedError

LN2 = math.log(2.0)

# trials per work unit; fixed so chunking never depends on the thread count
CHUNK = 2048

SERIES_TOL = 1e-9


def gauss_kuzmin_pmf(k):
    """P(a_1 = k) under the Gauss measure: ``ln(1 + 1/(k(k+2))) / ln 2``.

    Accepts a positive integer or an integer array.
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise DomainError("gauss_kuzmin_pmf is defined for k >= 1")
    if k_arr.ndim == 0:
        k = int(k)
        return math.log1p(1.0 / (k * (k + 2))) / LN2
    kf = k_arr.astype(np.float64)
    return np.log1p(1.0 / (kf * (kf + 2.0))) / LN2


def gauss_kuzmin_cdf(k):
    """Closed-form partial sum ``ln(2(K+1)/(K+2)) / ln 2`` of the pmf."""
    k = int(k)
    if k < 0:
        raise DomainError("K must be nonnegative")
    return 1.0 - math.log1p(1.0 / (k + 1)) / LN2


def gauss_quantile(u):
    """Inverse of the Gauss-measure CDF ``log2(1 + x)``: ``x = 2^u - 1``."""
    return np.expm1(np.asarray(u, dtype=np.float64) * LN2)


# --------------------------------------------------------------------------
# distributions of A_1


class Distribution:
    """Law of a single partial quotient (support in the positive integers)."""

    kind = None
    support_max = math.inf

    def pmf(self, k):
        """Probability of ``k``; vectorized over integer arrays."""
        raise NotImplementedError

    def _pmf_x(self, x):
        # smooth extension of the pmf to real x, used for tail integrals
        raise NotImplementedError

    def sample(self, u):
        """Inverse-CDF transform of uniforms in (0, 1) to digits (int64)."""
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError

    def cdf(self, k):
        k = int(k)
        if k < 1:
            return 0.0
        return float(np.sum(self.pmf(np.arange(1, k + 1))))


@dataclass(frozen=True)
class Constant(Distribution):
    a: int
    kind = "constant"

    def __post_init__(self):
        if int(self.a) != self.a or self.a < 1:
            raise ConfigurationError(f"constant digit must be a positive integer, got {self.a!r}")

    @property
    def support_max(self):
        return self.a

    def pmf(self, k):
        return np.where(np.asarray(k) == self.a, 1.0, 0.0)

    def sample(self, u):
        return np.full(np.shape(u), self.a, dtype=np.int64)

    def to_json(self):
        return {"kind": "constant", "a": int(self.a)}


@dataclass(frozen=True)
class Uniform(Distribution):
    K: int
    kind = "uniform"

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ConfigurationError(f"uniform K must be a positive integer, got {self.K!r}")

    @property
    def support_max(self):
        return self.K

    def pmf(self, k):
        k = np.asarray(k)
        return np.where((k >= 1) & (k <= self.K), 1.0 / self.K, 0.0)

    def sample(self, u):
        k = np.floor(np.asarray(u) * self.K).astype(np.int64) + 1
        return np.minimum(k, self.K)

    def to_json(self):
        return {"kind": "uniform", "K": int(self.K)}


@dataclass(frozen=True)
class Geometric(Distribution):
    """``P(k) = p (1-p)^(k-1)`` on ``{1, 2, ...}``."""

    p: float
    kind = "geometric"

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ConfigurationError(f"geometric p must lie in (0, 1), got {self.p!r}")

    def pmf(self, k):
        k = np.asarray(k, dtype=np.float64)
        return np.where(k >= 1, self.p * np.exp((k - 1) * math.log1p(-self.p)), 0.0)

    def _pmf_x(self, x):
        return self.p * np.exp((x - 1) * math.log1p(-self.p))

    def sample(self, u):
        k = np.ceil(np.log1p(-np.asarray(u)) / math.log1p(-self.p))
        return np.maximum(k, 1).astype(np.int64)

    def to_json(self):
        return {"kind": "geometric", "p": float(self.p)}


@dataclass(frozen=True)
class Zeta(Distribution):
    """``P(k) = k^(-s) / zeta(s)``; requires ``s > 2`` so that E(A^t) < inf for t < 1."""

    s: float
    kind = "zeta"
    _table: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    TABLE_SIZE = 1 << 16

    def __post_init__(self):
        if not self.s > 2.0:
            raise ConfigurationError(f"zeta exponent must exceed 2, got {self.s!r}")
        k = np.arange(1, self.TABLE_SIZE + 1, dtype=np.float64)
        cdf = np.cumsum(k ** -self.s) / special.zeta(self.s)
        object.__setattr__(self, "_table", cdf)

    def pmf(self, k):
        k = np.asarray(k, dtype=np.float64)
        return np.where(k >= 1, k ** -self.s / special.zeta(self.s), 0.0)

    def _pmf_x(self, x):
        return x ** -self.s / special.zeta(self.s)

    def survival(self, k):
        """P(A > k) via the Hurwitz zeta function."""
        return special.zeta(self.s, np.asarray(k, dtype=np.float64) + 1.0) / special.zeta(self.s)

    def sample(self, u):
        u = np.asarray(u, dtype=np.float64)
        k = np.searchsorted(self._table, u, side="left").astype(np.int64) + 1
        far = k > self.TABLE_SIZE
        if np.any(far):
            k[far] = self._sample_tail(1.0 - u[far])
        return k

    def _sample_tail(self, w):
        # smallest k with survival(k) <= w, by bisection on integers
        lo = np.full(w.shape, float(self.TABLE_SIZE))
        hi = np.maximum(lo * 2, ((self.s - 1) * special.zeta(self.s) * w) ** (-1.0 / (self.s - 1)) * 4)
        while np.any(self.survival(hi) > w):
            hi = np.where(self.survival(hi) > w, hi * 2, hi)
        for _ in range(80):
            mid = np.floor((lo + hi) / 2)
            ok = self.survival(mid) <= w
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
            if np.all(hi - lo <= 1):
                break
        return hi.astype(np.int64)

    def to_json(self):
        return {"kind": "zeta", "s": float(self.s)}


@dataclass(frozen=True)
class GaussKuzmin(Distribution):
    kind = "gauss_kuzmin"

    def pmf(self, k):
        k = np.asarray(k)
        out = np.zeros(k.shape)
        pos = k >= 1
        out[pos] = gauss_kuzmin_pmf(k[pos])
        return out

    def _pmf_x(self, x):
        return np.log1p(1.0 / (x * (x + 2.0))) / LN2

    def cdf(self, k):
        return gauss_kuzmin_cdf(k) if k >= 1 else 0.0

    def sample(self, u):
        # first digit floor(1/x) of a Gauss-distributed x
        return np.floor(1.0 / gauss_quantile(u)).astype(np.int64)

    def to_json(self):
        return {"kind": "gauss_kuzmin"}


def distribution_from_json(doc):
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigurationError(f"distribution must be an object with a 'kind' field: {doc!r}")
    kind = doc["kind"]
    try:
        if kind == "constant":
            return Constant(int(doc["a"]))
        if kind == "uniform":
            return Uniform(int(doc["K"]))
        if kind == "geometric":
            return Geometric(float(doc["p"]))
        if kind == "zeta":
            return Zeta(float(doc["s"]))
        if kind == "gauss_kuzmin":
            return GaussKuzmin()
    except KeyError as exc:
        raise ConfigurationError(f"distribution {kind!r} is missing field {exc}") from None
    raise ConfigurationError(f"unknown distribution kind {kind!r}")


# --------------------------------------------------------------------------
# analytic moments of A_1


def _series(dist, g, g_name):
    """Sum ``pmf(k) g(k)`` over k >= 1 with a tail error below SERIES_TOL.

    Finite supports are summed exactly.  Otherwise the sum runs to K and the
    tail uses the trapezoid form of Euler-Maclaurin,
    ``sum_{k>K} f(k) = int_K^inf f - f(K)/2 + E`` with
    ``0 <= E <= (f(K-2) - f(K-1))/12`` for positive, decreasing, convex f
    (all built-in families satisfy this for K >= 64).  E is replaced by the
    midpoint of its range; K grows until the bound drops below SERIES_TOL.
    """
    if math.isfinite(dist.support_max):
        k = np.arange(1, int(dist.support_max) + 1)
        return float(math.fsum(dist.pmf(k) * g(k.astype(np.float64))))

    def f(x):
        return dist._pmf_x(x) * g(x)

    K = 256
    while K <= 1 << 24:
        k = np.arange(1, K + 1, dtype=np.float64)
        head = math.fsum(f(k))
        with warnings.catch_warnings():
            # roundoff warnings on negligible tails; the returned error estimate is kept
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            integral, quad_err = integrate.quad(f, K, np.inf, epsabs=1e-13, epsrel=1e-13, limit=500)
        em_range = max(f(K - 2.0) - f(K - 1.0), 0.0) / 12.0
        bound = em_range / 2.0 + quad_err
        if bound < SERIES_TOL:
            return head + integral - f(float(K)) / 2.0 + em_range / 2.0
        K *= 8
    raise PrecisionError(f"series for {g_name} did not reach tolerance {SERIES_TOL}")


def expected_log_a1(dist):
    """E(ln A_1), with truncation error below 1e-9."""
    return _series(dist, np.log, "E(log A1)")


def moment_a1(dist, t):
    """E(A_1^t) for 0 < t < 1, with truncation error below 1e-9."""
    if not 0.0 < t < 1.0:
        raise DomainError(f"moment order must lie in (0, 1), got {t!r}")
    return _series(dist, lambda x: x**t, f"E(A1^{t})")


# --------------------------------------------------------------------------
# process specs


class ProcessSpec:
    kind = None

    def to_json(self):
        raise NotImplementedError

    @property
    def spec_id(self):
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @property
    def is_random(self):
        return True


@dataclass(frozen=True)
class IID(ProcessSpec):
    dist: Distribution
    kind = "iid"

    def to_json(self):
        return {"kind": "iid", "dist": self.dist.to_json()}


def _is_primitive(adj):
    # Wielandt: a primitive K x K matrix has A^((K-1)^2 + 1) > 0
    K = adj.shape[0]
    power = (K - 1) ** 2 + 1
    result = np.eye(K, dtype=bool)
    base = adj.copy()
    while power:
        if power & 1:
            result = (result.astype(np.int64) @ base.astype(np.int64)) > 0
        base = (base.astype(np.int64) @ base.astype(np.int64)) > 0
        power >>= 1
    return bool(result.all())


def stationary_distribution(transition):
    P = np.asarray(transition, dtype=np.float64)
    K = P.shape[0]
    A = np.vstack([P.T - np.eye(K), np.ones(K)])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True)
class Markov(ProcessSpec):
    """Markov chain on ``{1..K}``; row ``i`` is the law of the next digit given ``i + 1``.

    ``initial`` defaults to the stationary distribution, which makes the
    digit process stationary.
    """

    transition: tuple
    initial: tuple = None
    kind = "markov"

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise ConfigurationError("transition must be a square K x K matrix")
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise ConfigurationError("transition entries must be finite and nonnegative")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ConfigurationError("transition rows must sum to 1 within 1e-12")
        if not _is_primitive(P > 0):
            raise ConfigurationError("transition matrix must be irreducible and aperiodic")
        object.__setattr__(self, "transition", tuple(tuple(float(v) for v in row) for row in P))
        if self.initial is None:
            init = stationary_distribution(P)
        else:
            init = np.asarray(self.initial, dtype=np.float64)
            if init.shape != (P.shape[0],) or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-12:
                raise ConfigurationError("initial must be a length-K probability vector")
        object.__setattr__(self, "initial", tuple(float(v) for v in init))

    @property
    def K(self):
        return len(self.transition)

    def to_json(self):
        return {"kind": "markov", "transition": [list(r) for r in self.transition], "initial": list(self.initial)}


@dataclass(frozen=True)
class GaussStationary(ProcessSpec):
    """Partial quotients of a Gauss-distributed real.

    ``precision_bits`` is a floor; sampling a path of length n uses at least
    ``4n + 64`` bits and refines further if certification runs out.
    """

    precision_bits: int = 256
    kind = "gauss_stationary"

    def __post_init__(self):
        if int(self.precision_bits) != self.precision_bits or self.precision_bits < 1:
            raise ConfigurationError("precision_bits must be a positive integer")

    def to_json(self):
        return {"kind": "gauss_stationary", "precision_bits": int(self.precision_bits)}


@dataclass(frozen=True)
class Explicit(ProcessSpec):
    digits: tuple
    kind = "explicit"

    def __post_init__(self):
        digits = tuple(int(d) for d in self.digits)
        if not digits or any(d < 1 for d in digits):
            raise ConfigurationError("explicit digits must be a nonempty sequence of integers >= 1")
        object.__setattr__(self, "digits", digits)

    @property
    def is_random(self):
        return False

    def to_json(self):
        return {"kind": "explicit", "digits": list(self.digits)}


def spec_from_json(doc):
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid spec JSON: {exc}") from None
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigurationError("spec must be a JSON object with a 'kind' field")
    kind = doc["kind"]
    try:
        if kind == "iid":
            return IID(distribution_from_json(doc["dist"]))
        if kind == "markov":
            return Markov(doc["transition"], doc.get("initial"))
        if kind == "gauss_stationary":
            return GaussStationary(int(doc.get("precision_bits", 256)))
        if kind == "explicit":
            return Explicit(doc["digits"])
    except KeyError as exc:
        raise ConfigurationError(f"spec {kind!r} is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed {kind!r} spec: {exc}") from None
    raise ConfigurationError(f"unknown spec kind {kind!r}")


def spec_to_json(spec):
    return spec.to_json()


BUILTIN_SPECS = {
    "constant1": IID(Constant(1)),
    "constant2": IID(Constant(2)),
    "uniform3": IID(Uniform(3)),
    "geometric": IID(Geometric(0.5)),
    "zeta3": IID(Zeta(3.0)),
    "gauss_kuzmin_iid": IID(GaussKuzmin()),
    "markov2": Markov(((0.3, 0.7), (0.6, 0.4))),
    "gauss_stationary": GaussStationary(256),
}


# --------------------------------------------------------------------------
# expansions of reals


def _expand_bracket(lo_num, lo_den, hi_num, hi_den, n):
    """Digits shared by every real in ``[lo, hi]`` (0 <= lo <= hi < 1).

    Stops after n digits, when the bracket straddles a cylinder boundary, or
    when a rational endpoint terminates.
    """
    digits = []
    a, b, c, d = lo_num, lo_den, hi_num, hi_den
    while len(digits) < n and a > 0:
        k = b // a
        if d // c != k:
            break
        digits.append(k)
        # [1/hi - k, 1/lo - k]
        a, b, c, d = d - k * c, c, b - k * a, a
    return digits


def _real_bracket(x):
    if isinstance(x, (int, Fraction)):
        x = Fraction(x)
        return x, x
    if isinstance(x, float):
        v = Fraction(x)
        u = Fraction(math.ulp(x))
        return v - u, v + u
    if isinstance(x, type(gmpy2.mpfr(0))):
        num, den = x.as_integer_ratio()
        v = Fraction(int(num), int(den))
        u = Fraction(2) ** (int(gmpy2.get_exp(x)) - x.precision)
        return v - u, v + u
    try:
        import mpmath

        if isinstance(x, mpmath.mpf):
            man, exp = int(x.man), int(x.exp)
            v = Fraction(man) * Fraction(2) ** exp
            u = Fraction(2) ** (exp + man.bit_length() - mpmath.mp.prec)
            return v - u, v + u
    except ImportError:  # pragma: no cover
        pass
    raise TypeError(f"unsupported real type {type(x).__name__}")


def partial_quotients_of_real(x, n):
    """First ``n`` partial quotients of ``x`` in (0, 1), iterating the Gauss map.

    Rationals (``int``/``Fraction``) are expanded exactly and may terminate
    early.  Floating values (``float``, ``gmpy2.mpfr``, ``mpmath.mpf``) are
    taken to within one ulp, and only digits shared by the whole uncertainty
    interval are returned.
    """
    lo, hi = _real_bracket(x)
    if not (0 < lo + (hi - lo) / 2 < 1):
        raise DomainError(f"x must lie in (0, 1), got {x!r}")
    lo = max(lo, Fraction(0))
    if hi >= 1:
        return []
    return _expand_bracket(lo.numerator, lo.denominator, hi.numerator, hi.denominator, n)


def sample_gauss_real(seed, precision_bits):
    """Gauss-distributed real ``2^u - 1`` for a uniform u drawn from ``seed``.

    u carries ``precision_bits`` random bits (rounded up to a multiple of 64)
    plus a half-ulp offset, so u is never 0 or 1.  The result is a
    ``gmpy2.mpfr`` with 64 guard bits.
    """
    if precision_bits < 64:
        raise DomainError("precision_bits must be at least 64")
    return _gauss_real(seeding.check_seed(seed), -(-precision_bits // 64))


def _gauss_real(seed, blocks):
    P = 64 * blocks
    U = seeding.random_bits(seed, blocks)
    with gmpy2.context(precision=P + 64):
        u = gmpy2.mpfr(2 * U + 1) / gmpy2.mpfr(2) ** (P + 1)
        return gmpy2.exp2(u) - 1


def _gauss_digits(seed, n, precision_bits):
    blocks = -(-max(precision_bits, 4 * n + 64) // 64)
    while True:
        x = _gauss_real(seed, blocks)
        P = 64 * blocks
        num, den = (int(v) for v in x.as_integer_ratio())
        # the limit real differs from x by < 0.7 * 2^-P; use 2^-P
        shift = max(den.bit_length() - 1, P)
        num <<= shift - (den.bit_length() - 1)
        den = 1 << shift
        step = 1 << (shift - P)
        lo, hi = max(num - step, 0), min(num + step, den - 1)
        digits = _expand_bracket(lo, den, hi, den, n)
        if len(digits) == n:
            return digits
        if blocks > 64 * max(n, 1):
            raise PrecisionExhaustedError(f"could not certify {n} digits for seed {seed}")
        blocks *= 2


# --------------------------------------------------------------------------
# path sampling


@dataclass(frozen=True)
class PartialQuotientPath:
    digits: tuple
    seed: int
    spec_id: str

    def __post_init__(self):
        if any(d < 1 for d in self.digits):
            raise DomainError("partial quotients must be >= 1")

    def __len__(self):
        return len(self.digits)


def _sample_chunk(spec, n, seeds):
    trials = len(seeds)
    if isinstance(spec, IID):
        return spec.dist.sample(seeding.uniforms(seeds, n))
    if isinstance(spec, Markov):
        u = seeding.uniforms(seeds, n)
        cum_init = np.cumsum(spec.initial)
        cum_init[-1] = 1.0
        cum = np.cumsum(np.asarray(spec.transition), axis=1)
        cum[:, -1] = 1.0
        out = np.empty((trials, n), dtype=np.int64)
        state = (u[:, 0:1] > cum_init[None, :]).sum(axis=1)
        out[:, 0] = state
        for i in range(1, n):
            state = (u[:, i : i + 1] > cum[state]).sum(axis=1)
            out[:, i] = state
        return out + 1
    if isinstance(spec, GaussStationary):
        out = np.empty((trials, n), dtype=np.int64)
        for t, s in enumerate(seeds):
            out[t] = _gauss_digits(int(s), n, spec.precision_bits)
        return out
    if isinstance(spec, Explicit):
        if len(spec.digits) < n:
            raise LengthError(f"explicit spec has {len(spec.digits)} digits, {n} requested")
        return np.tile(np.asarray(spec.digits[:n], dtype=np.int64), (trials, 1))
    raise ConfigurationError(f"unsupported spec {spec!r}")


def map_chunks(fn, seeds, threads=1):
    """Apply ``fn`` to fixed-size chunks of ``seeds`` and concatenate in order."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    chunks = [seeds[i : i + CHUNK] for i in range(0, len(seeds), CHUNK)] or [seeds]
    if threads <= 1 or len(chunks) == 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    return np.concatenate(parts, axis=0)


def sample_paths(spec, n, seeds, threads=1):
    """Digit matrix of shape ``(len(seeds), n)``; row t depends only on ``seeds[t]``."""
    if n < 1:
        raise DomainError("path length must be >= 1")
    if isinstance(spec, Explicit) and len(spec.digits) < n:
        raise LengthError(f"explicit spec has {len(spec.digits)} digits, {n} requested")
    return map_chunks(lambda c: _sample_chunk(spec, n, c), seeds, threads)


def sample_path(spec, n, seed):
    """Single realization ``(A_1, ..., A_n)``, a deterministic function of its inputs."""
    seed = seeding.check_seed(seed)
    if n < 1:
        raise DomainError("path length must be >= 1")
    if isinstance(spec, GaussStationary):
        digits = _gauss_digits(seed, n, spec.precision_bits)
    else:
        digits = _sample_chunk(spec, n, np.array([seed], dtype=np.uint64))[0].tolist()
    return PartialQuotientPath(tuple(int(d) for d in digits), seed, spec.spec_id)
