"""Shared numerical plumbing: seeded streams, Poisson samplers, regression
and dense truncated Taylor series in one or two variables."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngStream",
    "make_rng_stream",
    "sample_poisson",
    "sample_zero_truncated_poisson",
    "RegressionResult",
    "linear_regression",
    "TruncatedSeries",
]


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Backed by numpy's PCG64 (period 2**128).  Distinct stream ids are derived
    through ``SeedSequence`` spawn keys, which gives non-overlapping,
    statistically independent sequences from a single user seed.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if stream_id < 0:
            raise ValueError("stream_id must be >= 0")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def exponential(self, scale=1.0, size=None):
        return self.generator.exponential(scale, size)

    def poisson(self, lam, size=None):
        return self.generator.poisson(lam, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def child(self, index: int) -> "RngStream":
        """Deterministic sub-stream, e.g. one per grid point or run."""
        sub = RngStream.__new__(RngStream)
        sub.seed = self.seed
        sub.stream_id = self.stream_id
        ss = np.random.SeedSequence(
            self.seed & (2**64 - 1), spawn_key=(self.stream_id, int(index))
        )
        sub.generator = np.random.Generator(np.random.PCG64(ss))
        return sub

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def make_rng_stream(seed: int, stream_id: int = 0) -> RngStream:
    return RngStream(seed, stream_id)


def sample_poisson(stream: RngStream, gamma: float, size=None):
    """Poisson(gamma) draws; ``gamma == 0`` always gives 0."""
    if not math.isfinite(gamma) or gamma < 0:
        raise ValueError(f"invalid Poisson mean {gamma!r}")
    return stream.poisson(gamma, size)


def sample_zero_truncated_poisson(stream: RngStream, gamma: float, size=None):
    """Draws from P(k) = gamma**k / (k! (e**gamma - 1)), k >= 1.

    Rejection from Poisson(gamma) when gamma >= 1, inverse-CDF walk otherwise.
    """
    if not (gamma > 0) or not math.isfinite(gamma):
        raise ValueError(f"zero-truncated Poisson needs gamma > 0, got {gamma!r}")
    scalar = size is None
    n = 1 if scalar else int(np.prod(size))
    if gamma >= 1.0:
        out = stream.poisson(gamma, n)
        bad = np.flatnonzero(out == 0)
        while bad.size:
            redo = stream.poisson(gamma, bad.size)
            out[bad] = redo
            bad = bad[redo == 0]
    else:
        u = stream.uniform(n)
        out = np.ones(n, dtype=np.int64)
        p = gamma / math.expm1(gamma)
        cdf = p
        k = 1
        active = u > cdf
        while active.any():
            k += 1
            p *= gamma / k
            cdf += p
            out[active] = k
            active &= u > cdf
            if p < 1e-300:
                break
    if scalar:
        return int(out[0])
    return out.reshape(size)


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    slope_stderr: float
    intercept_stderr: float
    root: float
    root_stderr: float = float("nan")
    n_points: int = 0
    r_squared: float = float("nan")

    def to_dict(self):
        return dict(self.__dict__)


def linear_regression(points, weights=None) -> RegressionResult:
    """Least-squares line through ``points`` = [(x, y), ...].

    ``weights`` are inverse variances.  Parameter errors use the fit
    covariance scaled by the reduced chi-square (unit weights give the
    textbook OLS errors).  ``root_stderr`` is the delta-method error of
    ``-intercept/slope`` including the slope/intercept covariance.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("need at least two (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.ptp(x) == 0:
        raise ValueError("degenerate regression: all abscissae identical")
    n = len(x)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative, one per point")

    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    s2 = (w * resid**2).sum() / (n - 2) if n > 2 else 0.0
    var_slope = s2 / sxx
    var_icpt = s2 * (1.0 / sw + xm**2 / sxx)
    cov = -xm * var_slope

    ss_tot = (w * (y - ym) ** 2).sum()
    r2 = 1.0 - (w * resid**2).sum() / ss_tot if ss_tot > 0 else 1.0

    if slope != 0:
        root = -intercept / slope
        g_b, g_s = -1.0 / slope, intercept / slope**2
        var_root = g_b**2 * var_icpt + g_s**2 * var_slope + 2 * g_b * g_s * cov
        root_err = math.sqrt(max(var_root, 0.0))
    else:
        root = root_err = float("nan")

    return RegressionResult(
        slope=float(slope),
        intercept=float(intercept),
        slope_stderr=math.sqrt(max(var_slope, 0.0)),
        intercept_stderr=math.sqrt(max(var_icpt, 0.0)),
        root=float(root),
        root_stderr=float(root_err),
        n_points=n,
        r_squared=float(r2),
    )


# ---------------------------------------------------------------------------
# Truncated Taylor series
# ---------------------------------------------------------------------------

MAX_SERIES_DEGREE = 12


class TruncatedSeries:
    """Dense Taylor polynomial in 1 or 2 variables, truncated at total degree.

    ``coeffs[i, j]`` holds the coefficient of ``u**i * v**j``; entries with
    ``i + j > degree`` are kept at zero.
    """

    __array_priority__ = 100  # so numpy scalars defer to our operators

    def __init__(self, coeffs, degree: int | None = None):
        c = np.array(coeffs, dtype=float)
        if c.ndim not in (1, 2):
            raise ValueError("only 1 or 2 variables are supported")
        if degree is None:
            degree = c.shape[0] - 1
        if degree > MAX_SERIES_DEGREE:
            raise ValueError(f"degree {degree} exceeds {MAX_SERIES_DEGREE}")
        shape = (degree + 1,) * c.ndim
        full = np.zeros(shape)
        sl = tuple(slice(0, min(a, degree + 1)) for a in c.shape)
        full[sl] = c[sl]
        self.degree = degree
        self.nvars = c.ndim
        self.coeffs = full * self._mask(self.nvars, degree)

    @staticmethod
    def _mask(nvars, degree):
        idx = np.arange(degree + 1)
        if nvars == 1:
            return np.ones(degree + 1)
        return (idx[:, None] + idx[None, :] <= degree).astype(float)

    # -- constructors -------------------------------------------------------
    @classmethod
    def constant(cls, value, nvars=1, degree=4):
        c = np.zeros((degree + 1,) * nvars)
        c[(0,) * nvars] = value
        return cls(c, degree)

    @classmethod
    def variable(cls, which=0, nvars=1, degree=4, at=0.0):
        """The series of ``at + u_which``."""
        c = np.zeros((degree + 1,) * nvars)
        c[(0,) * nvars] = at
        if degree >= 1:
            idx = [0] * nvars
            idx[which] = 1
            c[tuple(idx)] = 1.0
        return cls(c, degree)

    def _like(self, coeffs):
        return TruncatedSeries(coeffs, self.degree)

    def _coerce(self, other):
        if isinstance(other, TruncatedSeries):
            if other.nvars != self.nvars or other.degree != self.degree:
                raise ValueError("series shape mismatch")
            return other
        return TruncatedSeries.constant(float(other), self.nvars, self.degree)

    @property
    def const(self) -> float:
        return float(self.coeffs[(0,) * self.nvars])

    def coefficient(self, *multi_index) -> float:
        if len(multi_index) != self.nvars:
            raise ValueError("multi-index length must equal variable count")
        if sum(multi_index) > self.degree:
            return 0.0
        return float(self.coeffs[tuple(multi_index)])

    # -- ring operations ----------------------------------------------------
    def __add__(self, other):
        o = self._coerce(other)
        return self._like(self.coeffs + o.coeffs)

    __radd__ = __add__

    def __neg__(self):
        return self._like(-self.coeffs)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, TruncatedSeries):
            return self._like(self.coeffs * float(other))
        o = self._coerce(other)
        d = self.degree
        a, b = self.coeffs, o.coeffs
        if self.nvars == 1:
            out = np.convolve(a, b)[: d + 1]
        else:
            out = np.zeros_like(a)
            nz = np.argwhere(a != 0)
            for i, j in nz:
                out[i:, j:] += a[i, j] * b[: d + 1 - i, : d + 1 - j]
        return self._like(out)

    __rmul__ = __mul__

    def _nilpotent_split(self):
        c0 = self.const
        rest = self.coeffs.copy()
        rest[(0,) * self.nvars] = 0.0
        return c0, self._like(rest)

    def reciprocal(self):
        c0, n = self._nilpotent_split()
        if c0 == 0:
            raise ZeroDivisionError("series with zero constant term has no inverse")
        u = n * (1.0 / c0)
        terms = [(-1.0) ** k for k in range(self.degree + 1)]
        return u._shifted_eval(terms) * (1.0 / c0)

    def _shifted_eval(self, terms):
        # self is already nilpotent here; evaluate sum terms[k] self**k
        acc = TruncatedSeries.constant(terms[0], self.nvars, self.degree)
        pw = TruncatedSeries.constant(1.0, self.nvars, self.degree)
        for k in range(1, self.degree + 1):
            pw = pw * self
            acc = acc + pw * terms[k]
        return acc

    def __truediv__(self, other):
        if not isinstance(other, TruncatedSeries):
            return self._like(self.coeffs / float(other))
        return self * self._coerce(other).reciprocal()

    def __rtruediv__(self, other):
        return self._coerce(other) * self.reciprocal()

    def exp(self):
        c0, n = self._nilpotent_split()
        terms = [1.0 / math.factorial(k) for k in range(self.degree + 1)]
        return n._shifted_eval(terms) * math.exp(c0)

    def log(self):
        c0, n = self._nilpotent_split()
        if not c0 > 0:
            raise ValueError("log needs a positive constant term")
        u = n * (1.0 / c0)
        terms = [0.0] + [(-1.0) ** (k + 1) / k for k in range(1, self.degree + 1)]
        return u._shifted_eval(terms) + math.log(c0)

    def __pow__(self, p):
        if isinstance(p, (int, np.integer)) and p >= 0:
            result = TruncatedSeries.constant(1.0, self.nvars, self.degree)
            base = self
            e = int(p)
            while e:
                if e & 1:
                    result = result * base
                base = base * base
                e >>= 1
            return result
        return (self.log() * float(p)).exp()

    def __repr__(self):
        return f"TruncatedSeries(nvars={self.nvars}, degree={self.degree}, const={self.const!r})"
