"""Security analysis of witness selection and passive-attack gathering time.

Ball volumes under the ring metric are exact integers. Binomial tails are
exact rationals when the selection probability is a ``Fraction`` and
high-precision ``mpmath`` floats otherwise, so failure probabilities far
below double-precision epsilon stay meaningful.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np

from .errors import ParameterError

BALANCED = "balanced"

#: Working precision (decimal digits) for non-rational probability tails.
PRECISION_DPS = 60


# -- ball volumes ------------------------------------------------------------


def max_ring_distance(r: int, b: int) -> int:
    return b * (r // 2)


def _one_dim_numerator(r: int) -> dict[int, int]:
    # Generating function of the 1-D ring-distance histogram is N(x) / (1 - x).
    m = r // 2
    terms: dict[int, int] = defaultdict(int)
    terms[0] += 1
    terms[1] += 1
    if r % 2 == 0:
        terms[m] -= 1
        terms[m + 1] -= 1
    else:
        terms[m + 1] -= 2
    return {e: c for e, c in terms.items() if c}


def _poly_mul(a: dict[int, int], b: dict[int, int]) -> dict[int, int]:
    out: dict[int, int] = defaultdict(int)
    for ea, ca in a.items():
        for eb, cb in b.items():
            out[ea + eb] += ca * cb
    return {e: c for e, c in out.items() if c}


def _numerator_power(r: int, b: int) -> dict[int, int]:
    base = _one_dim_numerator(r)
    result = {0: 1}
    for _ in range(b):
        result = _poly_mul(result, base)
    return result


def ball_volume(r: int, b: int, d: int) -> int:
    """Number of points of Z_r^b within ring (wrap-around L1) distance ``d`` of a point.

    The b-fold convolution of the one-dimensional distance histogram is taken
    in closed form: its cumulative generating function is
    ``N(x)^b / (1 - x)^(b + 1)`` with a four-term numerator ``N``, so the
    count is a short sum of binomial coefficients even for r = 2^16, b = 16.
    """
    if r < 2 or b < 1:
        raise ParameterError(f"need r >= 2 and b >= 1, got r={r}, b={b}")
    if not 0 <= d <= max_ring_distance(r, b):
        raise ParameterError(f"radius {d} outside [0, {max_ring_distance(r, b)}]")
    total = 0
    for e, coef in _numerator_power(r, b).items():
        if e <= d:
            total += coef * math.comb(d - e + b, b)
    return total


def selection_probability(r: int, b: int, d: int) -> Fraction:
    """Exact probability that a uniform point of Z_r^b falls in a radius-d ball."""
    return Fraction(ball_volume(r, b, d), r**b)


def radius_for_size(members: int, expected: float, r: int, b: int) -> int:
    """Largest radius whose expected selection count over ``members`` stays <= ``expected``."""
    dmax = max_ring_distance(r, b)
    if expected >= members:
        return dmax
    target = Fraction(expected) * r**b
    if members * ball_volume(r, b, 0) > target:
        return 0
    lo, hi = 0, dmax
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if members * ball_volume(r, b, mid) <= target:
            lo = mid
        else:
            hi = mid - 1
    return lo


# -- binomial tails ----------------------------------------------------------


def _coerce(p):
    if isinstance(p, (Fraction, int)):
        p = Fraction(p)
        exact = True
    else:
        with mpmath.workdps(PRECISION_DPS):
            p = mpmath.mpf(p)
        exact = False
    if not 0 <= p <= 1:
        raise ParameterError(f"probability {p} outside [0, 1]")
    return p, exact


def binomial_pmf(count: int, p) -> list:
    """Probability mass of Binomial(count, p) at 0..count (exact for rational p)."""
    p, exact = _coerce(p)
    if exact:
        return _pmf(count, p, Fraction(1), Fraction(0))
    with mpmath.workdps(PRECISION_DPS):
        return _pmf(count, p, mpmath.mpf(1), mpmath.mpf(0))


def _pmf(count, p, one, zero):
    if p == 0:
        return [one] + [zero] * count
    if p == 1:
        return [zero] * count + [one]
    ratio = p / (one - p)
    pmf = [(one - p) ** count]
    for i in range(count):
        pmf.append(pmf[-1] * (count - i) / (i + 1) * ratio)
    return pmf


def pr_liveness(correct: int, p, k: int):
    """Pr(#selected correct >= k) for ``correct`` independent candidates."""
    if k <= 0:
        return Fraction(1) if _coerce(p)[1] else mpmath.mpf(1)
    pmf = binomial_pmf(correct, p)
    with mpmath.workdps(PRECISION_DPS):
        return sum(pmf[k:], pmf[0] * 0)


def pr_safety(faulty: int, p, k: int):
    """Pr(#selected faulty < k) for ``faulty`` independent candidates."""
    pmf = binomial_pmf(faulty, p)
    with mpmath.workdps(PRECISION_DPS):
        return sum(pmf[: max(k, 0)], pmf[0] * 0)


# -- security parameter ------------------------------------------------------


@dataclass(frozen=True)
class SecurityQuery:
    """Parameters for one security-parameter evaluation.

    Exactly one of ``f`` (faulty count) or ``t`` (faulty ratio, floored to a
    count) must be given. ``d`` is the selection radius in ring-distance
    units and ``mu`` the history-uncertainty radius. ``c`` is carried for
    reference only; probabilities are normalised by r**b.
    """

    n: int
    d: int
    f: int | None = None
    t: float | None = None
    r: int = 2**16
    b: int = 16
    c: int = 256
    mu: int = 0
    k: int | str = BALANCED

    def __post_init__(self):
        if (self.f is None) == (self.t is None):
            raise ParameterError("give exactly one of f or t")
        if not 0 <= self.faulty <= self.n:
            raise ParameterError(f"faulty count {self.faulty} outside [0, {self.n}]")
        if self.mu < 0 or self.mu > self.d:
            raise ParameterError(f"need 0 <= mu <= d, got mu={self.mu}, d={self.d}")
        if not 0 <= self.d <= max_ring_distance(self.r, self.b):
            raise ParameterError(f"radius {self.d} out of range")
        if self.k != BALANCED and (not isinstance(self.k, int) or self.k < 0):
            raise ParameterError(f"k must be a nonnegative int or BALANCED, got {self.k!r}")

    @property
    def faulty(self) -> int:
        return self.f if self.f is not None else math.floor(self.t * self.n)

    @property
    def correct(self) -> int:
        return self.n - self.faulty

    @classmethod
    def for_witness_size(cls, n: int, expected_size: float, **kw) -> "SecurityQuery":
        """Build a query whose radius yields ``expected_size`` witnesses (rounded down)."""
        r = kw.get("r", cls.r)
        b = kw.get("b", cls.b)
        return cls(n=n, d=radius_for_size(n, expected_size, r, b), **kw)


def epsilon(query: SecurityQuery) -> tuple[float, int]:
    """Failure probability of a single witness set, and the threshold k used.

    With uncertainty ``mu`` the liveness term uses the shrunken radius
    d - mu and the safety term the grown radius d + mu (capped at the
    whole space), which is the conservative estimate.
    """
    q = query
    dmax = max_ring_distance(q.r, q.b)
    p_live = selection_probability(q.r, q.b, q.d - q.mu)
    p_safe = selection_probability(q.r, q.b, min(q.d + q.mu, dmax))
    with mpmath.workdps(PRECISION_DPS):
        live_pmf = binomial_pmf(q.correct, mpmath.mpf(p_live.numerator) / p_live.denominator)
        safe_pmf = binomial_pmf(q.faulty, mpmath.mpf(p_safe.numerator) / p_safe.denominator)
        # suffix sums of the correct pmf, prefix sums of the faulty pmf
        live_tail = [mpmath.mpf(0)] * (q.correct + 2)
        for i in range(q.correct, -1, -1):
            live_tail[i] = live_tail[i + 1] + live_pmf[i]
        safe_head = [mpmath.mpf(0)]
        for x in safe_pmf:
            safe_head.append(safe_head[-1] + x)

        def terms(k):
            live = live_tail[min(k, q.correct + 1)] if k > 0 else mpmath.mpf(1)
            safe = safe_head[min(k, q.faulty + 1)] if k > 0 else mpmath.mpf(0)
            return live, safe

        if q.k == BALANCED:
            best_k, best_gap = 1, None
            for k in range(1, max(q.correct, 1) + 1):
                live, safe = terms(k)
                gap = abs(safe - live)
                if best_gap is None or gap < best_gap:
                    best_k, best_gap = k, gap
            k = best_k
        else:
            k = q.k
        live, safe = terms(k)
        return float(1 - live * safe), k


def epsilon_sweep(n: int, sizes: Sequence[float], **kw) -> list[dict]:
    """Long-format rows of epsilon against expected witness-set size."""
    rows = []
    for w in sizes:
        q = SecurityQuery.for_witness_size(n, w, **kw)
        eps, k = epsilon(q)
        rows.append({"n": n, "faulty": q.faulty, "expected_size": w, "d": q.d,
                     "mu": q.mu, "k": k, "epsilon": eps})
    return rows


# -- passive attack: gathering time ------------------------------------------


@dataclass(frozen=True)
class GatheringQuery:
    """Passive-attack setting: f = t*n compromised walks, k = s * c*log2(n) needed.

    ``c`` is the witness-size coefficient (witness set of size c*log2 n) and
    ``q`` the L-infinity selection fraction, derived from n*q^b = c*log2 n
    unless given explicitly.
    """

    n: int
    b: int
    r: int
    c: float = 1.0
    t: float = 0.25
    s: float = 0.6
    q: float | None = None

    def __post_init__(self):
        if not 0 < self.t < 1 / 3:
            raise ParameterError(f"compromised ratio t={self.t} must lie in (0, 1/3)")
        if self.s < self.t:
            raise ParameterError(f"target ratio s={self.s} below t={self.t}: bound undefined")
        if self.n < 2 or self.b < 1 or self.r < 2:
            raise ParameterError("need n >= 2, b >= 1, r >= 2")

    @property
    def witness_size(self) -> float:
        return self.c * math.log2(self.n)

    @property
    def selection_fraction(self) -> float:
        if self.q is not None:
            return self.q
        return (self.witness_size / self.n) ** (1 / self.b)

    @property
    def compromised(self) -> int:
        return math.floor(self.t * self.n)

    @property
    def threshold(self) -> int:
        # floor matches "3 out of 25" for n=100, s=0.6, witness size log2 n
        return math.floor(self.s * self.witness_size + 1e-9)


def gathering_bound(q: GatheringQuery) -> float:
    """Approximate lower bound on expected gathering steps (closed form)."""
    if q.s == q.t:
        return 0.0
    return (q.b * q.r**2 / 4) * (q.witness_size / q.n) ** (2 / q.b) * (
        (q.s / q.t) ** (1 / q.b) - 1
    ) ** 2


def gathering_bound_stepwise(q: GatheringQuery) -> float:
    """The same bound assembled from the per-subspace quantile p_{k-1} and q.

    Kept as an independent route to cross-check ``gathering_bound``.
    """
    k = q.s * q.witness_size
    f = q.t * q.n
    p_prev = (k / f) ** (1 / q.b)
    qq = (q.witness_size / q.n) ** (1 / q.b)
    dist = q.r * p_prev / 2 - q.r * qq / 2
    return q.b * dist**2


@dataclass
class GatheringSamples:
    times: np.ndarray
    censored: np.ndarray
    threshold: int
    cap: int

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean()) if len(self.censored) else 0.0

    def fraction_at_least(self, bound: float) -> float:
        """Share of runs whose gathering time is >= bound; censored runs count as >=."""
        ok = (self.times >= bound) | self.censored
        return float(ok.mean())


def gathering_sim(q: GatheringQuery, runs: int, seed: int, cap: int,
                  k: int | None = None) -> GatheringSamples:
    """Simulate f independent walks on Z_r^b until k sit in the L-infinity box at once.

    Walks start uniformly; each step every walk moves one uniformly chosen
    coordinate by +-1. A run hitting ``cap`` steps is reported censored.
    """
    if runs < 1:
        raise ParameterError("runs must be >= 1")
    k = q.threshold if k is None else k
    f, b, r = q.compromised, q.b, q.r
    radius = r * q.selection_fraction / 2
    rng = np.random.default_rng(seed)
    times = np.full(runs, cap, dtype=np.int64)
    censored = np.ones(runs, dtype=bool)
    if k <= 0 or radius >= r // 2:
        return GatheringSamples(np.zeros(runs, dtype=np.int64), np.zeros(runs, dtype=bool), k, cap)

    pos = rng.integers(0, r, size=(runs, f, b))
    idx = np.arange(runs)
    walk_idx = np.arange(f)
    for step in range(cap + 1):
        dist = np.minimum(pos, r - pos).max(axis=2)
        hit = (dist <= radius).sum(axis=1) >= k
        if hit.any():
            times[idx[hit]] = step
            censored[idx[hit]] = False
            keep = ~hit
            pos, idx = pos[keep], idx[keep]
            if len(idx) == 0:
                break
        if step == cap:
            break
        m = len(idx)
        dims = rng.integers(0, b, size=(m, f))
        signs = rng.integers(0, 2, size=(m, f)) * 2 - 1
        rows = np.repeat(np.arange(m), f)
        cols = np.tile(walk_idx, m)
        pos[rows, cols, dims.ravel()] = (pos[rows, cols, dims.ravel()] + signs.ravel()) % r
    return GatheringSamples(times, censored, k, cap)
