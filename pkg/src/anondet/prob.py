"""Finite-alphabet probability primitives.

Distributions, empirical count vectors (types), KL divergence, mixtures,
and the container describing a grouped-sensor detection instance.  All
divergences and log probabilities are base-2 (bits).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

LN2 = math.log(2.0)
SUM_TOL = 1e-12


def logsumexp2(terms: Iterable[float]) -> float:
    """log2 of a sum of 2**t terms, with max extraction for stability.

    Empty input or all -inf terms give -inf.
    """
    ts = [t for t in terms if t != -math.inf]
    if not ts:
        return -math.inf
    m = max(ts)
    if m == math.inf:
        return math.inf
    return m + math.log2(math.fsum(math.exp2(t - m) for t in ts))


def log2_factorial(n: int) -> float:
    return math.lgamma(n + 1) / LN2


def log2_multinomial(n: int, counts: Sequence[int]) -> float:
    """log2 of the multinomial coefficient n! / prod(c_i!)."""
    return (
        math.lgamma(n + 1) - math.fsum(math.lgamma(c + 1) for c in counts)
    ) / LN2


@dataclass(frozen=True)
class Alphabet:
    """A finite ordered observation alphabet.

    The symbol order is the total order used everywhere downstream; vectors
    over the alphabet are indexed in this order.
    """

    symbols: tuple

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(symbols) < 2:
            raise ValueError("alphabet needs at least two symbols")
        if len(set(symbols)) != len(symbols):
            raise ValueError("alphabet symbols must be distinct")

    @property
    def d(self) -> int:
        return len(self.symbols)

    def index(self, symbol) -> int:
        return self.symbols.index(symbol)


@dataclass(frozen=True)
class Dist:
    """A probability vector over a finite ordered alphabet.

    Entries must be nonnegative and sum to 1 within ``SUM_TOL``; the vector
    is renormalized exactly on construction so decimal literals from config
    files round-trip cleanly.  Zero entries are allowed (0*log 0 = 0
    conventions apply downstream).  Immutable and hashable.
    """

    p: tuple

    def __post_init__(self):
        vals = tuple(float(x) for x in self.p)
        if len(vals) < 1:
            raise ValueError("empty probability vector")
        if any(x < 0.0 for x in vals):
            raise ValueError(f"negative probability entry in {vals}")
        total = math.fsum(vals)
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "p", tuple(x / total for x in vals))

    @classmethod
    def bernoulli(cls, p: float) -> "Dist":
        """Binary distribution with P(symbol 1) = p."""
        return cls((1.0 - p, p))

    @classmethod
    def point_mass(cls, index: int, d: int) -> "Dist":
        return cls(tuple(1.0 if i == index else 0.0 for i in range(d)))

    @classmethod
    def uniform(cls, d: int) -> "Dist":
        return cls((1.0 / d,) * d)

    @property
    def d(self) -> int:
        return len(self.p)

    def __getitem__(self, i: int) -> float:
        return self.p[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.p, dtype=float)

    def support(self) -> tuple:
        return tuple(i for i, x in enumerate(self.p) if x > 0.0)

    def l1_distance(self, other: "Dist") -> float:
        return math.fsum(abs(a - b) for a, b in zip(self.p, other.p))


def kl(p: Dist, q: Dist) -> float:
    """KL divergence D(p || q) in bits.

    Uses the 0*log(0/q) = 0 convention and returns +inf exactly when some
    symbol has p(x) > 0 but q(x) = 0.
    """
    if p.d != q.d:
        raise ValueError("dimension mismatch")
    terms = []
    for pi, qi in zip(p.p, q.p):
        if pi == 0.0:
            continue
        if qi == 0.0:
            return math.inf
        terms.append(pi * math.log2(pi / qi))
    return math.fsum(terms)


@dataclass(frozen=True)
class CompositeType:
    """An empirical count vector: ``counts`` occurrences over n draws.

    This is the image of a length-n observation sequence under the
    order-forgetting map; counts/n is the empirical distribution.
    """

    counts: tuple
    n: int

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise ValueError("negative count")
        if sum(counts) != self.n:
            raise ValueError(f"counts {counts} do not sum to n={self.n}")

    @classmethod
    def from_sequence(cls, seq: Sequence[int], d: int) -> "CompositeType":
        counts = [0] * d
        for x in seq:
            counts[x] += 1
        return cls(tuple(counts), len(seq))

    @property
    def d(self) -> int:
        return len(self.counts)

    def freq(self) -> Dist:
        if self.n == 0:
            raise ValueError("empirical distribution undefined for n=0")
        return Dist(tuple(c / self.n for c in self.counts))


def enumerate_types(n: int, d: int) -> Iterator[CompositeType]:
    """Yield every count vector of d nonnegative integers summing to n.

    Deterministic order: lexicographically decreasing in the first
    coordinate, then recursively in the rest.  The number of vectors is
    C(n+d-1, d-1).
    """
    if n < 0 or d < 1:
        raise ValueError("need n >= 0 and d >= 1")

    def rec(remaining: int, slots: int):
        if slots == 1:
            yield (remaining,)
            return
        for c in range(remaining, -1, -1):
            for tail in rec(remaining - c, slots - 1):
                yield (c,) + tail

    for counts in rec(n, d):
        yield CompositeType(counts, n)


def num_types(n: int, d: int) -> int:
    return math.comb(n + d - 1, d - 1)


def type_class_log_prob(ctype: CompositeType, q: Dist) -> float:
    """Exact log2 probability that n iid draws from q have type ``ctype``.

    Equals log2 multinomial(n; counts) + sum counts * log2 q, and satisfies
    -n*D(counts/n || q) - d*log2(n+1) <= value <= -n*D(counts/n || q).
    """
    if ctype.n < 1:
        raise ValueError("need n >= 1")
    if ctype.d != q.d:
        raise ValueError("dimension mismatch")
    total = log2_multinomial(ctype.n, ctype.counts)
    for c, qi in zip(ctype.counts, q.p):
        if c == 0:
            continue
        if qi == 0.0:
            return -math.inf
        total += c * math.log2(qi)
    return total


@dataclass(frozen=True)
class Profile:
    """A grouped-sensor detection instance.

    K groups of sensors; group k draws iid from ``p0[k]`` under hypothesis 0
    and from ``p1[k]`` under hypothesis 1.  ``alpha`` holds the asymptotic
    group fractions; ``nu`` optionally holds exact integer group sizes for
    finite-n computations (nu_k/n then stands in for alpha_k).
    """

    p0: tuple
    p1: tuple
    alpha: tuple
    nu: tuple | None = None

    def __post_init__(self):
        p0 = tuple(self.p0)
        p1 = tuple(self.p1)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        if not p0 or len(p0) != len(p1):
            raise ValueError("p0 and p1 must be equal-length, nonempty")
        d = p0[0].d
        if any(dist.d != d for dist in p0 + p1):
            raise ValueError("all distributions must share one alphabet size")
        alpha = tuple(float(a) for a in self.alpha)
        if len(alpha) != len(p0):
            raise ValueError("alpha length must match group count")
        if any(a < 0.0 for a in alpha):
            raise ValueError("negative group fraction")
        total = math.fsum(alpha)
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"group fractions sum to {total!r}, not 1")
        object.__setattr__(self, "alpha", tuple(a / total for a in alpha))
        if self.nu is not None:
            nu = tuple(int(v) for v in self.nu)
            if len(nu) != len(p0):
                raise ValueError("nu length must match group count")
            if any(v < 0 for v in nu):
                raise ValueError("negative group size")
            object.__setattr__(self, "nu", nu)

    @classmethod
    def from_counts(cls, p0, p1, nu) -> "Profile":
        """Build a finite-n profile with alpha_k = nu_k / n."""
        nu = tuple(int(v) for v in nu)
        n = sum(nu)
        if n <= 0:
            raise ValueError("need at least one sensor")
        return cls(tuple(p0), tuple(p1), tuple(v / n for v in nu), nu)

    @property
    def K(self) -> int:
        return len(self.p0)

    @property
    def d(self) -> int:
        return self.p0[0].d

    @property
    def n(self) -> int:
        if self.nu is None:
            raise ValueError("profile has no finite-n group sizes")
        return sum(self.nu)

    def dists(self, theta: int) -> tuple:
        if theta == 0:
            return self.p0
        if theta == 1:
            return self.p1
        raise ValueError("theta must be 0 or 1")

    def with_nu(self, nu) -> "Profile":
        return Profile(self.p0, self.p1, self.alpha, tuple(int(v) for v in nu))

    def at_size(self, n: int) -> "Profile":
        """Attach integer group sizes for total size n via largest remainders."""
        return self.with_nu(group_counts(self.alpha, n))

    def swapped(self) -> "Profile":
        """The instance with the two hypotheses exchanged."""
        return Profile(self.p1, self.p0, self.alpha, self.nu)

    def subset(self, indices: Sequence[int]) -> "Profile":
        """Sub-instance on a group subset, fractions renormalized."""
        idx = tuple(indices)
        if not idx:
            raise ValueError("empty group subset")
        mass = math.fsum(self.alpha[k] for k in idx)
        if mass <= 0.0:
            raise ValueError("group subset carries no fraction mass")
        return Profile(
            tuple(self.p0[k] for k in idx),
            tuple(self.p1[k] for k in idx),
            tuple(self.alpha[k] / mass for k in idx),
            None,
        )


def mixture(profile: Profile, theta: int) -> Dist:
    """The fraction-weighted average of the group distributions."""
    dists = profile.dists(theta)
    acc = np.zeros(profile.d)
    for a, dist in zip(profile.alpha, dists):
        acc += a * dist.as_array()
    return Dist(tuple(acc))


def group_counts(alpha: Sequence[float], n: int) -> tuple:
    """Integer group sizes summing to n, proportional to alpha.

    Largest-remainder rounding with index order breaking ties, so the
    result is deterministic.
    """
    alpha = [float(a) for a in alpha]
    raw = [a * n for a in alpha]
    base = [int(math.floor(r)) for r in raw]
    short = n - sum(base)
    order = sorted(range(len(alpha)), key=lambda k: (base[k] - raw[k], k))
    for k in order[:short]:
        base[k] += 1
    return tuple(base)
