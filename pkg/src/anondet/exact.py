"""Exact finite-n machinery for detection with hidden group labels.

The central object is the label-invariant "orbit" measure: the probability
that the empirical count vector of the n observations equals a given type,
which is the same for every assignment of sensors to groups with the
prescribed group sizes.  On top of it sit the mixture likelihood ratio test
(optimal), the GLRT (suboptimal here), exact worst-case error
probabilities, Neyman-Pearson calibration, and permutation-averaging of
arbitrary sequence tests.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.optimize import linprog

from .prob import (
    CompositeType,
    Dist,
    Profile,
    enumerate_types,
    kl,
    log2_factorial,
    logsumexp2,
    mixture,
)

NEG_INF = -math.inf

# Above this many allocation matrices the GLRT inner maximization switches
# from exhaustive enumeration to an LP over the transportation polytope.
GLRT_ENUM_LIMIT = 1_000_000

# Guard for operations that enumerate all d**n observation sequences.
SEQUENCE_ENUM_LIMIT = 4_000_000


class UndefinedRatioError(ValueError):
    """Both hypotheses assign zero mass to the requested type."""


class EnumerationLimitError(ValueError):
    """The requested brute-force enumeration is too large to run."""


@dataclass(frozen=True)
class AllocationMatrix:
    """A d x K matrix splitting each symbol's count among the K groups.

    Row sums reproduce the per-symbol counts of a type; column sums
    reproduce the group sizes.
    """

    c: tuple

    def __post_init__(self):
        rows = tuple(tuple(int(x) for x in row) for row in self.c)
        object.__setattr__(self, "c", rows)
        if any(x < 0 for row in rows for x in row):
            raise ValueError("negative allocation entry")

    def row_sums(self) -> tuple:
        return tuple(sum(row) for row in self.c)

    def col_sums(self) -> tuple:
        k = len(self.c[0])
        return tuple(sum(row[j] for row in self.c) for j in range(k))

    def check(self, symbol_counts: Sequence[int], nu: Sequence[int]) -> bool:
        return self.row_sums() == tuple(symbol_counts) and self.col_sums() == tuple(nu)


def _bounded_compositions(m: int, bounds: Sequence[int]) -> Iterator[tuple]:
    """All ways to split m into len(bounds) parts with part k <= bounds[k]."""
    k = len(bounds)
    suffix = [0] * (k + 1)
    for i in range(k - 1, -1, -1):
        suffix[i] = suffix[i + 1] + bounds[i]

    def rec(i: int, remaining: int):
        if i == k - 1:
            if remaining <= bounds[i]:
                yield (remaining,)
            return
        hi = min(bounds[i], remaining)
        lo = max(0, remaining - suffix[i + 1])
        for c in range(hi, lo - 1, -1):
            for tail in rec(i + 1, remaining - c):
                yield (c,) + tail

    if m > suffix[0]:
        return
    yield from rec(0, m)


def iter_allocation_matrices(
    symbol_counts: Sequence[int], nu: Sequence[int]
) -> Iterator[AllocationMatrix]:
    """Enumerate every allocation of symbol counts to groups of sizes nu."""
    symbol_counts = tuple(int(c) for c in symbol_counts)
    nu = tuple(int(v) for v in nu)
    if sum(symbol_counts) != sum(nu):
        return

    def rec(a: int, residual: tuple, rows: tuple):
        if a == len(symbol_counts):
            yield AllocationMatrix(rows)
            return
        for comp in _bounded_compositions(symbol_counts[a], residual):
            yield from rec(
                a + 1,
                tuple(r - c for r, c in zip(residual, comp)),
                rows + (comp,),
            )

    yield from rec(0, nu, ())


def count_allocation_matrices(symbol_counts: Sequence[int], nu: Sequence[int]) -> int:
    """Number of allocation matrices, via the same capacity DP."""
    symbol_counts = tuple(int(c) for c in symbol_counts)
    nu = tuple(int(v) for v in nu)
    if sum(symbol_counts) != sum(nu):
        return 0
    states = {nu: 1}
    for m in symbol_counts:
        new: dict = defaultdict(int)
        for residual, ways in states.items():
            for comp in _bounded_compositions(m, residual):
                key = tuple(r - c for r, c in zip(residual, comp))
                new[key] += ways
        states = dict(new)
        if not states:
            return 0
    return states.get(tuple(0 for _ in nu), 0)


def _log_probs(profile: Profile, theta: int) -> list:
    """log2 p[k](a) per group, -inf at zero-probability symbols."""
    out = []
    for dist in profile.dists(theta):
        out.append(
            [math.log2(x) if x > 0.0 else NEG_INF for x in dist.p]
        )
    return out


def _require_nu(profile: Profile) -> tuple:
    if profile.nu is None:
        raise ValueError("operation needs a profile with integer group sizes")
    return profile.nu


def orbit_log_prob(profile: Profile, theta: int, ctype: CompositeType) -> float:
    """Exact log2 probability that the observation type equals ``ctype``.

    This is the label-invariant pushforward measure: the value is the same
    under every assignment of sensors to groups with sizes ``profile.nu``.
    Computed by dynamic programming over remaining group capacities; the
    per-group multinomial weights are factored as log-factorials so the
    whole computation stays in the log domain.  Returns -inf when no
    allocation of the type's symbols to groups has positive probability.
    """
    nu = _require_nu(profile)
    if sum(nu) != ctype.n:
        raise ValueError("group sizes do not sum to the type's n")
    if ctype.d != profile.d:
        raise ValueError("alphabet size mismatch")
    logp = _log_probs(profile, theta)
    states = {nu: 0.0}
    for a, m in enumerate(ctype.counts):
        if m == 0:
            continue
        new: dict = defaultdict(list)
        for residual, logw in states.items():
            for comp in _bounded_compositions(m, residual):
                term = logw
                feasible = True
                for k, c in enumerate(comp):
                    if c == 0:
                        continue
                    lp = logp[k][a]
                    if lp == NEG_INF:
                        feasible = False
                        break
                    term += c * lp - log2_factorial(c)
                if feasible:
                    key = tuple(r - c for r, c in zip(residual, comp))
                    new[key].append(term)
        states = {key: logsumexp2(vals) for key, vals in new.items()}
        if not states:
            return NEG_INF
    value = states.get(tuple(0 for _ in nu))
    if value is None:
        return NEG_INF
    return value + math.fsum(log2_factorial(v) for v in nu)


def _dense_group_table(nu_k: int, dist: Dist) -> np.ndarray:
    """log2 multinomial(nu_k, p) over count vectors, dense on d-1 axes."""
    d = dist.d
    if d == 1:
        return np.zeros(())
    shape = (nu_k + 1,) * (d - 1)
    table = np.full(shape, NEG_INF)
    logp = [math.log2(x) if x > 0.0 else NEG_INF for x in dist.p]
    for ct in enumerate_types(nu_k, d):
        val = log2_factorial(nu_k)
        ok = True
        for c, lp in zip(ct.counts, logp):
            if c == 0:
                continue
            if lp == NEG_INF:
                ok = False
                break
            val += c * lp - log2_factorial(c)
        if ok:
            table[ct.counts[: d - 1]] = val
    return table


def _convolve_log_tables(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Log-domain convolution of two dense count-vector tables."""
    if a.size > b.size:
        a, b = b, a
    out_shape = tuple(x + y - 1 for x, y in zip(a.shape, b.shape))
    out = np.full(out_shape, NEG_INF)
    for idx in np.argwhere(np.isfinite(a)):
        key = tuple(int(i) for i in idx)
        window = tuple(slice(i, i + s) for i, s in zip(key, b.shape))
        region = out[window]
        np.logaddexp2(region, b + a[key], out=region)
    return out


@lru_cache(maxsize=256)
def orbit_log_table(profile: Profile, theta: int) -> dict:
    """log2 orbit probability for every type of length n, as a dict.

    Built by convolving the per-group multinomial count tables, which gives
    the sum over all splits of each type among the groups in one pass.
    Agrees with ``orbit_log_prob`` type by type.
    """
    nu = _require_nu(profile)
    n = sum(nu)
    d = profile.d
    dists = profile.dists(theta)
    acc = None
    for nu_k, dist in zip(nu, dists):
        if nu_k == 0:
            continue
        table = _dense_group_table(nu_k, dist)
        acc = table if acc is None else _convolve_log_tables(acc, table)
    out = {}
    if acc is None:
        # n == 0: the empty type has probability 1
        for ct in enumerate_types(n, d):
            out[ct.counts] = 0.0
        return out
    for ct in enumerate_types(n, d):
        idx = ct.counts[: d - 1]
        out[ct.counts] = float(acc[idx]) if d > 1 else 0.0
    return out


def log_mixture_ratio(profile: Profile, ctype: CompositeType) -> float:
    """log2 of the mixture likelihood ratio at a type.

    The ratio of the two orbit measures; for any sequence with this type it
    equals the ratio of summed product likelihoods over all group
    assignments.  Raises if both hypotheses give the type zero mass.
    """
    l1 = orbit_log_prob(profile, 1, ctype)
    l0 = orbit_log_prob(profile, 0, ctype)
    if l0 == NEG_INF and l1 == NEG_INF:
        raise UndefinedRatioError(f"type {ctype.counts} unreachable under both hypotheses")
    if l0 == NEG_INF:
        return math.inf
    if l1 == NEG_INF:
        return NEG_INF
    return l1 - l0


def mixture_ratio(profile: Profile, ctype: CompositeType) -> float:
    return math.exp2(log_mixture_ratio(profile, ctype))


def _sup_log_prob(profile: Profile, theta: int, ctype: CompositeType) -> float:
    """log2 of the largest sequence probability over group assignments.

    Maximizes sum c[a,k] * log2 p_k(a) over allocation matrices: exhaustive
    enumeration at desk scale, otherwise an LP over the transportation
    polytope (whose vertices are integral).
    """
    nu = _require_nu(profile)
    if sum(nu) != ctype.n:
        raise ValueError("group sizes do not sum to the type's n")
    logp = _log_probs(profile, theta)
    d, K = ctype.d, profile.K
    if count_allocation_matrices(ctype.counts, nu) <= GLRT_ENUM_LIMIT:
        best = NEG_INF
        for alloc in iter_allocation_matrices(ctype.counts, nu):
            total = 0.0
            ok = True
            for a in range(d):
                for k in range(K):
                    c = alloc.c[a][k]
                    if c == 0:
                        continue
                    lp = logp[k][a]
                    if lp == NEG_INF:
                        ok = False
                        break
                    total += c * lp
                if not ok:
                    break
            if ok and total > best:
                best = total
        return best
    # LP fallback: variables are the allowed cells (positive probability)
    cells = [(a, k) for a in range(d) for k in range(K) if logp[k][a] != NEG_INF]
    if not cells:
        return NEG_INF
    cost = [-logp[k][a] for a, k in cells]
    a_eq = []
    b_eq = []
    for a in range(d):
        a_eq.append([1.0 if ca == a else 0.0 for ca, _ in cells])
        b_eq.append(float(ctype.counts[a]))
    for k in range(K):
        a_eq.append([1.0 if ck == k else 0.0 for _, ck in cells])
        b_eq.append(float(nu[k]))
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * len(cells), method="highs")
    if not res.success:
        return NEG_INF
    return -res.fun


def log_glrt_ratio(profile: Profile, ctype: CompositeType) -> float:
    """log2 of the ratio of per-hypothesis best-assignment likelihoods."""
    s1 = _sup_log_prob(profile, 1, ctype)
    s0 = _sup_log_prob(profile, 0, ctype)
    if s0 == NEG_INF and s1 == NEG_INF:
        raise UndefinedRatioError(f"type {ctype.counts} unreachable under both hypotheses")
    if s0 == NEG_INF:
        return math.inf
    if s1 == NEG_INF:
        return NEG_INF
    return s1 - s0


def glrt_ratio(profile: Profile, ctype: CompositeType) -> float:
    return math.exp2(log_glrt_ratio(profile, ctype))


@dataclass(frozen=True)
class TestTable:
    """A symmetric test: one acceptance value in [0,1] per type.

    ``tau`` and ``gamma`` record the threshold and tie randomization when
    the table came from Neyman-Pearson calibration.
    """

    values: dict
    n: int
    d: int
    tau: float | None = None
    gamma: float | None = None

    def phi(self, ctype: CompositeType) -> float:
        return self.values[ctype.counts]


@dataclass(frozen=True)
class ErrorPoint:
    """Worst-case type-I (pf) and type-II (pm) error probabilities."""

    pf: float
    pm: float


def _stat_per_type(profile: Profile, statistic: str) -> tuple:
    """(reachable stat dict, mass-under-0 dict, unreachable counts list)."""
    table0 = orbit_log_table(profile, 0)
    table1 = orbit_log_table(profile, 1)
    stats = {}
    mass0 = {}
    unreachable = []
    if statistic == "glrt":
        nu = profile.nu
        n = sum(nu)
        sup = {
            theta: {
                ct.counts: _sup_log_prob(profile, theta, ct)
                for ct in enumerate_types(n, profile.d)
            }
            for theta in (0, 1)
        }
    for counts, l0 in table0.items():
        l1 = table1[counts]
        if l0 == NEG_INF and l1 == NEG_INF:
            unreachable.append(counts)
            continue
        if statistic == "mixture":
            num, den = l1, l0
        elif statistic == "glrt":
            num, den = sup[1][counts], sup[0][counts]
        else:
            raise ValueError(f"unknown statistic {statistic!r}")
        if den == NEG_INF:
            stat = math.inf
        elif num == NEG_INF:
            stat = NEG_INF
        else:
            stat = num - den
        stats[counts] = stat
        mass0[counts] = 0.0 if l0 == NEG_INF else math.exp2(l0)
    return stats, mass0, unreachable


def calibrate_np(profile: Profile, epsilon: float, statistic: str = "mixture") -> TestTable:
    """Threshold-and-randomize calibration to worst-case type-I error epsilon.

    Sorts types by the chosen statistic (mixture likelihood ratio by
    default, GLRT ratio as the documented suboptimal alternative), then
    picks the threshold and the shared tie randomization gamma so the
    type-I error equals epsilon exactly.  Types that are unreachable under
    both hypotheses carry no mass and are assigned acceptance value 1.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must be inside (0,1)")
    nu = _require_nu(profile)
    n = sum(nu)
    stats, mass0, unreachable = _stat_per_type(profile, statistic)

    blocks: dict = defaultdict(list)
    for counts, stat in stats.items():
        blocks[stat].append(counts)
    ordered = sorted(blocks.keys(), reverse=True)

    phi: dict = {}
    cum = 0.0
    tau = None
    gamma_val = None
    for stat in ordered:
        members = blocks[stat]
        q = math.fsum(mass0[c] for c in members)
        if tau is None:
            if cum + q <= epsilon:
                for c in members:
                    phi[c] = 1.0
                cum += q
                continue
            tau = stat
            gamma_val = (epsilon - cum) / q
            for c in members:
                phi[c] = gamma_val
        else:
            for c in members:
                phi[c] = 0.0
    if tau is None:
        # total reachable mass is 1 > epsilon, so a break always happens
        raise AssertionError("calibration failed to cross epsilon")
    for counts in unreachable:
        phi[counts] = 1.0
    ordered_phi = {ct.counts: phi[ct.counts] for ct in enumerate_types(n, profile.d)}
    return TestTable(ordered_phi, n, profile.d, tau=math.exp2(tau), gamma=gamma_val)


def exact_errors(profile: Profile, table: TestTable) -> ErrorPoint:
    """Exact worst-case errors of a symmetric test.

    For tests that depend only on the type, the worst case over group
    assignments collapses to the single orbit measure, so the errors are
    plain expectations under it.
    """
    t0 = orbit_log_table(profile, 0)
    t1 = orbit_log_table(profile, 1)
    pf_terms = []
    pm_terms = []
    for counts, phi in table.values.items():
        l0 = t0[counts]
        l1 = t1[counts]
        if l0 != NEG_INF and phi != 0.0:
            pf_terms.append(math.exp2(l0) * phi)
        if l1 != NEG_INF and phi != 1.0:
            pm_terms.append(math.exp2(l1) * (1.0 - phi))
    return ErrorPoint(math.fsum(pf_terms), math.fsum(pm_terms))


def iter_labelings(nu: Sequence[int]) -> Iterator[tuple]:
    """All assignments of n positions to groups with the given sizes."""
    nu = tuple(int(v) for v in nu)
    n = sum(nu)
    K = len(nu)

    def rec(remaining: list, prefix: list):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for k in range(K):
            if remaining[k] > 0:
                remaining[k] -= 1
                prefix.append(k)
                yield from rec(remaining, prefix)
                prefix.pop()
                remaining[k] += 1

    yield from rec(list(nu), [])


def _check_sequence_enum(profile: Profile) -> tuple:
    nu = _require_nu(profile)
    n = sum(nu)
    if profile.d**n > SEQUENCE_ENUM_LIMIT:
        raise EnumerationLimitError(
            f"enumerating {profile.d}**{n} sequences exceeds the supported scale"
        )
    return nu, n


def symmetrize(profile: Profile, psi: Callable[[tuple], float]) -> TestTable:
    """Permutation-average an arbitrary sequence test into a type test.

    The average of psi over all coordinate permutations depends only on the
    type, and equals the plain average of psi over the type class.  The
    result never has worse worst-case errors than psi.
    """
    nu, n = _check_sequence_enum(profile)
    d = profile.d
    sums: dict = defaultdict(float)
    sizes: dict = defaultdict(int)
    for seq in product(range(d), repeat=n):
        counts = CompositeType.from_sequence(seq, d).counts
        sums[counts] += float(psi(seq))
        sizes[counts] += 1
    values = {
        ct.counts: sums[ct.counts] / sizes[ct.counts] for ct in enumerate_types(n, d)
    }
    return TestTable(values, n, d)


def worst_case_errors(profile: Profile, psi: Callable[[tuple], float]) -> ErrorPoint:
    """Brute-force worst-case errors of an arbitrary sequence test.

    Enumerates every group assignment and every observation sequence; only
    meant for validating symmetrization at tiny n.
    """
    nu, n = _check_sequence_enum(profile)
    d = profile.d
    seqs = list(product(range(d), repeat=n))
    vals = [float(psi(seq)) for seq in seqs]
    worst_pf = 0.0
    worst_pm = 0.0
    for sigma in iter_labelings(nu):
        dists = [profile.p0[k].p for k in sigma]
        pf = math.fsum(
            v * math.prod(dists[i][x] for i, x in enumerate(seq))
            for seq, v in zip(seqs, vals)
            if v != 0.0
        )
        dists = [profile.p1[k].p for k in sigma]
        pm = math.fsum(
            (1.0 - v) * math.prod(dists[i][x] for i, x in enumerate(seq))
            for seq, v in zip(seqs, vals)
            if v != 1.0
        )
        worst_pf = max(worst_pf, pf)
        worst_pm = max(worst_pm, pm)
    return ErrorPoint(worst_pf, worst_pm)


def hoeffding_test(profile: Profile, ctype: CompositeType, delta: float) -> bool:
    """Accept hypothesis 1 when the type is KL-far from the null mixture."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return kl(ctype.freq(), mixture(profile, 0)) > delta


def min_type2_error(profile: Profile, epsilon: float) -> float:
    """The smallest worst-case type-II error at type-I level epsilon.

    Achieved by the calibrated mixture likelihood ratio test, which is
    optimal among all tests, symmetric or not.
    """
    return exact_errors(profile, calibrate_np(profile, epsilon)).pm
