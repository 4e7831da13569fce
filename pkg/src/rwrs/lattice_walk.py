"""Centered integer-lattice random walks and their local-time profiles.

A walk of length n occupies positions S_0, ..., S_{n-1}; its local time at
site y is the visit count N_n(y).  Walks are simulated in chunks so only
the profile (sparse counts), never the full path, has to be materialized
for long runs.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "StepLaw",
    "LocalTimeProfile",
    "ProfileStats",
    "simulate_local_times",
    "mutual_inner",
    "profile_stats",
    "merge_profiles",
    "profiles_from_steps",
]

_CHUNK = 1 << 20


def _gcd_all(values):
    g = 0
    for v in values:
        g = math.gcd(g, abs(int(v)))
    return g


@dataclass(frozen=True)
class StepLaw:
    """Finite-support step distribution: centered, aperiodic on the integers."""

    support: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.support) != len(self.probs) or not self.support:
            raise ValueError("support and probs must be nonempty and same length")
        if list(self.support) != sorted(set(self.support)):
            raise ValueError("support must be sorted distinct integers")
        if any(p <= 0 for p in self.probs):
            raise ValueError("all probabilities must be positive")
        exact = all(isinstance(p, Fraction) for p in self.probs)
        total = sum(self.probs)
        mean = sum(x * p for x, p in zip(self.support, self.probs))
        if exact:
            if total != 1:
                raise ValueError("probabilities must sum to 1")
            if mean != 0:
                raise ValueError("step law must be centered (exact rational check)")
        else:
            if abs(total - 1.0) > 1e-12:
                raise ValueError("probabilities must sum to 1 within 1e-12")
            if abs(mean) > 1e-12:
                raise ValueError("step law must be centered")
        # aperiodicity: the subgroup generated by the support is all of Z
        if _gcd_all(self.support) != 1:
            raise ValueError("support must generate the integers (gcd 1)")

    @classmethod
    def simple(cls):
        return cls((-1, 1), (Fraction(1, 2), Fraction(1, 2)))

    @classmethod
    def lazy(cls, hold=Fraction(1, 2)):
        move = (1 - hold) / 2
        return cls((-1, 0, 1), (move, hold, move))

    @classmethod
    def from_dict(cls, pmf):
        items = sorted(pmf.items())
        return cls(tuple(x for x, _ in items), tuple(p for _, p in items))

    @property
    def variance(self):
        return float(sum(x * x * p for x, p in zip(self.support, self.probs)))

    @property
    def max_step(self):
        return max(abs(x) for x in self.support)

    def float_probs(self):
        return np.array([float(p) for p in self.probs])

    def sample_steps(self, stream, size):
        probs = self.float_probs()
        idx = stream.gen.choice(len(self.support), size=size, p=probs)
        return np.asarray(self.support, dtype=np.int64)[idx]


@dataclass(frozen=True)
class LocalTimeProfile:
    """Sparse local-time profile of one walk segment, frozen in sorted form."""

    sites: np.ndarray
    counts: np.ndarray
    length: int
    start: int

    def __post_init__(self):
        object.__setattr__(self, "sites", np.asarray(self.sites, dtype=np.int64))
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        if self.sites.size != self.counts.size:
            raise ValueError("sites and counts must match")
        if self.counts.size and int(self.counts.min()) <= 0:
            raise ValueError("occupied sites must have positive counts")
        if int(self.counts.sum()) != self.length:
            raise ValueError("counts must sum to the segment length")

    @classmethod
    def from_dict(cls, counts, start=0):
        sites = np.array(sorted(counts), dtype=np.int64)
        vals = np.array([counts[int(s)] for s in sites], dtype=np.int64)
        return cls(sites, vals, int(vals.sum()), start)

    def as_dict(self):
        return {int(s): int(c) for s, c in zip(self.sites, self.counts)}

    def count_at(self, site):
        i = np.searchsorted(self.sites, site)
        if i < self.sites.size and self.sites[i] == site:
            return int(self.counts[i])
        return 0


@dataclass(frozen=True)
class ProfileStats:
    """Range, sup and discrete 1/2-Hoelder statistic of one profile."""

    range_size: int
    sup_count: int
    holder_half: float


def profiles_from_steps(steps, breakpoints, start=0):
    """Segment local-time profiles of the walk realized by `steps`.

    Positions are S_0 = start, S_1, ..., S_{B-1} with B the last breakpoint;
    segment i covers times [b_{i-1}, b_i).
    """
    steps = np.asarray(steps, dtype=np.int64)
    breakpoints = list(breakpoints)
    total = breakpoints[-1]
    if steps.size < total - 1:
        raise ValueError("not enough steps for the requested breakpoints")
    positions = np.empty(total, dtype=np.int64)
    positions[0] = start
    if total > 1:
        np.cumsum(steps[: total - 1], out=positions[1:])
        positions[1:] += start
    profiles = []
    prev = 0
    for b in breakpoints:
        seg = positions[prev:b]
        sites, counts = np.unique(seg, return_counts=True)
        profiles.append(LocalTimeProfile(sites, counts, b - prev, int(seg[0])))
        prev = b
    return profiles


def simulate_local_times(law, breakpoints, stream):
    """Simulate one walk and return the local-time profile of each segment.

    Long walks are processed in chunks of 2**20 steps so memory stays
    O(occupied range), not O(n).
    """
    breakpoints = [int(b) for b in breakpoints]
    if not breakpoints or any(b <= 0 for b in breakpoints):
        raise ValueError("breakpoints must be nonempty positive integers")
    if any(b2 <= b1 for b1, b2 in zip(breakpoints, breakpoints[1:])):
        raise ValueError("breakpoints must be strictly increasing")
    total = breakpoints[-1]
    if total <= _CHUNK:
        steps = law.sample_steps(stream, total - 1) if total > 1 else []
        return profiles_from_steps(steps, breakpoints)

    # chunked accumulation into per-segment dicts
    seg_counts = [dict() for _ in breakpoints]
    seg_start = [None] * len(breakpoints)
    pos = 0
    t = 0
    seg = 0
    while t < total:
        take = min(_CHUNK, total - t)
        chunk = np.empty(take, dtype=np.int64)
        chunk[0] = pos
        if take > 1:
            steps = law.sample_steps(stream, take - 1)
            np.cumsum(steps, out=chunk[1:])
            chunk[1:] += pos
        lo = 0
        while lo < take:
            hi = min(take, breakpoints[seg] - t)
            part = chunk[lo:hi]
            if seg_start[seg] is None:
                seg_start[seg] = int(part[0])
            sites, counts = np.unique(part, return_counts=True)
            d = seg_counts[seg]
            for s, c in zip(sites.tolist(), counts.tolist()):
                d[s] = d.get(s, 0) + c
            lo = hi
            if t + lo >= breakpoints[seg] and seg < len(breakpoints) - 1:
                seg += 1
        # position at the start of the next chunk: one more step past chunk end
        if t + take < total:
            pos = int(chunk[-1] + law.sample_steps(stream, 1)[0])
        t += take
    prev = 0
    out = []
    for i, b in enumerate(breakpoints):
        prof = LocalTimeProfile.from_dict(seg_counts[i], start=seg_start[i])
        if prof.length != b - prev:
            raise AssertionError("segment mass mismatch")
        out.append(prof)
        prev = b
    return out


def mutual_inner(p, q):
    """Sum over sites of p(y) * q(y); symmetric, nonnegative integer."""
    common, ip, iq = np.intersect1d(
        p.sites, q.sites, assume_unique=True, return_indices=True
    )
    if common.size == 0:
        return 0
    return int(np.dot(p.counts[ip], q.counts[iq]))


def merge_profiles(p, q):
    """Profile of the concatenated walk segments (counts add sitewise)."""
    sites = np.union1d(p.sites, q.sites)
    counts = np.zeros(sites.size, dtype=np.int64)
    counts[np.searchsorted(sites, p.sites)] += p.counts
    counts[np.searchsorted(sites, q.sites)] += q.counts
    return LocalTimeProfile(sites, counts, p.length + q.length, p.start)


def profile_stats(p, window=32):
    """Range, sup and the local 1/2-Hoelder quotient of one profile.

    The Hoelder scan covers every integer site in [min, max] of the occupied
    span (unoccupied gaps count 0) and site pairs up to `window` apart; the
    statistic is dominated by nearby sites, so a full quadratic scan would
    be wasted work.
    """
    lo, hi = int(p.sites[0]), int(p.sites[-1])
    dense = np.zeros(hi - lo + 1, dtype=np.int64)
    dense[p.sites - lo] = p.counts
    best = 0.0
    for lag in range(1, min(window, dense.size - 1) + 1):
        diff = np.abs(dense[lag:] - dense[:-lag]).max() if dense.size > lag else 0
        best = max(best, diff / math.sqrt(lag))
    return ProfileStats(
        range_size=int(p.sites.size),
        sup_count=int(p.counts.max()),
        holder_half=float(best),
    )
