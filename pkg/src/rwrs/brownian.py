"""Brownian local-time fields, Gram functionals, and squared-Bessel checks.

Local-time fields are built from an embedded simple random walk: the field
at level x over horizon T is N_[mT]([sqrt(m) x]) / sqrt(m) on the lattice
grid of spacing m^(-1/2).  This keeps local times exactly integer-valued
(no kernel bandwidth) and is the same coupling that links the discrete and
continuum sides of the scaling results verified here.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ive

from .errors import BudgetExceededError, RejectionRateError
from .simkit import Estimate, estimate_from_values

__all__ = [
    "LocalTimeField",
    "GramSample",
    "sample_local_time_fields",
    "gram_of_fields",
    "estimate_C",
    "CResult",
    "besq0_step",
    "besq0_total_integral",
    "besq0_density",
    "besq0_extinction",
    "ray_knight_profile",
    "ray_knight_profile_fast",
    "origin_local_time_at_range_exit",
    "hitting_time_density",
    "dump_fields_csv",
]

_EIG_CLAMP = 1e-14
_CHUNK = 1 << 22


@dataclass(frozen=True)
class LocalTimeField:
    """Local-time approximation on a uniform grid of spacing h = m^(-1/2).

    `origin` is the lattice site of the first grid node; node j sits at
    x = (origin + j) * h.  `horizon` is the time mass the field carries
    (the increment duration for increment fields).
    """

    origin: int
    h: float
    values: np.ndarray
    horizon: float
    fineness: int

    def mass(self):
        return self.h * float(self.values.sum())

    def norm2_sq(self):
        return self.h * float(np.dot(self.values, self.values))

    def grid(self):
        return (self.origin + np.arange(self.values.size)) * self.h

    def value_at(self, x):
        j = int(round(x / self.h)) - self.origin
        if 0 <= j < self.values.size:
            return float(self.values[j])
        return 0.0


def _embedded_positions(total, stream):
    """Positions S_0..S_{total-1} of a simple +-1 walk, chunked."""
    out = np.empty(total, dtype=np.int64)
    out[0] = 0
    done = 1
    while done < total:
        take = min(_CHUNK, total - done)
        steps = stream.gen.integers(0, 2, size=take) * 2 - 1
        np.cumsum(steps, out=out[done : done + take])
        out[done : done + take] += out[done - 1]
        done += take
    return out


def sample_local_time_fields(T_list, fineness, stream):
    """Cumulative and increment local-time fields at the given horizons.

    Returns (cumulative, increments); cumulative[i] approximates the local
    time field at horizon T_i, increments[i] the field accumulated over
    (T_{i-1}, T_i].  All fields share one grid so inner products integrate
    over the same levels.
    """
    m = int(fineness)
    if m < 1000:
        raise ValueError("fineness must be at least 10^3")
    T_list = [float(T) for T in T_list]
    if any(t2 <= t1 for t1, t2 in zip(T_list, T_list[1:])) or T_list[0] <= 0:
        raise ValueError("horizons must be increasing and positive")
    marks = [int(math.floor(m * T)) for T in T_list]
    total = max(marks[-1], 1)
    positions = _embedded_positions(total, stream)
    lo = int(positions.min())
    hi = int(positions.max())
    width = hi - lo + 1
    h = 1.0 / math.sqrt(m)
    increments = []
    prev = 0
    for i, mark in enumerate(marks):
        seg = positions[prev:mark]
        counts = np.bincount(seg - lo, minlength=width).astype(np.float64)
        dur = T_list[i] - (T_list[i - 1] if i else 0.0)
        increments.append(LocalTimeField(lo, h, counts * h, dur, m))
        prev = mark
    cumulative = []
    running = np.zeros(width)
    for i, inc in enumerate(increments):
        running = running + inc.values
        cumulative.append(LocalTimeField(lo, h, running, T_list[i], m))
    return cumulative, increments


@dataclass(frozen=True)
class GramSample:
    """Symmetric PSD matrix of local-time inner products with det and lambda_min."""

    k: int
    entries: np.ndarray
    det: float
    lambda_min: float

    def __post_init__(self):
        diag_prod = float(np.prod(np.diag(self.entries)))
        if self.det > diag_prod * (1.0 + 1e-9) + 1e-300:
            raise AssertionError("Gram-Hadamard violated: det exceeds diagonal product")
        if self.lambda_min < 0:
            raise AssertionError("negative eigenvalue after clamping")


def gram_of_fields(fields, normalization="raw"):
    """Gram matrix of the fields' pairwise L2 inner products.

    `scaled` divides field i by horizon_i^(3/4) first, giving the
    normalized matrix whose smallest eigenvalue drives the small-ball
    bounds.  Eigenvalues below 1e-14 * trace are clamped to zero so
    near-rank-deficient samples do not produce negative round-off
    determinants.
    """
    if normalization not in ("raw", "scaled"):
        raise ValueError("normalization must be 'raw' or 'scaled'")
    k = len(fields)
    f0 = fields[0]
    for f in fields[1:]:
        if f.origin != f0.origin or f.values.size != f0.values.size or f.h != f0.h:
            raise ValueError("fields must share one grid")
    mat = np.empty((k, k))
    vecs = []
    for f in fields:
        v = f.values
        if normalization == "scaled":
            v = v / f.horizon ** 0.75
        vecs.append(v)
    for i in range(k):
        for j in range(i, k):
            mat[i, j] = mat[j, i] = f0.h * float(np.dot(vecs[i], vecs[j]))
    eig = np.linalg.eigvalsh(mat)
    floor = _EIG_CLAMP * float(np.trace(mat))
    eig = np.where(eig < floor, 0.0, eig)
    det = float(np.prod(eig))
    return GramSample(k, mat, det, float(eig.min()))


@dataclass(frozen=True)
class CResult:
    """Estimate of E[det^(-1/2)] with the scaling-bound diagnostics."""

    estimate: Estimate
    bound_ratio: float
    bound_ratio_se: float
    rejected: int
    replicas: int


def estimate_C(T_list, replicas, fineness, stream, max_reject_rate=1e-3):
    """Monte Carlo E[D^(-1/2)] over increment-field Gram determinants.

    Near-singular Gram samples (any eigenvalue clamped to zero) are
    rejected and counted rather than clamped; a rejection rate above 0.1%
    signals that the fineness is too small for the requested horizons and
    fails the run.
    """
    if replicas <= 0:
        raise ValueError("replicas must be positive")
    T_list = [float(T) for T in T_list]
    durations = np.diff([0.0] + T_list)
    values = []
    rejected = 0
    for i in range(replicas):
        sub = stream.substream(i)
        _, increments = sample_local_time_fields(T_list, fineness, sub)
        gram = gram_of_fields(increments, normalization="raw")
        if gram.det <= 0.0 or gram.lambda_min == 0.0:
            rejected += 1
            continue
        values.append(gram.det ** -0.5)
    if rejected > max_reject_rate * replicas:
        raise RejectionRateError(
            f"{rejected}/{replicas} near-singular Gram samples; fineness too small"
        )
    est = estimate_from_values(np.array(values), stream.master_seed)
    scale = float(np.prod(durations ** 0.75))
    return CResult(
        estimate=est,
        bound_ratio=est.value * scale,
        bound_ratio_se=est.std_error * scale,
        rejected=rejected,
        replicas=replicas,
    )


def dump_fields_csv(fields, path):
    """Write shared-grid fields as CSV columns (x, L_T1, ..., L_Tk)."""
    f0 = fields[0]
    for f in fields[1:]:
        if f.origin != f0.origin or f.values.size != f0.values.size:
            raise ValueError("fields must share one grid")
    xs = f0.grid()
    header = "x," + ",".join(f"L_{f.horizon:g}" for f in fields)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for j, x in enumerate(xs):
            cols = ",".join(f"{f.values[j]:.17g}" for f in fields)
            fh.write(f"{x:.17g},{cols}\n")
    return path


def besq0_step(y, dt, stream, size=None):
    """Exact transition of the squared Bessel process of dimension 0.

    Draw K ~ Poisson(y / (2 dt)); absorb at 0 when K = 0, else return a
    Gamma(K, scale 2 dt) variate.  This Poisson-Gamma mixture reproduces
    the known transition kernel: an atom at zero plus the modified-Bessel
    density, which the test suite verifies against the closed form.
    """
    if y < 0 or dt <= 0:
        raise ValueError("need y >= 0 and dt > 0")
    lam = y / (2.0 * dt)
    if size is None:
        k = int(stream.gen.poisson(lam))
        return float(stream.gen.gamma(k, 2.0 * dt)) if k > 0 else 0.0
    k = stream.gen.poisson(lam, size=size)
    out = np.zeros(size, dtype=np.float64)
    alive = k > 0
    if alive.any():
        out[alive] = stream.gen.gamma(k[alive].astype(np.float64), 2.0 * dt)
    return out


def besq0_extinction(y, dt):
    """Atom weight at zero of the BESQ0 transition over time dt."""
    return math.exp(-y / (2.0 * dt))


def besq0_density(y, z, dt):
    """Positive-part transition density q_dt(y, z) of BESQ0.

    Uses the exponentially scaled Bessel function to stay finite for large
    sqrt(y z) / dt.
    """
    y = float(y)
    z = np.asarray(z, dtype=np.float64)
    arg = np.sqrt(y * z) / dt
    # ive(1, x) = iv(1, x) * exp(-x); fold the factor into the exponent
    expo = np.exp(-(y + z) / (2.0 * dt) + arg)
    return (1.0 / (2.0 * dt)) * np.sqrt(y / z) * expo * ive(1, arg)


def besq0_total_integral(y, stream, size=None):
    """Sample of the total integral of BESQ0 started at y.

    Equal in law to the first hitting time of y/2 by a standard Brownian
    motion, hence representable as (y/2)^2 / Z^2 with Z standard normal.
    """
    if y <= 0:
        raise ValueError("need y > 0")
    z = stream.gen.standard_normal(size=size)
    return (y / 2.0) ** 2 / z ** 2


def hitting_time_density(y, t):
    """Density f_y(t) of the first hitting time of y/2 by Brownian motion."""
    t = np.asarray(t, dtype=np.float64)
    return (y / 2.0) * (2.0 * math.pi * t ** 3) ** -0.5 * np.exp(
        -((y / 2.0) ** 2) / (2.0 * t)
    )


def ray_knight_profile(level, fineness, stream, horizon_cap=10 ** 9):
    """Walk local-time profile at the first time the origin count tops level*sqrt(m).

    Simulates the embedded walk step by step until the visit count at the
    origin first exceeds level * sqrt(m) and returns the normalized profile
    N_tau(y) / sqrt(m) for offsets y >= 0; by the second Ray-Knight theorem
    its continuum counterpart is a squared Bessel process of dimension 0
    started from `level`.  The stopping time has infinite mean, hence the
    hard horizon cap; see ray_knight_profile_fast for the heavy-replica
    sampler with the identical law.
    """
    m = int(fineness)
    target = int(math.floor(level * math.sqrt(m))) + 1
    counts = np.zeros(1, dtype=np.int64)  # counts[y] for y >= 0 only
    pos = 0
    zeros_seen = 0
    consumed = 0
    while True:
        chunk = min(1 << 16, horizon_cap - consumed)
        if chunk < 2:
            raise BudgetExceededError("Ray-Knight horizon cap exceeded")
        steps = stream.gen.integers(0, 2, size=chunk) * 2 - 1
        block = np.empty(chunk, dtype=np.int64)
        block[0] = pos
        np.cumsum(steps[:-1], out=block[1:])
        block[1:] += pos
        zero_count = np.cumsum(block == 0)
        hit = np.nonzero(zeros_seen + zero_count >= target)[0]
        stop = int(hit[0]) + 1 if hit.size else chunk  # include stopping visit
        nonneg = block[:stop]
        nonneg = nonneg[nonneg >= 0]
        if nonneg.size:
            top = int(nonneg.max())
            if top >= counts.size:
                counts = np.concatenate(
                    [counts, np.zeros(top + 1 - counts.size, dtype=np.int64)]
                )
            counts[: top + 1] += np.bincount(nonneg, minlength=top + 1)
        if hit.size:
            return counts.astype(np.float64) / math.sqrt(m)
        zeros_seen += int(zero_count[-1])
        pos = int(block[-1] + steps[-1])
        consumed += chunk


def ray_knight_profile_fast(level, fineness, stream):
    """Same law as ray_knight_profile via the exact upcrossing branching chain.

    For the simple walk stopped at the target origin-visit count, the edge
    upcrossing counts above the origin form a critical branching chain with
    geometric offspring; visit counts at level y are U(y) + U(y+1).  This
    samples the stopped profile in O(max height) work, avoiding the
    infinite-mean stopping time of direct simulation.
    """
    m = int(fineness)
    target = int(math.floor(level * math.sqrt(m))) + 1
    ups = [0]  # U(0) unused marker; ups[y] = upcrossings of edge (y-1, y)
    u = int(stream.gen.binomial(target - 1, 0.5))
    ups.append(u)
    while u > 0:
        u = int(stream.gen.negative_binomial(u, 0.5))
        ups.append(u)
    ups = np.asarray(ups[1:], dtype=np.int64)  # U(1), U(2), ...
    visits = np.empty(ups.size + 1, dtype=np.int64)
    visits[0] = target
    visits[1:-1] = ups[:-1] + ups[1:]
    visits[-1] = ups[-1]  # U at the top edge; the level above is unvisited
    return visits.astype(np.float64) / math.sqrt(m)


def origin_local_time_at_range_exit(fineness, stream):
    """Origin visit count, over sqrt(m), at the first exit of [-sqrt(m), sqrt(m)]."""
    m = int(fineness)
    bound = int(math.floor(math.sqrt(m)))
    pos = 0
    zeros = 0
    chunk = 1 << 16
    while True:
        steps = stream.gen.integers(0, 2, size=chunk) * 2 - 1
        block = np.empty(chunk, dtype=np.int64)
        block[0] = pos
        np.cumsum(steps[:-1], out=block[1:])
        block[1:] += pos
        out = np.nonzero(np.abs(block) > bound)[0]
        if out.size:
            stop = int(out[0])
            zeros += int(np.count_nonzero(block[:stop] == 0))
            return zeros / math.sqrt(m)
        zeros += int(np.count_nonzero(block == 0))
        pos = int(block[-1] + steps[-1])
