"""Deterministic randomness plumbing: keyed streams, replication, manifests.

Every random quantity in this package is drawn from an RngStream keyed by
(master_seed, stream_id).  Streams are counter-based (Philox), so distinct
keys give independent, non-overlapping sequences without any coordination,
and a stream replays exactly from its key alone.
"""

import hashlib
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RngStream",
    "Estimate",
    "Manifest",
    "derive_stream",
    "run_replicated",
    "write_manifest",
    "stream_base_for",
    "thread_count",
]

_MASK64 = (1 << 64) - 1


def _splitmix64(x):
    """One round of splitmix64; good 64-bit mixing for substream ids."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """A replayable random stream keyed by (master_seed, stream_id).

    Wraps a Philox counter-based generator.  Two streams with distinct key
    pairs are independent by construction; the same pair replays the same
    sequence.  Single-owner: never share one instance across threads.
    """

    __slots__ = ("master_seed", "stream_id", "gen")

    def __init__(self, master_seed, stream_id):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        self.gen = np.random.Generator(np.random.Philox(key=key))

    def substream(self, k):
        """Derive the k-th child stream; deterministic, collision-resistant."""
        child = _splitmix64(self.stream_id ^ _splitmix64((int(k) + 1) & _MASK64))
        return RngStream(self.master_seed, child)

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id})"


def derive_stream(master_seed, stream_id):
    """Stream keyed by (master_seed, stream_id); deterministic in both."""
    return RngStream(master_seed, stream_id)


def stream_base_for(tag):
    """Stable 63-bit stream-id base for a named sub-experiment."""
    h = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") >> 1


def thread_count():
    """Worker cap from RWRS_THREADS; defaults to 1 (serial)."""
    raw = os.environ.get("RWRS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo estimate: mean of i.i.d. replica outputs with its standard error."""

    value: float
    std_error: float
    replicas: int
    master_seed: int

    def combined_se(self, other):
        return math.sqrt(self.std_error ** 2 + other.std_error ** 2)


def run_replicated(task, replicas, master_seed, stream_base=0, threads=None):
    """Run `task(stream) -> float` over independent replica streams.

    Replica i draws from stream (master_seed, stream_base + i).  The result
    is independent of execution order and of the degree of parallelism:
    outputs are stored per-replica and reduced with exact summation.
    """
    if replicas <= 0:
        raise ValueError("replicas must be a positive integer")
    values = np.empty(replicas, dtype=np.float64)

    def _one(i):
        values[i] = task(derive_stream(master_seed, stream_base + i))

    nthreads = thread_count() if threads is None else max(1, int(threads))
    if nthreads == 1 or replicas < 4:
        for i in range(replicas):
            _one(i)
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            list(pool.map(_one, range(replicas)))
    return estimate_from_values(values, master_seed)


def estimate_from_values(values, master_seed):
    """Order-independent mean/std-error reduction via compensated sums."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    mean = math.fsum(values) / n
    if n > 1:
        var = math.fsum((values - mean) ** 2) / (n - 1)
        se = math.sqrt(var / n)
    else:
        se = 0.0
    return Estimate(mean, se, n, master_seed)


@dataclass
class Manifest:
    """Reproducibility record written alongside every output file set."""

    config: dict
    master_seed: int
    version: str
    duration_s: float
    digests: dict = field(default_factory=dict)

    def to_text(self):
        lines = ["[manifest]"]
        lines.append(f"master_seed = {self.master_seed}")
        lines.append(f"version = {self.version}")
        lines.append(f"duration_s = {self.duration_s!r}")
        lines.append("")
        lines.append("[config]")
        for key in sorted(self.config):
            lines.append(f"{key} = {self.config[key]}")
        lines.append("")
        lines.append("[digests]")
        for name in sorted(self.digests):
            lines.append(f"{name} = {self.digests[name]}")
        lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text):
        section = None
        config, digests, meta = {}, {}, {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if section == "manifest":
                meta[key] = value
            elif section == "config":
                config[key] = value
            elif section == "digests":
                digests[key] = value
        return cls(
            config=config,
            master_seed=int(meta["master_seed"]),
            version=meta["version"],
            duration_s=float(meta["duration_s"]),
            digests=digests,
        )


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(config, outputs, master_seed, version, started_at, path):
    """Digest output files and write the manifest next to them."""
    digests = {os.path.basename(p): file_digest(p) for p in outputs}
    manifest = Manifest(
        config={k: str(v) for k, v in config.items()},
        master_seed=int(master_seed),
        version=version,
        duration_s=time.time() - started_at,
        digests=digests,
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(manifest.to_text())
    return manifest
