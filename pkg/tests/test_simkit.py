import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwrs.simkit import (
    Manifest,
    derive_stream,
    estimate_from_values,
    file_digest,
    run_replicated,
    stream_base_for,
    write_manifest,
)


def test_same_key_replays():
    a = derive_stream(42, 0).gen.uniform(size=10_000)
    b = derive_stream(42, 0).gen.uniform(size=10_000)
    assert (a == b).all()


def test_distinct_stream_ids_differ():
    a = derive_stream(42, 0).gen.uniform(size=10_000)
    b = derive_stream(42, 1).gen.uniform(size=10_000)
    assert (a != b).any()


def test_distinct_seeds_differ():
    a = derive_stream(42, 0).gen.uniform(size=10_000)
    b = derive_stream(43, 0).gen.uniform(size=10_000)
    assert (a != b).any()


def test_substreams_are_reproducible_and_distinct():
    root = derive_stream(7, 3)
    s1 = root.substream(5)
    s2 = derive_stream(7, 3).substream(5)
    assert s1.stream_id == s2.stream_id
    assert (s1.gen.uniform(size=100) == s2.gen.uniform(size=100)).all()
    ids = {root.substream(i).stream_id for i in range(1000)}
    assert len(ids) == 1000


def test_constant_task():
    est = run_replicated(lambda s: 1.0, 100, 99)
    assert est.value == 1.0
    assert est.std_error == 0.0
    assert est.replicas == 100


def test_replicas_must_be_positive():
    with pytest.raises(ValueError):
        run_replicated(lambda s: 1.0, 0, 1)


def test_schedule_independence():
    task = lambda s: float(s.gen.uniform())
    serial = run_replicated(task, 20_000, 11, threads=1)
    parallel = run_replicated(task, 20_000, 11, threads=4)
    assert serial.value == parallel.value
    assert serial.std_error == parallel.std_error


def test_uniform_mean_within_clt_band():
    est = run_replicated(lambda s: float(s.gen.uniform()), 100_000, 1234)
    # 5 sigma of a Uniform(0,1) mean at 1e5 replicas
    assert abs(est.value - 0.5) < 0.005
    assert abs(est.std_error - math.sqrt(1 / 12 / 100_000)) < 2e-4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=200), st.randoms())
def test_reduction_is_order_independent(values, rnd):
    est1 = estimate_from_values(np.array(values), 0)
    shuffled = list(values)
    rnd.shuffle(shuffled)
    est2 = estimate_from_values(np.array(shuffled), 0)
    scale = max(1.0, abs(est1.value))
    assert abs(est1.value - est2.value) <= 1e-12 * scale


def test_stream_base_tags_are_stable():
    assert stream_base_for("alpha") == stream_base_for("alpha")
    assert stream_base_for("alpha") != stream_base_for("beta")


def test_manifest_round_trip(tmp_path):
    out = tmp_path / "data.csv"
    out.write_text("a,b\n1,2\n")
    manifest = write_manifest(
        {"x": "1", "law": "-1:1/2,1:1/2"}, [str(out)], 42, "0.1.0", 0.0,
        str(tmp_path / "manifest.txt"),
    )
    parsed = Manifest.from_text(manifest.to_text())
    assert parsed == manifest


def test_manifest_digests_reflect_content(tmp_path):
    f1 = tmp_path / "a.csv"
    f2 = tmp_path / "b.csv"
    f1.write_text("same-bytes")
    f2.write_text("same-bytes")
    assert file_digest(str(f1)) == file_digest(str(f2))
    f2.write_text("other-bytes")
    assert file_digest(str(f1)) != file_digest(str(f2))
