import json

import numpy as np
import pytest

from conftest import DAY0
from spare.codec import open_token
from spare.exceptions import ConfigError, InfeasibleSpec, SchemaError
from spare.workload import (
    DATASET_COLUMNS,
    DEFAULT_HOURLY_PROFILE,
    WorkloadSpec,
    gen_benign,
    gen_malicious_demand,
    meta_path,
    normalize_weights,
    read_dataset,
    sample_request_times,
    write_dataset,
)


def only_hour(h):
    w = [0.0] * 24
    w[h] = 1.0
    return w


def test_weights_are_normalized():
    w = normalize_weights(DEFAULT_HOURLY_PROFILE)
    assert abs(sum(w) - 1) < 1e-12
    assert w[9] == max(w)


@pytest.mark.parametrize("bad", [[1.0] * 23, [0.0] * 24, [-1.0] + [1.0] * 23, [float("nan")] * 24])
def test_bad_weights(bad):
    with pytest.raises(ConfigError):
        normalize_weights(bad)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_users": 0},
        {"n_users": 5, "req_min": 10, "req_max": 5},
        {"n_users": 5, "scenario": "malicious"},
        {"n_users": 5, "scenario": "malicious", "n_devices": 6},
        {"n_users": 5, "n_devices": 2},
        {"n_users": 5, "scenario": "weird"},
        {"n_users": 5, "min_gap_per_device": -1},
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        WorkloadSpec(**kwargs)


def test_degenerate_weights_put_every_request_in_that_hour():
    spec = WorkloadSpec(n_users=1, hourly_weights=only_hour(9))
    times = sample_request_times(40, spec)
    assert all(DAY0 + 9 * 3600 <= t < DAY0 + 10 * 3600 for t in times)


def test_infeasible_gap():
    spec = WorkloadSpec(n_users=1, hourly_weights=only_hour(9), min_gap_per_device=100)
    with pytest.raises(InfeasibleSpec):
        sample_request_times(37, spec)
    assert len(sample_request_times(15, spec)) == 15


def test_min_gap_and_sorted():
    spec = WorkloadSpec(n_users=1, hourly_weights=only_hour(3), min_gap_per_device=60)
    times = sample_request_times(45, spec, np.random.default_rng(3))
    assert times == sorted(times)
    assert min(np.diff(times)) >= 60


def test_hour_histogram_matches_weights():
    spec = WorkloadSpec(n_users=1, seed=17)
    rng = np.random.default_rng(17)
    hours = np.zeros(24)
    for _ in range(1500):
        for t in sample_request_times(35, spec, rng):
            hours[(t - DAY0) // 3600] += 1
    share = hours / hours.sum()
    expected = np.asarray(spec.hourly_weights)
    assert np.max(np.abs(share - expected)) < 0.02


def test_benign_dataset_shape(key):
    ds = gen_benign(WorkloadSpec(n_users=30, seed=4), key)
    counts = ds.per_user_counts()
    assert len(counts) == 30
    assert all(25 <= n <= 45 for n in counts.values())
    by_user = {}
    for e in ds.events:
        by_user.setdefault(e.user_id, set()).add(e.device_id)
        assert open_token(e.token, key).timestamp_utc == e.send_time
        assert open_token(e.token, key).device_id == e.device_id
        assert not e.resubmit
    # one device per user, no sharing
    assert all(len(d) == 1 for d in by_user.values())
    assert len({next(iter(d)) for d in by_user.values()}) == 30
    assert [e.sort_key for e in ds.events] == sorted(e.sort_key for e in ds.events)
    for uid in counts:
        idx = [e.request_index for e in ds.events if e.user_id == uid]
        assert idx == list(range(1, len(idx) + 1))


def test_malicious_pool_round_robin():
    ds = gen_malicious_demand(WorkloadSpec(n_users=10, scenario="malicious", n_devices=3, seed=2))
    assert ds.is_malicious
    dev = {e.user_id: e.device_id for e in ds.events}
    assert dev["mal00000"] == dev["mal00003"] == "ATKdev000"
    assert dev["mal00002"] == "ATKdev002"
    assert all(e.token is None for e in ds.events)


def test_seed_determinism_and_user_independence(key):
    a = gen_benign(WorkloadSpec(n_users=5, seed=8), key)
    b = gen_benign(WorkloadSpec(n_users=5, seed=8), key)
    c = gen_benign(WorkloadSpec(n_users=9, seed=8), key)
    d = gen_benign(WorkloadSpec(n_users=5, seed=9), key)
    assert a == b
    assert a.events != d.events
    # user 3's requests do not depend on how many users exist
    pick = lambda ds: [e for e in ds.events if e.user_id == "user00003"]
    assert pick(a) == pick(c)


def test_csv_round_trip(tmp_path, key):
    ds = gen_benign(WorkloadSpec(n_users=4, seed=1), key)
    path = tmp_path / "d.csv"
    write_dataset(ds, path)
    assert path.read_text().splitlines()[0] == ",".join(DATASET_COLUMNS)
    assert read_dataset(path) == ds

    mal = gen_malicious_demand(WorkloadSpec(n_users=4, scenario="malicious", n_devices=2))
    write_dataset(mal, path)
    assert read_dataset(path) == mal


def test_missing_column(tmp_path, key):
    ds = gen_benign(WorkloadSpec(n_users=2, seed=1), key)
    path = tmp_path / "d.csv"
    write_dataset(ds, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(",".join(l.split(",")[:-1]) for l in lines) + "\n")
    with pytest.raises(SchemaError):
        read_dataset(path)


def test_missing_sidecar_and_bad_rows(tmp_path, key):
    ds = gen_benign(WorkloadSpec(n_users=2, seed=1), key)
    path = tmp_path / "d.csv"
    write_dataset(ds, path)
    text = path.read_text()
    path.write_text(text.replace("false", "nah", 1))
    with pytest.raises(SchemaError):
        read_dataset(path)
    meta_path(path).unlink()
    with pytest.raises(SchemaError):
        read_dataset(path)


def test_spec_dict_round_trip():
    spec = WorkloadSpec(n_users=3, scenario="malicious", n_devices=2, seed=5)
    assert WorkloadSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
    with pytest.raises(ConfigError):
        WorkloadSpec.from_dict({"n_users": 1, "bogus": 2})
