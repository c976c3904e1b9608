import json
import urllib.error
import urllib.request

import pytest

from conftest import DAY0, KEY
from spare.codec import TokenPayload, embed_token, mint_token
from spare.config import ServiceConfig
from spare.firewall import FirewallConfig
from spare.service import GatewayService

NOON = DAY0 + 12 * 3600


class Clock:
    def __init__(self, t):
        self.t = t

    def __call__(self):
        return self.t


def url_for(ts, dev="PWAdev00001", resubmit=False):
    return embed_token("/resource", mint_token(TokenPayload(ts, dev), KEY), resubmit)


def make(tmp_path=None, threshold=3, clock=None):
    cfg = ServiceConfig(
        FirewallConfig(key=KEY, daily_threshold=threshold),
        listen_address="127.0.0.1:0",
        snapshot_path=str(tmp_path / "ledger.json") if tmp_path else None,
    )
    return GatewayService(cfg, clock=clock or Clock(NOON))


def test_handle_routes():
    svc = make()
    assert svc.handle("GET", url_for(NOON)) == (200, {"verdict": "accept"})
    assert svc.handle("GET", url_for(NOON)) == (403, {"verdict": "reject", "reason": "DuplicateToken"})
    assert svc.handle("GET", "/resource") == (403, {"verdict": "reject", "reason": "MissingToken"})
    assert svc.handle("GET", "/resource?id=!!!") == (403, {"verdict": "reject", "reason": "TokenUndecodable"})
    status, body = svc.handle("GET", "/admin/devices")
    assert status == 200
    assert body == {"PWAdev00001": {"count_today": 1, "blocked_until": None, "last_request_time": "2024-03-09T12:00:00Z"}}
    assert svc.handle("POST", "/admin/devices/PWAdev00001/reset") == (204, None)
    assert svc.handle("GET", "/admin/devices") == (200, {})
    assert svc.handle("GET", "/nope")[0] == 404
    assert svc.handle("POST", "/resource")[0] == 405
    assert svc.handle("GET", "/admin/devices/x/reset")[0] == 405


def test_threshold_then_blocked():
    svc = make(threshold=2)
    got = [svc.handle("GET", url_for(NOON - i))[1].get("reason") for i in range(4)]
    assert got == [None, None, "ThresholdExceeded", "DeviceBlocked"]
    assert svc.handle("GET", "/admin/devices")[1]["PWAdev00001"]["blocked_until"] == "2024-03-10T00:00:00Z"


def _get(base, path):
    try:
        with urllib.request.urlopen(base + path, timeout=5) as resp:
            return resp.status, json.loads(resp.read() or b"null")
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read() or b"null")


def _post(base, path):
    req = urllib.request.Request(base + path, method="POST", data=b"")
    with urllib.request.urlopen(req, timeout=5) as resp:
        return resp.status


def test_http_round_trip_and_restart(tmp_path):
    clock = Clock(NOON)
    with make(tmp_path, clock=clock) as svc:
        base = "http://%s:%d" % svc.address
        assert _get(base, url_for(NOON)) == (200, {"verdict": "accept"})
        assert _get(base, url_for(NOON))[1]["reason"] == "DuplicateToken"
        assert _get(base, "/missing")[0] == 404
        assert _get(base, "/admin/devices")[1]["PWAdev00001"]["count_today"] == 1
    assert (tmp_path / "ledger.json").exists()

    # a new process restores the ledger, so the replay is still caught
    with make(tmp_path, clock=clock) as svc:
        base = "http://%s:%d" % svc.address
        assert _get(base, url_for(NOON))[1]["reason"] == "DuplicateToken"
        assert _post(base, "/admin/devices/PWAdev00001/reset") == 204
        assert _get(base, url_for(NOON)) == (200, {"verdict": "accept"})


def test_corrupt_snapshot_refuses_to_start(tmp_path):
    from spare.exceptions import CorruptSnapshot

    (tmp_path / "ledger.json").write_text("garbage")
    with pytest.raises(CorruptSnapshot):
        make(tmp_path)
