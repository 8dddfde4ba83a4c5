import http.client
import json
import threading

import numpy as np
import pytest

from anoncodec.abx_service import (
    AbxService,
    assemble_trials,
    load_manifest,
    make_server,
)
from anoncodec.errors import ConfigError
from anoncodec.privacy_eval import (
    PrivacyReport,
    percentiles,
    random_baseline,
    similar_speaker_pool,
    wilson_interval,
)


def report_for(mean_ranks):
    per = list(mean_ranks.items())
    values = [r for _, r in per]
    p50, p1 = percentiles(values)
    return PrivacyReport(
        "singling_out", len(per), 4, 0, p50, p1, random_baseline(len(per), 4), per
    )


def build_manifest(tmp_path, speakers, originals=2, anonymized=1):
    entries = []
    for ident in speakers:
        for u in range(originals):
            p = tmp_path / f"{ident}_orig_{u}.wav"
            p.write_bytes(b"RIFFfake" + ident.encode() + bytes([u]))
            entries.append({"speaker_id": ident, "kind": "original", "media_path": p.name,
                            "utterance_id": f"u{u}"})
        for u in range(anonymized):
            p = tmp_path / f"{ident}_anon_{u}.wav"
            p.write_bytes(b"RIFFanon" + ident.encode() + bytes([u]))
            entries.append({"speaker_id": ident, "kind": "anonymized", "media_path": p.name,
                            "utterance_id": f"u{u}"})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(entries))
    return path


# --- trial assembly ---------------------------------------------------------------


def test_single_candidate_pool(tmp_path):
    manifest = load_manifest(build_manifest(tmp_path, ["alice", "bob"]))
    report = report_for({"alice": 1.0, "bob": 5.0})
    trials, _media = assemble_trials(manifest, report, 1, seed=0)
    assert trials[0].speaker_id == "alice"
    assert trials[0].b_speaker_id == "bob"
    assert trials[0].correct_answer == "A"


def test_assembly_deterministic(tmp_path):
    speakers = [f"spk{i}" for i in range(8)]
    manifest = load_manifest(build_manifest(tmp_path, speakers))
    report = report_for({s: float(i + 1) for i, s in enumerate(speakers)})
    a, _ = assemble_trials(manifest, report, 5, seed=7)
    b, _ = assemble_trials(manifest, report, 5, seed=7)
    assert a == b
    c, _ = assemble_trials(manifest, report, 5, seed=8)
    assert a != c


def test_b_speakers_verified_against_pools(tmp_path):
    speakers = [f"spk{i:02d}" for i in range(21)]
    manifest = load_manifest(build_manifest(tmp_path, speakers))
    report = report_for({s: float(i + 1) for i, s in enumerate(speakers)})
    trials, _ = assemble_trials(manifest, report, 20, seed=3)
    assert len({t.speaker_id for t in trials}) == 20
    for t in trials:
        pool = similar_speaker_pool(report, t.speaker_id)
        assert t.b_speaker_id in pool
        assert t.b_speaker_id != t.speaker_id


def test_a_differs_from_x_utterance(tmp_path):
    speakers = ["p", "q", "r"]
    manifest = load_manifest(build_manifest(tmp_path, speakers, originals=2, anonymized=2))
    report = report_for({"p": 1.0, "q": 2.0, "r": 3.0})
    trials, media = assemble_trials(manifest, report, 2, seed=1)
    by_path = {e.media_path: e for e in manifest}
    for t in trials:
        x_entry = by_path[media[t.x_media]]
        a_entry = by_path[media[t.a_media]]
        assert x_entry.speaker_id == a_entry.speaker_id == t.speaker_id
        assert x_entry.kind == "anonymized" and a_entry.kind == "original"
        assert x_entry.utterance_id != a_entry.utterance_id


def test_too_few_eligible_speakers(tmp_path):
    manifest = load_manifest(build_manifest(tmp_path, ["a", "b"]))
    report = report_for({"a": 1.0, "b": 5.0})  # b has an empty pool -> skipped
    with pytest.raises(ConfigError):
        assemble_trials(manifest, report, 2, seed=0)


# --- HTTP service -------------------------------------------------------------------


class Client:
    def __init__(self, port):
        self.port = port

    def request(self, method, path, body=None):
        conn = http.client.HTTPConnection("127.0.0.1", self.port, timeout=5)
        payload = json.dumps(body).encode() if body is not None else None
        conn.request(method, path, body=payload)
        resp = conn.getresponse()
        raw = resp.read()
        conn.close()
        try:
            return resp.status, json.loads(raw)
        except json.JSONDecodeError:
            return resp.status, raw


@pytest.fixture
def service(tmp_path):
    speakers = [f"spk{i}" for i in range(5)]
    manifest = load_manifest(build_manifest(tmp_path, speakers))
    report = report_for({s: float(i + 1) for i, s in enumerate(speakers)})
    trials, media = assemble_trials(manifest, report, 3, seed=5)
    svc = AbxService(trials, media, tmp_path / "responses.jsonl")
    server = make_server(svc)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield svc, Client(server.server_port), tmp_path / "responses.jsonl"
    server.shutdown()
    server.server_close()


def test_scripted_session_and_results(service):
    svc, client, log_path = service
    status, payload = client.request("GET", "/api/trials/new")
    assert status == 200
    session = payload["session"]
    trials = payload["trials"]
    assert len(trials) == 3 and payload["answered"] == []

    choices = ["A", "A", "B"]
    for trial, choice in zip(trials, choices):
        status, body = client.request(
            "POST", "/api/response",
            {"session": session, "trial_id": trial["trial_id"], "choice": choice},
        )
        assert status == 201

    # three durable log lines
    lines = [json.loads(l) for l in log_path.read_text().splitlines()]
    assert len(lines) == 3
    assert [l["trial_id"] for l in lines] == [t["trial_id"] for t in trials]

    status, results = client.request("GET", "/api/results")
    assert status == 200
    # hand count: every correct answer is A
    assert results["n"] == 3 and results["k_correct"] == 2
    center, half = wilson_interval(2, 3)
    assert results["wilson_center"] == pytest.approx(center)
    assert results["wilson_half_width"] == pytest.approx(half)
    assert results["p_hat"] == pytest.approx(2 / 3)

    # session refetch reports what was answered
    status, payload = client.request("GET", f"/api/trials/{session}")
    assert sorted(payload["answered"]) == sorted(t["trial_id"] for t in trials)


def test_payload_never_leaks_identity(service):
    svc, client, _ = service
    secret_tokens = set()
    for trial in svc.trials.values():
        secret_tokens.add(trial.speaker_id)
        secret_tokens.add(trial.b_speaker_id)
    for path in ("/api/trials/new", "/api/results"):
        _, payload = client.request("GET", path)
        text = json.dumps(payload)
        for token in secret_tokens:
            assert token not in text
        assert "correct_answer" not in text
        assert "speaker" not in text


def test_duplicate_response_conflict(service):
    svc, client, log_path = service
    _, payload = client.request("GET", "/api/trials/new")
    session = payload["session"]
    trial_id = payload["trials"][0]["trial_id"]
    body = {"session": session, "trial_id": trial_id, "choice": "A"}
    assert client.request("POST", "/api/response", body)[0] == 201
    before = log_path.read_text()
    status, err = client.request("POST", "/api/response", body)
    assert status == 409
    assert "already" in err["error"]
    assert log_path.read_text() == before  # results unchanged


def test_zero_responses_explicit_payload(service):
    _, client, _ = service
    status, results = client.request("GET", "/api/results")
    assert status == 200
    assert results["n"] == 0 and results["k_correct"] == 0
    assert "message" in results


def test_error_statuses(service):
    _, client, _ = service
    assert client.request("POST", "/api/response", {"bad": 1})[0] == 400
    assert client.request(
        "POST", "/api/response", {"session": "s", "trial_id": "t000", "choice": "X"}
    )[0] == 400
    assert client.request(
        "POST", "/api/response", {"session": "s", "trial_id": "zzz", "choice": "A"}
    )[0] == 404
    assert client.request("GET", "/media/nope")[0] == 404
    assert client.request("GET", "/nothing/here")[0] == 404


def test_media_served_by_opaque_id(service):
    svc, client, _ = service
    trial = next(iter(svc.trials.values()))
    _, payload = client.request("GET", "/api/trials/new")
    url = payload["trials"][0]["x"]
    status, raw = client.request("GET", url)
    assert status == 200
    assert isinstance(raw, bytes) and raw.startswith(b"RIFF")


FRONTEND_DIST = __import__("pathlib").Path(__file__).resolve().parents[1] / "frontend" / "dist"


@pytest.mark.skipif(not (FRONTEND_DIST / "index.html").is_file(), reason="frontend not built")
def test_serves_frontend_assets(tmp_path):
    speakers = ["u", "v"]
    manifest = load_manifest(build_manifest(tmp_path, speakers))
    report = report_for({"u": 1.0, "v": 2.0})
    trials, media = assemble_trials(manifest, report, 1, seed=0)
    svc = AbxService(trials, media, tmp_path / "r.jsonl", static_dir=FRONTEND_DIST)
    server = make_server(svc)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        client = Client(server.server_port)
        status, raw = client.request("GET", "/")
        assert status == 200 and b"<!doctype html>" in raw.lower()
        status, raw = client.request("GET", "/main.js")
        assert status == 200 and b"runSession" in raw
        # path traversal stays inside the static dir
        assert client.request("GET", "/../pyproject.toml")[0] == 404
    finally:
        server.shutdown()
        server.server_close()


def test_results_survive_restart(service, tmp_path):
    svc, client, log_path = service
    _, payload = client.request("GET", "/api/trials/new")
    session = payload["session"]
    for trial in payload["trials"]:
        client.request(
            "POST", "/api/response",
            {"session": session, "trial_id": trial["trial_id"], "choice": "A"},
        )
    live = svc.results()
    # a fresh service over the same log recomputes identical results
    reborn = AbxService(list(svc.trials.values()), svc.media_map, log_path)
    assert reborn.results() == live
