"""HTTP service for A/B/X perceptual privacy trials.

Assembles triplets (X: anonymized reconstruction, A: another utterance
of the same speaker, B: an utterance of a speaker from the similar-
speaker pool), serves them without identity metadata, records rater
choices in an append-only JSON-lines log (fsynced before the response
is acknowledged), and reports the detection probability with a Wilson
interval. Results are always recomputed from the log, so a restarted
service reports exactly what the log holds.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import os
import threading
import time
import uuid
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import ConfigError, DataFormatError
from .privacy_eval import PrivacyReport, similar_speaker_pool, wilson_interval
from .rng import substream

log = logging.getLogger(__name__)

KINDS = ("original", "anonymized")


@dataclass(frozen=True)
class ManifestEntry:
    speaker_id: str
    kind: str
    media_path: str
    utterance_id: str


def load_manifest(path) -> list[ManifestEntry]:
    """Read the JSON manifest: a list of {speaker_id, kind, media_path}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid manifest JSON ({exc})")
    if not isinstance(raw, list):
        raise DataFormatError(f"{path}: manifest must be a JSON list")
    base = Path(path).parent
    entries = []
    for i, item in enumerate(raw):
        try:
            kind = item["kind"]
            if kind not in KINDS:
                raise DataFormatError(f"{path}: entry {i} has unknown kind {kind!r}")
            media = str(base / item["media_path"])
            utt = item.get("utterance_id") or Path(item["media_path"]).stem
            entries.append(ManifestEntry(str(item["speaker_id"]), kind, media, utt))
        except (KeyError, TypeError):
            raise DataFormatError(f"{path}: entry {i} is missing required fields")
    if not entries:
        raise DataFormatError(f"{path}: manifest is empty")
    return entries


@dataclass(frozen=True)
class ABXTrial:
    trial_id: str
    x_media: str
    a_media: str
    b_media: str
    speaker_id: str  # never serialized to raters
    b_speaker_id: str
    correct_answer: str = "A"


def assemble_trials(
    entries: list[ManifestEntry],
    report: PrivacyReport,
    n_trials: int,
    seed: int,
) -> tuple[list[ABXTrial], dict[str, str]]:
    """Build trials plus the opaque media-id -> path map they reference."""
    if report.mode != "singling_out":
        raise ConfigError("trial assembly needs a singling-out report")
    media_ids = {e.media_path: f"m{idx}" for idx, e in enumerate(entries)}
    by_speaker: dict[str, dict[str, list[ManifestEntry]]] = {}
    for e in entries:
        by_speaker.setdefault(e.speaker_id, {"original": [], "anonymized": []})[e.kind].append(e)

    report_ids = [i for i, _ in report.per_speaker]
    eligible = []
    for ident in report_ids:
        media = by_speaker.get(ident)
        if media is None:
            continue
        # X needs an anonymized utterance for which a distinct-utterance
        # original exists to serve as A
        original_utts = {e.utterance_id for e in media["original"]}
        x_candidates = [
            e for e in media["anonymized"] if original_utts - {e.utterance_id}
        ]
        if not x_candidates:
            continue
        pool = [
            p
            for p in similar_speaker_pool(report, ident)
            if by_speaker.get(p, {}).get("original")
        ]
        if not pool:
            log.warning("speaker %s skipped: empty similar-speaker pool", ident)
            continue
        eligible.append((ident, x_candidates, pool))

    if len(eligible) < n_trials:
        raise ConfigError(
            f"only {len(eligible)} eligible speakers for {n_trials} requested trials"
        )
    order = substream(seed, "abx-speakers").permutation(len(eligible))
    trials = []
    for t, pick in enumerate(order[:n_trials]):
        ident, x_candidates, pool = eligible[pick]
        rng = substream(seed, "abx-trial", ident)
        media = by_speaker[ident]
        x = x_candidates[int(rng.integers(0, len(x_candidates)))]
        a_candidates = [e for e in media["original"] if e.utterance_id != x.utterance_id]
        a = a_candidates[int(rng.integers(0, len(a_candidates)))]
        b_speaker = pool[int(rng.integers(0, len(pool)))]
        b_options = by_speaker[b_speaker]["original"]
        b = b_options[int(rng.integers(0, len(b_options)))]
        trials.append(
            ABXTrial(
                trial_id=f"t{t:03d}",
                x_media=media_ids[x.media_path],
                a_media=media_ids[a.media_path],
                b_media=media_ids[b.media_path],
                speaker_id=ident,
                b_speaker_id=b_speaker,
            )
        )
    return trials, {v: k for k, v in media_ids.items()}


class ResponseLog:
    """Append-only JSON-lines response store with a single serialized writer."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.responses: dict[tuple[str, str], dict] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                        key = (rec["session_id"], rec["trial_id"])
                    except (json.JSONDecodeError, KeyError) as exc:
                        raise DataFormatError(
                            f"{path}: corrupt response log line {line_no + 1} ({exc})"
                        )
                    self.responses.setdefault(key, rec)

    def has(self, session_id: str, trial_id: str) -> bool:
        return (session_id, trial_id) in self.responses

    def answered(self, session_id: str) -> list[str]:
        return [t for (s, t) in self.responses if s == session_id]

    def append(self, session_id: str, trial_id: str, choice: str) -> dict:
        rec = {
            "session_id": session_id,
            "trial_id": trial_id,
            "choice": choice,
            "timestamp": time.time(),
        }
        with self._lock:
            if (session_id, trial_id) in self.responses:
                raise KeyError("duplicate response")
            # durability before acknowledgment: write, flush, fsync
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self.responses[(session_id, trial_id)] = rec
        return rec


class AbxService:
    """Trial set, media map and response log behind the HTTP handler."""

    def __init__(self, trials, media_map, results_path, static_dir=None):
        self.trials = {t.trial_id: t for t in trials}
        self.media_map = dict(media_map)
        self.log = ResponseLog(results_path)
        self.static_dir = Path(static_dir) if static_dir else None

    def public_trials(self) -> list[dict]:
        # exactly these keys reach raters; identities and answers stay out
        return [
            {
                "trial_id": t.trial_id,
                "x": f"/media/{t.x_media}",
                "a": f"/media/{t.a_media}",
                "b": f"/media/{t.b_media}",
            }
            for t in self.trials.values()
        ]

    def results(self) -> dict:
        known = [r for (s, t), r in self.log.responses.items() if t in self.trials]
        n = len(known)
        if n == 0:
            return {"n": 0, "k_correct": 0, "message": "no responses recorded"}
        k = sum(1 for r in known if r["choice"] == self.trials[r["trial_id"]].correct_answer)
        center, half = wilson_interval(k, n)
        return {
            "n": n,
            "k_correct": k,
            "p_hat": k / n,
            "wilson_center": center,
            "wilson_half_width": half,
        }


class _Handler(BaseHTTPRequestHandler):
    service: AbxService  # injected by make_server

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)

    def _send_json(self, status: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        svc = self.service
        if self.path.startswith("/api/trials/"):
            session = self.path[len("/api/trials/") :]
            if not session:
                return self._send_json(400, {"error": "missing session token"})
            if session == "new":
                session = uuid.uuid4().hex
            return self._send_json(
                200,
                {
                    "session": session,
                    "trials": svc.public_trials(),
                    "answered": svc.log.answered(session),
                },
            )
        if self.path == "/api/results":
            return self._send_json(200, svc.results())
        if self.path.startswith("/media/"):
            media_id = self.path[len("/media/") :]
            path = svc.media_map.get(media_id)
            if path is None or not Path(path).is_file():
                return self._send_json(404, {"error": f"unknown media {media_id!r}"})
            return self._send_file(Path(path))
        if svc.static_dir is not None:
            rel = self.path.lstrip("/") or "index.html"
            target = (svc.static_dir / rel).resolve()
            if svc.static_dir.resolve() in target.parents or target == svc.static_dir.resolve():
                if target.is_file():
                    return self._send_file(target)
        return self._send_json(404, {"error": "not found"})

    def _send_file(self, path: Path):
        ctype = mimetypes.guess_type(str(path))[0] or "application/octet-stream"
        data = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        if self.path != "/api/response":
            return self._send_json(404, {"error": "not found"})
        svc = self.service
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            session = str(payload["session"])
            trial_id = str(payload["trial_id"])
            choice = payload["choice"]
        except (ValueError, KeyError, TypeError):
            return self._send_json(400, {"error": "malformed response body"})
        if choice not in ("A", "B") or not session:
            return self._send_json(400, {"error": "choice must be 'A' or 'B'"})
        if trial_id not in svc.trials:
            return self._send_json(404, {"error": f"unknown trial {trial_id!r}"})
        try:
            rec = svc.log.append(session, trial_id, choice)
        except KeyError:
            return self._send_json(409, {"error": "already answered"})
        return self._send_json(201, {"recorded": rec})


def make_server(service: AbxService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)
