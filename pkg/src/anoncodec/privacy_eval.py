"""k-anonymity privacy test: rank statistics and analytic baselines.

For each speaker and each of L tests, one evaluation utterance is scored
by cosine similarity against a panel holding one reference utterance per
speaker; the rank of the same-speaker reference in the descending
similarity list is the test outcome. Reports carry the median (p50) and
first percentile (p1, the k-anonymity factor) of the per-speaker mean
ranks next to the closed-form random-guessing baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .accel import diagonal_ranks
from .corpus import EmbeddingDataset
from .errors import ConfigError, DegenerateInputError
from .rng import substream

# z-scores used by the reports: first percentile of the standard normal,
# and the two-sided 5% Wilson quantile
Z_FIRST_PERCENTILE = -2.326348
WILSON_Z_05 = 1.959964


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


@dataclass
class RankMatrix:
    ranks: np.ndarray  # (L, N)
    mean_ranks: np.ndarray  # (N,)
    speaker_ids: list[str]
    L: int
    N: int
    seed: int


@dataclass
class PrivacyReport:
    mode: str  # linkability | singling_out
    N: int
    L: int
    seed: int
    p50: float
    p1: float
    baseline: dict
    per_speaker: list[tuple[str, float]]

    def to_json(self) -> str:
        payload = {
            "mode": self.mode,
            "N": self.N,
            "L": self.L,
            "seed": self.seed,
            "p50": self.p50,
            "p1": self.p1,
            "baseline": self.baseline,
            "per_speaker": [{"id": i, "mean_rank": r} for i, r in self.per_speaker],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PrivacyReport":
        raw = json.loads(text)
        return cls(
            mode=raw["mode"],
            N=int(raw["N"]),
            L=int(raw["L"]),
            seed=int(raw["seed"]),
            p50=float(raw["p50"]),
            p1=float(raw["p1"]),
            baseline=raw["baseline"],
            per_speaker=[(e["id"], float(e["mean_rank"])) for e in raw["per_speaker"]],
        )


def _normalized_embeddings(ds: EmbeddingDataset) -> dict[str, np.ndarray]:
    out = {}
    for spk in ds.speakers:
        norms = np.linalg.norm(spk.embeddings, axis=1)
        if np.any(norms == 0.0):
            raise DegenerateInputError(f"zero embedding for speaker {spk.speaker_id}")
        out[spk.speaker_id] = spk.embeddings / norms[:, None]
    return out


def rank_test(
    eval_ds: EmbeddingDataset,
    ref_ds: EmbeddingDataset,
    L: int,
    seed: int,
    tie_policy: str = "index",
) -> RankMatrix:
    """Run L identification tests per speaker and collect the rank matrix.

    Within a test each speaker contributes one utterance drawn from its
    own substream, so results are independent of evaluation order. Ties
    resolve by speaker index unless ``tie_policy='average'``.
    """
    if L < 1:
        raise ConfigError("need at least one test")
    if tie_policy not in ("index", "average"):
        raise ConfigError(f"unknown tie policy {tie_policy!r}")
    ids = [s.speaker_id for s in eval_ds.speakers]
    if set(ids) != {s.speaker_id for s in ref_ds.speakers}:
        raise ConfigError("reference and evaluation partitions cover different speakers")
    n = len(ids)
    eval_emb = _normalized_embeddings(eval_ds)
    ref_emb = _normalized_embeddings(ref_ds)

    picks_eval = np.empty((n, L), dtype=np.int64)
    picks_ref = np.empty((n, L), dtype=np.int64)
    for s, ident in enumerate(ids):
        picks_eval[s] = substream(seed, "rank-eval", ident).integers(
            0, eval_emb[ident].shape[0], size=L
        )
        picks_ref[s] = substream(seed, "rank-ref", ident).integers(
            0, ref_emb[ident].shape[0], size=L
        )

    eval_stack = [eval_emb[i] for i in ids]
    ref_stack = [ref_emb[i] for i in ids]
    ranks = np.empty((L, n), dtype=np.float64)
    for l in range(L):
        x = np.stack([eval_stack[s][picks_eval[s, l]] for s in range(n)])
        y = np.stack([ref_stack[s][picks_ref[s, l]] for s in range(n)])
        ranks[l] = diagonal_ranks(x @ y.T, tie_average=(tie_policy == "average"))
    return RankMatrix(ranks, ranks.mean(axis=0), ids, L, n, seed)


def percentiles(mean_ranks) -> tuple[float, float]:
    """Median and first percentile with linear interpolation on (n-1) spacing."""
    values = np.asarray(mean_ranks, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("no mean ranks")
    p50, p1 = np.percentile(values, [50.0, 1.0])
    return float(p50), float(p1)


def random_baseline(N: int, L: int) -> dict:
    """Closed-form rank statistics of random guessing over N speakers, L tests."""
    if N < 1 or L < 1:
        raise ConfigError("need N >= 1 and L >= 1")
    mu = (N + 1) / 2.0
    var = (N - 1) ** 2 / (12.0 * L)
    return {"mu": mu, "var": var, "p50": mu, "p1": mu + Z_FIRST_PERCENTILE * np.sqrt(var)}


def _build_report(mode: str, rm: RankMatrix) -> PrivacyReport:
    p50, p1 = percentiles(rm.mean_ranks)
    return PrivacyReport(
        mode=mode,
        N=rm.N,
        L=rm.L,
        seed=rm.seed,
        p50=p50,
        p1=p1,
        baseline=random_baseline(rm.N, rm.L),
        per_speaker=list(zip(rm.speaker_ids, rm.mean_ranks.tolist())),
    )


def linkability(
    anon_eval: EmbeddingDataset,
    anon_ref: EmbeddingDataset,
    L: int,
    seed: int,
    tie_policy: str = "index",
) -> PrivacyReport:
    """Can two anonymized samples of one speaker be linked? Both sides anonymized."""
    return _build_report("linkability", rank_test(anon_eval, anon_ref, L, seed, tie_policy))


def singling_out(
    orig_eval: EmbeddingDataset,
    anon_ref: EmbeddingDataset,
    L: int,
    seed: int,
    tie_policy: str = "index",
) -> PrivacyReport:
    """Can the original identity be located in the anonymized reference set?"""
    return _build_report("singling_out", rank_test(orig_eval, anon_ref, L, seed, tie_policy))


def wilson_interval(k: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    """Wilson score interval as (center, half_width)."""
    if n < 1:
        raise ValueError("need at least one trial")
    if not (0 <= k <= n):
        raise ValueError("successes must lie in 0..n")
    z = WILSON_Z_05 if alpha == 0.05 else float(ndtri(1.0 - alpha / 2.0))
    z2 = z * z
    denom = n + z2
    if k == 0 or k == n:
        # p_hat(1-p_hat) vanishes; sharing one expression keeps the
        # boundary endpoint exactly 0 (or 1 minus the center) in floats
        half = (z2 / 2.0) / denom
        center = half if k == 0 else (n + z2 / 2.0) / denom
        return center, half
    p_hat = k / n
    center = (k + z2 / 2.0) / denom
    half = z * np.sqrt(p_hat * (1.0 - p_hat) * n + z2 / 4.0) / denom
    return center, float(half)


def similar_speaker_pool(report: PrivacyReport, speaker_id: str) -> list[str]:
    """Speakers ranked strictly worse (higher mean rank) than the query speaker."""
    if report.mode != "singling_out":
        raise ConfigError("candidate pools are defined on singling-out reports")
    by_id = dict(report.per_speaker)
    if speaker_id not in by_id:
        raise ValueError(f"unknown speaker {speaker_id!r}")
    own = by_id[speaker_id]
    return [i for i, r in report.per_speaker if r > own]


def correlation_metrics(a, b) -> dict:
    """Pearson, Spearman (average-tie ranks) and RMSE of two sequences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ConfigError("need two equal-length sequences of >= 2 values")

    def _pearson(x, y):
        xc = x - x.mean()
        yc = y - y.mean()
        sx = np.sqrt(np.sum(xc * xc))
        sy = np.sqrt(np.sum(yc * yc))
        if sx == 0.0 or sy == 0.0:
            raise DegenerateInputError("correlation undefined for a constant sequence")
        return float(np.sum(xc * yc) / (sx * sy))

    return {
        "pearson": _pearson(a, b),
        "spearman": _pearson(rankdata(a), rankdata(b)),
        "rmse": float(np.sqrt(np.mean((a - b) ** 2))),
    }
