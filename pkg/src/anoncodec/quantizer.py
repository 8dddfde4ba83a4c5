"""Factorized, L2-normalized residual vector quantization.

Each tier projects D-dimensional latents into a dense M-dimensional code
space (``w_in``), picks the codeword with the highest cosine similarity,
and projects back up (``w_out``). Residual tiers quantize what the
previous partial reconstruction missed. Includes quantizer dropout,
desk-scale codebook training with straight-through gradients, bit-rate
accounting, and the codebook bundle file format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .accel import nearest_codeword, scatter_add_rows
from .errors import (
    AnoncodecError,
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    TrainingDivergedError,
)
from .rng import substream

BUNDLE_MAGIC = b"USCCB01\n"


# ---------------------------------------------------------------------------
# domain types


@dataclass
class LatentSequence:
    """A T x D matrix of real-valued encoder latents."""

    frames: np.ndarray
    frame_rate_hz: float = 25.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ConfigError("latent sequence must be a T x D matrix with T,D >= 1")
        if not np.all(np.isfinite(self.frames)):
            raise DegenerateInputError("latent sequence contains non-finite entries")
        if self.frame_rate_hz <= 0:
            raise ConfigError("frame_rate_hz must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class CodebookTier:
    """One factorized vector quantizer: projections plus K codewords.

    Codewords are stored unnormalized; L2 normalization happens only
    inside the cosine distance, and the emitted codeword is the raw
    stored entry.
    """

    w_in: np.ndarray  # (D, M)
    w_out: np.ndarray  # (M, D)
    codewords: np.ndarray  # (K, M)
    tier_index: int = 0

    def __post_init__(self):
        self.w_in = np.asarray(self.w_in, dtype=np.float64)
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        self.codewords = np.asarray(self.codewords, dtype=np.float64)
        d, m = self.w_in.shape
        if m > d:
            raise ConfigError(f"code dim {m} exceeds latent dim {d}")
        if self.w_out.shape != (m, d):
            raise ConfigError("w_out shape does not mirror w_in")
        if self.codewords.ndim != 2 or self.codewords.shape[1] != m:
            raise ConfigError("codewords must be K x M")
        if self.codewords.shape[0] < 1:
            raise ConfigError("codebook must hold at least one codeword")
        if self.tier_index < 0:
            raise ConfigError("tier_index must be >= 0")
        norms = np.linalg.norm(self.codewords, axis=1)
        if np.any(norms == 0.0):
            raise DegenerateInputError(
                "zero codeword stored; cosine distance would be undefined"
            )

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    def copy(self) -> "CodebookTier":
        return CodebookTier(
            self.w_in.copy(), self.w_out.copy(), self.codewords.copy(), self.tier_index
        )


@dataclass(frozen=True)
class RVQConfig:
    """Tier layout of the residual quantizer."""

    tier_sizes: tuple[int, ...]
    latent_dim: int
    code_dim: int
    dropout_prob: float = 0.5

    def __post_init__(self):
        if len(self.tier_sizes) < 1:
            raise ConfigError("need at least one tier")
        if any(k < 1 for k in self.tier_sizes):
            raise ConfigError("tier sizes must be >= 1")
        if not (1 <= self.code_dim <= self.latent_dim):
            raise ConfigError("need 1 <= code_dim <= latent_dim")
        if not (0.0 <= self.dropout_prob <= 1.0):
            raise ConfigError("dropout_prob must lie in [0, 1]")

    @property
    def num_tiers(self) -> int:
        return len(self.tier_sizes)

    @classmethod
    def paper_scale(cls) -> "RVQConfig":
        # 6 tiers, 16384-entry semantic codebook, 1024-entry residuals
        return cls((16384, 1024, 1024, 1024, 1024, 1024), 768, 8, 0.5)

    @classmethod
    def desk_scale(cls) -> "RVQConfig":
        # small enough for exhaustive oracles to run in milliseconds
        return cls((256, 64, 64), 16, 4, 0.5)


@dataclass
class QuantizeOutput:
    """Result of encoding one latent sequence with tiers 0..n_used."""

    codes: np.ndarray  # (n_used+1, T) int64
    z_q_partial: list[np.ndarray]  # z_q^0 .. z_q^{n_used}, each (T, D)
    n_used: int
    encoder_grad_stop: bool
    commitment_loss: np.ndarray  # per tier
    codebook_loss: np.ndarray  # per tier

    @property
    def z_q(self) -> np.ndarray:
        return self.z_q_partial[-1]


@dataclass(frozen=True)
class BitrateSpec:
    """Architecture numbers entering the bandwidth computation."""

    sample_rate_khz: float
    strides: tuple[int, ...]
    codebook_sizes: tuple[int, ...]

    def __post_init__(self):
        if self.sample_rate_khz <= 0:
            raise ConfigError("sample rate must be positive")
        if any(s < 1 for s in self.strides):
            raise ConfigError("strides must be >= 1")
        if any(k < 2 for k in self.codebook_sizes):
            raise ConfigError("codebook sizes must be >= 2")

    @property
    def downsample_factor(self) -> int:
        return math.prod(self.strides)


# FaCodec's first row groups two 1024-entry codebooks into the semantic
# representation, so its first entry carries 20 bits.
BITRATE_PRESETS: dict[str, BitrateSpec] = {
    "usc": BitrateSpec(16.0, (2, 2, 4, 5, 8), (16384,) + (1024,) * 5),
    "encodec": BitrateSpec(24.0, (2, 4, 5, 8), (1024,) * 8),
    "dac": BitrateSpec(44.1, (2, 4, 8, 8), (1024,) * 9),
    "speechtokenizer": BitrateSpec(16.0, (2, 4, 5, 8), (1024,) * 8),
    "facodec": BitrateSpec(16.0, (2, 4, 5, 5), (1024 * 1024,) + (1024,) * 4),
}


# ---------------------------------------------------------------------------
# core operations


def vq_lookup(tier: CodebookTier, v: np.ndarray) -> tuple[int, np.ndarray]:
    """Nearest codeword of ``v`` under cosine distance.

    Ties break to the lowest index; the returned codeword is the raw
    (unnormalized) stored entry.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != tier.codewords.shape[1]:
        raise ConfigError("query must be an M-vector matching the codebook")
    if not np.all(np.isfinite(v)):
        raise DegenerateInputError("query vector contains non-finite entries")
    if np.linalg.norm(v) == 0.0:
        raise DegenerateInputError("zero query vector has undefined cosine distance")
    index = int(nearest_codeword(v[None, :], tier.codewords)[0])
    return index, tier.codewords[index].copy()


def quantize_tier(
    tier: CodebookTier, z: np.ndarray
) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    """Project, look up, and reconstruct a single D-vector through one tier."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DegenerateInputError("latent vector contains non-finite entries")
    z_proj = z @ tier.w_in
    index, e_sel = vq_lookup(tier, z_proj)
    z_hat = e_sel @ tier.w_out
    return index, z_hat, z_proj, e_sel


def _check_tiers(config: RVQConfig, tiers: Sequence[CodebookTier]) -> None:
    if len(tiers) != config.num_tiers:
        raise ConfigError("tier list does not match config")
    for i, tier in enumerate(tiers):
        if tier.codewords.shape[0] != config.tier_sizes[i]:
            raise ConfigError(f"tier {i} codebook size differs from config")
        if tier.w_in.shape != (config.latent_dim, config.code_dim):
            raise ConfigError(f"tier {i} projection dims differ from config")


def _tier_reconstruct(tier: CodebookTier, indices: np.ndarray) -> np.ndarray:
    # shared by encode and decode so the two accumulate bit-identically
    return tier.codewords[indices] @ tier.w_out


def rvq_encode(
    config: RVQConfig,
    tiers: Sequence[CodebookTier],
    z_e: LatentSequence,
    n: int,
) -> QuantizeOutput:
    """Encode with tiers 0..n: z_q^i = z_q^{i-1} + VQ_i(z_e - z_q^{i-1}).

    A residual row that is exactly zero carries no direction, so it maps
    to codeword 0 (every cosine ties at zero and ties break low).
    """
    _check_tiers(config, tiers)
    if not (0 <= n <= config.num_tiers - 1):
        raise ValueError(f"tier count n={n} out of range 0..{config.num_tiers - 1}")
    frames = z_e.frames
    t = frames.shape[0]
    codes = np.empty((n + 1, t), dtype=np.int64)
    z_q_partial: list[np.ndarray] = []
    commit = np.empty(n + 1)
    codebook = np.empty(n + 1)
    z_q = np.zeros_like(frames)
    for i in range(n + 1):
        residual = frames if i == 0 else frames - z_q
        z_proj = residual @ tiers[i].w_in
        idx = nearest_codeword(z_proj, tiers[i].codewords)
        codes[i] = idx
        selected = tiers[i].codewords[idx]
        diff = z_proj - selected
        commit[i] = codebook[i] = float(np.mean(np.sum(diff * diff, axis=1)))
        z_q = z_q + _tier_reconstruct(tiers[i], idx)
        z_q_partial.append(z_q)
    return QuantizeOutput(
        codes=codes,
        z_q_partial=z_q_partial,
        n_used=n,
        encoder_grad_stop=(n == 0),
        commitment_loss=commit,
        codebook_loss=codebook,
    )


def rvq_decode(
    config: RVQConfig,
    tiers: Sequence[CodebookTier],
    codes: np.ndarray,
    n: int,
    frame_rate_hz: float = 25.0,
) -> LatentSequence:
    """Sum the per-tier reconstructions for stored codes (inverse bookkeeping)."""
    _check_tiers(config, tiers)
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2:
        raise ConfigError("codes must be a (tiers, T) integer matrix")
    if not (0 <= n < codes.shape[0]):
        raise ValueError(f"tier count n={n} out of range for {codes.shape[0]} code rows")
    if n > config.num_tiers - 1:
        raise ValueError(f"tier count n={n} exceeds configured tiers")
    z_q = None
    for i in range(n + 1):
        idx = codes[i]
        if idx.min() < 0 or idx.max() >= config.tier_sizes[i]:
            raise ValueError(f"code index out of range for tier {i}")
        part = _tier_reconstruct(tiers[i], idx)
        z_q = part if z_q is None else z_q + part
    return LatentSequence(z_q, frame_rate_hz)


def quantizer_dropout_sample(
    p: float, num_tiers: int, rng: np.random.Generator
) -> tuple[int, bool]:
    """Sample the tier count for one training item.

    With probability 1-p all tiers are used; with probability p the count
    is uniform over {0, .., K-1}. Encoder gradients stop exactly when only
    the semantic tier (tier 0) survives.
    """
    if not (0.0 <= p <= 1.0):
        raise ConfigError("dropout probability must lie in [0, 1]")
    if num_tiers < 1:
        raise ConfigError("need at least one tier")
    if rng.random() < p:
        n_used = int(rng.integers(0, num_tiers))
    else:
        n_used = num_tiers - 1
    return n_used, n_used == 0


def vq_losses(
    z_proj: np.ndarray, e_sel: np.ndarray
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Commitment and codebook losses with their analytic gradients.

    The stop-gradient placement makes the commitment loss pull z_proj
    toward the codeword and the codebook loss pull the codeword toward
    z_proj; the two squared distances are numerically equal.
    """
    z_proj = np.asarray(z_proj, dtype=np.float64)
    e_sel = np.asarray(e_sel, dtype=np.float64)
    if not (np.all(np.isfinite(z_proj)) and np.all(np.isfinite(e_sel))):
        raise DegenerateInputError("non-finite input to vq_losses")
    diff = z_proj - e_sel
    l_w = float(np.sum(diff * diff))
    return l_w, l_w, 2.0 * diff, -2.0 * diff


def bitrate(spec: BitrateSpec, n: int) -> float:
    """Bandwidth in kbps when codebooks 0..n are transmitted."""
    if not (0 <= n < len(spec.codebook_sizes)):
        raise ValueError(f"n={n} out of range for {len(spec.codebook_sizes)} codebooks")
    # ceil(log2(k)) in exact integer arithmetic
    bits = sum((k - 1).bit_length() for k in spec.codebook_sizes[: n + 1])
    return spec.sample_rate_khz / spec.downsample_factor * bits


# ---------------------------------------------------------------------------
# desk-scale codebook learning


def _as_frame_arrays(corpus) -> list[np.ndarray]:
    items = []
    for item in corpus:
        frames = item.frames if isinstance(item, LatentSequence) else np.asarray(item, float)
        items.append(frames)
    if not items:
        raise ConfigError("corpus is empty")
    return items


def init_tiers(corpus, config: RVQConfig, seed: int) -> list[CodebookTier]:
    """Build tiers with orthonormal projections and data-sampled codebooks.

    Codewords are drawn uniformly from the first training items' projected
    latents (residual-adjusted for tiers past the first).
    """
    items = _as_frame_arrays(corpus)
    batch = np.concatenate(items[: max(1, min(len(items), 8))], axis=0)
    tiers: list[CodebookTier] = []
    residual = batch
    for i, k in enumerate(config.tier_sizes):
        rng_proj = substream(seed, "init-proj", i)
        q, _ = np.linalg.qr(rng_proj.standard_normal((config.latent_dim, config.latent_dim)))
        w_in = q[:, : config.code_dim].copy()
        w_out = w_in.T.copy()
        z_proj = residual @ w_in
        rng_cw = substream(seed, "init-codebook", i)
        picks = rng_cw.integers(0, z_proj.shape[0], size=k)
        codewords = z_proj[picks].copy()
        zero_rows = np.linalg.norm(codewords, axis=1) == 0.0
        if np.any(zero_rows):
            codewords[zero_rows] = 1e-6 * rng_cw.standard_normal((int(zero_rows.sum()), config.code_dim))
        tier = CodebookTier(w_in, w_out, codewords, tier_index=i)
        tiers.append(tier)
        idx = nearest_codeword(z_proj, codewords)
        residual = residual - _tier_reconstruct(tier, idx)
    return tiers


@dataclass
class TrainResult:
    tiers: list[CodebookTier]
    loss_trace: list[float]
    initial_mse: float
    final_mse: float


def reconstruction_mse(
    config: RVQConfig, tiers: Sequence[CodebookTier], corpus, n: int | None = None
) -> float:
    """Mean squared error of z_q^n against z_e over the whole corpus."""
    if n is None:
        n = config.num_tiers - 1
    items = _as_frame_arrays(corpus)
    total = 0.0
    count = 0
    for frames in items:
        out = rvq_encode(config, tiers, LatentSequence(frames), n)
        total += float(np.sum((out.z_q - frames) ** 2))
        count += frames.size
    return total / count


def train_codebooks(
    corpus,
    config: RVQConfig,
    *,
    learning_rate: float,
    steps: int,
    seed: int,
    lambda_c: float = 1.0,
    lambda_w: float = 0.25,
    tiers: Sequence[CodebookTier] | None = None,
) -> TrainResult:
    """Gradient-descent training of projections and codewords.

    The reconstruction gradient passes straight through the quantization
    step to ``w_in``; codewords learn only from the codebook loss.
    Quantizer dropout picks the tier count per item. Residuals are
    treated as constants during the backward pass.
    """
    items = _as_frame_arrays(corpus)
    if steps < 0:
        raise ConfigError("steps must be >= 0")
    if tiers is None:
        tiers = init_tiers(items, config, seed)
    else:
        _check_tiers(config, tiers)
        tiers = [t.copy() for t in tiers]
    initial_mse = reconstruction_mse(config, tiers, items)

    rng_items = substream(seed, "train-items")
    rng_drop = substream(seed, "train-dropout")
    trace: list[float] = []
    num_tiers = config.num_tiers
    for step in range(steps):
        frames = items[int(rng_items.integers(0, len(items)))]
        n_used, _grad_stop = quantizer_dropout_sample(config.dropout_prob, num_tiers, rng_drop)
        t = frames.shape[0]

        residuals, projs, selections, indices = [], [], [], []
        z_q = np.zeros_like(frames)
        for i in range(n_used + 1):
            residual = frames if i == 0 else frames - z_q
            z_proj = residual @ tiers[i].w_in
            idx = nearest_codeword(z_proj, tiers[i].codewords)
            selected = tiers[i].codewords[idx]
            z_q = z_q + _tier_reconstruct(tiers[i], idx)
            residuals.append(residual)
            projs.append(z_proj)
            selections.append(selected)
            indices.append(idx)

        err = z_q - frames
        l_rec = float(np.mean(err * err))
        g_rec = 2.0 * err / err.size
        loss = l_rec
        for i in range(n_used + 1):
            diff = projs[i] - selections[i]
            tier_sq = float(np.mean(np.sum(diff * diff, axis=1)))
            loss += (lambda_w + lambda_c) * tier_sq

            grad_w_out = selections[i].T @ g_rec
            g_proj = g_rec @ tiers[i].w_out.T + lambda_w * 2.0 * diff / t
            grad_w_in = residuals[i].T @ g_proj
            grad_cw = np.zeros_like(tiers[i].codewords)
            scatter_add_rows(indices[i], lambda_c * (-2.0) * diff / t, grad_cw)

            tiers[i].w_out -= learning_rate * grad_w_out
            tiers[i].w_in -= learning_rate * grad_w_in
            tiers[i].codewords -= learning_rate * grad_cw

        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss} at step {step}")
        trace.append(loss)

    final_mse = reconstruction_mse(config, tiers, items)
    return TrainResult(list(tiers), trace, initial_mse, final_mse)


# ---------------------------------------------------------------------------
# codebook bundle file


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_codebooks(path, config: RVQConfig, tiers: Sequence[CodebookTier], seed: int) -> None:
    """Write a codebook bundle: magic, JSON header line, f32 tier payloads."""
    _check_tiers(config, tiers)
    header = {
        "version": 1,
        "latent_dim": config.latent_dim,
        "code_dim": config.code_dim,
        "tier_sizes": list(config.tier_sizes),
        "dropout_prob": config.dropout_prob,
        "tier_count": config.num_tiers,
        "seed": int(seed),
    }
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(_canonical_json(header).encode("utf-8"))
        fh.write(b"\n")
        for tier in tiers:
            for arr in (tier.w_in, tier.codewords, tier.w_out):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_codebooks(path) -> tuple[RVQConfig, list[CodebookTier], int]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(BUNDLE_MAGIC)] != BUNDLE_MAGIC:
        raise DataFormatError("bad codebook bundle magic", offset=0)
    nl = data.find(b"\n", len(BUNDLE_MAGIC))
    if nl < 0:
        raise DataFormatError("unterminated bundle header", offset=len(BUNDLE_MAGIC))
    try:
        header = json.loads(data[len(BUNDLE_MAGIC) : nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"invalid bundle header: {exc}", offset=len(BUNDLE_MAGIC))
    try:
        config = RVQConfig(
            tuple(header["tier_sizes"]),
            int(header["latent_dim"]),
            int(header["code_dim"]),
            float(header["dropout_prob"]),
        )
        seed = int(header["seed"])
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"bundle header missing field: {exc}", offset=len(BUNDLE_MAGIC))

    offset = nl + 1
    d, m = config.latent_dim, config.code_dim
    tiers = []
    for i, k in enumerate(config.tier_sizes):
        arrays = []
        for shape in ((d, m), (k, m), (m, d)):
            nbytes = 4 * shape[0] * shape[1]
            if offset + nbytes > len(data):
                raise DataFormatError(
                    f"truncated bundle payload in tier {i}", offset=len(data)
                )
            arr = np.frombuffer(data, dtype="<f4", count=shape[0] * shape[1], offset=offset)
            arrays.append(arr.reshape(shape).astype(np.float64))
            offset += nbytes
        tiers.append(CodebookTier(arrays[0], arrays[2], arrays[1], tier_index=i))
    if offset != len(data):
        raise DataFormatError("trailing bytes after last tier", offset=offset)
    return config, tiers, seed
