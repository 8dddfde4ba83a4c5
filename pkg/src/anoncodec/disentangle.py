"""Semantic-tier bias mechanisms.

Covers the Laplace local-differential-privacy block that wraps the
semantic quantizer (L1 clipping + calibrated noise), the semantic
distillation loss against pooled teacher states, the additive-margin
softmax speaker loss with gradient reversal, and the composition used to
anonymize latents through the semantic tier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accel import nearest_codeword
from .errors import ConfigError, DegenerateInputError
from .quantizer import CodebookTier


@dataclass(frozen=True)
class LdpConfig:
    """Laplace mechanism parameters.

    Clipping the per-frame L1 norm to ``clip_c`` bounds the L1
    sensitivity by 2*clip_c, so the noise scale is 2*clip_c/epsilon.
    """

    epsilon: float
    clip_c: float
    enabled_in_inference: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("privacy budget epsilon must be > 0")
        if self.clip_c <= 0:
            raise ConfigError("clipping bound must be > 0")

    @property
    def scale_b(self) -> float:
        return 2.0 * self.clip_c / self.epsilon


@dataclass
class TeacherTargets:
    """Hidden states of one teacher layer, before temporal pooling."""

    layer_index: int
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ConfigError("teacher targets must be a T' x D matrix")


@dataclass
class SpeakerClassifierParams:
    """Weights of the desk-scale speaker classifier head."""

    weights: np.ndarray  # (N_spk, D_s), rows normalized at use
    margin: float = 0.4
    scale: float = 30.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigError("classifier weights must be N_spk x D")
        if np.any(np.linalg.norm(self.weights, axis=1) == 0.0):
            raise DegenerateInputError("zero classifier weight row cannot be normalized")

    @property
    def num_speakers(self) -> int:
        return self.weights.shape[0]


def clip_l1(v: np.ndarray, c: float) -> np.ndarray:
    """Scale ``v`` down so its L1 norm is at most ``c``; direction preserved."""
    if c <= 0:
        raise ConfigError("clipping bound must be > 0")
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.sum(np.abs(v)))
    if norm <= c:
        return v.copy()
    return v * (c / norm)


def _clip_frames(frames: np.ndarray, c: float) -> np.ndarray:
    norms = np.sum(np.abs(frames), axis=1)
    scale = np.where(norms > c, c / np.where(norms > 0.0, norms, 1.0), 1.0)
    return frames * scale[:, None]


def laplace_noise(shape, scale_b: float, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF Laplace(0, b) samples: b*sign(u)*ln(1-2|u|), u in (-1/2, 1/2)."""
    u = rng.random(shape) - 0.5
    # u == -0.5 has probability 2**-53; keep log1p finite anyway
    a = np.minimum(2.0 * np.abs(u), 1.0 - 2.0**-53)
    return scale_b * np.sign(u) * np.log1p(-a)


def add_ldp_noise(
    z_proj: np.ndarray, cfg: LdpConfig, rng: np.random.Generator, mode: str
) -> np.ndarray:
    """Clip each frame to the L1 bound and, in train mode, add Laplace noise.

    In infer mode the noise block is omitted and the clipped input is
    returned unchanged (unless the config forces inference noise on).
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"unknown LDP mode {mode!r}")
    z_proj = np.asarray(z_proj, dtype=np.float64)
    if z_proj.ndim != 2:
        raise ConfigError("projection output must be a T x M matrix")
    clipped = _clip_frames(z_proj, cfg.clip_c)
    if mode == "infer" and not cfg.enabled_in_inference:
        return clipped
    return clipped + laplace_noise(clipped.shape, cfg.scale_b, rng)


def estimate_clip_norm(batches) -> float:
    """Mean per-frame L1 norm across all frames of all batches."""
    norms = [np.sum(np.abs(np.asarray(b, dtype=np.float64)), axis=1) for b in batches]
    if not norms or sum(n.size for n in norms) == 0:
        raise DegenerateInputError("no frames to estimate the clipping bound from")
    return float(np.concatenate(norms).mean())


def semantic_distillation_loss(
    z_q0: np.ndarray,
    s_l: np.ndarray,
    lam_l1: float = 0.15,
    lam_cos: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Distillation loss between semantic codes and teacher states.

    Per frame: lam_l1 * ||z - s||_1 + lam_cos * max(0, 1 - cos(z, s)),
    averaged over frames. Returns the loss and its gradient w.r.t. z,
    with the L1 subgradient at 0 taken as 0 and the inactive hinge
    branch contributing 0.
    """
    z = np.asarray(z_q0, dtype=np.float64)
    s = np.asarray(s_l, dtype=np.float64)
    if z.shape != s.shape or z.ndim != 2:
        raise ConfigError("representations must be matching T x D matrices")
    z_norm = np.linalg.norm(z, axis=1)
    s_norm = np.linalg.norm(s, axis=1)
    if np.any(z_norm == 0.0) or np.any(s_norm == 0.0):
        raise DegenerateInputError("zero-norm frame makes the cosine term undefined")
    t = z.shape[0]
    diff = z - s
    l1_per_frame = np.sum(np.abs(diff), axis=1)
    cos = np.sum(z * s, axis=1) / (z_norm * s_norm)
    # 1 - cos == ||u - v||^2 / 2 for unit vectors; this form is exactly 0
    # (and the hinge exactly inactive) when z and s coincide framewise
    unit_diff = z / z_norm[:, None] - s / s_norm[:, None]
    hinge = np.maximum(0.0, np.sum(unit_diff * unit_diff, axis=1) / 2.0)
    loss = float(np.mean(lam_l1 * l1_per_frame + lam_cos * hinge))

    grad = lam_l1 * np.sign(diff)
    active = hinge > 0.0
    if np.any(active):
        d_cos = s / (z_norm * s_norm)[:, None] - (cos / z_norm**2)[:, None] * z
        grad[active] -= lam_cos * d_cos[active]
    return loss, grad / t


def teacher_pool(targets: np.ndarray, factor: int = 2) -> np.ndarray:
    """Average-pool teacher frames along time; a trailing partial block is dropped."""
    targets = np.asarray(targets, dtype=np.float64)
    if factor < 1:
        raise ConfigError("pooling factor must be >= 1")
    t_in = targets.shape[0]
    if t_in < factor:
        raise ConfigError(f"cannot pool {t_in} frames by factor {factor}")
    t_out = t_in // factor
    return targets[: t_out * factor].reshape(t_out, factor, -1).mean(axis=1)


def ams_softmax_loss(
    features: np.ndarray, labels: np.ndarray, params: SpeakerClassifierParams
) -> tuple[float, np.ndarray]:
    """Additive-margin softmax loss with mean reduction over the batch.

    Features and weight rows are L2-normalized inside the operation; the
    returned gradient is w.r.t. the raw (unnormalized) features.
    """
    f = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if f.ndim != 2 or labels.shape != (f.shape[0],):
        raise ConfigError("expected B x D features and B labels")
    n_spk = params.num_speakers
    if labels.min() < 0 or labels.max() >= n_spk:
        raise ValueError("speaker label out of range")
    f_norm = np.linalg.norm(f, axis=1)
    if np.any(f_norm == 0.0):
        raise DegenerateInputError("zero feature row cannot be normalized")
    u = f / f_norm[:, None]
    w = params.weights / np.linalg.norm(params.weights, axis=1)[:, None]

    b = f.shape[0]
    cos = u @ w.T  # (B, N_spk)
    logits = params.scale * cos
    rows = np.arange(b)
    logits[rows, labels] = params.scale * (cos[rows, labels] - params.margin)

    peak = logits.max(axis=1, keepdims=True)
    logsumexp = peak[:, 0] + np.log(np.sum(np.exp(logits - peak), axis=1))
    loss = float(np.mean(logsumexp - logits[rows, labels]))

    soft = np.exp(logits - logsumexp[:, None])
    g_cos = soft.copy()
    g_cos[rows, labels] -= 1.0
    g_u = params.scale / b * (g_cos @ w)
    # through the normalization: (I - u u^T)/||f|| applied rowwise
    grad = (g_u - np.sum(g_u * u, axis=1)[:, None] * u) / f_norm[:, None]
    return loss, grad


def gradient_reversal(upstream_grad: np.ndarray) -> np.ndarray:
    """Backward pass of the reversal layer: negate elementwise.

    The forward pass is the identity on representations, so adversarial
    training reduces to feeding the classifier gradient through this
    sign flip before it reaches the representation.
    """
    return -np.asarray(upstream_grad, dtype=np.float64)


def semantic_anonymize(
    tier: CodebookTier,
    frames: np.ndarray,
    ldp: LdpConfig | None,
    rng: np.random.Generator | None,
    mode: str = "train",
) -> tuple[np.ndarray, np.ndarray]:
    """Run latents through the semantic tier with the optional noise block.

    Projects with w_in, applies clip+noise when an LDP config is given
    (codebook search then uses the noisy vector), and reconstructs with
    w_out. Returns (codes, reconstructed latents).
    """
    frames = np.asarray(frames, dtype=np.float64)
    z_proj = frames @ tier.w_in
    if ldp is not None:
        if rng is None:
            raise ConfigError("LDP noise requires an RNG substream")
        z_proj = add_ldp_noise(z_proj, ldp, rng, mode)
    idx = nearest_codeword(z_proj, tier.codewords)
    return idx, tier.codewords[idx] @ tier.w_out
