"""Synthetic latent corpora and the shared binary dataset format.

A synthetic speaker is a fixed random centroid; every frame of every
utterance adds a draw from a shared bank of content prototypes plus a
little noise, all seed-deterministic. Utterance embeddings are the
time-mean of the frames, L2-normalized (the desk-scale stand-in for a
speaker-verification embedding).

One binary layout (magic ``USCEMB01``) serves embedding datasets,
latent corpora, and teacher targets; latent matrices carry an extra
frame-count word per utterance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError, DegenerateInputError
from .rng import substream

EMB_MAGIC = b"USCEMB01"


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    n_speakers: int = 200
    utterances_per_speaker: int = 10
    frames_per_utterance: int = 40
    latent_dim: int = 16
    speaker_spread: float = 1.0
    content_spread: float = 0.5
    noise_scale: float = 0.05
    n_content_prototypes: int = 32
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.n_speakers,
            self.utterances_per_speaker,
            self.frames_per_utterance,
            self.latent_dim,
            self.n_content_prototypes,
        )
        if any(c < 1 for c in counts):
            raise ConfigError("all corpus counts must be >= 1")
        if self.speaker_spread < 0 or self.content_spread < 0 or self.noise_scale < 0:
            raise ConfigError("spreads and noise must be >= 0")


@dataclass
class LatentSpeaker:
    speaker_id: str
    utterances: list[np.ndarray]  # each (T, D)


@dataclass
class LatentCorpus:
    speakers: list[LatentSpeaker]

    @property
    def dim(self) -> int:
        return self.speakers[0].utterances[0].shape[1]

    def all_utterances(self) -> list[np.ndarray]:
        return [u for spk in self.speakers for u in spk.utterances]


@dataclass
class EmbeddingSpeaker:
    speaker_id: str
    embeddings: np.ndarray  # (U, D)


@dataclass
class EmbeddingDataset:
    speakers: list[EmbeddingSpeaker]
    partition_tag: str = "evaluation"

    def __post_init__(self):
        if self.partition_tag not in ("reference", "evaluation"):
            raise ConfigError("partition_tag must be 'reference' or 'evaluation'")
        ids = [s.speaker_id for s in self.speakers]
        if len(set(ids)) != len(ids):
            raise ConfigError("speaker ids must be unique")
        dims = {s.embeddings.shape[1] for s in self.speakers}
        if len(dims) > 1:
            raise ConfigError("all embeddings must share one dimension")
        for s in self.speakers:
            if s.embeddings.ndim != 2 or s.embeddings.shape[0] < 1:
                raise ConfigError(f"speaker {s.speaker_id} has no utterances")

    @property
    def num_speakers(self) -> int:
        return len(self.speakers)

    @property
    def dim(self) -> int:
        return self.speakers[0].embeddings.shape[1]


def generate_corpus(cfg: SyntheticCorpusConfig) -> LatentCorpus:
    """Deterministically synthesize speakers x utterances of latent frames."""
    bank = substream(cfg.seed, "content-bank").standard_normal(
        (cfg.n_content_prototypes, cfg.latent_dim)
    ) * cfg.content_spread
    width = len(str(max(cfg.n_speakers - 1, 1)))
    speakers = []
    for s in range(cfg.n_speakers):
        centroid = substream(cfg.seed, "speaker-centroid", s).standard_normal(
            cfg.latent_dim
        ) * cfg.speaker_spread
        utterances = []
        for u in range(cfg.utterances_per_speaker):
            rng = substream(cfg.seed, "utterance", s, u)
            picks = rng.integers(0, cfg.n_content_prototypes, size=cfg.frames_per_utterance)
            frames = centroid[None, :] + bank[picks]
            frames = frames + cfg.noise_scale * rng.standard_normal(frames.shape)
            utterances.append(frames)
        speakers.append(LatentSpeaker(f"s{s:0{width}d}", utterances))
    return LatentCorpus(speakers)


def surrogate_embedding(frames: np.ndarray) -> np.ndarray:
    """Time-mean of the frames, L2-normalized."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ConfigError("utterance must be a T x D matrix")
    mean = frames.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise DegenerateInputError("utterance mean is the zero vector")
    return mean / norm


def embed_corpus(corpus: LatentCorpus, partition_tag: str = "evaluation") -> EmbeddingDataset:
    speakers = [
        EmbeddingSpeaker(spk.speaker_id, np.stack([surrogate_embedding(u) for u in spk.utterances]))
        for spk in corpus.speakers
    ]
    return EmbeddingDataset(speakers, partition_tag)


def split_corpus(corpus: LatentCorpus) -> tuple[LatentCorpus, LatentCorpus]:
    """Even-indexed utterances form the reference partition, odd the evaluation."""
    ref, ev = [], []
    for spk in corpus.speakers:
        if len(spk.utterances) < 2:
            raise ConfigError(f"speaker {spk.speaker_id} has too few utterances to split")
        ref.append(LatentSpeaker(spk.speaker_id, spk.utterances[0::2]))
        ev.append(LatentSpeaker(spk.speaker_id, spk.utterances[1::2]))
    return LatentCorpus(ref), LatentCorpus(ev)


# ---------------------------------------------------------------------------
# binary file format


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise DataFormatError(f"{self.path}: truncated while reading {what}", offset=self.offset)
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32_matrix(self, rows: int, cols: int, what: str) -> np.ndarray:
        raw = self.take(4 * rows * cols, what)
        return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float64)

    def expect_magic(self):
        if self.take(len(EMB_MAGIC), "magic") != EMB_MAGIC:
            raise DataFormatError(f"{self.path}: bad magic", offset=0)

    def expect_eof(self):
        if self.offset != len(self.data):
            raise DataFormatError(f"{self.path}: trailing bytes after payload", offset=self.offset)


def _write_speaker_header(fh, speaker_id: str, n_utt: int, dim: int):
    ident = speaker_id.encode("utf-8")
    if len(ident) > 0xFFFF:
        raise ConfigError("speaker id too long for the format")
    fh.write(struct.pack("<H", len(ident)))
    fh.write(ident)
    fh.write(struct.pack("<II", n_utt, dim))


def write_embedding_file(path, dataset: EmbeddingDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<I", dataset.num_speakers))
        for spk in dataset.speakers:
            emb = np.ascontiguousarray(spk.embeddings, dtype="<f4")
            _write_speaker_header(fh, spk.speaker_id, emb.shape[0], emb.shape[1])
            fh.write(emb.tobytes())


def read_embedding_file(path, partition_tag: str = "evaluation") -> EmbeddingDataset:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    r.expect_magic()
    n_speakers = r.u32("speaker count")
    speakers = []
    dim0 = None
    for _ in range(n_speakers):
        ident = r.take(r.u16("id length"), "speaker id").decode("utf-8")
        n_utt = r.u32("utterance count")
        dim = r.u32("dimension")
        if n_utt < 1 or dim < 1:
            raise DataFormatError(f"{path}: empty speaker block for {ident!r}", offset=r.offset)
        if dim0 is None:
            dim0 = dim
        elif dim != dim0:
            raise DataFormatError(
                f"{path}: dimension mismatch for {ident!r} ({dim} != {dim0})", offset=r.offset
            )
        speakers.append(EmbeddingSpeaker(ident, r.f32_matrix(n_utt, dim, f"embeddings of {ident!r}")))
    r.expect_eof()
    return EmbeddingDataset(speakers, partition_tag)


def write_latent_file(path, corpus: LatentCorpus) -> None:
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<I", len(corpus.speakers)))
        for spk in corpus.speakers:
            dim = spk.utterances[0].shape[1]
            _write_speaker_header(fh, spk.speaker_id, len(spk.utterances), dim)
            for utt in spk.utterances:
                if utt.shape[1] != dim:
                    raise ConfigError(f"inconsistent dims within speaker {spk.speaker_id}")
                fh.write(struct.pack("<I", utt.shape[0]))
                fh.write(np.ascontiguousarray(utt, dtype="<f4").tobytes())


def read_latent_file(path) -> LatentCorpus:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    r.expect_magic()
    n_speakers = r.u32("speaker count")
    speakers = []
    dim0 = None
    for _ in range(n_speakers):
        ident = r.take(r.u16("id length"), "speaker id").decode("utf-8")
        n_utt = r.u32("utterance count")
        dim = r.u32("dimension")
        if n_utt < 1 or dim < 1:
            raise DataFormatError(f"{path}: empty speaker block for {ident!r}", offset=r.offset)
        if dim0 is None:
            dim0 = dim
        elif dim != dim0:
            raise DataFormatError(
                f"{path}: dimension mismatch for {ident!r} ({dim} != {dim0})", offset=r.offset
            )
        utterances = []
        for u in range(n_utt):
            t = r.u32("frame count")
            if t < 1:
                raise DataFormatError(f"{path}: empty utterance {u} of {ident!r}", offset=r.offset)
            utterances.append(r.f32_matrix(t, dim, f"utterance {u} of {ident!r}"))
        speakers.append(LatentSpeaker(ident, utterances))
    r.expect_eof()
    return LatentCorpus(speakers)
