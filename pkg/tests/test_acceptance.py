"""Acceptance suite: one test per release criterion, each printing a
pass line and enforcing its runtime budget. Run with `pytest -v -s
tests/test_acceptance.py` to see the per-criterion lines."""

import math
import time

import numpy as np
import pytest

from anoncodec.corpus import (
    EmbeddingDataset,
    EmbeddingSpeaker,
    SyntheticCorpusConfig,
    embed_corpus,
    generate_corpus,
    split_corpus,
    surrogate_embedding,
)
from anoncodec.disentangle import (
    LdpConfig,
    add_ldp_noise,
    ams_softmax_loss,
    clip_l1,
    estimate_clip_norm,
    laplace_noise,
    semantic_anonymize,
    semantic_distillation_loss,
    SpeakerClassifierParams,
)
from anoncodec.privacy_eval import (
    WILSON_Z_05,
    linkability,
    random_baseline,
    wilson_interval,
)
from anoncodec.quantizer import (
    BITRATE_PRESETS,
    CodebookTier,
    LatentSequence,
    RVQConfig,
    bitrate,
    rvq_decode,
    rvq_encode,
    train_codebooks,
    vq_losses,
)
from anoncodec.rng import substream


class Budget:
    def __init__(self, name, seconds):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc_type is None:
            assert elapsed < self.seconds, f"{self.name} overran its {self.seconds}s budget"
            print(f"[PASS] {self.name} ({elapsed:.1f}s)")
        else:
            print(f"[FAIL] {self.name} ({elapsed:.1f}s)")
        return False


def test_bitrate_table():
    with Budget("bit-rate table (10 values, +-0.005)", 1.0):
        expected = [
            ("usc", 0, 0.35),
            ("usc", 5, 1.60),
            ("encodec", 0, 0.75),
            ("encodec", 7, 6.00),
            ("dac", 0, 0.86),
            ("dac", 8, 7.75),
            ("speechtokenizer", 0, 0.50),
            ("speechtokenizer", 7, 4.00),
            ("facodec", 0, 1.60),
            ("facodec", 4, 4.80),
        ]
        for preset, n, value in expected:
            got = bitrate(BITRATE_PRESETS[preset], n)
            assert abs(got - value) < 0.005, f"{preset} n={n}: {got} vs {value}"


def test_random_baseline_printed_values():
    with Budget("random baseline N=7974 L=100 (+-0.01)", 1.0):
        b = random_baseline(7974, 100)
        assert abs(b["mu"] - 3987.50) <= 0.01
        assert abs(b["var"] - 52973.94) <= 0.01
        assert abs(b["p1"] - 3452.06) <= 0.01


def test_clt_uniform_rank_simulation():
    with Budget("CLT uniform-rank simulation N=500 L=100", 30.0):
        n, l, speakers = 500, 100, 10**4
        rng = substream(4242, "acceptance-clt")
        mean_ranks = rng.integers(1, n + 1, size=(speakers, l)).mean(axis=1)
        sigma_l = math.sqrt((n - 1) ** 2 / (12 * l))
        assert abs(mean_ranks.mean() - 250.5) < 3 * sigma_l


def _brute_force_lookup(codewords, v):
    best, best_k = -np.inf, 0
    vn = np.linalg.norm(v)
    for k in range(codewords.shape[0]):
        c = float(v @ codewords[k]) / (vn * np.linalg.norm(codewords[k]))
        if c > best:
            best, best_k = c, k
    return best_k


def test_rvq_identity_suite():
    with Budget("RVQ identity suite (1000 instances)", 10.0):
        rng = substream(7001, "acceptance-rvq")
        d, m, sizes, t = 6, 2, (8, 8, 8), 4
        config = RVQConfig(sizes, d, m, 0.5)
        for _ in range(1000):
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            tiers = [
                CodebookTier(q[:, :m], q[:, :m].T.copy(), rng.standard_normal((k, m)), i)
                for i, k in enumerate(sizes)
            ]
            frames = rng.standard_normal((t, d))
            out = rvq_encode(config, tiers, LatentSequence(frames), 2)

            # decode of the emitted codes is bit-exact against the encoder sum
            decoded = rvq_decode(config, tiers, out.codes, 2)
            assert np.array_equal(decoded.frames, out.z_q)

            # lookups match the exhaustive argmax, and the independently
            # accumulated summed form agrees with the recursive one
            increments, z_prev = [], np.zeros_like(frames)
            for i in range(3):
                residual = frames if i == 0 else frames - z_prev
                recon = np.empty_like(frames)
                for row in range(t):
                    z_proj = tiers[i].w_in.T @ residual[row]
                    k = _brute_force_lookup(tiers[i].codewords, z_proj)
                    assert k == out.codes[i][row]
                    recon[row] = tiers[i].w_out.T @ tiers[i].codewords[k]
                increments.append(recon)
                z_prev = z_prev + recon
            summed = increments[0] + np.sum(np.stack(increments[1:]), axis=0)
            assert np.max(np.abs(summed - out.z_q)) < 1e-9


def _relative_gradient_error(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), 1e-9)
    return np.max(np.abs(analytic - numeric)) / scale


def test_gradient_suite():
    with Budget("gradient suite (3 x 200 random points, rel err < 1e-4)", 10.0):
        rng = substream(7002, "acceptance-grad")
        h = 1e-5

        checked = 0
        while checked < 200:  # semantic distillation, away from kinks
            z = rng.standard_normal((2, 3))
            s = rng.standard_normal((2, 3))
            cos = np.sum(z * s, axis=1) / (
                np.linalg.norm(z, axis=1) * np.linalg.norm(s, axis=1)
            )
            if np.min(np.abs(z - s)) < 1e-2 or np.max(cos) > 0.95:
                continue
            _, grad = semantic_distillation_loss(z, s)
            fd = np.zeros_like(z)
            for i in range(2):
                for j in range(3):
                    dz = np.zeros_like(z)
                    dz[i, j] = h
                    fd[i, j] = (
                        semantic_distillation_loss(z + dz, s)[0]
                        - semantic_distillation_loss(z - dz, s)[0]
                    ) / (2 * h)
            assert _relative_gradient_error(grad, fd) < 1e-4
            checked += 1

        params = SpeakerClassifierParams(rng.standard_normal((4, 3)))
        for _ in range(200):  # AMSoftmax
            f = rng.standard_normal((2, 3))
            labels = rng.integers(0, 4, size=2)
            _, grad = ams_softmax_loss(f, labels, params)
            fd = np.zeros_like(f)
            for i in range(2):
                for j in range(3):
                    df = np.zeros_like(f)
                    df[i, j] = h
                    fd[i, j] = (
                        ams_softmax_loss(f + df, labels, params)[0]
                        - ams_softmax_loss(f - df, labels, params)[0]
                    ) / (2 * h)
            assert _relative_gradient_error(grad, fd) < 1e-4

        for _ in range(200):  # commitment / codebook losses
            z = rng.standard_normal(4)
            e = rng.standard_normal(4)
            _, _, g_z, g_e = vq_losses(z, e)
            fd_z = np.zeros(4)
            fd_e = np.zeros(4)
            for j in range(4):
                dv = np.zeros(4)
                dv[j] = h
                fd_z[j] = (vq_losses(z + dv, e)[0] - vq_losses(z - dv, e)[0]) / (2 * h)
                fd_e[j] = (vq_losses(z, e + dv)[1] - vq_losses(z, e - dv)[1]) / (2 * h)
            assert _relative_gradient_error(g_z, fd_z) < 1e-4
            assert _relative_gradient_error(g_e, fd_e) < 1e-4


def test_laplace_mechanism():
    with Budget("Laplace mechanism (variance 2%, infer-mode identity)", 10.0):
        cfg = LdpConfig(epsilon=15.0, clip_c=1.0)
        samples = laplace_noise(10**6, cfg.scale_b, substream(7003, "acceptance-laplace"))
        target = 2.0 * cfg.scale_b**2
        assert abs(samples.var() - target) / target < 0.02

        rng = substream(7004, "acceptance-laplace-frames")
        frames = 3.0 * rng.standard_normal((500, 4))
        out = add_ldp_noise(frames, cfg, substream(0, "unused"), "infer")
        clipped = np.stack([clip_l1(row, cfg.clip_c) for row in frames])
        assert np.array_equal(out, clipped)


def _anonymized_embeddings(part, tier0, ldp, seed):
    speakers = []
    for spk in part.speakers:
        rows = [
            surrogate_embedding(
                semantic_anonymize(tier0, u, ldp, substream(seed, "ldp", spk.speaker_id, i), "train")[1]
            )
            for i, u in enumerate(spk.utterances)
        ]
        speakers.append(EmbeddingSpeaker(spk.speaker_id, np.stack(rows)))
    return EmbeddingDataset(speakers)


def test_end_to_end_privacy_ordering():
    with Budget("end-to-end privacy ordering (N=200)", 300.0):
        cfg = SyntheticCorpusConfig(
            n_speakers=200,
            utterances_per_speaker=10,
            frames_per_utterance=40,
            latent_dim=16,
            speaker_spread=0.5,
            content_spread=0.5,
            noise_scale=0.05,
            seed=77,
        )
        full = generate_corpus(cfg)
        ref, ev = split_corpus(full)
        result = train_codebooks(
            full.all_utterances(), RVQConfig.desk_scale(), learning_rate=0.05, steps=2000, seed=7
        )
        tier0 = result.tiers[0]
        clip_c = estimate_clip_norm([u @ tier0.w_in for u in full.all_utterances()])

        grand = {}
        for name, eps in (("none", None), ("eps50", 50.0), ("eps0.5", 0.5)):
            ldp = None if eps is None else LdpConfig(eps, clip_c)
            report = linkability(
                _anonymized_embeddings(ev, tier0, ldp, 100),
                _anonymized_embeddings(ref, tier0, ldp, 101),
                L=64,
                seed=55,
            )
            grand[name] = float(np.mean([r for _, r in report.per_speaker]))
        assert grand["none"] < grand["eps50"] < grand["eps0.5"], grand

        # perfect-separation corpus behaves like the recordings row (1.01/1.00)
        sep = SyntheticCorpusConfig(
            n_speakers=200,
            utterances_per_speaker=10,
            frames_per_utterance=40,
            latent_dim=16,
            speaker_spread=1.0,
            content_spread=0.0,
            noise_scale=0.0,
            seed=78,
        )
        ref_p, ev_p = split_corpus(generate_corpus(sep))
        report = linkability(embed_corpus(ev_p), embed_corpus(ref_p, "reference"), L=8, seed=9)
        assert report.p50 == 1.0 and report.p1 == 1.0


def test_desk_scale_codebook_training():
    with Budget("desk-scale codebook training", 120.0):
        rng = substream(7, "clusters")
        centroids = np.array([[3.0, 3.0], [-3.0, 3.0], [-3.0, -3.0], [3.0, -3.0]])
        items = [centroids[i % 4] + 0.05 * rng.standard_normal((40, 2)) for i in range(32)]
        result = train_codebooks(
            items, RVQConfig((4,), 2, 2, 0.5), learning_rate=0.05, steps=1500, seed=0
        )
        assert result.final_mse < 0.25 * result.initial_mse

        corpus_cfg = SyntheticCorpusConfig(
            n_speakers=20,
            utterances_per_speaker=4,
            frames_per_utterance=30,
            latent_dim=8,
            speaker_spread=1.0,
            content_spread=0.6,
            noise_scale=0.05,
            seed=5,
        )
        mixed = generate_corpus(corpus_cfg).all_utterances()
        three = train_codebooks(
            mixed, RVQConfig((32, 16, 16), 8, 4, 0.5), learning_rate=0.05, steps=3000, seed=0
        )
        one = train_codebooks(
            mixed, RVQConfig((32,), 8, 4, 0.5), learning_rate=0.05, steps=3000, seed=0
        )
        assert three.final_mse <= one.final_mse


def test_wilson_endpoints():
    with Budget("Wilson interval endpoints", 1.0):
        center, half = wilson_interval(0, 20)
        assert center - half == 0.0

        center, half = wilson_interval(50, 100)
        z = WILSON_Z_05
        expected_half = (
            z * math.sqrt(0.5 * 0.5 / 100 + z * z / (4 * 100**2)) / (1 + z * z / 100)
        )
        assert abs(center - 0.500) < 1e-4
        assert abs(half - expected_half) < 1e-4
        assert abs(half - 0.0962) < 1e-4
