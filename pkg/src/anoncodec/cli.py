"""Command-line entry point.

Subcommands read and write the binary/JSON artifacts defined by the
library modules. Exit codes: 0 success, 2 invalid configuration or
usage, 3 missing file, 4 computation or data error. Stochastic
subcommands require an explicit seed; there is no hidden entropy.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import abx_service, corpus, disentangle, losses, privacy_eval, quantizer
from .errors import AnoncodecError, ConfigError
from .rng import substream

DATA_DIR_ENV = "ANONCODEC_DATA_DIR"


# ---------------------------------------------------------------------------
# toolkit config file


@dataclass
class ToolkitConfig:
    rvq: quantizer.RVQConfig = field(default_factory=quantizer.RVQConfig.desk_scale)
    ldp: dict = field(default_factory=lambda: {"epsilon": 15.0, "clip_c": None, "estimate_clip": True})
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    corpus: corpus.SyntheticCorpusConfig = field(default_factory=corpus.SyntheticCorpusConfig)
    eval: dict = field(default_factory=lambda: {"L": 32, "seed": None})
    corpus_seed_explicit: bool = False


def _reject_unknown(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_toolkit_config(path) -> ToolkitConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    _reject_unknown(raw, {"version", "rvq", "ldp", "weights", "corpus", "eval"}, "config")
    if raw.get("version") != 1:
        raise ConfigError(f"{path}: unsupported or missing config version")
    cfg = ToolkitConfig()
    try:
        if "rvq" in raw:
            sec = raw["rvq"]
            _reject_unknown(sec, {"tier_sizes", "latent_dim", "code_dim", "dropout_prob"}, "rvq")
            base = cfg.rvq
            cfg.rvq = quantizer.RVQConfig(
                tuple(sec.get("tier_sizes", base.tier_sizes)),
                int(sec.get("latent_dim", base.latent_dim)),
                int(sec.get("code_dim", base.code_dim)),
                float(sec.get("dropout_prob", base.dropout_prob)),
            )
        if "ldp" in raw:
            sec = raw["ldp"]
            _reject_unknown(sec, {"epsilon", "clip_c", "estimate_clip"}, "ldp")
            cfg.ldp.update(sec)
            if float(cfg.ldp["epsilon"]) <= 0:
                raise ConfigError("ldp.epsilon must be > 0")
        if "weights" in raw:
            sec = raw["weights"]
            allowed = {f"lambda_{n}" for n in losses.TOTAL_LOSS_TERMS}
            _reject_unknown(sec, allowed, "weights")
            cfg.weights = losses.LossWeights(**{k: float(v) for k, v in sec.items()})
        if "corpus" in raw:
            sec = raw["corpus"]
            fields = {
                "n_speakers", "utterances_per_speaker", "frames_per_utterance",
                "latent_dim", "speaker_spread", "content_spread", "noise_scale",
                "n_content_prototypes", "seed",
            }
            _reject_unknown(sec, fields, "corpus")
            cfg.corpus_seed_explicit = "seed" in sec
            cfg.corpus = corpus.SyntheticCorpusConfig(**{**asdict(cfg.corpus), **sec})
        if "eval" in raw:
            sec = raw["eval"]
            _reject_unknown(sec, {"L", "seed"}, "eval")
            cfg.eval.update(sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}")
    return cfg


def _resolve(path: str) -> Path:
    p = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _open_input(path: str) -> Path:
    p = _resolve(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _load_dataset(path: Path, kind: str, tag: str) -> corpus.EmbeddingDataset:
    if kind == "embeddings":
        return corpus.read_embedding_file(path, partition_tag=tag)
    if kind == "latents":
        return corpus.embed_corpus(corpus.read_latent_file(path), partition_tag=tag)
    raise ConfigError(f"unknown dataset kind {kind!r}")


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_gen_data(args) -> int:
    cfg = load_toolkit_config(_open_input(args.config)) if args.config else ToolkitConfig()
    corpus_cfg = cfg.corpus
    if args.seed is not None:
        corpus_cfg = corpus.SyntheticCorpusConfig(**{**asdict(corpus_cfg), "seed": args.seed})
    elif not cfg.corpus_seed_explicit:
        raise ConfigError("gen-data is stochastic: pass --seed or set corpus.seed in the config")
    full = corpus.generate_corpus(corpus_cfg)
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus.write_latent_file(out, full)
    ref, ev = corpus.split_corpus(full)
    ref_path = out.parent / (out.stem + ".ref" + out.suffix)
    eval_path = out.parent / (out.stem + ".eval" + out.suffix)
    corpus.write_latent_file(ref_path, ref)
    corpus.write_latent_file(eval_path, ev)
    print(f"wrote {out} (+ {ref_path.name}, {eval_path.name}) "
          f"with {corpus_cfg.n_speakers} speakers")
    return 0


def _cmd_train(args) -> int:
    cfg = load_toolkit_config(_open_input(args.config)) if args.config else ToolkitConfig()
    latents = corpus.read_latent_file(_open_input(args.input))
    result = quantizer.train_codebooks(
        latents.all_utterances(),
        cfg.rvq,
        learning_rate=args.lr,
        steps=args.steps,
        seed=args.seed,
        lambda_c=cfg.weights.lambda_c,
        lambda_w=cfg.weights.lambda_w,
    )
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    quantizer.save_codebooks(out, cfg.rvq, result.tiers, args.seed)
    print(
        f"trained {cfg.rvq.num_tiers} tiers for {args.steps} steps: "
        f"mse {result.initial_mse:.6f} -> {result.final_mse:.6f}; wrote {out}"
    )
    return 0


def _cmd_quantize(args) -> int:
    config, tiers, _seed = quantizer.load_codebooks(_open_input(args.codebooks))
    latents = corpus.read_latent_file(_open_input(args.input))
    n = args.tiers
    speakers = []
    for spk in latents.speakers:
        encoded = [
            quantizer.rvq_encode(config, tiers, quantizer.LatentSequence(u), n).codes.tolist()
            for u in spk.utterances
        ]
        speakers.append({"id": spk.speaker_id, "utterances": encoded})
    payload = {"version": 1, "n_tiers": n + 1, "speakers": speakers}
    out = _resolve(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")
    print(f"wrote {out}")
    return 0


def _cmd_anonymize(args) -> int:
    config, tiers, _seed = quantizer.load_codebooks(_open_input(args.codebooks))
    latents = corpus.read_latent_file(_open_input(args.input))
    tier0 = tiers[0]
    ldp_cfg = None
    if not args.no_ldp:
        clip_c = args.clip_c
        if clip_c is None:
            projected = [u @ tier0.w_in for u in latents.all_utterances()]
            clip_c = disentangle.estimate_clip_norm(projected)
            print(f"estimated clip bound C={clip_c:.4f}")
        ldp_cfg = disentangle.LdpConfig(epsilon=args.epsilon, clip_c=clip_c)
    speakers = []
    for spk in latents.speakers:
        rows = []
        for u_idx, frames in enumerate(spk.utterances):
            rng = substream(args.seed, "ldp", spk.speaker_id, u_idx)
            _codes, recon = disentangle.semantic_anonymize(tier0, frames, ldp_cfg, rng, "train")
            rows.append(corpus.surrogate_embedding(recon))
        speakers.append(corpus.EmbeddingSpeaker(spk.speaker_id, np.stack(rows)))
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus.write_embedding_file(out, corpus.EmbeddingDataset(speakers))
    mode = "no-ldp" if ldp_cfg is None else f"epsilon={args.epsilon}"
    print(f"anonymized {len(speakers)} speakers ({mode}); wrote {out}")
    return 0


def _cmd_eval_privacy(args) -> int:
    ref = _load_dataset(_open_input(args.ref), args.ref_kind, "reference")
    ev = _load_dataset(_open_input(args.eval), args.eval_kind, "evaluation")
    fn = privacy_eval.linkability if args.mode == "linkability" else privacy_eval.singling_out
    report = fn(ev, ref, args.tests, args.seed, tie_policy=args.tie_policy)
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    print(
        f"{report.mode}: N={report.N} L={report.L} p50={report.p50:.2f} p1={report.p1:.2f} "
        f"(random p50={report.baseline['p50']:.2f} p1={report.baseline['p1']:.2f}); wrote {out}"
    )
    return 0


def _trunc2(value: float) -> str:
    # the reference table truncates at two decimals (3452.0661 -> 3452.06)
    import math

    return f"{math.floor(value * 100) / 100:.2f}"


def _cmd_baseline(args) -> int:
    b = privacy_eval.random_baseline(args.n, args.tests)
    print(
        f"mu={_trunc2(b['mu'])} var={_trunc2(b['var'])} "
        f"p50={_trunc2(b['p50'])} p1={_trunc2(b['p1'])}"
    )
    return 0


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}")


def _cmd_bitrate(args) -> int:
    if args.preset:
        spec = quantizer.BITRATE_PRESETS[args.preset]
    else:
        if not (args.sample_rate_khz and args.strides and args.sizes):
            raise ConfigError("give --preset or all of --sample-rate-khz/--strides/--sizes")
        spec = quantizer.BitrateSpec(
            args.sample_rate_khz, _parse_int_list(args.strides), _parse_int_list(args.sizes)
        )
    print(f"{quantizer.bitrate(spec, args.tiers):.2f}")
    return 0


def _cmd_wilson(args) -> int:
    center, half = privacy_eval.wilson_interval(args.k, args.n, args.alpha)
    print(f"{center:.4f} ± {half:.4f}")
    return 0


def _cmd_mel_loss(args) -> int:
    rate_a, a = losses.read_wav_mono16(_open_input(args.a))
    rate_b, b = losses.read_wav_mono16(_open_input(args.b))
    if rate_a != rate_b:
        raise ValueError(f"sample rates differ: {rate_a} vs {rate_b}")
    cfg = losses.MelScaleConfig(sample_rate_hz=float(rate_a))
    print(f"{losses.multiscale_mel_loss(a, b, cfg):.6f}")
    return 0


def _cmd_abx_serve(args) -> int:
    entries = abx_service.load_manifest(_open_input(args.manifest))
    report = privacy_eval.PrivacyReport.from_json(_open_input(args.report).read_text())
    trials, media_map = abx_service.assemble_trials(entries, report, args.trials, args.seed)
    results_path = _resolve(args.results)
    results_path.parent.mkdir(parents=True, exist_ok=True)
    service = abx_service.AbxService(trials, media_map, results_path, static_dir=args.static)
    server = abx_service.make_server(service, host=args.host, port=args.port)
    print(f"serving {len(trials)} trials on http://{args.host}:{server.server_port}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _cmd_report(args) -> int:
    reports = [privacy_eval.PrivacyReport.from_json(_open_input(p).read_text()) for p in args.reports]
    rows = [(Path(p).stem, r.mode, r.p50, r.p1) for p, r in zip(args.reports, reports)]
    width = max(len(r[0]) for r in rows + [("random (theoretical)", "", 0, 0)])
    print(f"{'report':<{width}}  {'mode':<12}  {'p50':>10}  {'p1':>10}")
    for label, mode, p50, p1 in rows:
        print(f"{label:<{width}}  {mode:<12}  {p50:>10.2f}  {p1:>10.2f}")
    for n, l in sorted({(r.N, r.L) for r in reports}):
        b = privacy_eval.random_baseline(n, l)
        label = "random (theoretical)"
        print(f"{label:<{width}}  {'N=%d L=%d' % (n, l):<12}  {b['p50']:>10.2f}  {b['p1']:>10.2f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anoncodec",
        description="Privacy-preserving speech representation toolkit (desk scale).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a latent corpus and its partitions")
    p.add_argument("--config", help="toolkit config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("train", help="train codebooks on a latent corpus")
    p.add_argument("--config", help="toolkit config JSON")
    p.add_argument("--input", required=True, help="latent corpus file")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="codebook bundle path")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("quantize", help="encode latents to per-tier codes")
    p.add_argument("--codebooks", required=True)
    p.add_argument("--input", required=True, help="latent corpus file")
    p.add_argument("--tiers", type=int, required=True, help="highest tier index n")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_quantize)

    p = sub.add_parser("anonymize", help="semantic-tier reconstruction with LDP noise")
    p.add_argument("--codebooks", required=True)
    p.add_argument("--input", required=True, help="latent corpus file")
    p.add_argument("--epsilon", type=float, default=15.0)
    p.add_argument("--clip-c", type=float, help="L1 clipping bound (default: estimate)")
    p.add_argument("--no-ldp", action="store_true", help="skip clipping and noise")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="embedding dataset path")
    p.set_defaults(handler=_cmd_anonymize)

    p = sub.add_parser("eval-privacy", help="linkability / singling-out rank test")
    p.add_argument("--mode", choices=("linkability", "singling-out"), required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--ref-kind", choices=("embeddings", "latents"), default="embeddings")
    p.add_argument("--eval-kind", choices=("embeddings", "latents"), default="embeddings")
    p.add_argument("--tests", type=int, required=True)
    p.add_argument("--tie-policy", choices=("index", "average"), default="index")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(handler=_cmd_eval_privacy)

    p = sub.add_parser("baseline", help="closed-form random-guessing statistics")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tests", type=int, required=True)
    p.set_defaults(handler=_cmd_baseline)

    p = sub.add_parser("bitrate", help="bandwidth of codebooks 0..n")
    p.add_argument("--preset", choices=sorted(quantizer.BITRATE_PRESETS))
    p.add_argument("--tiers", type=int, required=True, help="highest codebook index n")
    p.add_argument("--sample-rate-khz", type=float)
    p.add_argument("--strides")
    p.add_argument("--sizes")
    p.set_defaults(handler=_cmd_bitrate)

    p = sub.add_parser("wilson", help="Wilson score interval")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(handler=_cmd_wilson)

    p = sub.add_parser("mel-loss", help="multi-scale log-mel L1 distance of two WAVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(handler=_cmd_mel_loss)

    p = sub.add_parser("abx-serve", help="serve A/B/X perceptual trials over HTTP")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True, help="singling-out report JSON")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--results", required=True, help="JSON-lines response log")
    p.add_argument("--static", help="directory of frontend assets to serve at /")
    p.set_defaults(handler=_cmd_abx_serve)

    p = sub.add_parser("report", help="merge privacy reports into one table")
    p.add_argument("reports", nargs="+")
    p.set_defaults(handler=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "mode", None) == "singling-out":
        args.mode = "singling_out"
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc}", file=sys.stderr)
        return 3
    except (AnoncodecError, ValueError, KeyError, OSError) as exc:
        print(f"error: compute: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())
