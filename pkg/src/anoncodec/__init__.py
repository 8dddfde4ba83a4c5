"""anoncodec: privacy-preserving speech representation toolkit, desk scale.

Factorized residual vector quantization with semantic-tier
disentanglement (quantizer dropout, semantic distillation, AMSoftmax
gradient reversal, Laplace local differential privacy) and the
k-anonymity privacy evaluation protocol (linkability, singling out,
analytic random baselines, ABX perceptual test service).
"""

from .corpus import (
    EmbeddingDataset,
    EmbeddingSpeaker,
    LatentCorpus,
    LatentSpeaker,
    SyntheticCorpusConfig,
    embed_corpus,
    generate_corpus,
    read_embedding_file,
    read_latent_file,
    split_corpus,
    surrogate_embedding,
    write_embedding_file,
    write_latent_file,
)
from .disentangle import (
    LdpConfig,
    SpeakerClassifierParams,
    TeacherTargets,
    add_ldp_noise,
    ams_softmax_loss,
    clip_l1,
    estimate_clip_norm,
    gradient_reversal,
    semantic_anonymize,
    semantic_distillation_loss,
    teacher_pool,
)
from .errors import (
    AnoncodecError,
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    TrainingDivergedError,
)
from .losses import (
    LossWeights,
    MelScaleConfig,
    feature_matching_loss,
    lsgan_losses,
    mel_filterbank,
    mel_spectrogram,
    multiscale_mel_loss,
    total_loss,
)
from .privacy_eval import (
    PrivacyReport,
    RankMatrix,
    correlation_metrics,
    cosine_sim,
    linkability,
    percentiles,
    random_baseline,
    rank_test,
    similar_speaker_pool,
    singling_out,
    wilson_interval,
)
from .quantizer import (
    BITRATE_PRESETS,
    BitrateSpec,
    CodebookTier,
    LatentSequence,
    QuantizeOutput,
    RVQConfig,
    bitrate,
    init_tiers,
    load_codebooks,
    quantize_tier,
    quantizer_dropout_sample,
    reconstruction_mse,
    rvq_decode,
    rvq_encode,
    save_codebooks,
    train_codebooks,
    vq_lookup,
    vq_losses,
)
from .rng import substream

__version__ = "0.1.0"
