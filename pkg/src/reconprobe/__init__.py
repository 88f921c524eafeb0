"""Diagnostics toolkit for degradation, reconstruction fidelity, caption
quality, and attention drift, with model inference kept behind a
file-interchange boundary."""

__version__ = "0.1.0"

from .raster import ImageRaster, MaskRaster, load_image, save_image
from .manifest import DatasetRecord, RegionSpec, RunManifest, resolve_region, validate_manifest
from .degrade import DegradeParams, center_mask, gaussian_blur_region, kmeans_quantize, lowdim_degrade
from .fidelity import FidelityScores, ingest_external_scores, mse_region, psnr_region, ssim_region
from .captions import (
    CaptionConfig,
    CaptionScores,
    CaptionSet,
    aggregate_caption_scores,
    bleu_n,
    embed_similarity,
    meteor_lite,
    rouge_l,
    tokenize,
)
from .attention import (
    AttentionStack,
    LayerDriftProfile,
    PatchMask,
    attention_entropy,
    attention_tvd,
    cls_cosine,
    export_embedding_matrix,
    layer_profile,
    patch_mask_from_pixel_mask,
    spatial_tvd,
)
from .stats import (
    LooStability,
    correlation_matrix,
    guidance_sweep_summary,
    loo_stability,
    pearson,
    percent_delta,
)
from .store import MetricRecord, MetricStore
from .pipeline import RunConfig, run_pipeline
