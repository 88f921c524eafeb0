"""Real frozen-model adapters, imported lazily.

Each factory raises BackendUnavailable with an actionable message when the
ML stack is missing, so the CLI can fall back or fail cleanly. Inference is
pinned deterministic: fixed seeds per (record, variant), greedy/beam
decoding parameters from the settings block, eval mode everywhere.
"""

from __future__ import annotations

import zlib

import numpy as np

INPAINT_CHECKPOINTS = {
    "SD1.5": "runwayml/stable-diffusion-inpainting",
    "SD2": "stabilityai/stable-diffusion-2-inpainting",
    "SD3": "stabilityai/stable-diffusion-3-medium-diffusers",
}

CAPTION_CHECKPOINTS = {
    "blip": "Salesforce/blip-image-captioning-base",
    "qwen": "Qwen/Qwen2.5-VL-7B-Instruct",
    "llava": "llava-hf/llava-onevision-qwen2-7b-ov-hf",
}

VIT_CHECKPOINT = "google/vit-base-patch16-224-in21k"
SBERT_CHECKPOINT = "sentence-transformers/all-MiniLM-L6-v2"


class BackendUnavailable(RuntimeError):
    pass


def _require(module: str, extra: str):
    try:
        return __import__(module)
    except ImportError as exc:
        raise BackendUnavailable(
            f"backend 'torch' needs {module}; install the runner extras "
            f"(pip install 'recon-runners[torch]') or use --backend procedural ({extra})"
        ) from exc


def _seed(*parts) -> int:
    return zlib.crc32("|".join(str(p) for p in parts).encode())


def model_family(variant: str) -> str:
    model = variant.rsplit("-", 1)[0]
    for family in INPAINT_CHECKPOINTS:
        if model.lower().startswith(family.lower()):
            return family
    raise BackendUnavailable(f"no inpainting checkpoint mapped for variant {variant!r}")


def inpaint(degraded: np.ndarray, mask: np.ndarray, prompt: str,
            record_id: str, variant: str, settings: dict) -> np.ndarray:
    torch = _require("torch", "diffusion inpainting")
    diffusers = _require("diffusers", "diffusion inpainting")
    from PIL import Image

    checkpoint = INPAINT_CHECKPOINTS[model_family(variant)]
    pipe = diffusers.AutoPipelineForInpainting.from_pretrained(checkpoint)
    pipe.set_progress_bar_config(disable=True)
    generator = torch.Generator().manual_seed(_seed(record_id, variant))
    image = Image.fromarray(np.clip(np.rint(degraded * 255), 0, 255).astype(np.uint8))
    mask_img = Image.fromarray((mask.astype(np.uint8)) * 255)
    result = pipe(
        prompt=prompt,
        image=image,
        mask_image=mask_img,
        num_inference_steps=settings["steps"],
        guidance_scale=settings["guidance"],
        strength=settings["strength"],
        generator=generator,
    ).images[0].resize(image.size)
    return np.asarray(result, dtype=np.float64) / 255.0


def caption_candidates(image: np.ndarray, prompt: str, model_tag: str,
                       record_id: str, variant: str, decode) -> list[str]:
    torch = _require("torch", "captioning")
    transformers = _require("transformers", "captioning")
    from PIL import Image

    checkpoint = CAPTION_CHECKPOINTS.get(model_tag.lower(), CAPTION_CHECKPOINTS["blip"])
    processor = transformers.AutoProcessor.from_pretrained(checkpoint)
    model = transformers.AutoModelForVision2Seq.from_pretrained(checkpoint).eval()
    torch.manual_seed(_seed(record_id, variant, model_tag))
    pil = Image.fromarray(np.clip(np.rint(image * 255), 0, 255).astype(np.uint8))
    # BLIP runs unconditional; prompt-conditioned models take the region text
    inputs = (processor(images=pil, return_tensors="pt") if model_tag.lower() == "blip"
              else processor(images=pil, text=prompt, return_tensors="pt"))
    with torch.no_grad():
        out = model.generate(
            **inputs,
            num_beams=decode.beams,
            do_sample=True,
            top_p=decode.top_p,
            temperature=decode.temperature,
            max_new_tokens=decode.max_tokens,
            num_return_sequences=decode.candidates,
        )
    return [processor.decode(seq, skip_special_tokens=True).strip() for seq in out]


def vit_extract(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Heads mean-averaged, CLS-to-CLS weight dropped, rows renormalized."""
    torch = _require("torch", "ViT extraction")
    transformers = _require("transformers", "ViT extraction")
    from PIL import Image

    processor = transformers.AutoImageProcessor.from_pretrained(VIT_CHECKPOINT)
    model = transformers.ViTModel.from_pretrained(
        VIT_CHECKPOINT, output_attentions=True, output_hidden_states=True
    ).eval()
    pil = Image.fromarray(np.clip(np.rint(image * 255), 0, 255).astype(np.uint8))
    inputs = processor(images=pil, return_tensors="pt")
    with torch.no_grad():
        out = model(**inputs)
    attn_layers = []
    for layer_attn in out.attentions:  # (1, heads, tokens, tokens)
        cls_row = layer_attn[0].mean(dim=0)[0]  # heads averaged, CLS query row
        patches = cls_row[1:]  # drop CLS-to-CLS
        patches = patches / patches.sum()
        attn_layers.append(patches.numpy().astype(np.float64))
    cls_layers = [h[0, 0].numpy().astype(np.float64) for h in out.hidden_states[1:]]
    return np.stack(attn_layers), np.stack(cls_layers)


def lpips_score(a: np.ndarray, b: np.ndarray) -> float:
    torch = _require("torch", "LPIPS")
    lpips = _require("lpips", "LPIPS")
    net = lpips.LPIPS(net="alex").eval()

    def prep(x):
        return torch.from_numpy(x.transpose(2, 0, 1)[None].astype("float32")) * 2 - 1

    with torch.no_grad():
        return float(net(prep(a), prep(b)).item())


def text_embedding(text: str) -> list[float]:
    st = _require("sentence_transformers", "sentence embeddings")
    model = st.SentenceTransformer(SBERT_CHECKPOINT)
    vec = model.encode([text], normalize_embeddings=True)[0]
    return [float(v) for v in vec]
