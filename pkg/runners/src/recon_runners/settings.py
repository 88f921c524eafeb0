"""Fixed inference settings, echoed into every output file.

Defaults are the frozen-evaluation values: 50 inpainting steps, guidance
7.5, strength 1.0 (0.6 for the SD3 family), prompts truncated to 75 tokens;
decoding with 6 beams, top-p 0.9, temperature 0.8, 3 candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class InpaintSettings:
    steps: int = 50
    guidance: float = 7.5
    strength: float = 1.0
    sd3_strength: float = 0.6
    prompt_max_tokens: int = 75

    def for_variant(self, variant: str) -> dict:
        strength = self.sd3_strength if variant.lower().startswith("sd3") else self.strength
        return {
            "steps": self.steps,
            "guidance": self.guidance,
            "strength": strength,
            "prompt_max_tokens": self.prompt_max_tokens,
        }


@dataclass(frozen=True)
class DecodeSettings:
    beams: int = 6
    top_p: float = 0.9
    temperature: float = 0.8
    max_tokens: int = 64
    candidates: int = 3

    def as_dict(self) -> dict:
        return {
            "beams": self.beams,
            "top_p": self.top_p,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "candidates": self.candidates,
        }


@dataclass(frozen=True)
class RunnerSettings:
    inpaint: InpaintSettings = field(default_factory=InpaintSettings)
    decode: DecodeSettings = field(default_factory=DecodeSettings)

    @classmethod
    def from_manifest(cls, settings: dict) -> "RunnerSettings":
        inp = settings.get("inpaint", {}) or {}
        dec = settings.get("decode", {}) or {}
        return cls(
            inpaint=InpaintSettings(**{
                k: inp[k] for k in ("steps", "guidance", "strength",
                                    "sd3_strength", "prompt_max_tokens") if k in inp
            }),
            decode=DecodeSettings(**{
                k: dec[k] for k in ("beams", "top_p", "temperature",
                                    "max_tokens", "candidates") if k in dec
            }),
        )


def truncate_prompt(prompt: str, max_tokens: int) -> str:
    words = prompt.split()
    return " ".join(words[:max_tokens])
