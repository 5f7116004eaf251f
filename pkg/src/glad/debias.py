"""Background debiasing: temporal-median-filter background extraction and
background-mixup augmentation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .synthdata import VideoSample


@dataclass
class BackgroundBank:
    backgrounds: np.ndarray  # (n, D), values in [0, 1]
    source_video_ids: list

    def __post_init__(self):
        if self.backgrounds.shape[0] != len(self.source_video_ids):
            raise ValueError("bank size != id count")


@dataclass(frozen=True)
class AugmentationPolicy:
    probability: float = 0.25
    lambda_mode: str = "fixed"  # "fixed" or "uniform"
    lambda_value: float = 0.75
    domains: tuple[str, ...] = ("source",)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must be in [0, 1]")
        if self.lambda_mode not in ("fixed", "uniform"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")
        if not 0.0 <= self.lambda_value <= 1.0:
            raise ValueError("lambda must be in [0, 1]")


def extract_background_tmf(video: VideoSample) -> np.ndarray:
    """Per-pixel median over the frames; even T averages the two middle
    values (numpy's convention)."""
    if video.frames.shape[0] < 1:
        raise ValueError("empty video")
    return np.median(video.frames, axis=0)


def build_background_bank(samples: list[VideoSample]) -> BackgroundBank:
    if not samples:
        raise ValueError("empty dataset")
    backgrounds = np.stack([extract_background_tmf(s) for s in samples])
    return BackgroundBank(backgrounds=backgrounds,
                          source_video_ids=[s.video_id for s in samples])


def mix_background(video: VideoSample, background: np.ndarray, lam: float) -> VideoSample:
    """Convex blend of every frame with one background:
    x~(t) = (1 - lam) * x(t) + lam * b."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    bg = np.asarray(background)
    if bg.shape != (video.frames.shape[1],):
        raise ValueError(f"background shape {bg.shape} != (D,)={video.frames.shape[1]}")
    mixed = ((1.0 - lam) * video.frames + lam * bg[None, :]).astype(video.frames.dtype)
    return VideoSample(frames=mixed, label=video.label, domain=video.domain,
                       video_id=video.video_id)


def apply_augmentation_policy(batch: list[VideoSample], bank: BackgroundBank,
                              policy: AugmentationPolicy,
                              rng: np.random.Generator) -> list[VideoSample]:
    """Independently mix each eligible sample with a uniformly chosen bank
    background with the configured probability. Labels, lengths, and domain
    tags are never altered."""
    if bank.backgrounds.shape[0] == 0:
        raise ValueError("empty background bank")
    out = []
    for sample in batch:
        if sample.domain not in policy.domains or rng.uniform() >= policy.probability:
            out.append(sample)
            continue
        bg = bank.backgrounds[int(rng.integers(0, bank.backgrounds.shape[0]))]
        lam = policy.lambda_value if policy.lambda_mode == "fixed" else float(rng.uniform())
        out.append(mix_background(sample, bg, lam))
    return out


def save_bank(bank: BackgroundBank, directory: str) -> None:
    """Cache alongside a dataset directory: backgrounds.bin + backgrounds.json."""
    os.makedirs(directory, exist_ok=True)
    meta = {"count": int(bank.backgrounds.shape[0]),
            "dim": int(bank.backgrounds.shape[1]),
            "video_ids": bank.source_video_ids}
    with open(os.path.join(directory, "backgrounds.json"), "w") as f:
        json.dump(meta, f, indent=1)
    with open(os.path.join(directory, "backgrounds.bin"), "wb") as f:
        f.write(np.asarray(bank.backgrounds, dtype="<f4").tobytes())


def load_bank(directory: str) -> BackgroundBank:
    with open(os.path.join(directory, "backgrounds.json")) as f:
        meta = json.load(f)
    with open(os.path.join(directory, "backgrounds.bin"), "rb") as f:
        raw = f.read()
    arr = np.frombuffer(raw, dtype="<f4").reshape(meta["count"], meta["dim"])
    return BackgroundBank(backgrounds=arr.astype(np.float32),
                          source_video_ids=meta["video_ids"])
