"""random image operations and bmd-conditioned expansion of the training split"""
from __future__ import annotations

import logging
import zlib
from dataclasses import replace
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from bmdfusion.config import AUGMENTATION_OPS, BIN_EDGES, DEFAULT_SEED, AugmentationPolicy
from bmdfusion.data.folds import bin_index
from bmdfusion.data.manifest import SampleRecord

logger = logging.getLogger(__name__)

AUG_SUFFIX = "#aug"


def gauss_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return image + rng.normal(0.0, sigma, size=image.shape)


def horizontal_flip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def affine(image: np.ndarray, scale: float = 1.0, translate: Tuple[float, float] = (0.0, 0.0),
           rotate_deg: float = 0.0, shear_deg: float = 0.0) -> np.ndarray:
    """scale, shear and rotate about the image centre, then shift by translate (rows, cols) pixels.

    Bilinear interpolation, borders replicated.
    """
    theta, phi = np.deg2rad(rotate_deg), np.deg2rad(shear_deg)
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shear = np.array([[1.0, 0.0], [np.tan(phi), 1.0]])
    forward = rotation @ shear @ (np.eye(2) * scale)
    inverse = np.linalg.inv(forward)
    center = (np.asarray(image.shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - inverse @ (center + np.asarray(translate, dtype=np.float64))
    return ndimage.affine_transform(image, inverse, offset=offset, order=1, mode="nearest")


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    return affine(image, rotate_deg=degrees)


def brightness_contrast(image: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    """contrast stretches around the image mean, so only brightness moves the mean"""
    mean = image.mean()
    return (image - mean) * (1.0 + contrast) + mean + brightness


def _apply(name: str, image: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    if name == "gauss_noise":
        return gauss_noise(image, policy.noise_sigma, rng)
    if name == "horizontal_flip":
        return horizontal_flip(image)
    if name == "affine_scale":
        return affine(image, scale=rng.uniform(*policy.scale_range))
    if name == "affine_translate":
        limit = policy.translate_frac * np.asarray(image.shape)
        return affine(image, translate=tuple(rng.uniform(-limit, limit)))
    if name == "affine_rotate":
        return rotate(image, rng.uniform(-policy.rotate_deg, policy.rotate_deg))
    if name == "affine_shear":
        return affine(image, shear_deg=rng.uniform(-policy.shear_deg, policy.shear_deg))
    if name == "brightness_contrast":
        return brightness_contrast(
            image,
            rng.uniform(-policy.brightness_limit, policy.brightness_limit),
            rng.uniform(-policy.contrast_limit, policy.contrast_limit),
        )
    raise ValueError(f"unknown augmentation {name!r}")


def augment(image: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    """draws k ops from the policy range, applies each with its own probability, clamps to [0, 1]"""
    lo, hi = policy.ops_range
    k = int(rng.integers(lo, hi + 1))
    chosen = rng.choice(len(AUGMENTATION_OPS), size=k, replace=False) if k else []
    out = np.asarray(image, dtype=np.float64)
    for idx in chosen:
        name = AUGMENTATION_OPS[idx]
        if rng.random() < policy.probabilities.get(name, 0.0):
            out = _apply(name, out, policy, rng)
    return np.clip(out, 0.0, 1.0)


def sample_stream(seed: int, sample_id: str) -> np.random.Generator:
    """independent generator per (seed, id), so results do not depend on worker count"""
    return np.random.default_rng([seed, zlib.crc32(sample_id.encode("utf-8"))])


def multiplicity(bmd: float, policy: AugmentationPolicy, edges: Sequence[float] = BIN_EDGES) -> int:
    return int(policy.bin_multiplicity[int(bin_index(bmd, edges))])


def expand_training_set(manifest, plan, fold: int, policy: AugmentationPolicy,
                        seed: int = DEFAULT_SEED) -> List[SampleRecord]:
    """each training sample followed by its augmented copies; the test split is never touched"""
    out: List[SampleRecord] = []
    for sample in manifest.subset(plan.train_ids(fold)):
        out.append(sample)
        copies = multiplicity(sample.bmd, policy, plan.bin_edges)
        rng = sample_stream(seed, sample.id)
        for j in range(copies):
            out.append(replace(sample, id=f"{sample.id}{AUG_SUFFIX}{j}", image=augment(sample.image, policy, rng)))
    logger.debug("fold %d: %d training samples after expansion", fold, len(out))
    return out
