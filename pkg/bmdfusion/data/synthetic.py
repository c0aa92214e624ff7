"""synthetic cohort with a planted cross-modal bmd signal.

bmd = mean + g(metadata) + gain(sex) * image_signal + noise, where the image
signal is what a band of the radiograph-like texture encodes. The band
intensity carries the signal scaled by a sex-dependent gain, so an image
alone only determines bmd once sex is known.
"""
from __future__ import annotations

import logging
from typing import Dict, Optional

import numpy as np
import pandas as pd
from scipy import ndimage

from bmdfusion.config import (
    BMD_GUARD,
    CATEGORICAL_LEVELS,
    COHORT_MOMENTS,
    DEFAULT_SEED,
    FEMALE_SHARE,
    MIN_SYNTHETIC_SAMPLES,
    NUMERICAL_FIELDS,
    SMOKING_SHARES,
    GeneratorParams,
)
from bmdfusion.data.manifest import DatasetManifest, SampleRecord, default_schema, quantize
from bmdfusion.errors import ConfigError

logger = logging.getLogger(__name__)

# sex-specific height, cm
HEIGHT_MALE = (173.0, 6.6)
HEIGHT_FEMALE = (159.0, 6.0)
SCAN_DELAY = (0.64, 0.3)  # years from x-ray to bmd scan
SMOKING_DOSE = {"Never": 0.0, "Ex": 0.5, "Current": 1.0}
BACKGROUND = 0.2
BAND_LEVEL = 0.55
DECIMALS = 4


def _gamma(rng: np.random.Generator, mean: float, sd: float, n: int) -> np.ndarray:
    shape = (mean / sd) ** 2
    return rng.gamma(shape, sd ** 2 / mean, size=n)


def draw_metadata(n: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """every clinical field, drawn to match the cohort summary statistics"""
    sex = np.where(rng.random(n) < FEMALE_SHARE, "Female", "Male")
    female = sex == "Female"
    age = rng.normal(*COHORT_MOMENTS["agexray"], size=n)
    scan_age = age + rng.normal(*SCAN_DELAY, size=n)
    height = np.where(female, rng.normal(*HEIGHT_FEMALE, size=n), rng.normal(*HEIGHT_MALE, size=n))
    bmi = np.clip(rng.normal(*COHORT_MOMENTS["epbmi"], size=n), 16.0, 50.0)
    weight = bmi * (height / 100.0) ** 2
    shares = np.asarray(SMOKING_SHARES) / np.sum(SMOKING_SHARES)
    smoking = rng.choice(np.array(CATEGORICAL_LEVELS["epsmkstat"]), size=n, p=shares)
    fields = {
        "agexray": age,
        "hbsage": scan_age,
        "epht": height,
        "epwt": weight,
        "epbmi": bmi,
        "epalunit": _gamma(rng, *COHORT_MOMENTS["epalunit"], n),
        "eptotact": _gamma(rng, *COHORT_MOMENTS["eptotact"], n),
        "epprddiet24": rng.normal(*COHORT_MOMENTS["epprddiet24"], size=n),
    }
    out = {name: np.round(fields[name], DECIMALS) for name in NUMERICAL_FIELDS}
    out["absex"] = sex
    out["epsmkstat"] = smoking
    return out


def metadata_effect(meta: Dict[str, np.ndarray], params: GeneratorParams) -> np.ndarray:
    """centered bmd contribution of the clinical fields"""

    def z(name):
        mean, sd = COHORT_MOMENTS[name]
        return (meta[name] - mean) / sd

    female = (np.asarray(meta["absex"]) == "Female").astype(np.float64)
    dose = np.array([SMOKING_DOSE[s] for s in meta["epsmkstat"]])
    dose_mean = sum(SMOKING_DOSE[s] * p for s, p in zip(CATEGORICAL_LEVELS["epsmkstat"], SMOKING_SHARES))
    return (
        params.sex_effect * (female - FEMALE_SHARE)
        + params.age_effect * (meta["agexray"] - COHORT_MOMENTS["agexray"][0])
        + params.bmi_effect * z("epbmi")
        + params.activity_effect * z("eptotact")
        + params.smoking_effect * (dose - dose_mean)
        + params.diet_effect * z("epprddiet24")
    )


def render_image(signal: float, gain: float, params: GeneratorParams, rng: np.random.Generator) -> np.ndarray:
    """textured background with a tilted bone band whose intensity encodes gain * signal"""
    size = params.image_size
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    center = 0.5 + rng.uniform(-1.0 / 16, 1.0 / 16)
    tilt = rng.uniform(-0.15, 0.15)
    half_width = 0.14 + rng.uniform(-0.02, 0.02)
    dist = np.abs(yy - (center + tilt * (xx - 0.5)))
    band = 1.0 / (1.0 + np.exp((dist - half_width) / 0.02))
    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=1.5)
    sd = texture.std()
    if sd > 0:
        texture *= params.texture_sd / sd
    level = BAND_LEVEL + params.band_contrast * gain * np.clip(signal, -3.0, 3.0)
    return quantize(BACKGROUND + band * (level - BACKGROUND) + texture)


def generate_synthetic(n: int, seed: int = DEFAULT_SEED,
                       params: Optional[GeneratorParams] = None) -> DatasetManifest:
    """a deterministic cohort of n samples; (seed, params) fix every byte"""
    params = params or GeneratorParams()
    params.validate()
    if n < MIN_SYNTHETIC_SAMPLES:
        raise ConfigError(f"generator needs n >= {MIN_SYNTHETIC_SAMPLES}, got {n}")
    rng = np.random.default_rng(seed)
    meta = draw_metadata(n, rng)
    signal = rng.standard_normal(n)
    noise = rng.normal(0.0, params.noise_sd, size=n)
    meta_part = metadata_effect(meta, params)
    image_part = params.image_signal_sd * signal
    lo, hi = BMD_GUARD
    bmd = np.round(np.clip(params.bmd_mean + meta_part + image_part + noise, lo + 0.01, hi - 0.01), DECIMALS)
    gain = np.where(meta["absex"] == "Female", params.female_gain, params.male_gain)

    streams = np.random.SeedSequence([seed, 1]).spawn(n)
    ids = [f"s{i:04d}" for i in range(n)]
    samples = []
    for i, sample_id in enumerate(ids):
        image = render_image(signal[i], gain[i], params, np.random.default_rng(streams[i]))
        record = {name: (str(meta[name][i]) if name in CATEGORICAL_LEVELS else float(meta[name][i]))
                  for name in meta}
        samples.append(SampleRecord(sample_id, image, record, float(bmd[i])))

    latents = pd.DataFrame({
        "id": ids,
        "metadata_component": meta_part,
        "image_component": image_part,
        "noise": noise,
        "image_signal": signal,
        "gain": gain,
    })
    generator = {"seed": seed, "n": n, "params": params.to_dict()}
    logger.info("generated %d samples, bmd mean %.4f sd %.4f", n, bmd.mean(), bmd.std(ddof=1))
    return DatasetManifest(default_schema(), samples, generator, latents)
