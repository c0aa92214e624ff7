"""globals and typed configs"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from bmdfusion.errors import ConfigError

DEFAULT_SEED = 42

# weighted smooth l1
BMD_CENTER = 0.9
WSL1_LAMBDA = 3.0
HUBER_BETA = 1.0

# t-score reference (young adult femoral neck)
YOUNG_ADULT_MEAN = 1.038
YOUNG_ADULT_SD = 0.139
T_LOW_BONE_MASS = -1.0
T_OSTEOPOROSIS = -2.5

# stratification bins, g/cm^2
BIN_EDGES = (0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2)
BMD_GUARD = (0.4, 1.4)
EXTREME_LOW = 0.7
EXTREME_HIGH = 1.1

NUMERICAL_FIELDS = (
    "agexray", "hbsage", "epht", "epwt",
    "epbmi", "epalunit", "eptotact", "epprddiet24",
)
CATEGORICAL_LEVELS = {
    "absex": ("Male", "Female"),
    "epsmkstat": ("Never", "Ex", "Current"),
}
FIELD_UNITS = {
    "agexray": "year", "hbsage": "year", "epht": "cm", "epwt": "kg",
    "epbmi": "kg/m^2", "epalunit": "units/week", "eptotact": "mins/day",
    "epprddiet24": "-", "absex": "-", "epsmkstat": "-",
}

# cohort moments the synthetic generator is calibrated to: (mean, sd)
COHORT_MOMENTS = {
    "agexray": (75.45, 2.58),
    "hbsage": (76.09, 2.62),
    "epht": (166.17, 8.79),
    "epwt": (77.13, 12.24),
    "epbmi": (27.93, 3.98),
    "epalunit": (6.80, 10.16),
    "eptotact": (225.11, 121.68),
    "epprddiet24": (0.13, 1.53),
}
FEMALE_SHARE = 0.489
SMOKING_SHARES = (0.519, 0.459, 0.021)
BMD_TARGET_MEAN = 0.889
BMD_TARGET_SD = 0.130
MIN_SYNTHETIC_SAMPLES = 20

FUSION_MODES = (
    "bidirectional", "img_to_meta", "meta_to_img",
    "concat", "image_only", "metadata_only",
)
LOSSES = ("weighted_smooth_l1", "mse", "huber")
PRECISIONS = ("float32", "float64")

CONFIG_SCHEMA_VERSION = 1


def default_field_spec() -> Tuple[Tuple[str, int], ...]:
    """numericals first (width 1), then one-hot categoricals"""
    spec = [(name, 1) for name in NUMERICAL_FIELDS]
    spec += [(name, len(levels)) for name, levels in CATEGORICAL_LEVELS.items()]
    return tuple(spec)


def _as_tuple(value):
    if isinstance(value, list):
        return tuple(_as_tuple(v) for v in value)
    return value


def _strict_from_dict(cls, data: Optional[Dict[str, Any]]):
    """builds a config dataclass, rejecting keys it does not declare"""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {unknown}")
    nested = getattr(cls, "_nested", {})
    kwargs = {}
    for key, value in data.items():
        if key in nested:
            kwargs[key] = nested[key].from_dict(value)
        elif isinstance(value, dict):
            kwargs[key] = {k: _as_tuple(v) for k, v in value.items()}
        else:
            kwargs[key] = _as_tuple(value)
    return cls(**kwargs)


class _ConfigMixin:
    """to_dict / from_dict / validate shared by every config record"""

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, data):
        cfg = _strict_from_dict(cls, data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        """subclasses raise ConfigError on broken invariants"""


def config_hash(cfg: _ConfigMixin) -> str:
    """sha256 over canonical json, first 16 hex chars"""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ImageEncoderConfig(_ConfigMixin):
    """small cnn standing in for the pretrained backbone"""

    image_size: int = 64
    conv_channels: Tuple[int, ...] = (8, 16, 32)
    kernel_sizes: Tuple[int, ...] = (3, 3, 3)
    pooled_feature_dim: int = 64
    projection_dim: int = 64
    dropout_p: float = 0.2
    token_count: int = 4

    @property
    def grid_side(self) -> int:
        return int(round(self.token_count ** 0.5))

    @property
    def feature_map_side(self) -> int:
        return self.image_size // (2 ** len(self.conv_channels))

    def validate(self) -> None:
        if len(self.conv_channels) != len(self.kernel_sizes):
            raise ConfigError("image encoder: conv_channels and kernel_sizes differ in length")
        if any(k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError(f"image encoder: kernel sizes must be odd, got {self.kernel_sizes}")
        if self.token_count < 1 or self.grid_side ** 2 != self.token_count:
            raise ConfigError(f"image encoder: token_count {self.token_count} is not a square >= 1")
        if self.image_size % (2 ** len(self.conv_channels)):
            raise ConfigError("image encoder: image_size not divisible by the pooling depth")
        if self.feature_map_side % self.grid_side:
            raise ConfigError(
                f"image encoder: feature map side {self.feature_map_side} "
                f"not divisible by token grid {self.grid_side}"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"image encoder: dropout_p {self.dropout_p} outside [0, 1)")


@dataclass(frozen=True)
class MetadataEncoderConfig(_ConfigMixin):
    """per-field embeddings refined by a shared two-layer mlp"""

    field_spec: Tuple[Tuple[str, int], ...] = field(default_factory=default_field_spec)
    hidden_dim: int = 128
    embed_dim: int = 64
    dropout_p: float = 0.2

    @property
    def input_dim(self) -> int:
        return sum(width for _, width in self.field_spec)

    @property
    def field_names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.field_spec)

    def validate(self) -> None:
        names = self.field_names
        if len(set(names)) != len(names):
            raise ConfigError(f"metadata encoder: duplicate field names in {names}")
        if any(width < 1 for _, width in self.field_spec):
            raise ConfigError("metadata encoder: slice widths must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"metadata encoder: dropout_p {self.dropout_p} outside [0, 1)")


@dataclass(frozen=True)
class CrossAttentionBranchConfig(_ConfigMixin):
    """one attention direction: queries from one modality, keys/values from the other"""

    query_dim: int = 64
    kv_dim: int = 64
    n_layers: int = 3
    n_heads: int = 4
    updater_dropout_p: float = 0.1
    updater_residual_scale: float = 0.5

    @property
    def head_dim(self) -> int:
        return self.query_dim // self.n_heads

    def validate(self) -> None:
        if self.n_layers < 1 or self.n_heads < 1:
            raise ConfigError("attention branch: n_layers and n_heads must be >= 1")
        if self.query_dim % self.n_heads:
            raise ConfigError(
                f"attention branch: query_dim {self.query_dim} not divisible by {self.n_heads} heads"
            )
        if not 0.0 < self.updater_residual_scale <= 1.0:
            raise ConfigError("attention branch: residual scale must lie in (0, 1]")
        if not 0.0 <= self.updater_dropout_p < 1.0:
            raise ConfigError("attention branch: updater dropout outside [0, 1)")


@dataclass(frozen=True)
class WeightedSmoothL1Config(_ConfigMixin):
    """weights grow linearly with distance from the centre bmd"""

    center: float = BMD_CENTER
    lam: float = WSL1_LAMBDA
    beta: float = HUBER_BETA

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigError(f"weighted smooth l1: lambda {self.lam} < 0")
        if self.beta <= 0:
            raise ConfigError(f"weighted smooth l1: beta {self.beta} <= 0")


@dataclass(frozen=True)
class OptimizerConfig(_ConfigMixin):
    """adam with l2-in-gradient weight decay plus an l1 penalty"""

    lr: float = 1e-4
    weight_decay: float = 3e-5
    l1: float = 5e-7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        for name in ("lr", "weight_decay", "l1", "eps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"optimizer: {name} must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("optimizer: betas must lie in [0, 1)")


@dataclass(frozen=True)
class FusionModelConfig(_ConfigMixin):
    """every architectural and training hyperparameter of one run"""

    _nested = {}  # filled below, once every nested type exists

    image: ImageEncoderConfig = field(default_factory=ImageEncoderConfig)
    metadata: MetadataEncoderConfig = field(default_factory=MetadataEncoderConfig)
    img_to_meta: CrossAttentionBranchConfig = field(default_factory=CrossAttentionBranchConfig)
    meta_to_img: CrossAttentionBranchConfig = field(default_factory=CrossAttentionBranchConfig)
    fusion_mode: str = "bidirectional"
    loss: str = "weighted_smooth_l1"
    wsl1: WeightedSmoothL1Config = field(default_factory=WeightedSmoothL1Config)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 400
    train_batch: int = 32
    eval_batch: int = 8
    head_dropout_p: float = 0.05
    precision: str = "float32"
    seed: int = DEFAULT_SEED

    @property
    def head_input_width(self) -> int:
        d_i, d_m = self.image.projection_dim, self.metadata.embed_dim
        return {
            "bidirectional": d_i + d_m,
            "concat": d_i + d_m,
            "img_to_meta": d_i,
            "image_only": d_i,
            "meta_to_img": d_m,
            "metadata_only": d_m,
        }[self.fusion_mode]

    @property
    def uses_attention(self) -> bool:
        return self.fusion_mode in ("bidirectional", "img_to_meta", "meta_to_img")

    def replace(self, **changes) -> "FusionModelConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for part in (self.image, self.metadata, self.img_to_meta,
                     self.meta_to_img, self.wsl1, self.optimizer):
            part.validate()
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion_mode {self.fusion_mode!r}; expected one of {FUSION_MODES}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.epochs < 0 or self.train_batch < 1 or self.eval_batch < 1:
            raise ConfigError("epochs must be >= 0 and batch sizes >= 1")
        if not 0.0 <= self.head_dropout_p < 1.0:
            raise ConfigError("head dropout outside [0, 1)")
        d_i, d_m = self.image.projection_dim, self.metadata.embed_dim
        if (self.img_to_meta.query_dim, self.img_to_meta.kv_dim) != (d_i, d_m):
            raise ConfigError(
                f"img_to_meta dims {(self.img_to_meta.query_dim, self.img_to_meta.kv_dim)} "
                f"must equal (d_i, d_m) = {(d_i, d_m)}"
            )
        if (self.meta_to_img.query_dim, self.meta_to_img.kv_dim) != (d_m, d_i):
            raise ConfigError(
                f"meta_to_img dims {(self.meta_to_img.query_dim, self.meta_to_img.kv_dim)} "
                f"must equal (d_m, d_i) = {(d_m, d_i)}"
            )


FusionModelConfig._nested = {
    "image": ImageEncoderConfig,
    "metadata": MetadataEncoderConfig,
    "img_to_meta": CrossAttentionBranchConfig,
    "meta_to_img": CrossAttentionBranchConfig,
    "wsl1": WeightedSmoothL1Config,
    "optimizer": OptimizerConfig,
}


@dataclass(frozen=True)
class ScreeningConfig(_ConfigMixin):
    """t-score dichotomization of predicted bmd"""

    young_adult_mean: float = YOUNG_ADULT_MEAN
    young_adult_sd: float = YOUNG_ADULT_SD
    t_threshold: float = T_LOW_BONE_MASS
    t_osteoporosis: float = T_OSTEOPOROSIS
    ci_level: float = 0.95
    n_boot: int = 4000
    grid_points: int = 101

    @property
    def bmd_threshold(self) -> float:
        return self.young_adult_mean + self.t_threshold * self.young_adult_sd

    @property
    def osteoporosis_threshold(self) -> float:
        return self.young_adult_mean + self.t_osteoporosis * self.young_adult_sd

    def validate(self) -> None:
        if self.young_adult_sd <= 0:
            raise ConfigError("screening: reference sd must be > 0")
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError("screening: ci_level must lie in (0, 1)")
        if self.n_boot < 1 or self.grid_points < 2:
            raise ConfigError("screening: n_boot >= 1 and grid_points >= 2 required")


AUGMENTATION_OPS = ("gauss_noise", "horizontal_flip", "affine_scale", "affine_translate",
                    "affine_rotate", "affine_shear", "brightness_contrast")


def _half_probabilities() -> Dict[str, float]:
    return {name: 0.5 for name in AUGMENTATION_OPS}


@dataclass(frozen=True)
class AugmentationPolicy(_ConfigMixin):
    """random image operations and how often each bmd bin is expanded"""

    probabilities: Dict[str, float] = field(default_factory=_half_probabilities)
    ops_range: Tuple[int, int] = (1, 3)
    noise_sigma: float = 0.02
    scale_range: Tuple[float, float] = (0.95, 1.05)
    translate_frac: float = 0.03
    rotate_deg: float = 10.0
    shear_deg: float = 3.0
    brightness_limit: float = 0.1
    contrast_limit: float = 0.1
    bin_multiplicity: Tuple[int, ...] = (4, 2, 1, 1, 2, 4)

    @classmethod
    def training(cls) -> "AugmentationPolicy":
        return cls()

    @classmethod
    def perturbation(cls) -> "AugmentationPolicy":
        return cls(ops_range=(1, 2))

    @classmethod
    def identity(cls) -> "AugmentationPolicy":
        return cls(probabilities={name: 0.0 for name in AUGMENTATION_OPS})

    def validate(self) -> None:
        unknown = sorted(set(self.probabilities) - set(AUGMENTATION_OPS))
        if unknown:
            raise ConfigError(f"augmentation: unknown ops {unknown}")
        if any(not 0.0 <= p <= 1.0 for p in self.probabilities.values()):
            raise ConfigError("augmentation: probabilities must lie in [0, 1]")
        lo, hi = self.ops_range
        if not 0 <= lo <= hi <= len(AUGMENTATION_OPS):
            raise ConfigError(f"augmentation: bad ops_range {self.ops_range}")
        if any(m < 0 for m in self.bin_multiplicity):
            raise ConfigError("augmentation: multiplicities must be >= 0")
        if len(self.bin_multiplicity) != len(BIN_EDGES) - 1:
            raise ConfigError(
                f"augmentation: need {len(BIN_EDGES) - 1} bin multiplicities, "
                f"got {len(self.bin_multiplicity)}"
            )


@dataclass(frozen=True)
class GeneratorParams(_ConfigMixin):
    """knobs of the synthetic cohort; defaults track the cohort summary statistics"""

    image_size: int = 64
    bmd_mean: float = 0.889
    image_signal_sd: float = 0.105
    noise_sd: float = 0.03
    sex_effect: float = -0.09
    age_effect: float = -0.012
    bmi_effect: float = 0.03
    activity_effect: float = 0.015
    smoking_effect: float = -0.04
    diet_effect: float = 0.005
    male_gain: float = 1.0
    female_gain: float = 0.6
    band_contrast: float = 0.12
    texture_sd: float = 0.03

    def validate(self) -> None:
        if self.image_size < 16 or self.image_size % 8:
            raise ConfigError(f"generator: image_size {self.image_size} must be a multiple of 8, >= 16")
        if min(self.image_signal_sd, self.noise_sd, self.texture_sd) < 0:
            raise ConfigError("generator: standard deviations must be >= 0")
        if self.male_gain <= 0 or self.female_gain <= 0:
            raise ConfigError("generator: image gains must be > 0")


def _check_keys(block: Dict[str, Any], allowed, where: str) -> None:
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


_COMMAND_KEYS = {
    "cross_validate": ("n_folds",),
    "ablate": ("variants", "n_folds"),
    "perturb": ("folds", "n_variants"),
    "screen": ("screening",),
    "export_attention": ("fold",),
}


@dataclass
class RunConfig:
    """contents of a run config file, after flag overrides"""

    model: FusionModelConfig = field(default_factory=FusionModelConfig)
    dataset: Optional[str] = None
    output: Optional[str] = None
    workers: Optional[int] = None
    seed: int = DEFAULT_SEED
    commands: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    schema_version: int = CONFIG_SCHEMA_VERSION

    def command(self, name: str) -> Dict[str, Any]:
        return dict(self.commands.get(name, {}))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "model": self.model.to_dict(),
            "dataset": self.dataset,
            "output": self.output,
            "workers": self.workers,
            "seed": self.seed,
            **{
                name: {k: (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in block.items()}
                for name, block in self.commands.items()
            },
        }


def parse_run_config(raw: Optional[Dict[str, Any]]) -> RunConfig:
    """validates a decoded config file; unknown keys at any level are rejected"""
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"run config: expected a mapping, got {type(raw).__name__}")
    raw = dict(raw or {})
    _check_keys(raw, ("schema_version", "model", "dataset", "output", "workers", "seed",
                      *_COMMAND_KEYS), "run config")
    version = raw.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"run config: schema_version {version} unsupported "
                          f"(expected {CONFIG_SCHEMA_VERSION})")
    commands = {}
    for name, allowed in _COMMAND_KEYS.items():
        block = raw.get(name) or {}
        _check_keys(block, allowed, name)
        if "screening" in block:
            block = dict(block, screening=ScreeningConfig.from_dict(block["screening"]))
        commands[name] = block
    return RunConfig(
        model=FusionModelConfig.from_dict(raw.get("model")),
        dataset=raw.get("dataset"),
        output=raw.get("output"),
        workers=raw.get("workers"),
        seed=int(raw.get("seed", DEFAULT_SEED)),
        commands=commands,
        schema_version=version,
    )


def load_run_config(path: Optional[Path]) -> RunConfig:
    """reads a yaml run config; None yields all defaults"""
    if path is None:
        return parse_run_config({})
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid yaml: {exc}") from exc
    return parse_run_config(raw)
