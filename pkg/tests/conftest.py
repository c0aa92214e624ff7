import numpy as np
import pytest

from bmdfusion.config import (
    CrossAttentionBranchConfig,
    FusionModelConfig,
    GeneratorParams,
    ImageEncoderConfig,
    MetadataEncoderConfig,
    OptimizerConfig,
)
from bmdfusion.data.manifest import save_manifest
from bmdfusion.data.synthetic import generate_synthetic

TINY_WIDTH = 8


def tiny_model_dict():
    """the tiny model as it would appear in a yaml run config"""
    return {
        "image": {"image_size": 16, "conv_channels": [4, 8], "kernel_sizes": [3, 3],
                  "pooled_feature_dim": 8, "projection_dim": TINY_WIDTH, "dropout_p": 0.0},
        "metadata": {"hidden_dim": 16, "embed_dim": TINY_WIDTH, "dropout_p": 0.0},
        "img_to_meta": {"query_dim": TINY_WIDTH, "kv_dim": TINY_WIDTH, "n_layers": 2, "n_heads": 2,
                        "updater_dropout_p": 0.0},
        "meta_to_img": {"query_dim": TINY_WIDTH, "kv_dim": TINY_WIDTH, "n_layers": 2, "n_heads": 2,
                        "updater_dropout_p": 0.0},
        "epochs": 1,
        "train_batch": 16,
        "eval_batch": 8,
        "head_dropout_p": 0.0,
        "precision": "float64",
    }


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def make_config():
    """tiny float64 model config; keyword arguments replace top-level fields"""

    def build(**changes):
        branch = CrossAttentionBranchConfig(query_dim=TINY_WIDTH, kv_dim=TINY_WIDTH, n_layers=2,
                                            n_heads=2, updater_dropout_p=0.0)
        cfg = FusionModelConfig(
            image=ImageEncoderConfig(image_size=16, conv_channels=(4, 8), kernel_sizes=(3, 3),
                                     pooled_feature_dim=8, projection_dim=TINY_WIDTH, dropout_p=0.0),
            metadata=MetadataEncoderConfig(hidden_dim=16, embed_dim=TINY_WIDTH, dropout_p=0.0),
            img_to_meta=branch,
            meta_to_img=branch,
            optimizer=OptimizerConfig(lr=1e-3),
            epochs=1,
            train_batch=16,
            eval_batch=8,
            head_dropout_p=0.0,
            precision="float64",
        )
        return cfg.replace(**changes) if changes else cfg

    return build


@pytest.fixture(scope="session")
def small_manifest():
    """40 synthetic samples with 16x16 images"""
    return generate_synthetic(40, seed=7, params=GeneratorParams(image_size=16))


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, small_manifest):
    return save_manifest(small_manifest, tmp_path_factory.mktemp("data") / "synthetic")
