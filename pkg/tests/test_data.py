import logging
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from bmdfusion.config import (
    BIN_EDGES,
    CATEGORICAL_LEVELS,
    NUMERICAL_FIELDS,
    AugmentationPolicy,
    GeneratorParams,
)
from bmdfusion.data import (
    FoldPlan,
    SampleRecord,
    bin_index,
    expand_training_set,
    fit_scaler,
    generate_synthetic,
    load_manifest,
    preprocess_metadata,
    save_manifest,
    stratified_folds,
    summarize_manifest,
    transform_metadata,
)
from bmdfusion.data.augment import (
    AUG_SUFFIX,
    affine,
    augment,
    brightness_contrast,
    horizontal_flip,
    multiplicity,
    rotate,
    sample_stream,
)
from bmdfusion.data.manifest import read_pgm, write_pgm
from bmdfusion.data.preprocess import images_array
from bmdfusion.errors import ConfigError, DataError, SchemaError

# synthetic generator


def test_generator_is_deterministic(small_manifest):
    again = generate_synthetic(40, seed=7, params=GeneratorParams(image_size=16))
    assert again.ids == small_manifest.ids
    np.testing.assert_array_equal(again.bmd, small_manifest.bmd)
    for a, b in zip(again.samples, small_manifest.samples):
        np.testing.assert_array_equal(a.image, b.image)
        assert a.metadata == b.metadata
    other = generate_synthetic(40, seed=8, params=GeneratorParams(image_size=16))
    assert not np.array_equal(other.bmd, small_manifest.bmd)


def test_generator_refuses_tiny_cohorts():
    with pytest.raises(ConfigError):
        generate_synthetic(10)


def test_generator_matches_cohort_statistics():
    manifest = generate_synthetic(233, seed=42, params=GeneratorParams(image_size=16))
    bmd = manifest.bmd
    assert len(manifest) == 233
    assert bmd.mean() == pytest.approx(0.889, abs=0.03)
    assert 0.10 < bmd.std(ddof=1) < 0.16
    frame = manifest.metadata_frame()
    assert frame["agexray"].mean() == pytest.approx(75.45, abs=1.0)
    assert set(frame["absex"]) == set(CATEGORICAL_LEVELS["absex"])


def test_generator_latents_decompose_bmd(small_manifest):
    latents = small_manifest.latents
    params = GeneratorParams()
    total = params.bmd_mean + latents["metadata_component"] + latents["image_component"] + latents["noise"]
    np.testing.assert_allclose(small_manifest.bmd, np.clip(total, 0.41, 1.39), atol=6e-5)


def test_generator_images(small_manifest):
    for sample in small_manifest.samples:
        assert sample.image.shape == (16, 16)
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0
        assert set(sample.metadata) == set(NUMERICAL_FIELDS) | set(CATEGORICAL_LEVELS)


def test_summary_counts_every_sample(small_manifest):
    summary = summarize_manifest(small_manifest)
    assert summary["n"] == 40
    assert sum(summary["bins"].values()) == 40
    assert summary["bmd_mean"] == pytest.approx(small_manifest.bmd.mean())


# persisted layout


def test_dataset_directory_round_trip(small_manifest, dataset_dir):
    loaded = load_manifest(dataset_dir)
    assert loaded.ids == small_manifest.ids
    np.testing.assert_array_equal(loaded.bmd, small_manifest.bmd)
    for a, b in zip(loaded.samples, small_manifest.samples):
        np.testing.assert_array_equal(a.image, b.image)
        assert a.metadata == b.metadata
    assert loaded.generator["seed"] == 7
    assert list(loaded.latents["id"]) == small_manifest.ids


def test_saving_twice_gives_identical_bytes(small_manifest, tmp_path):
    a = save_manifest(small_manifest, tmp_path / "a")
    b = save_manifest(small_manifest, tmp_path / "b")
    for path in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
        assert (a / path).read_bytes() == (b / path).read_bytes()


def test_loading_rejects_broken_directories(small_manifest, tmp_path):
    with pytest.raises(DataError):
        load_manifest(tmp_path / "nowhere")
    root = save_manifest(small_manifest, tmp_path / "broken")
    frame = pd.read_csv(root / "metadata.csv")
    frame.drop(columns=["epbmi"]).to_csv(root / "metadata.csv", index=False)
    with pytest.raises(SchemaError, match="epbmi"):
        load_manifest(root)


def test_pgm_round_trip(tmp_path, rng):
    image = np.round(rng.uniform(0, 1, size=(5, 7)) * 65535) / 65535
    write_pgm(tmp_path / "x.pgm", image)
    np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), image)
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(DataError):
        read_pgm(tmp_path / "bad.pgm")


def test_truncated_pgm_is_a_data_error(tmp_path, rng):
    write_pgm(tmp_path / "x.pgm", rng.uniform(0, 1, size=(6, 6)))
    data = (tmp_path / "x.pgm").read_bytes()
    (tmp_path / "short.pgm").write_bytes(data[:-10])
    with pytest.raises(DataError, match="short.pgm"):
        read_pgm(tmp_path / "short.pgm")
    (tmp_path / "empty.pgm").write_bytes(b"")
    with pytest.raises(DataError):
        read_pgm(tmp_path / "empty.pgm")
    (tmp_path / "junk.pgm").write_bytes(b"P5\nfour 4\n255\n")
    with pytest.raises(DataError):
        read_pgm(tmp_path / "junk.pgm")


def test_sample_guard_range():
    with pytest.raises(DataError):
        SampleRecord("x", np.zeros((4, 4)), {}, 1.5)
    with pytest.raises(DataError):
        SampleRecord("x", np.zeros(4), {}, 0.9)


# stratified folds


@pytest.mark.parametrize("value, expected", [
    (0.5, 0), (0.6, 0), (0.6999, 0), (0.7, 1), (0.95, 3), (1.1999, 5), (1.2, 5), (1.35, 5),
])
def test_bin_index(value, expected):
    assert bin_index(np.array([value]))[0] == expected


def fake_manifest(rng, n):
    bmd = rng.uniform(0.45, 1.35, size=n)
    return SimpleNamespace(ids=[f"id{i:03d}" for i in range(n)], bmd=bmd)


def test_folds_partition_and_balance_bins():
    rng = np.random.default_rng(3)
    for trial in range(100):
        n_folds = int(rng.integers(2, 11))
        manifest = fake_manifest(rng, int(rng.integers(n_folds, 120)))
        plan = stratified_folds(manifest, n_folds, seed=trial)
        test_sets = [set(plan.test_ids(k)) for k in range(n_folds)]
        assert set().union(*test_sets) == set(manifest.ids)
        assert sum(len(s) for s in test_sets) == len(manifest.ids)
        counts = plan.bin_counts()
        assert np.all(counts.max(axis=1) - counts.min(axis=1) <= 1)
        sizes = plan.fold_sizes()
        assert max(sizes) - min(sizes) <= 1
        for k in range(n_folds):
            assert set(plan.train_ids(k)).isdisjoint(test_sets[k])


def test_folds_are_seeded(small_manifest):
    a = stratified_folds(small_manifest, 5, seed=1)
    b = stratified_folds(small_manifest, 5, seed=1)
    c = stratified_folds(small_manifest, 5, seed=2)
    assert a.assignments == b.assignments
    assert a.assignments != c.assignments


def test_fold_arguments_are_checked(small_manifest):
    with pytest.raises(ConfigError):
        stratified_folds(small_manifest, 1)
    with pytest.raises(ConfigError):
        stratified_folds(small_manifest, 41)
    plan = stratified_folds(small_manifest, 4)
    with pytest.raises(ConfigError):
        plan.test_ids(4)


def test_fold_plan_persists(small_manifest, tmp_path):
    plan = stratified_folds(small_manifest, 4, seed=9)
    plan.save(tmp_path / "plan.json")
    loaded = FoldPlan.load(tmp_path / "plan.json")
    assert loaded == plan
    (tmp_path / "bad.json").write_text('{"n_folds": 3}')
    with pytest.raises(DataError):
        FoldPlan.load(tmp_path / "bad.json")


# preprocessing


def test_scaler_is_fit_on_training_ids_only(small_manifest):
    plan = stratified_folds(small_manifest, 4)
    train_ids = plan.train_ids(0)
    matrix, field_spec, scaler = preprocess_metadata(small_manifest, train_ids)
    assert matrix.shape == (40, sum(w for _, w in field_spec))
    index = [small_manifest.ids.index(i) for i in train_ids]
    numeric = matrix[index, :len(NUMERICAL_FIELDS)]
    np.testing.assert_allclose(numeric.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(numeric.std(axis=0), 1.0, rtol=1e-10)
    onehot = matrix[:, len(NUMERICAL_FIELDS):]
    np.testing.assert_array_equal(onehot[:, :2].sum(axis=1), 1.0)
    np.testing.assert_array_equal(onehot[:, 2:].sum(axis=1), 1.0)
    assert scaler.to_dict()["fields"] == list(NUMERICAL_FIELDS)


def test_one_hot_follows_fixed_levels(small_manifest):
    scaler = fit_scaler(small_manifest.samples)
    sample = small_manifest.samples[0]
    row = transform_metadata([sample], scaler)[0]
    sex = row[len(NUMERICAL_FIELDS):len(NUMERICAL_FIELDS) + 2]
    assert sex[CATEGORICAL_LEVELS["absex"].index(sample.metadata["absex"])] == 1.0


def test_unknown_level_is_a_schema_error(small_manifest):
    scaler = fit_scaler(small_manifest.samples)
    s = small_manifest.samples[0]
    odd = SampleRecord(s.id, s.image, dict(s.metadata, epsmkstat="Sometimes"), s.bmd)
    with pytest.raises(SchemaError):
        transform_metadata([odd], scaler)


def test_zero_variance_column_keeps_unit_scale(small_manifest, caplog):
    flat = [SampleRecord(s.id, s.image, dict(s.metadata, epprddiet24=0.5), s.bmd) for s in small_manifest.samples]
    with caplog.at_level(logging.WARNING):
        scaler = fit_scaler(flat)
    assert scaler.scale[NUMERICAL_FIELDS.index("epprddiet24")] == 1.0
    assert "epprddiet24" in caplog.text


def test_images_array_adds_channel(small_manifest):
    arr = images_array(small_manifest.samples[:3], np.float32)
    assert arr.shape == (3, 1, 16, 16) and arr.dtype == np.float32


# augmentation


def test_identity_policy_leaves_images_alone(small_manifest):
    image = small_manifest.samples[0].image
    out = augment(image, AugmentationPolicy.identity(), np.random.default_rng(0))
    np.testing.assert_array_equal(out, image)


def test_augment_stays_in_unit_range(small_manifest):
    rng = np.random.default_rng(1)
    for sample in small_manifest.samples[:10]:
        out = augment(sample.image, AugmentationPolicy.training(), rng)
        assert out.shape == sample.image.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_geometric_operations(rng):
    image = rng.uniform(0, 1, size=(9, 9))
    np.testing.assert_array_equal(horizontal_flip(image), image[:, ::-1])
    np.testing.assert_allclose(affine(image), image, atol=1e-12)
    np.testing.assert_allclose(rotate(image, 180.0), image[::-1, ::-1], atol=1e-9)
    shifted = affine(image, translate=(0.0, 1.0))
    np.testing.assert_allclose(shifted[:, 1:], image[:, :-1], atol=1e-12)


def test_contrast_keeps_the_mean(rng):
    image = rng.uniform(0.2, 0.8, size=(9, 9))
    stretched = brightness_contrast(image, 0.0, 0.3)
    assert stretched.mean() == pytest.approx(image.mean(), abs=1e-12)
    assert stretched.std() == pytest.approx(1.3 * image.std(), rel=1e-12)
    shifted = brightness_contrast(image, 0.1, 0.2)
    np.testing.assert_allclose(shifted, (image - image.mean()) * 1.2 + image.mean() + 0.1, atol=1e-12)
    assert shifted.mean() == pytest.approx(image.mean() + 0.1, abs=1e-12)


def test_sample_streams_are_order_free():
    a = sample_stream(42, "s0001").random(3)
    sample_stream(42, "s0002").random(3)
    b = sample_stream(42, "s0001").random(3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample_stream(42, "s0002").random(3))


def test_training_set_expansion(small_manifest):
    policy = AugmentationPolicy.training()
    plan = stratified_folds(small_manifest, 4)
    expanded = expand_training_set(small_manifest, plan, 0, policy, seed=5)
    train = small_manifest.subset(plan.train_ids(0))
    assert len(expanded) == sum(1 + multiplicity(s.bmd, policy) for s in train)
    assert not {s.id for s in expanded} & set(plan.test_ids(0))
    copies = [s for s in expanded if AUG_SUFFIX in s.id]
    assert all(c.bmd == small_manifest.get(c.id.split(AUG_SUFFIX)[0]).bmd for c in copies)
    again = expand_training_set(small_manifest, plan, 0, policy, seed=5)
    for a, b in zip(expanded, again):
        assert a.id == b.id
        np.testing.assert_array_equal(a.image, b.image)


def test_multiplicity_per_bin():
    policy = AugmentationPolicy.training()
    mids = [(lo + hi) / 2 for lo, hi in zip(BIN_EDGES[:-1], BIN_EDGES[1:])]
    assert [multiplicity(m, policy) for m in mids] == [4, 2, 1, 1, 2, 4]
