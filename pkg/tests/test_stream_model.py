import numpy as np
import pytest

from cirsim.learner import TrainConfig, accuracy, init_params, train_on_experience
from cirsim.slot_generator import SlotConfig, generate_slot_stream
from cirsim.stream import (
    DanglingInstanceError,
    Experience,
    LabeledDataset,
    Provenance,
    Stream,
    load_dataset_csv,
    make_experience,
    make_synthetic_dataset,
    save_dataset_csv,
    verify_scenario_properties,
)


def test_synthetic_sizes_forced_by_arguments():
    train, test = make_synthetic_dataset(2, 10, 2, 0.1, np.random.default_rng(0))
    assert len(train) == 20
    sizes = [len(v) for v in train.per_class_index.values()]
    assert sizes == [10, 10]
    assert len(test) == 2  # 10% of 10, floored to at least 1 per class


def test_synthetic_same_seed_bit_identical():
    a_train, a_test = make_synthetic_dataset(5, 20, 6, 0.3, np.random.default_rng(42))
    b_train, b_test = make_synthetic_dataset(5, 20, 6, 0.3, np.random.default_rng(42))
    assert np.array_equal(a_train.features, b_train.features)
    assert np.array_equal(a_train.labels, b_train.labels)
    assert np.array_equal(a_test.features, b_test.features)


def test_synthetic_clusters_linearly_separable():
    # oracle: a linear softmax classifier fit on the whole dataset
    train, _ = make_synthetic_dataset(20, 100, 16, 0.5, np.random.default_rng(1))
    params = init_params(16, (), 20, "relu", np.random.default_rng(2))
    train_on_experience(
        params,
        train.features,
        train.labels,
        TrainConfig(lr=0.1, epochs_per_experience=20, batch_size=32),
        np.random.default_rng(3),
    )
    assert accuracy(params, train.features, train.labels) > 0.90


def test_synthetic_rejects_bad_sizes():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        make_synthetic_dataset(1, 10, 4, 0.1, rng)
    with pytest.raises(ValueError):
        make_synthetic_dataset(3, 0, 4, 0.1, rng)
    with pytest.raises(ValueError):
        make_synthetic_dataset(3, 10, 1, 0.1, rng)


def test_per_class_index_partitions_dataset():
    train, _ = make_synthetic_dataset(7, 13, 4, 0.2, np.random.default_rng(3))
    index = train.per_class_index
    combined = np.sort(np.concatenate(list(index.values())))
    assert np.array_equal(combined, np.arange(len(train)))
    for c, idx in index.items():
        assert np.all(train.labels[idx] == c)


def test_labels_must_be_in_range():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), np.array([0, 1, 5]), num_classes=3)


def test_make_experience_derives_present_classes():
    train, _ = make_synthetic_dataset(4, 5, 3, 0.2, np.random.default_rng(0))
    exp = make_experience(0, [0, 1, 5], train, Provenance(kind="slot_assignment", slots=()))
    assert exp.present_classes == frozenset(int(c) for c in np.unique(train.labels[[0, 1, 5]]))


def test_make_experience_rejects_dangling_indices():
    train, _ = make_synthetic_dataset(4, 5, 3, 0.2, np.random.default_rng(0))
    with pytest.raises(DanglingInstanceError):
        make_experience(0, [0, 99], train, Provenance(kind="slot_assignment", slots=()))


def _single_experience_stream(dataset):
    exp = make_experience(
        0, np.arange(len(dataset)), dataset, Provenance(kind="slot_assignment", slots=())
    )
    return Stream(experiences=(exp,), dataset_ref=dataset.digest(), generator_config_hash="x")


class TestVerifyScenarioProperties:
    def test_slot_ci_construction(self):
        train, _ = make_synthetic_dataset(10, 20, 4, 0.2, np.random.default_rng(0))
        stream = generate_slot_stream(train, SlotConfig(5, 2, seed=0))
        report = verify_scenario_properties(stream, train)
        assert report.classification == "CI"
        assert report.max_instance_overlap == 0
        assert report.max_concept_overlap == 0
        assert report.domain_coverage and report.codomain_coverage

    def test_slot_di_construction(self):
        train, _ = make_synthetic_dataset(10, 20, 4, 0.2, np.random.default_rng(0))
        stream = generate_slot_stream(train, SlotConfig(5, 10, seed=0))
        report = verify_scenario_properties(stream, train)
        assert report.classification == "DI"
        assert report.max_instance_overlap == 0
        assert report.every_experience_full_codomain

    def test_single_experience_whole_dataset(self):
        train, _ = make_synthetic_dataset(3, 6, 3, 0.2, np.random.default_rng(0))
        report = verify_scenario_properties(_single_experience_stream(train), train)
        assert report.n_pairs == 0
        assert report.domain_coverage and report.codomain_coverage

    def test_dangling_index_detected(self):
        train, _ = make_synthetic_dataset(3, 6, 3, 0.2, np.random.default_rng(0))
        exp = Experience(
            index=0,
            train_instances=np.array([0, 999]),
            present_classes=frozenset([0]),
            provenance=Provenance(kind="slot_assignment", slots=()),
        )
        stream = Stream(experiences=(exp,), dataset_ref="d", generator_config_hash="x")
        with pytest.raises(DanglingInstanceError):
            verify_scenario_properties(stream, train)


def test_stream_requires_consecutive_indices():
    train, _ = make_synthetic_dataset(3, 6, 3, 0.2, np.random.default_rng(0))
    exp = make_experience(1, [0], train, Provenance(kind="slot_assignment", slots=()))
    with pytest.raises(ValueError):
        Stream(experiences=(exp,), dataset_ref="d", generator_config_hash="x")


def test_manifest_round_trip_is_identity():
    train, _ = make_synthetic_dataset(10, 20, 4, 0.2, np.random.default_rng(0))
    stream = generate_slot_stream(train, SlotConfig(5, 4, seed=3))
    manifest = stream.to_manifest()
    restored = Stream.from_manifest(manifest)
    assert restored.to_manifest() == manifest


def test_manifest_file_round_trip(tmp_path):
    train, _ = make_synthetic_dataset(6, 10, 4, 0.2, np.random.default_rng(0))
    stream = generate_slot_stream(train, SlotConfig(3, 2, seed=1))
    path = tmp_path / "manifest.json"
    stream.save_manifest(path)
    restored = Stream.load_manifest(path)
    assert restored.to_manifest() == stream.to_manifest()


def test_dataset_csv_round_trip(tmp_path):
    train, _ = make_synthetic_dataset(4, 9, 5, 0.3, np.random.default_rng(5))
    path = tmp_path / "data.csv"
    save_dataset_csv(train, path)
    loaded = load_dataset_csv(path)
    assert loaded.num_classes == train.num_classes
    assert np.array_equal(loaded.labels, train.labels)
    assert np.array_equal(loaded.features, train.features)
