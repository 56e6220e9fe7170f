import numpy as np
import pytest

from modules.descriptor.field import field_from_array
from modules.garment.generator import analytic_skeleton
from modules.skeleton.skeleton import Skeleton
from validation.correspondence_eval import (
    AccuracyResult,
    dataset_accuracy,
    match_accuracy,
    mean_failure_size,
    probe_suite,
    random_fields,
    skeleton_error,
)


def one_hot(obs, size):
    features = np.zeros((len(obs), size))
    features[np.arange(len(obs)), obs.trace] = 1.0
    return field_from_array(features, obs)


def test_vertex_identity_features_are_perfect(dataset):
    record = dataset.records[0]
    a, b = record.observations[:2]
    size = record.mesh.vertex_count
    result = match_accuracy(one_hot(a, size), one_hot(b, size), record.mesh)
    assert result.accuracy == 1.0
    assert result.total == int(np.isin(a.trace, b.trace).sum())


def test_constant_features_match_first_point(dataset):
    record = dataset.records[0]
    a, b = record.observations[:2]
    constant = np.tile([1.0, 0.0], (len(a), 1))
    result = match_accuracy(field_from_array(constant, a), field_from_array(constant[: len(b)], b),
                            record.mesh, fraction=10.0)
    assert result.accuracy == 1.0


def test_accuracy_results_add():
    total = AccuracyResult(3, 4) + AccuracyResult(1, 6)
    assert (total.correct, total.total) == (4, 10)
    assert total.accuracy == pytest.approx(0.4)
    assert AccuracyResult().accuracy == 0.0


def test_random_baseline_is_worse_than_identity(dataset):
    def identity(obs):
        return one_hot(obs, max(r.mesh.vertex_count for r in dataset.records))

    perfect = dataset_accuracy(identity, dataset)
    chance = dataset_accuracy(random_fields(dim=16, seed=0), dataset)
    assert perfect.accuracy == 1.0
    assert chance.total == perfect.total
    assert chance.accuracy < 0.5


def test_probe_suite_is_deterministic(dataset):
    suite = probe_suite(dataset, 12, seed=3)
    assert suite == probe_suite(dataset, 12, seed=3)
    assert len(suite) == 12
    for g, a, b, probe in suite:
        observations = dataset.records[g].observations
        assert a != b
        assert int(observations[a].trace[probe]) in observations[b].first_index


def test_identity_features_have_no_failures(dataset, config):
    def identity(obs):
        return one_hot(obs, max(r.mesh.vertex_count for r in dataset.records))

    suite = probe_suite(dataset, 10)
    assert mean_failure_size(identity, dataset, suite, config.train) == 0.0


def test_skeleton_error(top):
    assert skeleton_error(analytic_skeleton(top), top) == 0.0
    unnamed = Skeleton(["k0", "k1"], np.zeros((2, 3)), [0, 1], [0.0])
    with pytest.raises(ValueError):
        skeleton_error(unnamed, top)
