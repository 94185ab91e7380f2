import json
import math

import numpy as np
import pytest

from engine.rng import make_rng
from engine.tasks import (DatasetError, DatasetSource, SinusoidSource, SinusoidTask, SynthClsConfig,
                          SynthClsSource, load_dataset, sample_dataset_episode, sample_sinusoid_episode,
                          sample_sinusoid_task, sample_synth_cls_episode)


def write_dataset(root, classes, dim=3, per_class=6):
    entries = []
    for index, name in enumerate(classes):
        values = np.full((per_class, dim), float(index)) + np.arange(per_class)[:, None] / 100.0
        values.astype("<f8").tofile(root / f"{name}.bin")
        entries.append({"name": name, "file": f"{name}.bin", "count": per_class})
    (root / "meta.json").write_text(json.dumps({"dim": dim, "classes": entries}))
    return root


def test_sinusoid_task_ranges():
    rng = make_rng(0, "task")
    for _ in range(10_000):
        task = sample_sinusoid_task(rng)
        assert 0.1 <= task.amplitude <= 5.0
        assert 0.0 <= task.phase <= math.pi
    with pytest.raises(ValueError):
        SinusoidTask(amplitude=6.0, phase=0.0)


def test_sinusoid_episode_follows_its_task():
    task = SinusoidTask(amplitude=2.0, phase=0.5)
    episode = sample_sinusoid_episode(task, shot=10, query=7, rng=make_rng(1, "points"))
    assert episode.support_x.shape == (10, 1)
    assert episode.query_x.shape == (7, 1)
    assert np.all(np.abs(episode.support_x) <= 5.0)
    np.testing.assert_allclose(episode.query_y, 2.0 * np.sin(episode.query_x + 0.5))
    assert not episode.is_classification


def test_synthcls_episode_shapes_and_labels():
    cfg = SynthClsConfig(way=5, shot=1, query_per_class=15, dim=16)
    episode = sample_synth_cls_episode(cfg, make_rng(0, "prototypes"))
    assert episode.support_x.shape == (5, 16)
    assert episode.query_x.shape == (75, 16)
    assert episode.support_y.tolist() == [0, 1, 2, 3, 4]
    assert np.bincount(episode.query_y).tolist() == [15] * 5
    assert sorted(episode.class_ids) == [0, 1, 2, 3, 4]
    assert episode.is_classification


def test_synthcls_examples_cluster_around_their_slot():
    cfg = SynthClsConfig(way=3, shot=20, query_per_class=20, dim=4, noise_std=0.01, prototype_range=1.0)
    episode = sample_synth_cls_episode(cfg, make_rng(2, "prototypes"))
    centroids = np.stack([episode.support_x[episode.support_y == c].mean(axis=0) for c in range(3)])
    distances = np.linalg.norm(episode.query_x[:, None, :] - centroids[None], axis=2)
    assert np.mean(np.argmin(distances, axis=1) == episode.query_y) == 1.0


def test_class_slots_are_uniformly_permuted():
    source = SynthClsSource(SynthClsConfig(way=5, shot=1, query_per_class=1, dim=2), seed=0)
    counts = np.zeros((5, 5))
    for _ in range(10_000):
        episode = source.sample_episode()
        counts[np.arange(5), episode.class_ids] += 1
    np.testing.assert_allclose(counts / 10_000, 0.2, atol=0.02)


def test_invalid_synth_config():
    with pytest.raises(ValueError):
        SynthClsConfig(way=1)
    with pytest.raises(ValueError):
        SynthClsConfig(noise_std=0.0)


def test_sources_are_deterministic():
    a = SinusoidSource(10, 10, seed=4).sample_batch(3)
    b = SinusoidSource(10, 10, seed=4).sample_batch(3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.support_x, y.support_x)
        np.testing.assert_array_equal(x.query_y, y.query_y)
    held_out = SinusoidSource(10, 10, seed=4, salt=2).sample_episode()
    assert not np.array_equal(held_out.support_x, a[0].support_x)


def test_synth_source_batch(synth_cfg):
    batch = SynthClsSource(synth_cfg, seed=1).sample_batch(4)
    assert len(batch) == 4
    assert all(ep.way == 3 and ep.shot == 2 for ep in batch)


def test_dataset_round_trip(tmp_path):
    root = write_dataset(tmp_path, ["cat", "dog", "eel", "fox"])
    dataset = load_dataset(root)
    assert dataset.class_names == ["cat", "dog", "eel", "fox"]
    assert dataset.arrays["eel"].shape == (6, 3)
    assert load_dataset(root / "meta.json").class_names == dataset.class_names


def test_dataset_episode_support_and_query_are_disjoint(tmp_path):
    dataset = load_dataset(write_dataset(tmp_path, ["a", "b", "c"], per_class=6))
    rng = make_rng(0, "task")
    for _ in range(20):
        episode = sample_dataset_episode(dataset, way=3, shot=2, query=4, rng=rng)
        for slot in range(3):
            support = {tuple(row) for row in episode.support_x[episode.support_y == slot]}
            query = {tuple(row) for row in episode.query_x[episode.query_y == slot]}
            assert not support & query


def test_dataset_source(tmp_path):
    dataset = load_dataset(write_dataset(tmp_path, ["a", "b", "c"]))
    source = DatasetSource(dataset, way=2, shot=1, query=3, seed=0)
    episode = source.sample_episode()
    assert episode.query_x.shape == (6, 3)
    assert source.loss_kind == "cross_entropy"


def test_dataset_without_classes(tmp_path):
    (tmp_path / "meta.json").write_text(json.dumps({"dim": 3, "classes": []}))
    with pytest.raises(DatasetError, match="dataset has no classes"):
        load_dataset(tmp_path)


def test_dataset_size_mismatch(tmp_path):
    write_dataset(tmp_path, ["a", "b"], per_class=6)
    np.zeros(5 * 3).astype("<f8").tofile(tmp_path / "b.bin")
    with pytest.raises(DatasetError, match="Class 'b': size mismatch, expected 144 bytes, found 120"):
        load_dataset(tmp_path)


def test_dataset_too_few_examples(tmp_path):
    dataset = load_dataset(write_dataset(tmp_path, ["a", "b"], per_class=3))
    with pytest.raises(DatasetError):
        sample_dataset_episode(dataset, way=2, shot=2, query=2, rng=make_rng(0, "task"))
