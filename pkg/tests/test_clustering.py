import numpy as np
import pytest

from _scenes import separated_scene
from dropuq.clustering import (
    ClusterConfig,
    ClusteringError,
    box_features,
    build_instance_clusters,
    cluster_pipeline,
    estimate_component_count,
    labels_from_clusters,
    split_oversized,
)
from dropuq.model import BBox, Detection, SampleSet, ScoreVector
from dropuq.synth import adjusted_rand_index, generate


def simple_set(boxes, n_repetitions=1, reps=None):
    dets = tuple(
        Detection(
            bbox=BBox(*b),
            scores=ScoreVector((0.1, 0.9)),
            mask=None,
            repetition=0 if reps is None else reps[i],
        )
        for i, b in enumerate(boxes)
    )
    return SampleSet("img", 1000, 1000, n_repetitions, dets)


class TestComponentCount:
    def test_paper_heuristic(self):
        assert estimate_component_count(300, 100) == 3

    def test_single_instance(self):
        assert estimate_component_count(100, 100) == 1

    def test_half_up_boundaries(self):
        assert estimate_component_count(149, 100) == 1
        assert estimate_component_count(150, 100) == 2
        assert estimate_component_count(151, 100) == 2

    def test_minimum_one(self):
        assert estimate_component_count(10, 100) == 1

    def test_zero_detections_error(self):
        with pytest.raises(ClusteringError):
            estimate_component_count(0, 100)

    def test_bad_repetitions(self):
        with pytest.raises(ValueError):
            estimate_component_count(5, 0)


class TestBoxFeatures:
    def test_single_detection(self):
        s = simple_set([(0, 0, 10, 10)])
        assert box_features(s).tolist() == [[0, 0, 10, 10]]

    def test_rows_follow_detection_order(self):
        boxes = [(0, 0, 10, 10), (5, 5, 20, 20), (1, 2, 3, 4)]
        a = box_features(simple_set(boxes))
        b = box_features(simple_set([boxes[2], boxes[0], boxes[1]]))
        assert np.array_equal(a[[2, 0, 1]], b)

    def test_shape(self):
        rng = np.random.default_rng(0)
        boxes = [(x, y, x + 5, y + 5) for x, y in rng.uniform(0, 900, (200, 2))]
        assert box_features(simple_set(boxes)).shape == (200, 4)

    def test_empty_error(self):
        with pytest.raises(ClusteringError):
            box_features(SampleSet("img", 10, 10, 1, ()))


class TestBuildInstanceClusters:
    def test_single_label(self):
        s = simple_set([(0, 0, 5, 5), (1, 1, 6, 6), (2, 2, 7, 7)])
        clusters = build_instance_clusters(s, [0, 0, 0])
        assert len(clusters) == 1
        assert len(clusters[0]) == 3

    def test_identity_labels(self):
        s = simple_set([(0, 0, 5, 5), (1, 1, 6, 6), (2, 2, 7, 7)])
        clusters = build_instance_clusters(s, [0, 1, 2])
        assert [len(c) for c in clusters] == [1, 1, 1]

    def test_partition_multiset(self):
        rng = np.random.default_rng(3)
        boxes = [(x, y, x + 5, y + 5) for x, y in rng.uniform(0, 900, (40, 2))]
        reps = list(rng.integers(0, 4, 40))
        s = simple_set(boxes, n_repetitions=4, reps=reps)
        labels = rng.integers(0, 6, 40)
        clusters = build_instance_clusters(s, labels)
        members = [m for c in clusters for m in c.members]
        assert sorted(map(id, members)) == sorted(map(id, s.detections))
        assert labels_from_clusters(s, clusters).shape == (40,)

    def test_member_order_by_provenance(self):
        boxes = [(0, 0, 5, 5)] * 4
        s = simple_set(boxes, n_repetitions=2, reps=[1, 0, 1, 0])
        clusters = build_instance_clusters(s, [0, 0, 0, 0])
        assert clusters[0].source_labels == ((0, 0), (0, 1), (1, 0), (1, 1))

    def test_label_shape_mismatch(self):
        s = simple_set([(0, 0, 5, 5)])
        with pytest.raises(ValueError):
            build_instance_clusters(s, [0, 1])


class TestSplitOversized:
    def test_small_clusters_unchanged(self):
        s, labels, _ = generate(separated_scene(0, 2, sigma=2.0))
        clusters = build_instance_clusters(s, labels)
        out = split_oversized(clusters, 100, ClusterConfig(seed=0))
        assert [c.members for c in out] == [c.members for c in clusters]
        assert not any(c.split_refused for c in out)

    def test_merged_pair_splits_into_two(self):
        spec = separated_scene(1, 2, sigma=2.0)
        s, labels, _ = generate(spec)
        assert len(s.detections) == 200
        merged = build_instance_clusters(s, [0] * 200)
        out = split_oversized(merged, 100, ClusterConfig(seed=1, split_threshold=150))
        assert len(out) == 2
        got = labels_from_clusters(s, out)
        assert adjusted_rand_index(labels, got) == 1.0

    def test_identical_points_refuse_split(self):
        boxes = [(10, 10, 40, 40)] * 151
        s = simple_set(boxes, n_repetitions=151, reps=list(range(151)))
        merged = build_instance_clusters(s, [0] * 151)
        out = split_oversized(merged, 151, ClusterConfig(seed=0))
        assert len(out) == 1
        assert out[0].split_refused
        assert len(out[0]) == 151

    def test_output_is_partition(self):
        spec = separated_scene(2, 3, sigma=2.0)
        s, _, _ = generate(spec)
        merged = build_instance_clusters(s, [0] * len(s.detections))
        out = split_oversized(merged, 100, ClusterConfig(seed=2))
        prov = sorted(p for c in out for p in c.source_labels)
        assert prov == sorted(p for c in merged for p in c.source_labels)


class TestClusterPipeline:
    def test_single_instance_single_cluster(self):
        s, labels, _ = generate(separated_scene(3, 1, sigma=2.0))
        clusters = cluster_pipeline(s, ClusterConfig(seed=3))
        assert len(clusters) == 1
        assert adjusted_rand_index(labels, labels_from_clusters(s, clusters)) == 1.0

    @pytest.mark.parametrize("algorithm", ["bgm", "agg"])
    def test_three_instances_recovered(self, algorithm):
        s, labels, _ = generate(separated_scene(4, 3, sigma=2.0))
        clusters = cluster_pipeline(s, ClusterConfig(algorithm=algorithm, seed=4))
        got = labels_from_clusters(s, clusters)
        assert adjusted_rand_index(labels, got) >= 0.99

    def test_deterministic(self):
        s, _, _ = generate(separated_scene(5, 3, sigma=2.0))
        a = cluster_pipeline(s, ClusterConfig(seed=5))
        b = cluster_pipeline(s, ClusterConfig(seed=5))
        assert [c.members for c in a] == [c.members for c in b]
        assert [c.cluster_id for c in a] == [c.cluster_id for c in b]

    def test_partition_property(self):
        s, _, _ = generate(separated_scene(6, 4, sigma=3.0))
        clusters = cluster_pipeline(s, ClusterConfig(seed=6))
        prov = sorted(p for c in clusters for p in c.source_labels)
        assert len(prov) == len(s.detections)
        assert len(set(prov)) == len(prov)

    def test_translation_equivariance(self):
        spec = separated_scene(7, 3, sigma=2.0, width=2000, height=2000)
        s, _, _ = generate(spec)
        base = labels_from_clusters(s, cluster_pipeline(s, ClusterConfig(seed=7)))
        shifted_dets = tuple(
            Detection(
                bbox=BBox(
                    d.bbox.x1 + 37.25, d.bbox.y1 + 41.5, d.bbox.x2 + 37.25, d.bbox.y2 + 41.5
                ),
                scores=d.scores,
                mask=d.mask,
                repetition=d.repetition,
            )
            for d in s.detections
        )
        shifted = SampleSet(s.image_id, s.height, s.width, s.n_repetitions, shifted_dets)
        moved = labels_from_clusters(shifted, cluster_pipeline(shifted, ClusterConfig(seed=7)))
        assert adjusted_rand_index(base, moved) == 1.0

    def test_permutation_invariance(self):
        s, _, _ = generate(separated_scene(8, 3, sigma=2.0))
        rng = np.random.default_rng(8)
        perm = rng.permutation(len(s.detections))
        permuted = SampleSet(
            s.image_id,
            s.height,
            s.width,
            s.n_repetitions,
            tuple(s.detections[i] for i in perm),
        )
        base = labels_from_clusters(s, cluster_pipeline(s, ClusterConfig(seed=8)))
        moved = labels_from_clusters(permuted, cluster_pipeline(permuted, ClusterConfig(seed=8)))
        assert adjusted_rand_index(np.asarray(base)[perm], moved) == 1.0

    def test_empty_error(self):
        s = SampleSet("img", 10, 10, 1, ())
        with pytest.raises(ClusteringError):
            cluster_pipeline(s, ClusterConfig(seed=0))

    def test_oversized_survivor_carries_refusal_flag(self):
        # 151 identical detections cannot split: the one oversized cluster
        # in the pipeline output must be flagged
        boxes = [(10, 10, 40, 40)] * 151
        s = simple_set(boxes, n_repetitions=151, reps=list(range(151)))
        clusters = cluster_pipeline(s, ClusterConfig(seed=0))
        for c in clusters:
            assert (len(c) > 150) == c.split_refused
