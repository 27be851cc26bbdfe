"""Metrics for incremental entity segmentation and scene-graph prediction.

Estimated segmentations are mapped back to ground-truth instances by
nearest-neighbour voting so different segmentation front ends stay
comparable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput

NONE_PREDICATE = 0


@dataclass
class GroundTruth:
    """GT points with instance/class ids plus relationship triplets."""

    points: np.ndarray
    instances: np.ndarray
    instance_classes: dict[int, int]
    triplets: list[tuple[int, int, int]]  # (subject instance, predicate, object instance)
    node_class_names: list[str] = field(default_factory=list)
    predicate_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.instances = np.asarray(self.instances, dtype=np.int64)
        for subject, _, obj in self.triplets:
            if subject not in self.instance_classes or obj not in self.instance_classes:
                raise ValueError("triplet endpoints must be known instances")


@dataclass
class SegmentMapping:
    """Estimated label -> GT instance, with per-label point counts."""

    mapping: dict[int, int]
    point_counts: dict[int, int]


def _nearest_instances(
    est_points: np.ndarray, gt_points: np.ndarray, gt_instances: np.ndarray
) -> np.ndarray:
    tree = cKDTree(gt_points)
    _, idx = tree.query(est_points, k=1)
    return gt_instances[idx]


def aos(
    est_points: np.ndarray,
    est_labels: np.ndarray,
    gt_points: np.ndarray,
    gt_instances: np.ndarray,
) -> float:
    """Average overlap score of an estimated segmentation.

    Every estimated point adopts the instance of its nearest GT point;
    the score is the total size of each instance's dominant estimated
    segment over the total number of estimated points, in [0, 1].
    """
    per_instance = _dominant_counts(est_points, est_labels, gt_points, gt_instances)
    total = sum(size for (_dom, size) in per_instance.values())
    dominant = sum(dom for (dom, _size) in per_instance.values())
    return dominant / total


def aos_summed_ratios(
    est_points: np.ndarray,
    est_labels: np.ndarray,
    gt_points: np.ndarray,
    gt_instances: np.ndarray,
) -> float:
    """Variant that sums per-instance dominant ratios (can exceed 1 when
    several instances are present); kept for comparison."""
    per_instance = _dominant_counts(est_points, est_labels, gt_points, gt_instances)
    return sum(dom / size for (dom, size) in per_instance.values())


def _dominant_counts(
    est_points: np.ndarray,
    est_labels: np.ndarray,
    gt_points: np.ndarray,
    gt_instances: np.ndarray,
) -> dict[int, tuple[int, int]]:
    est_points = np.asarray(est_points, dtype=np.float64).reshape(-1, 3)
    est_labels = np.asarray(est_labels, dtype=np.int64)
    gt_points = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    gt_instances = np.asarray(gt_instances, dtype=np.int64)
    if len(est_points) == 0 or len(gt_points) == 0:
        raise EmptyInput("overlap score needs non-empty point clouds")
    adopted = _nearest_instances(est_points, gt_points, gt_instances)
    out: dict[int, tuple[int, int]] = {}
    for inst in np.unique(adopted):
        members = est_labels[adopted == inst]
        counts = np.bincount(members)
        out[int(inst)] = (int(counts.max()), int(len(members)))
    return out


def map_segments(
    est_points: np.ndarray,
    est_labels: np.ndarray,
    gt_points: np.ndarray,
    gt_instances: np.ndarray,
) -> SegmentMapping:
    """Majority vote of per-point nearest-neighbour GT instances for every
    estimated label; vote ties resolve to the lower instance id."""
    est_points = np.asarray(est_points, dtype=np.float64).reshape(-1, 3)
    est_labels = np.asarray(est_labels, dtype=np.int64)
    if len(est_points) == 0:
        return SegmentMapping(mapping={}, point_counts={})
    adopted = _nearest_instances(
        est_points,
        np.asarray(gt_points, dtype=np.float64).reshape(-1, 3),
        np.asarray(gt_instances, dtype=np.int64),
    )
    mapping: dict[int, int] = {}
    counts: dict[int, int] = {}
    for label in np.unique(est_labels):
        member_instances = adopted[est_labels == label]
        counts[int(label)] = int(len(member_instances))
        votes: dict[int, int] = {}
        for inst in member_instances:
            votes[int(inst)] = votes.get(int(inst), 0) + 1
        best = min(votes.items(), key=lambda item: (-item[1], item[0]))
        mapping[int(label)] = best[0]
    return SegmentMapping(mapping=mapping, point_counts=counts)


@dataclass(frozen=True)
class PredictedGraph:
    """Argmax-ready class and predicate distributions keyed by est label."""

    node_probs: dict[int, np.ndarray]
    edge_probs: dict[tuple[int, int], np.ndarray]


def _representatives(mapping: SegmentMapping) -> dict[int, int]:
    """GT instance -> the estimated label with the most points (lower label
    on ties)."""
    reps: dict[int, tuple[int, int]] = {}
    for label in sorted(mapping.mapping):
        inst = mapping.mapping[label]
        count = mapping.point_counts.get(label, 0)
        if inst not in reps or count > reps[inst][0]:
            reps[inst] = (count, label)
    return {inst: label for inst, (_count, label) in reps.items()}


def recall_suite(
    pred: PredictedGraph,
    mapping: SegmentMapping,
    gt: GroundTruth,
    include_none: bool = True,
) -> dict[str, float]:
    """Top-1 recall of triplets, object classes, and predicates, plus
    class-mean recalls for objects and predicates.

    With ``include_none`` the edge universe is every ordered instance pair
    (unannotated pairs count as the none predicate, absent predicted edges
    predict none); otherwise only annotated triplets are scored.  When
    several estimated segments map to one instance, the largest represents
    it.
    """
    reps = _representatives(mapping)
    instances = sorted(gt.instance_classes)

    node_hits: dict[int, bool] = {}
    for inst in instances:
        label = reps.get(inst)
        if label is None or label not in pred.node_probs:
            node_hits[inst] = False
            continue
        node_hits[inst] = int(np.argmax(pred.node_probs[label])) == gt.instance_classes[inst]

    obj_recall = _fraction(node_hits.values())
    obj_mrecall = _class_mean(
        ((gt.instance_classes[inst], hit) for inst, hit in node_hits.items())
    )

    annotated = {(s, o): p for (s, p, o) in gt.triplets}
    if include_none:
        universe = [
            (a, b) for a in instances for b in instances if a != b
        ]
    else:
        universe = sorted(annotated)

    pred_hits: list[tuple[int, bool]] = []
    rel_hits: list[bool] = []
    for (a, b) in universe:
        gt_predicate = annotated.get((a, b), NONE_PREDICATE)
        la, lb = reps.get(a), reps.get(b)
        if la is None or lb is None or (la, lb) not in pred.edge_probs:
            predicted = NONE_PREDICATE
        else:
            predicted = int(np.argmax(pred.edge_probs[(la, lb)]))
        edge_hit = predicted == gt_predicate
        pred_hits.append((gt_predicate, edge_hit))
        rel_hits.append(edge_hit and node_hits[a] and node_hits[b])

    return {
        "recall_rel": _fraction(rel_hits),
        "recall_obj": obj_recall,
        "recall_pred": _fraction(hit for _cls, hit in pred_hits),
        "mrecall_obj": obj_mrecall,
        "mrecall_pred": _class_mean(pred_hits),
    }


def _fraction(hits) -> float:
    hits = list(hits)
    if not hits:
        return 1.0
    return sum(hits) / len(hits)


def _class_mean(class_hit_pairs) -> float:
    per_class: dict[int, list[bool]] = {}
    for cls, hit in class_hit_pairs:
        per_class.setdefault(cls, []).append(hit)
    if not per_class:
        return 1.0
    return float(
        np.mean([sum(hits) / len(hits) for _cls, hits in sorted(per_class.items())])
    )
