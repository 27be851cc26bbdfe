"""Independent straight-line reference implementations used by tests.

Everything here recomputes results with plain per-pixel/per-point loops,
deliberately avoiding the vectorized production paths.
"""

import numpy as np

from sgmap.entity_map import AssociationStrategy


def overlap_stats_loops(img, ref_labels, ref_conf):
    """Per-pair overlap counts and confidence sums via a row-major double
    loop (sequential accumulation)."""
    counts = {}
    sums = {}
    img_totals = {}
    ref_totals = {}
    h, w = img.shape
    for r in range(h):
        for c in range(w):
            il = int(img[r, c])
            rl = int(ref_labels[r, c])
            if il != 0:
                img_totals[il] = img_totals.get(il, 0) + 1
            if rl != 0:
                ref_totals[rl] = ref_totals.get(rl, 0) + 1
            if il != 0 and rl != 0:
                key = (il, rl)
                counts[key] = counts.get(key, 0) + 1
                sums[key] = sums.get(key, 0.0) + float(ref_conf[r, c])
    return counts, sums, img_totals, ref_totals


def mean_confidence_loops(img_label, ref_label, img, ref_labels, ref_conf):
    counts, sums, _, _ = overlap_stats_loops(img, ref_labels, ref_conf)
    key = (img_label, ref_label)
    if key not in counts:
        return 0.0
    return sums[key] / counts[key]


def associate_loops(img, ref_labels, ref_conf, theta, strategy, next_label):
    """Greedy, one-to-one assignment recomputed step by step.

    Candidates must clear the coverage (or IoU) threshold strictly; input
    labels claim their best remaining candidate in descending order of
    best score, ties toward ascending label ids; exhausted labels mint
    fresh ids from ``next_label``.
    """
    counts, sums, img_totals, ref_totals = overlap_stats_loops(img, ref_labels, ref_conf)
    candidates = {}
    for il in sorted(img_totals):
        scored = []
        for rl in sorted(ref_totals):
            cnt = counts.get((il, rl), 0)
            if cnt == 0:
                continue
            if strategy is AssociationStrategy.IOU:
                score = cnt / (img_totals[il] + ref_totals[rl] - cnt)
                if score <= theta:
                    continue
            else:
                if cnt / ref_totals[rl] <= theta:
                    continue
                if strategy is AssociationStrategy.MEAN_CONFIDENCE:
                    score = sums[(il, rl)] / cnt
                else:
                    score = float(cnt)
            scored.append((score, rl))
        scored.sort(key=lambda t: (-t[0], t[1]))
        candidates[il] = scored

    order = sorted(
        candidates,
        key=lambda il: (
            -(candidates[il][0][0] if candidates[il] else -np.inf),
            il,
        ),
    )
    mapping = {}
    taken = set()
    fresh = next_label
    for il in order:
        chosen = None
        for _score, rl in candidates[il]:
            if rl not in taken:
                chosen = rl
                break
        if chosen is None:
            chosen = fresh
            fresh += 1
        taken.add(chosen)
        mapping[il] = chosen
    return mapping


def aos_loops(est_points, est_labels, gt_points, gt_instances):
    """Dominant-segment overlap score with explicit nearest-neighbour and
    counting loops."""
    groups = {}
    for p, lbl in zip(est_points, est_labels):
        best = None
        best_d = None
        for q, inst in zip(gt_points, gt_instances):
            d = float(np.sum((np.asarray(p) - np.asarray(q)) ** 2))
            if best_d is None or d < best_d:
                best_d = d
                best = int(inst)
        groups.setdefault(best, []).append(int(lbl))
    dominant = 0
    total = 0
    for members in groups.values():
        votes = {}
        for lbl in members:
            votes[lbl] = votes.get(lbl, 0) + 1
        dominant += max(votes.values())
        total += len(members)
    return dominant / total


def recall_suite_loops(node_top1, edge_top1, reps, gt_classes, gt_triplets, include_none=True):
    """Recall metrics recounted with explicit loops.

    node_top1: est label -> predicted class; edge_top1: (est, est) ->
    predicted predicate; reps: gt instance -> representative est label.
    """
    instances = sorted(gt_classes)
    node_hit = {}
    for inst in instances:
        lbl = reps.get(inst)
        node_hit[inst] = lbl is not None and node_top1.get(lbl) == gt_classes[inst]

    annotated = {(s, o): p for (s, p, o) in gt_triplets}
    if include_none:
        pairs = [(a, b) for a in instances for b in instances if a != b]
    else:
        pairs = sorted(annotated)

    pred_hits = []
    rel_hits = []
    for (a, b) in pairs:
        gt_p = annotated.get((a, b), 0)
        la, lb = reps.get(a), reps.get(b)
        predicted = edge_top1.get((la, lb), 0) if la is not None and lb is not None else 0
        hit = predicted == gt_p
        pred_hits.append((gt_p, hit))
        rel_hits.append(hit and node_hit[a] and node_hit[b])

    def frac(values):
        values = list(values)
        return sum(values) / len(values) if values else 1.0

    def class_mean(pairs_list):
        per = {}
        for cls, hit in pairs_list:
            per.setdefault(cls, []).append(hit)
        return (
            sum(frac(hits) for _, hits in sorted(per.items())) / len(per)
            if per
            else 1.0
        )

    return {
        "recall_rel": frac(rel_hits),
        "recall_obj": frac(node_hit.values()),
        "recall_pred": frac(h for _, h in pred_hits),
        "mrecall_obj": class_mean(
            (gt_classes[inst], node_hit[inst]) for inst in instances
        ),
        "mrecall_pred": class_mean(pred_hits),
    }


def random_mask_pair(rng, shape=(16, 16), img_labels=3, ref_labels=3):
    """Random label rasters plus a confidence raster for oracle tests."""
    img = rng.integers(0, img_labels + 1, size=shape)
    ref = rng.integers(0, ref_labels + 1, size=shape)
    conf = rng.uniform(0.05, 1.0, size=shape) * (ref != 0)
    return img, ref, conf
