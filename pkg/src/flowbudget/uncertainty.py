"""Frame-level uncertainty scores and label-selection strategies.

Scores are stored raw.  For ranking, metrics where *low* values signal
trouble (texture quality, image gradient strength) are negated, so "larger
= more uncertain" holds for every metric at selection time.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Budget, Dataset, FlowField, LossConfig, Sample
from .flowops import build_flow_pyramid, fb_occlusion, flow_gradient_magnitude
from .losses import occlusion_pyramid, photometric_loss
from .raster import build_image_pyramid, histogram_cdf_distance, image_gradient, structure_tensor_min_eig

METRICS = (
    "photo_loss",
    "occ_ratio",
    "flow_grad_norm",
    "flow_norm",
    "img_grad_norm",
    "texture_score",
    "color_change",
)

# Higher raw value means *better* input for these; ranking flips their sign.
NEGATED_FOR_RANKING = frozenset({"img_grad_norm", "texture_score"})

STRATEGIES = ("random", "topk", "occ2x", "grouped_topk")


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    metric: str
    value: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"score for {self.sample_id!r} must be finite")


@dataclass(frozen=True)
class Selection:
    chosen: tuple[str, ...]
    ratio: Budget
    strategy: str
    seed: int

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if len(set(self.chosen)) != len(self.chosen):
            raise ValueError("selection must not contain duplicates")
        object.__setattr__(self, "chosen", tuple(self.chosen))


def score(
    sample: Sample,
    est_fwd: FlowField,
    est_bwd: FlowField,
    metric: str,
    cfg: LossConfig | None = None,
) -> ScoreRecord:
    """Compute one uncertainty metric for a sample given its flow estimates."""
    cfg = cfg or LossConfig()
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    dims = (sample.frame1.height, sample.frame1.width)
    if (est_fwd.height, est_fwd.width) != dims or (est_bwd.height, est_bwd.width) != dims:
        raise ValueError("estimates must match the sample dimensions")
    if metric == "photo_loss":
        pyr1 = build_image_pyramid(sample.frame1)
        pyr2 = build_image_pyramid(sample.frame2)
        fwd_pyr = build_flow_pyramid(est_fwd)
        bwd_pyr = build_flow_pyramid(est_bwd)
        occ = occlusion_pyramid(fwd_pyr, bwd_pyr, cfg)
        value = photometric_loss(pyr1, pyr2, fwd_pyr, occ, cfg)
    elif metric == "occ_ratio":
        value = fb_occlusion(est_fwd, est_bwd, cfg).ratio()
    elif metric == "flow_grad_norm":
        value = flow_gradient_magnitude(est_fwd)
    elif metric == "flow_norm":
        value = float(np.sqrt((est_fwd.uv**2).sum(axis=2)).mean())
    elif metric == "img_grad_norm":
        gx, gy = image_gradient(sample.frame1)
        value = float(np.sqrt(gx**2 + gy**2).mean(axis=2).mean())
    elif metric == "texture_score":
        value = structure_tensor_min_eig(sample.frame1)
    else:  # color_change
        value = histogram_cdf_distance(sample.frame1, sample.frame2)
    return ScoreRecord(sample_id=sample.id, metric=metric, value=float(value))


def _population(dataset) -> list[tuple[str, str]]:
    """(id, group) pairs from a Dataset, a manifest, or raw pairs."""
    if isinstance(dataset, Dataset):
        return [(s.id, s.group) for s in dataset]
    pairs = []
    for item in dataset:
        if isinstance(item, tuple):
            pairs.append((item[0], item[1]))
        else:
            pairs.append((item.id, item.group))
    return pairs


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0x73656C65]))


def select(
    records: Sequence[ScoreRecord],
    dataset,
    budget: Budget,
    strategy: str,
    seed: int = 0,
) -> Selection:
    """Pick round(ratio * n) sample ids according to the strategy.

    topk: largest ranking scores, ties broken by ascending id.  occ2x: pick
    uniformly among the top min(2k, n).  grouped_topk: rank whole groups by
    their best member and add them until the next would overflow the budget.
    random and occ2x are reproducible from the seed.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    population = _population(dataset)
    ids = [p[0] for p in population]
    by_id = {r.sample_id: r for r in records}
    if len(by_id) != len(records):
        raise ValueError("duplicate score records")
    if set(by_id) != set(ids):
        raise ValueError("score records must cover exactly the dataset ids")
    metrics = {r.metric for r in records}
    if len(metrics) != 1:
        raise ValueError("selection needs records for exactly one metric")
    metric = next(iter(metrics))
    flip = -1.0 if metric in NEGATED_FOR_RANKING else 1.0

    n = len(ids)
    k = int(math.floor(budget.ratio * n + 0.5))

    def ranking(sample_id: str) -> float:
        return flip * by_id[sample_id].value

    if strategy == "random":
        order = sorted(ids)
        perm = _rng(seed).permutation(n)
        chosen = sorted(order[i] for i in perm[:k])
    elif strategy == "topk":
        chosen = sorted(ids, key=lambda i: (-ranking(i), i))[:k]
    elif strategy == "occ2x":
        pool = sorted(ids, key=lambda i: (-ranking(i), i))[: min(2 * k, n)]
        perm = _rng(seed).permutation(len(pool))
        chosen = sorted(pool[i] for i in perm[:k])
    else:  # grouped_topk
        groups: dict[str, list[str]] = {}
        for sid, grp in population:
            groups.setdefault(grp, []).append(sid)
        ranked = sorted(
            groups.items(), key=lambda kv: (-max(ranking(i) for i in kv[1]), kv[0])
        )
        chosen = []
        for _, members in ranked:
            if len(chosen) + len(members) > k:
                break
            chosen.extend(sorted(members))
    return Selection(chosen=tuple(chosen), ratio=budget, strategy=strategy, seed=int(seed))


# --------------------------------------------------------------------------
# On-disk formats


def write_scores(records: Iterable[ScoreRecord]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", "metric", "value"])
    for r in records:
        writer.writerow([r.sample_id, r.metric, repr(float(r.value))])
    return buf.getvalue().encode("utf-8")


def read_scores(data: bytes) -> list[ScoreRecord]:
    rows = list(csv.reader(io.StringIO(data.decode("utf-8"))))
    if not rows or rows[0] != ["sample_id", "metric", "value"]:
        raise ValueError("scores csv: bad header")
    return [ScoreRecord(sample_id=r[0], metric=r[1], value=float(r[2])) for r in rows[1:] if r]


def write_selection(selection: Selection) -> bytes:
    doc = {
        "strategy": selection.strategy,
        "ratio": selection.ratio.ratio,
        "seed": selection.seed,
        "chosen": list(selection.chosen),
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def read_selection(data: bytes) -> Selection:
    doc = json.loads(data.decode("utf-8"))
    unknown = set(doc) - {"strategy", "ratio", "seed", "chosen"}
    if unknown:
        raise ValueError(f"selection json: unknown keys {sorted(unknown)}")
    return Selection(
        chosen=tuple(doc["chosen"]),
        ratio=Budget(float(doc["ratio"])),
        strategy=doc["strategy"],
        seed=int(doc["seed"]),
    )
