"""Command-line harness.

Subcommands cover the full loop: generate synthetic data, optimize flows,
score uncertainty, select samples to label, re-optimize with labels,
evaluate, and emit curves.  `experiment` runs the whole staged pipeline
(unsupervised pass on the candidate set, scoring, per-(strategy, ratio,
seed) selection and semi-supervised re-optimization) and writes one curve
CSV per selection arm.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 validation or check
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis, fileio, synth, uncertainty
from .core import Budget, Dataset, FlowField, LossConfig, Sample
from .estimator import OptimizerConfig, gradient_check, optimize_flow
from .fileio import FlowIOError, load_dataset, load_manifest, read_flo, write_flo

USAGE_ERROR = 1
IO_ERROR = 2
CHECK_ERROR = 3

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


# --------------------------------------------------------------------------
# Experiment configuration


@dataclass(frozen=True)
class SynthSettings:
    count: int = 24
    width: int = 48
    height: int = 48
    master_seed: int = 0
    difficulty_lo: float = 0.0
    difficulty_hi: float = 1.0
    group_size: int = 1
    texture_scale: float = 1.0
    use_affine: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthSettings
    non_candidate_fraction: float
    budgets: tuple[float, ...]
    strategies: tuple[str, ...]
    metrics: tuple[str, ...]
    seeds: tuple[int, ...]
    loss: LossConfig
    optimizer: OptimizerConfig


def _from_dict(cls, d: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**d)


def parse_experiment_config(data: bytes) -> ExperimentConfig:
    doc = json.loads(data.decode("utf-8"))
    known = {"synth", "split", "budgets", "strategies", "metrics", "seeds", "loss", "optimizer"}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"config: unknown keys {sorted(unknown)}")
    synth_cfg = _from_dict(SynthSettings, doc.get("synth", {}), "config.synth")
    split = doc.get("split", {"non_candidate": 0.0, "candidate": 1.0})
    if set(split) != {"non_candidate", "candidate"}:
        raise ValueError("config.split: need exactly the keys non_candidate and candidate")
    if abs(split["non_candidate"] + split["candidate"] - 1.0) > 1e-9:
        raise ValueError("config.split: fractions must sum to 1")
    budgets = tuple(float(b) for b in doc.get("budgets", [0.0, 1.0]))
    if not budgets:
        raise ValueError("config.budgets: need at least one ratio")
    for b in budgets:
        Budget(b)
    strategies = tuple(doc.get("strategies", ["random"]))
    if not strategies:
        raise ValueError("config.strategies: need at least one strategy")
    for s in strategies:
        if s not in uncertainty.STRATEGIES:
            raise ValueError(f"config.strategies: unknown strategy {s!r}")
    metrics = tuple(doc.get("metrics", ["occ_ratio"]))
    if not metrics:
        raise ValueError("config.metrics: need at least one metric")
    for m in metrics:
        if m not in uncertainty.METRICS:
            raise ValueError(f"config.metrics: unknown metric {m!r}")
    seeds = tuple(int(s) for s in doc.get("seeds", [0]))
    if not seeds:
        raise ValueError("config.seeds: need at least one seed")
    loss = LossConfig.from_dict(doc.get("loss", {}))
    opt = _from_dict(OptimizerConfig, doc.get("optimizer", {}), "config.optimizer")
    return ExperimentConfig(
        synth=synth_cfg,
        non_candidate_fraction=float(split["non_candidate"]),
        budgets=budgets,
        strategies=strategies,
        metrics=metrics,
        seeds=seeds,
        loss=loss,
        optimizer=opt,
    )


def _gen_synth(cfg: ExperimentConfig) -> synth.SynthDataset:
    s = cfg.synth
    specs = synth.specs_for_dataset(
        count=s.count,
        width=s.width,
        height=s.height,
        master_seed=s.master_seed,
        difficulty_lo=s.difficulty_lo,
        difficulty_hi=s.difficulty_hi,
        group_size=s.group_size,
        texture_scale=s.texture_scale,
        use_affine=s.use_affine,
    )
    return synth.gen_dataset(specs)


# --------------------------------------------------------------------------
# Shared helpers


def _parallel_map(fn, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _optimize_sample(sample: Sample, labeled: bool, cfg: OptimizerConfig):
    fwd, bwd = optimize_flow(sample, labeled, cfg)
    return sample.id, fwd, bwd


def _write_flow_pair(out_dir: Path, sample_id: str, fwd: FlowField, bwd: FlowField):
    (out_dir / f"{sample_id}.flo").write_bytes(write_flo(fwd))
    (out_dir / f"{sample_id}.bwd.flo").write_bytes(write_flo(bwd))


def _read_flow_pair(flows_dir: Path, sample_id: str) -> tuple[FlowField, FlowField]:
    fwd = read_flo((flows_dir / f"{sample_id}.flo").read_bytes())
    bwd = read_flo((flows_dir / f"{sample_id}.bwd.flo").read_bytes())
    return fwd, bwd


def _arm_name(strategy: str, metric: Optional[str]) -> str:
    return strategy if metric is None else f"{strategy}_{metric}"


def _selection_arms(cfg: ExperimentConfig) -> list[tuple[str, Optional[str]]]:
    arms: list[tuple[str, Optional[str]]] = []
    for strategy in cfg.strategies:
        if strategy == "random":
            arms.append((strategy, None))
        else:
            for metric in cfg.metrics:
                arms.append((strategy, metric))
    return arms


# --------------------------------------------------------------------------
# Commands


def cmd_gen(args) -> int:
    cfg = parse_experiment_config(Path(args.config).read_bytes())
    result = _gen_synth(cfg)
    synth.write_dataset(result, Path(args.out))
    print(f"wrote {len(result.dataset)} samples to {args.out}")
    return 0


def cmd_optimize(args) -> int:
    manifest = load_manifest(Path(args.manifest))
    dataset = load_dataset(manifest, Path(args.manifest).parent)
    labeled_ids: set[str] = set()
    if args.selection:
        selection = uncertainty.read_selection(Path(args.selection).read_bytes())
        labeled_ids = set(selection.chosen)
        missing = labeled_ids - set(dataset.ids())
        if missing:
            raise ValueError(f"selection references unknown samples {sorted(missing)}")
    opt = OptimizerConfig()
    if args.config:
        cfg = parse_experiment_config(Path(args.config).read_bytes())
        opt = cfg.optimizer
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = _parallel_map(
        lambda s: _optimize_sample(s, s.id in labeled_ids, opt), list(dataset), args.threads
    )
    for sample_id, fwd, bwd in results:
        _write_flow_pair(out_dir, sample_id, fwd, bwd)
    print(f"optimized {len(results)} samples ({len(labeled_ids)} labeled) -> {args.out}")
    return 0


def cmd_score(args) -> int:
    manifest = load_manifest(Path(args.manifest))
    dataset = load_dataset(manifest, Path(args.manifest).parent)
    flows_dir = Path(args.flows)
    loss_cfg = LossConfig()

    def one(sample: Sample):
        fwd, bwd = _read_flow_pair(flows_dir, sample.id)
        return uncertainty.score(sample, fwd, bwd, args.metric, loss_cfg)

    records = _parallel_map(one, list(dataset), args.threads)
    Path(args.out).write_bytes(uncertainty.write_scores(records))
    print(f"scored {len(records)} samples with {args.metric} -> {args.out}")
    return 0


def cmd_select(args) -> int:
    records = uncertainty.read_scores(Path(args.scores).read_bytes())
    manifest = load_manifest(Path(args.manifest))
    population = [(e.id, e.group) for e in manifest]
    selection = uncertainty.select(
        records, population, Budget(args.ratio), args.strategy, args.seed
    )
    Path(args.out).write_bytes(uncertainty.write_selection(selection))
    print(f"selected {len(selection.chosen)}/{len(population)} samples -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = load_manifest(Path(args.manifest))
    base = Path(args.manifest).parent
    est_dir = Path(args.est)
    rows = []
    for entry in manifest:
        if entry.gt is None:
            raise ValueError(f"sample {entry.id!r} has no ground truth to evaluate against")
        gt = fileio.read_flow_file(base / entry.gt)
        est = read_flo((est_dir / f"{entry.id}.flo").read_bytes())
        rows.append((entry.id, analysis.epe(est, gt), analysis.fl_rate(est, gt)))
    Path(args.out).write_bytes(analysis.write_metrics_csv(rows))
    print(f"evaluated {len(rows)} samples -> {args.out}")
    return 0


def cmd_corr(args) -> int:
    scores: dict[str, dict[str, float]] = {}
    for path in args.scores:
        for r in uncertainty.read_scores(Path(path).read_bytes()):
            scores.setdefault(r.metric, {})[r.sample_id] = r.value
    rows = analysis.read_metrics_csv(Path(args.metrics).read_bytes())
    errors = {sample_id: e for sample_id, e, _ in rows}
    names, mat = analysis.corr_matrix(scores, errors)
    Path(args.out).write_bytes(analysis.write_corr_csv(names, mat))
    print(f"correlations over {len(errors)} samples -> {args.out}")
    return 0


def cmd_curves(args) -> int:
    data = analysis.fixture_csv(args.fixture)
    Path(args.out).write_bytes(data)
    print(f"wrote fixture {args.fixture} -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    failed = False
    for seed in range(args.seed, args.seed + 10):
        report = gradient_check(seed)
        worst = max(worst, report.worst)
        status = "ok" if report.worst < GRADCHECK_TOLERANCE else "FAIL"
        print(
            f"seed {seed}: photo {report.rel_err_photo:.3e} smooth {report.rel_err_smooth:.3e} "
            f"sup {report.rel_err_sup:.3e} joint {report.rel_err_joint:.3e} [{status}]"
        )
        failed = failed or report.worst >= GRADCHECK_TOLERANCE
    print(f"worst relative error: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    if failed:
        return CHECK_ERROR
    return 0


def cmd_experiment(args) -> int:
    cfg = parse_experiment_config(Path(args.config).read_bytes())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = _gen_synth(cfg)
    synth.write_dataset(result, out / "data")

    n_non = int(np.floor(cfg.non_candidate_fraction * len(result.dataset) + 0.5))
    candidates = list(result.dataset)[n_non:]
    candidate_ds = Dataset(tuple(candidates))

    # Stage 1 trains on the non-candidate split; with per-sample direct
    # optimization there is no shared model to carry over, so the split only
    # determines which samples take part in scoring and selection.
    flows_dir = out / "flows_unsup"
    flows_dir.mkdir(exist_ok=True)
    unsup = dict(
        (sid, (fwd, bwd))
        for sid, fwd, bwd in _parallel_map(
            lambda s: _optimize_sample(s, False, cfg.optimizer), candidates, args.threads
        )
    )
    for sid, (fwd, bwd) in unsup.items():
        _write_flow_pair(flows_dir, sid, fwd, bwd)

    gt = {s.id: s.label for s in candidates}
    eval_rows = [
        (s.id, analysis.epe(unsup[s.id][0], gt[s.id]), analysis.fl_rate(unsup[s.id][0], gt[s.id]))
        for s in candidates
    ]
    (out / "eval_unsup.csv").write_bytes(analysis.write_metrics_csv(eval_rows))
    unsup_epe = {sid: e for sid, e, _ in eval_rows}
    unsup_fl = {sid: f for sid, _, f in eval_rows}

    score_records: dict[str, list[uncertainty.ScoreRecord]] = {}
    for metric in cfg.metrics:
        records = _parallel_map(
            lambda s, m=metric: uncertainty.score(s, unsup[s.id][0], unsup[s.id][1], m, cfg.loss),
            candidates,
            args.threads,
        )
        score_records[metric] = records
        (out / f"scores_{metric}.csv").write_bytes(uncertainty.write_scores(records))

    # Resolve every selection first so each labeled sample optimizes once.
    arms = _selection_arms(cfg)
    selections: dict[tuple[str, Optional[str], float, int], uncertainty.Selection] = {}
    (out / "selections").mkdir(exist_ok=True)
    for strategy, metric in arms:
        records = score_records[metric] if metric else score_records[cfg.metrics[0]]
        for ratio in cfg.budgets:
            for seed in cfg.seeds:
                sel = uncertainty.select(records, candidate_ds, Budget(ratio), strategy, seed)
                selections[(strategy, metric, ratio, seed)] = sel
                name = f"{_arm_name(strategy, metric)}_r{ratio}_s{seed}.json"
                (out / "selections" / name).write_bytes(uncertainty.write_selection(sel))

    label_union = sorted({sid for sel in selections.values() for sid in sel.chosen})
    by_id = {s.id: s for s in candidates}
    labeled_results = dict(
        (sid, (fwd, bwd))
        for sid, fwd, bwd in _parallel_map(
            lambda sid: _optimize_sample(by_id[sid], True, cfg.optimizer), label_union, args.threads
        )
    )
    labeled_epe = {
        sid: analysis.epe(labeled_results[sid][0], gt[sid]) for sid in label_union
    }
    labeled_fl = {
        sid: analysis.fl_rate(labeled_results[sid][0], gt[sid]) for sid in label_union
    }

    results_rows = []
    for strategy, metric in arms:
        curve_points = []
        for ratio in cfg.budgets:
            per_seed = []
            for seed in cfg.seeds:
                sel = selections[(strategy, metric, ratio, seed)]
                chosen = set(sel.chosen)
                epes = [labeled_epe[s.id] if s.id in chosen else unsup_epe[s.id] for s in candidates]
                fls = [labeled_fl[s.id] if s.id in chosen else unsup_fl[s.id] for s in candidates]
                mean_epe = float(np.mean(epes)) if epes else 0.0
                mean_fl = float(np.mean(fls)) if fls else 0.0
                per_seed.append(mean_epe)
                results_rows.append(
                    (_arm_name(strategy, metric), ratio, seed, mean_epe, mean_fl)
                )
            curve_points.append(
                analysis.CurvePoint(ratio, "epe_mean", float(np.mean(per_seed)))
            )
        (out / f"curve_{_arm_name(strategy, metric)}.csv").write_bytes(
            analysis.write_curve_csv(curve_points)
        )

    lines = ["arm,ratio,seed,mean_epe,mean_fl"]
    for arm, ratio, seed, mean_epe, mean_fl in results_rows:
        lines.append(f"{arm},{ratio!r},{seed},{mean_epe!r},{mean_fl!r}")
    (out / "results.csv").write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    print(f"experiment complete: {len(arms)} arms x {len(cfg.budgets)} ratios x {len(cfg.seeds)} seeds -> {args.out}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="flowbudget", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("optimize", help="estimate flow for every manifest sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--selection", default=None, help="selection JSON marking labeled samples")
    p.add_argument("--config", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("score", help="compute an uncertainty metric per sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--metric", required=True, choices=uncertainty.METRICS)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("select", help="pick samples to label from a score table")
    p.add_argument("--scores", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--strategy", required=True, choices=uncertainty.STRATEGIES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("evaluate", help="compare estimated flows against ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("corr", help="correlate scores with end-point errors")
    p.add_argument("--scores", action="append", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_corr)

    p = sub.add_parser("experiment", help="run the full staged pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("curves", help="emit an embedded reference curve")
    p.add_argument("--fixture", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_curves)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (FlowIOError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return IO_ERROR
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CHECK_ERROR


if __name__ == "__main__":
    sys.exit(main())
