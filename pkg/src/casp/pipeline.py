"""End-to-end experiment orchestration with on-disk artifacts.

Layout of ``output_dir``::

    seed_<s>/pretrain/{checkpoint.json,checkpoint.f32,history.json,metrics.json}
    seed_<s>/adapt/{snapshots.json,snapshots.f32,checkpoint.*,history.json}
    seed_<s>/stability_report.json
    seed_<s>/casp/{checkpoint.*,stage2_history.json,metrics.json}
    seed_<s>/<ST|Norm>/{checkpoint.*,stage2_history.json,metrics.json}
    seed_<s>/metrics.json
    aggregate.json, aggregate.csv
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adaptation import adapt, load_snapshots, save_snapshots
from .backbones import FusionModel, init_model, load_checkpoint, save_checkpoint
from .config import RunConfig, write_json, dumps
from .data import DomainDataset
from .ingest import load_dataset, save_dataset
from .metrics import evaluate, mae
from .pseudo_labels import StabilityReport, build_selftrain_set, make_report, save_report
from .self_training import run_baseline, self_train
from .synth import generate_task
from .training import predict_samples, pretrain

logger = logging.getLogger(__name__)

METHODS = ("Source", "ST", "Norm", "CASP")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, paths: list[Path] = ()):
        self.stage = stage
        self.paths = [str(p) for p in paths]
        where = f" (artifacts: {', '.join(self.paths)})" if self.paths else ""
        super().__init__(f"[{stage}] {message}{where}")


def synthesize(cfg: RunConfig) -> tuple[Path, Path]:
    source, target = generate_task(cfg.synth)
    return save_dataset(source, cfg.path("source_dir")), save_dataset(target, cfg.path("target_dir"))


def seed_dir(cfg: RunConfig, seed: int) -> Path:
    return cfg.path("output_dir") / f"seed_{seed}"


def _rescaled(pred: np.ndarray, cfg: RunConfig, source: DomainDataset, target: DomainDataset) -> np.ndarray:
    if not cfg.label_rescale:
        return pred
    (a0, a1), (b0, b1) = source.label_range, target.label_range
    return b0 + (pred - a0) * (b1 - b0) / (a1 - a0)


def evaluate_model(model: FusionModel, dataset: DomainDataset, split: str) -> dict:
    """Metrics of ``model`` on a labeled split (hidden labels are revealed here only)."""
    return evaluate(predict_samples(model, dataset.split(split)), dataset.ground_truth(split))


def _eval(model, cfg, source, target) -> dict:
    pred = _rescaled(predict_samples(model, target.split(cfg.eval_split)), cfg, source, target)
    return evaluate(pred, target.ground_truth(cfg.eval_split))


def stage_pretrain(cfg: RunConfig, seed: int, source: DomainDataset) -> FusionModel:
    out = seed_dir(cfg, seed) / "pretrain"
    if cfg.reuse_pretrain and (out / "checkpoint.json").exists():
        logger.info("seed %d: reusing pretrained checkpoint %s", seed, out)
        return load_checkpoint(out)
    try:
        model = init_model(cfg.backbone, source.feat_dims, seed)
        model, history = pretrain(model, source, replace(cfg.pretrain, seed=seed))
    except Exception as e:
        raise StageError("pretrain", str(e), [out]) from e
    save_checkpoint(model, out)
    write_json(out / "history.json", {str(h["epoch"]): h for h in history})
    return model


def stage_adapt(cfg: RunConfig, seed: int, target: DomainDataset, model: FusionModel | None = None):
    base = seed_dir(cfg, seed)
    if model is None:
        if not (base / "pretrain" / "checkpoint.json").exists():
            raise StageError("adapt", "no pretrained checkpoint; run the pretrain stage first", [base / "pretrain"])
        model = load_checkpoint(base / "pretrain")
    out = base / "adapt"
    try:
        adapted, snap, history = adapt(model, target, replace(cfg.adapt, seed=seed))
    except Exception as e:
        raise StageError("adapt", str(e), [out]) from e
    save_snapshots(snap, out)
    save_checkpoint(adapted, out)
    write_json(out / "history.json", {str(h["epoch"]): h for h in history})
    return adapted, snap


def stage_pseudolabel(cfg: RunConfig, seed: int, snap=None) -> StabilityReport:
    base = seed_dir(cfg, seed)
    try:
        snap = snap if snap is not None else load_snapshots(base / "adapt")
        report = make_report(snap, cfg.lam)
    except Exception as e:
        raise StageError("pseudolabel", str(e), [base / "adapt"]) from e
    path = save_report(report, base / "stability_report.json", dumps=dumps)
    # hand back what was persisted so a resumed selftrain stage sees identical labels
    return StabilityReport.from_dict(json.loads(path.read_text(encoding="utf-8")))


def stage_selftrain(
    cfg: RunConfig, seed: int, target: DomainDataset, adapted: FusionModel | None = None,
    report: StabilityReport | None = None,
) -> FusionModel:
    base = seed_dir(cfg, seed)
    try:
        if adapted is None:
            adapted = load_checkpoint(base / "adapt")
        if report is None:
            report = StabilityReport.from_dict(json.loads((base / "stability_report.json").read_text()))
        train_set = build_selftrain_set(target, report)
        model, history = self_train(adapted, train_set, replace(cfg.selftrain, seed=seed))
    except Exception as e:
        raise StageError("selftrain", str(e), [base / "adapt", base / "stability_report.json"]) from e
    save_checkpoint(model, base / "casp")
    write_json(base / "casp" / "stage2_history.json", {str(h["epoch"]): h for h in history})
    return model


def stage_baseline(cfg: RunConfig, seed: int, kind: str, source_model: FusionModel, target: DomainDataset):
    out = seed_dir(cfg, seed) / kind
    try:
        model, history = run_baseline(kind, source_model, target, replace(cfg.selftrain, seed=seed))
    except Exception as e:
        raise StageError(f"baseline:{kind}", str(e), [out]) from e
    save_checkpoint(model, out)
    write_json(out / "stage2_history.json", {str(h["epoch"]): h for h in history})
    return model


def pseudo_label_quality(report: StabilityReport, snap, target: DomainDataset, split: str = "train") -> dict:
    """Hidden-label MAE of the averaged pseudo labels vs. the source predictions.

    ``mae_source`` uses the same selected samples; ``mae_source_all`` is the
    source model over every sample, i.e. the labels the ST baseline trains on.
    """
    gt = target.ground_truth(split)
    sel = report.selected
    y0 = np.asarray(snap.preds[0], dtype=np.float64)
    return {
        "n_selected": int(sel.sum()),
        "mae_pseudo": mae(report.pseudo[sel], gt[sel]),
        "mae_source": mae(y0[sel], gt[sel]),
        "mae_source_all": mae(y0, gt),
    }


def run_seed(cfg: RunConfig, seed: int, source: DomainDataset, target: DomainDataset) -> dict:
    base = seed_dir(cfg, seed)
    src_model = stage_pretrain(cfg, seed, source)
    results = {"Source": _eval(src_model, cfg, source, target)}
    write_json(base / "pretrain" / "metrics.json", results["Source"])
    for kind in cfg.baselines:
        model = stage_baseline(cfg, seed, kind, src_model, target)
        results[kind] = _eval(model, cfg, source, target)
        write_json(base / kind / "metrics.json", results[kind])
    adapted, snap = stage_adapt(cfg, seed, target, src_model)
    report = stage_pseudolabel(cfg, seed, snap)
    final = stage_selftrain(cfg, seed, target, adapted, report)
    results["CASP"] = _eval(final, cfg, source, target)
    write_json(base / "casp" / "metrics.json", results["CASP"])
    out = {"metrics": results, "pseudo_labels": pseudo_label_quality(report, snap, target)}
    write_json(base / "metrics.json", out)
    return out


def aggregate(per_seed: dict[int, dict]) -> dict:
    methods = [m for m in METHODS if all(m in r["metrics"] for r in per_seed.values())]
    table, medians = {}, {}
    for m in methods:
        rows = [per_seed[s]["metrics"][m] for s in per_seed]
        table[m] = {k: float(np.mean([r[k] for r in rows])) for k in ("acc", "f1", "mae")}
        medians[m] = {k: float(np.median([r[k] for r in rows])) for k in ("acc", "f1", "mae")}
    quality = [per_seed[s]["pseudo_labels"] for s in per_seed]
    pl = {k: float(np.median([q[k] for q in quality])) for k in quality[0]}
    # mean over seeds is the reported table; medians back the acceptance checks
    return {"seeds": sorted(per_seed), "methods": table, "median": medians, "pseudo_labels_median": pl}


def format_table(agg: dict) -> str:
    lines = ["method,acc,f1,mae"]
    for m, r in agg["methods"].items():
        lines.append(f"{m},{r['acc']:.6g},{r['f1']:.6g},{r['mae']:.6g}")
    return "\n".join(lines) + "\n"


def run(cfg: RunConfig) -> dict:
    """Pretrain, adapt, select, self-train and evaluate every method for every seed."""
    cfg.validate()
    try:
        source = load_dataset(cfg.path("source_dir"))
        target = load_dataset(cfg.path("target_dir"))
    except Exception as e:
        raise StageError("load", str(e), [cfg.path("source_dir"), cfg.path("target_dir")]) from e
    out = cfg.path("output_dir")
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    per_seed = {s: run_seed(cfg, s, source, target) for s in cfg.seeds}
    agg = aggregate(per_seed)
    write_json(out / "aggregate.json", agg)
    (out / "aggregate.csv").write_text(format_table(agg), encoding="utf-8")
    return agg
