"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

The lines are also repeated in the terminal summary (see conftest.py), so
``pytest -v`` shows all ten verdicts together at the end. Criteria 6, 7 and
9 share two full five-seed runs of the benchmark and take several minutes.
"""

import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from casp import pipeline
from casp.adaptation import AdaptConfig, SnapshotMatrix, adapt, load_snapshots
from casp.backbones import EncoderConfig, init_model, partition_parameters, predict
from casp.cli import main
from casp.config import benchmark_config, dumps
from casp.data import collate, hidden_label_guard
from casp.losses import ntxent_batch
from casp.pseudo_labels import average_pseudo_labels, make_report, select_threshold, stability
from casp.synth import generate_task
from casp.training import TrainConfig, pretrain

from conftest import TINY_DIMS, make_sample
from test_pseudo_labels import CASE_STUDY, brute_count

VERDICTS: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[n] = line
    print(line)
    assert ok, line


def t64(x):
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def test_c01_case_study_stability():
    s = stability(CASE_STUDY)
    expected = np.array([0.008, 0.46, 0.62, 0.004, 0.05, 0.22])
    err = float(np.max(np.abs(s - expected)))
    verdict(1, err <= 0.005, f"max |s - expected| = {err:.4f} (tol 0.005)")


def test_c02_case_study_pseudo_labels_and_selection():
    y = average_pseudo_labels(CASE_STUDY)
    snap = SnapshotMatrix([0, 3, 6, 9, 12, 15], [f"case {i}" for i in range(1, 7)], CASE_STUDY)
    picked = [int(i) + 1 for i in np.flatnonzero(make_report(snap, lam=None, threshold=0.012).selected)]
    ok = abs(y[0] + 2.40) <= 0.01 and abs(y[3] + 1.22) <= 0.01 and picked == [1, 4]
    verdict(2, ok, f"pseudo labels {y[0]:.4f}, {y[3]:.4f}; threshold 0.012 selects cases {picked}")


def test_c03_ntxent():
    rng = np.random.default_rng(0)
    tau = 0.5
    closed = float(ntxent_batch(t64(np.eye(2)), t64(np.eye(2)), tau))

    h0, ha = rng.standard_normal((8, 6)), t64(rng.standard_normal((8, 6)))
    h = t64(h0).requires_grad_()
    ntxent_batch(h, ha, tau).backward()
    eps = 1e-6
    fd = np.zeros_like(h0)
    for idx in np.ndindex(h0.shape):
        p, m = h0.copy(), h0.copy()
        p[idx] += eps
        m[idx] -= eps
        fd[idx] = (float(ntxent_batch(t64(p), ha, tau)) - float(ntxent_batch(t64(m), ha, tau))) / (2 * eps)
    rel = float(np.max(np.abs(h.grad.numpy() - fd) / np.maximum(np.abs(fd), 1e-8)))

    a, b = t64(rng.standard_normal((8, 6))), t64(rng.standard_normal((8, 6)))
    asym = abs(float(ntxent_batch(a, b, tau)) - float(ntxent_batch(b, a, tau)))

    ok = abs(closed + 1 / tau) < 1e-12 and rel <= 1e-3 and asym < 1e-12
    verdict(3, ok, f"K=2 loss {closed:.6f} (want {-1 / tau}); grad max rel err {rel:.1e}; swap diff {asym:.1e}")


def test_c04_freeze_contract():
    cfg = benchmark_config()
    source, target = generate_task(cfg.synth)
    model = pretrain(init_model(cfg.backbone, source.feat_dims, 0), source, TrainConfig(epochs=3))[0]
    before = {k: v.clone() for k, v in model.state_dict().items()}
    with hidden_label_guard(enabled=True, strict=True):
        adapted, snap, _ = adapt(model, target, AdaptConfig(epochs=15, interval=3))
    norm, _ = partition_parameters(adapted)
    changed = {k for k, v in adapted.state_dict().items() if not torch.equal(before[k], v)}
    ok = bool(changed) and changed <= set(norm) and snap.preds.shape[0] == 6
    verdict(4, ok, f"{len(changed)} tensors changed, all norm-affine: {changed <= set(norm)}; "
                   f"snapshot rows {snap.preds.shape[0]}")


def test_c05_quantile_semantics():
    rng = np.random.default_rng(5)
    lams = (50, 75, 90, 95)
    mismatches, non_monotone = 0, 0
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        s = np.round(rng.exponential(size=n), int(rng.integers(1, 4)))  # rounding forces ties
        counts = [int((s <= select_threshold(s, lam)).sum()) for lam in lams]
        mismatches += sum(c != brute_count(s, lam) for c, lam in zip(counts, lams))
        non_monotone += any(x < y for x, y in zip(counts, counts[1:]))
    ok = mismatches == 0 and non_monotone == 0
    verdict(5, ok, f"1000 arrays x 4 λ: {mismatches} oracle mismatches, {non_monotone} non-monotone arrays")


@pytest.fixture(scope="module")
def benchmark_runs(tmp_path_factory):
    """Two independent end-to-end runs of the benchmark through the CLI."""
    root = tmp_path_factory.mktemp("benchmark")
    cfg = benchmark_config(source_dir=str(root / "data" / "source"), target_dir=str(root / "data" / "target"))
    outs = []
    for name in ("a", "b"):
        path = root / f"{name}.json"
        path.write_text(dumps(replace(cfg, output_dir=str(root / name)).to_dict()))
        assert main(["synth", "--config", str(path)]) == 0
        assert main(["run", "--config", str(path)]) == 0
        outs.append(root / name)
    return outs


def test_c06_pseudo_label_quality(benchmark_runs):
    pl = json.loads((benchmark_runs[0] / "aggregate.json").read_text())["pseudo_labels_median"]
    ok = pl["mae_pseudo"] < pl["mae_source"]
    verdict(6, ok, f"median over 5 seeds on {pl['n_selected']:.0f} selected samples: pseudo {pl['mae_pseudo']:.4f} "
                   f"vs source {pl['mae_source']:.4f} (source over all samples {pl['mae_source_all']:.4f})")


def test_c07_end_to_end_ordering(benchmark_runs):
    med = json.loads((benchmark_runs[0] / "aggregate.json").read_text())["median"]
    casp, st, src = med["CASP"], med["ST"], med["Source"]
    ok = casp["mae"] <= st["mae"] and casp["mae"] <= src["mae"] and casp["acc"] >= src["acc"]
    verdict(7, ok, f"median MAE CASP {casp['mae']:.4f}, ST {st['mae']:.4f}, Source {src['mae']:.4f}; "
                   f"acc CASP {casp['acc']:.4f} vs Source {src['acc']:.4f}")


def test_c08_zero_learning_rate_is_a_no_op(tmp_path):
    cfg = benchmark_config(
        source_dir=str(tmp_path / "s"), target_dir=str(tmp_path / "t"), output_dir=str(tmp_path / "out"),
        seeds=[0, 1],
    )
    cfg.synth = replace(cfg.synth, n_source=60, n_target=50, n_valid=20, n_test=40)
    cfg.backbone = replace(cfg.backbone, model_dim=8, n_layers=1, n_heads=2, feedforward_dim=16)
    cfg.pretrain = replace(cfg.pretrain, learning_rate=0.0, epochs=2)
    cfg.adapt = replace(cfg.adapt, learning_rate=0.0)
    cfg.selftrain = replace(cfg.selftrain, learning_rate=0.0)
    pipeline.synthesize(cfg)
    pipeline.run(cfg)

    identical, zero_s, all_kept = True, True, True
    for seed in cfg.seeds:
        metrics = json.loads((tmp_path / "out" / f"seed_{seed}" / "metrics.json").read_text())["metrics"]
        identical &= all(metrics[m] == metrics["Source"] for m in ("ST", "Norm", "CASP"))
        snap = load_snapshots(tmp_path / "out" / f"seed_{seed}" / "adapt")
        zero_s &= bool(np.all(stability(snap) == 0))
        all_kept &= all(make_report(snap, lam).selected.all() for lam in (50, 75, 90, 95, 99))
    ok = identical and zero_s and all_kept
    verdict(8, ok, f"identical metrics {identical}; stability all zero {zero_s}; all selected at every λ {all_kept}")


def test_c09_determinism(benchmark_runs):
    a, b = (p / "aggregate.csv" for p in benchmark_runs)
    ja, jb = (p / "aggregate.json" for p in benchmark_runs)
    ok = a.read_bytes() == b.read_bytes() and ja.read_bytes() == jb.read_bytes()
    verdict(9, ok, f"aggregate.csv and aggregate.json byte-identical across two runs: {ok}")


def test_c10_partition_and_gradients():
    coverage = []
    for fusion in ("early", "late"):
        model = init_model(EncoderConfig(fusion=fusion), TINY_DIMS, 0)
        norm, other = partition_parameters(model)
        trainable = [n for n, p in model.named_parameters() if p.requires_grad]
        names = list(norm) + list(other)
        coverage.append(sorted(names) == sorted(trainable) and len(names) == len(set(names)))

    rng = np.random.default_rng(0)
    worst, checked = 0.0, 0
    for fusion in ("early", "late"):
        cfg = EncoderConfig(fusion=fusion, model_dim=8, n_layers=1, n_heads=2, feedforward_dim=16)
        model = init_model(cfg, TINY_DIMS, 0).double().eval()
        batch = collate([make_sample(f"s{i}", rng) for i in range(3)]).to(torch.float64)
        y = torch.tensor([0.3, -1.0, 2.0], dtype=torch.float64)

        def loss():
            return ((predict(model, batch) - y) ** 2).sum()

        model.zero_grad()
        loss().backward()
        for _, p in model.named_parameters():
            flat, grad = p.data.view(-1), p.grad.view(-1)
            for j in np.random.default_rng(1).choice(flat.numel(), size=min(3, flat.numel()), replace=False):
                orig = flat[j].item()
                with torch.no_grad():
                    flat[j] = orig + 1e-6
                    hi = loss().item()
                    flat[j] = orig - 1e-6
                    lo = loss().item()
                    flat[j] = orig
                fd = (hi - lo) / 2e-6
                # relative error, with an absolute floor for entries whose gradient is ~0
                worst = max(worst, abs(grad[j].item() - fd) / max(abs(fd), 1e-4))
                checked += 1
    ok = all(coverage) and worst <= 1e-3
    verdict(10, ok, f"partition exact on early/late {coverage}; {checked} gradient entries, max rel err {worst:.1e}")
