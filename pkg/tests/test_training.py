import numpy as np
import pytest
import torch

from casp.backbones import EncoderConfig, init_model
from casp.data import DomainDataset, collate
from casp.metrics import mae
from casp.synth import LinearProbe, ShiftConfig, generate_task
from casp.training import (
    TrainConfig,
    TrainingDivergedError,
    fit_l1,
    predict_samples,
    pretrain,
    scheduled_lr,
)

from conftest import TINY_DIMS, make_sample


def state(model):
    return {k: v.clone() for k, v in model.state_dict().items()}


def test_zero_lr_is_a_no_op(small_task, tiny_encoder):
    source, _ = small_task
    model = init_model(tiny_encoder, source.feat_dims, 0)
    before = state(model)
    trained, hist = pretrain(model, source, TrainConfig(epochs=1, learning_rate=0.0))
    assert all(torch.equal(before[k], v) for k, v in trained.state_dict().items())
    initial = mae(predict_samples(model, source.split("valid")), source.labels("valid"))
    assert hist[0]["valid_mae"] == pytest.approx(initial, abs=1e-6)
    assert hist[0]["train_mae"] == pytest.approx(
        mae(predict_samples(model, source.split("train")), source.labels("train")), abs=1e-5
    )


def test_pretrain_does_not_mutate_input(small_task, tiny_encoder):
    source, _ = small_task
    model = init_model(tiny_encoder, source.feat_dims, 0)
    before = state(model)
    pretrain(model, source, TrainConfig(epochs=2))
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_same_seed_same_history(small_task, tiny_encoder):
    source, _ = small_task
    runs = [pretrain(init_model(tiny_encoder, source.feat_dims, 0), source, TrainConfig(epochs=3, seed=2)) for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    assert all(torch.equal(a, b) for a, b in zip(runs[0][0].state_dict().values(), runs[1][0].state_dict().values()))


def test_clipping_bound(small_task, tiny_encoder):
    source, _ = small_task
    _, hist = pretrain(init_model(tiny_encoder, source.feat_dims, 0), source, TrainConfig(epochs=3, learning_rate=1e-2))
    assert all(h["grad_norm_max"] <= 0.8 + 1e-6 for h in hist)
    assert max(h["grad_norm_max"] for h in hist) > 0


def test_step_schedule_logged(small_task, tiny_encoder):
    source, _ = small_task
    cfg = TrainConfig(epochs=7, step_size=3, gamma=0.5, learning_rate=2e-3)
    _, hist = pretrain(init_model(tiny_encoder, source.feat_dims, 0), source, cfg)
    for e, h in enumerate(hist):
        assert h["lr"] == pytest.approx(2e-3 * 0.5 ** (e // 3), rel=1e-12)
        assert h["lr"] == pytest.approx(scheduled_lr(cfg, e), rel=1e-12)


def test_best_valid_checkpoint_is_returned(small_task, tiny_encoder):
    source, _ = small_task
    model, hist = pretrain(init_model(tiny_encoder, source.feat_dims, 0), source, TrainConfig(epochs=6))
    best = min(h["valid_mae"] for h in hist)
    assert mae(predict_samples(model, source.split("valid")), source.labels("valid")) == pytest.approx(best, abs=1e-6)


def test_unlabeled_source_rejected(rng, tiny_encoder):
    ds = DomainDataset("u", (-3, 3), TINY_DIMS, {"train": [make_sample("a", rng, label=None)]})
    with pytest.raises(ValueError, match="unlabeled"):
        pretrain(init_model(tiny_encoder, TINY_DIMS, 0), ds, TrainConfig(epochs=1))


def test_divergence_is_reported(rng, tiny_encoder):
    samples = [make_sample(f"s{i}", rng) for i in range(4)]
    model = init_model(tiny_encoder, TINY_DIMS, 0)
    with pytest.raises(TrainingDivergedError, match="epoch 0"):
        fit_l1(model, collate(samples), np.full(4, np.inf), TrainConfig(epochs=1))


@pytest.mark.parametrize("bad", [dict(learning_rate=-1.0), dict(epochs=0), dict(grad_clip_norm=0.0), dict(parameter_scope="x")])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad).validate()


def test_recovers_linear_task():
    cfg = ShiftConfig(noise_sigma=0.0, n_target=10, n_test=10, seed=4)
    source, _ = generate_task(cfg)
    probe = LinearProbe().fit(source.split("train"), source.labels("train"))
    assert mae(probe.predict(source.split("valid")), source.labels("valid")) < 1e-3
    model = init_model(EncoderConfig(), source.feat_dims, 0)
    _, hist = pretrain(model, source, TrainConfig(epochs=30))
    assert hist[-1]["valid_mae"] < 0.1
