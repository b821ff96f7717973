import json
import os
import time

import numpy as np
import pytest

from models.backbone import ModelConfig, build_model
from utils.checkpoint import encode_checkpoint, make_checkpoint
from utils.config import parse_config_text
from utils.dataset import DatasetIndex, normalize, split_dataset
from utils.errors import ConfigError, NonFiniteError
from utils.synthetic import stripes_dataset
from utils.tensor import Tensor, no_grad
from utils.trainer import (HISTORY_COLUMNS, EarlyStopping, OptimState, ShardPool, TrainSchedule, adam_step,
                           batch_gradients, evaluate_split, lr_at, train_loop, write_history)


def adam_once(p, g, lr, weight_decay):
    tensor = Tensor(np.array(p, dtype=np.float64))
    state = OptimState(weight_decay=weight_decay)
    adam_step([("p", tensor)], [np.array(g, dtype=np.float64)], state, lr)
    return tensor.data, state


testdata_adam = [
    ([0.5, -2.0, 3.0], [1.0, 1.0, 1.0], 0.1, 0.0, [0.5 - 0.1 / (1 + 1e-8), -2.0 - 0.1 / (1 + 1e-8),
                                                  3.0 - 0.1 / (1 + 1e-8)]),
    ([0.5, -2.0, 3.0], [0.0, 0.0, 0.0], 0.1, 0.0, [0.5, -2.0, 3.0]),
    ([0.5, -2.0, 3.0], [0.0, 0.0, 0.0], 1e-4, 1e-4, [0.5 * (1 - 1e-8), -2.0 * (1 - 1e-8), 3.0 * (1 - 1e-8)]),
]


@pytest.mark.parametrize("p, g, lr, weight_decay, expected", testdata_adam)
def test_adam_step(p, g, lr, weight_decay, expected):
    updated, state = adam_once(p, g, lr, weight_decay)
    assert np.allclose(updated, expected, rtol=0, atol=1e-15)
    assert state.step == 1
    assert state.first_moment["p"].shape == (3,)


def test_adam_weight_decay_contracts():
    tensor = Tensor(np.array([1.0, -4.0]))
    state = OptimState(weight_decay=0.1)
    previous = np.abs(tensor.data)
    for _ in range(5):
        adam_step([("p", tensor)], [np.zeros(2)], state, 0.5)
        assert np.all(np.abs(tensor.data) < previous)
        previous = np.abs(tensor.data)


def test_adam_rejects_non_finite_gradient():
    tensor = Tensor(np.ones(2))
    with pytest.raises(NonFiniteError, match="head.weight"):
        adam_step([("head.weight", tensor)], [np.array([1.0, np.nan])], OptimState(), 0.1)
    assert np.array_equal(tensor.data, np.ones(2))


def test_optim_state_tensors_round_trip():
    _, state = adam_once([1.0, 2.0], [0.3, -0.1], 0.01, 0.0)
    restored = OptimState.from_tensors(state.tensors())
    assert restored.step == 1
    assert np.array_equal(restored.first_moment["p"], state.first_moment["p"])
    assert np.array_equal(restored.second_moment["p"], state.second_moment["p"])


SCHEDULE = TrainSchedule(total_epochs=200, warmup_epochs=10, base_lr=1e-4, min_lr=1e-6)

testdata_lr = [
    (0, 1e-5),
    (9, 1e-4),
    (10, 1e-4),
    (105, (1e-4 + 1e-6) / 2),
    (200, 1e-6),
]


@pytest.mark.parametrize("epoch, expected", testdata_lr)
def test_lr_at(epoch, expected):
    assert np.isclose(lr_at(epoch, SCHEDULE), expected, rtol=1e-12)


def test_lr_monotone_after_warmup():
    rates = [lr_at(epoch, SCHEDULE) for epoch in range(10, 200)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


testdata_bad_schedules = [
    (dict(total_epochs=10, warmup_epochs=10), "warmup_epochs"),
    (dict(patience=0), "patience"),
    (dict(total_epochs=0), "epochs"),
    (dict(batch_size=0), "batch_size"),
    (dict(base_lr=1e-4, min_lr=1e-3), "min_lr"),
]


@pytest.mark.parametrize("kwargs, field", testdata_bad_schedules)
def test_schedule_validation(kwargs, field):
    with pytest.raises(ConfigError) as error:
        TrainSchedule(**kwargs)
    assert error.value.field == field


def test_early_stopping():
    stopper = EarlyStopping(patience=3)
    outcomes = [stopper.update(epoch, metric) for epoch, metric in enumerate([70, 71, 70, 70, 70], start=1)]
    assert [stop for _, stop in outcomes] == [False, False, False, False, True]
    assert stopper.best_epoch == 2 and stopper.best == 71


def test_early_stopping_ignores_warmup():
    stopper = EarlyStopping(patience=2, warmup_epochs=3)
    stops = [stopper.update(epoch, metric)[1] for epoch, metric in enumerate([50, 50, 50, 50, 50], start=1)]
    assert stops == [False, False, False, False, True]


SMALL_LAYOUT = dict(stage_channels=[8, 16, 32, 64], stage_depths=[1, 1, 1, 1], r=1.0, ssm_state=2, dtype="float64")


def split_stripes(n_train: int, n_val: int, seed: int = 0) -> DatasetIndex:
    index = stripes_dataset(n_train + n_val, size=32, seed=seed)
    index.split = np.array(["train"] * n_train + ["val"] * n_val, dtype=object)
    return index


def test_training_is_deterministic(tmp_path):
    cfg = parse_config_text(json.dumps(SMALL_LAYOUT), base_dir=tmp_path)
    histories, blobs = [], []
    for _ in range(2):
        model = build_model(cfg.model, seed=3)
        sched = TrainSchedule(total_epochs=2, warmup_epochs=1, base_lr=1e-3, batch_size=4, seed=5)
        result = train_loop(model, split_stripes(8, 4), sched)
        histories.append(result.history)
        model.load_state_dict(result.best_state)
        best = {"epoch": result.best_epoch, "val_OA": float(result.history["val_OA"].iloc[result.best_epoch - 1])}
        blobs.append(encode_checkpoint(make_checkpoint(cfg, model, result.optim_state, best)))
    assert blobs[0] == blobs[1]
    assert list(histories[0].columns) == HISTORY_COLUMNS
    assert histories[0].equals(histories[1])
    assert list(histories[0]["epoch"]) == [1, 2]
    write_history(histories[0], tmp_path)
    assert (tmp_path / "history.csv").read_text().startswith(",".join(HISTORY_COLUMNS))
    assert (tmp_path / "history.txt").is_file()


def test_best_state_is_restorable():
    model = build_model(ModelConfig(**SMALL_LAYOUT), seed=4)
    index = split_stripes(8, 4)
    sched = TrainSchedule(total_epochs=3, warmup_epochs=0, base_lr=1e-3, batch_size=8, patience=1)
    result = train_loop(model, index, sched)
    model.load_state_dict(result.best_state)
    report = evaluate_split(model, index, "val", 8)
    assert np.isclose(report.oa, result.history["val_OA"].iloc[result.best_epoch - 1])
    assert result.optim_state.step == len(result.history)


def test_divergence_guard():
    model = build_model(ModelConfig(**SMALL_LAYOUT), seed=5)
    model.head.bias.data = np.array([np.inf, 0.0])
    sched = TrainSchedule(total_epochs=1, warmup_epochs=0, batch_size=4)
    with pytest.raises(NonFiniteError, match="diverged"):
        train_loop(model, split_stripes(4, 2), sched)


@pytest.mark.slow
def test_single_batch_overfit():
    model = build_model(ModelConfig(**SMALL_LAYOUT), seed=0)
    sched = TrainSchedule(total_epochs=200, warmup_epochs=0, base_lr=3e-3, min_lr=3e-4, weight_decay=0.0,
                          patience=200, batch_size=16)
    result = train_loop(model, split_stripes(16, 4), sched)
    assert result.history["train_OA"].max() == 100.0


def test_worker_pool_matches_single_process():
    model = build_model(ModelConfig(**SMALL_LAYOUT), seed=6)
    index = stripes_dataset(6, size=32, seed=2)
    images, labels = Tensor(normalize(index.images)), index.labels
    single = batch_gradients(model, images, labels)
    with no_grad():
        logits = model(images).data
    with ShardPool(2) as pool:
        sharded = pool.gradients(model, images, labels)
        assert np.allclose(pool.logits(model, images), logits, rtol=1e-10, atol=1e-12)
    assert np.isclose(sharded.loss_sum, single.loss_sum, rtol=1e-10)
    assert sharded.correct == single.correct
    for pooled, reference in zip(sharded.grads, single.grads):
        assert np.allclose(pooled, reference, rtol=1e-8, atol=1e-12)


@pytest.mark.slow
def test_pooled_training_is_deterministic():
    histories = []
    for _ in range(2):
        model = build_model(ModelConfig(**SMALL_LAYOUT), seed=3)
        sched = TrainSchedule(total_epochs=2, warmup_epochs=1, base_lr=1e-3, batch_size=4, seed=5)
        histories.append(train_loop(model, split_stripes(8, 4), sched, n_workers=2).history)
    assert histories[0].equals(histories[1])


@pytest.mark.slow
def test_tiny_variant_learns_stripes_within_budget():
    index = split_dataset(stripes_dataset(2000, size=32, seed=0), (6, 2, 2), seed=42)
    model = build_model(ModelConfig.from_variant("tiny"), seed=0)
    sched = TrainSchedule(total_epochs=50, warmup_epochs=10, base_lr=1e-4, batch_size=16)
    start = time.perf_counter()
    result = train_loop(model, index, sched, dtype=model.cfg.np_dtype, n_workers=min(4, os.cpu_count() or 1))
    assert result.history["val_OA"].max() >= 95.0
    assert time.perf_counter() - start < 15 * 60
