from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

from deqff.config import load_config
from deqff.deq import SolverConfig
from deqff.eqnet import ForceField
from deqff.lib.utils import csv_body, read_csv
from deqff.metrics import evaluate
from deqff.sim import Frame, gen_dataset, toy_molecule, toy_potential
from deqff.train import (
    CheckpointError,
    TrainConfig,
    TrainingAbortedError,
    build_optimizer,
    capture,
    load_optimizer_state,
    loss,
    lr_schedule,
    optimizer_step,
    read_checkpoint,
    restore_generator,
    restore_model,
    split_dataset,
    train_loop,
    write_checkpoint,
)
from deqff.train.loop import METRIC_COLUMNS, predict

SOLVER = SolverConfig(max_steps=100)


@pytest.fixture(scope="module")
def dataset():
    return gen_dataset(toy_potential(), toy_molecule(), n_frames=6, dt=0.5, temperature=300.0, seed=0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(force_weight=0.0, energy_weight=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lr_min=1e-2)
    with pytest.raises(ValueError):
        TrainConfig(gradient="backprop")


def test_loss_value_and_cotangents():
    cfg = TrainConfig(force_weight=2.0, energy_weight=1.0)
    forces = torch.tensor([[3.0, 4.0, 0.0], [1.0, 1.0, 1.0]], dtype=torch.float64)
    gt = torch.tensor([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]], dtype=torch.float64)
    terms = loss(torch.tensor(1.5, dtype=torch.float64), forces, 1.0, gt, cfg, batch_size=2)
    # force term: (5 + 0) / 2 atoms
    assert terms.force == pytest.approx(2.5)
    assert terms.energy == pytest.approx(0.5)
    assert terms.value == pytest.approx((2.0 * 2.5 + 0.5) / 2)
    np.testing.assert_allclose(terms.d_forces[0].numpy(), [0.6 * 0.5, 0.8 * 0.5, 0.0])
    np.testing.assert_allclose(terms.d_forces[1].numpy(), 0.0)
    assert float(terms.d_energy) == pytest.approx(0.5)


def test_lr_schedule_shape():
    cfg = TrainConfig(lr_initial=1e-4, lr_max=1e-3, lr_min=1e-6)
    total, warmup = 100, 10
    assert lr_schedule(0, cfg, total, warmup) == pytest.approx(1e-4)
    assert lr_schedule(warmup, cfg, total, warmup) == pytest.approx(1e-3)
    assert lr_schedule(total - 1, cfg, total, warmup) == pytest.approx(1e-6)
    lrs = [lr_schedule(s, cfg, total, warmup) for s in range(warmup, total)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_lr_schedule_without_warmup_starts_at_initial():
    cfg = TrainConfig(lr_initial=1e-4, lr_max=1e-3, lr_min=1e-6)
    assert lr_schedule(0, cfg, 50, 0) == pytest.approx(1e-4)
    assert lr_schedule(49, cfg, 50, 0) == pytest.approx(1e-6)
    assert lr_schedule(0, cfg, 1, 5) == pytest.approx(1e-4)
    lrs = [lr_schedule(s, cfg, 50, 0) for s in range(50)]
    assert max(lrs) == lrs[0]


def test_split_dataset_is_seeded():
    train, val = split_dataset(20, 0.1, seed=3)
    assert len(val) == 2 and len(train) == 18
    assert set(train).isdisjoint(val)
    again = split_dataset(20, 0.1, seed=3)
    assert np.array_equal(train, again[0])
    assert len(split_dataset(5, 0.05, seed=0)[1]) == 1


def test_optimizer_step_clips_and_updates(explicit_model):
    cfg = TrainConfig(grad_clip=1.0, weight_decay=0.0)
    optimizer = build_optimizer(explicit_model, cfg)
    before = {n: p.detach().clone() for n, p in explicit_model.named_parameters()}
    grads = {n: torch.full_like(p, 10.0) for n, p in explicit_model.named_parameters()}
    norm = optimizer_step(explicit_model, optimizer, grads, 1e-3, cfg)
    assert norm > 1.0
    for n, p in explicit_model.named_parameters():
        assert torch.all(p < before[n])
    bad = {n: torch.full_like(p, float("nan")) for n, p in explicit_model.named_parameters()}
    with pytest.raises(ValueError):
        optimizer_step(explicit_model, optimizer, bad, 1e-3, cfg)


def test_weight_decay_skips_gains_biases_and_scalars(model):
    cfg = TrainConfig(weight_decay=0.5)
    optimizer = build_optimizer(model, cfg)
    assert [g["weight_decay"] for g in optimizer.param_groups] == [0.5, 0.0]
    params = dict(model.named_parameters())
    before = {n: p.detach().clone() for n, p in params.items()}
    zeros = {n: torch.zeros_like(p) for n, p in params.items()}
    for _ in range(100):
        optimizer_step(model, optimizer, zeros, 1e-2, cfg)

    for name in ("layers.0.norm.gains.l0", "embedding.alpha", "embedding.species.bias", "energy_head.mlp.2.bias"):
        assert torch.equal(params[name], before[name]), name
    np.testing.assert_allclose(
        params["layers.0.src_mix.weights.l0"].detach().numpy(),
        (before["layers.0.src_mix.weights.l0"] * (1 - 1e-2 * 0.5) ** 100).numpy(),
        rtol=1e-12,
    )


def test_train_loop_deq(model, dataset, tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=2, val_fraction=0.2)
    result = train_loop(dataset, model, cfg, SOLVER, metrics_path=tmp_path / "metrics.csv")
    metrics = result.metrics
    assert list(metrics.columns) == METRIC_COLUMNS
    assert list(metrics["split"]) == ["train", "val", "train", "val"]
    assert np.isfinite(metrics[["force_mae", "energy_mae", "mean_steps"]].to_numpy()).all()
    assert (metrics["mean_steps"] > 0).all()
    logged = read_csv(tmp_path / "metrics.csv")
    assert list(logged.columns) == METRIC_COLUMNS
    assert len(logged) == 4


def test_train_loop_phantom_without_correction(model, dataset):
    cfg = TrainConfig(epochs=1, batch_size=3, val_fraction=0.0, gradient="phantom", correction=False)
    result = train_loop(dataset, model, cfg, SOLVER)
    assert list(result.metrics["split"]) == ["train"]


def test_train_loop_explicit_is_deterministic(layer_config, graph_config, dataset):
    cfg = TrainConfig(epochs=2, batch_size=2)
    layer = replace(layer_config, kind="explicit")
    runs = [train_loop(dataset, ForceField(layer, graph_config), cfg, SOLVER) for _ in range(2)]
    assert runs[0].metrics.equals(runs[1].metrics)
    assert (runs[0].metrics.loc[runs[0].metrics["split"] == "train", "mean_steps"] == 0).all()


def test_train_loop_aborts_when_forward_fails(model, dataset):
    solver = SolverConfig(eps_train=1e-12, eps_reuse=1e-1, max_steps=2)
    with pytest.raises(TrainingAbortedError):
        train_loop(dataset, model, TrainConfig(epochs=1), solver)


def test_train_loop_rejects_unlabelled(model, dataset):
    frames = [Frame(system=f.system) for f in dataset]
    with pytest.raises(ValueError):
        train_loop(frames, model, TrainConfig(epochs=1), SOLVER)


def test_checkpoint_roundtrip(model, dataset, tmp_path):
    cfg = TrainConfig(epochs=1, batch_size=3)
    result = train_loop(dataset, model, cfg, SOLVER)
    path = write_checkpoint(tmp_path / "model.ckpt", result.checkpoint({"note": "test"}))
    ckpt = read_checkpoint(path)
    assert ckpt.metadata["note"] == "test"

    restored = restore_model(ckpt)
    for (name, p), (_, q) in zip(model.named_parameters(), restored.named_parameters()):
        assert torch.equal(p, q), name
    assert float(restored.energy_shift) == float(model.energy_shift)
    frame = dataset[0]
    e1, f1, _ = predict(model, frame, SOLVER)
    e2, f2, _ = predict(restored, frame, SOLVER)
    assert e1 == e2
    np.testing.assert_array_equal(f1, f2)

    optimizer = build_optimizer(restored, cfg)
    load_optimizer_state(restored, optimizer, ckpt)
    assert len(optimizer.state) == len(result.optimizer.state)
    generator = torch.Generator()
    restore_generator(ckpt, generator)
    assert torch.equal(generator.get_state(), result.generator.get_state())

    # same bytes on a second write
    again = write_checkpoint(tmp_path / "again.ckpt", ckpt)
    assert again.read_bytes() == path.read_bytes()


def test_checkpoint_errors(model, tmp_path):
    path = write_checkpoint(tmp_path / "model.ckpt", capture(model))
    data = path.read_bytes()

    (tmp_path / "short.ckpt").write_bytes(data[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(tmp_path / "short.ckpt")

    (tmp_path / "magic.ckpt").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(tmp_path / "magic.ckpt")

    (tmp_path / "long.ckpt").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "long.ckpt")

    ckpt = read_checkpoint(path)
    ckpt.metadata["layer"]["channels"] = 6
    with pytest.raises(CheckpointError, match="Layout mismatch"):
        restore_model(ckpt)


def test_deq_metrics_csv_is_reproducible(layer_config, graph_config, dataset, tmp_path):
    layer = replace(layer_config, path_dropout=0.1)
    cfg = TrainConfig(epochs=2, batch_size=2, val_fraction=0.2)
    paths = [tmp_path / f"metrics_{k}.csv" for k in range(2)]
    for path in paths:
        train_loop(dataset, ForceField(layer, graph_config), cfg, SOLVER, metrics_path=path)
    assert csv_body(paths[0]) == csv_body(paths[1])


def test_training_learns_with_stable_solver(model, dataset):
    cfg = TrainConfig(epochs=6, batch_size=2, lr_max=5e-3, warmup_epochs=1, val_fraction=0.0)
    before, _ = evaluate(model, dataset, SOLVER, warmup=0)
    train = train_loop(dataset, model, cfg, SOLVER).metrics
    after, _ = evaluate(model, dataset, SOLVER, warmup=0)
    assert after.force_mae < before.force_mae
    assert train["median_steps"].iloc[-1] <= train["median_steps"].iloc[0] + 5


@pytest.mark.slow
def test_toy_training_learns_with_stable_solver():
    cfg = load_config(Path(__file__).parents[1] / "configs" / "desk.cfg")
    data = gen_dataset(toy_potential(), toy_molecule(), cfg.sim.frames, cfg.sim.dt, cfg.sim.temperature, seed=0)
    model = ForceField(cfg.model, cfg.graph)
    before, _ = evaluate(model, data, cfg.solver, warmup=0)
    metrics = train_loop(data, model, cfg.train, cfg.solver).metrics
    after, _ = evaluate(model, data, cfg.solver, warmup=0)
    train = metrics[metrics["split"] == "train"]
    assert after.force_mae <= before.force_mae / 10
    assert train["median_steps"].iloc[-1] <= train["median_steps"].iloc[0] + 5
