from dataclasses import replace

import numpy as np
import pytest
import torch

from deqff.deq import SolverConfig, deq_forward
from deqff.eqnet import ForceField, LayerConfig, attention_weights, explicit_forward
from deqff.graph import AtomicSystem, GraphConfig
from deqff.irreps import IrrepsTensor, Rotation, apply_rotation

TIGHT = SolverConfig(eps_train=1e-12, max_steps=300)


def rotated(system, rotation):
    return system.replace(positions=rotation.apply(system.positions))


def test_layer_config_validation():
    with pytest.raises(ValueError):
        LayerConfig(kind="transformer")
    with pytest.raises(ValueError):
        LayerConfig(l_max=4)
    with pytest.raises(ValueError):
        LayerConfig(channels=6, num_heads=4)
    with pytest.raises(ValueError):
        LayerConfig(path_dropout=1.0)


def test_initialization_is_seeded(layer_config, graph_config):
    a = ForceField(layer_config, graph_config)
    b = ForceField(layer_config, graph_config)
    for (name, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(p, q), name
    assert all(p.dtype == torch.float64 for p in a.parameters())


def test_attention_weights_normalized():
    gen = torch.Generator().manual_seed(0)
    dst = torch.tensor([0, 0, 0, 1, 1, 2])
    logits = torch.randn(6, 2, generator=gen, dtype=torch.float64)
    env = torch.tensor([1.0, 0.5, 0.2, 1.0, 0.3, 0.9], dtype=torch.float64)
    a = attention_weights(logits, env, dst, 3)
    sums = torch.zeros(3, 2, dtype=torch.float64).index_add(0, dst, a)
    np.testing.assert_allclose(sums.numpy(), 1.0, atol=1e-14)

    keep = torch.tensor([True, False, True, False, False, True])
    a = attention_weights(logits, env, dst, 3, keep)
    assert torch.all(a[~keep] == 0)
    sums = torch.zeros(3, 2, dtype=torch.float64).index_add(0, dst, a)
    # node 1 lost every incoming edge
    np.testing.assert_allclose(sums[[0, 2]].numpy(), 1.0, atol=1e-14)
    np.testing.assert_allclose(sums[1].numpy(), 0.0)


def test_embedding_equivariance(model, toy, rotation):
    h = model.embed(model.prepare(toy))
    h_rot = model.embed(model.prepare(rotated(toy, rotation)))
    expected = apply_rotation(IrrepsTensor(model.layout, h), rotation).data
    np.testing.assert_allclose(h_rot.detach().numpy(), expected.detach().numpy(), atol=1e-9)


def test_attention_layer_equivariance(model, toy, rotation):
    ctx = model.prepare(toy)
    ctx_rot = model.prepare(rotated(toy, rotation))
    layer = model.layers[0]
    h = model.embed(ctx)
    h_rot = apply_rotation(IrrepsTensor(model.layout, h), rotation).data
    out = layer(h, ctx)
    out_rot = layer(h_rot, ctx_rot)
    expected = apply_rotation(IrrepsTensor(model.layout, out), rotation).data
    np.testing.assert_allclose(out_rot.detach().numpy(), expected.detach().numpy(), atol=1e-9)


def test_explicit_forward_invariance(explicit_model, toy, rotation):
    with torch.no_grad():
        energy, forces = explicit_forward(toy, explicit_model)
        energy_rot, forces_rot = explicit_forward(rotated(toy, rotation), explicit_model)
    assert forces.shape == (toy.n_atoms, 3)
    assert float(energy_rot) == pytest.approx(float(energy), abs=1e-9)
    np.testing.assert_allclose(forces_rot.numpy(), rotation.apply(forces.numpy()), atol=1e-9)


def test_explicit_forward_permutation(explicit_model, toy):
    perm = np.array([3, 0, 6, 1, 5, 2, 4])
    permuted = AtomicSystem(atomic_numbers=toy.atomic_numbers[perm], positions=toy.positions[perm])
    with torch.no_grad():
        energy, forces = explicit_forward(toy, explicit_model)
        energy_p, forces_p = explicit_forward(permuted, explicit_model)
    assert float(energy_p) == pytest.approx(float(energy), abs=1e-10)
    np.testing.assert_allclose(forces_p.numpy(), forces.numpy()[perm], atol=1e-10)


def test_explicit_forward_depth_bounds(explicit_model, toy):
    with pytest.raises(ValueError):
        explicit_forward(toy, explicit_model, num_layers=0)
    with pytest.raises(ValueError):
        explicit_forward(toy, explicit_model, num_layers=3)


def test_energy_shift_is_per_atom(explicit_model, toy):
    with torch.no_grad():
        energy, _ = explicit_forward(toy, explicit_model)
        explicit_model.energy_shift.fill_(-2.0)
        shifted, _ = explicit_forward(toy, explicit_model)
    assert float(shifted - energy) == pytest.approx(-2.0 * toy.n_atoms)


def test_unknown_species_rejected(model):
    system = AtomicSystem(atomic_numbers=[11, 1], positions=[[0, 0, 0], [1, 0, 0]])
    with pytest.raises(ValueError, match="max_atomic_number"):
        model.embed(model.prepare(system))


def test_isolated_atoms(explicit_model):
    system = AtomicSystem(atomic_numbers=[1, 8], positions=[[0, 0, 0], [0, 0, 20.0]])
    with torch.no_grad():
        energy, forces = explicit_forward(system, explicit_model)
    assert torch.isfinite(energy)
    np.testing.assert_allclose(forces.numpy(), 0.0, atol=1e-14)


def random_system(rng):
    n = int(rng.integers(3, 9))
    side = 1.6 * n ** (1 / 3)
    positions = []
    while len(positions) < n:
        p = rng.uniform(0.0, side, size=3)
        if all(np.linalg.norm(p - q) > 0.9 for q in positions):
            positions.append(p)
    return AtomicSystem(atomic_numbers=rng.choice([1, 6, 7, 8], size=n), positions=np.array(positions))


def predict(model, system, solver=TIGHT):
    if model.layer_config.kind == "explicit":
        with torch.no_grad():
            energy, forces = explicit_forward(system, model)
        return float(energy), forces.numpy()
    out = deq_forward(system, model, solver)
    assert out.stats.converged
    return float(out.energy), out.forces.numpy()


def check_euclidean_symmetry(trials, seed):
    """Energy invariance and force equivariance under random rotation plus translation, random weights."""
    rng = np.random.default_rng(seed)
    graph = GraphConfig(r_cut=4.0, num_basis=8)
    solver = SolverConfig(eps_train=1e-10, max_steps=300)
    for k in range(trials):
        system = random_system(rng)
        rotation = Rotation.random(rng)
        moved = system.replace(positions=rotation.apply(system.positions) + rng.normal(scale=5.0, size=3))
        layer = LayerConfig(l_max=2, channels=4, attn_hidden=8, radial_hidden=8, energy_hidden=8,
                            path_dropout=0.0, seed=seed * 1000 + k)
        for kind in ("explicit", "deq"):
            model = ForceField(replace(layer, kind=kind), graph)
            energy, forces = predict(model, system, solver)
            energy_m, forces_m = predict(model, moved, solver)
            assert abs(energy_m - energy) <= 1e-8 * max(abs(energy), 1e-8), (kind, k)
            error = np.linalg.norm(forces_m - rotation.apply(forces))
            assert error <= 1e-8 * max(np.linalg.norm(forces), 1e-8), (kind, k)


def test_euclidean_symmetry_random_systems():
    check_euclidean_symmetry(trials=10, seed=0)


@pytest.mark.slow
def test_euclidean_symmetry_hundred_systems():
    check_euclidean_symmetry(trials=100, seed=1)


@pytest.mark.parametrize("kind", ["explicit", "deq"])
def test_energy_is_extensive_over_disjoint_union(layer_config, graph_config, toy, kind):
    model = ForceField(replace(layer_config, kind=kind), graph_config)
    union = AtomicSystem(
        atomic_numbers=np.concatenate([toy.atomic_numbers, toy.atomic_numbers]),
        positions=np.concatenate([toy.positions, toy.positions + [50.0, 0.0, 0.0]]),
    )
    energy, forces = predict(model, toy)
    energy_u, forces_u = predict(model, union)
    assert energy_u == pytest.approx(2 * energy, rel=1e-9)
    np.testing.assert_allclose(forces_u, np.concatenate([forces, forces]), atol=1e-9)


@pytest.mark.parametrize("kind", ["explicit", "deq"])
def test_prediction_continuous_across_cutoff(layer_config, graph_config, kind):
    model = ForceField(replace(layer_config, kind=kind), graph_config)
    direction = np.array([np.cos(0.5), np.sin(0.5), 0.0])
    predictions = []
    for r in (graph_config.r_cut - 1e-6, graph_config.r_cut + 1e-6):
        system = AtomicSystem(
            atomic_numbers=[6, 8, 1],
            positions=[[0.0, 0.0, 0.0], [1.2, 0.0, 0.0], [1.2, 0.0, 0.0] + r * direction],
        )
        predictions.append(predict(model, system))
    (e_in, f_in), (e_out, f_out) = predictions
    assert e_in == pytest.approx(e_out, abs=1e-8)
    np.testing.assert_allclose(f_in, f_out, atol=1e-8)
