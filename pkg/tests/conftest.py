from dataclasses import replace

import numpy as np
import pytest
import torch

from deqff.eqnet import ForceField, LayerConfig
from deqff.graph import GraphConfig
from deqff.irreps import Rotation
from deqff.deq import SolverConfig
from deqff.sim import gen_dataset, toy_molecule, toy_potential
from deqff.train import TrainConfig, train_loop


class AffineHooks:
    """f(z) = A z + b with heads E = c . z and F = z viewed as (n/3, 3)."""

    def __init__(self, A: torch.Tensor, b: torch.Tensor, c: torch.Tensor):
        self.A = A
        self.b = b
        self.c = c

    def map(self, z):
        return self.A @ z + self.b

    def vjp_z(self, z, u):
        return self.A.T @ u

    def vjp_theta(self, z, u):
        return {"b": u.clone()}

    def heads(self, z):
        return self.c @ z, z.reshape(-1, 3)

    def vjp_heads(self, z, d_energy, d_forces):
        d_energy = torch.as_tensor(d_energy, dtype=z.dtype)
        return d_energy * self.c + d_forces.reshape(-1), {"c": d_energy * z}


@pytest.fixture
def toy():
    return toy_molecule()


@pytest.fixture
def rotation():
    return Rotation.random(np.random.default_rng(3))


@pytest.fixture
def graph_config():
    return GraphConfig(r_cut=4.0, num_basis=8)


@pytest.fixture
def layer_config():
    return LayerConfig(
        l_max=2,
        channels=4,
        attn_hidden=8,
        radial_hidden=8,
        energy_hidden=8,
        path_dropout=0.0,
    )


@pytest.fixture
def model(layer_config, graph_config):
    return ForceField(layer_config, graph_config)


@pytest.fixture
def explicit_model(layer_config, graph_config):
    return ForceField(replace(layer_config, kind="explicit"), graph_config)


def make_affine_hooks(scale: float, n: int = 12, seed: int = 11) -> AffineHooks:
    """A = scale * orthogonal, so the spectral radius of A is exactly ``scale``."""
    gen = torch.Generator().manual_seed(seed)
    q, _ = torch.linalg.qr(torch.randn(n, n, generator=gen, dtype=torch.float64))
    b = torch.randn(n, generator=gen, dtype=torch.float64)
    c = torch.randn(n, generator=gen, dtype=torch.float64)
    return AffineHooks(scale * q, b, c)


@pytest.fixture
def affine_hooks():
    return make_affine_hooks(0.5)


@pytest.fixture
def affine_factory():
    return make_affine_hooks


@pytest.fixture(scope="session")
def trained_toy():
    """Fixed-point model fitted to an oracle trajectory of the toy molecule (slow suite only)."""
    data = gen_dataset(toy_potential(), toy_molecule(), n_frames=200, dt=0.5, temperature=300.0, seed=0)
    layer = LayerConfig(l_max=2, channels=4, attn_hidden=8, radial_hidden=8, energy_hidden=8)
    model = ForceField(layer, GraphConfig(r_cut=4.0, num_basis=8))
    cfg = TrainConfig(epochs=30, batch_size=4, lr_max=5e-3, val_fraction=0.1)
    train_loop(data, model, cfg, SolverConfig(max_steps=100))
    return model
