from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
import torch

from deqff.deq import SolverConfig, deq_forward, f_theta
from deqff.eqnet import ForceField
from deqff.grad import (
    AdjointNotConvergedError,
    GradReport,
    ModelAdjointHooks,
    correction_gradients,
    ift_backward,
    phantom_1step,
)

SOLVER = SolverConfig(eps_train=1e-10, max_steps=200)


def test_ift_matches_closed_form(affine_hooks):
    n = affine_hooks.b.shape[0]
    z_star = torch.linalg.solve(torch.eye(n, dtype=torch.float64) - affine_hooks.A, affine_hooks.b)
    dl_dz = torch.linspace(-1.0, 1.0, n, dtype=torch.float64)
    report = ift_backward(z_star, dl_dz, affine_hooks, SOLVER)
    expected = torch.linalg.solve(torch.eye(n, dtype=torch.float64) - affine_hooks.A.T, dl_dz)
    np.testing.assert_allclose(report.grads["b"].numpy(), expected.numpy(), atol=1e-8)
    assert report.adjoint_residual < SOLVER.eps_train


def test_ift_unconverged_raises(affine_hooks):
    n = affine_hooks.b.shape[0]
    with pytest.raises(AdjointNotConvergedError):
        ift_backward(torch.zeros(n, dtype=torch.float64), torch.ones(n, dtype=torch.float64), affine_hooks,
                     SolverConfig(max_steps=1))


def test_ift_rejects_non_finite_cotangent(affine_hooks):
    n = affine_hooks.b.shape[0]
    bad = torch.full((n,), float("nan"), dtype=torch.float64)
    with pytest.raises(ValueError):
        ift_backward(torch.zeros(n, dtype=torch.float64), bad, affine_hooks, SOLVER)


def test_phantom_is_first_neumann_term(affine_hooks):
    dl_dz = torch.arange(12, dtype=torch.float64)
    report = phantom_1step(torch.zeros(12, dtype=torch.float64), dl_dz, affine_hooks)
    assert torch.equal(report.grads["b"], dl_dz)
    assert report.adjoint_steps == 0


def test_correction_gradients_sum_per_sample(affine_hooks):
    target = 0.5
    samples = [torch.full((12,), v, dtype=torch.float64) for v in (0.1, 0.2)]

    def loss_fn(energy, forces):
        diff = energy - target
        return float(0.5 * diff**2), diff, torch.zeros_like(forces)

    report = correction_gradients(samples, loss_fn, affine_hooks)
    assert report.corrections == 2
    expected_b = sum((affine_hooks.c @ z - target) * affine_hooks.c for z in samples)
    expected_c = sum((affine_hooks.c @ z - target) * z for z in samples)
    np.testing.assert_allclose(report.grads["b"].numpy(), expected_b.numpy(), atol=1e-12)
    np.testing.assert_allclose(report.grads["c"].numpy(), expected_c.numpy(), atol=1e-12)


def test_grad_report_addition():
    a = GradReport(grads={"w": torch.ones(2)}, adjoint_steps=3, corrections=1)
    b = GradReport(grads={"w": torch.ones(2), "v": torch.zeros(1)}, adjoint_steps=2)
    total = a + b
    assert torch.equal(total.grads["w"], torch.full((2,), 2.0))
    assert set(total.grads) == {"w", "v"}
    assert total.adjoint_steps == 5
    assert total.corrections == 1
    assert torch.equal(a.grads["w"], torch.ones(2))
    assert not GradReport(grads={"w": torch.tensor([float("inf")])}).is_finite()


def test_model_vjp_z_matches_finite_difference(model, toy):
    ctx = model.prepare(toy)
    gen = torch.Generator().manual_seed(1)
    with torch.no_grad():
        x_tilde = model.embed(ctx)
    z = x_tilde + 0.1 * torch.randn(x_tilde.shape, generator=gen, dtype=torch.float64)
    u = torch.randn(z.shape, generator=gen, dtype=torch.float64)
    v = torch.randn(z.shape, generator=gen, dtype=torch.float64)
    hooks = ModelAdjointHooks(model, ctx)

    eps = 1e-6
    with torch.no_grad():
        jv = (f_theta(model, z + eps * v, x_tilde, ctx) - f_theta(model, z - eps * v, x_tilde, ctx)) / (2 * eps)
    lhs = float((hooks.vjp_z(z, u) * v).sum())
    rhs = float((u * jv).sum())
    assert lhs == pytest.approx(rhs, rel=1e-5, abs=1e-8)


def test_model_hooks_cache_linearization(model, toy):
    out = deq_forward(toy, model, SolverConfig(max_steps=100))
    hooks = ModelAdjointHooks(model, out.ctx)
    u = torch.ones_like(out.z)
    hooks.vjp_z(out.z, u)
    hooks.vjp_z(out.z, 2 * u)
    hooks.vjp_theta(out.z, u)
    assert hooks.calls["linearize"] == 1
    grads = hooks.vjp_theta(out.z, u)
    assert set(grads) == {n for n, p in model.named_parameters() if p.requires_grad}
    hooks.release()
    hooks.vjp_z(out.z, u)
    assert hooks.calls["linearize"] == 2


def test_model_head_vjp_matches_autograd(model, toy):
    out = deq_forward(toy, model, SolverConfig(max_steps=100))
    hooks = ModelAdjointHooks(model, out.ctx)
    d_forces = torch.ones(toy.n_atoms, 3, dtype=torch.float64)
    dl_dz, grads = hooks.vjp_heads(out.z, torch.tensor(1.0, dtype=torch.float64), d_forces)

    z = out.z.clone().requires_grad_(True)
    energy, forces = model.heads(z, out.ctx)
    expected = torch.autograd.grad(energy + forces.sum(), z)[0]
    np.testing.assert_allclose(dl_dz.numpy(), expected.numpy(), atol=1e-12)
    assert torch.count_nonzero(grads["energy_head.mlp.2.bias"]) == 1


def test_phantom_misses_neumann_tail(affine_factory):
    hooks = affine_factory(0.9)
    n = hooks.b.shape[0]
    eye = torch.eye(n, dtype=torch.float64)
    z_star = torch.linalg.solve(eye - hooks.A, hooks.b)
    dl_dz = torch.linspace(-1.0, 1.0, n, dtype=torch.float64)
    ift = ift_backward(z_star, dl_dz, hooks, SolverConfig(eps_train=1e-13, max_steps=500))
    phantom = phantom_1step(z_star, dl_dz, hooks)
    # sum_{k >= 1} (A^T)^k dL/dz*
    tail = torch.linalg.solve(eye - hooks.A.T, hooks.A.T @ dl_dz)
    np.testing.assert_allclose((ift.grads["b"] - phantom.grads["b"]).numpy(), tail.numpy(), atol=1e-10)
    assert float(tail.norm()) > 0.5


def test_phantom_equals_ift_for_constant_map(affine_factory):
    hooks = affine_factory(0.0)
    dl_dz = torch.arange(12, dtype=torch.float64)
    ift = ift_backward(hooks.b, dl_dz, hooks, SOLVER)
    phantom = phantom_1step(hooks.b, dl_dz, hooks)
    assert ift.adjoint_steps == 0
    assert torch.equal(ift.grads["b"], phantom.grads["b"])


def test_phantom_costs_one_parameter_vjp(model, toy):
    out = deq_forward(toy, model, SolverConfig(max_steps=100))
    hooks = ModelAdjointHooks(model, out.ctx)
    dl_dz, _ = hooks.vjp_heads(out.z, torch.tensor(1.0, dtype=torch.float64), torch.ones(toy.n_atoms, 3, dtype=torch.float64))
    phantom_1step(out.z, dl_dz, hooks)
    assert hooks.calls == Counter({"vjp_heads": 1, "linearize": 1, "vjp_theta": 1})

    ift_backward(out.z, dl_dz, hooks, SolverConfig(max_steps=100))
    assert hooks.calls["vjp_z"] > 0
    assert hooks.calls["linearize"] == 1


def check_gradients_by_finite_difference(model, system, n_params, seed):
    """dL/dtheta for L = E + <w, F> (heads plus IFT) against central differences of the solved loss."""
    cfg = SolverConfig(eps_train=1e-12, max_steps=400)
    gen = torch.Generator().manual_seed(seed)
    w = torch.randn(system.n_atoms, 3, generator=gen, dtype=torch.float64)

    def solved_loss() -> float:
        out = deq_forward(system, model, cfg)
        assert out.stats.converged
        return float(out.energy + (w * out.forces).sum())

    out = deq_forward(system, model, cfg)
    hooks = ModelAdjointHooks(model, out.ctx)
    dl_dz, head_grads = hooks.vjp_heads(out.z, torch.tensor(1.0, dtype=torch.float64), w)
    grads = (GradReport(grads=head_grads) + ift_backward(out.z, dl_dz, hooks, cfg)).grads

    params = dict(model.named_parameters())
    entries = [(name, i) for name, p in params.items() for i in range(p.numel())]
    rng = np.random.default_rng(seed)
    h = 1e-4
    for k in rng.choice(len(entries), size=n_params, replace=False):
        name, i = entries[k]
        flat = params[name].data.view(-1)
        values = []
        for sign in (1, -1):
            flat[i] += sign * h
            values.append(solved_loss())
            flat[i] -= sign * h
        fd = (values[0] - values[1]) / (2 * h)
        assert float(grads[name].reshape(-1)[i]) == pytest.approx(fd, rel=1e-4, abs=1e-6), (name, i)


def test_gradients_match_finite_difference(layer_config, graph_config, toy):
    model = ForceField(replace(layer_config, l_max=1), graph_config)
    check_gradients_by_finite_difference(model, toy, n_params=20, seed=0)


@pytest.mark.slow
def test_gradients_match_finite_difference_full(model, toy):
    check_gradients_by_finite_difference(model, toy, n_params=50, seed=1)
