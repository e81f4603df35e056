import math

import numpy as np
import pytest
import torch

from deqff.irreps import (
    IrrepsLayout,
    IrrepsTensor,
    Rotation,
    apply_rotation,
    clebsch_gordan,
    spherical_harmonics,
    tensor_product,
    tensor_product_paths,
    vector_to_y1,
    wigner_d,
    y1_to_vector,
)


def unit_vectors(n, seed=0):
    u = np.random.default_rng(seed).normal(size=(n, 3))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def test_harmonics_norm():
    for l, y in enumerate(spherical_harmonics(3, unit_vectors(50))):
        assert y.shape == (50, 2 * l + 1)
        np.testing.assert_allclose(y.pow(2).sum(dim=-1).numpy(), 2 * l + 1, atol=1e-12)


def test_degree_one_is_scaled_vector():
    u = unit_vectors(5)
    y1 = spherical_harmonics(1, u)[1].numpy()
    np.testing.assert_allclose(y1, math.sqrt(3) * u[:, [1, 2, 0]], atol=1e-14)
    v = torch.from_numpy(u)
    assert torch.equal(y1_to_vector(vector_to_y1(v)), v)


def test_harmonics_at_poles():
    y = spherical_harmonics(2, np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]))
    assert torch.isfinite(y[2]).all()
    np.testing.assert_allclose(y[2][:, 2].numpy(), math.sqrt(5), atol=1e-12)


def test_harmonics_reject_bad_input():
    with pytest.raises(ValueError):
        spherical_harmonics(4, unit_vectors(2))
    with pytest.raises(ValueError):
        spherical_harmonics(1, np.array([[1.0, 1.0, 0.0]]))


@pytest.mark.parametrize("l", [0, 1, 2, 3])
def test_wigner_orthogonal_and_equivariant(l, rotation):
    D = wigner_d(l, rotation)
    np.testing.assert_allclose((D @ D.T).numpy(), np.eye(2 * l + 1), atol=1e-10)
    u = unit_vectors(20, seed=l)
    lhs = spherical_harmonics(l, rotation.apply(u))[l]
    rhs = spherical_harmonics(l, u)[l] @ D.T
    np.testing.assert_allclose(lhs.numpy(), rhs.numpy(), atol=1e-10)


def test_wigner_homomorphism():
    rng = np.random.default_rng(5)
    r1, r2 = Rotation.random(rng), Rotation.random(rng)
    for l in (1, 2):
        np.testing.assert_allclose(
            wigner_d(l, r1 @ r2).numpy(), (wigner_d(l, r1) @ wigner_d(l, r2)).numpy(), atol=1e-10
        )


def test_wigner_degree_one_matches_rotation(rotation):
    perm = [1, 2, 0]
    expected = rotation.matrix[np.ix_(perm, perm)]
    np.testing.assert_allclose(wigner_d(1, rotation).numpy(), expected, atol=1e-10)


def test_rotation_validation():
    with pytest.raises(ValueError):
        Rotation(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Rotation(2.0 * np.eye(3))
    with pytest.raises(ValueError):
        Rotation(np.eye(2))


def test_cg_forbidden_path():
    path = clebsch_gordan(0, 1, 2)
    assert not path.allowed
    assert path.coefficients.shape == (1, 3, 5)
    assert torch.count_nonzero(path.coefficients) == 0


@pytest.mark.parametrize("l1,l2,l3", [(1, 1, 0), (1, 1, 1), (1, 1, 2), (2, 1, 1), (2, 2, 2), (1, 2, 3)])
def test_cg_normalization_and_invariance(l1, l2, l3, rotation):
    C = clebsch_gordan(l1, l2, l3).coefficients
    assert float(C.pow(2).sum()) == pytest.approx(2 * l3 + 1, abs=1e-10)
    D1, D2, D3 = (wigner_d(l, rotation) for l in (l1, l2, l3))
    rotated = torch.einsum("ai,bj,ck,ijk->abc", D1, D2, D3, C)
    np.testing.assert_allclose(rotated.numpy(), C.numpy(), atol=1e-9)


def test_cg_scalar_paths():
    for l in range(4):
        np.testing.assert_allclose(clebsch_gordan(0, l, l).coefficients[0].numpy(), np.eye(2 * l + 1), atol=1e-10)
    f = torch.tensor([0.3, -1.2, 0.7], dtype=torch.float64)
    g = torch.tensor([1.1, 0.4, -0.5], dtype=torch.float64)
    C = clebsch_gordan(1, 1, 0).coefficients
    dot = torch.einsum("i,j,ijk->k", f, g, C)
    assert float(dot) == pytest.approx(float(f @ g) / math.sqrt(3), abs=1e-12)
    cross = torch.einsum("i,j,ijk->k", f, g, clebsch_gordan(1, 1, 1).coefficients)
    assert float(cross.norm()) == pytest.approx(float(torch.linalg.cross(f, g).norm()) / math.sqrt(2), abs=1e-12)


def test_layout_split_merge():
    layout = IrrepsLayout.uniform(2, 3)
    assert layout.dim == 3 * (1 + 3 + 5)
    data = torch.arange(2 * layout.dim, dtype=torch.float64).reshape(2, layout.dim)
    blocks = layout.split(data)
    assert [tuple(b.shape) for b in blocks] == [(2, 3, 1), (2, 3, 3), (2, 3, 5)]
    assert torch.equal(layout.merge(blocks), data)
    empty = torch.zeros(0, layout.dim, dtype=torch.float64)
    assert layout.merge(layout.split(empty)).shape == (0, layout.dim)


def test_layout_validation():
    with pytest.raises(ValueError):
        IrrepsLayout(((1, 2), (0, 2)))
    with pytest.raises(ValueError):
        IrrepsLayout(((0, 0),))
    with pytest.raises(ValueError):
        IrrepsTensor(IrrepsLayout.uniform(1, 2), torch.zeros(3, 5))


def test_tensor_product_equivariance(rotation):
    gen = torch.Generator().manual_seed(0)
    C = 3
    layout = IrrepsLayout.uniform(2, C)
    sh_layout = IrrepsLayout(((0, 1), (1, 1), (2, 1)))
    paths = tensor_product_paths(layout, sh_layout, layout)
    u = unit_vectors(4)
    sh = IrrepsTensor.from_blocks(sh_layout, [b[:, None, :] for b in spherical_harmonics(2, u)])
    sh_rot = IrrepsTensor.from_blocks(
        sh_layout, [b[:, None, :] for b in spherical_harmonics(2, rotation.apply(u))]
    )
    f = IrrepsTensor(layout, torch.randn(4, layout.dim, generator=gen, dtype=torch.float64))
    w = torch.randn(4, len(paths), C, generator=gen, dtype=torch.float64)

    out = tensor_product(f, sh, w, layout, paths)
    out_rot = tensor_product(apply_rotation(f, rotation), sh_rot, w, layout, paths)
    np.testing.assert_allclose(out_rot.data.numpy(), apply_rotation(out, rotation).data.numpy(), atol=1e-9)


def test_tensor_product_rejects_bad_weights():
    layout = IrrepsLayout.uniform(1, 2)
    f = IrrepsTensor(layout, torch.ones(1, layout.dim, dtype=torch.float64))
    paths = tensor_product_paths(layout, layout, layout)
    with pytest.raises(ValueError):
        tensor_product(f, f, torch.ones(1, len(paths) + 1, 2, dtype=torch.float64), layout, paths)
