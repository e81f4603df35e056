from .cg import (
    CGPath,
    CGTable,
    cg_table,
    clebsch_gordan,
    tensor_product,
    tensor_product_paths,
    triangle,
)
from .harmonics import spherical_harmonics, vector_to_y1, y1_to_vector
from .layout import DTYPE, MAX_DEGREE, IrrepsLayout, IrrepsTensor, Rotation
from .wigner import apply_rotation, as_rotation, wigner_d

__all__ = [
    "CGPath",
    "CGTable",
    "DTYPE",
    "IrrepsLayout",
    "IrrepsTensor",
    "MAX_DEGREE",
    "Rotation",
    "apply_rotation",
    "as_rotation",
    "cg_table",
    "clebsch_gordan",
    "spherical_harmonics",
    "tensor_product",
    "tensor_product_paths",
    "triangle",
    "vector_to_y1",
    "wigner_d",
    "y1_to_vector",
]
