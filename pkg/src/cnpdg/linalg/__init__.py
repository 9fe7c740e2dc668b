"""Sparse linear algebra: CSR utilities, Krylov methods, and preconditioners."""

from .csr import as_canonical_csr, load_matrix_market, save_matrix_market, spmv, validate_csr
from .direct import DirectLU
from .fieldsplit import (
    BlockOperator,
    FieldsplitPreconditioner,
    direct_inner,
    krylov_inner,
    split_vector,
)
from .ilu import Ilu0Factor, ZeroPivotError, ilu0_apply, ilu0_factor
from .krylov import (
    IndefiniteOperatorError,
    KrylovConfig,
    KrylovResult,
    cg,
    fgmres,
    gmres,
    solve,
)
from .multigrid import (
    GmgHierarchy,
    GmgLevel,
    GmgPreconditioner,
    dg_prolongation,
    gmg_vcycle,
    project_to_coarse,
)
from .schwarz import (
    AsmPartition,
    AsmPreconditioner,
    asm_apply,
    asm_dof_sets,
    asm_setup,
    element_adjacency,
    element_centroids,
    element_dofs,
    grow_by_one_layer,
    ilu0_preconditioner,
    rcb_partition,
)

__all__ = [
    "as_canonical_csr",
    "load_matrix_market",
    "save_matrix_market",
    "spmv",
    "validate_csr",
    "DirectLU",
    "BlockOperator",
    "FieldsplitPreconditioner",
    "direct_inner",
    "krylov_inner",
    "split_vector",
    "Ilu0Factor",
    "ZeroPivotError",
    "ilu0_apply",
    "ilu0_factor",
    "IndefiniteOperatorError",
    "KrylovConfig",
    "KrylovResult",
    "cg",
    "fgmres",
    "gmres",
    "solve",
    "GmgHierarchy",
    "GmgLevel",
    "GmgPreconditioner",
    "dg_prolongation",
    "gmg_vcycle",
    "project_to_coarse",
    "AsmPartition",
    "AsmPreconditioner",
    "asm_apply",
    "asm_dof_sets",
    "asm_setup",
    "element_adjacency",
    "element_centroids",
    "element_dofs",
    "grow_by_one_layer",
    "ilu0_preconditioner",
    "rcb_partition",
]
