//! Dense symmetric-matrix substrate used by every other module.
//!
//! Everything here is desk scale: matrices are dense, dimensions stay in the
//! low thousands, and correctness is preferred over cleverness. The module
//! provides symmetric matrices with enforced symmetry, Cholesky factorization
//! with cached log-determinants, block-diagonal algebra, Hadamard products, a
//! two-pass randomized eigensolver, and Rademacher probe generation.

mod block;
mod randomized;
mod sym;

pub use block::BlockDiag;
pub use randomized::{rademacher_probes, two_pass_eigs, EigPairs};
pub use sym::{spd_factorize, CholFactor, SymMatrix};
