//! Block-diagonal algebra for per-time observation covariances.

use nalgebra::DVector;

use crate::error::{OedError, Result};
use crate::linalg::sym::{spd_factorize, SymMatrix};

/// Block-diagonal matrix `⊕_m B_m` with square blocks of equal dimension.
///
/// Application and inversion act blockwise. With identical blocks the dense
/// form equals the Kronecker product `I_{n_t} ⊗ B`.
#[derive(Debug, Clone)]
pub struct BlockDiag {
    blocks: Vec<SymMatrix>,
    block_dim: usize,
}

impl BlockDiag {
    pub fn new(blocks: Vec<SymMatrix>) -> Result<Self> {
        let block_dim = blocks.first().map(SymMatrix::dim).unwrap_or(0);
        if blocks.iter().any(|b| b.dim() != block_dim) {
            return Err(OedError::dims(
                format!("{block_dim}x{block_dim} blocks"),
                "mixed block dimensions".to_string(),
                "block diagonal",
            ));
        }
        Ok(BlockDiag { blocks, block_dim })
    }

    /// `n_t` identical copies of one block.
    pub fn repeated(block: SymMatrix, count: usize) -> Self {
        let block_dim = block.dim();
        BlockDiag {
            blocks: vec![block; count],
            block_dim,
        }
    }

    pub fn count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    /// Total dimension `block_dim · count`.
    pub fn dim(&self) -> usize {
        self.block_dim * self.blocks.len()
    }

    pub fn block(&self, m: usize) -> &SymMatrix {
        &self.blocks[m]
    }

    pub fn blocks(&self) -> &[SymMatrix] {
        &self.blocks
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(OedError::dims(
                self.dim().to_string(),
                v.len().to_string(),
                "block-diagonal apply",
            ));
        }
        let mut out = DVector::zeros(self.dim());
        for (m, b) in self.blocks.iter().enumerate() {
            let lo = m * self.block_dim;
            let seg = v.rows(lo, self.block_dim).into_owned();
            out.rows_mut(lo, self.block_dim).copy_from(&b.apply(&seg));
        }
        Ok(out)
    }

    /// Blockwise inverse: `(⊕ B_m)⁻¹ = ⊕ B_m⁻¹`. Every block must be SPD.
    pub fn inverse(&self) -> Result<BlockDiag> {
        let mut inv_blocks = Vec::with_capacity(self.blocks.len());
        for (m, b) in self.blocks.iter().enumerate() {
            let f = spd_factorize(b).map_err(|_| OedError::SingularBlock { index: m })?;
            inv_blocks.push(f.inverse());
        }
        Ok(BlockDiag {
            blocks: inv_blocks,
            block_dim: self.block_dim,
        })
    }

    pub fn to_dense(&self) -> SymMatrix {
        let n = self.dim();
        let mut dense = nalgebra::DMatrix::zeros(n, n);
        for (m, b) in self.blocks.iter().enumerate() {
            let lo = m * self.block_dim;
            dense
                .view_mut((lo, lo), (self.block_dim, self.block_dim))
                .copy_from(b.as_matrix());
        }
        SymMatrix::from_symmetric_unchecked(dense)
    }

    /// Blockwise Hadamard product.
    pub fn hadamard(&self, other: &BlockDiag) -> Result<BlockDiag> {
        if self.block_dim != other.block_dim || self.count() != other.count() {
            return Err(OedError::StructureMismatch(format!(
                "block layout {}x{} blocks vs {}x{} blocks",
                self.count(),
                self.block_dim,
                other.count(),
                other.block_dim
            )));
        }
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.hadamard(b))
            .collect::<Result<Vec<_>>>()?;
        BlockDiag::new(blocks)
    }
}
