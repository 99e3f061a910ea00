use nalgebra::DMatrix;

use super::VarianceComponents;
use crate::error::{Error, Result};

/// Block-diagonal marginal covariance of the observed effect sizes, one
/// block per study.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    pub blocks: Vec<DMatrix<f64>>,
}

impl BlockCovariance {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut out = DMatrix::zeros(m, m);
        let mut offset = 0;
        for b in &self.blocks {
            let k = b.nrows();
            out.view_mut((offset, offset), (k, k)).copy_from(b);
            offset += k;
        }
        out
    }
}

/// `V_j = σ²_ξ·J + σ²_ζ·I + diag(v_j)` for each study `j`.
pub fn marginal_covariance(
    groups: &[usize],
    varcomps: VarianceComponents,
    v: &[f64],
) -> Result<BlockCovariance> {
    varcomps.validate()?;
    if groups.iter().sum::<usize>() != v.len() {
        return Err(Error::invalid("study sizes do not add up to the number of trials"));
    }
    if let Some(bad) = v.iter().find(|&&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::invalid(format!("sampling variance must be positive, got {bad}")));
    }
    let mut blocks = Vec::with_capacity(groups.len());
    let mut start = 0;
    for &size in groups {
        let block = DMatrix::from_fn(size, size, |r, c| {
            let mut x = varcomps.sigma2_xi;
            if r == c {
                x += varcomps.sigma2_zeta + v[start + r];
            }
            x
        });
        blocks.push(block);
        start += size;
    }
    Ok(BlockCovariance { blocks })
}
