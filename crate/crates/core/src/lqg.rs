//! Finite-horizon LQG feedback by backward Riccati recursion.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::linalg::symmetrize;
use crate::model::{CostBlocks, SystemModel};

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// `K_0 … K_{N-1}`, with `u_t = K_t x_t`.
    pub gains: Vec<DMatrix<f64>>,
    /// Cost-to-go matrices `P_0 … P_N`.
    pub value: Vec<DMatrix<f64>>,
}

pub fn riccati_recursion(sys: &SystemModel, cost: &CostBlocks, horizon: usize) -> Result<RiccatiSolution> {
    check_dim("cost horizon", horizon, cost.horizon())?;
    check_dim("state weight", sys.n(), cost.q_blocks()[0].nrows())?;
    check_dim("input weight", sys.m(), cost.r_blocks()[0].nrows())?;
    let (a, b) = (sys.a_bar(), sys.b_bar());
    let mut p = cost.q_blocks()[horizon].clone();
    let mut gains = vec![DMatrix::zeros(sys.m(), sys.n()); horizon];
    let mut value = vec![DMatrix::zeros(sys.n(), sys.n()); horizon + 1];
    value[horizon] = p.clone();
    for t in (0..horizon).rev() {
        let btp = b.transpose() * &p;
        let s = symmetrize(&(&cost.r_blocks()[t] + &btp * b));
        let chol = s.cholesky().ok_or(Error::RiccatiBreakdown { stage: t })?;
        let k = -chol.solve(&(&btp * a));
        p = symmetrize(&(&cost.q_blocks()[t] + a.transpose() * &p * (a + b * &k)));
        if p.clone().cholesky().is_none() {
            return Err(Error::RiccatiBreakdown { stage: t });
        }
        gains[t] = k;
        value[t] = p.clone();
    }
    Ok(RiccatiSolution { gains, value })
}

pub fn riccati_lqg(sys: &SystemModel, cost: &CostBlocks, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    Ok(riccati_recursion(sys, cost, horizon)?.gains)
}
