//! Plant description and its lifted finite-horizon form.
//!
//! Over a horizon `N` the trajectory `x = (x_0, ..., x_N)` of
//! `x_{t+1} = Ā x_t + B̄ u_t + w_t` is the affine map `x = A x_0 + B u + D w`
//! where `u = (u_0, ..., u_{N-1})` and `w = (w_0, ..., w_{N-1})`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{is_spd, matrix_power};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    a_bar: DMatrix<f64>,
    b_bar: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a_bar: DMatrix<f64>, b_bar: DMatrix<f64>) -> Result<Self> {
        check_dim("state matrix columns", a_bar.nrows(), a_bar.ncols())?;
        check_dim("input matrix rows", a_bar.nrows(), b_bar.nrows())?;
        if a_bar.nrows() == 0 || b_bar.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "state and input dimensions must be positive".into(),
            ));
        }
        if !a_bar.iter().chain(b_bar.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("system matrices"));
        }
        Ok(Self { a_bar, b_bar })
    }

    pub fn a_bar(&self) -> &DMatrix<f64> {
        &self.a_bar
    }

    pub fn b_bar(&self) -> &DMatrix<f64> {
        &self.b_bar
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a_bar.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b_bar.ncols()
    }

    /// One step of the plant.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a_bar * x + &self.b_bar * u + w
    }
}

/// Lifted matrices for a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    horizon: usize,
    n: usize,
    m: usize,
}

impl LiftedModel {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `A x_0 + B u + D w`.
    pub fn trajectory(
        &self,
        x0: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("initial state", self.n, x0.len())?;
        check_dim("stacked inputs", self.horizon * self.m, u.len())?;
        check_dim("stacked noise", self.horizon * self.n, w.len())?;
        Ok(&self.a * x0 + &self.b * u + &self.d * w)
    }
}

pub fn build_lifted_dynamics(sys: &SystemModel, horizon: usize) -> Result<LiftedModel> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let (n, m) = (sys.n(), sys.m());
    let powers: Vec<DMatrix<f64>> = (0..=horizon).map(|k| matrix_power(sys.a_bar(), k)).collect();

    let mut a = DMatrix::zeros((horizon + 1) * n, n);
    let mut b = DMatrix::zeros((horizon + 1) * n, horizon * m);
    let mut d = DMatrix::zeros((horizon + 1) * n, horizon * n);
    for k in 0..=horizon {
        a.view_mut((k * n, 0), (n, n)).copy_from(&powers[k]);
        for j in 0..k {
            let p = &powers[k - 1 - j];
            b.view_mut((k * n, j * m), (n, m)).copy_from(&(p * sys.b_bar()));
            d.view_mut((k * n, j * n), (n, n)).copy_from(p);
        }
    }
    Ok(LiftedModel {
        a,
        b,
        d,
        horizon,
        n,
        m,
    })
}

/// Block-diagonal stage weights `Q = diag(Q_0..Q_N)`, `R = diag(R_0..R_{N-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBlocks {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    q_blocks: Vec<DMatrix<f64>>,
    r_blocks: Vec<DMatrix<f64>>,
}

impl CostBlocks {
    pub fn horizon(&self) -> usize {
        self.r_blocks.len()
    }

    pub fn q_blocks(&self) -> &[DMatrix<f64>] {
        &self.q_blocks
    }

    pub fn r_blocks(&self) -> &[DMatrix<f64>] {
        &self.r_blocks
    }

    /// Time-invariant weights with a separate terminal weight.
    pub fn stationary(
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        q_terminal: &DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let mut q_list = vec![q.clone(); horizon];
        q_list.push(q_terminal.clone());
        build_cost_blocks(q_list, vec![r.clone(); horizon])
    }
}

pub fn build_cost_blocks(
    q_list: Vec<DMatrix<f64>>,
    r_list: Vec<DMatrix<f64>>,
) -> Result<CostBlocks> {
    if r_list.is_empty() {
        return Err(Error::InvalidArgument("need at least one input weight".into()));
    }
    check_dim("number of state weights", r_list.len() + 1, q_list.len())?;
    let n = q_list[0].nrows();
    let m = r_list[0].nrows();
    for (i, q) in q_list.iter().enumerate() {
        check_dim("state weight size", n, q.nrows())?;
        if !is_spd(q) {
            return Err(Error::NotPositiveDefinite {
                what: "state weight",
                index: i,
            });
        }
    }
    for (i, r) in r_list.iter().enumerate() {
        check_dim("input weight size", m, r.nrows())?;
        if !is_spd(r) {
            return Err(Error::NotPositiveDefinite {
                what: "input weight",
                index: i,
            });
        }
    }
    Ok(CostBlocks {
        q: block_diagonal(&q_list),
        r: block_diagonal(&r_list),
        q_blocks: q_list,
        r_blocks: r_list,
    })
}

pub(crate) fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// Realised cost `xᵀQx + uᵀRu` along one noise path.
pub fn sample_cost(
    lifted: &LiftedModel,
    cost: &CostBlocks,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    check_dim("cost horizon", lifted.horizon(), cost.horizon())?;
    check_dim("state weight size", lifted.n() * (lifted.horizon() + 1), cost.q.nrows())?;
    let x = lifted.trajectory(x0, u, w)?;
    let value = x.dot(&(&cost.q * &x)) + u.dot(&(&cost.r * u));
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_lift_expands_by_hand() {
        let sys = SystemModel::new(scalar(2.0), scalar(1.0)).unwrap();
        let l = build_lifted_dynamics(&sys, 2).unwrap();
        assert_eq!(l.a, dmatrix![1.0; 2.0; 4.0]);
        assert_eq!(l.b, dmatrix![0.0, 0.0; 1.0, 0.0; 2.0, 1.0]);
        assert_eq!(l.d, dmatrix![0.0, 0.0; 1.0, 0.0; 2.0, 1.0]);
    }

    #[test]
    fn horizon_one_is_identity_over_abar() {
        let a = dmatrix![0.5, 1.0; -0.2, 0.9];
        let b = dmatrix![1.0; 2.0];
        let sys = SystemModel::new(a.clone(), b.clone()).unwrap();
        let l = build_lifted_dynamics(&sys, 1).unwrap();
        let mut expect_a = DMatrix::zeros(4, 2);
        expect_a.view_mut((0, 0), (2, 2)).fill_with_identity();
        expect_a.view_mut((2, 0), (2, 2)).copy_from(&a);
        assert_eq!(l.a, expect_a);
        assert_eq!(l.b.rows(2, 2), b);
        assert!(l.b.rows(0, 2).iter().all(|&v| v == 0.0));
        assert_eq!(l.d.rows(2, 2), DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn rejects_zero_horizon_and_bad_shapes() {
        let sys = SystemModel::new(scalar(1.0), scalar(1.0)).unwrap();
        assert!(build_lifted_dynamics(&sys, 0).is_err());
        assert!(SystemModel::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 1)).is_err());
        assert!(SystemModel::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1)).is_err());
        assert!(SystemModel::new(scalar(f64::NAN), scalar(1.0)).is_err());
    }

    #[test]
    fn cost_blocks_assemble_block_diagonal() {
        let q = DMatrix::<f64>::identity(3, 3) * 3.0;
        let c = CostBlocks::stationary(&q, &scalar(1.0), &q, 4).unwrap();
        assert_eq!(c.q.nrows(), 15);
        for t in 0..5 {
            assert_eq!(c.q.view((3 * t, 3 * t), (3, 3)), q);
        }
        assert_eq!(c.r, DMatrix::<f64>::identity(4, 4));
        assert_eq!(c.q, c.q.transpose());

        let single = build_cost_blocks(vec![scalar(1.0), scalar(1.0)], vec![scalar(1.0)]).unwrap();
        assert_eq!(single.q, DMatrix::<f64>::identity(2, 2));
        assert_eq!(single.r, scalar(1.0));
    }

    #[test]
    fn cost_blocks_reject_non_spd() {
        let bad = dmatrix![1.0, 0.5; 0.4, 1.0];
        let good = DMatrix::<f64>::identity(2, 2);
        let err = build_cost_blocks(vec![good.clone(), bad, good.clone()], vec![scalar(1.0); 2])
            .unwrap_err();
        assert_eq!(
            err,
            Error::NotPositiveDefinite {
                what: "state weight",
                index: 1
            }
        );
        let indefinite = dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(build_cost_blocks(vec![good.clone(), indefinite], vec![scalar(1.0)]).is_err());
        assert!(build_cost_blocks(vec![good.clone(), good], vec![scalar(0.0)]).is_err());
    }

    #[test]
    fn sample_cost_by_hand() {
        let sys = SystemModel::new(scalar(1.0), scalar(1.0)).unwrap();
        let l = build_lifted_dynamics(&sys, 1).unwrap();
        let c = build_cost_blocks(vec![scalar(1.0), scalar(1.0)], vec![scalar(1.0)]).unwrap();
        let x0 = DVector::from_element(1, 1.0);
        let u = DVector::from_element(1, -1.0);
        let w = DVector::zeros(1);
        assert_eq!(sample_cost(&l, &c, &x0, &u, &w).unwrap(), 2.0);
        let zero = DVector::zeros(1);
        assert_eq!(sample_cost(&l, &c, &zero, &zero, &zero).unwrap(), 0.0);
    }
}
