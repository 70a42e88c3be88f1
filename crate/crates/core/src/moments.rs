//! Linear and quadratic moment conditions, their Jacobian, and the GMM
//! criterion `Q_n`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::blockmat::{AChoice, BlockDiag};
use crate::error::{Error, Result};
use crate::model::{DesignMatrix, ParamTheta, VarGamma};

/// Instruments `H = [X, z]` and the quadratic-moment operator `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub a_choice: AChoice,
    /// Include the quadratic moment `u⁺′Au⁺`.
    pub quadratic: bool,
}

impl Default for MomentSpec {
    fn default() -> Self {
        Self {
            a_choice: AChoice::M,
            quadratic: true,
        }
    }
}

/// Precomputed pieces of the moment system for one design.
#[derive(Debug, Clone)]
pub struct MomentSystem<'a> {
    pub design: &'a DesignMatrix,
    pub spec: MomentSpec,
    pub h: DMatrix<f64>,
    pub hth: DMatrix<f64>,
    hth_chol: Cholesky<f64, Dyn>,
    pub a: BlockDiag,
    pub tr_a2: f64,
}

/// Moment vector and the residual it was built from.
#[derive(Debug, Clone)]
pub struct Moments {
    /// Transformed residual `u⁺`.
    pub u: DVector<f64>,
    /// `(H′u⁺, u⁺′Au⁺)` (the second entry only when the quadratic moment is on).
    pub m: DVector<f64>,
}

/// Value, gradient and Gauss–Newton Hessian of `Q_n`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub q: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub moments: Moments,
}

impl<'a> MomentSystem<'a> {
    pub fn new(design: &'a DesignMatrix, spec: MomentSpec) -> Result<Self> {
        let h = design.h();
        let hth = h.transpose() * &h;
        let hth_chol = Cholesky::new(hth.clone()).ok_or_else(|| {
            Error::Collinear("instrument matrix H = [X, z] is rank deficient".into())
        })?;
        let names: Vec<String> = design
            .labels
            .iter()
            .map(|l| l.name.clone())
            .chain(design.z_labels.iter().map(|z| format!("z:{z}")))
            .collect();
        crate::model::check_rank(&h, &names, 1e-12)?;
        let a = design.a_operator(spec.a_choice)?;
        let tr_a2 = a.trace_of_square();
        if spec.quadratic && !(tr_a2 > 0.0) {
            return Err(Error::Config(
                "tr(A^2) = 0: no classroom has enough observed students for the quadratic moment".into(),
            ));
        }
        Ok(Self {
            design,
            spec,
            h,
            hth,
            hth_chol,
            a,
            tr_a2,
        })
    }

    pub fn n(&self) -> f64 {
        self.design.n() as f64
    }

    /// Number of moments.
    pub fn n_moments(&self) -> usize {
        self.h.ncols() + usize::from(self.spec.quadratic)
    }

    pub fn moments(&self, theta: &ParamTheta, gamma: &VarGamma) -> Result<Moments> {
        let u = self.design.u_plus(theta, gamma)?;
        self.moments_from_u(u)
    }

    pub fn moments_from_u(&self, u: DVector<f64>) -> Result<Moments> {
        let lin = self.h.tr_mul(&u);
        let k = lin.len();
        let mut m = DVector::zeros(self.n_moments());
        m.rows_mut(0, k).copy_from(&lin);
        if self.spec.quadratic {
            m[k] = self.a.quad_form(u.as_slice(), u.as_slice())?;
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("moment vector".into()));
        }
        Ok(Moments { u, m })
    }

    /// `W⁻¹v` for `W = diag(H′H, 2tr(A²))`.
    pub fn w_inv_mul(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.h.ncols();
        let mut out = v.clone();
        let top = self.hth_chol.solve(&v.rows(0, k).into_owned());
        out.rows_mut(0, k).copy_from(&top);
        if self.spec.quadratic {
            let w = 2.0 * self.tr_a2;
            out.row_mut(k).iter_mut().for_each(|x| *x /= w);
        }
        out
    }

    /// `W = diag(H′H, 2tr(A²))`, so that `Ξ̂_n = W/n`.
    pub fn weight(&self) -> DMatrix<f64> {
        let k = self.h.ncols();
        let mut w = DMatrix::zeros(self.n_moments(), self.n_moments());
        w.view_mut((0, 0), (k, k)).copy_from(&self.hth);
        if self.spec.quadratic {
            w[(k, k)] = 2.0 * self.tr_a2;
        }
        w
    }

    /// `Q_n = n⁻¹ m′W⁻¹m`.
    pub fn qn_of(&self, m: &DVector<f64>) -> f64 {
        let mm = DMatrix::from_column_slice(m.len(), 1, m.as_slice());
        let wm = self.w_inv_mul(&mm);
        m.dot(&wm.column(0)) / self.n()
    }

    pub fn qn(&self, theta: &ParamTheta, gamma: &VarGamma) -> Result<f64> {
        Ok(self.qn_of(&self.moments(theta, gamma)?.m))
    }

    /// Columns `∂u⁺/∂(ρ, f₁, δ′)` at θ.
    pub fn du(&self, theta: &ParamTheta, gamma: &VarGamma) -> Result<DMatrix<f64>> {
        let d = self.design;
        let r = d.residual(theta)?;
        let (t, dt) = d.whitening(theta.rho, gamma)?;
        let n = d.n();
        let mut out = DMatrix::zeros(n, theta.dim());
        let col = dt.apply(r.as_slice())?;
        out.column_mut(0).copy_from_slice(&col);
        let col = t.apply(d.y2.as_slice())?;
        out.column_mut(1).copy_from_slice(&col);
        out.column_mut(1).neg_mut();
        for k in 0..d.p_x() {
            let col = t.apply(d.x.column(k).as_slice())?;
            let mut c = out.column_mut(k + 2);
            c.copy_from_slice(&col);
            c.neg_mut();
        }
        Ok(out)
    }

    /// Raw Jacobian `D = ∂m/∂θ′ = [H′∂u⁺; 2u⁺′A∂u⁺]`.
    pub fn jacobian_from(&self, u: &DVector<f64>, du: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = self.h.ncols();
        let mut d = DMatrix::zeros(self.n_moments(), du.ncols());
        d.rows_mut(0, k).copy_from(&(self.h.transpose() * du));
        if self.spec.quadratic {
            let au = DVector::from_vec(self.a.apply(u.as_slice())?);
            let row = du.tr_mul(&au) * 2.0;
            d.row_mut(k).copy_from(&row.transpose());
        }
        Ok(d)
    }

    pub fn jacobian(&self, theta: &ParamTheta, gamma: &VarGamma) -> Result<DMatrix<f64>> {
        let u = self.design.u_plus(theta, gamma)?;
        let du = self.du(theta, gamma)?;
        self.jacobian_from(&u, &du)
    }

    /// `Q_n`, its gradient `(2/n)D′W⁻¹m` and Gauss–Newton Hessian `(2/n)D′W⁻¹D`.
    pub fn evaluate(&self, theta: &ParamTheta, gamma: &VarGamma) -> Result<Evaluation> {
        let moments = self.moments(theta, gamma)?;
        let du = self.du(theta, gamma)?;
        let d = self.jacobian_from(&moments.u, &du)?;
        let n = self.n();
        let mm = DMatrix::from_column_slice(moments.m.len(), 1, moments.m.as_slice());
        let wm = self.w_inv_mul(&mm);
        let wd = self.w_inv_mul(&d);
        let q = moments.m.dot(&wm.column(0)) / n;
        let grad = (d.transpose() * wm.column(0)) * (2.0 / n);
        let hess = (d.transpose() * wd) * (2.0 / n);
        Ok(Evaluation {
            q,
            grad,
            hess,
            moments,
        })
    }
}
