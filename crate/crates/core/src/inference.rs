//! Jacobian, weight matrix, sandwich covariance, clustered variance and the
//! descriptive diagnostics reported next to the estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estim::{residualize, Estimate};
use crate::model::{DesignMatrix, ParamTheta, VarGamma};
use crate::moments::MomentSystem;

/// Which `V` enters the sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceKind {
    /// `V = Ξ̂`, the model-implied variance under `γ̂`.
    #[default]
    Model,
    /// Classroom-clustered `V̂`.
    Clustered,
}

impl std::str::FromStr for VarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Self::Model),
            "clustered" | "cluster" => Ok(Self::Clustered),
            other => Err(Error::Config(format!("unknown variance `{other}` (model or clustered)"))),
        }
    }
}

/// `G = n⁻¹ ∂m/∂θ′`.
pub fn gradient_g(system: &MomentSystem<'_>, theta: &ParamTheta, gamma: &VarGamma) -> Result<DMatrix<f64>> {
    Ok(system.jacobian(theta, gamma)? / system.n())
}

/// `Ξ̂_n = n⁻¹ diag(H′H, 2tr(A²))`.
pub fn weight_xi(system: &MomentSystem<'_>) -> DMatrix<f64> {
    system.weight() / system.n()
}

fn inverse_sym(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(ch.inverse());
    }
    sym.try_inverse().ok_or(Error::NonInvertible)
}

/// `Ψ = (G′Ξ⁻¹G)⁻¹ G′Ξ⁻¹VΞ⁻¹G (G′Ξ⁻¹G)⁻¹`.
pub fn sandwich_psi(g: &DMatrix<f64>, xi: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xi_inv = inverse_sym(xi)?;
    let xg = &xi_inv * g;
    let bread = inverse_sym(&(g.transpose() * &xg))?;
    let meat = xg.transpose() * v * &xg;
    let psi = &bread * meat * &bread;
    Ok((&psi + psi.transpose()) * 0.5)
}

/// `Ψ = (G′Ξ⁻¹G)⁻¹`, the `V = Ξ` case.
pub fn efficient_psi(g: &DMatrix<f64>, xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xi_inv = inverse_sym(xi)?;
    inverse_sym(&(g.transpose() * xi_inv * g))
}

/// Classroom-clustered `V̂`: `Σ_c (H_c′u_c)(H_c′u_c)′/n` in the linear block,
/// `Σ_c (u_c′A_c u_c)²/n` for the quadratic moment, zero cross blocks.
pub fn clustered_v(system: &MomentSystem<'_>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = system.design;
    if u.len() != d.n() {
        return Err(Error::Dimension {
            expected: d.n(),
            got: u.len(),
        });
    }
    let k = system.h.ncols();
    let mut v = DMatrix::zeros(system.n_moments(), system.n_moments());
    let quad = system.a.quad_form_by_block(u.as_slice(), u.as_slice())?;
    for (c, w) in d.offsets.windows(2).enumerate() {
        let len = w[1] - w[0];
        let hc = system.h.rows(w[0], len);
        let s = hc.tr_mul(&u.rows(w[0], len));
        v.view_mut((0, 0), (k, k)).ger(1.0, &s, &s, 1.0);
        if system.spec.quadratic {
            v[(k, k)] += quad[c] * quad[c];
        }
    }
    Ok(v / system.n())
}

/// `λ = ρ/(1+ρ)` with delta-method standard error `se_ρ/(1+ρ)²`.
pub fn lambda_of_rho(rho: f64, se_rho: f64) -> Result<(f64, f64)> {
    if !(rho > -1.0) {
        return Err(Error::OutOfRange(format!("rho = {rho} must exceed -1")));
    }
    let d = 1.0 + rho;
    Ok((rho / d, se_rho / (d * d)))
}

/// `ρ = λ/(1−λ)`.
pub fn rho_of_lambda(lambda: f64) -> Result<f64> {
    if !(lambda < 1.0) {
        return Err(Error::OutOfRange(format!("lambda = {lambda} must be below 1")));
    }
    Ok(lambda / (1.0 - lambda))
}

/// Ranks with ties averaged, 1-based.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateVariance { group: 0, value: 0.0 });
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Config("Spearman needs at least two observations".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

fn sd(v: &DVector<f64>) -> f64 {
    variance(v.as_slice()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCorrs {
    pub y1_y2: f64,
    pub qx_y1_qx_y2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QxSd {
    pub y1: f64,
    pub y2: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `1 − var(u₁ − f₁u₂)/var(y₁ − f₁y₂)` per variance group.
    pub pseudo_r2: Vec<f64>,
    pub rank_corrs: RankCorrs,
    pub qx_sd: QxSd,
}

/// Pseudo R² per group, rank correlations and `Q_X` standard deviations at θ.
pub fn diagnostics(design: &DesignMatrix, theta: &ParamTheta) -> Result<Diagnostics> {
    let eps = design.eps_plus(theta)?;
    let raw = &design.y1 - &design.y2 * theta.f1;
    let mut pseudo_r2 = Vec::with_capacity(design.n_groups);
    for rows in design.group_rows() {
        let e: Vec<f64> = rows.iter().map(|&i| eps[i]).collect();
        let y: Vec<f64> = rows.iter().map(|&i| raw[i]).collect();
        let vy = variance(&y);
        // Undefined (reported as null) when y₁ − f₁y₂ is constant in the group.
        pseudo_r2.push(if vy > 0.0 { 1.0 - variance(&e) / vy } else { f64::NAN });
    }
    let qy1 = residualize(design, &design.y1)?;
    let qy2 = residualize(design, &design.y2)?;
    let qd = &qy1 - &qy2 * theta.f1;
    Ok(Diagnostics {
        pseudo_r2,
        rank_corrs: RankCorrs {
            y1_y2: spearman(design.y1.as_slice(), design.y2.as_slice())?,
            qx_y1_qx_y2: spearman(qy1.as_slice(), qy2.as_slice())?,
        },
        qx_sd: QxSd {
            y1: sd(&qy1),
            y2: sd(&qy2),
            diff: sd(&qd),
        },
    })
}

/// Standard errors, covariance and diagnostics at θ̂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    /// Aligned with (ρ, f₁, δ); a fixed ρ has standard error 0.
    pub se: Vec<f64>,
    /// Covariance of θ̂, `Ψ/n`.
    pub vcov: Vec<Vec<f64>>,
    pub g_hat: Vec<Vec<f64>>,
    pub xi_hat: Vec<Vec<f64>>,
    pub variance: VarianceKind,
    pub lambda: f64,
    pub se_lambda: f64,
    pub pseudo_r2: Vec<f64>,
    pub rank_corrs: RankCorrs,
    pub qx_sd: QxSd,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inference for a finished estimate.
pub fn infer(est: &Estimate, kind: VarianceKind) -> Result<InferenceReport> {
    let system = MomentSystem::new(&est.design, est.spec)?;
    let theta = &est.gmm.theta_hat;
    let gamma = &est.gmm.gamma_hat;
    let mut g = gradient_g(&system, theta, gamma)?;
    let xi = weight_xi(&system);
    let skip = usize::from(est.gmm.fixed_rho);
    if skip == 1 {
        g = g.remove_column(0);
    }
    if est.gmm.exact_fit {
        return exact_fit_report(est, g, xi, kind, skip == 1);
    }
    let psi = match kind {
        VarianceKind::Model => efficient_psi(&g, &xi)?,
        VarianceKind::Clustered => {
            let u = est.design.u_plus(theta, gamma)?;
            let v = clustered_v(&system, &u)?;
            sandwich_psi(&g, &xi, &v)?
        }
    };
    let n = system.n();
    let free = psi / n;
    let k = theta.dim();
    let mut vcov = DMatrix::zeros(k, k);
    vcov.view_mut((skip, skip), (k - skip, k - skip)).copy_from(&free);
    let se: Vec<f64> = (0..k).map(|i| vcov[(i, i)].max(0.0).sqrt()).collect();
    let (lambda, se_lambda) = lambda_of_rho(theta.rho, se[0])?;
    let diag = diagnostics(&est.design, theta)?;
    Ok(InferenceReport {
        se,
        vcov: rows_of(&vcov),
        g_hat: rows_of(&g),
        xi_hat: rows_of(&xi),
        variance: kind,
        lambda,
        se_lambda,
        pseudo_r2: diag.pseudo_r2,
        rank_corrs: diag.rank_corrs,
        qx_sd: diag.qx_sd,
    })
}

/// Zero residual variance: f₁ and δ have standard error 0, ρ is not
/// identified (NaN unless held fixed).
fn exact_fit_report(
    est: &Estimate,
    g: DMatrix<f64>,
    xi: DMatrix<f64>,
    kind: VarianceKind,
    fixed_rho: bool,
) -> Result<InferenceReport> {
    let theta = &est.gmm.theta_hat;
    let k = theta.dim();
    let mut vcov = DMatrix::zeros(k, k);
    if !fixed_rho {
        vcov[(0, 0)] = f64::NAN;
    }
    let se: Vec<f64> = (0..k).map(|i| vcov[(i, i)].sqrt()).collect();
    let (lambda, se_lambda) = lambda_of_rho(theta.rho, se[0])?;
    let diag = diagnostics(&est.design, theta)?;
    Ok(InferenceReport {
        se,
        vcov: rows_of(&vcov),
        g_hat: rows_of(&g),
        xi_hat: rows_of(&xi),
        variance: kind,
        lambda,
        se_lambda,
        pseudo_r2: diag.pseudo_r2,
        rank_corrs: diag.rank_corrs,
        qx_sd: diag.qx_sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_of_rho(0.0, 0.1).unwrap().0, 0.0);
        let (l, s) = lambda_of_rho(0.424, 0.1).unwrap();
        assert!((l - 0.2978).abs() < 5e-5);
        assert!((s - 0.1 / 1.424f64.powi(2)).abs() < 1e-15);
        assert!((rho_of_lambda(0.85).unwrap() - 5.667).abs() < 5e-4);
        assert!(lambda_of_rho(-1.0, 0.1).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let y = [3.0, 1.0, 4.0, 1.5, 9.0];
        assert!((spearman(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sandwich_reduces_to_efficient() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.3, 2.0, -0.5, 0.7]);
        let xi = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.5, 0.0, 0.0, 0.0, 0.8]);
        let a = sandwich_psi(&g, &xi, &xi).unwrap();
        let b = efficient_psi(&g, &xi).unwrap();
        assert!((a - b).amax() < 1e-10);
        let s = sandwich_psi(
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 3.0),
            &DMatrix::from_element(1, 1, 5.0),
        )
        .unwrap();
        assert!((s[(0, 0)] - 5.0 / 4.0).abs() < 1e-15);
    }
}
