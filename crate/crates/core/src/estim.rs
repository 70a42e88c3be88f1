//! First-step estimators, class-type variance estimation, and efficient GMM.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blockmat::AChoice;
use crate::error::{Error, Result};
use crate::model::{build_design, DesignMatrix, DesignOptions, ParamBounds, ParamTheta, Sample, VarGamma};
use crate::moments::{MomentSpec, MomentSystem};
use crate::optim::{golden_section, levenberg_marquardt, nelder_mead, OptimOptions};

/// Estimator configuration (the `[estimator]` table of a config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub k_rho: f64,
    pub k_f: f64,
    pub k_x: f64,
    pub a_choice: AChoice,
    #[serde(flatten)]
    pub design: DesignOptions,
    pub max_iter: usize,
    pub tol: f64,
    /// Weak-instrument threshold relative to the root mean square of `y₂`.
    pub k_y: f64,
    /// Relative eigenvalue threshold of the collinearity check.
    pub rank_threshold: f64,
    /// Bound `K_γ` on the estimated scales.
    pub k_gamma: f64,
    /// Use `γ̂` in the second step; `false` runs with `γ = 𝟙`.
    pub efficient: bool,
    /// Hold ρ fixed instead of estimating it.
    pub fixed_rho: Option<f64>,
    /// Include the quadratic moment.
    pub quadratic: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let b = ParamBounds::default();
        Self {
            k_rho: b.k_rho,
            k_f: b.k_f,
            k_x: b.k_x,
            a_choice: AChoice::M,
            design: DesignOptions::default(),
            max_iter: 500,
            tol: 1e-8,
            k_y: 1e-6,
            rank_threshold: 1e-10,
            k_gamma: 1e8,
            efficient: true,
            fixed_rho: None,
            quadratic: true,
        }
    }
}

impl EstimatorConfig {
    pub fn bounds(&self) -> ParamBounds {
        ParamBounds {
            k_rho: self.k_rho,
            k_f: self.k_f,
            k_x: self.k_x,
        }
    }

    pub fn moment_spec(&self) -> MomentSpec {
        MomentSpec {
            a_choice: self.a_choice,
            quadratic: self.quadratic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds().validate()?;
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::Config("max_iter and tol must be positive".into()));
        }
        if !(self.k_gamma > 1.0) {
            return Err(Error::Config("k_gamma must exceed 1".into()));
        }
        if let Some(r) = self.fixed_rho {
            if r.abs() > self.k_rho {
                return Err(Error::Config(format!("fixed_rho = {r} outside [-k_rho, k_rho]")));
            }
        } else if !self.quadratic {
            return Err(Error::Config(
                "dropping the quadratic moment requires fixed_rho".into(),
            ));
        }
        Ok(())
    }
}

/// `(X′X)⁻¹X′` applied through a Cholesky factor; `None` when `X` has no columns.
struct Projector {
    x: DMatrix<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Projector {
    fn new(x: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() == 0 {
            return Ok(Self {
                x: x.clone(),
                chol: None,
            });
        }
        let chol = (x.transpose() * x)
            .cholesky()
            .ok_or_else(|| Error::Collinear("X'X is not positive definite".into()))?;
        Ok(Self {
            x: x.clone(),
            chol: Some(chol),
        })
    }

    fn coef(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => c.solve(&self.x.tr_mul(v)),
            None => DVector::zeros(0),
        }
    }

    /// `Q_X v`.
    fn residualize(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(_) => v - &self.x * self.coef(v),
            None => v.clone(),
        }
    }
}

/// `Q_X v` for the design's `X`.
pub fn residualize(design: &DesignMatrix, v: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(Projector::new(&design.x)?.residualize(v))
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (s / n.max(1) as f64).sqrt()
}

/// `f̃₁ = z′Q_X y₁ / z′Q_X y₂` (2SLS with several instruments) and
/// `δ̃ = (X′X)⁻¹X′(y₁ − f̃₁y₂)`.
pub fn first_step_f_delta(design: &DesignMatrix, k_y: f64, rank_threshold: f64) -> Result<(f64, Vec<f64>)> {
    design.check_rank(rank_threshold)?;
    let proj = Projector::new(&design.x)?;
    let n = design.n() as f64;
    let qy1 = proj.residualize(&design.y1);
    let qy2 = proj.residualize(&design.y2);
    let q = design.z.ncols();
    if q == 0 {
        return Err(Error::Config("no excluded instrument".into()));
    }
    let threshold = k_y * rms(design.y2.iter().copied());
    let mut stat: f64 = 0.0;
    for col in design.z.column_iter() {
        let zr = rms(col.iter().copied());
        if zr > 0.0 {
            stat = stat.max(col.dot(&qy2).abs() / n / zr);
        }
    }
    if !(stat > threshold) {
        return Err(Error::WeakInstrument { stat, threshold });
    }
    let f1 = if q == 1 {
        let z = design.z.column(0);
        z.dot(&qy1) / z.dot(&qy2)
    } else {
        let zt = DMatrix::from_columns(
            &design
                .z
                .column_iter()
                .map(|c| proj.residualize(&c.into_owned()))
                .collect::<Vec<_>>(),
        );
        let ztz = (zt.transpose() * &zt)
            .cholesky()
            .ok_or_else(|| Error::Collinear("instruments are collinear given X".into()))?;
        let a = zt.tr_mul(&design.y2);
        let b = zt.tr_mul(&design.y1);
        let pa = ztz.solve(&a);
        pa.dot(&b) / pa.dot(&a)
    };
    if !f1.is_finite() {
        return Err(Error::NonFinite("first-step f1".into()));
    }
    let delta = proj.coef(&(&design.y1 - &design.y2 * f1));
    Ok((f1, delta.iter().copied().collect()))
}

/// Points in the ρ grid scan.
pub const RHO_GRID: usize = 512;

/// `ρ̃ = argmin (n⁻¹ε⁺′Aε⁺)²` on `[−K_ρ, K_ρ]`: grid scan, then golden section.
pub fn first_step_rho(design: &DesignMatrix, f1: f64, delta: &[f64], a: AChoice, k_rho: f64) -> Result<f64> {
    let a_op = design.a_operator(a)?;
    let base = ParamTheta::new(0.0, f1, delta.to_vec());
    let r = design.residual(&base)?;
    let ones = VarGamma::ones(design.n_groups);
    let n = design.n() as f64;
    let objective = |rho: f64| -> Result<f64> {
        let (t, _) = design.whitening(rho, &ones)?;
        let e = t.apply(r.as_slice())?;
        let v = a_op.quad_form(&e, &e)? / n;
        Ok(v * v)
    };
    let step = 2.0 * k_rho / (RHO_GRID - 1) as f64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..RHO_GRID {
        let rho = -k_rho + step * i as f64;
        let v = objective(rho)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("rho objective at {rho}")));
        }
        if v < best.1 {
            best = (i, v);
        }
    }
    let lo = -k_rho + step * best.0.saturating_sub(1) as f64;
    let hi = (-k_rho + step * (best.0 + 1) as f64).min(k_rho);
    let mut failure = None;
    let (rho, _) = golden_section(
        |x| match objective(x) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        lo,
        hi,
        1e-10,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(rho)
}

/// `γ̂_j² = (N_j − p_x − 1)⁻¹ Σ_{τ_c = j} ε̃_c′ε̃_c`.
pub fn gamma_hat(design: &DesignMatrix, eps: &DVector<f64>, p_x: usize) -> Result<VarGamma> {
    if eps.len() != design.n() {
        return Err(Error::Dimension {
            expected: design.n(),
            got: eps.len(),
        });
    }
    let mut ss = vec![0.0; design.n_groups];
    let mut count = vec![0usize; design.n_groups];
    for (b, w) in design.blocks.iter().zip(design.offsets.windows(2)) {
        ss[b.group] += eps.rows(w[0], w[1] - w[0]).norm_squared();
        count[b.group] += b.n_obs;
    }
    let mut gamma = Vec::with_capacity(ss.len());
    for (j, (s, &nj)) in ss.iter().zip(&count).enumerate() {
        if nj <= p_x + 1 {
            return Err(Error::InsufficientTypeCount {
                group: j,
                count: nj,
                needed: p_x + 1,
            });
        }
        let g = (s / (nj - p_x - 1) as f64).sqrt();
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::DegenerateVariance { group: j, value: g });
        }
        gamma.push(g);
    }
    VarGamma::new(gamma)
}

/// Output of [`efficient_gmm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmResult {
    pub theta_hat: ParamTheta,
    pub gamma_hat: VarGamma,
    pub qn_at_min: f64,
    /// `n·Q_n`.
    pub j_stat: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `√(m′W⁻¹m)` at θ̂.
    pub moment_norm: f64,
    pub scaled_gradient: f64,
    pub boundary: bool,
    pub method: String,
    pub fixed_rho: bool,
    /// The first step fit the data exactly; no second step was run.
    #[serde(default)]
    pub exact_fit: bool,
}

/// Optimizer settings for [`efficient_gmm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub bounds: ParamBounds,
    pub max_iter: usize,
    pub tol: f64,
    pub fixed_rho: Option<f64>,
}

impl From<&EstimatorConfig> for GmmOptions {
    fn from(c: &EstimatorConfig) -> Self {
        Self {
            bounds: c.bounds(),
            max_iter: c.max_iter,
            tol: c.tol,
            fixed_rho: c.fixed_rho,
        }
    }
}

/// Minimize `Q_n(θ, γ)` over Θ, from `start`.
pub fn efficient_gmm(
    design: &DesignMatrix,
    spec: MomentSpec,
    gamma: &VarGamma,
    start: &ParamTheta,
    opts: &GmmOptions,
) -> Result<GmmResult> {
    let system = MomentSystem::new(design, spec)?;
    minimize(&system, gamma, start, opts)
}

/// [`efficient_gmm`] on a prebuilt moment system.
pub fn minimize(
    system: &MomentSystem<'_>,
    gamma: &VarGamma,
    start: &ParamTheta,
    opts: &GmmOptions,
) -> Result<GmmResult> {
    let p_x = system.design.p_x();
    if start.delta.len() != p_x {
        return Err(Error::Dimension {
            expected: p_x,
            got: start.delta.len(),
        });
    }
    if !spec_ok(system.spec, opts) {
        return Err(Error::Config("dropping the quadratic moment requires a fixed rho".into()));
    }
    let b = opts.bounds;
    let skip = usize::from(opts.fixed_rho.is_some());
    let to_theta = |x: &[f64]| -> ParamTheta {
        match opts.fixed_rho {
            Some(r) => ParamTheta::new(r, x[0], x[1..].to_vec()),
            None => ParamTheta::new(x[0], x[1], x[2..].to_vec()),
        }
    };
    let mut x0 = start.to_vec();
    x0.drain(..skip);
    let mut lower = b.lower(p_x);
    let mut upper = b.upper(p_x);
    lower.drain(..skip);
    upper.drain(..skip);
    let oo = OptimOptions {
        lower,
        upper,
        max_iter: opts.max_iter,
        tol: opts.tol,
    };
    let eval = |x: &[f64]| {
        let ev = system.evaluate(&to_theta(x), gamma)?;
        let k = ev.grad.len();
        let g = ev.grad.rows(skip, k - skip).into_owned();
        let h = ev.hess.view((skip, skip), (k - skip, k - skip)).into_owned();
        Ok((ev.q, g, h))
    };
    let mut res = levenberg_marquardt(eval, &x0, &oo)?;
    let mut method = "levenberg-marquardt".to_string();
    if !res.converged {
        let (xn, fv, evals, _) = nelder_mead(
            |x| system.qn(&to_theta(x), gamma).unwrap_or(f64::INFINITY),
            &res.x,
            &oo,
        );
        let from = if fv < res.value { xn } else { res.x.clone() };
        let polish = levenberg_marquardt(eval, &from, &oo)?;
        method = "levenberg-marquardt, nelder-mead, levenberg-marquardt".into();
        res.iterations += evals;
        if polish.value <= res.value || polish.converged {
            let iters = res.iterations + polish.iterations;
            res = polish;
            res.iterations = iters;
        }
    }
    let theta = to_theta(&res.x);
    let m = system.moments(&theta, gamma)?;
    let q = system.qn_of(&m.m);
    let n = system.n();
    Ok(GmmResult {
        boundary: opts.fixed_rho.is_none() && theta.rho.abs() >= b.k_rho - 1e-12,
        theta_hat: theta,
        gamma_hat: gamma.clone(),
        qn_at_min: q,
        j_stat: n * q,
        iterations: res.iterations,
        converged: res.converged,
        moment_norm: (n * q).max(0.0).sqrt(),
        scaled_gradient: res.scaled_gradient,
        method,
        fixed_rho: opts.fixed_rho.is_some(),
        exact_fit: false,
    })
}

fn spec_ok(spec: MomentSpec, opts: &GmmOptions) -> bool {
    spec.quadratic || opts.fixed_rho.is_some()
}

/// First-step estimates θ̃ and γ̂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStep {
    pub theta: ParamTheta,
    pub gamma: VarGamma,
    /// `y₁ − f̃₁y₂ − Xδ̃ = 0` to rounding: ρ is not identified and γ is
    /// set to 𝟙.
    #[serde(default)]
    pub exact_fit: bool,
}

/// Output of [`estimate_pipeline`].
#[derive(Debug, Clone)]
pub struct Estimate {
    pub design: DesignMatrix,
    pub spec: MomentSpec,
    pub first_step: FirstStep,
    pub gmm: GmmResult,
}

/// Relative residual size below which the first step counts as an exact fit.
pub const EXACT_FIT_TOL: f64 = 1e-12;

/// Run the first step and the first-step variance estimates.
pub fn first_step(design: &DesignMatrix, config: &EstimatorConfig) -> Result<FirstStep> {
    let (f1, delta) =
        first_step_f_delta(design, config.k_y, config.rank_threshold).map_err(|e| e.in_stage("first_step_f_delta"))?;
    let resid = design.residual(&ParamTheta::new(0.0, f1, delta.clone()))?;
    let scale = design.y1.amax().max(f1.abs() * design.y2.amax()).max(1.0);
    if resid.amax() <= EXACT_FIT_TOL * scale {
        return Ok(FirstStep {
            theta: ParamTheta::new(config.fixed_rho.unwrap_or(0.0), f1, delta),
            gamma: VarGamma::ones(design.n_groups),
            exact_fit: true,
        });
    }
    let rho = match config.fixed_rho {
        Some(r) => r,
        None => first_step_rho(design, f1, &delta, config.a_choice, config.k_rho)
            .map_err(|e| e.in_stage("first_step_rho"))?,
    };
    let theta = ParamTheta::new(rho, f1, delta);
    let eps = design.eps_plus(&theta).map_err(|e| e.in_stage("gamma_hat"))?;
    let gamma = gamma_hat(design, &eps, design.p_x()).map_err(|e| e.in_stage("gamma_hat"))?;
    gamma
        .check_bounds(config.k_gamma)
        .map_err(|e| e.in_stage("gamma_hat"))?;
    Ok(FirstStep {
        theta,
        gamma,
        exact_fit: false,
    })
}

/// Design → first step → γ̂ → efficient GMM started at θ̃.
pub fn estimate_pipeline(sample: &Sample, config: &EstimatorConfig) -> Result<Estimate> {
    config.validate()?;
    let design = build_design(sample, &config.design).map_err(|e| e.in_stage("build_design"))?;
    estimate_design(design, config)
}

/// [`estimate_pipeline`] on an already built design.
pub fn estimate_design(design: DesignMatrix, config: &EstimatorConfig) -> Result<Estimate> {
    config.validate()?;
    let fs = first_step(&design, config)?;
    let spec = config.moment_spec();
    if fs.exact_fit {
        let gmm = GmmResult {
            theta_hat: fs.theta.clone(),
            gamma_hat: fs.gamma.clone(),
            qn_at_min: 0.0,
            j_stat: 0.0,
            iterations: 0,
            converged: true,
            moment_norm: 0.0,
            scaled_gradient: 0.0,
            boundary: false,
            method: "exact-fit".into(),
            fixed_rho: config.fixed_rho.is_some(),
            exact_fit: true,
        };
        return Ok(Estimate {
            design,
            spec,
            first_step: fs,
            gmm,
        });
    }
    let gamma = if config.efficient {
        fs.gamma.clone()
    } else {
        VarGamma::ones(design.n_groups)
    };
    let gmm = efficient_gmm(&design, spec, &gamma, &fs.theta, &GmmOptions::from(config))
        .map_err(|e| e.in_stage("efficient_gmm"))?;
    Ok(Estimate {
        design,
        spec,
        first_step: fs,
        gmm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Classroom, Panel};

    fn sample(y1: Vec<f64>, y2: Vec<f64>, x: Vec<f64>, sizes: &[usize]) -> Sample {
        let classrooms = sizes
            .iter()
            .enumerate()
            .map(|(c, &n)| Classroom {
                id: format!("c{c}"),
                school: None,
                class_type: 0,
                group: 0,
                size: n,
            })
            .collect();
        let n = y1.len();
        Sample {
            classrooms,
            type_labels: vec!["t".into()],
            group_labels: vec!["t".into()],
            student_ids: (0..n).map(|i| i.to_string()).collect(),
            y1,
            y2,
            sv: Panel::new(vec!["x".into()], vec![x]).unwrap(),
            sw1: Panel::empty(),
            sw2: Panel::empty(),
            cv: Panel::empty(),
            cw1: Panel::empty(),
            cw2: Panel::empty(),
            z: Panel::empty(),
        }
    }

    fn base() -> (Vec<f64>, Vec<f64>, Vec<usize>) {
        let sizes = vec![3, 4, 3, 5];
        let n: usize = sizes.iter().sum();
        let y2: Vec<f64> = (0..n).map(|i| 5.0 + (i as f64 * 1.3).sin() * 2.0 + i as f64 * 0.1).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        (y2, x, sizes)
    }

    #[test]
    fn identical_outcomes_give_unit_f1() {
        let (y2, x, sizes) = base();
        let s = sample(y2.clone(), y2, x, &sizes);
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        let (f1, delta) = first_step_f_delta(&d, 1e-6, 1e-10).unwrap();
        assert!((f1 - 1.0).abs() < 1e-12);
        assert!(delta.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn exact_model_recovered() {
        let (y2, x, sizes) = base();
        let s0 = sample(y2.clone(), y2.clone(), x, &sizes);
        let d0 = build_design(&s0, &DesignOptions::default()).unwrap();
        let xd = &d0.x * DVector::from_element(d0.p_x(), 1.0);
        let y1: Vec<f64> = y2.iter().zip(xd.iter()).map(|(a, b)| 2.0 * a + b).collect();
        let s = Sample { y1, ..s0 };
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        let (f1, delta) = first_step_f_delta(&d, 1e-6, 1e-10).unwrap();
        assert!((f1 - 2.0).abs() < 1e-10);
        assert!(delta.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn intercept_only_iv_matches_hand_solve() {
        // X = class-level intercept column, z = class mean of a covariate.
        let sizes = [2usize, 3, 2];
        let y1 = vec![1.0, 2.0, 4.0, 3.0, 5.0, 2.0, 1.0];
        let y2 = vec![2.0, 1.0, 3.0, 4.0, 4.0, 1.0, 2.0];
        let mut s = sample(y1.clone(), y2.clone(), vec![0.0; 7], &sizes);
        s.sv = Panel::empty();
        s.cv = Panel::new(vec!["cv_one".into()], vec![vec![1.0; 3]]).unwrap();
        s.z = Panel::new(vec!["z_m".into()], vec![vec![0.5, 2.0, -1.0]]).unwrap();
        let opts = DesignOptions {
            instrument: crate::model::InstrumentChoice::Columns(vec!["z_m".into()]),
            ..Default::default()
        };
        let d = build_design(&s, &opts).unwrap();
        let (f1, delta) = first_step_f_delta(&d, 1e-6, 1e-10).unwrap();
        // Just-identified IV of y1 on (1, y2) with instruments (1, z):
        // [n, Σy2; Σz, Σz·y2] (a, f) = (Σy1, Σz·y1).
        let z = [0.5, 0.5, 2.0, 2.0, 2.0, -1.0, -1.0];
        let n = 7.0;
        let sy1: f64 = y1.iter().sum();
        let sy2: f64 = y2.iter().sum();
        let sz: f64 = z.iter().sum();
        let szy1: f64 = z.iter().zip(&y1).map(|(a, b)| a * b).sum();
        let szy2: f64 = z.iter().zip(&y2).map(|(a, b)| a * b).sum();
        let det = n * szy2 - sy2 * sz;
        let f_hand = (n * szy1 - sz * sy1) / det;
        let a_hand = (sy1 * szy2 - sy2 * szy1) / det;
        assert!((f1 - f_hand).abs() < 1e-12);
        assert!((delta[0] - a_hand).abs() < 1e-12);
    }

    #[test]
    fn no_class_mean_variation_is_weak() {
        let sizes = [2usize, 2, 2];
        let y2 = vec![1.0, -1.0, 2.0, -2.0, 0.5, -0.5];
        let mut s = sample(y2.clone(), y2, vec![0.0; 6], &sizes);
        s.sv = Panel::empty();
        s.cv = Panel::new(vec!["cv_x".into()], vec![vec![1.0, 2.0, 4.0]]).unwrap();
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        let e = first_step_f_delta(&d, 1e-6, 1e-10).unwrap_err();
        assert!(matches!(e, Error::WeakInstrument { .. }));
        assert_eq!(e.kind(), crate::ErrorKind::Identification);
    }

    #[test]
    fn gamma_hat_formula() {
        let (y2, x, sizes) = base();
        let s = sample(y2.clone(), y2, x, &sizes);
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        let n = d.n();
        let eps = DVector::from_element(n, 0.5);
        let g = gamma_hat(&d, &eps, d.p_x()).unwrap();
        let expected = (n as f64 * 0.25 / (n - d.p_x() - 1) as f64).sqrt();
        assert!((g.gamma[0] - expected).abs() < 1e-14);
        let zero = DVector::zeros(n);
        assert!(matches!(gamma_hat(&d, &zero, d.p_x()), Err(Error::DegenerateVariance { .. })));
        assert!(matches!(gamma_hat(&d, &eps, n), Err(Error::InsufficientTypeCount { .. })));
    }

    #[test]
    fn fixed_rho_linear_reproduces_iv() {
        let (y2, x, sizes) = base();
        let y1: Vec<f64> = y2
            .iter()
            .enumerate()
            .map(|(i, v)| 0.8 * v + (i as f64 * 2.1).sin() + 0.3 * x[i])
            .collect();
        let s = sample(y1, y2, x, &sizes);
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        let (f1, delta) = first_step_f_delta(&d, 1e-6, 1e-10).unwrap();
        let spec = MomentSpec {
            a_choice: AChoice::M,
            quadratic: false,
        };
        let opts = GmmOptions {
            bounds: ParamBounds::default(),
            max_iter: 500,
            tol: 1e-10,
            fixed_rho: Some(0.0),
        };
        let start = ParamTheta::new(0.0, 1.0, vec![0.0; d.p_x()]);
        let r = efficient_gmm(&d, spec, &VarGamma::ones(1), &start, &opts).unwrap();
        assert!(r.converged);
        assert!((r.theta_hat.f1 - f1).abs() < 1e-9);
        for (a, b) in r.theta_hat.delta.iter().zip(&delta) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
