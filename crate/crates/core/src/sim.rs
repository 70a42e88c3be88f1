//! Synthetic classrooms and a Monte Carlo harness.
//!
//! The generating process is
//!
//! ```text
//! y_t = μ* f_t + v^c β_t^c + (I + ρ₀M)(v^p β_t^p + u_t),   μ*_c = α_c 𝟙 + (I + ρ₀M_c) κ_c,
//! ```
//!
//! with `f₂ = 1`, `Var(u_it) = σ_t² ρ²_{τ_c}`, and `κ = a·ζ* + noise` where the
//! latent `ζ*` carries a school component. Students are generated per school
//! and then allocated to classrooms by the configured selection rule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estim::{estimate_pipeline, EstimatorConfig};
use crate::inference::{infer, VarianceKind};
use crate::model::{Classroom, Panel, ParamTheta, Sample, StructuralDelta, VarGamma};

/// How students are allocated to classrooms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Shuffle all students across all classrooms.
    #[default]
    Random,
    /// Rank students by κ within school and fill classrooms in rank order.
    SortedByKappa,
    /// Shuffle within school.
    SchoolStratified,
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "sorted_by_kappa" | "sorted-by-kappa" => Ok(Self::SortedByKappa),
            "school_stratified" | "school-stratified" => Ok(Self::SchoolStratified),
            other => Err(Error::Config(format!("unknown selection `{other}`"))),
        }
    }
}

/// Declarative DGP settings (the `[dgp]` table of a config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub classrooms: usize,
    pub schools: usize,
    pub size_min: usize,
    pub size_max: usize,
    pub type_labels: Vec<String>,
    pub type_probs: Vec<f64>,
    /// Variance multipliers `ρ_j` per class type.
    pub rho_type: Vec<f64>,
    pub rho0: f64,
    pub f10: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub zeta_school_sd: f64,
    pub zeta_sd: f64,
    /// `κ = kappa_load·ζ* + N(0, kappa_noise_sd²)`.
    pub kappa_load: f64,
    pub kappa_noise_sd: f64,
    /// Binary student covariate, `P(1) = logistic(binary_shift + binary_load·ζ*)`.
    pub binary_shift: f64,
    pub binary_load: f64,
    pub beta_binary: [f64; 2],
    /// Continuous student covariate `N(0, 1)`.
    pub beta_cont: [f64; 2],
    /// Classroom covariate `N(class_mean, class_sd²)`.
    pub class_mean: f64,
    pub class_sd: f64,
    pub beta_class: [f64; 2],
    pub selection: Selection,
    /// MCAR probability per outcome and student-covariate cell.
    pub missing_rate: f64,
    /// Added to the classroom effect (enters both tests through `f_t`).
    pub score_offset: f64,
    /// Common multiplier on both scores.
    pub score_scale: f64,
    /// Force `u₂ = u₁`.
    pub degenerate_u: bool,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            classrooms: 300,
            schools: 75,
            size_min: 15,
            size_max: 25,
            type_labels: vec!["small".into(), "regular".into()],
            type_probs: vec![0.4, 0.6],
            rho_type: vec![1.0, 1.1],
            rho0: 0.4,
            f10: 1.0,
            sigma1: 33.0,
            sigma2: 17.3,
            alpha_mean: 440.9,
            alpha_sd: 10.0,
            zeta_school_sd: 0.5,
            zeta_sd: 1.0,
            kappa_load: 20.0,
            kappa_noise_sd: 10.0,
            binary_shift: 0.0,
            binary_load: 1.0,
            beta_binary: [-8.0, -6.0],
            beta_cont: [4.0, 3.0],
            class_mean: 10.0,
            class_sd: 4.0,
            beta_class: [4.99, 0.0],
            selection: Selection::Random,
            missing_rate: 0.0,
            score_offset: 0.0,
            score_scale: 1.0,
            degenerate_u: false,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classrooms == 0 || self.schools == 0 || self.schools > self.classrooms {
            return bad("need 1 <= schools <= classrooms".into());
        }
        if self.size_min < 2 || self.size_max < self.size_min {
            return bad(format!(
                "class sizes must satisfy 2 <= size_min <= size_max (got {}..{})",
                self.size_min, self.size_max
            ));
        }
        let j = self.type_labels.len();
        if j == 0 || self.type_probs.len() != j || self.rho_type.len() != j {
            return bad("type_labels, type_probs and rho_type must have the same nonzero length".into());
        }
        if self.type_probs.iter().any(|p| !(*p >= 0.0)) || !(self.type_probs.iter().sum::<f64>() > 0.0) {
            return bad("type_probs must be non-negative with a positive sum".into());
        }
        if self.rho_type.iter().any(|r| !(*r > 0.0)) {
            return bad("rho_type entries must be positive".into());
        }
        if !(self.rho0 > -1.0 && self.rho0 < 1.0) {
            return bad(format!("rho0 = {} outside (-1, 1)", self.rho0));
        }
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return bad("sigma1 and sigma2 must be positive".into());
        }
        for (name, v) in [
            ("alpha_sd", self.alpha_sd),
            ("zeta_school_sd", self.zeta_school_sd),
            ("zeta_sd", self.zeta_sd),
            ("kappa_noise_sd", self.kappa_noise_sd),
            ("class_sd", self.class_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative finite number"));
            }
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 1)".into());
        }
        if !(self.score_scale > 0.0 && self.score_scale.is_finite()) {
            return bad("score_scale must be positive".into());
        }
        Ok(())
    }

    /// Structural coefficients in design-column order.
    pub fn structural(&self) -> StructuralDelta {
        let s = self.score_scale;
        let [b1, b2] = self.beta_binary;
        let [c1, c2] = self.beta_cont;
        let [k1, k2] = self.beta_class;
        let f = self.f10;
        StructuralDelta {
            delta_vc: vec![s * (k1 - f * k2)],
            beta_w1c: vec![],
            beta_w2c: vec![],
            delta_vp: vec![s * (b1 - f * b2), s * (c1 - f * c2)],
            beta_w1p: vec![],
            beta_w2p: vec![],
        }
    }

    /// θ₀ for the design built from a simulated sample without fixed effects.
    pub fn theta0(&self) -> ParamTheta {
        ParamTheta::new(self.rho0, self.f10, self.structural().pack(self.f10, self.rho0))
    }

    /// `γ_j0 = √(σ₁² + f₁₀²σ₂²)·ρ_j`, in score units.
    pub fn gamma0(&self) -> VarGamma {
        let base = (self.sigma1.powi(2) + self.f10.powi(2) * self.sigma2.powi(2)).sqrt() * self.score_scale;
        VarGamma {
            gamma: self.rho_type.iter().map(|r| base * r).collect(),
        }
    }
}

/// Everything the estimator must not see. Student vectors follow the
/// sample's row order; `gamma0` follows its group labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub theta0: ParamTheta,
    pub gamma0: VarGamma,
    pub structural: StructuralDelta,
    pub alpha: Vec<f64>,
    pub kappa: Vec<f64>,
    pub zeta_star: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated standard deviation")
}

/// Apply `I + ρM_c` in place to one classroom's values.
fn i_plus_rho_m(v: &mut [f64], rho: f64) {
    let n = v.len() as f64;
    let sum: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x += rho * (sum - *x) / (n - 1.0);
    }
}

/// Draw one sample and its truth record.
pub fn simulate_sample(config: &DgpConfig) -> Result<(Sample, Truth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c_total = config.classrooms;
    let j = config.type_labels.len();

    let sizes: Vec<usize> = (0..c_total)
        .map(|_| rng.random_range(config.size_min..=config.size_max))
        .collect();
    let total_p: f64 = config.type_probs.iter().sum();
    let mut types: Vec<usize> = (0..c_total)
        .map(|_| {
            let mut x = rng.random::<f64>() * total_p;
            for (k, p) in config.type_probs.iter().enumerate() {
                if x < *p {
                    return k;
                }
                x -= p;
            }
            j - 1
        })
        .collect();
    // Every type with positive probability appears at least once.
    for k in 0..j.min(c_total) {
        if config.type_probs[k] > 0.0 && !types.contains(&k) {
            types[k] = k;
        }
    }
    // Classroom c belongs to school c mod S.
    let school_of: Vec<usize> = (0..c_total).map(|c| c % config.schools).collect();

    // Students are generated per school.
    let school_effect: Vec<f64> = (0..config.schools)
        .map(|_| config.zeta_school_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); config.schools];
    let mut zeta = Vec::new();
    let mut kappa = Vec::new();
    let mut binary = Vec::new();
    let mut cont = Vec::new();
    for s in 0..config.schools {
        let seats: usize = (0..c_total).filter(|&c| school_of[c] == s).map(|c| sizes[c]).sum();
        for _ in 0..seats {
            let z = school_effect[s] + config.zeta_sd * rng.sample::<f64, _>(StandardNormal);
            let k = config.kappa_load * z + config.kappa_noise_sd * rng.sample::<f64, _>(StandardNormal);
            let p = 1.0 / (1.0 + (-(config.binary_shift + config.binary_load * z)).exp());
            pools[s].push(zeta.len());
            zeta.push(z);
            kappa.push(k);
            binary.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
            cont.push(rng.sample::<f64, _>(StandardNormal));
        }
    }

    // Selection: an ordered list of students per classroom.
    let mut roster: Vec<Vec<usize>> = vec![Vec::new(); c_total];
    match config.selection {
        Selection::Random => {
            let mut all: Vec<usize> = (0..zeta.len()).collect();
            all.shuffle(&mut rng);
            let mut it = all.into_iter();
            for c in 0..c_total {
                roster[c] = it.by_ref().take(sizes[c]).collect();
            }
        }
        Selection::SchoolStratified | Selection::SortedByKappa => {
            for (s, pool) in pools.iter_mut().enumerate() {
                if config.selection == Selection::SortedByKappa {
                    pool.sort_by(|&a, &b| kappa[a].total_cmp(&kappa[b]));
                } else {
                    pool.shuffle(&mut rng);
                }
                let mut it = pool.iter().copied();
                for c in (0..c_total).filter(|&c| school_of[c] == s) {
                    roster[c] = it.by_ref().take(sizes[c]).collect();
                }
            }
        }
    }

    let alpha: Vec<f64> = (0..c_total)
        .map(|_| normal(config.alpha_mean + config.score_offset, config.alpha_sd).sample(&mut rng))
        .collect();
    let class_cov: Vec<f64> = (0..c_total)
        .map(|_| normal(config.class_mean, config.class_sd).sample(&mut rng))
        .collect();

    let n: usize = sizes.iter().sum();
    let mut y1 = Vec::with_capacity(n);
    let mut y2 = Vec::with_capacity(n);
    let mut t_kappa = Vec::with_capacity(n);
    let mut t_zeta = Vec::with_capacity(n);
    let mut t_u1 = Vec::with_capacity(n);
    let mut t_u2 = Vec::with_capacity(n);
    let mut sv_bin = Vec::with_capacity(n);
    let mut sv_cont = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let (f1, f2) = (config.f10, 1.0);
    let scale = config.score_scale;
    for c in 0..c_total {
        let r = &roster[c];
        let sd_mult = config.rho_type[types[c]];
        let u1: Vec<f64> = (0..r.len())
            .map(|_| config.sigma1 * sd_mult * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let u2: Vec<f64> = if config.degenerate_u {
            u1.clone()
        } else {
            (0..r.len())
                .map(|_| config.sigma2 * sd_mult * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let mut mu: Vec<f64> = r.iter().map(|&i| kappa[i]).collect();
        i_plus_rho_m(&mut mu, config.rho0);
        mu.iter_mut().for_each(|m| *m += alpha[c]);
        let mut e1: Vec<f64> = r
            .iter()
            .zip(&u1)
            .map(|(&i, u)| binary[i] * config.beta_binary[0] + cont[i] * config.beta_cont[0] + u)
            .collect();
        let mut e2: Vec<f64> = r
            .iter()
            .zip(&u2)
            .map(|(&i, u)| binary[i] * config.beta_binary[1] + cont[i] * config.beta_cont[1] + u)
            .collect();
        i_plus_rho_m(&mut e1, config.rho0);
        i_plus_rho_m(&mut e2, config.rho0);
        for (k, &i) in r.iter().enumerate() {
            y1.push(scale * (mu[k] * f1 + class_cov[c] * config.beta_class[0] + e1[k]));
            y2.push(scale * (mu[k] * f2 + class_cov[c] * config.beta_class[1] + e2[k]));
            t_kappa.push(kappa[i]);
            t_zeta.push(zeta[i]);
            sv_bin.push(binary[i]);
            sv_cont.push(cont[i]);
            ids.push(format!("s{c:04}_{k:02}"));
        }
        t_u1.extend(u1.iter().map(|u| u * scale));
        t_u2.extend(u2.iter().map(|u| u * scale));
    }

    if config.missing_rate > 0.0 {
        for col in [&mut y1, &mut y2, &mut sv_bin, &mut sv_cont] {
            for v in col.iter_mut() {
                if rng.random::<f64>() < config.missing_rate {
                    *v = f64::NAN;
                }
            }
        }
    }

    let classrooms = (0..c_total)
        .map(|c| Classroom {
            id: format!("c{c:04}"),
            school: Some(format!("school{:03}", school_of[c])),
            class_type: types[c],
            group: types[c],
            size: sizes[c],
        })
        .collect();
    let sample = Sample {
        classrooms,
        type_labels: config.type_labels.clone(),
        group_labels: config.type_labels.clone(),
        student_ids: ids,
        y1,
        y2,
        sv: Panel::new(vec!["sv_binary".into(), "sv_cont".into()], vec![sv_bin, sv_cont])?,
        sw1: Panel::empty(),
        sw2: Panel::empty(),
        cv: Panel::new(vec!["cv_class".into()], vec![class_cov])?,
        cw1: Panel::empty(),
        cw2: Panel::empty(),
        z: Panel::empty(),
    };
    // Canonical layout, matching what CSV ingest produces: type labels
    // sorted, classrooms ordered by (school, id).
    let mut order: Vec<usize> = (0..config.type_labels.len()).collect();
    order.sort_by(|&a, &b| config.type_labels[a].cmp(&config.type_labels[b]));
    let mut rank = vec![0; order.len()];
    for (k, &j) in order.iter().enumerate() {
        rank[j] = k;
    }
    let mut sample = sample;
    for c in &mut sample.classrooms {
        c.class_type = rank[c.class_type];
        c.group = c.class_type;
    }
    sample.type_labels = order.iter().map(|&j| config.type_labels[j].clone()).collect();
    sample.group_labels = sample.type_labels.clone();
    let gamma_all = config.gamma0().gamma;
    let mut perm: Vec<usize> = (0..c_total).collect();
    perm.sort_by_key(|&c| (school_of[c], c));
    let offs = sample.offsets();
    let rows: Vec<usize> = perm.iter().flat_map(|&c| offs[c]..offs[c + 1]).collect();
    let take = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
    let sample = sample.permute_classrooms(&perm)?;
    // A type drawn with zero classrooms leaves an empty variance group.
    let (sample, kept) = drop_empty_groups(sample);
    let truth = Truth {
        theta0: config.theta0(),
        gamma0: VarGamma {
            gamma: kept.iter().map(|&k| gamma_all[order[k]]).collect(),
        },
        structural: config.structural(),
        alpha: perm.iter().map(|&c| alpha[c]).collect(),
        kappa: take(&t_kappa),
        zeta_star: take(&t_zeta),
        u1: take(&t_u1),
        u2: take(&t_u2),
    };
    Ok((sample, truth))
}

/// Returns the sample and the surviving group indices.
fn drop_empty_groups(mut s: Sample) -> (Sample, Vec<usize>) {
    let used: Vec<bool> = (0..s.group_labels.len())
        .map(|j| s.classrooms.iter().any(|c| c.group == j))
        .collect();
    let kept: Vec<usize> = (0..used.len()).filter(|&j| used[j]).collect();
    if kept.len() == used.len() {
        return (s, kept);
    }
    let mut remap = vec![0; used.len()];
    for (k, &j) in kept.iter().enumerate() {
        remap[j] = k;
    }
    for c in &mut s.classrooms {
        c.group = remap[c.group];
    }
    s.group_labels = kept.iter().map(|&j| s.group_labels[j].clone()).collect();
    (s, kept)
}

/// SplitMix64 finalizer (a bijection on `u64`).
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `r`: injective in `r` for a fixed master seed.
pub fn replication_seed(master_seed: u64, r: u64) -> u64 {
    mix64(mix64(master_seed).wrapping_add(r.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// One Monte Carlo replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub theta_hat: Option<Vec<f64>>,
    pub se: Option<Vec<f64>>,
    pub converged: bool,
    pub error: Option<String>,
}

/// Per-parameter Monte Carlo statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    pub mc_sd: f64,
    pub mean_se: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub reps: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub non_converged: usize,
    pub params: Vec<ParamSummary>,
    pub replications: Vec<Replication>,
}

impl McSummary {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Tab-separated per-parameter table.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("param\ttruth\tmean\tbias\trmse\tmc_sd\tmean_se\tcoverage\n");
        for p in &self.params {
            out.push_str(&format!(
                "{}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\n",
                p.name, p.truth, p.mean, p.bias, p.rmse, p.mc_sd, p.mean_se, p.coverage
            ));
        }
        out
    }
}

/// Monte Carlo settings.
#[derive(Debug, Clone, PartialEq)]
pub struct McOptions {
    pub reps: usize,
    pub master_seed: u64,
    pub variance: VarianceKind,
    /// Critical value for the coverage check.
    pub z_crit: f64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            reps: 100,
            master_seed: 20240101,
            variance: VarianceKind::Model,
            z_crit: 1.959_963_984_540_054,
        }
    }
}

fn run_one(dgp: &DgpConfig, est: &EstimatorConfig, variance: VarianceKind, index: usize, seed: u64) -> Replication {
    let cfg = DgpConfig {
        seed,
        ..dgp.clone()
    };
    let outcome = simulate_sample(&cfg).and_then(|(sample, _truth)| {
        let e = estimate_pipeline(&sample, est)?;
        let inf = infer(&e, variance)?;
        Ok((e.gmm.theta_hat.to_vec(), inf.se, e.gmm.converged))
    });
    match outcome {
        Ok((theta, se, converged)) => Replication {
            index,
            seed,
            theta_hat: Some(theta),
            se: Some(se),
            converged,
            error: None,
        },
        Err(e) => Replication {
            index,
            seed,
            theta_hat: None,
            se: None,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

/// Run `R` seeded replications of simulate → estimate → infer in parallel.
/// Summaries use converged replications only.
pub fn monte_carlo(dgp: &DgpConfig, est: &EstimatorConfig, opts: &McOptions) -> Result<McSummary> {
    if opts.reps < 2 {
        return Err(Error::Config("Monte Carlo needs at least 2 replications".into()));
    }
    dgp.validate()?;
    est.validate()?;
    let replications: Vec<Replication> = (0..opts.reps)
        .into_par_iter()
        .map(|r| run_one(dgp, est, opts.variance, r, replication_seed(opts.master_seed, r as u64)))
        .collect();
    let truth = dgp.theta0().to_vec();
    let mut names = vec!["rho".to_string(), "f1".to_string()];
    names.extend(["delta_cv_class", "delta_sv_binary", "delta_sv_cont", "delta_peer_sv_binary", "delta_peer_sv_cont"].map(String::from));
    let good: Vec<&Replication> = replications
        .iter()
        .filter(|r| r.theta_hat.is_some() && r.converged)
        .collect();
    let failed = replications.iter().filter(|r| r.error.is_some()).count();
    let non_converged = replications
        .iter()
        .filter(|r| r.error.is_none() && !r.converged)
        .count();
    if good.len() < 2 {
        return Err(Error::Config(format!(
            "only {} of {} replications succeeded; first error: {}",
            good.len(),
            opts.reps,
            replications
                .iter()
                .find_map(|r| r.error.clone())
                .unwrap_or_else(|| "non-convergence".into())
        )));
    }
    // With extra fixed effects the δ layout differs from the DGP's; only ρ and f₁ are comparable.
    let k_sum = if good[0].theta_hat.as_ref().unwrap().len() == truth.len() {
        truth.len()
    } else {
        2
    };
    let m = good.len() as f64;
    let params = truth[..k_sum]
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let est: Vec<f64> = good.iter().map(|r| r.theta_hat.as_ref().unwrap()[k]).collect();
            let se: Vec<f64> = good.iter().map(|r| r.se.as_ref().unwrap()[k]).collect();
            let mean = est.iter().sum::<f64>() / m;
            let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let rmse = (est.iter().map(|e| (e - t).powi(2)).sum::<f64>() / m).sqrt();
            let covered = est
                .iter()
                .zip(&se)
                .filter(|(e, s)| (*e - t).abs() <= opts.z_crit * *s)
                .count();
            ParamSummary {
                name: names[k].clone(),
                truth: t,
                mean,
                bias: mean - t,
                rmse,
                mc_sd: var.sqrt(),
                mean_se: se.iter().sum::<f64>() / m,
                coverage: covered as f64 / m,
            }
        })
        .collect();
    Ok(McSummary {
        reps: opts.reps,
        succeeded: good.len(),
        failed,
        non_converged,
        params,
        replications,
    })
}
