//! Report assembly and serialization: JSON with 17 significant digits,
//! TSV, and fixed 3-decimal tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estim::{Estimate, EstimatorConfig, FirstStep};
use crate::inference::{Diagnostics, InferenceReport, QxSd, RankCorrs, VarianceKind};
use crate::model::{DesignMatrix, Dropped, Sample};

/// One named coefficient with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coef {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupValue {
    pub group: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub method: String,
    pub iterations: usize,
    pub qn: f64,
    pub j_stat: f64,
    pub moment_norm: f64,
    pub scaled_gradient: f64,
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub n_students: usize,
    pub n_classrooms: usize,
    pub dropped_students: Vec<Dropped>,
    pub dropped_classrooms: Vec<Dropped>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStepInfo {
    pub rho: f64,
    pub f1: f64,
    pub delta: Vec<f64>,
    pub gamma: Vec<GroupValue>,
}

/// Output of `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub sample: SampleInfo,
    /// (ρ, f₁, δ) in that order.
    pub coefficients: Vec<Coef>,
    pub lambda: Coef,
    pub gamma_hat: Vec<GroupValue>,
    pub pseudo_r2: Vec<GroupValue>,
    pub rank_corrs: RankCorrs,
    pub qx_sd: QxSd,
    pub first_step: FirstStepInfo,
    pub convergence: Convergence,
    pub variance: VarianceKind,
    pub vcov: Vec<Vec<f64>>,
    pub config: EstimatorConfig,
}

fn group_values(labels: &[String], values: &[f64]) -> Vec<GroupValue> {
    labels
        .iter()
        .zip(values)
        .map(|(g, v)| GroupValue {
            group: g.clone(),
            value: *v,
        })
        .collect()
}

fn sample_info(design: &DesignMatrix) -> SampleInfo {
    SampleInfo {
        n_students: design.n(),
        n_classrooms: design.blocks.len(),
        dropped_students: design.dropped_students.clone(),
        dropped_classrooms: design.dropped_classrooms.clone(),
    }
}

fn first_step_info(fs: &FirstStep, labels: &[String]) -> FirstStepInfo {
    FirstStepInfo {
        rho: fs.theta.rho,
        f1: fs.theta.f1,
        delta: fs.theta.delta.clone(),
        gamma: group_values(labels, &fs.gamma.gamma),
    }
}

impl EstimateReport {
    /// `group_labels` names the design's variance groups (the sample's
    /// `group_labels`).
    pub fn new(est: &Estimate, inf: &InferenceReport, group_labels: &[String], config: &EstimatorConfig) -> Self {
        let t = &est.gmm.theta_hat;
        let names = ["rho".to_string(), "f1".to_string()]
            .into_iter()
            .chain(est.design.labels.iter().map(|l| l.name.clone()));
        let coefficients = names
            .zip(t.to_vec())
            .zip(&inf.se)
            .map(|((name, estimate), se)| Coef { name, estimate, se: *se })
            .collect();
        Self {
            sample: sample_info(&est.design),
            coefficients,
            lambda: Coef {
                name: "lambda".into(),
                estimate: inf.lambda,
                se: inf.se_lambda,
            },
            gamma_hat: group_values(group_labels, &est.gmm.gamma_hat.gamma),
            pseudo_r2: group_values(group_labels, &inf.pseudo_r2),
            rank_corrs: inf.rank_corrs.clone(),
            qx_sd: inf.qx_sd.clone(),
            first_step: first_step_info(&est.first_step, group_labels),
            convergence: Convergence {
                converged: est.gmm.converged,
                method: est.gmm.method.clone(),
                iterations: est.gmm.iterations,
                qn: est.gmm.qn_at_min,
                j_stat: est.gmm.j_stat,
                moment_norm: est.gmm.moment_norm,
                scaled_gradient: est.gmm.scaled_gradient,
                boundary: est.gmm.boundary,
            },
            variance: inf.variance,
            vcov: inf.vcov.clone(),
            config: config.clone(),
        }
    }

    pub fn coef(&self, name: &str) -> Option<&Coef> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("name\testimate\tse\n");
        for c in self.coefficients.iter().chain(std::iter::once(&self.lambda)) {
            let _ = writeln!(s, "{}\t{}\t{}", c.name, num17(c.estimate), num17(c.se));
        }
        for g in &self.gamma_hat {
            let _ = writeln!(s, "gamma[{}]\t{}\t", g.group, num17(g.value));
        }
        for g in &self.pseudo_r2 {
            let _ = writeln!(s, "pseudo_r2[{}]\t{}\t", g.group, num17(g.value));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "students {}  classrooms {}  dropped students {}  dropped classrooms {}",
            self.sample.n_students,
            self.sample.n_classrooms,
            self.sample.dropped_students.len(),
            self.sample.dropped_classrooms.len()
        );
        let width = self.coefficients.iter().map(|c| c.name.len()).max().unwrap_or(6).max(10);
        let _ = writeln!(s, "{:<width$}  {:>10}  {:>10}", "", "estimate", "se");
        for c in self.coefficients.iter().chain(std::iter::once(&self.lambda)) {
            let _ = writeln!(s, "{:<width$}  {:>10}  {:>10}", c.name, dec3(c.estimate), paren3(c.se));
        }
        for g in &self.gamma_hat {
            let _ = writeln!(s, "{:<width$}  {:>10}", format!("gamma[{}]", g.group), dec3(g.value));
        }
        for g in &self.pseudo_r2 {
            let _ = writeln!(s, "{:<width$}  {:>10}", format!("R2[{}]", g.group), dec3(g.value));
        }
        let _ = writeln!(
            s,
            "rank corr y1,y2 {}  Qx y1,Qx y2 {}",
            dec3(self.rank_corrs.y1_y2),
            dec3(self.rank_corrs.qx_y1_qx_y2)
        );
        let c = &self.convergence;
        let _ = writeln!(
            s,
            "{} via {} in {} iterations, J = {}, variance {:?}",
            if c.converged { "converged" } else { "NOT converged" },
            c.method,
            c.iterations,
            dec3(c.j_stat),
            self.variance
        );
        s
    }
}

/// Mean and standard deviation of one score by class type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub class_type: String,
    pub n: usize,
    pub y1_mean: f64,
    pub y1_sd: f64,
    pub y2_mean: f64,
    pub y2_sd: f64,
}

/// Output of `diagnose`: first-step quantities only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub sample: SampleInfo,
    pub descriptives: Vec<Descriptive>,
    pub first_step: FirstStepInfo,
    pub pseudo_r2: Vec<GroupValue>,
    pub rank_corrs: RankCorrs,
    pub qx_sd: QxSd,
    /// Scaled condition number of X.
    pub x_condition: Option<f64>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Observed-score descriptives by class type.
pub fn descriptives(sample: &Sample) -> Vec<Descriptive> {
    let offs = sample.offsets();
    (0..sample.type_labels.len())
        .map(|t| {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (c, cls) in sample.classrooms.iter().enumerate() {
                if cls.class_type != t {
                    continue;
                }
                for i in offs[c]..offs[c + 1] {
                    if sample.y1[i].is_finite() && sample.y2[i].is_finite() {
                        a.push(sample.y1[i]);
                        b.push(sample.y2[i]);
                    }
                }
            }
            let (y1_mean, y1_sd) = mean_sd(&a);
            let (y2_mean, y2_sd) = mean_sd(&b);
            Descriptive {
                class_type: sample.type_labels[t].clone(),
                n: a.len(),
                y1_mean,
                y1_sd,
                y2_mean,
                y2_sd,
            }
        })
        .collect()
}

impl DiagnoseReport {
    pub fn new(sample: &Sample, design: &DesignMatrix, fs: &FirstStep, diag: &Diagnostics) -> Self {
        Self {
            sample: sample_info(design),
            descriptives: descriptives(sample),
            first_step: first_step_info(fs, &sample.group_labels),
            pseudo_r2: group_values(&sample.group_labels, &diag.pseudo_r2),
            rank_corrs: diag.rank_corrs.clone(),
            qx_sd: diag.qx_sd.clone(),
            x_condition: design.conditioning(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("statistic\tvalue\n");
        for d in &self.descriptives {
            for (k, v) in [
                ("y1_mean", d.y1_mean),
                ("y1_sd", d.y1_sd),
                ("y2_mean", d.y2_mean),
                ("y2_sd", d.y2_sd),
            ] {
                let _ = writeln!(s, "{k}[{}]\t{}", d.class_type, num17(v));
            }
        }
        for (k, v) in [
            ("f1_tilde", self.first_step.f1),
            ("rho_tilde", self.first_step.rho),
            ("rank_corr_y1_y2", self.rank_corrs.y1_y2),
            ("rank_corr_qx_y1_qx_y2", self.rank_corrs.qx_y1_qx_y2),
            ("qx_sd_y1", self.qx_sd.y1),
            ("qx_sd_y2", self.qx_sd.y2),
            ("qx_sd_diff", self.qx_sd.diff),
        ] {
            let _ = writeln!(s, "{k}\t{}", num17(v));
        }
        for g in &self.pseudo_r2 {
            let _ = writeln!(s, "pseudo_r2[{}]\t{}", g.group, num17(g.value));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>6} {:>18} {:>18}", "class type", "n", "y1", "y2");
        for d in &self.descriptives {
            let _ = writeln!(
                s,
                "{:<12} {:>6} {:>9} {:>8} {:>9} {:>8}",
                d.class_type,
                d.n,
                dec3(d.y1_mean),
                paren3(d.y1_sd),
                dec3(d.y2_mean),
                paren3(d.y2_sd)
            );
        }
        let _ = writeln!(
            s,
            "rank corr y1,y2 {}  Qx y1,Qx y2 {}",
            dec3(self.rank_corrs.y1_y2),
            dec3(self.rank_corrs.qx_y1_qx_y2)
        );
        let _ = writeln!(
            s,
            "sd of Qx y1 {}  Qx y2 {}  Qx (y1 - f1 y2) {}",
            dec3(self.qx_sd.y1),
            dec3(self.qx_sd.y2),
            dec3(self.qx_sd.diff)
        );
        let _ = writeln!(s, "first step f1 {}  rho {}", dec3(self.first_step.f1), dec3(self.first_step.rho));
        for g in &self.pseudo_r2 {
            let _ = writeln!(s, "pseudo R2 [{}] {}", g.group, dec3(g.value));
        }
        s
    }
}

/// 17 significant digits; `null` for non-finite values.
pub fn num17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".into()
    }
}

fn dec3(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "-".into()
    }
}

fn paren3(v: f64) -> String {
    format!("({})", dec3(v))
}

/// Pretty JSON in which every floating-point number carries 17
/// significant digits. Non-finite values become `null`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, 0, &mut out)?;
    out.push('\n');
    Ok(out)
}

fn write_value(v: &Value, indent: usize, out: &mut String) -> Result<()> {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Number(n) if n.is_f64() => out.push_str(&num17(n.as_f64().unwrap())),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Array(items) => {
            let flat = items.iter().all(|i| !matches!(i, Value::Array(_) | Value::Object(_)));
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                if flat {
                    if k > 0 {
                        out.push(' ');
                    }
                } else {
                    out.push('\n');
                    out.push_str(&pad(indent + 1));
                }
                write_value(item, indent + 1, out)?;
            }
            if !flat {
                out.push('\n');
                out.push_str(&pad(indent));
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (k, (key, item)) in map.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push('\n');
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(key)?);
                out.push_str(": ");
                write_value(item, indent + 1, out)?;
            }
            out.push('\n');
            out.push_str(&pad(indent));
            out.push('}');
        }
        other => out.push_str(&serde_json::to_string(other)?),
    }
    Ok(())
}

/// Write via a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
