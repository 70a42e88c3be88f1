//! Stacked classroom samples, the quasi-differenced design matrix, residual
//! transforms and the missing-data adjustments.
//!
//! Missing values are stored as `NaN`. Ingest rejects literal `NaN` input, so
//! inside a [`Sample`] a `NaN` always means "not observed".

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blockmat::{AChoice, BlockDiag, ClassroomBlock, SINGULAR_EPS};
use crate::error::{Error, Result};

/// Metadata for one classroom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classroom {
    pub id: String,
    pub school: Option<String>,
    /// Index into [`Sample::type_labels`].
    pub class_type: usize,
    /// Variance group (index into [`Sample::group_labels`]); defaults to the class type.
    pub group: usize,
    pub size: usize,
}

/// Named columns; `data[k]` holds column `k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub names: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl Panel {
    pub fn new(names: Vec<String>, data: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != data.len() {
            return Err(Error::Dimension {
                expected: names.len(),
                got: data.len(),
            });
        }
        Ok(Self { names, data })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    fn check_rows(&self, rows: usize, what: &str) -> Result<()> {
        for (name, col) in self.names.iter().zip(&self.data) {
            if col.len() != rows {
                return Err(Error::Config(format!(
                    "{what} column `{name}` has {} rows, expected {rows}",
                    col.len()
                )));
            }
        }
        Ok(())
    }

    fn remove(&mut self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        self.names.remove(k);
        Some(self.data.remove(k))
    }
}

/// Stacked classrooms. Student rows are contiguous per classroom, in
/// classroom order. Classroom-level panels (`cv`, `cw1`, `cw2`, `z`) have one
/// row per classroom, which makes them classroom-invariant by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub classrooms: Vec<Classroom>,
    pub type_labels: Vec<String>,
    pub group_labels: Vec<String>,
    pub student_ids: Vec<String>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub sv: Panel,
    pub sw1: Panel,
    pub sw2: Panel,
    pub cv: Panel,
    pub cw1: Panel,
    pub cw2: Panel,
    pub z: Panel,
}

impl Sample {
    /// Validate dimensions and classroom invariants.
    pub fn validate(&self) -> Result<()> {
        let n: usize = self.classrooms.iter().map(|c| c.size).sum();
        for c in &self.classrooms {
            if c.size < 2 {
                return Err(Error::DegenerateClassroom { size: c.size });
            }
            if c.class_type >= self.type_labels.len() {
                return Err(Error::Config(format!(
                    "classroom {} has class type index {} but only {} types are labelled",
                    c.id,
                    c.class_type,
                    self.type_labels.len()
                )));
            }
            if c.group >= self.group_labels.len() {
                return Err(Error::Config(format!(
                    "classroom {} has variance group {} but only {} groups are labelled",
                    c.id,
                    c.group,
                    self.group_labels.len()
                )));
            }
        }
        for (what, len) in [
            ("student_ids", self.student_ids.len()),
            ("y1", self.y1.len()),
            ("y2", self.y2.len()),
        ] {
            if len != n {
                return Err(Error::Config(format!("{what} has {len} rows, classrooms sum to {n}")));
            }
        }
        self.sv.check_rows(n, "student")?;
        self.sw1.check_rows(n, "student")?;
        self.sw2.check_rows(n, "student")?;
        let nc = self.classrooms.len();
        self.cv.check_rows(nc, "classroom")?;
        self.cw1.check_rows(nc, "classroom")?;
        self.cw2.check_rows(nc, "classroom")?;
        self.z.check_rows(nc, "instrument")?;
        for (j, _) in self.group_labels.iter().enumerate() {
            if !self.classrooms.iter().any(|c| c.group == j) {
                return Err(Error::Config(format!("variance group {j} is empty")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y1.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.classrooms.iter().map(|c| c.size).collect()
    }

    /// Row offsets of each classroom in the student arrays.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.classrooms.len() + 1);
        out.push(0);
        for c in &self.classrooms {
            out.push(out.last().unwrap() + c.size);
        }
        out
    }

    /// Swap the two outcomes (and the test-specific covariate roles).
    pub fn reversed(&self) -> Sample {
        let mut s = self.clone();
        std::mem::swap(&mut s.y1, &mut s.y2);
        std::mem::swap(&mut s.sw1, &mut s.sw2);
        std::mem::swap(&mut s.cw1, &mut s.cw2);
        s
    }

    /// Multiply both outcomes by `k`.
    pub fn rescaled(&self, k: f64) -> Sample {
        let mut s = self.clone();
        s.y1.iter_mut().for_each(|y| *y *= k);
        s.y2.iter_mut().for_each(|y| *y *= k);
        s
    }

    /// Reassign variance groups from a per-classroom label.
    pub fn with_groups(mut self, labels: &[String]) -> Result<Sample> {
        if labels.len() != self.classrooms.len() {
            return Err(Error::Dimension {
                expected: self.classrooms.len(),
                got: labels.len(),
            });
        }
        let mut levels: Vec<String> = labels.to_vec();
        levels.sort();
        levels.dedup();
        for (c, l) in self.classrooms.iter_mut().zip(labels) {
            c.group = levels.binary_search(l).unwrap();
        }
        self.group_labels = levels;
        Ok(self)
    }

    /// Put every classroom in one variance group.
    pub fn single_group(mut self) -> Sample {
        for c in &mut self.classrooms {
            c.group = 0;
        }
        self.group_labels = vec!["all".into()];
        self
    }

    /// Reorder classrooms (and their student rows) by `perm`, where
    /// `perm[k]` is the old index of the new classroom `k`.
    pub fn permute_classrooms(&self, perm: &[usize]) -> Result<Sample> {
        let c = self.classrooms.len();
        let mut seen = vec![false; c];
        if perm.len() != c || perm.iter().any(|&i| i >= c || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Config("not a permutation of the classrooms".into()));
        }
        let offs = self.offsets();
        let rows: Vec<usize> = perm.iter().flat_map(|&i| offs[i]..offs[i + 1]).collect();
        let take_rows = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        let take_cls = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let student = |p: &Panel| Panel {
            names: p.names.clone(),
            data: p.data.iter().map(|c| take_rows(c)).collect(),
        };
        let class = |p: &Panel| Panel {
            names: p.names.clone(),
            data: p.data.iter().map(|c| take_cls(c)).collect(),
        };
        Ok(Sample {
            classrooms: perm.iter().map(|&i| self.classrooms[i].clone()).collect(),
            type_labels: self.type_labels.clone(),
            group_labels: self.group_labels.clone(),
            student_ids: rows.iter().map(|&r| self.student_ids[r].clone()).collect(),
            y1: take_rows(&self.y1),
            y2: take_rows(&self.y2),
            sv: student(&self.sv),
            sw1: student(&self.sw1),
            sw2: student(&self.sw2),
            cv: class(&self.cv),
            cw1: class(&self.cw1),
            cw2: class(&self.cw2),
            z: class(&self.z),
        })
    }
}

/// θ = (ρ, f₁, δ′)′.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTheta {
    pub rho: f64,
    pub f1: f64,
    pub delta: Vec<f64>,
}

impl ParamTheta {
    pub fn new(rho: f64, f1: f64, delta: Vec<f64>) -> Self {
        Self { rho, f1, delta }
    }

    /// Flat vector in the order (ρ, f₁, δ).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.delta.len() + 2);
        v.push(self.rho);
        v.push(self.f1);
        v.extend_from_slice(&self.delta);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::Dimension {
                expected: 2,
                got: v.len(),
            });
        }
        Ok(Self {
            rho: v[0],
            f1: v[1],
            delta: v[2..].to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.delta.len() + 2
    }
}

/// Box Θ for the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub k_rho: f64,
    pub k_f: f64,
    pub k_x: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            k_rho: 0.99,
            k_f: 100.0,
            k_x: 1e6,
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_rho > 0.0 && self.k_rho < 1.0) {
            return Err(Error::Config(format!("k_rho = {} must lie in (0, 1)", self.k_rho)));
        }
        if !(self.k_f > 0.0 && self.k_x > 0.0) {
            return Err(Error::Config("k_f and k_x must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, t: &ParamTheta) -> bool {
        t.rho.abs() <= self.k_rho
            && t.f1.abs() <= self.k_f
            && t.delta.iter().all(|d| d.abs() <= self.k_x)
    }

    pub fn lower(&self, p_x: usize) -> Vec<f64> {
        let mut v = vec![-self.k_rho, -self.k_f];
        v.extend(std::iter::repeat_n(-self.k_x, p_x));
        v
    }

    pub fn upper(&self, p_x: usize) -> Vec<f64> {
        let mut v = vec![self.k_rho, self.k_f];
        v.extend(std::iter::repeat_n(self.k_x, p_x));
        v
    }
}

/// Per-variance-group scale parameters of Ω(γ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarGamma {
    pub gamma: Vec<f64>,
}

impl VarGamma {
    /// Validated γ; every entry must be positive and finite.
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        for (j, &g) in gamma.iter().enumerate() {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::DegenerateVariance { group: j, value: g });
            }
        }
        Ok(Self { gamma })
    }

    pub fn ones(j: usize) -> Self {
        Self {
            gamma: vec![1.0; j],
        }
    }

    /// Enforce `1/K_γ ≤ γ_j ≤ K_γ`.
    pub fn check_bounds(&self, k_gamma: f64) -> Result<()> {
        for (j, &g) in self.gamma.iter().enumerate() {
            if g < 1.0 / k_gamma || g > k_gamma {
                return Err(Error::DegenerateVariance { group: j, value: g });
            }
        }
        Ok(())
    }
}

/// What to do with missing covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Leave-out means over observed classmates, original class size.
    #[default]
    Adjusted,
    /// Drop any classroom with a missing covariate.
    DropClassroom,
    /// Error on any missing covariate.
    Fail,
}

impl std::str::FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjusted" | "adjusted-leave-out-mean" => Ok(Self::Adjusted),
            "drop-classroom" => Ok(Self::DropClassroom),
            "fail" => Ok(Self::Fail),
            other => Err(Error::Config(format!("unknown missing policy `{other}`"))),
        }
    }
}

/// Residual whitening on classrooms with dropped rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Whitening {
    /// `(Ω^obs)^{-1/2}`, exact variance of the observed rows.
    #[default]
    Observed,
    /// `Ω(γ)^{-1/2}(I+ρM)^{-1}` with original `n_c` applied to observed rows.
    Naive,
}

/// Class-level fixed effects expanded as dummy columns of `v^c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FixedEffect {
    School,
    ClassType,
    /// Categorical classroom covariate; replaces the numeric column.
    Column(String),
}

impl std::str::FromStr for FixedEffect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "school" | "school_id" => Ok(Self::School),
            "classtype" | "class_type" => Ok(Self::ClassType),
            other if other.starts_with("cv_") => Ok(Self::Column(other.to_string())),
            other => Err(Error::Config(format!(
                "unknown fixed effect `{other}` (use school, classtype or a cv_ column)"
            ))),
        }
    }
}

impl std::fmt::Display for FixedEffect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::School => f.write_str("school"),
            Self::ClassType => f.write_str("classtype"),
            Self::Column(c) => f.write_str(c),
        }
    }
}

impl TryFrom<String> for FixedEffect {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FixedEffect> for String {
    fn from(v: FixedEffect) -> String {
        v.to_string()
    }
}

/// Excluded instruments.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InstrumentChoice {
    /// The constant vector.
    #[default]
    Constant,
    /// Named `z_` columns.
    Columns(Vec<String>),
}

impl std::str::FromStr for InstrumentChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "const" || s == "constant" {
            return Ok(Self::Constant);
        }
        if let Some(rest) = s.strip_prefix("col:") {
            let cols: Vec<String> = rest
                .split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(String::from)
                .collect();
            if !cols.is_empty() {
                return Ok(Self::Columns(cols));
            }
        }
        Err(Error::Config(format!(
            "unknown instrument `{s}` (use const or col:<name>[,<name>...])"
        )))
    }
}

impl std::fmt::Display for InstrumentChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant => f.write_str("const"),
            Self::Columns(c) => write!(f, "col:{}", c.join(",")),
        }
    }
}

impl TryFrom<String> for InstrumentChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InstrumentChoice> for String {
    fn from(v: InstrumentChoice) -> String {
        v.to_string()
    }
}

/// Options for [`build_design`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignOptions {
    pub missing_policy: MissingPolicy,
    pub whitening: Whitening,
    pub fixed_effects: Vec<FixedEffect>,
    pub instrument: InstrumentChoice,
}

/// Source role of a design column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ClassV,
    ClassW1,
    ClassW2,
    StudentV,
    StudentW1,
    StudentW2,
    PeerV,
    PeerW1,
    PeerW2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnLabel {
    pub name: String,
    pub role: Role,
}

/// Column counts of the six covariate groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeltaDims {
    pub vc: usize,
    pub w1c: usize,
    pub w2c: usize,
    pub vp: usize,
    pub w1p: usize,
    pub w2p: usize,
}

impl DeltaDims {
    pub fn p_x(&self) -> usize {
        self.vc + self.w1c + self.w2c + 2 * (self.vp + self.w1p + self.w2p)
    }
}

/// Structural coefficients behind δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralDelta {
    pub delta_vc: Vec<f64>,
    pub beta_w1c: Vec<f64>,
    pub beta_w2c: Vec<f64>,
    pub delta_vp: Vec<f64>,
    pub beta_w1p: Vec<f64>,
    pub beta_w2p: Vec<f64>,
}

impl StructuralDelta {
    pub fn dims(&self) -> DeltaDims {
        DeltaDims {
            vc: self.delta_vc.len(),
            w1c: self.beta_w1c.len(),
            w2c: self.beta_w2c.len(),
            vp: self.delta_vp.len(),
            w1p: self.beta_w1p.len(),
            w2p: self.beta_w2p.len(),
        }
    }

    /// δ in design-column order.
    pub fn pack(&self, f1: f64, rho: f64) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.dims().p_x());
        d.extend_from_slice(&self.delta_vc);
        d.extend_from_slice(&self.beta_w1c);
        d.extend(self.beta_w2c.iter().map(|b| -f1 * b));
        d.extend_from_slice(&self.delta_vp);
        d.extend_from_slice(&self.beta_w1p);
        d.extend(self.beta_w2p.iter().map(|b| -f1 * b));
        d.extend(self.delta_vp.iter().map(|b| rho * b));
        d.extend(self.beta_w1p.iter().map(|b| rho * b));
        d.extend(self.beta_w2p.iter().map(|b| -rho * f1 * b));
        d
    }

    /// Inverse of [`pack`](Self::pack), read from the own-covariate blocks.
    pub fn unpack(delta: &[f64], dims: DeltaDims, f1: f64) -> Result<Self> {
        if delta.len() != dims.p_x() {
            return Err(Error::Dimension {
                expected: dims.p_x(),
                got: delta.len(),
            });
        }
        if (dims.w2c > 0 || dims.w2p > 0) && f1.abs() < SINGULAR_EPS {
            return Err(Error::OutOfRange("f1 = 0 leaves beta_w2 unidentified".into()));
        }
        let mut at = 0;
        let mut take = |k: usize| {
            let s = delta[at..at + k].to_vec();
            at += k;
            s
        };
        let delta_vc = take(dims.vc);
        let beta_w1c = take(dims.w1c);
        let beta_w2c = take(dims.w2c).into_iter().map(|d| -d / f1).collect();
        let delta_vp = take(dims.vp);
        let beta_w1p = take(dims.w1p);
        let beta_w2p = take(dims.w2p).into_iter().map(|d| -d / f1).collect();
        Ok(Self {
            delta_vc,
            beta_w1c,
            beta_w2c,
            delta_vp,
            beta_w1p,
            beta_w2p,
        })
    }
}

/// One classroom block of the observed design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedBlock {
    /// Index into `Sample::classrooms`.
    pub classroom: usize,
    /// Original class size, used by all peer formulas.
    pub n_full: usize,
    /// Observed rows in the design.
    pub n_obs: usize,
    pub group: usize,
}

/// A student or classroom excluded from the design, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub id: String,
    pub reason: String,
}

/// The quasi-differenced regression on observed rows.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    /// `n_obs × p_x`, columns `(v^c, w1^c, w2^c, v^p, w1^p, w2^p, Mv^p, Mw1^p, Mw2^p)`.
    pub x: DMatrix<f64>,
    pub labels: Vec<ColumnLabel>,
    pub dims: DeltaDims,
    pub y1: DVector<f64>,
    pub y2: DVector<f64>,
    /// Excluded instruments, `n_obs × q`.
    pub z: DMatrix<f64>,
    pub z_labels: Vec<String>,
    pub blocks: Vec<ObservedBlock>,
    pub offsets: Vec<usize>,
    /// Row of each observation in the sample's student arrays.
    pub rows: Vec<usize>,
    pub n_groups: usize,
    pub whitening: Whitening,
    pub dropped_students: Vec<Dropped>,
    pub dropped_classrooms: Vec<Dropped>,
}

fn levels<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut l: Vec<String> = values.map(String::from).collect();
    l.sort();
    l.dedup();
    l
}

fn float_key(v: f64) -> String {
    format!("{v}")
}

/// Build the design under the given options.
pub fn build_design(sample: &Sample, opts: &DesignOptions) -> Result<DesignMatrix> {
    sample.validate()?;
    let n_cls = sample.classrooms.len();

    // Classroom-level covariates, with FE dummies appended to v^c.
    let mut cv = sample.cv.clone();
    let mut fe_cols: Vec<(String, Vec<f64>)> = Vec::new();
    for fe in &opts.fixed_effects {
        let (tag, keys): (String, Vec<Option<String>>) = match fe {
            FixedEffect::School => (
                "school".into(),
                sample.classrooms.iter().map(|c| c.school.clone()).collect(),
            ),
            FixedEffect::ClassType => (
                "classtype".into(),
                sample
                    .classrooms
                    .iter()
                    .map(|c| Some(sample.type_labels[c.class_type].clone()))
                    .collect(),
            ),
            FixedEffect::Column(name) => {
                let col = cv
                    .remove(name)
                    .ok_or_else(|| Error::Config(format!("fixed-effect column `{name}` not found")))?;
                let keys = col
                    .iter()
                    .map(|v| (!v.is_nan()).then(|| float_key(*v)))
                    .collect();
                (name.clone(), keys)
            }
        };
        let present: Vec<&str> = keys.iter().flatten().map(String::as_str).collect();
        let lv = levels(present.into_iter());
        for level in lv.iter().skip(1) {
            let col = keys
                .iter()
                .map(|k| match k {
                    Some(k) if k == level => 1.0,
                    Some(_) => 0.0,
                    None => f64::NAN,
                })
                .collect();
            fe_cols.push((format!("fe_{tag}[{level}]"), col));
        }
    }
    for (name, col) in fe_cols {
        cv.names.push(name);
        cv.data.push(col);
    }

    let class_panels = [(&cv, Role::ClassV), (&sample.cw1, Role::ClassW1), (&sample.cw2, Role::ClassW2)];
    let student_panels = [
        (&sample.sv, Role::StudentV, Role::PeerV),
        (&sample.sw1, Role::StudentW1, Role::PeerW1),
        (&sample.sw2, Role::StudentW2, Role::PeerW2),
    ];
    let z_cols: Vec<(String, Vec<f64>)> = match &opts.instrument {
        InstrumentChoice::Constant => vec![("const".into(), vec![1.0; n_cls])],
        InstrumentChoice::Columns(names) => names
            .iter()
            .map(|name| {
                let prefixed = format!("z_{name}");
                let k = sample
                    .z
                    .names
                    .iter()
                    .position(|n| n == name || *n == prefixed)
                    .ok_or_else(|| Error::Config(format!("instrument column `{name}` not found")))?;
                Ok((sample.z.names[k].clone(), sample.z.data[k].clone()))
            })
            .collect::<Result<_>>()?,
    };

    let offs = sample.offsets();
    let mut dropped_students = Vec::new();
    let mut dropped_classrooms = Vec::new();
    let mut keep_class = vec![true; n_cls];

    for (c, cls) in sample.classrooms.iter().enumerate() {
        let missing_class_col = class_panels
            .iter()
            .flat_map(|(p, _)| p.names.iter().zip(&p.data))
            .chain(z_cols.iter().map(|(n, d)| (n, d)))
            .find(|(_, d)| d[c].is_nan())
            .map(|(n, _)| n.clone());
        if let Some(col) = missing_class_col {
            if opts.missing_policy == MissingPolicy::Fail {
                return Err(Error::MissingValue {
                    classroom: cls.id.clone(),
                    column: col,
                });
            }
            keep_class[c] = false;
            dropped_classrooms.push(Dropped {
                id: cls.id.clone(),
                reason: format!("missing classroom value `{col}`"),
            });
            continue;
        }
        let r = offs[c]..offs[c + 1];
        for (p, _, _) in &student_panels {
            for (name, col) in p.names.iter().zip(&p.data) {
                let seg = &col[r.clone()];
                let n_miss = seg.iter().filter(|v| v.is_nan()).count();
                if n_miss == 0 {
                    continue;
                }
                match opts.missing_policy {
                    MissingPolicy::Fail => {
                        return Err(Error::MissingValue {
                            classroom: cls.id.clone(),
                            column: name.clone(),
                        })
                    }
                    MissingPolicy::DropClassroom => {
                        if keep_class[c] {
                            keep_class[c] = false;
                            dropped_classrooms.push(Dropped {
                                id: cls.id.clone(),
                                reason: format!("missing student value `{name}`"),
                            });
                        }
                    }
                    MissingPolicy::Adjusted => {
                        if n_miss == seg.len() {
                            return Err(Error::UnusableClassroom {
                                classroom: cls.id.clone(),
                                column: name.clone(),
                            });
                        }
                    }
                }
            }
        }
    }

    let mut labels = Vec::new();
    for (p, role) in &class_panels {
        labels.extend(p.names.iter().map(|n| ColumnLabel {
            name: n.clone(),
            role: *role,
        }));
    }
    for (p, role, _) in &student_panels {
        labels.extend(p.names.iter().map(|n| ColumnLabel {
            name: n.clone(),
            role: *role,
        }));
    }
    for (p, _, peer) in &student_panels {
        labels.extend(p.names.iter().map(|n| ColumnLabel {
            name: format!("peer_{n}"),
            role: *peer,
        }));
    }
    let dims = DeltaDims {
        vc: cv.ncols(),
        w1c: sample.cw1.ncols(),
        w2c: sample.cw2.ncols(),
        vp: sample.sv.ncols(),
        w1p: sample.sw1.ncols(),
        w2p: sample.sw2.ncols(),
    };
    let p_x = dims.p_x();

    let mut rows = Vec::new();
    let mut blocks = Vec::new();
    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut z_rows: Vec<Vec<f64>> = Vec::new();
    for (c, cls) in sample.classrooms.iter().enumerate() {
        if !keep_class[c] {
            continue;
        }
        let r = offs[c]..offs[c + 1];
        let n_c = cls.size as f64;
        // n_c·x̄^obs per student column.
        let scaled_sums: Vec<Vec<f64>> = student_panels
            .iter()
            .map(|(p, _, _)| {
                p.data
                    .iter()
                    .map(|col| {
                        let seg = &col[r.clone()];
                        let (sum, cnt) = seg
                            .iter()
                            .filter(|v| !v.is_nan())
                            .fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
                        if cnt == seg.len() {
                            sum
                        } else {
                            n_c * sum / cnt as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let mut n_obs = 0;
        for i in r.clone() {
            if sample.y1[i].is_nan() || sample.y2[i].is_nan() {
                dropped_students.push(Dropped {
                    id: sample.student_ids[i].clone(),
                    reason: "missing outcome".into(),
                });
                continue;
            }
            let miss_cov = student_panels
                .iter()
                .flat_map(|(p, _, _)| p.names.iter().zip(&p.data))
                .find(|(_, d)| d[i].is_nan());
            if let Some((name, _)) = miss_cov {
                dropped_students.push(Dropped {
                    id: sample.student_ids[i].clone(),
                    reason: format!("missing `{name}`"),
                });
                continue;
            }
            let mut row = Vec::with_capacity(p_x);
            for (p, _) in &class_panels {
                row.extend(p.data.iter().map(|d| d[c]));
            }
            for (p, _, _) in &student_panels {
                row.extend(p.data.iter().map(|d| d[i]));
            }
            for (g, (p, _, _)) in student_panels.iter().enumerate() {
                row.extend(
                    p.data
                        .iter()
                        .zip(&scaled_sums[g])
                        .map(|(d, s)| (s - d[i]) / (n_c - 1.0)),
                );
            }
            x_rows.push(row);
            z_rows.push(z_cols.iter().map(|(_, d)| d[c]).collect());
            rows.push(i);
            n_obs += 1;
        }
        if n_obs == 0 {
            dropped_classrooms.push(Dropped {
                id: cls.id.clone(),
                reason: "no observed students".into(),
            });
            continue;
        }
        blocks.push(ObservedBlock {
            classroom: c,
            n_full: cls.size,
            n_obs,
            group: cls.group,
        });
    }

    let n_obs = rows.len();
    if n_obs == 0 {
        return Err(Error::Config("no usable observations".into()));
    }
    let x = DMatrix::from_fn(n_obs, p_x, |i, k| x_rows[i][k]);
    let z = DMatrix::from_fn(n_obs, z_cols.len(), |i, k| z_rows[i][k]);
    let y1 = DVector::from_iterator(n_obs, rows.iter().map(|&i| sample.y1[i]));
    let y2 = DVector::from_iterator(n_obs, rows.iter().map(|&i| sample.y2[i]));
    let mut offsets = vec![0];
    for b in &blocks {
        offsets.push(offsets.last().unwrap() + b.n_obs);
    }
    let present_groups: std::collections::BTreeSet<usize> = blocks.iter().map(|b| b.group).collect();
    if present_groups.len() != sample.group_labels.len() {
        let missing = (0..sample.group_labels.len())
            .find(|j| !present_groups.contains(j))
            .unwrap();
        return Err(Error::InsufficientTypeCount {
            group: missing,
            count: 0,
            needed: p_x + 1,
        });
    }
    Ok(DesignMatrix {
        x,
        labels,
        dims,
        y1,
        y2,
        z,
        z_labels: z_cols.into_iter().map(|(n, _)| n).collect(),
        blocks,
        offsets,
        rows,
        n_groups: sample.group_labels.len(),
        whitening: opts.whitening,
        dropped_students,
        dropped_classrooms,
    })
}

/// Whitening block for one classroom and its derivative in ρ.
///
/// Without missing rows this is `γ^{-1}(I+ρM_c)^{-1}`. With `n_obs < n_c`
/// under [`Whitening::Observed`] it is `(Ω^obs_c)^{-1/2}` on the observed rows.
pub fn whitening_block(
    n_full: usize,
    n_obs: usize,
    rho: f64,
    gamma: f64,
    mode: Whitening,
) -> Result<(ClassroomBlock, ClassroomBlock)> {
    if n_full < 2 {
        return Err(Error::DegenerateClassroom { size: n_full });
    }
    if n_obs == 0 || n_obs > n_full {
        return Err(Error::OutOfRange(format!(
            "observed rows {n_obs} must lie in 1..={n_full}"
        )));
    }
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::OutOfRange(format!("rho = {rho} outside (-1, 1)")));
    }
    let m1 = n_full as f64 - 1.0;
    let p = (m1 - rho) / m1;
    let q = 1.0 + rho;
    if p.abs() < SINGULAR_EPS || q.abs() < SINGULAR_EPS {
        return Err(Error::SingularBlock { p, q });
    }
    let g = 1.0 / gamma;
    if n_obs == n_full || mode == Whitening::Naive {
        let t = ClassroomBlock::new(g / p, g / q, n_obs)?;
        let dt = ClassroomBlock::new(g / (m1 * p * p), -g / (q * q), n_obs)?;
        return Ok((t, dt));
    }
    let r = n_obs as f64 / n_full as f64;
    let a = p * p;
    let s = a * (1.0 - r) + r * q * q;
    let da = -2.0 * (m1 - rho) / (m1 * m1);
    let ds = da * (1.0 - r) + 2.0 * r * q;
    let t = ClassroomBlock::new(g / p, g / s.sqrt(), n_obs)?;
    let dt = ClassroomBlock::new(g / (m1 * p * p), -0.5 * g * ds / (s * s.sqrt()), n_obs)?;
    Ok((t, dt))
}

/// Block form of `Ω^obs_c / σ²` on `n_obs` rows.
pub fn omega_obs_block(n_full: usize, n_obs: usize, rho: f64) -> Result<ClassroomBlock> {
    if n_full < 2 {
        return Err(Error::DegenerateClassroom { size: n_full });
    }
    if n_obs == 0 || n_obs > n_full {
        return Err(Error::OutOfRange(format!(
            "observed rows {n_obs} must lie in 1..={n_full}"
        )));
    }
    let m1 = n_full as f64 - 1.0;
    let a = ((m1 - rho) / m1).powi(2);
    let b = ((1.0 + rho).powi(2) - a) / n_full as f64;
    ClassroomBlock::new(a, a + n_obs as f64 * b, n_obs)
}

/// Dense `Ω^obs_c = σ²[a·I + ((1+ρ)² − a)/n_c·𝟙𝟙′]` on the observed rows.
pub fn omega_obs(n_full: usize, n_obs: usize, rho: f64, sigma2: f64) -> Result<DMatrix<f64>> {
    let b = omega_obs_block(n_full, n_obs, rho)?;
    Ok(DMatrix::from_fn(n_obs, n_obs, |i, j| sigma2 * b.entry(i, j)))
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.y1.len()
    }

    pub fn p_x(&self) -> usize {
        self.x.ncols()
    }

    /// `H = [X, z]`.
    pub fn h(&self) -> DMatrix<f64> {
        let n = self.n();
        let (px, q) = (self.x.ncols(), self.z.ncols());
        let mut h = DMatrix::zeros(n, px + q);
        h.columns_mut(0, px).copy_from(&self.x);
        h.columns_mut(px, q).copy_from(&self.z);
        h
    }

    /// Observed rows per variance group.
    pub fn group_counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.n_groups];
        for b in &self.blocks {
            n[b.group] += b.n_obs;
        }
        n
    }

    /// `y₁ − f₁y₂ − Xδ`.
    pub fn residual(&self, theta: &ParamTheta) -> Result<DVector<f64>> {
        if theta.delta.len() != self.p_x() {
            return Err(Error::Dimension {
                expected: self.p_x(),
                got: theta.delta.len(),
            });
        }
        let d = DVector::from_column_slice(&theta.delta);
        let mut r = &self.y1 - &self.y2 * theta.f1;
        r.gemv(-1.0, &self.x, &d, 1.0);
        Ok(r)
    }

    /// Whitening operator `T(ρ, γ)` and `∂T/∂ρ`, one block per classroom.
    pub fn whitening(&self, rho: f64, gamma: &VarGamma) -> Result<(BlockDiag, BlockDiag)> {
        if gamma.gamma.len() != self.n_groups {
            return Err(Error::Dimension {
                expected: self.n_groups,
                got: gamma.gamma.len(),
            });
        }
        let mut t = Vec::with_capacity(self.blocks.len());
        let mut dt = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (tb, db) = whitening_block(b.n_full, b.n_obs, rho, gamma.gamma[b.group], self.whitening)?;
            t.push(tb);
            dt.push(db);
        }
        Ok((BlockDiag::new(t), BlockDiag::new(dt)))
    }

    /// Quadratic-moment operator on the observed blocks. Blocks with fewer
    /// than two observed students contribute zero.
    pub fn a_operator(&self, a: AChoice) -> Result<BlockDiag> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                if b.n_obs < 2 {
                    Ok(ClassroomBlock::zero(b.n_obs))
                } else {
                    a.block(b.n_obs)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockDiag::new(blocks))
    }

    /// `u⁺ = Ω(γ)^{-1/2}(I+ρM)^{-1}(y₁ − f₁y₂ − Xδ)`.
    pub fn u_plus(&self, theta: &ParamTheta, gamma: &VarGamma) -> Result<DVector<f64>> {
        let r = self.residual(theta)?;
        let (t, _) = self.whitening(theta.rho, gamma)?;
        Ok(DVector::from_vec(t.apply(r.as_slice())?))
    }

    /// `ε⁺ = (I+ρM)^{-1}(y₁ − f₁y₂ − Xδ)`.
    pub fn eps_plus(&self, theta: &ParamTheta) -> Result<DVector<f64>> {
        self.u_plus(theta, &VarGamma::ones(self.n_groups))
    }

    /// `(I+ρM)` applied to `v` on full-size blocks (no missing rows).
    pub fn i_plus_rho_m(&self, rho: f64, v: &[f64]) -> Result<Vec<f64>> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                if b.n_obs != b.n_full {
                    return Err(Error::Config("classroom has missing rows".into()));
                }
                ClassroomBlock::i_plus_rho_m(b.n_full, rho)
            })
            .collect::<Result<Vec<_>>>()?;
        BlockDiag::new(blocks).apply(v)
    }

    /// Smallest over largest eigenvalue of `X′X` after scaling columns to
    /// unit norm. Returns `None` when there are no columns.
    pub fn conditioning(&self) -> Option<f64> {
        conditioning(&self.x)
    }

    /// Collinearity check with the given relative threshold.
    pub fn check_rank(&self, threshold: f64) -> Result<()> {
        check_rank(&self.x, &self.labels.iter().map(|l| l.name.clone()).collect::<Vec<_>>(), threshold)
    }

    /// Indices of observations per variance group.
    pub fn group_rows(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups];
        for (b, w) in self.blocks.iter().zip(self.offsets.windows(2)) {
            out[b.group].extend(w[0]..w[1]);
        }
        out
    }
}

/// `λ_min/λ_max` of `X′X` on column-normalized `X`.
pub fn conditioning(x: &DMatrix<f64>) -> Option<f64> {
    if x.ncols() == 0 {
        return None;
    }
    let mut xs = x.clone();
    for mut col in xs.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let xtx = xs.transpose() * &xs;
    let eig = xtx.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if max <= 0.0 {
        return Some(0.0);
    }
    Some(min / max)
}

pub(crate) fn check_rank(x: &DMatrix<f64>, names: &[String], threshold: f64) -> Result<()> {
    for (k, col) in x.column_iter().enumerate() {
        if col.iter().all(|v| *v == 0.0) {
            return Err(Error::Collinear(format!("column `{}` is identically zero", names[k])));
        }
    }
    if let Some(ratio) = conditioning(x) {
        if ratio < threshold {
            return Err(Error::Collinear(format!(
                "smallest/largest eigenvalue of X'X is {ratio:.3e} (threshold {threshold:.0e}); columns {}",
                names.join(", ")
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_sample() -> Sample {
        Sample {
            classrooms: vec![
                Classroom {
                    id: "a".into(),
                    school: Some("s1".into()),
                    class_type: 0,
                    group: 0,
                    size: 3,
                },
                Classroom {
                    id: "b".into(),
                    school: Some("s2".into()),
                    class_type: 0,
                    group: 0,
                    size: 2,
                },
            ],
            type_labels: vec!["regular".into()],
            group_labels: vec!["regular".into()],
            student_ids: (0..5).map(|i| format!("s{i}")).collect(),
            y1: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            y2: vec![0.5, 1.5, 2.5, 3.0, 4.5],
            sv: Panel::new(vec!["x".into()], vec![vec![1.0, 2.0, 3.0, 5.0, 7.0]]).unwrap(),
            sw1: Panel::empty(),
            sw2: Panel::empty(),
            cv: Panel::new(vec!["cv_k".into()], vec![vec![10.0, 20.0]]).unwrap(),
            cw1: Panel::empty(),
            cw2: Panel::empty(),
            z: Panel::empty(),
        }
    }

    #[test]
    fn peer_columns_full() {
        let d = build_design(&toy_sample(), &DesignOptions::default()).unwrap();
        assert_eq!(d.p_x(), 3);
        let peer: Vec<f64> = d.x.column(2).iter().copied().collect();
        assert_eq!(peer, vec![2.5, 2.0, 1.5, 7.0, 5.0]);
        assert_eq!(d.x.column(0).as_slice(), &[10.0, 10.0, 10.0, 20.0, 20.0]);
    }

    #[test]
    fn peer_columns_adjusted() {
        let mut s = toy_sample();
        s.sv.data[0][2] = f64::NAN;
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        assert_eq!(d.n(), 4);
        assert_eq!(d.blocks[0].n_obs, 2);
        assert_eq!(d.blocks[0].n_full, 3);
        assert!((d.x[(0, 2)] - 1.75).abs() < 1e-15);
        assert!((d.x[(1, 2)] - 1.25).abs() < 1e-15);
        assert_eq!(d.dropped_students.len(), 1);
    }

    #[test]
    fn constant_covariate_peer_equals_own() {
        let mut s = toy_sample();
        s.sv.data[0] = vec![4.0, 4.0, 4.0, 9.0, 9.0];
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        assert_eq!(d.x.column(1), d.x.column(2));
    }

    #[test]
    fn missing_outcome_keeps_class_size() {
        let mut s = toy_sample();
        s.y1[0] = f64::NAN;
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        assert_eq!(d.blocks[0].n_obs, 2);
        assert_eq!(d.blocks[0].n_full, 3);
        // Student 1's peers still include student 0's covariate.
        assert!((d.x[(0, 2)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn missing_policies() {
        let mut s = toy_sample();
        s.sv.data[0][4] = f64::NAN;
        let drop = DesignOptions {
            missing_policy: MissingPolicy::DropClassroom,
            ..Default::default()
        };
        let d = build_design(&s, &drop).unwrap();
        assert_eq!(d.blocks.len(), 1);
        let fail = DesignOptions {
            missing_policy: MissingPolicy::Fail,
            ..Default::default()
        };
        assert!(matches!(build_design(&s, &fail), Err(Error::MissingValue { .. })));
        s.sv.data[0][3] = f64::NAN;
        assert!(matches!(
            build_design(&s, &DesignOptions::default()),
            Err(Error::UnusableClassroom { .. })
        ));
    }

    #[test]
    fn missing_classroom_covariate_drops_class() {
        let mut s = toy_sample();
        s.cv.data[0][1] = f64::NAN;
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        assert_eq!(d.blocks.len(), 1);
        assert_eq!(d.dropped_classrooms[0].id, "b");
    }

    #[test]
    fn fixed_effect_dummies() {
        let opts = DesignOptions {
            fixed_effects: vec![FixedEffect::School],
            ..Default::default()
        };
        let d = build_design(&toy_sample(), &opts).unwrap();
        assert_eq!(d.dims.vc, 2);
        assert_eq!(d.labels[1].name, "fe_school[s2]");
        assert_eq!(d.x.column(1).as_slice(), &[0.0, 0.0, 0.0, 1.0, 1.0]);
        let col = DesignOptions {
            fixed_effects: vec![FixedEffect::Column("cv_k".into())],
            ..Default::default()
        };
        let d = build_design(&toy_sample(), &col).unwrap();
        assert_eq!(d.dims.vc, 1);
        assert_eq!(d.labels[0].name, "fe_cv_k[20]");
    }

    #[test]
    fn u_plus_examples() {
        let s = toy_sample();
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        let theta = ParamTheta::new(0.0, 0.7, vec![0.1, -0.2, 0.3]);
        let u = d.u_plus(&theta, &VarGamma::ones(1)).unwrap();
        let r = d.residual(&theta).unwrap();
        assert!((u - r).amax() < 1e-15);

        let two = Sample {
            classrooms: vec![s.classrooms[1].clone()],
            student_ids: vec!["a".into(), "b".into()],
            y1: vec![1.0, -1.0],
            y2: vec![0.0, 0.0],
            sv: Panel::empty(),
            cv: Panel::empty(),
            ..s.clone()
        };
        let d2 = build_design(&two, &DesignOptions::default()).unwrap();
        let u = d2.u_plus(&ParamTheta::new(0.5, 0.0, vec![]), &VarGamma::ones(1)).unwrap();
        assert!((u[0] - 2.0).abs() < 1e-14 && (u[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn omega_obs_examples() {
        let o = omega_obs(3, 3, 0.0, 2.0).unwrap();
        assert!((o - DMatrix::identity(3, 3) * 2.0).amax() < 1e-15);
        let o = omega_obs(3, 2, 0.5, 1.0).unwrap();
        assert!((o[(0, 0)] - 1.125).abs() < 1e-14);
        assert!((o[(0, 1)] - 0.5625).abs() < 1e-14);
        assert!(omega_obs(3, 0, 0.5, 1.0).is_err());
    }

    #[test]
    fn observed_whitening_inverts_omega_obs() {
        let (t, _) = whitening_block(7, 4, 0.45, 1.3, Whitening::Observed).unwrap();
        let om = omega_obs_block(7, 4, 0.45).unwrap().scale(1.3 * 1.3);
        let prod = t.compose(&om).unwrap().compose(&t).unwrap();
        assert!((prod.p - 1.0).abs() < 1e-13 && (prod.q - 1.0).abs() < 1e-13);
    }

    #[test]
    fn whitening_derivative_matches_difference() {
        for (n, k) in [(5, 5), (6, 3), (4, 1)] {
            for mode in [Whitening::Observed, Whitening::Naive] {
                let rho = 0.3;
                let h = 1e-6;
                let (_, dt) = whitening_block(n, k, rho, 0.8, mode).unwrap();
                let (tp, _) = whitening_block(n, k, rho + h, 0.8, mode).unwrap();
                let (tm, _) = whitening_block(n, k, rho - h, 0.8, mode).unwrap();
                assert!(((tp.q - tm.q) / (2.0 * h) - dt.q).abs() < 1e-7);
                if k > 1 {
                    assert!(((tp.p - tm.p) / (2.0 * h) - dt.p).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn delta_round_trip() {
        let s = StructuralDelta {
            delta_vc: vec![1.0, 2.0],
            beta_w1c: vec![3.0],
            beta_w2c: vec![4.0],
            delta_vp: vec![5.0],
            beta_w1p: vec![6.0],
            beta_w2p: vec![7.0],
        };
        let d = s.pack(0.8, 0.4);
        assert_eq!(d.len(), 10);
        assert!((d[3] + 3.2).abs() < 1e-15);
        assert!((d[9] + 0.4 * 0.8 * 7.0).abs() < 1e-14);
        let back = StructuralDelta::unpack(&d, s.dims(), 0.8).unwrap();
        for (a, b) in back.beta_w2p.iter().zip(&s.beta_w2p) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(back.delta_vc, s.delta_vc);
    }

    #[test]
    fn permutation_moves_rows() {
        let s = toy_sample();
        let p = s.permute_classrooms(&[1, 0]).unwrap();
        assert_eq!(p.y1, vec![4.0, 5.0, 1.0, 2.0, 3.0]);
        assert_eq!(p.cv.data[0], vec![20.0, 10.0]);
        assert!(s.permute_classrooms(&[0, 0]).is_err());
    }

    #[test]
    fn rank_check() {
        let mut s = toy_sample();
        s.cv.data[0] = vec![0.0, 0.0];
        let d = build_design(&s, &DesignOptions::default()).unwrap();
        assert!(matches!(d.check_rank(1e-10), Err(Error::Collinear(_))));
        let d = build_design(&toy_sample(), &DesignOptions::default()).unwrap();
        assert!(d.check_rank(1e-10).is_ok());
    }
}
