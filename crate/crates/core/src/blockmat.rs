//! Closed-form algebra for block-diagonal operators whose classroom blocks
//! are `p·I* + q·J*`, with `I* = I − 𝟙𝟙'/n` and `J* = 𝟙𝟙'/n`.
//!
//! Every operator the estimator needs (the leave-out-mean matrix `M`,
//! `I + ρM` and its inverse, `Ω(γ)`, `Σ_t`, and the quadratic-moment weight
//! `A`) lives in this algebra, so products, inverses, traces and quadratic
//! forms reduce to scalar arithmetic on `(p, q)` pairs plus within-block
//! sums. Nothing here ever forms an `n × n` matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients with magnitude below this are treated as zero when testing
/// for singularity.
pub const SINGULAR_EPS: f64 = 1e-14;

/// One classroom's operator `p·I*_c + q·J*_c` of dimension `size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassroomBlock {
    pub p: f64,
    pub q: f64,
    pub size: usize,
}

impl ClassroomBlock {
    /// Block of dimension `size ≥ 1`. For `size == 1`, `I*` vanishes and only
    /// `q` matters; leave-out-mean blocks additionally need `size ≥ 2`.
    pub fn new(p: f64, q: f64, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::DegenerateClassroom { size });
        }
        Ok(Self { p, q, size })
    }

    pub fn identity(size: usize) -> Self {
        Self { p: 1.0, q: 1.0, size }
    }

    pub fn scalar(s: f64, size: usize) -> Self {
        Self { p: s, q: s, size }
    }

    pub fn zero(size: usize) -> Self {
        Self { p: 0.0, q: 0.0, size }
    }

    /// `M_c = (𝟙𝟙' − I)/(n_c − 1)`, the leave-out-mean operator.
    pub fn leave_out_mean(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::DegenerateClassroom { size });
        }
        Ok(Self {
            p: -1.0 / (size as f64 - 1.0),
            q: 1.0,
            size,
        })
    }

    /// `I + ρM_c`.
    pub fn i_plus_rho_m(size: usize, rho: f64) -> Result<Self> {
        let m = Self::leave_out_mean(size)?;
        Ok(Self {
            p: 1.0 + rho * m.p,
            q: 1.0 + rho * m.q,
            size,
        })
    }

    /// `M_c'M_c − diag(M_c'M_c)`: zero diagonal, symmetric. Vanishes for
    /// two-student classrooms.
    pub fn mtm_offdiag(size: usize) -> Result<Self> {
        let m = Self::leave_out_mean(size)?;
        let mtm = m.compose(&m)?;
        let diag = 1.0 / (size as f64 - 1.0);
        Ok(Self {
            p: mtm.p - diag,
            q: mtm.q - diag,
            size,
        })
    }

    fn check_size(&self, other: &Self) -> Result<()> {
        if self.size != other.size {
            return Err(Error::Dimension {
                expected: self.size,
                got: other.size,
            });
        }
        Ok(())
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.check_size(other)?;
        Ok(Self {
            p: self.p * other.p,
            q: self.q * other.q,
            size: self.size,
        })
    }

    /// Sum of two blocks of equal size.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_size(other)?;
        Ok(Self {
            p: self.p + other.p,
            q: self.q + other.q,
            size: self.size,
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            p: self.p * s,
            q: self.q * s,
            size: self.size,
        }
    }

    /// Whether the `I*` coefficient is inert (one-student block).
    fn p_inert(&self) -> bool {
        self.size == 1
    }

    pub fn invert(&self) -> Result<Self> {
        let p_zero = !self.p_inert() && self.p.abs() < SINGULAR_EPS;
        if p_zero || self.q.abs() < SINGULAR_EPS {
            return Err(Error::SingularBlock {
                p: self.p,
                q: self.q,
            });
        }
        Ok(Self {
            p: if self.p_inert() { self.p } else { 1.0 / self.p },
            q: 1.0 / self.q,
            size: self.size,
        })
    }

    pub fn trace(&self) -> f64 {
        self.p * (self.size as f64 - 1.0) + self.q
    }

    pub fn determinant(&self) -> f64 {
        self.p.powi(self.size as i32 - 1) * self.q
    }

    /// `out = (pI* + qJ*) x`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.size);
        debug_assert_eq!(out.len(), self.size);
        let mean = x.iter().sum::<f64>() / self.size as f64;
        let shift = (self.q - self.p) * mean;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = self.p * xi + shift;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    /// `u'(pI* + qJ*)v`.
    pub fn quad_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let su: f64 = u.iter().sum();
        let sv: f64 = v.iter().sum();
        self.p * dot + (self.q - self.p) * su * sv / self.size as f64
    }

    /// Entry `(i, j)` of the dense realization.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let off = (self.q - self.p) / self.size as f64;
        if i == j {
            self.p + off
        } else {
            off
        }
    }
}

/// Leave-out-mean block for a classroom of `n_c` students.
pub fn m_block(n_c: usize) -> Result<ClassroomBlock> {
    ClassroomBlock::leave_out_mean(n_c)
}

/// Block-diagonal operator with one block per classroom.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiag {
    blocks: Vec<ClassroomBlock>,
    offsets: Vec<usize>,
}

impl BlockDiag {
    pub fn new(blocks: Vec<ClassroomBlock>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(0);
        for b in &blocks {
            offsets.push(offsets.last().unwrap() + b.size);
        }
        Self { blocks, offsets }
    }

    pub fn blocks(&self) -> &[ClassroomBlock] {
        &self.blocks
    }

    /// Row offsets; block `c` occupies `offsets[c]..offsets[c + 1]`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &Self,
        f: impl Fn(&ClassroomBlock, &ClassroomBlock) -> Result<ClassroomBlock>,
    ) -> Result<Self> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::Dimension {
                expected: self.blocks.len(),
                got: other.blocks.len(),
            });
        }
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| f(a, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(blocks))
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a.compose(b))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a.add(b))
    }

    pub fn invert(&self) -> Result<Self> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.invert())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(blocks))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.blocks.iter().map(|b| b.scale(s)).collect())
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(ClassroomBlock::trace).sum()
    }

    /// `tr(A²)` from the closed forms, without materializing `A²`.
    pub fn trace_of_square(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.p * b.p * (b.size as f64 - 1.0) + b.q * b.q)
            .sum()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(x.len())?;
        self.check_dim(out.len())?;
        for (c, b) in self.blocks.iter().enumerate() {
            let r = self.offsets[c]..self.offsets[c + 1];
            b.apply_into(&x[r.clone()], &mut out[r]);
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    /// `u'Av` in O(n).
    pub fn quad_form(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_dim(u.len())?;
        self.check_dim(v.len())?;
        Ok(self
            .blocks
            .iter()
            .enumerate()
            .map(|(c, b)| {
                let r = self.offsets[c]..self.offsets[c + 1];
                b.quad_form(&u[r.clone()], &v[r])
            })
            .sum())
    }

    /// Per-classroom contributions `u_c'A_c v_c`.
    pub fn quad_form_by_block(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u.len())?;
        self.check_dim(v.len())?;
        Ok(self
            .blocks
            .iter()
            .enumerate()
            .map(|(c, b)| {
                let r = self.offsets[c]..self.offsets[c + 1];
                b.quad_form(&u[r.clone()], &v[r])
            })
            .collect())
    }
}

pub fn compose(a: &ClassroomBlock, b: &ClassroomBlock) -> Result<ClassroomBlock> {
    a.compose(b)
}

pub fn invert(a: &ClassroomBlock) -> Result<ClassroomBlock> {
    a.invert()
}

pub fn trace(a: &ClassroomBlock) -> f64 {
    a.trace()
}

pub fn quad_form(a: &BlockDiag, u: &[f64], v: &[f64]) -> Result<f64> {
    a.quad_form(u, v)
}

/// Weight for the quadratic moment `u'Au`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AChoice {
    /// `A = M`.
    #[default]
    #[serde(rename = "M")]
    M,
    /// `A = M'M − diag(M'M)`.
    #[serde(rename = "MtM")]
    MtM,
}

impl AChoice {
    pub fn block(self, size: usize) -> Result<ClassroomBlock> {
        match self {
            AChoice::M => ClassroomBlock::leave_out_mean(size),
            AChoice::MtM => ClassroomBlock::mtm_offdiag(size),
        }
    }
}

impl std::str::FromStr for AChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" | "m" => Ok(AChoice::M),
            "MtM" | "mtm" | "MTM" => Ok(AChoice::MtM),
            other => Err(Error::Config(format!("unknown A choice `{other}`"))),
        }
    }
}

/// Named operators that can be assembled for a list of classrooms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operator {
    M,
    IPlusRhoM,
    InvIPlusRhoM,
    Omega,
    OmegaInvSqrt,
    SigmaT,
    AChoice(AChoice),
}

/// Scalars consumed by [`build_operator`]. Only the ones relevant to the
/// requested operator are inspected.
#[derive(Debug, Clone, Default)]
pub struct OperatorParams {
    pub rho: f64,
    /// `γ_j` per class type.
    pub gamma: Vec<f64>,
    /// `σ_t²` of the test for `Σ_t`.
    pub sigma2: f64,
    /// `ρ_j` per class type for `Σ_t = σ_t² diag(ρ²_{τ_c} I_c)`.
    pub rho_type: Vec<f64>,
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::OutOfRange(format!("rho = {rho} outside (-1, 1)")));
    }
    Ok(())
}

fn type_value(values: &[f64], ty: usize, what: &str) -> Result<f64> {
    let v = *values
        .get(ty)
        .ok_or_else(|| Error::OutOfRange(format!("class type {ty} has no {what}")))?;
    if !(v > 0.0) {
        return Err(Error::OutOfRange(format!("{what}[{ty}] = {v} must be positive")));
    }
    Ok(v)
}

/// Assemble a block-diagonal operator for classrooms of the given sizes and
/// class types (0-based).
pub fn build_operator(
    op: Operator,
    params: &OperatorParams,
    sizes: &[usize],
    types: &[usize],
) -> Result<BlockDiag> {
    if sizes.len() != types.len() {
        return Err(Error::Dimension {
            expected: sizes.len(),
            got: types.len(),
        });
    }
    let blocks = sizes
        .iter()
        .zip(types)
        .map(|(&n, &ty)| -> Result<ClassroomBlock> {
            match op {
                Operator::M => ClassroomBlock::leave_out_mean(n),
                Operator::IPlusRhoM => {
                    check_rho(params.rho)?;
                    ClassroomBlock::i_plus_rho_m(n, params.rho)
                }
                Operator::InvIPlusRhoM => {
                    check_rho(params.rho)?;
                    ClassroomBlock::i_plus_rho_m(n, params.rho)?.invert()
                }
                Operator::Omega => {
                    let g = type_value(&params.gamma, ty, "gamma")?;
                    Ok(ClassroomBlock::scalar(g * g, n))
                }
                Operator::OmegaInvSqrt => {
                    let g = type_value(&params.gamma, ty, "gamma")?;
                    Ok(ClassroomBlock::scalar(1.0 / g, n))
                }
                Operator::SigmaT => {
                    let r = type_value(&params.rho_type, ty, "rho_type")?;
                    if !(params.sigma2 > 0.0) {
                        return Err(Error::OutOfRange("sigma2 must be positive".into()));
                    }
                    Ok(ClassroomBlock::scalar(params.sigma2 * r * r, n))
                }
                Operator::AChoice(a) => a.block(n),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockDiag::new(blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m_block_coefficients() {
        let m = m_block(3).unwrap();
        assert_eq!((m.p, m.q), (-0.5, 1.0));
        assert_eq!(m.apply(&[1.0, 2.0, 3.0]), vec![2.5, 2.0, 1.5]);
        let m2 = m_block(2).unwrap();
        assert_eq!(m2.entry(0, 0), 0.0);
        assert_eq!(m2.entry(0, 1), 1.0);
        assert!(matches!(m_block(1), Err(Error::DegenerateClassroom { size: 1 })));
    }

    #[test]
    fn compose_examples() {
        let a = ClassroomBlock::new(2.0, 3.0, 4).unwrap();
        let b = ClassroomBlock::new(0.5, 1.0 / 3.0, 4).unwrap();
        let c = a.compose(&b).unwrap();
        assert_eq!(c.p, 1.0);
        assert!((c.q - 1.0).abs() < 1e-15);
        let id = ClassroomBlock::identity(5);
        let x = ClassroomBlock::new(-0.7, 2.2, 5).unwrap();
        assert_eq!(id.compose(&x).unwrap(), x);
        let m = m_block(3).unwrap();
        let m2 = m.compose(&m).unwrap();
        assert_eq!((m2.p, m2.q), (0.25, 1.0));
        let bad = ClassroomBlock::identity(3).compose(&ClassroomBlock::identity(4));
        assert!(matches!(bad, Err(Error::Dimension { .. })));
    }

    #[test]
    fn invert_examples() {
        let a = ClassroomBlock::new(2.0, 4.0, 3).unwrap().invert().unwrap();
        assert_eq!((a.p, a.q), (0.5, 0.25));
        let fwd = ClassroomBlock::i_plus_rho_m(3, 0.4).unwrap();
        assert!((fwd.p - 0.8).abs() < 1e-15 && (fwd.q - 1.4).abs() < 1e-15);
        let inv = fwd.invert().unwrap();
        assert!((inv.p - 1.25).abs() < 1e-15);
        assert!((inv.q - 5.0 / 7.0).abs() < 1e-15);
        assert!(matches!(
            ClassroomBlock::new(0.0, 1.0, 3).unwrap().invert(),
            Err(Error::SingularBlock { .. })
        ));
    }

    #[test]
    fn trace_examples() {
        assert_eq!(ClassroomBlock::new(2.0, 3.0, 4).unwrap().trace(), 9.0);
        let m = m_block(3).unwrap();
        assert_eq!(m.trace(), 0.0);
        assert!((m.compose(&m).unwrap().trace() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn quad_form_small_cases() {
        let id = BlockDiag::new(vec![ClassroomBlock::identity(2), ClassroomBlock::identity(3)]);
        let u = [1.0, -2.0, 0.5, 3.0, 1.0];
        let norm2: f64 = u.iter().map(|x| x * x).sum();
        assert!((id.quad_form(&u, &u).unwrap() - norm2).abs() < 1e-14);
        let m = BlockDiag::new(vec![m_block(2).unwrap()]);
        assert_eq!(m.quad_form(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert!(m.quad_form(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn operators() {
        let params = OperatorParams {
            rho: 0.0,
            gamma: vec![2.0],
            ..Default::default()
        };
        let ip = build_operator(Operator::IPlusRhoM, &params, &[3, 4], &[0, 0]).unwrap();
        assert!(ip.blocks().iter().all(|b| b.p == 1.0 && b.q == 1.0));
        let om = build_operator(Operator::Omega, &params, &[3, 4], &[0, 0]).unwrap();
        assert!(om.blocks().iter().all(|b| b.p == 4.0 && b.q == 4.0));
        let a = build_operator(Operator::AChoice(AChoice::MtM), &params, &[3], &[0]).unwrap();
        let b = a.blocks()[0];
        assert!(b.entry(0, 0).abs() < 1e-15);
        assert!((b.entry(0, 1) - 0.25).abs() < 1e-15);
        let bad = OperatorParams {
            rho: 1.0,
            ..Default::default()
        };
        assert!(build_operator(Operator::IPlusRhoM, &bad, &[3], &[0]).is_err());
        let bad_gamma = OperatorParams {
            gamma: vec![-1.0],
            ..Default::default()
        };
        assert!(build_operator(Operator::Omega, &bad_gamma, &[3], &[0]).is_err());
    }

    #[test]
    fn trace_of_square_matches_compose() {
        let a = BlockDiag::new(vec![m_block(2).unwrap(), m_block(4).unwrap()]);
        let sq = a.compose(&a).unwrap();
        assert!((a.trace_of_square() - sq.trace()).abs() < 1e-14);
        assert!((a.trace_of_square() - (2.0 + 4.0 / 3.0)).abs() < 1e-14);
    }
}
