//! Per-mode system matrices and the quadratic weights.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, serde_matrix, serde_matrix_vec};

pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: String,
        got: String,
    },
    #[error("{0} contains non-finite entries")]
    NonFinite(String),
    #[error("at least one mode is required")]
    NoModes,
    #[error("{what} is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },
    #[error("Q has negative eigenvalue {0:e}")]
    QNotPsd(f64),
    #[error("R is not positive definite (smallest eigenvalue {0:e})")]
    RNotPd(f64),
}

pub(crate) fn dims(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// `{A_i, B_i}` for every mode, `A_i` n x n and `B_i` n x d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModeSet", into = "RawModeSet")]
pub struct ModeSet {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawModeSet {
    #[serde(with = "serde_matrix_vec")]
    a: Vec<DMatrix<f64>>,
    #[serde(with = "serde_matrix_vec")]
    b: Vec<DMatrix<f64>>,
}

impl TryFrom<RawModeSet> for ModeSet {
    type Error = ModelError;
    fn try_from(raw: RawModeSet) -> Result<Self, ModelError> {
        ModeSet::new(raw.a, raw.b)
    }
}

impl From<ModeSet> for RawModeSet {
    fn from(m: ModeSet) -> Self {
        RawModeSet { a: m.a, b: m.b }
    }
}

impl ModeSet {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self, ModelError> {
        if a.is_empty() {
            return Err(ModelError::NoModes);
        }
        if a.len() != b.len() {
            return Err(ModelError::DimensionMismatch {
                what: "number of B matrices".into(),
                expected: a.len().to_string(),
                got: b.len().to_string(),
            });
        }
        let n = a[0].nrows();
        let d = b[0].ncols();
        for (i, (ai, bi)) in a.iter().zip(&b).enumerate() {
            if ai.shape() != (n, n) {
                return Err(ModelError::DimensionMismatch {
                    what: format!("modes[{i}].A"),
                    expected: format!("{n}x{n}"),
                    got: dims(ai),
                });
            }
            if bi.shape() != (n, d) {
                return Err(ModelError::DimensionMismatch {
                    what: format!("modes[{i}].B"),
                    expected: format!("{n}x{d}"),
                    got: dims(bi),
                });
            }
            if !linalg::all_finite(ai) {
                return Err(ModelError::NonFinite(format!("modes[{i}].A")));
            }
            if !linalg::all_finite(bi) {
                return Err(ModelError::NonFinite(format!("modes[{i}].B")));
            }
        }
        if n == 0 || d == 0 {
            return Err(ModelError::DimensionMismatch {
                what: "state/input dimension".into(),
                expected: "positive".into(),
                got: format!("n={n}, d={d}"),
            });
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn d(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self, i: usize) -> &DMatrix<f64> {
        &self.a[i]
    }

    pub fn b(&self, i: usize) -> &DMatrix<f64> {
        &self.b[i]
    }

    pub fn a_all(&self) -> &[DMatrix<f64>] {
        &self.a
    }

    pub fn b_all(&self) -> &[DMatrix<f64>] {
        &self.b
    }
}

/// Common weights `Q` (n x n, PSD) and `R` (d x d, PD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCost", into = "RawCost")]
pub struct CostSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawCost {
    #[serde(rename = "Q", with = "serde_matrix")]
    q: DMatrix<f64>,
    #[serde(rename = "R", with = "serde_matrix")]
    r: DMatrix<f64>,
}

impl TryFrom<RawCost> for CostSpec {
    type Error = ModelError;
    fn try_from(raw: RawCost) -> Result<Self, ModelError> {
        CostSpec::new(raw.q, raw.r)
    }
}

impl From<CostSpec> for RawCost {
    fn from(c: CostSpec) -> Self {
        RawCost { q: c.q, r: c.r }
    }
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, ModelError> {
        for (what, m) in [("Q", &q), ("R", &r)] {
            if !m.is_square() {
                return Err(ModelError::DimensionMismatch {
                    what: what.into(),
                    expected: "square".into(),
                    got: dims(m),
                });
            }
            if !linalg::all_finite(m) {
                return Err(ModelError::NonFinite(what.into()));
            }
            let asym = linalg::asymmetry(m);
            if asym > SYMMETRY_TOL {
                return Err(ModelError::NotSymmetric { what, asymmetry: asym });
            }
        }
        let q_min = linalg::min_sym_eigenvalue(&q);
        if q_min < -SYMMETRY_TOL * (1.0 + q.amax()) {
            return Err(ModelError::QNotPsd(q_min));
        }
        let r_min = linalg::min_sym_eigenvalue(&r);
        if r_min.is_nan() || r_min <= 0.0 {
            return Err(ModelError::RNotPd(r_min));
        }
        let r_inv = linalg::symmetrize(&r.clone().try_inverse().ok_or(ModelError::RNotPd(r_min))?);
        Ok(Self { q, r, r_inv })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn q_positive_definite(&self) -> bool {
        linalg::min_sym_eigenvalue(&self.q) > 0.0
    }

    pub fn check_dims(&self, modes: &ModeSet) -> Result<(), ModelError> {
        if self.q.nrows() != modes.n() {
            return Err(ModelError::DimensionMismatch {
                what: "Q".into(),
                expected: format!("{0}x{0}", modes.n()),
                got: dims(&self.q),
            });
        }
        if self.r.nrows() != modes.d() {
            return Err(ModelError::DimensionMismatch {
                what: "R".into(),
                expected: format!("{0}x{0}", modes.d()),
                got: dims(&self.r),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_dimension_errors_name_the_matrix() {
        let a = vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)];
        let b = vec![DMatrix::zeros(2, 1), DMatrix::zeros(3, 1)];
        match ModeSet::new(a, b).unwrap_err() {
            ModelError::DimensionMismatch { what, .. } => assert_eq!(what, "modes[1].B"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn cost_validation() {
        let q = DMatrix::identity(2, 2);
        assert!(CostSpec::new(q.clone(), DMatrix::from_element(1, 1, 2.0)).is_ok());
        assert!(matches!(
            CostSpec::new(q.clone(), DMatrix::from_element(1, 1, 0.0)),
            Err(ModelError::RNotPd(_))
        ));
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            CostSpec::new(skew, DMatrix::identity(1, 1)),
            Err(ModelError::NotSymmetric { what: "Q", .. })
        ));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            CostSpec::new(indefinite, DMatrix::identity(1, 1)),
            Err(ModelError::QNotPsd(_))
        ));
        let c = CostSpec::new(q, DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_eq!(c.r_inv()[(0, 0)], 0.25);
    }

    #[test]
    fn serde_roundtrip_keeps_validation() {
        let json = r#"{"a":[[[0.0]]],"b":[[[1.0]]]}"#;
        let modes: ModeSet = serde_json::from_str(json).unwrap();
        assert_eq!(
            serde_json::to_string(&modes).unwrap(),
            r#"{"a":[[[0.0]]],"b":[[[1.0]]]}"#
        );
        let bad = r#"{"a":[[[0.0]]],"b":[]}"#;
        assert!(serde_json::from_str::<ModeSet>(bad).is_err());
    }
}
