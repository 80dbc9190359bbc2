//! Passive beamforming configuration of the surface: per-element reflect and
//! transmit coefficients, feasible-set projections, and the JSON exchange
//! format.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corr::CVec;
use crate::error::{Error, Result};

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Per-element reflect/transmit coefficients. For the energy-splitting
/// surface both vectors span all `N` elements and each element pair obeys
/// `|theta_r|^2 + |theta_t|^2 = 1`; for the split-surface baseline each
/// vector spans its own `N/2`-element half with unit-modulus entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Pbm {
    pub theta_r: CVec,
    pub theta_t: CVec,
}

impl Pbm {
    /// Equal power split with zero phase on every element.
    pub fn balanced(n: usize) -> Self {
        Self {
            theta_r: CVec::from_element(n, Complex64::new(SQRT_HALF, 0.0)),
            theta_t: CVec::from_element(n, Complex64::new(SQRT_HALF, 0.0)),
        }
    }

    /// Random feasible energy-splitting point: amplitudes `(cos psi, sin psi)`
    /// with `psi ~ U[0, pi/2]` and independent uniform phases.
    pub fn random_es<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut theta_r = CVec::zeros(n);
        let mut theta_t = CVec::zeros(n);
        for i in 0..n {
            let psi = rng.random::<f64>() * std::f64::consts::FRAC_PI_2;
            let ph_r = rng.random::<f64>() * std::f64::consts::TAU;
            let ph_t = rng.random::<f64>() * std::f64::consts::TAU;
            theta_r[i] = Complex64::from_polar(psi.cos(), ph_r);
            theta_t[i] = Complex64::from_polar(psi.sin(), ph_t);
        }
        Self { theta_r, theta_t }
    }

    /// Random unit-modulus point on two `n`-element halves.
    pub fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut theta_r = CVec::zeros(n);
        let mut theta_t = CVec::zeros(n);
        for i in 0..n {
            theta_r[i] = Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU);
            theta_t[i] = Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU);
        }
        Self { theta_r, theta_t }
    }

    /// Number of elements each coefficient vector spans.
    pub fn len(&self) -> usize {
        self.theta_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_r.is_empty()
    }

    /// Euclidean projection onto the energy-splitting feasible set: each
    /// element pair is rescaled to unit joint power. A zero pair (no
    /// direction to keep) or a non-finite pair (overflowed ascent step) maps
    /// to the balanced split — the deterministic restart point that lets the
    /// ascent escape the degenerate boundary where one side's amplitudes
    /// have collapsed.
    pub fn projected_es(&self) -> Self {
        let n = self.len();
        let mut out = self.clone();
        for i in 0..n {
            let s = (self.theta_r[i].norm_sqr() + self.theta_t[i].norm_sqr()).sqrt();
            if s.is_finite() && s > 0.0 {
                out.theta_r[i] /= s;
                out.theta_t[i] /= s;
            } else {
                out.theta_r[i] = Complex64::new(SQRT_HALF, 0.0);
                out.theta_t[i] = Complex64::new(SQRT_HALF, 0.0);
            }
        }
        out
    }

    /// Euclidean projection onto the unit-modulus set (split-surface
    /// baseline): each coefficient keeps its phase; a zero or non-finite
    /// entry maps to 1.
    pub fn projected_unit(&self) -> Self {
        fn proj(v: &CVec) -> CVec {
            v.map(|z| {
                let m = z.norm();
                if m.is_finite() && m > 0.0 {
                    z / m
                } else {
                    Complex64::new(1.0, 0.0)
                }
            })
        }
        Self {
            theta_r: proj(&self.theta_r),
            theta_t: proj(&self.theta_t),
        }
    }

    /// Maximum violation of the energy-splitting constraint.
    pub fn es_violation(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.theta_r[i].norm_sqr() + self.theta_t[i].norm_sqr() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Maximum violation of the unit-modulus constraint.
    pub fn unit_violation(&self) -> f64 {
        self.theta_r
            .iter()
            .chain(self.theta_t.iter())
            .map(|z| (z.norm_sqr() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_feasible_es(&self, tol: f64) -> bool {
        self.es_violation() <= tol
    }

    pub fn is_feasible_unit(&self, tol: f64) -> bool {
        self.unit_violation() <= tol
    }

    /// Squared Euclidean distance to another configuration (both vectors).
    pub fn dist_sq(&self, other: &Self) -> f64 {
        let dr = &self.theta_r - &other.theta_r;
        let dt = &self.theta_t - &other.theta_t;
        dr.norm_squared() + dt.norm_squared()
    }

    /// Serializes to the JSON exchange form (`[re, im]` pairs).
    pub fn to_json(&self) -> Result<String> {
        let doc = PbmJson::from(self);
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses the JSON exchange form.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PbmJson = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// JSON exchange form: explicit `[re, im]` pairs, schema-versioned.
#[derive(Serialize, Deserialize)]
struct PbmJson {
    schema: String,
    theta_r: Vec<[f64; 2]>,
    theta_t: Vec<[f64; 2]>,
}

impl From<&Pbm> for PbmJson {
    fn from(p: &Pbm) -> Self {
        let pack = |v: &CVec| v.iter().map(|z| [z.re, z.im]).collect();
        Self {
            schema: "pbm.v1".to_string(),
            theta_r: pack(&p.theta_r),
            theta_t: pack(&p.theta_t),
        }
    }
}

impl TryFrom<PbmJson> for Pbm {
    type Error = Error;

    fn try_from(doc: PbmJson) -> Result<Self> {
        if doc.schema != "pbm.v1" {
            return Err(Error::Format(format!(
                "unsupported PBM schema '{}'",
                doc.schema
            )));
        }
        if doc.theta_r.len() != doc.theta_t.len() {
            return Err(Error::Dimension(format!(
                "PBM vectors differ in length: {} vs {}",
                doc.theta_r.len(),
                doc.theta_t.len()
            )));
        }
        let unpack = |v: Vec<[f64; 2]>| {
            CVec::from_vec(v.into_iter().map(|p| Complex64::new(p[0], p[1])).collect())
        };
        Ok(Pbm {
            theta_r: unpack(doc.theta_r),
            theta_t: unpack(doc.theta_t),
        })
    }
}
