//! System configuration: flat `key = value` files, CLI-style overrides,
//! validation with per-key diagnostics, and unit conversion to linear scale.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a power level in dBm to watts.
pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts a relative level in dB to a linear factor.
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// User placement layout on each side of the surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    /// Users evenly spaced on a horizontal segment per region.
    Line,
    /// Users drawn uniformly from a disk of radius 10 m per region (seeded).
    Circular,
}

impl FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(Self::Line),
            "circular" => Ok(Self::Circular),
            other => Err(Error::Config(format!(
                "geometry: unknown layout '{other}' (expected 'line' or 'circular')"
            ))),
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Line => write!(f, "line"),
            Self::Circular => write!(f, "circular"),
        }
    }
}

/// Complete scalar parameter set for one experiment.
///
/// Powers are stored in dBm and relative levels in dB exactly as configured;
/// accessor methods provide the linear-scale values used by the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// BS transmit antennas.
    pub m_t: usize,
    /// BS receive antennas.
    pub m_r: usize,
    /// Surface elements per row.
    pub n_h: usize,
    /// Surface element rows.
    pub n_v: usize,
    /// Users in the reflection region.
    pub k_r: usize,
    /// Users in the transmission region.
    pub k_t: usize,
    /// Coherence block length in symbols.
    pub tau_c: usize,
    /// Uplink pilot length.
    pub tau_up: usize,
    /// Downlink pilot length.
    pub tau_dp: usize,
    /// BS transmit power [dBm].
    pub p_b_dbm: f64,
    /// Per-user uplink power [dBm].
    pub p_u_dbm: f64,
    /// Pilot power [dBm].
    pub p_train_dbm: f64,
    /// Noise power [dBm].
    pub sigma2_dbm: f64,
    /// Residual loop-interference level relative to noise [dB].
    pub sigma2_l_db: f64,
    /// Inter-user channel gain relative to noise [dB] (same-region pairs).
    pub sigma2_kj_db: f64,
    /// Path-loss exponent.
    pub alpha: f64,
    /// Carrier wavelength [m].
    pub lambda_m: f64,
    /// Surface element edge length as a fraction of the wavelength.
    pub elem_size_frac: f64,
    /// User placement layout.
    pub geometry: GeometryKind,
    /// BS position [m].
    pub bs_x: f64,
    pub bs_y: f64,
    /// Surface position [m].
    pub stars_x: f64,
    pub stars_y: f64,
    /// Separation between the two user segments [m].
    pub d0_m: f64,
    /// Initial optimizer step size.
    pub mu_1: f64,
    /// Relative-improvement stopping threshold.
    pub epsilon: f64,
    /// Hard iteration cap for the optimizer.
    pub max_iter: usize,
    /// Window length for the stagnation test.
    pub stall_window: usize,
    /// Master RNG seed (placement, initial points, Monte-Carlo streams).
    pub seed: u64,
    /// BS antenna spacing in wavelengths.
    pub bs_spacing: f64,
    /// BS angular spread [deg].
    pub bs_spread_deg: f64,
    /// BS mean azimuth [deg].
    pub bs_mean_deg: f64,
    /// Quadrature terms for the BS correlation integral.
    pub bs_terms: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            m_t: 128,
            m_r: 128,
            n_h: 12,
            n_v: 12,
            k_r: 2,
            k_t: 2,
            tau_c: 200,
            tau_up: 4,
            tau_dp: 4,
            p_b_dbm: 30.0,
            p_u_dbm: 15.0,
            p_train_dbm: 15.0,
            sigma2_dbm: -94.0,
            sigma2_l_db: 0.0,
            sigma2_kj_db: 0.0,
            alpha: 2.6,
            lambda_m: 0.1,
            elem_size_frac: 0.25,
            geometry: GeometryKind::Line,
            bs_x: 0.0,
            bs_y: 0.0,
            stars_x: 50.0,
            stars_y: 10.0,
            d0_m: 20.0,
            mu_1: 500.0,
            epsilon: 1e-5,
            max_iter: 500,
            stall_window: 100,
            seed: 1,
            bs_spacing: 0.5,
            bs_spread_deg: 20.0,
            bs_mean_deg: 0.0,
            bs_terms: 200,
        }
    }
}

/// Desk-scale profile: small enough for interactive runs and the test suite,
/// large enough to show every qualitative effect of the full-size system.
pub fn desk_config() -> SystemConfig {
    SystemConfig {
        m_t: 32,
        m_r: 32,
        n_h: 6,
        n_v: 6,
        ..SystemConfig::default()
    }
}

impl SystemConfig {
    /// Total number of users.
    pub fn k(&self) -> usize {
        self.k_r + self.k_t
    }

    /// Total number of surface elements.
    pub fn n(&self) -> usize {
        self.n_h * self.n_v
    }

    /// BS transmit power [W].
    pub fn p_b(&self) -> f64 {
        dbm_to_w(self.p_b_dbm)
    }

    /// Per-user uplink power [W].
    pub fn p_u(&self) -> f64 {
        dbm_to_w(self.p_u_dbm)
    }

    /// Pilot power [W].
    pub fn p_train(&self) -> f64 {
        dbm_to_w(self.p_train_dbm)
    }

    /// Noise power [W].
    pub fn sigma2(&self) -> f64 {
        dbm_to_w(self.sigma2_dbm)
    }

    /// Loop-interference gain [linear], relative level applied to the noise floor.
    pub fn sigma2_l(&self) -> f64 {
        db_to_lin(self.sigma2_l_db) * self.sigma2()
    }

    /// Inter-user channel gain [linear], relative level applied to the noise floor.
    pub fn sigma2_kj(&self) -> f64 {
        db_to_lin(self.sigma2_kj_db) * self.sigma2()
    }

    /// Payload fraction of the coherence block.
    pub fn zeta(&self) -> f64 {
        (self.tau_c - self.tau_up - self.tau_dp) as f64 / self.tau_c as f64
    }

    /// Surface element edge length [m].
    pub fn elem_size(&self) -> f64 {
        self.elem_size_frac * self.lambda_m
    }

    /// Loads a configuration from a flat `key = value` file.
    ///
    /// Unset keys keep their defaults. `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Parses `key = value` text on top of the defaults and validates.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                ))
            })?;
            cfg.apply_set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` override. Used by both the file parser and the
    /// command line. Does not re-validate; call [`SystemConfig::validate`]
    /// after the last override.
    pub fn apply_set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("{key}: non-numeric or malformed value '{value}'"))
            })
        }
        match key {
            "m_t" => self.m_t = num(key, value)?,
            "m_r" => self.m_r = num(key, value)?,
            "n_h" => self.n_h = num(key, value)?,
            "n_v" => self.n_v = num(key, value)?,
            "k_r" => self.k_r = num(key, value)?,
            "k_t" => self.k_t = num(key, value)?,
            "tau_c" => self.tau_c = num(key, value)?,
            "tau_up" => self.tau_up = num(key, value)?,
            "tau_dp" => self.tau_dp = num(key, value)?,
            "p_b_dbm" => self.p_b_dbm = num(key, value)?,
            "p_u_dbm" => self.p_u_dbm = num(key, value)?,
            "p_train_dbm" => self.p_train_dbm = num(key, value)?,
            "sigma2_dbm" => self.sigma2_dbm = num(key, value)?,
            "sigma2_l_db" => self.sigma2_l_db = num(key, value)?,
            "sigma2_kj_db" => self.sigma2_kj_db = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "lambda_m" => self.lambda_m = num(key, value)?,
            "elem_size_frac" => self.elem_size_frac = num(key, value)?,
            "geometry" => self.geometry = value.parse()?,
            "bs_x" => self.bs_x = num(key, value)?,
            "bs_y" => self.bs_y = num(key, value)?,
            "stars_x" => self.stars_x = num(key, value)?,
            "stars_y" => self.stars_y = num(key, value)?,
            "d0_m" => self.d0_m = num(key, value)?,
            "mu_1" => self.mu_1 = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "stall_window" => self.stall_window = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "bs_spacing" => self.bs_spacing = num(key, value)?,
            "bs_spread_deg" => self.bs_spread_deg = num(key, value)?,
            "bs_mean_deg" => self.bs_mean_deg = num(key, value)?,
            "bs_terms" => self.bs_terms = num(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown key '{other}'")));
            }
        }
        Ok(())
    }

    /// Checks every parameter invariant, reporting the offending key.
    pub fn validate(&self) -> Result<()> {
        fn positive_dim(key: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::Config(format!("{key}: must be at least 1")));
            }
            Ok(())
        }
        positive_dim("m_t", self.m_t)?;
        positive_dim("m_r", self.m_r)?;
        positive_dim("n_h", self.n_h)?;
        positive_dim("n_v", self.n_v)?;
        positive_dim("k_r", self.k_r)?;
        positive_dim("k_t", self.k_t)?;
        positive_dim("tau_c", self.tau_c)?;
        positive_dim("bs_terms", self.bs_terms)?;
        positive_dim("max_iter", self.max_iter)?;
        positive_dim("stall_window", self.stall_window)?;

        if self.tau_up + self.tau_dp >= self.tau_c {
            return Err(Error::Config(format!(
                "tau_c: pilot overhead fills the coherence block (tau_up+tau_dp={} >= tau_c={})",
                self.tau_up + self.tau_dp,
                self.tau_c
            )));
        }
        if self.tau_up < self.k() {
            return Err(Error::Config(format!(
                "tau_up: pilot length below user count ({} < {})",
                self.tau_up,
                self.k()
            )));
        }
        if self.tau_dp < self.k() {
            return Err(Error::Config(format!(
                "tau_dp: pilot length below user count ({} < {})",
                self.tau_dp,
                self.k()
            )));
        }

        fn finite(key: &str, v: f64) -> Result<()> {
            if !v.is_finite() {
                return Err(Error::Config(format!("{key}: must be finite, got {v}")));
            }
            Ok(())
        }
        for (key, v) in [
            ("p_b_dbm", self.p_b_dbm),
            ("p_u_dbm", self.p_u_dbm),
            ("p_train_dbm", self.p_train_dbm),
            ("sigma2_dbm", self.sigma2_dbm),
            ("sigma2_l_db", self.sigma2_l_db),
            ("sigma2_kj_db", self.sigma2_kj_db),
            ("bs_x", self.bs_x),
            ("bs_y", self.bs_y),
            ("stars_x", self.stars_x),
            ("stars_y", self.stars_y),
            ("bs_mean_deg", self.bs_mean_deg),
        ] {
            finite(key, v)?;
        }
        fn strictly_positive(key: &str, v: f64) -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "{key}: must be strictly positive, got {v}"
                )));
            }
            Ok(())
        }
        strictly_positive("alpha", self.alpha)?;
        strictly_positive("lambda_m", self.lambda_m)?;
        strictly_positive("elem_size_frac", self.elem_size_frac)?;
        strictly_positive("d0_m", self.d0_m)?;
        strictly_positive("mu_1", self.mu_1)?;
        strictly_positive("bs_spacing", self.bs_spacing)?;
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "epsilon: must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if !(self.bs_spread_deg.is_finite() && self.bs_spread_deg >= 0.0) {
            return Err(Error::Config(format!(
                "bs_spread_deg: must be finite and non-negative, got {}",
                self.bs_spread_deg
            )));
        }
        let dx = self.stars_x - self.bs_x;
        let dy = self.stars_y - self.bs_y;
        if (dx * dx + dy * dy).sqrt() <= 0.0 {
            return Err(Error::Config(
                "stars_x: surface must not coincide with the BS".into(),
            ));
        }
        Ok(())
    }

    /// All keys with their values rendered as strings, in canonical
    /// (alphabetical) order. The basis for hashing and for `--set` help.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alpha", self.alpha.to_string()),
            ("bs_mean_deg", self.bs_mean_deg.to_string()),
            ("bs_spacing", self.bs_spacing.to_string()),
            ("bs_spread_deg", self.bs_spread_deg.to_string()),
            ("bs_terms", self.bs_terms.to_string()),
            ("bs_x", self.bs_x.to_string()),
            ("bs_y", self.bs_y.to_string()),
            ("d0_m", self.d0_m.to_string()),
            ("elem_size_frac", self.elem_size_frac.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("geometry", self.geometry.to_string()),
            ("k_r", self.k_r.to_string()),
            ("k_t", self.k_t.to_string()),
            ("lambda_m", self.lambda_m.to_string()),
            ("m_r", self.m_r.to_string()),
            ("m_t", self.m_t.to_string()),
            ("max_iter", self.max_iter.to_string()),
            ("mu_1", self.mu_1.to_string()),
            ("n_h", self.n_h.to_string()),
            ("n_v", self.n_v.to_string()),
            ("p_b_dbm", self.p_b_dbm.to_string()),
            ("p_train_dbm", self.p_train_dbm.to_string()),
            ("p_u_dbm", self.p_u_dbm.to_string()),
            ("seed", self.seed.to_string()),
            ("sigma2_dbm", self.sigma2_dbm.to_string()),
            ("sigma2_kj_db", self.sigma2_kj_db.to_string()),
            ("sigma2_l_db", self.sigma2_l_db.to_string()),
            ("stall_window", self.stall_window.to_string()),
            ("stars_x", self.stars_x.to_string()),
            ("stars_y", self.stars_y.to_string()),
            ("tau_c", self.tau_c.to_string()),
            ("tau_dp", self.tau_dp.to_string()),
            ("tau_up", self.tau_up.to_string()),
        ]
    }

    /// Canonical textual form: one `key=value` line per parameter, sorted.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// 64-bit FNV-1a hash of the canonical form; identifies a configuration
    /// in report rows.
    pub fn hash64(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        for byte in self.canonical().bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(PRIME);
        }
        h
    }

    /// Configuration hash as fixed-width hex, for report columns.
    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_w(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_w(0.0) - 1e-3).abs() < 1e-18);
        assert!((dbm_to_w(15.0) - 0.031_622_776_601_683_79).abs() < 1e-15);
    }

    #[test]
    fn defaults_validate() {
        let cfg = SystemConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.k(), 4);
        assert_eq!(cfg.n(), 144);
        assert!((cfg.zeta() - 0.96).abs() < 1e-15);
        assert!((cfg.elem_size() - 0.025).abs() < 1e-15);
    }

    #[test]
    fn parse_with_comments_and_overrides() {
        let text = "\
# experiment scale
m_t = 32   # transmit side
m_r=32
n_h = 6
n_v = 6
geometry = circular
p_b_dbm = 20
";
        let cfg = SystemConfig::parse_str(text).unwrap();
        assert_eq!(cfg.m_t, 32);
        assert_eq!(cfg.n(), 36);
        assert_eq!(cfg.geometry, GeometryKind::Circular);
        assert!((cfg.p_b() - 0.1).abs() < 1e-12);
        // untouched keys keep defaults
        assert_eq!(cfg.tau_c, 200);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = SystemConfig::parse_str("m_tx = 4\n").unwrap_err();
        assert!(err.to_string().contains("m_tx"), "{err}");
    }

    #[test]
    fn bad_value_names_key() {
        let err = SystemConfig::parse_str("alpha = fast\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpha") && msg.contains("fast"), "{msg}");
    }

    #[test]
    fn short_pilot_rejected() {
        let err = SystemConfig::parse_str("tau_up = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("tau_up") && msg.contains("pilot length below user count"),
            "{msg}"
        );
    }

    #[test]
    fn pilot_overhead_must_fit_block() {
        let err = SystemConfig::parse_str("tau_up = 100\ntau_dp = 100\n").unwrap_err();
        assert!(err.to_string().contains("tau_c"), "{err}");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = SystemConfig::default();
        let b = SystemConfig::parse_str("seed = 1\n").unwrap(); // same as default
        assert_eq!(a.hash64(), b.hash64());
        let c = SystemConfig::parse_str("seed = 2\n").unwrap();
        assert_ne!(a.hash64(), c.hash64());
        assert_eq!(a.hash_hex().len(), 16);
    }
}
