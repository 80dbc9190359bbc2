//! Assembled system model: placement, correlation matrices, their spectra,
//! large-scale gains and noise scalars — everything the closed-form engine,
//! the gradient engine and the Monte-Carlo engine share.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::config::SystemConfig;
use crate::corr::{abs2_matrix, bs_correlation, eigvalsh, stars_correlation, CMat, CVec};
use crate::error::{Error, Result};
use crate::geometry::{dist, path_loss, place_users, Region, UeGeometry};
use crate::pbm::Pbm;

/// Operating mode of the evaluation/optimization engines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    /// Full-duplex operation with an energy-splitting surface.
    FdStars,
    /// Half-duplex baseline: same surface, halved payload, no self/loop terms.
    HdStars,
    /// Full-duplex with two conventional one-sided half-surfaces.
    FdCris,
    /// Full-duplex energy-splitting surface with an unoptimized random
    /// configuration (evaluation-only baseline).
    RandomPbm,
}

impl Mode {
    /// Report label.
    pub fn label(self) -> &'static str {
        match self {
            Mode::FdStars => "FD_STARS",
            Mode::HdStars => "HD_STARS",
            Mode::FdCris => "FD_CRIS",
            Mode::RandomPbm => "RANDOM_PBM",
        }
    }

    /// Whether the half-duplex term set and prelog apply.
    pub fn is_hd(self) -> bool {
        matches!(self, Mode::HdStars)
    }

    /// Whether the surface is split into two one-sided halves.
    pub fn is_cris(self) -> bool {
        matches!(self, Mode::FdCris)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FD_STARS" => Ok(Mode::FdStars),
            "HD_STARS" => Ok(Mode::HdStars),
            "FD_CRIS" => Ok(Mode::FdCris),
            "RANDOM_PBM" => Ok(Mode::RandomPbm),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected FD_STARS, HD_STARS, FD_CRIS or RANDOM_PBM)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Cascaded trace factors of one surface configuration under one mode.
#[derive(Clone, Copy, Debug)]
pub struct Taus {
    /// Uplink factor (always through the reflected beam).
    pub ul: f64,
    /// Downlink factor for reflect-region users.
    pub dl_r: f64,
    /// Downlink factor for transmit-region users.
    pub dl_t: f64,
    /// Self-interference factor (reflected beam back into the BS).
    pub si: f64,
}

impl Taus {
    pub fn dl(&self, region: Region) -> f64 {
        match region {
            Region::Reflect => self.dl_r,
            Region::Transmit => self.dl_t,
        }
    }
}

/// Surface response vectors `diag(M_s theta)` plus the trace factors; the
/// gradient engine consumes both.
#[derive(Clone, Debug)]
pub struct SurfaceResponse {
    /// `M_s theta_r` (half-grid `M_s` block in the split-surface mode).
    pub a_r: CVec,
    /// `M_s theta_t` (other half-grid block in the split-surface mode).
    pub a_t: CVec,
    pub taus: Taus,
}

/// Multiplies a real matrix by a complex vector.
pub(crate) fn real_mat_cvec(m: &DMatrix<f64>, v: &CVec) -> CVec {
    let (rows, cols) = m.shape();
    CVec::from_fn(rows, |i, _| {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..cols {
            acc += v[j] * m[(i, j)];
        }
        acc
    })
}

/// Quadratic form `Re(theta^H a)` given `a = M theta`.
fn quad(theta: &CVec, a: &CVec) -> f64 {
    theta.dotc(a).re
}

/// Precomputed model state for one configuration.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: SystemConfig,
    pub geom: UeGeometry,
    /// Surface element correlation (sinc kernel, real symmetric).
    pub r_s: CMat,
    /// BS transmit-array correlation (`m_t x m_t`).
    pub r_b: CMat,
    /// BS receive-array correlation (`m_r x m_r`).
    pub r_bt: CMat,
    /// Eigenvalues of `r_b`, ascending.
    pub lam_b: Vec<f64>,
    /// Eigenvalues of `r_bt`, ascending.
    pub lam_bt: Vec<f64>,
    /// Elementwise `|R_s|^2`; the cascaded trace factor kernel.
    pub ms: DMatrix<f64>,
    /// `ms` restricted to the first-half / second-half element blocks, used
    /// by the split-surface baseline. `None` when the element count is odd.
    pub ms_halves: Option<(DMatrix<f64>, DMatrix<f64>)>,
    /// BS->surface and surface->BS link gains.
    pub delta_g: f64,
    pub delta_gt: f64,
    /// Surface->user and user->surface link gains.
    pub delta_h: Vec<f64>,
    pub delta_ht: Vec<f64>,
    /// Per-user uplink powers [W].
    pub p_u: Vec<f64>,
    /// Effective estimation-noise levels for the two pilot phases.
    pub rho_u: f64,
    pub rho_d: f64,
    /// Direct inter-user channel gains (same-region pairs, incl. diagonal).
    pub sig_kj: DMatrix<f64>,
}

impl Model {
    pub fn new(cfg: SystemConfig) -> Result<Self> {
        cfg.validate()?;
        let geom = place_users(&cfg)?;
        let elem = cfg.elem_size();
        let st = (cfg.stars_x, cfg.stars_y);
        let d_bs = dist((cfg.bs_x, cfg.bs_y), st);
        let delta_g = path_loss(d_bs, cfg.alpha, elem, elem)?;
        let delta_gt = delta_g;
        let mut delta_h = Vec::with_capacity(cfg.k());
        for &p in &geom.positions {
            delta_h.push(path_loss(dist(st, p), cfg.alpha, elem, elem)?);
        }
        let delta_ht = delta_h.clone();

        let r_s = stars_correlation(cfg.n_h, cfg.n_v, elem, elem, cfg.lambda_m);
        let r_b = bs_correlation(
            cfg.m_t,
            cfg.bs_spacing,
            cfg.bs_spread_deg,
            cfg.bs_mean_deg,
            cfg.bs_terms,
        );
        let r_bt = if cfg.m_r == cfg.m_t {
            r_b.clone()
        } else {
            bs_correlation(
                cfg.m_r,
                cfg.bs_spacing,
                cfg.bs_spread_deg,
                cfg.bs_mean_deg,
                cfg.bs_terms,
            )
        };
        let lam_b = eigvalsh(&r_b);
        let lam_bt = eigvalsh(&r_bt);
        let ms = abs2_matrix(&r_s);
        let n = cfg.n();
        let ms_halves = if n.is_multiple_of(2) {
            let h = n / 2;
            Some((
                ms.view((0, 0), (h, h)).into_owned(),
                ms.view((h, h), (h, h)).into_owned(),
            ))
        } else {
            None
        };

        let k = cfg.k();
        let sig_same = cfg.sigma2_kj();
        let sig_kj = DMatrix::from_fn(k, k, |a, b| {
            if geom.regions[a] == geom.regions[b] {
                sig_same
            } else {
                0.0
            }
        });

        Ok(Self {
            rho_u: cfg.sigma2() / (cfg.tau_up as f64 * cfg.p_train()),
            rho_d: cfg.sigma2() / (cfg.tau_dp as f64 * cfg.p_train()),
            p_u: vec![cfg.p_u(); k],
            delta_g,
            delta_gt,
            delta_h,
            delta_ht,
            r_s,
            r_b,
            r_bt,
            lam_b,
            lam_bt,
            ms,
            ms_halves,
            sig_kj,
            geom,
            cfg,
        })
    }

    pub fn k(&self) -> usize {
        self.cfg.k()
    }

    pub fn n(&self) -> usize {
        self.cfg.n()
    }

    pub fn region_of(&self, user: usize) -> Region {
        self.geom.regions[user]
    }

    /// Users in a region, in index order.
    pub fn users_in(&self, region: Region) -> Vec<usize> {
        self.geom.users_in(region)
    }

    /// Expected PBM vector length for a mode.
    pub fn pbm_len(&self, mode: Mode) -> Result<usize> {
        if mode.is_cris() {
            if !self.n().is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "FD_CRIS needs an even element count, got n={}",
                    self.n()
                )));
            }
            Ok(self.n() / 2)
        } else {
            Ok(self.n())
        }
    }

    /// Validates PBM dimensions against the mode.
    pub fn check_pbm(&self, pbm: &Pbm, mode: Mode) -> Result<()> {
        let want = self.pbm_len(mode)?;
        if pbm.theta_r.len() != want || pbm.theta_t.len() != want {
            return Err(Error::Dimension(format!(
                "PBM has {}/{} entries; mode {} over {} elements needs {want}",
                pbm.theta_r.len(),
                pbm.theta_t.len(),
                mode.label(),
                self.n()
            )));
        }
        Ok(())
    }

    /// Computes the surface response vectors and trace factors for a mode.
    pub fn surface_response(&self, pbm: &Pbm, mode: Mode) -> Result<SurfaceResponse> {
        self.check_pbm(pbm, mode)?;
        if mode.is_cris() {
            let (ms_a, ms_b) = self
                .ms_halves
                .as_ref()
                .expect("check_pbm guarantees an even element count");
            let a_r = real_mat_cvec(ms_a, &pbm.theta_r);
            let a_t = real_mat_cvec(ms_b, &pbm.theta_t);
            let tau_r = quad(&pbm.theta_r, &a_r);
            let tau_t = quad(&pbm.theta_t, &a_t);
            Ok(SurfaceResponse {
                a_r,
                a_t,
                taus: Taus {
                    ul: tau_r,
                    dl_r: tau_r,
                    dl_t: tau_t,
                    si: tau_r,
                },
            })
        } else {
            let a_r = real_mat_cvec(&self.ms, &pbm.theta_r);
            let a_t = real_mat_cvec(&self.ms, &pbm.theta_t);
            let tau_r = quad(&pbm.theta_r, &a_r);
            let tau_t = quad(&pbm.theta_t, &a_t);
            Ok(SurfaceResponse {
                a_r,
                a_t,
                taus: Taus {
                    ul: tau_r,
                    dl_r: tau_r,
                    dl_t: tau_t,
                    si: tau_r,
                },
            })
        }
    }

    /// Whether users `a` and `b` share a co-channel path through the surface.
    /// Always true for the full surface; same-region only for split halves.
    pub fn cochan_coupled(&self, mode: Mode, a: usize, b: usize) -> bool {
        if mode.is_cris() {
            self.region_of(a) == self.region_of(b)
        } else {
            true
        }
    }

    /// Full cascaded uplink covariance of user `k` (receive-array side).
    pub fn cascaded_ul_cov(&self, pbm: &Pbm, mode: Mode, user: usize) -> Result<CMat> {
        let resp = self.surface_response(pbm, mode)?;
        Ok(self
            .r_bt
            .scale(self.delta_gt * self.delta_ht[user] * resp.taus.ul))
    }

    /// Full cascaded downlink covariance of user `k` (transmit-array side).
    pub fn cascaded_dl_cov(&self, pbm: &Pbm, mode: Mode, user: usize) -> Result<CMat> {
        let resp = self.surface_response(pbm, mode)?;
        let tau = resp.taus.dl(self.region_of(user));
        Ok(self.r_b.scale(self.delta_g * self.delta_h[user] * tau))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::trace_factor;

    fn tiny_cfg() -> SystemConfig {
        SystemConfig {
            m_t: 8,
            m_r: 8,
            n_h: 4,
            n_v: 2,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn model_assembles_reference_scalars() {
        let m = Model::new(tiny_cfg()).unwrap();
        assert!((m.delta_g - 2.272_033_157_021_88e-8).abs() / m.delta_g < 1e-12);
        for dh in &m.delta_h {
            assert!((dh - 6.375_893_041_776e-7).abs() / dh < 1e-12);
        }
        assert!((m.rho_u - 3.147_313_529_485_415e-12).abs() / m.rho_u < 1e-12);
        assert_eq!(m.lam_b.len(), 8);
        assert!(
            m.lam_b.windows(2).all(|w| w[0] <= w[1]),
            "eigenvalues sorted"
        );
        let tr: f64 = m.lam_b.iter().sum();
        assert!((tr - 8.0).abs() < 1e-9, "unit-diagonal trace, got {tr}");
    }

    #[test]
    fn sig_kj_couples_same_region_only() {
        let m = Model::new(tiny_cfg()).unwrap();
        let s = m.cfg.sigma2_kj();
        for a in 0..4 {
            for b in 0..4 {
                let want = if m.region_of(a) == m.region_of(b) {
                    s
                } else {
                    0.0
                };
                assert_eq!(m.sig_kj[(a, b)], want);
            }
        }
    }

    #[test]
    fn surface_response_matches_trace_factor() {
        let m = Model::new(tiny_cfg()).unwrap();
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pbm = Pbm::random_es(m.n(), &mut rng);
        let resp = m.surface_response(&pbm, Mode::FdStars).unwrap();
        let tau_r = trace_factor(&m.r_s, &pbm.theta_r).unwrap();
        let tau_t = trace_factor(&m.r_s, &pbm.theta_t).unwrap();
        assert!((resp.taus.ul - tau_r).abs() < 1e-12 * tau_r.max(1.0));
        assert!((resp.taus.dl_t - tau_t).abs() < 1e-12 * tau_t.max(1.0));
        assert!((resp.taus.si - resp.taus.ul).abs() == 0.0);
    }

    #[test]
    fn cris_needs_even_element_count() {
        let mut cfg = tiny_cfg();
        cfg.n_h = 3;
        cfg.n_v = 3;
        let m = Model::new(cfg).unwrap();
        let err = m.pbm_len(Mode::FdCris).unwrap_err();
        assert!(err.to_string().contains("even"), "{err}");
        assert_eq!(m.pbm_len(Mode::FdStars).unwrap(), 9);
    }

    #[test]
    fn pbm_dimension_mismatch_is_rejected() {
        let m = Model::new(tiny_cfg()).unwrap();
        let pbm = Pbm::balanced(4); // model needs 8
        assert!(m.check_pbm(&pbm, Mode::FdStars).is_err());
        assert!(m.check_pbm(&pbm, Mode::FdCris).is_ok()); // halves are length 4
    }

    #[test]
    fn mode_labels_round_trip() {
        for mode in [Mode::FdStars, Mode::HdStars, Mode::FdCris, Mode::RandomPbm] {
            let back: Mode = mode.label().parse().unwrap();
            assert_eq!(back, mode);
        }
        assert!("fd".parse::<Mode>().is_err());
    }
}
