//! Closed-form sum spectral efficiency under statistical CSI.
//!
//! Every cascaded covariance is a scalar multiple of the BS array
//! correlation, so all traces reduce to sums over the array eigenvalues;
//! evaluation is O(K·M) after the one-off eigendecomposition. The uplink
//! interference carries mixed-channel, self-interference, loop-interference
//! and noise terms; the downlink carries mixed-channel, co-channel and noise
//! terms under a sum-power precoder normalization. The half-duplex baseline
//! halves the payload prelog and drops the self/loop and own-user co-channel
//! terms; the split-surface baseline routes each region through its own
//! unit-modulus half-surface.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estim::mmse_scalars;
use crate::model::{Mode, Model};
use crate::pbm::Pbm;

/// Uplink interference decomposition for one user (absolute powers).
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct UlTerms {
    /// Coherent signal power `p_u tr(Psi)^2`.
    pub s: f64,
    /// Own-channel variance (hardening residual).
    pub var: f64,
    /// Multi-user interference.
    pub mui: f64,
    /// Self-interference through the surface.
    pub si: f64,
    /// Residual loop interference.
    pub li: f64,
    /// Filtered noise.
    pub noise: f64,
}

/// Downlink interference decomposition for one user (precoder-normalized).
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct DlTerms {
    /// Coherent signal factor `tr(Psi)^2`.
    pub s: f64,
    /// Own-channel variance (hardening residual).
    pub var: f64,
    /// Multi-user interference.
    pub mui: f64,
    /// Co-channel user-to-user power (absolute scale).
    pub cochan: f64,
}

/// Full closed-form evaluation of one surface configuration.
#[derive(Clone, Debug, Serialize)]
pub struct SeReport {
    pub mode: Mode,
    /// Per-user uplink signal and interference powers.
    pub s_u: Vec<f64>,
    pub i_u: Vec<f64>,
    /// Per-user downlink signal and interference factors.
    pub s_d: Vec<f64>,
    pub i_d: Vec<f64>,
    pub gamma_u: Vec<f64>,
    pub gamma_d: Vec<f64>,
    pub se_u: Vec<f64>,
    pub se_d: Vec<f64>,
    pub ul_se: f64,
    pub dl_se: f64,
    pub sum_se: f64,
    /// Precoder normalization `K / tr(Psi_sum)`.
    pub beta: f64,
    pub tr_psi_sum: f64,
    pub tr_rb_psi_sum: f64,
    /// Effective prelog (halved for the half-duplex baseline).
    pub zeta_eff: f64,
    pub terms_ul: Vec<UlTerms>,
    pub terms_dl: Vec<DlTerms>,
}

/// Evaluates the closed-form sum SE of `pbm` under `mode`.
pub fn evaluate(model: &Model, pbm: &Pbm, mode: Mode) -> Result<SeReport> {
    let engine = if mode == Mode::RandomPbm {
        Mode::FdStars
    } else {
        mode
    };
    let resp = model.surface_response(pbm, engine)?;
    let cfg = &model.cfg;
    let k = model.k();
    let hd = engine.is_hd();
    let sig2 = cfg.sigma2();
    let p_b = cfg.p_b();
    let p_u = &model.p_u;

    let c_ul: Vec<f64> = (0..k)
        .map(|j| model.delta_gt * model.delta_ht[j] * resp.taus.ul)
        .collect();
    let c_dl: Vec<f64> = (0..k)
        .map(|j| model.delta_g * model.delta_h[j] * resp.taus.dl(model.region_of(j)))
        .collect();

    let psis_ul: Vec<Vec<f64>> = c_ul
        .iter()
        .map(|&c| mmse_scalars(c, &model.lam_bt, model.rho_u).2)
        .collect();
    let psis_dl: Vec<Vec<f64>> = c_dl
        .iter()
        .map(|&c| mmse_scalars(c, &model.lam_b, model.rho_d).2)
        .collect();

    let tr_psi_sum: f64 = psis_dl.iter().map(|p| p.iter().sum::<f64>()).sum();
    let tr_rb_psi_sum: f64 = psis_dl
        .iter()
        .map(|p| {
            p.iter()
                .zip(&model.lam_b)
                .map(|(ps, l)| ps * l)
                .sum::<f64>()
        })
        .sum();
    // Sum-power normalization of the self-interference term; with a fully
    // dark surface nothing is transmitted and the term vanishes.
    let si_norm = if tr_psi_sum > 0.0 {
        p_b / tr_psi_sum
    } else {
        0.0
    };
    let s_tilde: f64 = p_u.iter().zip(&c_ul).map(|(p, c)| p * c).sum();
    let si_fac = if hd {
        0.0
    } else {
        model.delta_g * model.delta_gt * resp.taus.si + cfg.sigma2_l()
    };

    let zeta_eff = cfg.zeta() * if hd { 0.5 } else { 1.0 };
    let mut s_u = vec![0.0; k];
    let mut i_u = vec![0.0; k];
    let mut s_d = vec![0.0; k];
    let mut i_d = vec![0.0; k];
    let mut gamma_u = vec![0.0; k];
    let mut gamma_d = vec![0.0; k];
    let mut se_u = vec![0.0; k];
    let mut se_d = vec![0.0; k];
    let mut terms_ul = Vec::with_capacity(k);
    let mut terms_dl = Vec::with_capacity(k);

    for kk in 0..k {
        // ---- uplink ----
        let ps = &psis_ul[kk];
        let tr_ps: f64 = ps.iter().sum();
        let tr_ps2: f64 = ps.iter().map(|v| v * v).sum();
        let tr_ps_l: f64 = ps.iter().zip(&model.lam_bt).map(|(v, l)| v * l).sum();
        s_u[kk] = p_u[kk] * tr_ps * tr_ps;
        let t_mix = s_tilde * tr_ps_l;
        let t_si = si_norm * tr_ps_l * tr_rb_psi_sum * si_fac;
        let t_sub = p_u[kk] * tr_ps2;
        let t_noise = sig2 * tr_ps;
        i_u[kk] = t_mix + t_si - t_sub + t_noise;

        let si_only = if hd {
            0.0
        } else {
            si_norm * tr_ps_l * tr_rb_psi_sum * (model.delta_g * model.delta_gt * resp.taus.si)
        };
        let li_only = if hd {
            0.0
        } else {
            si_norm * tr_ps_l * tr_rb_psi_sum * cfg.sigma2_l()
        };
        terms_ul.push(UlTerms {
            s: s_u[kk],
            var: p_u[kk] * (c_ul[kk] * tr_ps_l) - t_sub,
            mui: t_mix - p_u[kk] * (c_ul[kk] * tr_ps_l),
            si: si_only,
            li: li_only,
            noise: t_noise,
        });

        // ---- downlink ----
        let pd = &psis_dl[kk];
        let tr_pd: f64 = pd.iter().sum();
        let tr_pd2: f64 = pd.iter().map(|v| v * v).sum();
        let tr_pd_l: f64 = pd.iter().zip(&model.lam_b).map(|(v, l)| v * l).sum();
        s_d[kk] = tr_pd * tr_pd;
        let t_mix_d = c_dl[kk] * tr_rb_psi_sum;
        let mut cochan = 0.0;
        for (j, &puj) in p_u.iter().enumerate() {
            let coupled = model.cochan_coupled(engine, kk, j);
            let mut sig_kj = model.sig_kj[(kk, j)];
            if hd && j == kk {
                sig_kj = 0.0;
            }
            if engine.is_cris() && !coupled {
                sig_kj = 0.0;
            }
            let casc = if coupled {
                model.delta_h[kk] * model.delta_ht[j] * resp.taus.dl(model.region_of(kk))
            } else {
                0.0
            };
            cochan += puj * (sig_kj + casc);
        }
        i_d[kk] = t_mix_d + (tr_psi_sum / p_b) * cochan - tr_pd2 + (sig2 / p_b) * tr_psi_sum;
        terms_dl.push(DlTerms {
            s: s_d[kk],
            var: c_dl[kk] * tr_pd_l - tr_pd2,
            mui: t_mix_d - c_dl[kk] * tr_pd_l,
            cochan,
        });

        for (label, s, i, gamma, se) in [
            ("uplink", s_u[kk], i_u[kk], &mut gamma_u[kk], &mut se_u[kk]),
            (
                "downlink",
                s_d[kk],
                i_d[kk],
                &mut gamma_d[kk],
                &mut se_d[kk],
            ),
        ] {
            if !s.is_finite() || !i.is_finite() {
                return Err(Error::Numerical(format!(
                    "{label} terms for user {kk} are not finite (S={s}, I={i})"
                )));
            }
            if i < 0.0 {
                return Err(Error::Numerical(format!(
                    "{label} interference for user {kk} is negative ({i}); inconsistent statistics"
                )));
            }
            *gamma = if i > 0.0 { s / i } else { 0.0 };
            *se = zeta_eff * (1.0 + *gamma).log2();
        }
    }

    let ul_se: f64 = se_u.iter().sum();
    let dl_se: f64 = se_d.iter().sum();
    Ok(SeReport {
        mode,
        beta: if tr_psi_sum > 0.0 {
            k as f64 / tr_psi_sum
        } else {
            f64::INFINITY
        },
        s_u,
        i_u,
        s_d,
        i_d,
        gamma_u,
        gamma_d,
        se_u,
        se_d,
        ul_se,
        dl_se,
        sum_se: ul_se + dl_se,
        tr_psi_sum,
        tr_rb_psi_sum,
        zeta_eff,
        terms_ul,
        terms_dl,
    })
}
