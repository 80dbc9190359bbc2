//! Analytic gradient of the sum SE with respect to the surface coefficients.
//!
//! Complex gradients follow the conjugate-coordinate convention
//! `g = df/d(conj(theta))`, so for a real objective `f(theta + d) ≈
//! f(theta) + 2 Re(g^H d)` and projected ascent moves along `theta + mu g`.
//! Like the objective, every trace collapses onto the BS eigenbasis; each
//! S/I term's gradient is a real coefficient times the surface response
//! vector `M_s theta` of the corresponding side.

use num_complex::Complex64;

use crate::corr::CVec;
use crate::error::{Error, Result};
use crate::estim::{mfac, mmse_scalars};
use crate::geometry::Region;
use crate::model::{Mode, Model, SurfaceResponse};
use crate::pbm::Pbm;
use crate::se;

/// Per-user scalar coefficients: each gradient is `coef * a_side`.
#[derive(Clone, Copy, Debug, Default)]
struct UserCoefs {
    s_u: f64,
    i_u: f64,
    s_d: f64,
    i_d: f64,
    gamma_u: f64,
    gamma_d: f64,
    /// dS_u / dtau on the reflect side (UL signal never depends on theta_t).
    nu_ul: f64,
    di_u_r: f64,
    di_u_t: f64,
    nu_dl: f64,
    di_d_r: f64,
    di_d_t: f64,
    region: Option<Region>,
}

struct GradParts {
    resp: SurfaceResponse,
    users: Vec<UserCoefs>,
    /// `zeta_eff / ln 2`.
    coef: f64,
    degenerate: bool,
}

fn zeros_like(resp: &SurfaceResponse) -> (CVec, CVec) {
    (CVec::zeros(resp.a_r.len()), CVec::zeros(resp.a_t.len()))
}

fn gradient_parts(model: &Model, pbm: &Pbm, mode: Mode) -> Result<GradParts> {
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

    let mut r_ul = Vec::with_capacity(k);
    let mut q_ul = Vec::with_capacity(k);
    let mut p_ul = Vec::with_capacity(k);
    let mut r_dl = Vec::with_capacity(k);
    let mut q_dl = Vec::with_capacity(k);
    let mut p_dl = Vec::with_capacity(k);
    for j in 0..k {
        let (r, q, ps) = mmse_scalars(c_ul[j], &model.lam_bt, model.rho_u);
        r_ul.push(r);
        q_ul.push(q);
        p_ul.push(ps);
        let (r, q, ps) = mmse_scalars(c_dl[j], &model.lam_b, model.rho_d);
        r_dl.push(r);
        q_dl.push(q);
        p_dl.push(ps);
    }
    let tr_psi_sum: f64 = p_dl.iter().map(|p| p.iter().sum::<f64>()).sum();
    let tr_rb_psi_sum: f64 = p_dl
        .iter()
        .map(|p| {
            p.iter()
                .zip(&model.lam_b)
                .map(|(ps, l)| ps * l)
                .sum::<f64>()
        })
        .sum();
    let coef = cfg.zeta() * if hd { 0.5 } else { 1.0 } / std::f64::consts::LN_2;
    if tr_psi_sum <= 0.0 {
        // Fully dark surface: every term gradient is proportional to a
        // surface response that is itself zero.
        return Ok(GradParts {
            resp,
            users: vec![UserCoefs::default(); k],
            coef,
            degenerate: true,
        });
    }
    let tstar = tr_rb_psi_sum / tr_psi_sum;
    let s_tilde: f64 = p_u.iter().zip(&c_ul).map(|(p, c)| p * c).sum();
    let si_fac = if hd {
        0.0
    } else {
        model.delta_g * model.delta_gt * resp.taus.si + cfg.sigma2_l()
    };
    let varpi = (p_b / tr_psi_sum) * tr_rb_psi_sum * si_fac;
    let sum_pu_dht: f64 = p_u.iter().zip(&model.delta_ht).map(|(p, d)| p * d).sum();

    let users_r = model.users_in(Region::Reflect);
    let users_t = model.users_in(Region::Transmit);
    let mf_ul: Vec<Vec<f64>> = (0..k).map(|j| mfac(&r_ul[j], &q_ul[j])).collect();
    let mf_dl: Vec<Vec<f64>> = (0..k).map(|j| mfac(&r_dl[j], &q_dl[j])).collect();
    let tr_rb_c_dl: Vec<f64> = (0..k)
        .map(|j| model.lam_b.iter().zip(&mf_dl[j]).map(|(l, m)| l * m).sum())
        .collect();

    let mut users = Vec::with_capacity(k);
    for kk in 0..k {
        let mut u = UserCoefs {
            region: Some(model.region_of(kk)),
            ..UserCoefs::default()
        };

        // ---- uplink ----
        let ps = &p_ul[kk];
        let tr_ps: f64 = ps.iter().sum();
        let tr_ps2: f64 = ps.iter().map(|v| v * v).sum();
        let tr_ps_l: f64 = ps.iter().zip(&model.lam_bt).map(|(v, l)| v * l).sum();
        u.s_u = p_u[kk] * tr_ps * tr_ps;
        let t_si = (p_b / tr_psi_sum) * tr_ps_l * tr_rb_psi_sum * si_fac;
        u.i_u = s_tilde * tr_ps_l + t_si - p_u[kk] * tr_ps2 + sig2 * tr_ps;
        if u.i_u < 0.0 {
            return Err(Error::Numerical(format!(
                "uplink interference for user {kk} is negative ({}); inconsistent statistics",
                u.i_u
            )));
        }
        if u.i_u > 0.0 {
            u.gamma_u = u.s_u / u.i_u;
            let tr_rb_c: f64 = model
                .lam_bt
                .iter()
                .zip(&mf_ul[kk])
                .map(|(l, m)| l * m)
                .sum();
            u.nu_ul = 2.0 * model.delta_gt * model.delta_ht[kk] * p_u[kk] * tr_ps * tr_rb_c;
            let sum_l2_mf: f64 = model
                .lam_bt
                .iter()
                .zip(&mf_ul[kk])
                .map(|(l, m)| l * l * m)
                .sum();
            let tr_b1 = s_tilde * sum_l2_mf;
            let tr_b2 = varpi * sum_l2_mf;
            let tr_b3: f64 = 2.0
                * p_u[kk]
                * model
                    .lam_bt
                    .iter()
                    .zip(ps)
                    .zip(&mf_ul[kk])
                    .map(|((l, v), m)| l * v * m)
                    .sum::<f64>();
            let tr_c = sig2 * tr_rb_c;
            let xi_k = (p_b / tr_psi_sum) * tr_ps_l * si_fac;
            let chi_ul = if hd {
                0.0
            } else {
                (p_b * model.delta_g * model.delta_gt / tr_psi_sum) * tr_ps_l * tr_rb_psi_sum
            };
            let co_sum = |set: &[usize]| -> f64 {
                set.iter()
                    .map(|&i| {
                        model.delta_h[i]
                            * xi_k
                            * model
                                .lam_b
                                .iter()
                                .zip(&mf_dl[i])
                                .map(|(l, m)| l * (l - tstar) * m)
                                .sum::<f64>()
                    })
                    .sum()
            };
            u.di_u_r = model.delta_gt * model.delta_ht[kk] * (tr_b1 + tr_b2 - tr_b3 + tr_c)
                + model.delta_gt * sum_pu_dht * tr_ps_l
                + model.delta_g * co_sum(&users_r)
                + chi_ul;
            u.di_u_t = model.delta_g * co_sum(&users_t);
        }

        // ---- downlink ----
        let pd = &p_dl[kk];
        let tr_pd: f64 = pd.iter().sum();
        let tr_pd2: f64 = pd.iter().map(|v| v * v).sum();
        u.s_d = tr_pd * tr_pd;
        let mut cochan = 0.0;
        let mut sum_pu_dht_co = 0.0;
        for (j, &puj) in p_u.iter().enumerate() {
            let mut sig_kj = model.sig_kj[(kk, j)];
            if hd && j == kk {
                sig_kj = 0.0;
            }
            if model.cochan_coupled(engine, kk, j) {
                cochan += puj
                    * (sig_kj
                        + model.delta_h[kk]
                            * model.delta_ht[j]
                            * resp.taus.dl(model.region_of(kk)));
                sum_pu_dht_co += puj * model.delta_ht[j];
            } else if !engine.is_cris() {
                cochan += puj * sig_kj;
            }
        }
        u.i_d = c_dl[kk] * tr_rb_psi_sum + (tr_psi_sum / p_b) * cochan - tr_pd2
            + (sig2 / p_b) * tr_psi_sum;
        if u.i_d < 0.0 {
            return Err(Error::Numerical(format!(
                "downlink interference for user {kk} is negative ({}); inconsistent statistics",
                u.i_d
            )));
        }
        if u.i_d > 0.0 {
            u.gamma_d = u.s_d / u.i_d;
            u.nu_dl = 2.0 * model.delta_g * model.delta_h[kk] * tr_pd * tr_rb_c_dl[kk];
            let chi1 = cochan / p_b + sig2 / p_b;
            let chi2 = (model.delta_h[kk] / p_b) * tr_psi_sum * sum_pu_dht_co;
            let tr_b_dl: f64 = 2.0
                * model
                    .lam_b
                    .iter()
                    .zip(pd)
                    .zip(&mf_dl[kk])
                    .map(|((l, v), m)| l * v * m)
                    .sum::<f64>();
            let own = model.delta_g * model.delta_h[kk] * (tr_rb_psi_sum - tr_b_dl) + chi2;
            let dl_sum = |set: &[usize]| -> f64 {
                set.iter()
                    .map(|&i| {
                        model.delta_h[i]
                            * (c_dl[kk]
                                * model
                                    .lam_b
                                    .iter()
                                    .zip(&mf_dl[i])
                                    .map(|(l, m)| l * l * m)
                                    .sum::<f64>()
                                + chi1 * tr_rb_c_dl[i])
                    })
                    .sum()
            };
            let s_r = model.delta_g * dl_sum(&users_r);
            let s_t = model.delta_g * dl_sum(&users_t);
            match model.region_of(kk) {
                Region::Reflect => {
                    u.di_d_r = own + s_r;
                    u.di_d_t = s_t;
                }
                Region::Transmit => {
                    u.di_d_r = s_r;
                    u.di_d_t = own + s_t;
                }
            }
        }
        users.push(u);
    }

    Ok(GradParts {
        resp,
        users,
        coef,
        degenerate: false,
    })
}

/// Gradient of the sum SE objective, `(g_r, g_t)` in conjugate coordinates.
/// In the split-surface mode the two vectors live on the two half grids.
pub fn objective_gradient(model: &Model, pbm: &Pbm, mode: Mode) -> Result<(CVec, CVec)> {
    let parts = gradient_parts(model, pbm, mode)?;
    let (mut g_r, mut g_t) = zeros_like(&parts.resp);
    if parts.degenerate {
        return Ok((g_r, g_t));
    }
    for u in &parts.users {
        if u.i_u > 0.0 {
            let w_u = parts.coef / ((1.0 + u.gamma_u) * u.i_u * u.i_u);
            let coef_r = w_u * (u.i_u * u.nu_ul - u.s_u * u.di_u_r);
            let coef_t = w_u * (0.0 - u.s_u * u.di_u_t);
            g_r.axpy(
                Complex64::new(coef_r, 0.0),
                &parts.resp.a_r,
                Complex64::new(1.0, 0.0),
            );
            g_t.axpy(
                Complex64::new(coef_t, 0.0),
                &parts.resp.a_t,
                Complex64::new(1.0, 0.0),
            );
        }
        if u.i_d > 0.0 {
            let w_d = parts.coef / ((1.0 + u.gamma_d) * u.i_d * u.i_d);
            let (ds_d_r, ds_d_t) = match u.region {
                Some(Region::Reflect) => (u.nu_dl, 0.0),
                Some(Region::Transmit) => (0.0, u.nu_dl),
                None => (0.0, 0.0),
            };
            let coef_r = w_d * (u.i_d * ds_d_r - u.s_d * u.di_d_r);
            let coef_t = w_d * (u.i_d * ds_d_t - u.s_d * u.di_d_t);
            g_r.axpy(
                Complex64::new(coef_r, 0.0),
                &parts.resp.a_r,
                Complex64::new(1.0, 0.0),
            );
            g_t.axpy(
                Complex64::new(coef_t, 0.0),
                &parts.resp.a_t,
                Complex64::new(1.0, 0.0),
            );
        }
    }
    Ok((g_r, g_t))
}

/// Gradients of one user's four S/I terms, each as a `(reflect, transmit)`
/// vector pair in conjugate coordinates.
#[derive(Clone, Debug)]
pub struct TermGradients {
    pub s_ul: (CVec, CVec),
    pub i_ul: (CVec, CVec),
    pub s_dl: (CVec, CVec),
    pub i_dl: (CVec, CVec),
}

/// Per-term gradients for `user`. Summing these through the SINR quotient
/// rule reproduces [`objective_gradient`] exactly (see the branch-consistency
/// test); terms with no dependence on a side return an exactly-zero vector.
pub fn term_gradients(model: &Model, pbm: &Pbm, mode: Mode, user: usize) -> Result<TermGradients> {
    if user >= model.k() {
        return Err(Error::Dimension(format!(
            "user index {user} out of range for K={}",
            model.k()
        )));
    }
    let parts = gradient_parts(model, pbm, mode)?;
    let u = &parts.users[user];
    let scaled = |coef: f64, v: &CVec| -> CVec {
        if coef == 0.0 {
            CVec::zeros(v.len())
        } else {
            v.map(|z| z * coef)
        }
    };
    let a_r = &parts.resp.a_r;
    let a_t = &parts.resp.a_t;
    let (ds_d_r, ds_d_t) = match u.region {
        Some(Region::Reflect) => (u.nu_dl, 0.0),
        Some(Region::Transmit) => (0.0, u.nu_dl),
        None => (0.0, 0.0),
    };
    Ok(TermGradients {
        s_ul: (scaled(u.nu_ul, a_r), CVec::zeros(a_t.len())),
        i_ul: (scaled(u.di_u_r, a_r), scaled(u.di_u_t, a_t)),
        s_dl: (scaled(ds_d_r, a_r), scaled(ds_d_t, a_t)),
        i_dl: (scaled(u.di_d_r, a_r), scaled(u.di_d_t, a_t)),
    })
}

/// Central-difference gradient oracle: perturbs every real and imaginary
/// coordinate by `step` and maps the two real slopes back into the
/// conjugate-coordinate convention, `g = (df/dx + i df/dy) / 2`.
pub fn fd_gradient(model: &Model, pbm: &Pbm, mode: Mode, step: f64) -> Result<(CVec, CVec)> {
    let f = |p: &Pbm| -> Result<f64> { Ok(se::evaluate(model, p, mode)?.sum_se) };
    let mut g_r = CVec::zeros(pbm.theta_r.len());
    let mut g_t = CVec::zeros(pbm.theta_t.len());
    for side in 0..2 {
        let len = if side == 0 {
            pbm.theta_r.len()
        } else {
            pbm.theta_t.len()
        };
        for n in 0..len {
            let mut slopes = [0.0; 2];
            for (axis, slope) in slopes.iter_mut().enumerate() {
                let delta = if axis == 0 {
                    Complex64::new(step, 0.0)
                } else {
                    Complex64::new(0.0, step)
                };
                let mut plus = pbm.clone();
                let mut minus = pbm.clone();
                if side == 0 {
                    plus.theta_r[n] += delta;
                    minus.theta_r[n] -= delta;
                } else {
                    plus.theta_t[n] += delta;
                    minus.theta_t[n] -= delta;
                }
                *slope = (f(&plus)? - f(&minus)?) / (2.0 * step);
            }
            let g = Complex64::new(slopes[0], slopes[1]) * 0.5;
            if side == 0 {
                g_r[n] = g;
            } else {
                g_t[n] = g;
            }
        }
    }
    Ok((g_r, g_t))
}
