//! Exact second moments of the combiner/precoder inner products.
//!
//! The closed rate expressions drop the hardening residual's cross-segment
//! couplings and treat interfering users' cascades as independent, which
//! biases the variance and interference terms once the shared array-side
//! segment matters. This module evaluates those moments exactly (fourth-order
//! Gaussian factorization over both hops) next to the approximate values the
//! rate engine uses, so simulations can be checked against the former and the
//! bias of the latter quantified.

use crate::corr::{sqrtm_psd, CMat};
use crate::error::Result;
use crate::estim::estimation_stats_for;
use crate::model::{Mode, Model};
use crate::pbm::Pbm;

/// Exact and approximate `E|.|^2` for one interfering user.
#[derive(Clone, Copy, Debug)]
pub struct PairMoment {
    pub other: usize,
    pub exact: f64,
    pub approx: f64,
}

/// Exact and approximate variance of one user's own inner product, plus the
/// pairwise interference moments (unweighted by transmit powers).
#[derive(Clone, Debug)]
pub struct UserMoments {
    pub var_exact: f64,
    pub var_approx: f64,
    pub mui: Vec<PairMoment>,
}

fn rtr(m: &CMat) -> f64 {
    m.trace().re
}

/// `S_s (Theta R_s Theta^H) S_s` — the surface-side factor of the uplink
/// cascade's second moments.
fn surface_factor_ul(model: &Model, s_s: &CMat, theta: &crate::corr::CVec) -> CMat {
    let n = model.n();
    let p0 = CMat::from_fn(n, n, |p, q| theta[p] * model.r_s[(p, q)] * theta[q].conj());
    s_s * p0 * s_s
}

/// `S_s (Theta^H R_s Theta) S_s` — the downlink counterpart (the cascade
/// traverses the surface in the opposite order).
fn surface_factor_dl(model: &Model, s_s: &CMat, theta: &crate::corr::CVec) -> CMat {
    let n = model.n();
    let p0 = CMat::from_fn(n, n, |p, q| theta[p].conj() * model.r_s[(p, q)] * theta[q]);
    s_s * p0 * s_s
}

/// Exact uplink moments for every user under the full-surface full-duplex
/// model: `var(v^H u_k)` and `E|v_k^H u_i|^2` for each interferer, keeping
/// the coupling through the shared surface-to-array segment.
pub fn ul_second_moments(model: &Model, pbm: &Pbm) -> Result<Vec<UserMoments>> {
    model.check_pbm(pbm, Mode::FdStars)?;
    let k = model.k();
    let s_s = sqrtm_psd(&model.r_s);
    let s_bt = sqrtm_psd(&model.r_bt);
    let a = surface_factor_ul(model, &s_s, &pbm.theta_r);
    let tau_r = rtr(&a);
    let tr_a2 = rtr(&(&a * &a));
    let mut out = Vec::with_capacity(k);
    for kk in 0..k {
        let dd = model.delta_gt * model.delta_ht[kk];
        let r_k = model.r_bt.scale(dd * tau_r);
        let est = estimation_stats_for(&r_k, model.rho_u)?;
        let w = &est.r * &est.q;
        let b = &s_bt * &w * &s_bt;
        let (tr_b, tr_b2) = (rtr(&b), rtr(&(&b * &b)));
        let var_exact = dd * dd * (tr_b2 * tr_a2 + tr_b * tr_b * tr_a2 + tr_b2 * tau_r * tau_r)
            + model.rho_u * rtr(&(&w * &w * &r_k));
        let var_approx = rtr(&(&est.psi * &r_k)) - rtr(&(&est.psi * &est.psi));
        let mut mui = Vec::with_capacity(k - 1);
        for ii in 0..k {
            if ii == kk {
                continue;
            }
            let dd_i = model.delta_gt * model.delta_ht[ii];
            let r_i = model.r_bt.scale(dd_i * tau_r);
            let approx = rtr(&(&est.psi * &r_i));
            // the shared array-side segment adds a rank-coupled fourth moment
            let exact = approx + dd * dd_i * tr_b * tr_b * tr_a2;
            mui.push(PairMoment {
                other: ii,
                exact,
                approx,
            });
        }
        out.push(UserMoments {
            var_exact,
            var_approx,
            mui,
        });
    }
    Ok(out)
}

/// Exact downlink moments for every user: `var(u_k f_k)` and
/// `E|u_k f_i|^2`, keeping both the shared-segment coupling and the
/// region-dependent surface factors.
pub fn dl_second_moments(model: &Model, pbm: &Pbm) -> Result<Vec<UserMoments>> {
    model.check_pbm(pbm, Mode::FdStars)?;
    let k = model.k();
    let s_s = sqrtm_psd(&model.r_s);
    let s_b = sqrtm_psd(&model.r_b);
    let a_r = surface_factor_dl(model, &s_s, &pbm.theta_r);
    let a_t = surface_factor_dl(model, &s_s, &pbm.theta_t);
    let a_of = |user: usize| match model.region_of(user) {
        crate::geometry::Region::Reflect => &a_r,
        crate::geometry::Region::Transmit => &a_t,
    };
    let mut out = Vec::with_capacity(k);
    for kk in 0..k {
        let a_k = a_of(kk);
        let (tr_ak, tr_ak2) = (rtr(a_k), rtr(&(a_k * a_k)));
        let dd = model.delta_g * model.delta_h[kk];
        let r_k = model.r_b.scale(dd * tr_ak);
        let est_k = estimation_stats_for(&r_k, model.rho_d)?;
        let w_k = &est_k.r * &est_k.q;
        let b_k = &s_b * &w_k * &s_b;
        let (tr_bk, tr_bk2) = (rtr(&b_k), rtr(&(&b_k * &b_k)));
        let var_exact =
            dd * dd * (tr_bk2 * tr_ak2 + tr_bk * tr_bk * tr_ak2 + tr_bk2 * tr_ak * tr_ak)
                + model.rho_d * rtr(&(&w_k * &w_k * &r_k));
        let var_approx = rtr(&(&est_k.psi * &r_k)) - rtr(&(&est_k.psi * &est_k.psi));
        let mut mui = Vec::with_capacity(k - 1);
        for ii in 0..k {
            if ii == kk {
                continue;
            }
            let a_i = a_of(ii);
            let dd_i = model.delta_g * model.delta_h[ii];
            let r_i = model.r_b.scale(dd_i * rtr(a_i));
            let est_i = estimation_stats_for(&r_i, model.rho_d)?;
            let w_i = &est_i.r * &est_i.q;
            let b_i = &s_b * &w_i * &s_b;
            let approx = rtr(&(&r_k * &est_i.psi));
            let exact = model.delta_h[kk]
                * model.delta_h[ii]
                * model.delta_g
                * model.delta_g
                * (rtr(&b_i) * rtr(&b_i) * rtr(&(a_i * a_k))
                    + rtr(&(&b_i * &b_i)) * rtr(a_i) * tr_ak)
                + model.rho_d * rtr(&(&r_k * &w_i * &w_i));
            mui.push(PairMoment {
                other: ii,
                exact,
                approx,
            });
        }
        out.push(UserMoments {
            var_exact,
            var_approx,
            mui,
        });
    }
    Ok(out)
}
