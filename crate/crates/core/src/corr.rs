//! Spatial correlation models and Hermitian/PSD matrix utilities.
//!
//! The surface follows a sinc-kernel correlation in element index space; the
//! BS array follows a uniform angular-spread line-of-sight average. Both are
//! repaired to the PSD cone after assembly so that downstream Cholesky and
//! square-root factorizations are well defined.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix used throughout the crate.
pub type CMat = DMatrix<Complex64>;
/// Dense complex column vector.
pub type CVec = DVector<Complex64>;

/// Normalized sinc: `sin(pi x) / (pi x)`, 1 at the origin.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Surface element correlation for an `n_h x n_v` grid with element pitches
/// `d_h`/`d_v` [m] at wavelength `lambda_m`. Row-major element indexing with
/// the horizontal index running fastest. Entry `(p, q)` is
/// `sinc(2 d_pq / lambda)` for inter-element distance `d_pq`.
pub fn stars_correlation(n_h: usize, n_v: usize, d_h: f64, d_v: f64, lambda_m: f64) -> CMat {
    let n = n_h * n_v;
    CMat::from_fn(n, n, |p, q| {
        let dh = (p % n_h) as f64 - (q % n_h) as f64;
        let dv = (p / n_h) as f64 - (q / n_h) as f64;
        let d = (dh * d_h).hypot(dv * d_v);
        Complex64::new(sinc(2.0 * d / lambda_m), 0.0)
    })
}

/// BS array correlation: average of rank-one steering outer products over
/// `s_terms` azimuth samples spanning `mean +- spread` degrees, for a uniform
/// line array with `spacing_frac` wavelength pitch. PSD-repaired.
pub fn bs_correlation(
    m: usize,
    spacing_frac: f64,
    spread_deg: f64,
    mean_deg: f64,
    s_terms: usize,
) -> CMat {
    let mut r = CMat::zeros(m, m);
    let weight = 1.0 / s_terms as f64;
    for s in 0..s_terms {
        let frac = if s_terms == 1 {
            0.5
        } else {
            s as f64 / (s_terms - 1) as f64
        };
        let phi_deg = mean_deg - spread_deg + 2.0 * spread_deg * frac;
        let sin_phi = phi_deg.to_radians().sin();
        let steer: Vec<Complex64> = (0..m)
            .map(|p| {
                Complex64::from_polar(
                    1.0,
                    2.0 * std::f64::consts::PI * spacing_frac * p as f64 * sin_phi,
                )
            })
            .collect();
        for p in 0..m {
            for q in 0..m {
                r[(p, q)] += steer[p] * steer[q].conj() * weight;
            }
        }
    }
    psd_repair(&r)
}

/// Projects a nearly-Hermitian matrix onto the PSD cone: hermitize, then
/// clip negative eigenvalues to zero.
pub fn psd_repair(r: &CMat) -> CMat {
    let herm = (r + r.adjoint()).scale(0.5);
    let mut eig = herm.symmetric_eigen();
    for lam in eig.eigenvalues.iter_mut() {
        if *lam < 0.0 {
            *lam = 0.0;
        }
    }
    eig.recompose()
}

/// Hermitian square root of a PSD matrix (eigenvalues clipped at zero first).
pub fn sqrtm_psd(r: &CMat) -> CMat {
    let herm = (r + r.adjoint()).scale(0.5);
    let mut eig = herm.symmetric_eigen();
    for lam in eig.eigenvalues.iter_mut() {
        *lam = lam.max(0.0).sqrt();
    }
    eig.recompose()
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn eigvalsh(r: &CMat) -> Vec<f64> {
    let herm = (r + r.adjoint()).scale(0.5);
    let mut lam: Vec<f64> = herm.symmetric_eigen().eigenvalues.iter().copied().collect();
    lam.sort_by(|a, b| a.total_cmp(b));
    lam
}

/// Elementwise squared magnitudes, `M[p,q] = |R[p,q]|^2`.
pub fn abs2_matrix(r: &CMat) -> DMatrix<f64> {
    DMatrix::from_fn(r.nrows(), r.ncols(), |p, q| r[(p, q)].norm_sqr())
}

/// Cascaded trace factor `tr(R_s Theta R_s Theta^H)` for the diagonal phase
/// matrix built from `theta`. The result must be real; a relative imaginary
/// part above 1e-9 signals inconsistent inputs and is an error.
pub fn trace_factor(r_s: &CMat, theta: &CVec) -> Result<f64> {
    let n = r_s.nrows();
    if r_s.ncols() != n || theta.len() != n {
        return Err(Error::Dimension(format!(
            "trace factor: R_s is {}x{} but theta has {} entries",
            r_s.nrows(),
            r_s.ncols(),
            theta.len()
        )));
    }
    let mut t = Complex64::new(0.0, 0.0);
    for p in 0..n {
        let tp = theta[p].conj();
        for q in 0..n {
            t += r_s[(p, q)] * theta[q] * r_s[(q, p)] * tp;
        }
    }
    if t.im.abs() > 1e-9 * t.re.abs().max(1e-300) {
        return Err(Error::Numerical(format!(
            "cascaded trace factor is not real: {t}"
        )));
    }
    Ok(t.re)
}

/// Uplink cascaded covariance: `delta_gt * delta_ht * tr(R_s Theta_r R_s Theta_r^H) * R_bt`.
pub fn cascaded_ul_cov(
    r_s: &CMat,
    r_bt: &CMat,
    theta_r: &CVec,
    delta_gt: f64,
    delta_ht: f64,
) -> Result<CMat> {
    let tau = trace_factor(r_s, theta_r)?;
    Ok(r_bt.scale(delta_gt * delta_ht * tau))
}

/// Downlink cascaded covariance: `delta_g * delta_h * tr(R_s Theta_w R_s Theta_w^H) * R_b`,
/// where `theta_w` is the serving-side phase vector for the user's region.
pub fn cascaded_dl_cov(
    r_s: &CMat,
    r_b: &CMat,
    theta_w: &CVec,
    delta_g: f64,
    delta_h: f64,
) -> Result<CMat> {
    let tau = trace_factor(r_s, theta_w)?;
    Ok(r_b.scale(delta_g * delta_h * tau))
}
