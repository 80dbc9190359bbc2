//! Artifact formats: a small binary container for complex matrices,
//! versioned CSV writers, and JSON helpers.
//!
//! Every writer is deterministic — identical inputs produce identical bytes —
//! so artifacts can be diffed across runs. Floats are written in Rust's
//! shortest round-trip form. Wall-clock timings never enter any artifact.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::corr::CMat;
use crate::error::{Error, Result};
use crate::mc::ValidationReport;
use crate::optim::OptTrace;
use crate::se::SeReport;

const CMAT_MAGIC: &[u8; 4] = b"CMAT";

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_string_pretty(value)?;
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes a complex matrix: 16-byte header (magic, rows, cols, reserved,
/// little-endian u32s) followed by row-major little-endian (re, im) f64
/// pairs.
pub fn write_cmat(path: &Path, m: &CMat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CMAT_MAGIC)?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let c = m[(i, j)];
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_cmat`].
pub fn read_cmat(path: &Path) -> Result<CMat> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[0..4] != CMAT_MAGIC {
        return Err(Error::Format(format!(
            "{} is not a complex-matrix container",
            path.display()
        )));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = 16 + rows * cols * 16;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes for {rows}x{cols}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in bytes[16..].chunks_exact(16) {
        let re = f64::from_le_bytes(chunk[0..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(chunk[8..16].try_into().expect("8 bytes"));
        data.push(Complex64::new(re, im));
    }
    Ok(CMat::from_row_slice(rows, cols, &data))
}

fn csv_writer(path: &Path, name: &str, header: &str) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {name} v1")?;
    writeln!(w, "{header}")?;
    Ok(w)
}

/// Ascent history: one row per iteration. Deliberately excludes timing.
pub fn write_trace_csv(path: &Path, trace: &OptTrace) -> Result<()> {
    let mut w = csv_writer(path, "trace", "iteration,objective,step,grad_norm")?;
    for r in &trace.records {
        writeln!(w, "{},{},{},{}", r.iter, r.objective, r.step, r.grad_norm)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per evaluated report: system values first, then per-user SINRs.
pub fn write_se_csv(path: &Path, config_hash: &str, reports: &[SeReport]) -> Result<()> {
    let k = reports.first().map_or(0, |r| r.gamma_u.len());
    let mut header = String::from("mode,config_hash,ul_se,dl_se,sum_se,beta");
    for kk in 0..k {
        header.push_str(&format!(",gamma_ul_{kk}"));
    }
    for kk in 0..k {
        header.push_str(&format!(",gamma_dl_{kk}"));
    }
    let mut w = csv_writer(path, "se_report", &header)?;
    for r in reports {
        write!(
            w,
            "{},{},{},{},{},{}",
            r.mode, config_hash, r.ul_se, r.dl_se, r.sum_se, r.beta
        )?;
        for g in &r.gamma_u {
            write!(w, ",{g}")?;
        }
        for g in &r.gamma_d {
            write!(w, ",{g}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// One gradient component compared against its finite-difference probe.
#[derive(Clone, Debug)]
pub struct GradCheckRow {
    /// Coefficient name, e.g. `r[3]` or `t[17]`.
    pub component: String,
    pub analytic: Complex64,
    pub numeric: Complex64,
    pub rel_err: f64,
}

pub fn write_gradcheck_csv(path: &Path, rows: &[GradCheckRow]) -> Result<()> {
    let mut w = csv_writer(
        path,
        "gradcheck",
        "component,analytic_re,analytic_im,numeric_re,numeric_im,rel_err",
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.component, r.analytic.re, r.analytic.im, r.numeric.re, r.numeric.im, r.rel_err
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One operating point of a parameter sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub variable: String,
    pub value: f64,
    pub mode: String,
    pub ul_se: f64,
    pub dl_se: f64,
    pub sum_se: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path, "sweep", "variable,value,mode,ul_se,dl_se,sum_se")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.variable, r.value, r.mode, r.ul_se, r.dl_se, r.sum_se
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Full closed-form-versus-simulation comparison table.
pub fn write_validation_csv(path: &Path, report: &ValidationReport) -> Result<()> {
    let mut w = csv_writer(
        path,
        "validation",
        "name,user,closed,closed_exact,mc,mc_se,bar,gated,pass",
    )?;
    for r in &report.rows {
        let user = r.user.map_or(String::new(), |u| u.to_string());
        let exact = r.closed_exact.map_or(String::new(), |x| x.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.name, user, r.closed, exact, r.mc, r.mc_se, r.bar, r.gated, r.pass
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use crate::model::{Mode, Model};
    use crate::pbm::Pbm;
    use crate::se;

    fn tmp(name: &str) -> tempfile::TempDir {
        tempfile::Builder::new().prefix(name).tempdir().unwrap()
    }

    #[test]
    fn cmat_round_trip_is_exact() {
        let dir = tmp("cmat");
        let path = dir.path().join("m.cmat");
        let m = CMat::from_fn(3, 5, |i, j| {
            Complex64::new(i as f64 - 1.5, (j as f64).exp())
        });
        write_cmat(&path, &m).unwrap();
        let back = read_cmat(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn cmat_rejects_foreign_and_truncated_files() {
        let dir = tmp("cmatbad");
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"PNG\x00 definitely not a matrix").unwrap();
        assert!(read_cmat(&path).is_err());
        let good = dir.path().join("trunc.cmat");
        write_cmat(&good, &CMat::from_element(4, 4, Complex64::new(1.0, 0.0))).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&good, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_cmat(&good).is_err());
    }

    #[test]
    fn csv_writers_are_deterministic_and_versioned() {
        let m = Model::new(SystemConfig {
            m_t: 8,
            m_r: 8,
            n_h: 4,
            n_v: 2,
            ..SystemConfig::default()
        })
        .unwrap();
        let rep = se::evaluate(&m, &Pbm::balanced(m.n()), Mode::FdStars).unwrap();
        let dir = tmp("csv");
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_se_csv(&a, "deadbeef00000000", std::slice::from_ref(&rep)).unwrap();
        write_se_csv(&b, "deadbeef00000000", &[rep]).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        assert_eq!(bytes_a, std::fs::read(&b).unwrap());
        let text = String::from_utf8(bytes_a).unwrap();
        assert!(text.starts_with("# se_report v1\n"));
        assert!(text.lines().nth(1).unwrap().contains("gamma_dl_3"));
    }

    #[test]
    fn trace_csv_has_no_timing_column() {
        use crate::optim::{self, OptimOptions};
        let m = Model::new(SystemConfig {
            m_t: 8,
            m_r: 8,
            n_h: 4,
            n_v: 2,
            ..SystemConfig::default()
        })
        .unwrap();
        let opts = OptimOptions {
            max_iter: 3,
            ..OptimOptions::from_config(&m.cfg)
        };
        let init = optim::random_init(&m, Mode::FdStars, 1, 0).unwrap();
        let trace = optim::prog_ram(&m, &init, Mode::FdStars, &opts).unwrap();
        let dir = tmp("trace");
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "iteration,objective,step,grad_norm"
        );
        assert_eq!(text.lines().count(), 2 + trace.records.len());
        assert!(!text.contains("wall"));
    }
}
