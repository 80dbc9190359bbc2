//! Closed-form spectral-efficiency engine for a surface-assisted full-duplex
//! two-way massive-MIMO cell, with statistical-CSI beamforming optimization
//! and an independent Monte-Carlo verification path.

pub mod config;
pub mod corr;
pub mod error;
pub mod estim;
pub mod geometry;
pub mod grad;
pub mod io;
pub mod mc;
pub mod model;
pub mod moments;
pub mod optim;
pub mod pbm;
pub mod se;

pub use config::{desk_config, SystemConfig};
pub use corr::{CMat, CVec};
pub use error::{Error, Result};
pub use geometry::Region;
pub use mc::{validate_closed_form, ValidationReport};
pub use model::{Mode, Model};
pub use optim::{optimize_restarts, prog_ram, OptTrace, OptimOptions};
pub use pbm::Pbm;
pub use se::{evaluate, SeReport};
