//! Cell geometry: user placement on both sides of the surface and
//! distance-based large-scale path gains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{GeometryKind, SystemConfig};
use crate::error::{Error, Result};

/// RNG stream id for user placement, disjoint from the Monte-Carlo
/// realization streams (`1..=n`) and the optimizer init streams.
const PLACEMENT_STREAM: u64 = 1 << 33;

/// Radius of the user disk in the circular layout [m].
const DISK_RADIUS_M: f64 = 10.0;

/// Which side of the surface a user occupies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// Same side as the BS; served through the reflected beam.
    Reflect,
    /// Opposite side; served through the transmitted beam.
    Transmit,
}

impl Region {
    /// Short label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Region::Reflect => "r",
            Region::Transmit => "t",
        }
    }
}

/// Placed users: `positions[k]` and `regions[k]` describe user `k`.
/// Reflection-region users come first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeGeometry {
    pub positions: Vec<(f64, f64)>,
    pub regions: Vec<Region>,
}

impl UeGeometry {
    /// Indices of users in the given region.
    pub fn users_in(&self, region: Region) -> Vec<usize> {
        (0..self.regions.len())
            .filter(|&k| self.regions[k] == region)
            .collect()
    }
}

/// Euclidean distance between two points in the horizontal plane.
pub fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Large-scale power gain of a link of length `d_m` through one surface
/// element of edge lengths `d_h`/`d_v`: aperture area times `d^-alpha`.
pub fn path_loss(d_m: f64, alpha: f64, d_h: f64, d_v: f64) -> Result<f64> {
    if d_m.is_nan() || d_m <= 0.0 {
        return Err(Error::Numerical(format!(
            "path loss needs a positive distance, got {d_m}"
        )));
    }
    Ok(d_h * d_v * d_m.powf(-alpha))
}

/// Places `k_r` users on the BS side and `k_t` users on the far side.
///
/// Line layout: each region's users sit on a horizontal segment of length
/// `d0_m` centred on the surface's `x`, offset `d0_m/2` below (reflect) or
/// above (transmit) the surface's `y`; a single user sits at the midpoint,
/// otherwise the users divide the segment evenly. Circular layout: users are
/// drawn uniformly from a disk of radius 10 m around the same two segment
/// centres, deterministically from the configured seed.
pub fn place_users(cfg: &SystemConfig) -> Result<UeGeometry> {
    let half = cfg.d0_m / 2.0;
    let centers = [
        (Region::Reflect, (cfg.stars_x, cfg.stars_y - half)),
        (Region::Transmit, (cfg.stars_x, cfg.stars_y + half)),
    ];
    let counts = [cfg.k_r, cfg.k_t];

    let mut positions = Vec::with_capacity(cfg.k());
    let mut regions = Vec::with_capacity(cfg.k());
    match cfg.geometry {
        GeometryKind::Line => {
            for ((region, (cx, cy)), &count) in centers.iter().zip(&counts) {
                for i in 0..count {
                    let x = if count == 1 {
                        *cx
                    } else {
                        cx - half + cfg.d0_m * i as f64 / (count - 1) as f64
                    };
                    positions.push((x, *cy));
                    regions.push(*region);
                }
            }
        }
        GeometryKind::Circular => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(PLACEMENT_STREAM);
            for ((region, (cx, cy)), &count) in centers.iter().zip(&counts) {
                for _ in 0..count {
                    let r = DISK_RADIUS_M * rng.random::<f64>().sqrt();
                    let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                    positions.push((cx + r * phi.cos(), cy + r * phi.sin()));
                    regions.push(*region);
                }
            }
        }
    }

    // Degenerate placements would produce infinite path gain.
    for &p in &positions {
        if dist(p, (cfg.stars_x, cfg.stars_y)) <= 0.0 {
            return Err(Error::Config(
                "d0_m: a user coincides with the surface".into(),
            ));
        }
    }
    Ok(UeGeometry { positions, regions })
}
