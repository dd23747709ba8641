use nalgebra::DMatrix;

use crate::discretization::{DiscreteField, SpaceTimeGrid};
use crate::error::{Error, Result};
use crate::fom::SnapshotMatrix;
use crate::transform::shift_field;

/// From `fraction * T` on, the target travels with `velocity`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kink {
    pub fraction: f64,
    pub velocity: f64,
}

/// Piecewise-constant target velocity. Before the first kink the target moves
/// with the grid velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSpec {
    pub kinks: Vec<Kink>,
    /// Post-kink velocity relative to `v`, kept for the run metadata.
    pub tilt_factor: f64,
}

impl TargetSpec {
    /// Same velocity throughout.
    pub fn uniform() -> Self {
        Self {
            kinks: Vec::new(),
            tilt_factor: 1.0,
        }
    }

    /// Slows to `tilt_factor * v` at `3T/4`.
    pub fn single_tilt(v: f64, tilt_factor: f64) -> Self {
        Self {
            kinks: vec![Kink {
                fraction: 0.75,
                velocity: tilt_factor * v,
            }],
            tilt_factor,
        }
    }

    /// Slows to `tilt_factor * v` at `T/4` and resumes `v` at `3T/4`.
    pub fn double_tilt(v: f64, tilt_factor: f64) -> Self {
        Self {
            kinks: vec![
                Kink {
                    fraction: 0.25,
                    velocity: tilt_factor * v,
                },
                Kink {
                    fraction: 0.75,
                    velocity: v,
                },
            ],
            tilt_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for k in &self.kinks {
            if !(k.fraction > prev && k.fraction < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "kink fractions must be strictly increasing in (0, 1), got {}",
                    k.fraction
                )));
            }
            if !k.velocity.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "kink velocity must be finite, got {}",
                    k.velocity
                )));
            }
            prev = k.fraction;
        }
        Ok(())
    }

    /// Target displacement `zeta_d(t)`, the integral of the target velocity.
    pub fn displacement(&self, t: f64, grid: &SpaceTimeGrid) -> f64 {
        let t_final = grid.t_final();
        let mut zeta = 0.0;
        let mut start = 0.0;
        let mut velocity = grid.v();
        for k in &self.kinks {
            let tk = k.fraction * t_final;
            if t <= tk {
                break;
            }
            zeta += velocity * (tk - start);
            start = tk;
            velocity = k.velocity;
        }
        zeta + velocity * (t - start)
    }
}

/// Column `j` is `y0` shifted by `zeta_d(t_j)`.
pub fn build_target(
    grid: &SpaceTimeGrid,
    y0: &DiscreteField,
    spec: &TargetSpec,
) -> Result<SnapshotMatrix> {
    spec.validate()?;
    let mut q = DMatrix::zeros(grid.n(), grid.n_t());
    for j in 0..grid.n_t() {
        q.set_column(
            j,
            &shift_field(y0, spec.displacement(grid.t(j), grid), grid)?,
        );
    }
    Ok(SnapshotMatrix::from_matrix(q))
}
