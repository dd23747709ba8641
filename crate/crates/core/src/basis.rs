//! POD bases from weighted snapshot SVDs and mode-count selection.

use nalgebra::{DMatrix, DVector};

use crate::control::ControlShapes;
use crate::discretization::{DiscreteField, SpaceTimeGrid};
use crate::error::{check_len, Error, Result};
use crate::fom::SnapshotMatrix;
use crate::transform::ShiftPath;

/// Relative singular-value floor below which directions count as numerically absent.
pub const RANK_THRESHOLD: f64 = 1e-12;

/// Whether modes describe the data directly or after transformation into the
/// co-moving frame along a shift path.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisFrame {
    Stationary,
    Shifted(ShiftPath),
}

/// `H`-orthonormal modes stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeBasis {
    modes: DMatrix<f64>,
    frame: BasisFrame,
    rank_deficient: bool,
}

impl ModeBasis {
    /// Wraps modes that are already `H`-orthonormal.
    pub fn from_orthonormal(modes: DMatrix<f64>, frame: BasisFrame) -> Self {
        Self {
            modes,
            frame,
            rank_deficient: false,
        }
    }

    pub fn r(&self) -> usize {
        self.modes.ncols()
    }

    pub fn n(&self) -> usize {
        self.modes.nrows()
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> DiscreteField {
        self.modes.column(i).into_owned()
    }

    pub fn frame(&self) -> &BasisFrame {
        &self.frame
    }

    /// Fewer modes than requested were available.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn with_frame(mut self, frame: BasisFrame) -> Self {
        self.frame = frame;
        self
    }

    /// `[<phi_i, phi_j>_H]`.
    pub fn gram(&self, grid: &SpaceTimeGrid) -> DMatrix<f64> {
        self.modes.tr_mul(&self.modes) * grid.dx()
    }

    /// Coefficients `<phi_i, field>_H`.
    pub fn project(&self, field: &DiscreteField, grid: &SpaceTimeGrid) -> Result<DVector<f64>> {
        check_len("project", self.n(), field.len())?;
        Ok(self.modes.tr_mul(field) * grid.dx())
    }

    /// Projects every column of `data`.
    pub fn project_columns(
        &self,
        data: &DMatrix<f64>,
        grid: &SpaceTimeGrid,
    ) -> Result<DMatrix<f64>> {
        check_len("project_columns", self.n(), data.nrows())?;
        Ok(self.modes.tr_mul(data) * grid.dx())
    }

    pub fn reconstruct(&self, coefficients: &DVector<f64>) -> Result<DiscreteField> {
        check_len("reconstruct", self.r(), coefficients.len())?;
        Ok(&self.modes * coefficients)
    }

    /// Keeps the leading `r` modes.
    pub fn truncated(&self, r: usize) -> Self {
        let r = r.min(self.r());
        Self {
            modes: self.modes.columns(0, r).into_owned(),
            frame: self.frame.clone(),
            rank_deficient: self.rank_deficient,
        }
    }
}

/// Nonincreasing singular values of a weighted snapshot matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularSpectrum(DVector<f64>);

impl SingularSpectrum {
    pub fn new(sigma: DVector<f64>) -> Result<Self> {
        if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidParameter(
                "singular values must be finite and nonnegative".into(),
            ));
        }
        if sigma.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "singular values must be sorted nonincreasing".into(),
            ));
        }
        Ok(Self(sigma))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn leading(&self) -> f64 {
        self.0.get(0).copied().unwrap_or(0.0)
    }

    /// `sigma_i / sigma_1` for 1-based `i`; zero beyond the stored range.
    pub fn ratio(&self, i: usize) -> f64 {
        let s1 = self.leading();
        if s1 == 0.0 || i == 0 {
            return 0.0;
        }
        self.0.get(i - 1).map_or(0.0, |s| s / s1)
    }

    /// Count of singular values with `sigma_i / sigma_1 > threshold`.
    pub fn numerical_rank(&self, threshold: f64) -> usize {
        let s1 = self.leading();
        if s1 == 0.0 {
            return 0;
        }
        self.0.iter().filter(|&&s| s / s1 > threshold).count()
    }
}

struct WeightedSvd {
    modes: DMatrix<f64>,
    sigma: DVector<f64>,
}

fn to_faer(data: &DMatrix<f64>, scale: f64) -> faer::Mat<f64> {
    faer::Mat::from_fn(data.nrows(), data.ncols(), |i, j| scale * data[(i, j)])
}

fn svd_failure(e: impl std::fmt::Debug) -> Error {
    Error::Decomposition(format!("SVD did not converge: {e:?}"))
}

fn weighted_svd(data: &DMatrix<f64>, grid: &SpaceTimeGrid) -> Result<WeightedSvd> {
    let w = grid.dx().sqrt();
    let svd = to_faer(data, w).thin_svd().map_err(svd_failure)?;
    let (u, s) = (svd.U(), svd.S());
    let k = u.ncols();
    Ok(WeightedSvd {
        modes: DMatrix::from_fn(data.nrows(), k, |i, j| u[(i, j)] / w),
        sigma: DVector::from_fn(k, |i, _| s[i]),
    })
}

/// Leading `r` left singular vectors of `diag(sqrt(dx)) Q`, rescaled to be
/// `H`-orthonormal, and the full spectrum.
pub fn pod_basis(
    q: &SnapshotMatrix,
    r: usize,
    grid: &SpaceTimeGrid,
) -> Result<(ModeBasis, SingularSpectrum)> {
    check_len("pod_basis rows", grid.n(), q.n())?;
    if r == 0 {
        return Err(Error::InvalidParameter(
            "mode count must be positive".into(),
        ));
    }
    let svd = weighted_svd(q.matrix(), grid)?;
    let spectrum = SingularSpectrum::new(svd.sigma)?;
    if spectrum.leading() == 0.0 {
        return Err(Error::EmptySnapshots);
    }
    let available = spectrum.numerical_rank(RANK_THRESHOLD);
    let kept = r.min(available);
    let basis = ModeBasis {
        modes: svd.modes.columns(0, kept).into_owned(),
        frame: BasisFrame::Stationary,
        rank_deficient: kept < r,
    };
    Ok((basis, spectrum))
}

/// Spectrum only; cheaper than [`pod_basis`] since no singular vectors are formed.
pub fn singular_spectrum(data: &DMatrix<f64>, grid: &SpaceTimeGrid) -> Result<SingularSpectrum> {
    let mut v = to_faer(data, grid.dx().sqrt())
        .singular_values()
        .map_err(svd_failure)?;
    v.sort_by(|a, b| b.total_cmp(a));
    SingularSpectrum::new(DVector::from_vec(v))
}

/// `d = #{ i : sigma_i / sigma_1 > tol }`, at least one.
pub fn mode_count_by_tolerance(spectrum: &SingularSpectrum, tol: f64) -> Result<usize> {
    if spectrum.leading() == 0.0 {
        return Err(Error::EmptySnapshots);
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must lie in (0, 1), got {tol}"
        )));
    }
    Ok(spectrum.numerical_rank(tol).max(1))
}

/// Orthonormal basis of `span{y0, b_1, ..., b_m}`.
///
/// For Fourier shapes this span is invariant under the transport semigroup,
/// so transformed controlled snapshots never leave it.
pub fn eigenfunction_stationary_basis(
    grid: &SpaceTimeGrid,
    shapes: &ControlShapes,
    y0: &DiscreteField,
) -> Result<ModeBasis> {
    check_len("eigenfunction basis initial condition", grid.n(), y0.len())?;
    check_len("eigenfunction basis shapes", grid.n(), shapes.n())?;
    let m = shapes.m();
    let mut stack = DMatrix::zeros(grid.n(), m + 1);
    stack.set_column(0, y0);
    stack.columns_mut(1, m).copy_from(shapes.matrix());
    let svd = weighted_svd(&stack, grid)?;
    let spectrum = SingularSpectrum::new(svd.sigma)?;
    let kept = spectrum.numerical_rank(RANK_THRESHOLD);
    Ok(ModeBasis {
        modes: svd.modes.columns(0, kept).into_owned(),
        frame: BasisFrame::Stationary,
        rank_deficient: kept < m + 1,
    })
}
