//! Thin plate splines on the rating/tenor plane.
//!
//! A fitted spline has the form
//!
//! ```text
//! f(x) = sum_i a_i u(|x - X_i|) + b0 + b1 x1 + b2 x2,     u(r) = r^2 ln r
//! ```
//!
//! with the side condition `N^T a = 0`, where row `i` of `N` is `[1, X_i]`.
//! The coefficients solve the bordered system
//!
//! ```text
//! [ M + lambda I   N ] [a]   [Y]
//! [ N^T            0 ] [b] = [0]
//! ```
//!
//! which is the reduced form `b = (N^T M^-1 N)^-1 N^T M^-1 Y`,
//! `a = M^-1 (Y - N b)` written without inverting `M`. One LU factorisation
//! with partial pivoting covers both unknowns, and it stays well posed when
//! `M` alone is singular (three anchors at mutual distance 1 give `M = 0`).
//!
//! `lambda = 0` interpolates the anchors exactly. `lambda > 0` trades fit for
//! smoothness; it is usually picked with [`cross_validate_lambda`].

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::surface::{cell_coordinates, MaskedSurface, YieldSurface, N_CELLS, N_TENORS};

/// Candidate smoothing parameters used when none are given.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.0, 1e-6, 1e-4, 1e-2, 1.0];
pub const DEFAULT_FOLDS: usize = 5;

/// Condition numbers above this are reported on the fit.
pub const CONDITION_WARNING: f64 = 1e12;

const RANK_TOLERANCE: f64 = 1e-10;
const DUPLICATE_TOLERANCE: f64 = 1e-12;

/// The radial basis `u(r) = r^2 log(r)` with a configurable logarithm base.
///
/// Changing the base multiplies `u` by a constant, which the coefficients
/// absorb: interpolating fits are identical for every base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kernel {
    inv_ln_base: f64,
}

impl Kernel {
    pub const NATURAL: Kernel = Kernel { inv_ln_base: 1.0 };

    pub fn with_log_base(base: f64) -> Result<Kernel> {
        if !(base.is_finite() && base > 0.0 && base != 1.0) {
            return Err(Error::Argument(format!("invalid logarithm base {base}")));
        }
        Ok(Kernel {
            inv_ln_base: 1.0 / base.ln(),
        })
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        if r > 0.0 {
            r * r * r.ln() * self.inv_ln_base
        } else {
            0.0
        }
    }

    #[inline]
    fn between(&self, p: [f64; 2], q: [f64; 2]) -> f64 {
        self.eval(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::NATURAL
    }
}

/// `r^2 ln r`, continuously extended by `u(0) = 0`.
pub fn kernel_u(r: f64) -> Result<f64> {
    if r.is_nan() || r < 0.0 {
        return Err(Error::Argument(format!("kernel radius must be nonnegative, got {r}")));
    }
    Ok(Kernel::NATURAL.eval(r))
}

/// Points in the plane with the values a spline should pass through (or near).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorSet {
    points: Vec<[f64; 2]>,
    values: Vec<f64>,
}

impl AnchorSet {
    /// Checks sizes and finiteness. Duplicate or collinear points are only
    /// detected when a system is built, where they surface as
    /// [`Error::Singular`] and [`Error::Geometry`] respectively.
    pub fn new(points: Vec<[f64; 2]>, values: Vec<f64>) -> Result<AnchorSet> {
        if points.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        if points.len() < 3 {
            return Err(Error::Geometry(format!(
                "need at least 3 anchors, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Argument("anchor coordinates and values must be finite".into()));
        }
        Ok(AnchorSet { points, values })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The anchors at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<AnchorSet> {
        AnchorSet::new(
            indices.iter().map(|&i| self.points[i]).collect(),
            indices.iter().map(|&i| self.values[i]).collect(),
        )
    }

    fn check_distinct(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            for (j, q) in self.points.iter().enumerate().skip(i + 1) {
                if (p[0] - q[0]).abs() <= DUPLICATE_TOLERANCE && (p[1] - q[1]).abs() <= DUPLICATE_TOLERANCE {
                    return Err(Error::Singular {
                        message: format!("anchors {i} and {j} coincide at ({}, {})", p[0], p[1]),
                        condition: None,
                    });
                }
            }
        }
        Ok(())
    }

    fn affine_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 3, |i, j| match j {
            0 => 1.0,
            _ => self.points[i][j - 1],
        })
    }
}

/// The kernel matrix `M` (with `lambda` on its diagonal) and the affine block `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsSystem {
    pub kernel: DMatrix<f64>,
    pub affine: DMatrix<f64>,
}

/// `M_ij = u(|X_i - X_j|) + lambda * delta_ij`, `N_i = [1, x1_i, x2_i]`.
pub fn build_system(anchors: &AnchorSet, lambda: f64) -> Result<TpsSystem> {
    build_system_with_kernel(anchors, lambda, Kernel::NATURAL)
}

pub fn build_system_with_kernel(anchors: &AnchorSet, lambda: f64, kernel: Kernel) -> Result<TpsSystem> {
    check_lambda(lambda)?;
    anchors.check_distinct()?;
    Ok(TpsSystem {
        kernel: kernel_matrix(anchors.points(), kernel, lambda),
        affine: anchors.affine_matrix(),
    })
}

fn kernel_matrix(points: &[[f64; 2]], kernel: Kernel, lambda: f64) -> DMatrix<f64> {
    let m = points.len();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = lambda;
        for j in i + 1..m {
            let v = kernel.between(points[i], points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )))
    }
}

/// A fitted thin plate spline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TpsFit {
    /// Radial coefficients, one per anchor.
    pub a: Vec<f64>,
    /// Affine coefficients `(b0, b1, b2)`.
    pub b: [f64; 3],
    pub lambda: f64,
    pub anchors: AnchorSet,
    pub kernel: Kernel,
    /// Condition estimate of the bordered system, kept only when it exceeds
    /// [`CONDITION_WARNING`].
    pub condition: Option<f64>,
}

pub fn fit(anchors: &AnchorSet, lambda: f64) -> Result<TpsFit> {
    fit_with_kernel(anchors, lambda, Kernel::NATURAL)
}

pub fn fit_with_kernel(anchors: &AnchorSet, lambda: f64, kernel: Kernel) -> Result<TpsFit> {
    let system = build_system_with_kernel(anchors, lambda, kernel)?;
    let m = anchors.len();

    let sv = system.affine.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= RANK_TOLERANCE * smax {
        return Err(Error::Geometry(format!(
            "anchors are collinear (affine block singular values {smax:.3e} .. {smin:.3e})"
        )));
    }

    let mut bordered = DMatrix::zeros(m + 3, m + 3);
    bordered.view_mut((0, 0), (m, m)).copy_from(&system.kernel);
    bordered.view_mut((0, m), (m, 3)).copy_from(&system.affine);
    bordered.view_mut((m, 0), (3, m)).copy_from(&system.affine.transpose());
    let mut rhs = DVector::zeros(m + 3);
    rhs.rows_mut(0, m).copy_from_slice(anchors.values());

    let lu = bordered.clone().lu();
    let pivots = lu.u().diagonal().map(f64::abs);
    let pivot_ratio = pivots.max() / pivots.min();
    let condition = if !pivot_ratio.is_finite() || pivot_ratio > CONDITION_WARNING {
        Some(condition_number(&bordered))
    } else {
        None
    };
    let solution = lu
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular {
            message: "bordered spline system has no unique solution".into(),
            condition,
        })?;

    let fit = TpsFit {
        a: solution.rows(0, m).iter().copied().collect(),
        b: [solution[m], solution[m + 1], solution[m + 2]],
        lambda,
        anchors: anchors.clone(),
        kernel,
        condition: condition.filter(|&c| c > CONDITION_WARNING),
    };
    Ok(fit)
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let smin = sv.min();
    if smin > 0.0 {
        sv.max() / smin
    } else {
        f64::INFINITY
    }
}

impl TpsFit {
    pub fn evaluate(&self, x: [f64; 2]) -> f64 {
        let radial: f64 = self
            .a
            .iter()
            .zip(self.anchors.points())
            .map(|(a, &p)| a * self.kernel.between(x, p))
            .sum();
        radial + self.b[0] + self.b[1] * x[0] + self.b[2] * x[1]
    }

    /// `a^T M0 a` with `M0` the kernel matrix without smoothing.
    ///
    /// For the natural-log kernel the integral of the squared Hessian entries
    /// of `f` over the whole plane equals `8 pi` times this value.
    pub fn bending_energy(&self) -> f64 {
        let pts = self.anchors.points();
        let mut e = 0.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                e += 2.0 * self.a[i] * self.a[j] * self.kernel.between(pts[i], pts[j]);
            }
        }
        e
    }

    /// `||N^T a||_inf`; zero in exact arithmetic.
    pub fn orthogonality_residual(&self) -> f64 {
        let mut r = [0.0f64; 3];
        for (a, p) in self.a.iter().zip(self.anchors.points()) {
            r[0] += a;
            r[1] += a * p[0];
            r[2] += a * p[1];
        }
        r.into_iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// See [`TpsFit::evaluate`].
pub fn evaluate(fit: &TpsFit, x: [f64; 2]) -> f64 {
    fit.evaluate(x)
}

/// See [`TpsFit::bending_energy`].
pub fn bending_energy(fit: &TpsFit) -> f64 {
    fit.bending_energy()
}

/// Picks the grid value of `lambda` with the lowest k-fold held-out squared error.
///
/// Anchor `i` goes to fold `i mod k`. When `m < folds + 3` the fold count is
/// raised (up to leave-one-out) until every training part keeps at least three
/// anchors. Folds whose training part is collinear are skipped. Errors within
/// a relative `1e-9` of the best count as ties and resolve to the larger
/// `lambda`. With exactly three anchors every `lambda` gives the same affine
/// fit, so the largest grid value is returned.
pub fn cross_validate_lambda(anchors: &AnchorSet, folds: usize, grid: &[f64]) -> Result<f64> {
    if folds < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {folds}")));
    }
    if grid.is_empty() {
        return Err(Error::Argument("empty lambda grid".into()));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    let largest = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = anchors.len();
    if m == 3 {
        return Ok(largest);
    }
    let k = folds.max(m.div_ceil(m - 3)).min(m);

    let partitions: Vec<(Vec<usize>, Vec<usize>)> = (0..k).map(|f| (0..m).partition(|i| i % k != f)).collect();

    let mut scores: Vec<(f64, f64)> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut sse = 0.0;
        let mut count = 0usize;
        for (train, held) in &partitions {
            let fitted = anchors.subset(train).and_then(|s| fit(&s, lambda));
            let f = match fitted {
                Ok(f) => f,
                Err(Error::Geometry(_)) | Err(Error::Singular { .. }) => continue,
                Err(e) => return Err(e),
            };
            for &i in held {
                let d = f.evaluate(anchors.points[i]) - anchors.values[i];
                sse += d * d;
                count += 1;
            }
        }
        if count > 0 {
            scores.push((lambda, sse / count as f64));
        }
    }
    let best = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::Geometry(format!(
            "every cross-validation fold of {m} anchors is degenerate"
        )));
    }
    let tolerance = best * 1e-9 + 1e-20;
    Ok(scores
        .iter()
        .filter(|s| s.1 <= best + tolerance)
        .map(|s| s.0)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Anchors for the observed cells of a masked surface.
pub fn anchors_from_masked(input: &MaskedSurface) -> Result<AnchorSet> {
    let (points, values): (Vec<[f64; 2]>, Vec<f64>) = input
        .observations()
        .map(|(r, c, v)| {
            let (x1, x2) = cell_coordinates(r, c);
            ([x1, x2], v)
        })
        .unzip();
    AnchorSet::new(points, values)
}

/// A completed surface together with the spline that produced it.
#[derive(Debug, Clone)]
pub struct TpsCompletion {
    pub surface: YieldSurface,
    pub fit: TpsFit,
}

/// Fits a spline to the observed cells (lambda chosen by cross-validation)
/// and evaluates it on all 195 cells. Observed cells are not clamped.
pub fn complete_surface(input: &MaskedSurface, lambda_grid: &[f64], folds: usize) -> Result<YieldSurface> {
    complete_surface_detailed(input, lambda_grid, folds).map(|c| c.surface)
}

pub fn complete_surface_detailed(input: &MaskedSurface, lambda_grid: &[f64], folds: usize) -> Result<TpsCompletion> {
    let anchors = anchors_from_masked(input)?;
    let lambda = cross_validate_lambda(&anchors, folds, lambda_grid)?;
    let fit = fit(&anchors, lambda)?;
    let values = (0..N_CELLS)
        .map(|i| {
            let (x1, x2) = cell_coordinates(i / N_TENORS, i % N_TENORS);
            fit.evaluate([x1, x2])
        })
        .collect();
    Ok(TpsCompletion {
        surface: YieldSurface::from_estimates(values)?,
        fit,
    })
}
