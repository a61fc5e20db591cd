//! Rating/tenor yield surfaces.
//!
//! A surface is a 13 x 15 grid of annualised yields in percent, rows indexed
//! by credit rating (AAA first) and columns by tenor (3M first). Cells may be
//! missing in stored data; model inputs use [`MaskedSurface`], where
//! unobserved cells hold a literal zero alongside an explicit mask.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_RATINGS: usize = 13;
pub const N_TENORS: usize = 15;
pub const N_CELLS: usize = N_RATINGS * N_TENORS;

/// Adjacent comparisons on a full grid: 12 x 15 along rating plus 13 x 14 along tenor.
pub const N_ADJACENT_COMPARISONS: usize = (N_RATINGS - 1) * N_TENORS + N_RATINGS * (N_TENORS - 1);

/// Credit rating of a bond index, ordered from best (AAA) to worst (B).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rating {
    AAA,
    AA,
    APlus,
    A,
    AMinus,
    BBBPlus,
    BBB,
    BBBMinus,
    BBPlus,
    BB,
    BBMinus,
    BPlus,
    B,
}

impl Rating {
    pub const ALL: [Rating; N_RATINGS] = [
        Rating::AAA,
        Rating::AA,
        Rating::APlus,
        Rating::A,
        Rating::AMinus,
        Rating::BBBPlus,
        Rating::BBB,
        Rating::BBBMinus,
        Rating::BBPlus,
        Rating::BB,
        Rating::BBMinus,
        Rating::BPlus,
        Rating::B,
    ];

    /// 1 for AAA through 13 for B.
    pub fn ordinal(self) -> usize {
        self as usize + 1
    }

    /// Zero-based row index in a surface.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Result<Rating> {
        if (1..=N_RATINGS).contains(&ordinal) {
            Ok(Rating::ALL[ordinal - 1])
        } else {
            Err(Error::Range(format!(
                "rating ordinal {ordinal} outside 1..={N_RATINGS}"
            )))
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Rating::AAA => "AAA",
            Rating::AA => "AA",
            Rating::APlus => "A+",
            Rating::A => "A",
            Rating::AMinus => "A-",
            Rating::BBBPlus => "BBB+",
            Rating::BBB => "BBB",
            Rating::BBBMinus => "BBB-",
            Rating::BBPlus => "BB+",
            Rating::BB => "BB",
            Rating::BBMinus => "BB-",
            Rating::BPlus => "B+",
            Rating::B => "B",
        }
    }

    pub fn from_label(label: &str) -> Option<Rating> {
        Rating::ALL.into_iter().find(|r| r.label() == label.trim())
    }

    /// Position of the rating on the interpolation axis. Ratings are equally
    /// spaced and normalised so AAA maps to 0 and B to 1.
    pub fn coordinate(self) -> f64 {
        (self.ordinal() - 1) as f64 / (N_RATINGS - 1) as f64
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// See [`Rating::coordinate`].
pub fn rating_coordinate(rating: Rating) -> f64 {
    rating.coordinate()
}

/// Time to maturity in years.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Tenor(f64);

/// The canonical tenor grid, in years.
pub const TENOR_YEARS: [f64; N_TENORS] = [
    0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 8.0, 9.0, 10.0, 15.0, 20.0, 25.0, 30.0,
];

pub const TENOR_LABELS: [&str; N_TENORS] = [
    "3M", "6M", "1Y", "2Y", "3Y", "4Y", "5Y", "7Y", "8Y", "9Y", "10Y", "15Y", "20Y", "25Y", "30Y",
];

const MIN_TENOR: f64 = TENOR_YEARS[0];
const MAX_TENOR: f64 = TENOR_YEARS[N_TENORS - 1];

impl Tenor {
    pub fn new(years: f64) -> Result<Tenor> {
        if years.is_finite() && years > 0.0 {
            Ok(Tenor(years))
        } else {
            Err(Error::Range(format!("tenor must be positive, got {years}")))
        }
    }

    pub fn years(self) -> f64 {
        self.0
    }

    /// Tenor at column `index` of the canonical grid.
    pub fn at(index: usize) -> Tenor {
        Tenor(TENOR_YEARS[index])
    }

    pub fn grid() -> impl Iterator<Item = Tenor> {
        TENOR_YEARS.into_iter().map(Tenor)
    }

    /// Column index when the tenor lies exactly on the canonical grid.
    pub fn grid_index(self) -> Option<usize> {
        TENOR_YEARS.iter().position(|&t| t == self.0)
    }

    pub fn from_label(label: &str) -> Option<Tenor> {
        TENOR_LABELS.iter().position(|&l| l == label.trim()).map(Tenor::at)
    }

    pub fn label(self) -> Option<&'static str> {
        self.grid_index().map(|i| TENOR_LABELS[i])
    }

    /// Min-max normalised position on the tenor axis: 3M maps to 0, 30Y to 1.
    pub fn coordinate(self) -> Result<f64> {
        if !(MIN_TENOR..=MAX_TENOR).contains(&self.0) {
            return Err(Error::Range(format!(
                "tenor {}y outside [{MIN_TENOR}, {MAX_TENOR}]",
                self.0
            )));
        }
        Ok((self.0 - MIN_TENOR) / (MAX_TENOR - MIN_TENOR))
    }
}

impl fmt::Display for Tenor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label() {
            Some(l) => f.write_str(l),
            None => write!(f, "{}y", self.0),
        }
    }
}

/// See [`Tenor::coordinate`].
pub fn tenor_coordinate(tenor: Tenor) -> Result<f64> {
    tenor.coordinate()
}

/// Interpolation-plane coordinates of grid cell `(row, col)`.
pub fn cell_coordinates(row: usize, col: usize) -> (f64, f64) {
    let x1 = Rating::ALL[row].coordinate();
    let x2 = (TENOR_YEARS[col] - MIN_TENOR) / (MAX_TENOR - MIN_TENOR);
    (x1, x2)
}

/// A 13 x 15 yield grid. Cells are `None` when missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldSurface {
    cells: Vec<Option<f64>>,
    date: Option<NaiveDate>,
}

impl YieldSurface {
    /// Builds a surface from row-major cells. Present values must be finite and positive.
    pub fn new(cells: Vec<Option<f64>>) -> Result<Self> {
        if cells.len() != N_CELLS {
            return Err(Error::Shape(format!(
                "surface needs {N_CELLS} cells, got {}",
                cells.len()
            )));
        }
        for (i, v) in cells.iter().enumerate() {
            if let Some(v) = *v {
                if !(v.is_finite() && v > 0.0) {
                    let (r, c) = (i / N_TENORS, i % N_TENORS);
                    return Err(Error::Data(format!(
                        "yield at ({}, {}) must be finite and positive, got {v}",
                        Rating::ALL[r],
                        TENOR_LABELS[c]
                    )));
                }
            }
        }
        Ok(YieldSurface { cells, date: None })
    }

    /// A complete surface from a row-major array of values.
    pub fn from_rows(rows: &[[f64; N_TENORS]; N_RATINGS]) -> Result<Self> {
        YieldSurface::new(rows.iter().flatten().map(|&v| Some(v)).collect())
    }

    /// A complete surface from row-major model estimates. Estimates only need
    /// to be finite: an extrapolating interpolator is free to go nonpositive.
    pub fn from_estimates(values: Vec<f64>) -> Result<Self> {
        if values.len() != N_CELLS {
            return Err(Error::Shape(format!(
                "surface needs {N_CELLS} cells, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite estimate {v}")));
        }
        Ok(YieldSurface {
            cells: values.into_iter().map(Some).collect(),
            date: None,
        })
    }

    pub fn with_date(mut self, date: Option<NaiveDate>) -> Self {
        self.date = date;
        self
    }

    pub fn date(&self) -> Option<NaiveDate> {
        self.date
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * N_TENORS + col]
    }

    pub fn at(&self, rating: Rating, tenor: Tenor) -> Option<f64> {
        tenor.grid_index().and_then(|col| self.get(rating.index(), col))
    }

    pub fn cells(&self) -> &[Option<f64>] {
        &self.cells
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    pub fn present_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Row-major values of a complete surface.
    pub fn values(&self) -> Result<Vec<f64>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    Error::Argument(format!(
                        "surface is missing ({}, {})",
                        Rating::ALL[i / N_TENORS],
                        TENOR_LABELS[i % N_TENORS]
                    ))
                })
            })
            .collect()
    }

    pub fn max_value(&self) -> Option<f64> {
        self.cells.iter().flatten().copied().reduce(f64::max)
    }

    fn map_present(&self, f: impl Fn(f64) -> f64) -> YieldSurface {
        YieldSurface {
            cells: self.cells.iter().map(|c| c.map(&f)).collect(),
            date: self.date,
        }
    }
}

/// Divides yields by a fixed factor so the reference dataset peaks at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingTransform {
    factor: f64,
}

impl ScalingTransform {
    pub fn new(factor: f64) -> Result<Self> {
        if factor.is_finite() && factor > 0.0 {
            Ok(ScalingTransform { factor })
        } else {
            Err(Error::Argument(format!(
                "scaling factor must be positive and finite, got {factor}"
            )))
        }
    }

    /// Factor equal to the largest present yield across `dataset`.
    pub fn fit<'a>(dataset: impl IntoIterator<Item = &'a YieldSurface>) -> Result<Self> {
        let max = dataset
            .into_iter()
            .filter_map(YieldSurface::max_value)
            .reduce(f64::max)
            .ok_or_else(|| Error::Argument("dataset has no present values".into()))?;
        ScalingTransform::new(max)
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn scale(&self, surface: &YieldSurface) -> YieldSurface {
        let f = self.factor;
        surface.map_present(|v| v / f)
    }

    pub fn unscale(&self, surface: &YieldSurface) -> YieldSurface {
        let f = self.factor;
        surface.map_present(|v| v * f)
    }

    pub fn scale_value(&self, v: f64) -> f64 {
        v / self.factor
    }

    pub fn unscale_value(&self, v: f64) -> f64 {
        v * self.factor
    }
}

/// See [`ScalingTransform::fit`].
pub fn fit_scaling(dataset: &[YieldSurface]) -> Result<ScalingTransform> {
    if dataset.is_empty() {
        return Err(Error::Argument("empty dataset".into()));
    }
    ScalingTransform::fit(dataset)
}

/// A scaled surface with an observation mask; unobserved cells hold exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSurface {
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl MaskedSurface {
    /// Keeps the cells of a complete `surface` flagged in `observed` and zeroes the rest.
    pub fn from_pattern(surface: &YieldSurface, observed: &[bool]) -> Result<Self> {
        if observed.len() != N_CELLS {
            return Err(Error::Shape(format!(
                "mask needs {N_CELLS} entries, got {}",
                observed.len()
            )));
        }
        let mut values = vec![0.0; N_CELLS];
        for (i, &keep) in observed.iter().enumerate() {
            if keep {
                values[i] = surface.cells[i].ok_or_else(|| {
                    Error::Argument(format!(
                        "observed cell ({}, {}) is missing",
                        Rating::ALL[i / N_TENORS],
                        TENOR_LABELS[i % N_TENORS]
                    ))
                })?;
            }
        }
        Ok(MaskedSurface {
            values,
            observed: observed.to_vec(),
        })
    }

    /// Treats the present cells of a (possibly partial) surface as observed.
    pub fn from_partial(surface: &YieldSurface) -> Self {
        MaskedSurface {
            values: surface.cells.iter().map(|c| c.unwrap_or(0.0)).collect(),
            observed: surface.cells.iter().map(Option::is_some).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Observed cells as `(row, col, value)`.
    pub fn observations(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(|(i, _)| (i / N_TENORS, i % N_TENORS, self.values[i]))
    }
}

/// Fills missing long-tenor cells as `value(row, anchor) + spread(tenor)`.
///
/// `spreads` lists the tenors to fill with their generic spread over the
/// anchor tenor, in percent. Present cells are never modified.
pub fn extend_long_tenors(surface: &YieldSurface, spreads: &[(Tenor, f64)], anchor: Tenor) -> Result<YieldSurface> {
    let anchor_col = anchor
        .grid_index()
        .ok_or_else(|| Error::Argument(format!("anchor tenor {anchor} is off the grid")))?;
    let mut targets = Vec::with_capacity(spreads.len());
    for &(tenor, spread) in spreads {
        let col = tenor
            .grid_index()
            .ok_or_else(|| Error::Argument(format!("tenor {tenor} is off the grid")))?;
        if !spread.is_finite() {
            return Err(Error::Argument(format!("spread for {tenor} is not finite")));
        }
        targets.push((col, spread));
    }
    let mut cells = surface.cells.clone();
    for row in 0..N_RATINGS {
        for &(col, spread) in &targets {
            let idx = row * N_TENORS + col;
            if cells[idx].is_some() {
                continue;
            }
            let base = surface
                .get(row, anchor_col)
                .ok_or_else(|| Error::Data(format!("{} has no {} yield to extend from", Rating::ALL[row], anchor)))?;
            cells[idx] = Some(base + spread);
        }
    }
    Ok(YieldSurface::new(cells)?.with_date(surface.date))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingViolation {
    pub tenor: Tenor,
    /// The better and worse rating of the offending pair.
    pub ratings: (Rating, Rating),
    /// How far the worse rating's yield sits below the better one, in percent.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TenorViolation {
    pub rating: Rating,
    pub tenors: (Tenor, Tenor),
    pub magnitude: f64,
}

impl fmt::Display for RatingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} yield below {} at {} by {:.4}",
            self.ratings.1, self.ratings.0, self.tenor, self.magnitude
        )
    }
}

impl fmt::Display for TenorViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} yield falls from {} to {} by {:.4}",
            self.rating, self.tenors.0, self.tenors.1, self.magnitude
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub rating_violations: Vec<RatingViolation>,
    pub tenor_violations: Vec<TenorViolation>,
    /// Violations over all [`N_ADJACENT_COMPARISONS`] adjacent pairs.
    pub violation_rate: f64,
}

impl MonotonicityReport {
    pub fn violation_count(&self) -> usize {
        self.rating_violations.len() + self.tenor_violations.len()
    }
}

/// Flags every adjacent pair where yield falls as rating worsens or tenor lengthens.
pub fn monotonicity_report(surface: &YieldSurface) -> Result<MonotonicityReport> {
    let v = surface.values()?;
    let at = |r: usize, c: usize| v[r * N_TENORS + c];
    let mut rating_violations = Vec::new();
    let mut tenor_violations = Vec::new();
    for c in 0..N_TENORS {
        for r in 0..N_RATINGS - 1 {
            if at(r + 1, c) < at(r, c) {
                rating_violations.push(RatingViolation {
                    tenor: Tenor::at(c),
                    ratings: (Rating::ALL[r], Rating::ALL[r + 1]),
                    magnitude: at(r, c) - at(r + 1, c),
                });
            }
        }
    }
    for r in 0..N_RATINGS {
        for c in 0..N_TENORS - 1 {
            if at(r, c + 1) < at(r, c) {
                tenor_violations.push(TenorViolation {
                    rating: Rating::ALL[r],
                    tenors: (Tenor::at(c), Tenor::at(c + 1)),
                    magnitude: at(r, c) - at(r, c + 1),
                });
            }
        }
    }
    let violation_rate = (rating_violations.len() + tenor_violations.len()) as f64 / N_ADJACENT_COMPARISONS as f64;
    Ok(MonotonicityReport {
        rating_violations,
        tenor_violations,
        violation_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> YieldSurface {
        let mut rows = [[0.0; N_TENORS]; N_RATINGS];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (r + c + 1) as f64;
            }
        }
        YieldSurface::from_rows(&rows).unwrap()
    }

    #[test]
    fn rating_coordinates() {
        assert_eq!(rating_coordinate(Rating::AAA), 0.0);
        assert_eq!(rating_coordinate(Rating::B), 1.0);
        assert_eq!(rating_coordinate(Rating::BBB), 0.5);
        assert_eq!(Rating::BBB.ordinal(), 7);
        for w in Rating::ALL.windows(2) {
            assert!(w[0].coordinate() < w[1].coordinate());
        }
    }

    #[test]
    fn rating_labels_are_a_bijection() {
        for (i, r) in Rating::ALL.into_iter().enumerate() {
            assert_eq!(r.ordinal(), i + 1);
            assert_eq!(Rating::from_label(r.label()), Some(r));
            assert_eq!(Rating::from_ordinal(i + 1).unwrap(), r);
        }
        assert!(Rating::from_ordinal(0).is_err());
        assert!(Rating::from_ordinal(14).is_err());
        assert_eq!(Rating::from_label("CCC"), None);
    }

    #[test]
    fn tenor_coordinates() {
        assert_eq!(tenor_coordinate(Tenor::new(0.25).unwrap()).unwrap(), 0.0);
        assert_eq!(tenor_coordinate(Tenor::new(30.0).unwrap()).unwrap(), 1.0);
        let c15 = tenor_coordinate(Tenor::new(15.0).unwrap()).unwrap();
        assert!((c15 - 14.75 / 29.75).abs() < 1e-15);
        assert!((c15 - 0.495_798).abs() < 1e-6);
        assert!(matches!(
            tenor_coordinate(Tenor::new(31.0).unwrap()),
            Err(Error::Range(_))
        ));
        assert!(Tenor::new(0.0).is_err());
        assert!(Tenor::new(-1.0).is_err());
    }

    #[test]
    fn tenor_grid_is_strictly_increasing() {
        assert_eq!(TENOR_YEARS.len(), 15);
        assert!(TENOR_YEARS.windows(2).all(|w| w[0] < w[1]));
        let coords: Vec<f64> = Tenor::grid().map(|t| t.coordinate().unwrap()).collect();
        assert!(coords.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn scaling_examples() {
        let xf = ScalingTransform::new(8.01).unwrap();
        assert_eq!(xf.scale_value(8.01), 1.0);
        assert!((xf.scale_value(2.10) - 0.262_172).abs() < 1e-6);
        assert!((xf.unscale_value(0.262_172) - 2.10).abs() < 1e-5);
        assert!((xf.unscale_value(2.10 / 8.01) - 2.10).abs() < 1e-12);
        assert_eq!(xf.unscale_value(1.0), 8.01);

        let s = ramp();
        assert_eq!(ScalingTransform::new(1.0).unwrap().scale(&s), s);
        assert!(ScalingTransform::new(0.0).is_err());
        assert!(ScalingTransform::new(-2.0).is_err());
    }

    #[test]
    fn scaling_preserves_missing() {
        let mut cells = vec![Some(2.0); N_CELLS];
        cells[7] = None;
        let s = YieldSurface::new(cells).unwrap();
        let scaled = ScalingTransform::new(4.0).unwrap().scale(&s);
        assert_eq!(scaled.cells()[7], None);
        assert_eq!(scaled.cells()[8], Some(0.5));
    }

    #[test]
    fn fit_scaling_takes_dataset_max() {
        let single = {
            let mut cells = vec![None; N_CELLS];
            cells[0] = Some(5.0);
            YieldSurface::new(cells).unwrap()
        };
        assert_eq!(fit_scaling(&[single]).unwrap().factor(), 5.0);

        let a = YieldSurface::new(vec![Some(6.2); N_CELLS]).unwrap();
        let b = YieldSurface::new(vec![Some(7.9); N_CELLS]).unwrap();
        assert_eq!(fit_scaling(&[a, b]).unwrap().factor(), 7.9);
        assert!(fit_scaling(&[]).is_err());
        assert!(fit_scaling(&[YieldSurface::new(vec![None; N_CELLS]).unwrap()]).is_err());
    }

    #[test]
    fn surface_rejects_bad_values() {
        let mut cells = vec![Some(1.0); N_CELLS];
        cells[3] = Some(-0.5);
        assert!(matches!(YieldSurface::new(cells), Err(Error::Data(_))));
        assert!(YieldSurface::new(vec![Some(1.0); 10]).is_err());
        assert!(YieldSurface::from_estimates(vec![f64::NAN; N_CELLS]).is_err());
    }

    fn bb_row_surface(twenty: Option<f64>) -> YieldSurface {
        let mut cells = vec![Some(3.0); N_CELLS];
        let row = Rating::BB.index();
        cells[row * N_TENORS + 11] = Some(6.50);
        for c in 12..15 {
            cells[row * N_TENORS + c] = None;
        }
        cells[row * N_TENORS + 12] = twenty;
        YieldSurface::new(cells).unwrap()
    }

    #[test]
    fn extend_long_tenors_fills_from_anchor() {
        let t = |y| Tenor::new(y).unwrap();
        let spreads = [(t(20.0), 0.26), (t(25.0), 0.01), (t(30.0), -0.02)];
        let out = extend_long_tenors(&bb_row_surface(None), &spreads, t(15.0)).unwrap();
        assert!(out.is_complete());
        assert!((out.at(Rating::BB, t(20.0)).unwrap() - 6.76).abs() < 1e-12);
        assert!((out.at(Rating::BB, t(30.0)).unwrap() - 6.48).abs() < 1e-12);

        let zero = extend_long_tenors(&bb_row_surface(None), &[(t(20.0), 0.0)], t(15.0)).unwrap();
        assert_eq!(zero.at(Rating::BB, t(20.0)), Some(6.50));

        let kept = extend_long_tenors(&bb_row_surface(Some(6.9)), &spreads, t(15.0)).unwrap();
        assert_eq!(kept.at(Rating::BB, t(20.0)), Some(6.9));
    }

    #[test]
    fn extend_long_tenors_needs_anchor() {
        let t = |y| Tenor::new(y).unwrap();
        let mut cells = bb_row_surface(None).cells().to_vec();
        cells[Rating::BB.index() * N_TENORS + 11] = None;
        let s = YieldSurface::new(cells).unwrap();
        assert!(matches!(
            extend_long_tenors(&s, &[(t(20.0), 0.1)], t(15.0)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn monotone_surface_has_no_violations() {
        let rep = monotonicity_report(&ramp()).unwrap();
        assert_eq!(rep.violation_count(), 0);
        assert_eq!(rep.violation_rate, 0.0);
        assert_eq!(N_ADJACENT_COMPARISONS, 362);
    }

    #[test]
    fn swapping_adjacent_tenors_creates_one_violation() {
        let mut v = ramp().values().unwrap();
        // (r, c) = (4, 6) and (4, 7) hold 11 and 12; swap them
        v.swap(4 * N_TENORS + 6, 4 * N_TENORS + 7);
        let s = YieldSurface::from_estimates(v).unwrap();
        let rep = monotonicity_report(&s).unwrap();
        assert_eq!(rep.tenor_violations.len(), 1);
        assert_eq!(rep.tenor_violations[0].rating, Rating::AMinus);
        // neighbours along the rating axis tie with the moved cells, which is allowed
        assert!(rep.rating_violations.is_empty());
    }

    #[test]
    fn monotonicity_requires_complete_surface() {
        let s = YieldSurface::new(vec![None; N_CELLS]).unwrap();
        assert!(matches!(monotonicity_report(&s), Err(Error::Argument(_))));
    }

    #[test]
    fn masked_surface_zeroes_unobserved() {
        let s = ramp();
        let mut mask = vec![true; N_CELLS];
        mask[0] = false;
        mask[100] = false;
        let m = MaskedSurface::from_pattern(&s, &mask).unwrap();
        assert_eq!(m.values()[0], 0.0);
        assert_eq!(m.values()[100], 0.0);
        assert_eq!(m.values()[1], 2.0);
        assert_eq!(m.observed_count(), N_CELLS - 2);
        assert_eq!(m.observations().count(), N_CELLS - 2);
    }
}
