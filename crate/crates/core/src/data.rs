//! Dataset ingestion and generation.
//!
//! # CSV layout
//!
//! ```text
//! rating,3M,6M,1Y,2Y,3Y,4Y,5Y,7Y,8Y,9Y,10Y,15Y,20Y,25Y,30Y
//! # date=2018-01-29
//! AAA,2.10,2.17,...
//! ... 13 rows, one per rating ...
//!
//! # date=2018-01-30
//! AAA,...
//! ```
//!
//! Values are yields in percent. An empty field is a missing cell. Blocks of
//! 13 rating rows are separated by blank lines and may carry a
//! `# date=YYYY-MM-DD` line; other `#` lines are comments.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::stream_rng;
use crate::surface::{Rating, YieldSurface, N_CELLS, N_RATINGS, N_TENORS, TENOR_LABELS, TENOR_YEARS};

pub const CSV_HEADER: &str = "rating,3M,6M,1Y,2Y,3Y,4Y,5Y,7Y,8Y,9Y,10Y,15Y,20Y,25Y,30Y";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv,
    Synthetic,
    Fixture,
}

/// Surfaces in date order.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDataset {
    pub surfaces: Vec<YieldSurface>,
    pub source: DataSource,
}

impl SurfaceDataset {
    /// Rejects dates that are not strictly increasing.
    pub fn new(surfaces: Vec<YieldSurface>, source: DataSource) -> Result<Self> {
        let dates: Vec<NaiveDate> = surfaces.iter().filter_map(YieldSurface::date).collect();
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "surface dates must increase strictly, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(SurfaceDataset { surfaces, source })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.surfaces.iter().all(YieldSurface::is_complete)
    }
}

const FIGURE5_FULL: &str = include_str!("../data/figure5_full.csv");
const FIGURE5_SPARSE: &str = include_str!("../data/figure5_sparse.csv");

/// The sample surface of March 2018 industrial indices shipped with the crate:
/// a complete 13 x 15 matrix and a sparse quote pattern drawn from it.
#[derive(Debug, Clone)]
pub struct Figure5 {
    pub full: YieldSurface,
    pub sparse: YieldSurface,
}

impl Figure5 {
    /// Which cells the sparse panel quotes, row-major.
    pub fn sparse_pattern(&self) -> Vec<bool> {
        self.sparse.cells().iter().map(Option::is_some).collect()
    }
}

pub fn figure5_fixture() -> Figure5 {
    let one = |text: &str| {
        let mut ds = parse_csv(text).expect("embedded fixture parses");
        assert_eq!(ds.surfaces.len(), 1, "fixture holds one surface");
        ds.surfaces.remove(0)
    };
    Figure5 {
        full: one(FIGURE5_FULL),
        sparse: one(FIGURE5_SPARSE),
    }
}

/// The fixture as CSV text, exactly as embedded.
pub fn figure5_csv() -> (&'static str, &'static str) {
    (FIGURE5_FULL, FIGURE5_SPARSE)
}

pub fn parse_csv(text: &str) -> Result<SurfaceDataset> {
    let mut surfaces = Vec::new();
    let mut seen_header = false;
    let mut block: Vec<Option<[Option<f64>; N_TENORS]>> = vec![None; N_RATINGS];
    let mut rows_in_block = 0usize;
    let mut block_start = 0usize;
    let mut pending_date: Option<NaiveDate> = None;

    let parse_err = |line: usize, column: Option<&str>, message: String| Error::Parse {
        line,
        column: column.map(str::to_string),
        message,
    };

    let finish = |block: &mut Vec<Option<[Option<f64>; N_TENORS]>>,
                  rows: &mut usize,
                  date: &mut Option<NaiveDate>,
                  start: usize,
                  surfaces: &mut Vec<YieldSurface>|
     -> Result<()> {
        if *rows == 0 {
            return Ok(());
        }
        if *rows != N_RATINGS {
            let missing: Vec<&str> = Rating::ALL
                .iter()
                .filter(|r| block[r.index()].is_none())
                .map(|r| r.label())
                .collect();
            return Err(parse_err(
                start,
                None,
                format!("block has {rows} rating rows, missing {}", missing.join(" ")),
            ));
        }
        let cells: Vec<Option<f64>> = block.iter().flat_map(|r| r.expect("all rows present")).collect();
        surfaces.push(YieldSurface::new(cells)?.with_date(date.take()));
        block.iter_mut().for_each(|r| *r = None);
        *rows = 0;
        Ok(())
    };

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            finish(
                &mut block,
                &mut rows_in_block,
                &mut pending_date,
                block_start,
                &mut surfaces,
            )?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(d) = comment.trim().strip_prefix("date=") {
                finish(
                    &mut block,
                    &mut rows_in_block,
                    &mut pending_date,
                    block_start,
                    &mut surfaces,
                )?;
                let date = NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d")
                    .map_err(|e| parse_err(line_no, None, format!("bad date {d:?}: {e}")))?;
                pending_date = Some(date);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields[0] == "rating" {
            let expected: Vec<&str> = CSV_HEADER.split(',').collect();
            if fields != expected {
                return Err(parse_err(
                    line_no,
                    None,
                    format!("malformed header, expected `{CSV_HEADER}`"),
                ));
            }
            if rows_in_block != 0 {
                return Err(parse_err(line_no, None, "header inside a surface block".into()));
            }
            seen_header = true;
            continue;
        }
        if !seen_header {
            return Err(parse_err(
                line_no,
                None,
                format!("missing header, expected `{CSV_HEADER}`"),
            ));
        }
        if fields.len() != N_TENORS + 1 {
            return Err(parse_err(
                line_no,
                None,
                format!("expected {} fields, found {}", N_TENORS + 1, fields.len()),
            ));
        }
        let rating = Rating::from_label(fields[0])
            .ok_or_else(|| parse_err(line_no, Some("rating"), format!("unknown rating {:?}", fields[0])))?;
        if block[rating.index()].is_some() {
            return Err(parse_err(
                line_no,
                Some("rating"),
                format!("duplicate row for {rating}"),
            ));
        }
        let mut row = [None; N_TENORS];
        for (c, field) in fields[1..].iter().enumerate() {
            if field.is_empty() {
                continue;
            }
            let column = Some(TENOR_LABELS[c]);
            let v: f64 = field.parse().map_err(|_| {
                parse_err(
                    line_no,
                    column,
                    format!("{rating} {}: not a number: {field:?}", TENOR_LABELS[c]),
                )
            })?;
            if !(v.is_finite() && v > 0.0) {
                return Err(parse_err(
                    line_no,
                    column,
                    format!("{rating} {}: yield must be positive, got {v}", TENOR_LABELS[c]),
                ));
            }
            row[c] = Some(v);
        }
        if rows_in_block == 0 {
            block_start = line_no;
        }
        block[rating.index()] = Some(row);
        rows_in_block += 1;
    }
    finish(
        &mut block,
        &mut rows_in_block,
        &mut pending_date,
        block_start,
        &mut surfaces,
    )?;
    if !seen_header {
        return Err(parse_err(1, None, format!("missing header, expected `{CSV_HEADER}`")));
    }
    SurfaceDataset::new(surfaces, DataSource::Csv)
}

pub fn to_csv_string(dataset: &SurfaceDataset) -> String {
    let mut out = String::with_capacity(64 + dataset.len() * 1400);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (i, s) in dataset.surfaces.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        if let Some(d) = s.date() {
            let _ = writeln!(out, "# date={}", d.format("%Y-%m-%d"));
        }
        for rating in Rating::ALL {
            out.push_str(rating.label());
            for c in 0..N_TENORS {
                out.push(',');
                if let Some(v) = s.get(rating.index(), c) {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<SurfaceDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

pub fn save_csv(dataset: &SurfaceDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv_string(dataset)).map_err(|e| Error::io(path, e))
}

/// Nelson-Siegel yield at tenor `t` years.
pub fn nelson_siegel(t: f64, level: f64, slope: f64, curvature: f64, decay: f64) -> f64 {
    let x = t / decay;
    let loading = if x.abs() < 1e-12 {
        1.0 - x / 2.0
    } else {
        (1.0 - (-x).exp()) / x
    };
    level + slope * loading + curvature * (loading - (-x).exp())
}

/// Synthetic surfaces: a Nelson-Siegel base curve plus a rating spread that
/// widens with tenor, with parameters drifting from date to date.
///
/// Each parameter starts uniformly inside its range and then takes Gaussian
/// steps of `drift_sigma` times the range width, reflected back into the range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_observations: usize,
    pub level: (f64, f64),
    pub slope: (f64, f64),
    pub curvature: (f64, f64),
    pub decay: (f64, f64),
    /// Spread added per rating notch at the short end, in percent.
    pub spread_step: (f64, f64),
    /// Spread growth: the notch spread is multiplied by `1 + spread_slope * t / 30`.
    pub spread_slope: (f64, f64),
    pub drift_sigma: f64,
    /// Standard deviation of i.i.d. cell noise, in percent.
    pub noise_sigma: f64,
    pub seed: u64,
    pub start_date: Option<NaiveDate>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_observations: 63,
            level: (3.8, 4.2),
            slope: (-2.2, -1.8),
            curvature: (-1.0, 0.0),
            decay: (1.5, 2.5),
            spread_step: (0.07, 0.095),
            spread_slope: (2.6, 3.4),
            drift_sigma: 0.05,
            noise_sigma: 0.01,
            seed: 7,
            start_date: NaiveDate::from_ymd_opt(2018, 1, 29),
        }
    }
}

impl SyntheticConfig {
    fn ranges(&self) -> [(&'static str, (f64, f64)); 6] {
        [
            ("level", self.level),
            ("slope", self.slope),
            ("curvature", self.curvature),
            ("decay", self.decay),
            ("spread_step", self.spread_step),
            ("spread_slope", self.spread_slope),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_observations == 0 {
            return Err(Error::Config("n_observations must be positive".into()));
        }
        for (name, (lo, hi)) in self.ranges() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if self.decay.0 <= 0.0 {
            return Err(Error::Config("decay must be positive".into()));
        }
        if !(self.drift_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Config("sigmas must be nonnegative".into()));
        }
        Ok(())
    }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let w = hi - lo;
    let mut u = (v - lo).rem_euclid(2.0 * w);
    if u > w {
        u = 2.0 * w - u;
    }
    lo + u
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SurfaceDataset> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let ranges = cfg.ranges();
    let mut state: Vec<f64> = ranges
        .iter()
        .map(|(_, (lo, hi))| if hi > lo { rng.gen_range(*lo..*hi) } else { *lo })
        .collect();
    let dates = cfg.start_date.map(|d| business_days(d, cfg.n_observations));
    let mut surfaces = Vec::with_capacity(cfg.n_observations);
    for day in 0..cfg.n_observations {
        if day > 0 {
            for (v, (_, (lo, hi))) in state.iter_mut().zip(&ranges) {
                let z: f64 = rng.sample(StandardNormal);
                *v = reflect(*v + cfg.drift_sigma * (hi - lo) * z, *lo, *hi);
            }
        }
        let [level, slope, curvature, decay, step, spread_slope] =
            <[f64; 6]>::try_from(state.as_slice()).expect("six parameters");
        let mut values = Vec::with_capacity(N_CELLS);
        for rating in Rating::ALL {
            let notches = (rating.ordinal() - 1) as f64;
            for &t in &TENOR_YEARS {
                let base = nelson_siegel(t, level, slope, curvature, decay);
                let spread = step * notches * (1.0 + spread_slope * t / 30.0);
                let noise: f64 = if cfg.noise_sigma > 0.0 {
                    cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                let y = base + spread + noise;
                if !(y.is_finite() && y > 0.0) {
                    return Err(Error::Config(format!(
                        "parameters produce a nonpositive yield {y:.4} at {rating} {t}y on day {day}"
                    )));
                }
                values.push(y);
            }
        }
        let surface =
            YieldSurface::new(values.into_iter().map(Some).collect())?.with_date(dates.as_ref().map(|d| d[day]));
        surfaces.push(surface);
    }
    SurfaceDataset::new(surfaces, DataSource::Synthetic)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(test_fraction: f64, seed: u64) -> Result<Self> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::Argument(format!(
                "test fraction must lie in (0, 1), got {test_fraction}"
            )));
        }
        Ok(SplitSpec { test_fraction, seed })
    }

    /// Number of held-out observations: `ceil(test_fraction * n)`, at least 1
    /// and leaving at least one training observation.
    ///
    /// Ceiling is what makes 10% of 63 observations come out as 7, which at 10
    /// corrupted copies each gives 70 test examples.
    pub fn test_count(&self, n: usize) -> usize {
        let raw = (self.test_fraction * n as f64 - 1e-9).ceil() as usize;
        raw.clamp(1, n.saturating_sub(1).max(1))
    }
}

/// A random train/test partition. Both parts keep the original date order.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: SurfaceDataset,
    pub test: SurfaceDataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

pub fn split(dataset: &SurfaceDataset, spec: &SplitSpec) -> Result<Split> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 observations to split, got {n}"
        )));
    }
    SplitSpec::new(spec.test_fraction, spec.seed)?;
    let k = spec.test_count(n);
    let mut rng = stream_rng(spec.seed, 0);
    let mut test_indices = index::sample(&mut rng, n, k).into_vec();
    test_indices.sort_unstable();
    let mut is_test = vec![false; n];
    for &i in &test_indices {
        is_test[i] = true;
    }
    let train_indices: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    let pick = |idx: &[usize]| SurfaceDataset {
        surfaces: idx.iter().map(|&i| dataset.surfaces[i].clone()).collect(),
        source: dataset.source,
    };
    Ok(Split {
        train: pick(&train_indices),
        test: pick(&test_indices),
        train_indices,
        test_indices,
    })
}
