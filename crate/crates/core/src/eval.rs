//! Error metrics and the three-method comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::AugmentedDataset;
use crate::dae::{reconstruct_all, TrainedModel};
use crate::error::{Error, Result};
use crate::surface::{monotonicity_report, MaskedSurface, ScalingTransform, YieldSurface, N_RATINGS, N_TENORS};
use crate::tps::{complete_surface, DEFAULT_FOLDS, DEFAULT_LAMBDA_GRID};

/// Adjacent-rating comparisons in one surface.
pub const RATING_COMPARISONS: usize = (N_RATINGS - 1) * N_TENORS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae_bps: f64,
    pub rmse_bps: f64,
    /// Mean over cells of `|pred - true| / true`, in percent.
    pub mae_pct: f64,
    pub rmse_pct: f64,
    pub n_points: usize,
    /// Mean over predictions of the rating-and-tenor violation rate.
    pub monotonicity_violation_rate: f64,
    /// Pooled share of adjacent-rating comparisons that decrease.
    pub rating_violation_rate: f64,
}

/// Pools errors over every cell of every pair. Inputs are in percent.
pub fn compute_metrics(predictions: &[YieldSurface], targets: &[YieldSurface]) -> Result<MetricsReport> {
    if predictions.len() != targets.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    let (mut abs, mut sq, mut rel, mut rel_sq, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    let mut mono = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        let pv = p.values()?;
        let tv = t.values()?;
        for (a, b) in pv.iter().zip(&tv) {
            let e = (a - b).abs();
            abs += e;
            sq += e * e;
            rel += e / b;
            rel_sq += (e / b) * (e / b);
            n += 1;
        }
        mono += monotonicity_report(p)?.violation_rate;
    }
    let nf = n as f64;
    Ok(MetricsReport {
        mae_bps: abs / nf * 100.0,
        rmse_bps: (sq / nf).sqrt() * 100.0,
        mae_pct: rel / nf * 100.0,
        rmse_pct: (rel_sq / nf).sqrt() * 100.0,
        n_points: n,
        monotonicity_violation_rate: mono / predictions.len() as f64,
        rating_violation_rate: violation_rate(predictions)?,
    })
}

/// Fraction of adjacent-rating comparisons `y(r + 1, t) < y(r, t)`, pooled
/// over all predictions.
pub fn violation_rate(predictions: &[YieldSurface]) -> Result<f64> {
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let mut count = 0usize;
    for p in predictions {
        count += monotonicity_report(p)?.rating_violations.len();
    }
    Ok(count as f64 / (predictions.len() * RATING_COMPARISONS) as f64)
}

/// Spline settings for the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpsConfig {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
}

impl Default for TpsConfig {
    fn default() -> Self {
        TpsConfig {
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            folds: DEFAULT_FOLDS,
        }
    }
}

/// A test example a method could not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub example: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    /// `None` when every example was excluded.
    pub metrics: Option<MetricsReport>,
    pub evaluated: usize,
    pub excluded: Vec<Exclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub nu: f64,
    pub n_examples: usize,
    pub tps: Option<MethodResult>,
    pub fcnn: Option<MethodResult>,
    pub cnn: Option<MethodResult>,
    /// Short hashes of each method's configuration.
    pub fingerprints: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
}

impl ComparisonReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        match name {
            "tps" => self.tps.as_ref(),
            "fcnn" => self.fcnn.as_ref(),
            "cnn" => self.cnn.as_ref(),
            _ => None,
        }
    }

    /// Number of populated cells in the 4 x 3 table.
    pub fn populated_cells(&self) -> usize {
        [&self.tps, &self.fcnn, &self.cnn]
            .iter()
            .filter(|m| m.as_ref().is_some_and(|m| m.metrics.is_some()))
            .count()
            * 4
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// Aligned text table: rows MAE/RMSE in bps and percent, one column per method.
    pub fn to_text(&self) -> String {
        let cols = [("TPS", &self.tps), ("FCNN", &self.fcnn), ("CNN", &self.cnn)];
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Test set performance, nu = {} ({} examples)",
            self.nu, self.n_examples
        );
        let _ = write!(out, "{:<10}", "");
        for (name, _) in &cols {
            let _ = write!(out, "{name:>10}");
        }
        out.push('\n');
        type Row = (&'static str, fn(&MetricsReport) -> f64);
        let rows: [Row; 4] = [
            ("MAE bps", |m| m.mae_bps),
            ("MAE %", |m| m.mae_pct),
            ("RMSE bps", |m| m.rmse_bps),
            ("RMSE %", |m| m.rmse_pct),
        ];
        for (label, get) in rows {
            let _ = write!(out, "{label:<10}");
            for (_, m) in &cols {
                match m.as_ref().and_then(|m| m.metrics.as_ref()) {
                    Some(r) => {
                        let _ = write!(out, "{:>10.2}", get(r));
                    }
                    None => {
                        let _ = write!(out, "{:>10}", "-");
                    }
                }
            }
            out.push('\n');
        }
        for (name, m) in &cols {
            if let Some(m) = m {
                if let Some(r) = &m.metrics {
                    let _ = writeln!(
                        out,
                        "{name}: rating violations {:.4}, all violations {:.4}",
                        r.rating_violation_rate, r.monotonicity_violation_rate
                    );
                }
                if !m.excluded.is_empty() {
                    let _ = writeln!(
                        out,
                        "{name}: {} of {} examples excluded",
                        m.excluded.len(),
                        self.n_examples
                    );
                }
            }
        }
        out
    }
}

/// Short stable hash of a serialisable value.
pub fn fingerprint(value: &impl Serialize) -> String {
    let text = serde_json::to_string(value).expect("config serialises");
    format!("{:016x}", crate::seeds::derive_seed(0, &text))
}

fn score(predictions: Vec<(usize, Result<YieldSurface>)>, targets: &[YieldSurface]) -> Result<MethodResult> {
    let mut kept_p = Vec::new();
    let mut kept_t = Vec::new();
    let mut excluded = Vec::new();
    for (i, p) in predictions {
        match p {
            Ok(p) => {
                kept_p.push(p);
                kept_t.push(targets[i].clone());
            }
            Err(e @ (Error::Geometry(_) | Error::Singular { .. })) => excluded.push(Exclusion {
                example: i,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(MethodResult {
        metrics: if kept_p.is_empty() {
            None
        } else {
            Some(compute_metrics(&kept_p, &kept_t)?)
        },
        evaluated: kept_p.len(),
        excluded,
    })
}

/// Completes each scaled masked input with a spline and returns percent yields.
pub fn tps_complete_all(
    inputs: &[&MaskedSurface],
    scaling: ScalingTransform,
    cfg: &TpsConfig,
) -> Vec<Result<YieldSurface>> {
    inputs
        .par_iter()
        .map(|m| complete_surface(m, &cfg.lambda_grid, cfg.folds).map(|s| scaling.unscale(&s)))
        .collect()
}

fn rescaled(inputs: &[&MaskedSurface], from: ScalingTransform, to: ScalingTransform) -> Result<Vec<MaskedSurface>> {
    let ratio = from.factor() / to.factor();
    inputs
        .iter()
        .map(|m| {
            let values: Vec<Option<f64>> = m
                .values()
                .iter()
                .zip(m.observed())
                .map(|(v, &o)| o.then_some(v * ratio))
                .collect();
            Ok(MaskedSurface::from_partial(&YieldSurface::new(values)?))
        })
        .collect()
}

/// Reconstructions in percent from a trained model, given inputs scaled by `scaling`.
pub fn model_complete_all(
    model: &TrainedModel,
    inputs: &[&MaskedSurface],
    scaling: ScalingTransform,
) -> Result<Vec<YieldSurface>> {
    if model.scaling == scaling {
        reconstruct_all(model, inputs)
    } else {
        let own = rescaled(inputs, scaling, model.scaling)?;
        reconstruct_all(model, &own.iter().collect::<Vec<_>>())
    }
}

/// Runs every supplied method on the same test examples (scaled by `scaling`)
/// and scores against the clean targets in percent.
///
/// Spline fits that fail on an example's geometry are listed under
/// `excluded` for that method and left out of its metrics.
pub fn run_comparison(
    test: &AugmentedDataset,
    scaling: ScalingTransform,
    nu: f64,
    tps: Option<&TpsConfig>,
    fcnn: Option<&TrainedModel>,
    cnn: Option<&TrainedModel>,
) -> Result<ComparisonReport> {
    if test.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    let inputs: Vec<&MaskedSurface> = test.examples.iter().map(|e| &e.input).collect();
    let targets: Vec<YieldSurface> = test.examples.iter().map(|e| scaling.unscale(&e.target)).collect();
    let mut fingerprints = BTreeMap::new();
    let mut seeds = BTreeMap::new();

    let tps_result = match tps {
        Some(cfg) => {
            fingerprints.insert("tps".into(), fingerprint(cfg));
            let preds = tps_complete_all(&inputs, scaling, cfg)
                .into_iter()
                .enumerate()
                .collect();
            Some(score(preds, &targets)?)
        }
        None => None,
    };
    let mut model_result = |name: &str, model: Option<&TrainedModel>| -> Result<Option<MethodResult>> {
        let Some(model) = model else { return Ok(None) };
        fingerprints.insert(name.into(), fingerprint(&model.config));
        seeds.insert(name.into(), model.config.train_settings().seed);
        let preds = model_complete_all(model, &inputs, scaling)?;
        Ok(Some(score(preds.into_iter().map(Ok).enumerate().collect(), &targets)?))
    };
    let fcnn_result = model_result("fcnn", fcnn)?;
    let cnn_result = model_result("cnn", cnn)?;
    Ok(ComparisonReport {
        nu,
        n_examples: test.len(),
        tps: tps_result,
        fcnn: fcnn_result,
        cnn: cnn_result,
        fingerprints,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::{augment, CorruptionSpec};
    use crate::data::figure5_fixture;
    use crate::surface::N_CELLS;
    use proptest::prelude::*;

    fn flat(v: f64) -> YieldSurface {
        YieldSurface::from_estimates(vec![v; N_CELLS]).unwrap()
    }

    fn ramp(offset: f64) -> YieldSurface {
        YieldSurface::from_estimates((0..N_CELLS).map(|i| 1.0 + 0.01 * i as f64 + offset).collect()).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let t = vec![ramp(0.0), ramp(0.5)];
        let m = compute_metrics(&t, &t).unwrap();
        assert_eq!((m.mae_bps, m.rmse_bps, m.mae_pct, m.rmse_pct), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(m.n_points, 390);
        assert_eq!(m.rating_violation_rate, 0.0);
    }

    #[test]
    fn constant_error_is_ten_bps() {
        let m = compute_metrics(&[ramp(0.1)], &[ramp(0.0)]).unwrap();
        assert!((m.mae_bps - 10.0).abs() < 1e-9);
        assert!((m.rmse_bps - 10.0).abs() < 1e-9);
    }

    #[test]
    fn single_cell_error() {
        let mut p = vec![3.0; N_CELLS];
        p[0] = 3.11;
        let m = compute_metrics(&[YieldSurface::from_estimates(p).unwrap()], &[flat(3.0)]).unwrap();
        assert!((m.mae_bps * N_CELLS as f64 - 11.0).abs() < 1e-9);
        assert!((m.mae_pct * N_CELLS as f64 - 11.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn bps_equals_percent_at_one_percent_yields() {
        let p: Vec<f64> = (0..N_CELLS).map(|i| 1.0 + 0.002 * (i % 7) as f64 - 0.005).collect();
        let m2 = compute_metrics(&[YieldSurface::from_estimates(p).unwrap()], &[flat(1.0)]).unwrap();
        assert!((m2.mae_bps - m2.mae_pct).abs() < 1e-9);
        assert!((m2.rmse_bps - m2.rmse_pct).abs() < 1e-9);
    }

    #[test]
    fn mismatched_counts() {
        assert!(matches!(compute_metrics(&[flat(1.0)], &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn one_swapped_pair() {
        let mut v: Vec<f64> = (0..N_CELLS).map(|i| 1.0 + (i / N_TENORS) as f64).collect();
        v.swap(3, N_TENORS + 3);
        let s = YieldSurface::from_estimates(v).unwrap();
        assert_eq!(violation_rate(std::slice::from_ref(&s)).unwrap(), 1.0 / 180.0);
        let ok = YieldSurface::from_estimates((0..N_CELLS).map(|i| 1.0 + (i / N_TENORS) as f64).collect()).unwrap();
        assert_eq!(violation_rate(&[ok.clone(), s]).unwrap(), 1.0 / 360.0);
        assert_eq!(violation_rate(&[ok]).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae_and_order_does_not_matter(errs in prop::collection::vec(-0.5f64..0.5, 3)) {
            let targets: Vec<YieldSurface> = (0..3).map(|k| ramp(k as f64)).collect();
            let preds: Vec<YieldSurface> = targets
                .iter()
                .zip(&errs)
                .map(|(t, e)| YieldSurface::from_estimates(t.values().unwrap().iter().enumerate().map(|(i, v)| v + e * (i % 3) as f64).collect()).unwrap())
                .collect();
            let m = compute_metrics(&preds, &targets).unwrap();
            prop_assert!(m.rmse_bps + 1e-12 >= m.mae_bps);
            prop_assert!(m.rmse_pct + 1e-12 >= m.mae_pct);
            let rp: Vec<_> = preds.iter().rev().cloned().collect();
            let rt: Vec<_> = targets.iter().rev().cloned().collect();
            let r = compute_metrics(&rp, &rt).unwrap();
            prop_assert!((r.mae_bps - m.mae_bps).abs() < 1e-9);
            prop_assert!((r.rmse_bps - m.rmse_bps).abs() < 1e-9);
        }
    }

    fn fixture_test_set(nu: f64) -> (AugmentedDataset, ScalingTransform) {
        let full = figure5_fixture().full;
        let scaling = ScalingTransform::fit([&full]).unwrap();
        let set = augment(&[scaling.scale(&full)], &CorruptionSpec::new(nu, 3).unwrap(), 3).unwrap();
        (set, scaling)
    }

    #[test]
    fn interpolating_spline_is_exact_without_corruption() {
        let (set, scaling) = fixture_test_set(0.0);
        let cfg = TpsConfig {
            lambda_grid: vec![0.0],
            folds: 5,
        };
        let r = run_comparison(&set, scaling, 0.0, Some(&cfg), None, None).unwrap();
        let m = r.tps.as_ref().unwrap().metrics.unwrap();
        assert!(m.mae_bps <= 0.01, "{}", m.mae_bps);
        assert_eq!(r.populated_cells(), 4);
        assert!(r.to_text().contains("MAE bps"));
    }

    #[test]
    fn exclusions_are_counted() {
        let (mut set, scaling) = fixture_test_set(0.5);
        let full = set.examples[0].target.clone();
        let mut pattern = vec![false; N_CELLS];
        pattern[0] = true;
        pattern[1] = true;
        set.examples[1].input = MaskedSurface::from_pattern(&full, &pattern).unwrap();
        let r = run_comparison(&set, scaling, 0.5, Some(&TpsConfig::default()), None, None).unwrap();
        let tps = r.tps.unwrap();
        assert_eq!(tps.excluded.len(), 1);
        assert_eq!(tps.excluded[0].example, 1);
        assert_eq!(tps.evaluated + tps.excluded.len(), set.len());
    }

    #[test]
    fn text_table_layout() {
        let (set, scaling) = fixture_test_set(0.5);
        let r = run_comparison(&set, scaling, 0.5, Some(&TpsConfig::default()), None, None).unwrap();
        let text = r.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].contains("TPS") && lines[1].contains("FCNN") && lines[1].contains("CNN"));
        assert_eq!(lines[2].split_whitespace().count(), 5);
        assert!(lines[2].ends_with('-'));
        let back: ComparisonReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn same_predictions_score_the_same_in_either_column() {
        let (set, scaling) = fixture_test_set(0.75);
        let cfg = crate::dae::ModelConfig::Cnn(crate::dae::CnnConfig {
            conv_blocks: 1,
            filters_per_block: vec![2],
            ..Default::default()
        });
        let model = crate::pipeline::untrained(&cfg, scaling).unwrap();
        let r = run_comparison(&set, scaling, 0.75, None, Some(&model), Some(&model)).unwrap();
        assert_eq!(r.fcnn.as_ref().unwrap().metrics, r.cnn.as_ref().unwrap().metrics);
        assert_eq!(r.populated_cells(), 8);
    }
}
