//! Masking corruption and the repeated-corruption augmentation protocol.
//!
//! A corrupted copy of a complete, scaled surface keeps a random subset of its
//! cells and forces the rest to zero. Exactly `floor(nu * 195)` cells are
//! dropped, chosen uniformly without replacement, so "fixed proportion" and
//! "fixed number of cells" describe the same process.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::stream_rng;
use crate::surface::{MaskedSurface, YieldSurface, N_CELLS};

pub const DEFAULT_MIN_SURVIVORS: usize = 5;
pub const DEFAULT_COPIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Proportion of cells forced to zero, in `[0, 1)`.
    pub nu: f64,
    pub seed: u64,
    pub min_survivors: usize,
}

impl CorruptionSpec {
    pub fn new(nu: f64, seed: u64) -> Result<Self> {
        let spec = CorruptionSpec {
            nu,
            seed,
            min_survivors: DEFAULT_MIN_SURVIVORS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.nu) {
            return Err(Error::Argument(format!("nu must lie in [0, 1), got {}", self.nu)));
        }
        if self.min_survivors == 0 {
            return Err(Error::Argument("min_survivors must be positive".into()));
        }
        let k = self.zeroed_cells(N_CELLS);
        if k + self.min_survivors > N_CELLS {
            return Err(Error::Argument(format!(
                "nu = {} zeroes {k} of {N_CELLS} cells, leaving fewer than {} survivors",
                self.nu, self.min_survivors
            )));
        }
        Ok(())
    }

    /// Number of cells zeroed out of `cells`: `floor(nu * cells)`.
    pub fn zeroed_cells(&self, cells: usize) -> usize {
        // nudge so products like 0.29 * 100 = 28.999999999999996 land on the intended integer
        (self.nu * cells as f64 + 1e-9).floor() as usize
    }
}

/// Zeroes `floor(nu * 195)` uniformly chosen cells of a complete scaled surface.
///
/// The choice is a pure function of `(spec.seed, stream_id)`.
pub fn corrupt(surface: &YieldSurface, spec: &CorruptionSpec, stream_id: u64) -> Result<MaskedSurface> {
    spec.validate()?;
    if !surface.is_complete() {
        return Err(Error::Argument("corruption needs a complete surface".into()));
    }
    let k = spec.zeroed_cells(N_CELLS);
    let mut observed = vec![true; N_CELLS];
    let mut rng = stream_rng(spec.seed, stream_id);
    for i in index::sample(&mut rng, N_CELLS, k) {
        observed[i] = false;
    }
    MaskedSurface::from_pattern(surface, &observed)
}

/// One training or test pair: a corrupted input and its clean target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: MaskedSurface,
    pub target: YieldSurface,
    pub observation: usize,
    pub copy: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub examples: Vec<Example>,
    pub copies_per_observation: usize,
}

impl AugmentedDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Stream identifier of copy `copy` of observation `observation`.
pub fn stream_id(observation: usize, copy: usize) -> u64 {
    ((observation as u64) << 32) | copy as u64
}

/// Repeats every surface `copies` times, each copy independently corrupted.
pub fn augment(dataset: &[YieldSurface], spec: &CorruptionSpec, copies: usize) -> Result<AugmentedDataset> {
    if copies < 1 {
        return Err(Error::Argument("copies must be at least 1".into()));
    }
    spec.validate()?;
    let mut examples = Vec::with_capacity(dataset.len() * copies);
    for (observation, surface) in dataset.iter().enumerate() {
        for copy in 0..copies {
            examples.push(Example {
                input: corrupt(surface, spec, stream_id(observation, copy))?,
                target: surface.clone(),
                observation,
                copy,
            });
        }
    }
    Ok(AugmentedDataset {
        examples,
        copies_per_observation: copies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surface() -> YieldSurface {
        YieldSurface::from_estimates((0..N_CELLS).map(|i| 0.2 + i as f64 / 400.0).collect()).unwrap()
    }

    #[test]
    fn nu_075_zeroes_146_cells() {
        let spec = CorruptionSpec::new(0.75, 11).unwrap();
        let m = corrupt(&surface(), &spec, 0).unwrap();
        assert_eq!(m.observed_count(), 49);
        assert_eq!(m.values().iter().filter(|&&v| v == 0.0).count(), 146);
    }

    #[test]
    fn nu_zero_is_identity() {
        let spec = CorruptionSpec::new(0.0, 1).unwrap();
        let s = surface();
        let m = corrupt(&s, &spec, 5).unwrap();
        assert!(m.observed().iter().all(|&o| o));
        assert_eq!(m.values(), s.values().unwrap().as_slice());
    }

    #[test]
    fn same_stream_same_mask() {
        let spec = CorruptionSpec::new(0.5, 99).unwrap();
        let a = corrupt(&surface(), &spec, 3).unwrap();
        let b = corrupt(&surface(), &spec, 3).unwrap();
        let c = corrupt(&surface(), &spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.observed(), c.observed());
    }

    #[test]
    fn survivor_bound_is_enforced() {
        assert!(CorruptionSpec::new(0.98, 0).is_err()); // 191 zeroed, 4 left
        assert!(CorruptionSpec::new(0.97, 0).is_ok()); // 189 zeroed, 6 left
        assert!(CorruptionSpec::new(1.0, 0).is_err());
        assert!(CorruptionSpec::new(-0.1, 0).is_err());
    }

    #[test]
    fn incomplete_surface_is_rejected() {
        let mut cells = vec![Some(0.5); N_CELLS];
        cells[0] = None;
        let s = YieldSurface::new(cells).unwrap();
        assert!(corrupt(&s, &CorruptionSpec::new(0.5, 0).unwrap(), 0).is_err());
    }

    #[test]
    fn augment_counts() {
        let spec = CorruptionSpec::new(0.75, 2).unwrap();
        let train = vec![surface(); 56];
        let test = vec![surface(); 7];
        assert_eq!(augment(&train, &spec, 10).unwrap().len(), 560);
        assert_eq!(augment(&test, &spec, 10).unwrap().len(), 70);
        assert!(augment(&test, &spec, 0).is_err());
    }

    #[test]
    fn augment_identity_pairs() {
        let spec = CorruptionSpec::new(0.0, 2).unwrap();
        let ds = augment(&[surface()], &spec, 1).unwrap();
        let ex = &ds.examples[0];
        assert_eq!(ex.input.values(), ex.target.values().unwrap().as_slice());
    }

    #[test]
    fn copies_get_distinct_masks() {
        let spec = CorruptionSpec::new(0.75, 2).unwrap();
        let ds = augment(&[surface(), surface()], &spec, 10).unwrap();
        for i in 0..ds.len() {
            for j in i + 1..ds.len() {
                assert_ne!(ds.examples[i].input.observed(), ds.examples[j].input.observed());
            }
        }
    }

    proptest! {
        #[test]
        fn zero_count_and_untouched_cells(nu in 0.0f64..0.97, seed in any::<u64>(), stream in any::<u64>()) {
            let spec = CorruptionSpec::new(nu, seed).unwrap();
            let s = surface();
            let m = corrupt(&s, &spec, stream).unwrap();
            let original = s.values().unwrap();
            prop_assert_eq!(N_CELLS - m.observed_count(), spec.zeroed_cells(N_CELLS));
            for ((&o, &v), orig) in m.observed().iter().zip(m.values()).zip(&original) {
                if o {
                    prop_assert_eq!(v.to_bits(), orig.to_bits());
                } else {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }
}
