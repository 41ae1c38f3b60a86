use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainError;
use crate::model::EncodedExample;

/// Examples grouped by hop count (`D_1..D_N`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComplexityDataset {
    groups: BTreeMap<usize, Vec<EncodedExample>>,
}

impl ComplexityDataset {
    pub fn from_examples(examples: impl IntoIterator<Item = EncodedExample>) -> Self {
        let mut groups: BTreeMap<usize, Vec<EncodedExample>> = BTreeMap::new();
        for ex in examples {
            groups.entry(ex.hops).or_default().push(ex);
        }
        Self { groups }
    }

    pub fn groups(&self) -> &BTreeMap<usize, Vec<EncodedExample>> {
        &self.groups
    }

    pub fn group(&self, h: usize) -> &[EncodedExample] {
        self.groups.get(&h).map_or(&[], Vec::as_slice)
    }

    /// Hop levels with at least one example, ascending.
    pub fn levels(&self) -> Vec<usize> {
        self.groups.iter().filter(|(_, v)| !v.is_empty()).map(|(&h, _)| h).collect()
    }

    pub fn max_complexity(&self) -> usize {
        self.levels().last().copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, item: IterationItem) -> &EncodedExample {
        &self.groups[&item.complexity][item.index]
    }
}

/// One entry of an iteration dataset: an example of `D_complexity`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IterationItem {
    pub complexity: usize,
    pub index: usize,
}

/// All of `D_h` for `h ≤ H` plus a uniform subsample of `⌊ρ·n(D_h)⌋`
/// examples of each `D_h` with `h > H`, shuffled.
pub fn build_iteration_dataset<E>(
    groups: &BTreeMap<usize, Vec<E>>,
    main: usize,
    rho: f64,
    rng: &mut impl Rng,
) -> Result<Vec<IterationItem>, TrainError> {
    if groups.get(&main).is_none_or(Vec::is_empty) {
        return Err(TrainError::Contract(format!("no examples at main complexity {main}")));
    }
    let mut out = Vec::new();
    for (&h, group) in groups {
        let items = (0..group.len()).map(|index| IterationItem { complexity: h, index });
        if h <= main {
            out.extend(items);
        } else {
            let k = (rho * group.len() as f64).floor() as usize;
            let picked = rand::seq::index::sample(rng, group.len(), k.min(group.len()));
            let mut picked: Vec<usize> = picked.into_iter().collect();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|index| IterationItem { complexity: h, index }));
        }
    }
    out.shuffle(rng);
    Ok(out)
}

/// `γ_low` below the main complexity, `γ_high` above it, 1 at it.
pub fn loss_weight(complexity: usize, main: usize, gamma_low: f64, gamma_high: f64) -> f64 {
    match complexity.cmp(&main) {
        std::cmp::Ordering::Less => gamma_low,
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => gamma_high,
    }
}

/// Mean of the weighted per-example losses; 0 for an empty batch.
pub fn weighted_loss(losses: &[f64], complexities: &[usize], main: usize, gamma_low: f64, gamma_high: f64) -> f64 {
    assert_eq!(losses.len(), complexities.len(), "losses and complexities must align");
    if losses.is_empty() {
        return 0.0;
    }
    let total: f64 = losses
        .iter()
        .zip(complexities)
        .map(|(&l, &c)| loss_weight(c, main, gamma_low, gamma_high) * l)
        .sum();
    total / losses.len() as f64
}
