//! Importance resampling with a per-sample copy cap.
//!
//! Draws are sequential and multinomial in the current weights. Once a
//! sample has been drawn `max_copies` times it leaves the pool and the
//! remaining weights are implicitly renormalized for the next draw. A sum
//! tree keeps each draw at O(log n).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Sample, SpecializedDataset, WeightedSample};

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResamplingConfig {
    /// Number of draws; `None` means as many as there are weighted samples.
    pub draw_count: Option<usize>,
    pub max_copies: usize,
    pub seed: u64,
}

impl Default for ResamplingConfig {
    fn default() -> Self {
        ResamplingConfig {
            draw_count: None,
            max_copies: 2,
            seed: 0,
        }
    }
}

/// Binary sum tree over non-negative leaf weights. Parent sums are always
/// recomputed from their children, so a zeroed leaf is exactly zero.
struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(weights: &[f64]) -> Self {
        let leaves = weights.len().next_power_of_two();
        let mut nodes = vec![0.0; 2 * leaves];
        nodes[leaves..leaves + weights.len()].copy_from_slice(weights);
        for i in (1..leaves).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        SumTree { leaves, nodes }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn clear(&mut self, index: usize) {
        let mut i = self.leaves + index;
        self.nodes[i] = 0.0;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `target`, never a zero leaf
    /// as long as the total is positive.
    fn find(&self, mut target: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let (left, right) = (self.nodes[2 * i], self.nodes[2 * i + 1]);
            if target < left || right <= 0.0 {
                i *= 2;
            } else {
                target -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }
}

/// Indices drawn from `weights`, in draw order.
pub fn resample_indices(
    weights: &[f64],
    draw_count: usize,
    max_copies: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut tree = SumTree::new(weights);
    let mut copies = vec![0usize; weights.len()];
    let mut drawn = Vec::with_capacity(draw_count);
    while drawn.len() < draw_count {
        let total = tree.total();
        if !(total > 0.0) {
            break;
        }
        let i = tree.find(rng.random::<f64>() * total);
        copies[i] += 1;
        if copies[i] >= max_copies {
            tree.clear(i);
        }
        drawn.push(i);
    }
    drawn
}

pub fn importance_resample(
    weighted: &[WeightedSample],
    config: &ResamplingConfig,
    iteration: usize,
) -> Result<SpecializedDataset> {
    if weighted.is_empty() {
        return Err(Error::Empty("weighted sample set"));
    }
    if config.max_copies == 0 {
        return Err(Error::Config("max_copies must be at least 1".into()));
    }
    let weights: Vec<f64> = weighted.iter().map(|w| w.weight).collect();
    if let Some(bad) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::Config(format!("invalid weight {bad}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Unnormalized(total));
    }
    let draw_count = config.draw_count.unwrap_or(weighted.len());
    let mut rng = rng::stream(config.seed, &[]);
    let samples: Vec<Sample> = resample_indices(&weights, draw_count, config.max_copies, &mut rng)
        .into_iter()
        .map(|i| weighted[i].sample.clone())
        .collect();
    if samples.len() < draw_count {
        log::info!(
            "resampling pool exhausted after {} of {draw_count} draws",
            samples.len()
        );
    }
    Ok(SpecializedDataset { iteration, samples })
}
