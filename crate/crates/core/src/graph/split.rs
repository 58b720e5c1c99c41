use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GraphDataset;
use crate::error::{Error, Result};

/// Train/validation masks over the labeled nodes of a source graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    /// Set when some class had fewer than two labeled nodes and the split
    /// fell back to a global (non-stratified) shuffle.
    pub stratification_fallback: bool,
}

impl SplitMasks {
    pub fn train_count(&self) -> usize {
        self.train_mask.iter().filter(|&&m| m).count()
    }

    pub fn val_count(&self) -> usize {
        self.val_mask.iter().filter(|&&m| m).count()
    }
}

/// Train size for a group of `count >= 2` nodes: `round(fraction * count)`,
/// kept within `[1, count - 1]` so both sides are non-empty.
fn train_size(count: usize, fraction: f64) -> usize {
    ((fraction * count as f64).round() as usize).clamp(1, count - 1)
}

/// Stratified random split of the labeled nodes.
pub fn split_source(dataset: &GraphDataset, train_fraction: f64, seed: u64) -> Result<SplitMasks> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let labeled = dataset.num_labeled();
    if labeled < 2 {
        return Err(Error::InvalidDataset {
            name: dataset.name.clone(),
            reason: format!("{labeled} labeled nodes; a split needs at least 2"),
        });
    }
    let n = dataset.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, l) in dataset.labels.iter().enumerate() {
        if let Some(c) = l {
            by_class[*c].push(i);
        }
    }
    let mut masks = SplitMasks {
        train_mask: vec![false; n],
        val_mask: vec![false; n],
        stratification_fallback: false,
    };
    let stratifiable = by_class.iter().all(|nodes| nodes.is_empty() || nodes.len() >= 2);
    let groups = if stratifiable {
        by_class
    } else {
        masks.stratification_fallback = true;
        vec![by_class.concat()]
    };
    for mut nodes in groups.into_iter().filter(|g| !g.is_empty()) {
        nodes.shuffle(&mut rng);
        let cut = train_size(nodes.len(), train_fraction);
        for (pos, &node) in nodes.iter().enumerate() {
            if pos < cut {
                masks.train_mask[node] = true;
            } else {
                masks.val_mask[node] = true;
            }
        }
    }
    Ok(masks)
}
