//! Deterministic synthetic accuracy oracle.
//!
//! Each architecture gets a capacity in `[0, 1]` from its depth, shortcut
//! count, channel widths and the spatial resolution reaching the output
//! under the profile's input shape. Capacity sets the final accuracy between
//! chance and a difficulty-dependent ceiling; the accuracy curve saturates
//! within each learning-rate phase and steps up after every drop. All noise
//! is derived from the architecture hash, so results are identical across
//! runs and platforms.

use serde::{Deserialize, Serialize};

use super::{Result, StoreError};
use crate::search_space::{ArchSpec, HashId};
use crate::seed::{mix64, unit_f64};
use crate::shapes::{infer_shapes, TensorShape};

/// Epoch count of the reference training schedule.
pub const DEFAULT_TOTAL_EPOCHS: u32 = 120;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    pub input_shape: TensorShape,
    pub num_classes: u32,
    /// In `(0, 1]`; only the oracle reads it.
    pub difficulty: f64,
    /// Epochs after which the learning rate drops.
    pub lr_drops: Vec<u32>,
}

impl DatasetProfile {
    pub const BUILTIN: [&'static str; 4] = ["fashion-mnist", "cifar10", "cifar100", "tiny"];

    pub fn builtin(name: &str) -> Option<Self> {
        let (shape, classes, difficulty) = match name {
            "fashion-mnist" => ((1, 28, 28), 10, 0.1),
            "cifar10" => ((3, 32, 32), 10, 0.3),
            "cifar100" => ((3, 32, 32), 100, 0.6),
            "tiny" => ((3, 64, 64), 200, 0.8),
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            input_shape: TensorShape::new(shape.0, shape.1, shape.2).expect("valid shape"),
            num_classes: classes,
            difficulty,
            lr_drops: vec![40, 80],
        })
    }

    pub fn all_builtin() -> Vec<Self> {
        Self::BUILTIN
            .iter()
            .map(|n| Self::builtin(n).expect("builtin"))
            .collect()
    }

    pub fn chance(&self) -> f64 {
        1.0 / self.num_classes as f64
    }

    pub fn ceiling(&self) -> f64 {
        0.99 - 0.5 * self.difficulty
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.difficulty > 0.0 && self.difficulty <= 1.0) {
            return Err(StoreError::InvalidArgument(format!(
                "difficulty {} outside (0, 1]",
                self.difficulty
            )));
        }
        if self.num_classes < 2 {
            return Err(StoreError::InvalidArgument("need at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Structural quantities the oracle scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityFeatures {
    /// Convolutions on the longest input-to-output path.
    pub depth: usize,
    /// Edges beyond those of a simple chain over the same nodes.
    pub shortcuts: usize,
    /// Mean `log2` channel count over convolution nodes.
    pub mean_log_channels: f64,
    /// Smallest spatial size entering the output node.
    pub final_resolution: usize,
    /// Mean over convolution nodes of `min(1, log2(H) / 3)`: the share of
    /// layers still working at 8x8 or more.
    pub resolution_budget: f64,
    pub conv_nodes: usize,
}

impl CapacityFeatures {
    pub fn of(spec: &ArchSpec, input: TensorShape) -> Result<Self> {
        let vs = infer_shapes(spec, input)?;
        let adj = spec.adjacency();
        let n = spec.len();
        let depth = adj.longest_path_from_source()[n - 1].saturating_sub(1);
        let shortcuts = adj.edge_count().saturating_sub(n - 1);
        let conv_nodes = n - 2;
        let mean_log_channels = if conv_nodes == 0 {
            0.0
        } else {
            vs.shapes[1..n - 1]
                .iter()
                .map(|s| (s.channels as f64).log2())
                .sum::<f64>()
                / conv_nodes as f64
        };
        let resolution_budget = if conv_nodes == 0 {
            0.0
        } else {
            vs.shapes[1..n - 1]
                .iter()
                .map(|s| ((s.height.min(s.width) as f64).log2() / 3.0).min(1.0))
                .sum::<f64>()
                / conv_nodes as f64
        };
        let final_resolution = adj
            .predecessors(n - 1)
            .map(|p| vs.shapes[p].height.min(vs.shapes[p].width))
            .min()
            .unwrap_or(input.height.min(input.width));
        Ok(Self {
            depth,
            shortcuts,
            mean_log_channels,
            final_resolution,
            resolution_budget,
            conv_nodes,
        })
    }

    /// Weighted capacity in `[0, 1]`; zero without convolutions.
    pub fn capacity(&self, difficulty: f64) -> f64 {
        if self.conv_nodes == 0 {
            return 0.0;
        }
        let f_depth = 1.0 - (-(self.depth as f64) / 5.0).exp();
        let f_width = ((self.mean_log_channels - 4.0) / 6.0).clamp(0.0, 1.0);
        let f_short = 1.0 - (-(self.shortcuts as f64) / 8.0).exp();
        let z = ((self.final_resolution as f64).log2() - 2.5) / 1.5;
        let f_res = 0.5 * (-z * z).exp() + 0.5 * self.resolution_budget;
        let weights = [0.30, 0.15 + 0.25 * difficulty, 0.15, 0.30 - 0.10 * difficulty];
        let terms = [f_depth, f_width, f_short, f_res];
        let total: f64 = weights.iter().sum();
        weights.iter().zip(terms).map(|(w, f)| w * f).sum::<f64>() / total
    }
}

fn hashed_unit(hash: &HashId, stream: &str, index: u64) -> f64 {
    let mut z = hash.prefix_u64();
    for b in stream.bytes() {
        z = mix64(z ^ b as u64);
    }
    unit_f64(mix64(z ^ mix64(index)))
}

/// Per-architecture oracle state for one profile; evaluating it is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCurve {
    chance: f64,
    final_acc: f64,
    capacity: f64,
    plateau: f64,
    rate: f64,
    drops: Vec<u32>,
    total_epochs: u32,
    hash: HashId,
    jitter_stream: String,
}

impl OracleCurve {
    pub fn new(spec: &ArchSpec, profile: &DatasetProfile, total_epochs: u32) -> Result<Self> {
        profile.validate()?;
        if total_epochs == 0 {
            return Err(StoreError::InvalidArgument("total epochs must be positive".into()));
        }
        let hash = spec.hash();
        let feats = CapacityFeatures::of(spec, profile.input_shape)?;
        let cap = feats.capacity(profile.difficulty);
        let chance = profile.chance();
        let span = profile.ceiling() - chance;
        let shared = hashed_unit(&hash, "oracle/shared", 0) - 0.5;
        let own = hashed_unit(&hash, &format!("oracle/{}", profile.name), 0) - 0.5;
        let noise = 0.12 * span * cap * (1.0 - cap) * (shared + own);
        let final_acc = chance + span * cap.powf(0.8) + noise;
        let speed = 0.6 * cap + 0.4 * hashed_unit(&hash, "oracle/speed", 0);
        let drops = profile
            .lr_drops
            .iter()
            .copied()
            .filter(|&d| d > 0 && d < total_epochs)
            .collect();
        Ok(Self {
            chance,
            final_acc,
            capacity: cap,
            plateau: 0.72 + 0.2 * speed,
            rate: 0.04 + 0.08 * speed,
            drops,
            total_epochs,
            hash,
            jitter_stream: format!("oracle/{}/epoch", profile.name),
        })
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    /// Fraction of the final gain reached at `epoch`.
    fn progress(&self, epoch: u32) -> f64 {
        let m = self.drops.len();
        let mut bounds = Vec::with_capacity(m + 2);
        bounds.push(0);
        bounds.extend(&self.drops);
        bounds.push(self.total_epochs);
        let level = |j: usize| -> f64 {
            if j == 0 {
                0.0
            } else if j == m + 1 {
                1.0
            } else {
                1.0 - (1.0 - self.plateau) * (m + 1 - j) as f64 / m as f64
            }
        };
        for j in 1..bounds.len() {
            let (lo, hi) = (bounds[j - 1], bounds[j]);
            if epoch <= hi {
                let rate = if j == 1 { self.rate } else { 0.25 };
                let t = (epoch - lo) as f64;
                let frac = (1.0 - (-rate * t).exp()) / (1.0 - (-rate * (hi - lo) as f64).exp());
                return level(j - 1) + (level(j) - level(j - 1)) * frac;
            }
        }
        1.0
    }

    pub fn accuracy(&self, epoch: u32) -> Result<f64> {
        if epoch == 0 || epoch > self.total_epochs {
            return Err(StoreError::InvalidArgument(format!(
                "epoch {epoch} outside 1..={}",
                self.total_epochs
            )));
        }
        let jitter = 0.01
            * self.capacity
            * (1.0 - self.capacity)
            * (hashed_unit(&self.hash, &self.jitter_stream, epoch as u64) - 0.5);
        let acc = self.chance + (self.final_acc - self.chance) * self.progress(epoch) + jitter;
        Ok(acc.clamp(self.chance, 0.999))
    }

    /// Accuracies for epochs `1..=total_epochs`.
    pub fn series(&self) -> Vec<f64> {
        (1..=self.total_epochs)
            .map(|e| self.accuracy(e).expect("epoch in range"))
            .collect()
    }
}

/// Synthetic validation accuracy of `spec` on `profile` after `epoch` of
/// `total_epochs` epochs.
pub fn synthetic_accuracy(
    spec: &ArchSpec,
    profile: &DatasetProfile,
    epoch: u32,
    total_epochs: u32,
) -> Result<f64> {
    OracleCurve::new(spec, profile, total_epochs)?.accuracy(epoch)
}
