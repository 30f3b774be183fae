//! Header freezing.
//!
//! Feature maps recorded per group at every backbone layer are reduced to a
//! per-layer variation between groups. The first layer whose variation
//! reaches `freeze_ratio * max` splits the backbone: everything before it is
//! frozen, the rest is searched.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::next_resolution;
use crate::search_space::{ArchitectureSpec, BlockChoice, SearchSpaceConfig};

pub const DEFAULT_FREEZE_RATIO: f64 = 0.5;

/// `groups[g]` holds the flattened feature vectors recorded for group `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerFeatures {
    pub groups: Vec<Vec<Vec<f64>>>,
}

/// Layers are stored zero-based; on disk and in [`FreezePlan`] they are one-based.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrace {
    pub layers: Vec<LayerFeatures>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    layer: usize,
    group: usize,
    features: Vec<f64>,
}

impl FeatureTrace {
    pub fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("trace has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.groups.len() < 2 {
                return Err(Error::InvalidConfig(format!(
                    "layer {} has {} groups, need at least 2",
                    l + 1,
                    layer.groups.len()
                )));
            }
            let mut dim = None;
            for (g, vectors) in layer.groups.iter().enumerate() {
                if vectors.is_empty() {
                    return Err(Error::InvalidConfig(format!(
                        "layer {} group {g} has no feature vectors",
                        l + 1
                    )));
                }
                for v in vectors {
                    let expected = *dim.get_or_insert(v.len());
                    if v.len() != expected {
                        return Err(Error::DimensionMismatch {
                            layer: l + 1,
                            expected,
                            got: v.len(),
                        });
                    }
                }
            }
            if dim == Some(0) {
                return Err(Error::InvalidConfig(format!(
                    "layer {} has empty vectors",
                    l + 1
                )));
            }
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let records: Vec<TraceRecord> = crate::fairness::read_jsonl(path)?;
        let n_layers = records.iter().map(|r| r.layer).max().unwrap_or(0);
        let n_groups = records.iter().map(|r| r.group + 1).max().unwrap_or(0);
        if records.iter().any(|r| r.layer == 0) {
            return Err(Error::parse(path, 0, "layer indices start at 1"));
        }
        let mut layers = vec![
            LayerFeatures {
                groups: vec![Vec::new(); n_groups]
            };
            n_layers
        ];
        for r in records {
            layers[r.layer - 1].groups[r.group].push(r.features);
        }
        let trace = FeatureTrace { layers };
        trace.check()?;
        Ok(trace)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for (l, layer) in self.layers.iter().enumerate() {
            for (g, vectors) in layer.groups.iter().enumerate() {
                for v in vectors {
                    let rec = TraceRecord {
                        layer: l + 1,
                        group: g,
                        features: v.clone(),
                    };
                    let line = serde_json::to_string(&rec).expect("trace record serializes");
                    writeln!(w, "{line}").map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Divide by the square root of the layer width.
    PerDimension,
}

fn mean(vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-layer variation between group mean feature vectors.
///
/// Two groups: Euclidean distance between the means. More groups: root of
/// the summed squared distances of group means from their grand mean.
pub fn layer_variation(trace: &FeatureTrace, normalization: Normalization) -> Result<Vec<f64>> {
    trace.check()?;
    Ok(trace
        .layers
        .iter()
        .map(|layer| {
            let means: Vec<Vec<f64>> = layer.groups.iter().map(|g| mean(g)).collect();
            let dim = means[0].len();
            let raw = if means.len() == 2 {
                sq_dist(&means[0], &means[1]).sqrt()
            } else {
                let grand = mean(&means);
                means.iter().map(|m| sq_dist(m, &grand)).sum::<f64>().sqrt()
            };
            match normalization {
                Normalization::None => raw,
                Normalization::PerDimension => raw / (dim as f64).sqrt(),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezePlan {
    pub variations: Vec<f64>,
    pub threshold: f64,
    /// One-based index of the first searchable layer.
    pub split_layer: usize,
    pub frozen_count: usize,
}

pub fn split_point(variations: &[f64], freeze_ratio: f64) -> Result<FreezePlan> {
    if variations.is_empty() {
        return Err(Error::InvalidConfig("no layer variations".into()));
    }
    if !(freeze_ratio > 0.0 && freeze_ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "freeze ratio {freeze_ratio} outside (0, 1]"
        )));
    }
    if variations.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidConfig(
            "variations must be finite and non-negative".into(),
        ));
    }
    let max = variations.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::AllZeroVariations);
    }
    let threshold = freeze_ratio * max;
    // the argmax always qualifies, so this never falls through
    let split = variations
        .iter()
        .position(|&v| v >= threshold)
        .expect("maximum reaches the threshold");
    Ok(FreezePlan {
        variations: variations.to_vec(),
        threshold,
        split_layer: split + 1,
        frozen_count: split,
    })
}

/// The pre-trained network the header is cut from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backbone {
    /// Output channels of the stem feeding block 1.
    pub stem_out_channels: u32,
    pub input_resolution: u32,
    pub blocks: Vec<BlockChoice>,
}

impl Backbone {
    pub fn prefix(&self, count: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            blocks: self.blocks[..count].to_vec(),
            header_out_channels: self.stem_out_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrozenSpace {
    pub frozen_block_count: usize,
    /// The frozen header blocks, starting from the backbone stem.
    pub header: ArchitectureSpec,
    pub config: SearchSpaceConfig,
}

/// Freezes every backbone block strictly before the block holding the split layer.
///
/// `layer_to_block[l]` is the one-based backbone block of trace layer `l + 1`.
pub fn apply_freeze(
    plan: &FreezePlan,
    backbone: &Backbone,
    layer_to_block: &[usize],
    cfg: &SearchSpaceConfig,
) -> Result<FrozenSpace> {
    let bad = |msg: String| Err(Error::InconsistentMap(msg));
    if layer_to_block.len() != plan.variations.len() {
        return bad(format!(
            "{} layers mapped, plan covers {}",
            layer_to_block.len(),
            plan.variations.len()
        ));
    }
    if layer_to_block.windows(2).any(|w| w[0] > w[1]) {
        return bad("block indices must be non-decreasing".into());
    }
    let n_blocks = backbone.blocks.len();
    if layer_to_block.iter().any(|&b| b == 0 || b > n_blocks) {
        return bad(format!("block indices must lie in [1, {n_blocks}]"));
    }
    let frozen = layer_to_block[plan.split_layer - 1] - 1;
    if frozen >= cfg.num_searchable_blocks {
        return bad(format!(
            "freezing {frozen} blocks leaves nothing of {} to search",
            cfg.num_searchable_blocks
        ));
    }
    let header = backbone.prefix(frozen);
    let mut config = cfg.clone();
    if frozen > 0 {
        config.num_searchable_blocks -= frozen;
        config.header_out_channels = header.output_channels();
        config.input_resolution = header
            .blocks
            .iter()
            .fold(backbone.input_resolution, |r, b| {
                next_resolution(r, b.block_type.stride())
            });
    }
    Ok(FrozenSpace {
        frozen_block_count: frozen,
        header,
        config,
    })
}

/// Parameters of a synthetic trace: groups share a mean offset of
/// `front_gap` before `split_layer` and `tail_gap` from it on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceProfile {
    pub layers: usize,
    pub groups: usize,
    pub dim: usize,
    pub samples_per_group: usize,
    pub split_layer: usize,
    pub front_gap: f64,
    pub tail_gap: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for TraceProfile {
    fn default() -> Self {
        TraceProfile {
            layers: 17,
            groups: 2,
            dim: 16,
            samples_per_group: 8,
            split_layer: 13,
            front_gap: 0.1,
            tail_gap: 2.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

pub fn synthesize_trace(profile: &TraceProfile) -> Result<FeatureTrace> {
    if profile.layers == 0
        || profile.groups < 2
        || profile.dim == 0
        || profile.samples_per_group == 0
    {
        return Err(Error::InvalidConfig("degenerate trace profile".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let layers = (1..=profile.layers)
        .map(|l| {
            let gap = if l < profile.split_layer {
                profile.front_gap
            } else {
                profile.tail_gap
            };
            let groups = (0..profile.groups)
                .map(|g| {
                    (0..profile.samples_per_group)
                        .map(|_| {
                            (0..profile.dim)
                                .map(|d| {
                                    let shift = if d == g % profile.dim { gap } else { 0.0 };
                                    shift + profile.noise * (2.0 * rng.random::<f64>() - 1.0)
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            LayerFeatures { groups }
        })
        .collect();
    Ok(FeatureTrace { layers })
}
