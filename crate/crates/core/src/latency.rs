//! Offline per-block latency tables and additive latency estimation.
//!
//! A table maps an exact block signature to the latency measured for it on
//! one device. Whole-architecture latency is the header overhead plus the
//! sum of the kept blocks' entries; there is no interpolation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::Specification;
use crate::search_space::{ArchitectureSpec, BlockChoice, BlockType, SearchSpaceConfig};

pub const CSV_HEADER: [&str; 9] = [
    "device",
    "block_type",
    "kernel",
    "ch_in",
    "ch_mid",
    "ch_out",
    "stride",
    "resolution",
    "latency_ms",
];

const HEADER_ROW: &str = "HEADER";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockSignature {
    pub block_type: BlockType,
    pub kernel: u32,
    pub ch_in: u32,
    pub ch_mid: u32,
    pub ch_out: u32,
    pub stride: u32,
    pub resolution: u32,
}

impl BlockSignature {
    pub fn of(block: &BlockChoice, ch_in: u32, resolution: u32) -> Self {
        BlockSignature {
            block_type: block.block_type,
            kernel: block.kernel,
            ch_in,
            ch_mid: block.ch2,
            ch_out: block.ch3,
            stride: block.block_type.stride(),
            resolution,
        }
    }
}

impl fmt::Display for BlockSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} k{} {}->{}->{} s{} @{}",
            self.block_type,
            self.kernel,
            self.ch_in,
            self.ch_mid,
            self.ch_out,
            self.stride,
            self.resolution
        )
    }
}

/// Resolution after a block with the given stride.
pub fn next_resolution(resolution: u32, stride: u32) -> u32 {
    (resolution / stride).max(1)
}

/// Signatures of the kept blocks of `arch`, in order.
pub fn signatures(arch: &ArchitectureSpec, input_resolution: u32) -> Vec<BlockSignature> {
    let mut res = input_resolution;
    arch.resolved()
        .iter()
        .map(|r| {
            let sig = BlockSignature::of(&r.block, r.ch1, res);
            res = next_resolution(res, sig.stride);
            sig
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyTable {
    pub device_id: String,
    pub entries: BTreeMap<BlockSignature, f64>,
    pub header_overhead_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    device: String,
    block_type: String,
    kernel: u32,
    ch_in: u32,
    ch_mid: u32,
    ch_out: u32,
    stride: u32,
    resolution: u32,
    latency_ms: f64,
}

impl LatencyTable {
    pub fn new(device_id: impl Into<String>, header_overhead_ms: f64) -> Self {
        LatencyTable {
            device_id: device_id.into(),
            entries: BTreeMap::new(),
            header_overhead_ms,
        }
    }

    pub fn insert(&mut self, sig: BlockSignature, latency_ms: f64) -> Result<()> {
        if !(latency_ms > 0.0) {
            return Err(Error::NonPositiveLatency {
                signature: sig,
                latency_ms,
            });
        }
        if self.entries.insert(sig, latency_ms).is_some() {
            return Err(Error::DuplicateSignature(sig));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse(path, 1, e))?.clone();
        if headers.iter().ne(CSV_HEADER) {
            return Err(Error::parse(
                path,
                1,
                format!("expected header `{}`", CSV_HEADER.join(",")),
            ));
        }
        let mut device: Option<String> = None;
        let mut header_ms: Option<f64> = None;
        let mut table = LatencyTable::new("", 0.0);
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::parse(path, line, e))?;
            match &device {
                None => device = Some(row.device.clone()),
                Some(d) if *d != row.device => {
                    return Err(Error::parse(path, line, "table mixes devices"));
                }
                Some(_) => {}
            }
            if row.block_type == HEADER_ROW {
                if header_ms.replace(row.latency_ms).is_some() {
                    return Err(Error::parse(path, line, "more than one HEADER row"));
                }
                if !(row.latency_ms >= 0.0) {
                    return Err(Error::parse(path, line, "negative header overhead"));
                }
                continue;
            }
            let block_type: BlockType = row
                .block_type
                .parse()
                .map_err(|e| Error::parse(path, line, e))?;
            if row.stride != block_type.stride() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("{block_type} blocks have stride {}", block_type.stride()),
                ));
            }
            let sig = BlockSignature {
                block_type,
                kernel: row.kernel,
                ch_in: row.ch_in,
                ch_mid: row.ch_mid,
                ch_out: row.ch_out,
                stride: row.stride,
                resolution: row.resolution,
            };
            table.insert(sig, row.latency_ms)?;
        }
        table.device_id = device.unwrap_or_default();
        table.header_overhead_ms = header_ms.unwrap_or(0.0);
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }

    pub fn write_to<W: std::io::Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.serialize(Row {
            device: self.device_id.clone(),
            block_type: HEADER_ROW.into(),
            kernel: 0,
            ch_in: 0,
            ch_mid: 0,
            ch_out: 0,
            stride: 0,
            resolution: 0,
            latency_ms: self.header_overhead_ms,
        })?;
        for (sig, &latency_ms) in &self.entries {
            w.serialize(Row {
                device: self.device_id.clone(),
                block_type: sig.block_type.to_string(),
                kernel: sig.kernel,
                ch_in: sig.ch_in,
                ch_mid: sig.ch_mid,
                ch_out: sig.ch_out,
                stride: sig.stride,
                resolution: sig.resolution,
                latency_ms,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn lookup(&self, sig: &BlockSignature) -> Result<f64> {
        self.entries
            .get(sig)
            .copied()
            .ok_or(Error::MissingEntry(*sig))
    }

    /// Blocks-only latency, without the header overhead.
    pub fn blocks_latency(&self, arch: &ArchitectureSpec, input_resolution: u32) -> Result<f64> {
        signatures(arch, input_resolution)
            .iter()
            .map(|s| self.lookup(s))
            .sum()
    }

    pub fn estimate(&self, arch: &ArchitectureSpec, input_resolution: u32) -> Result<f64> {
        Ok(self.header_overhead_ms + self.blocks_latency(arch, input_resolution)?)
    }
}

pub fn meets_timing(latency_ms: f64, spec: &Specification) -> bool {
    latency_ms <= spec.timing_constraint_ms
}

/// Analytic per-block cost model for synthetic tables: latency grows with
/// the block's multiply-accumulate count (weights times output pixels).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub device_id: String,
    /// Milliseconds per million multiply-accumulates.
    pub ms_per_mmac: f64,
    /// Fixed launch cost per block.
    pub per_block_ms: f64,
    pub header_overhead_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            device_id: "synthetic".into(),
            ms_per_mmac: 2.0,
            per_block_ms: 0.5,
            header_overhead_ms: 20.0,
        }
    }
}

impl CostModel {
    pub fn block_latency(&self, block: &BlockChoice, ch_in: u32, resolution: u32) -> f64 {
        let out_res = f64::from(next_resolution(resolution, block.block_type.stride()));
        let macs = block.params(ch_in) as f64 * out_res * out_res;
        self.per_block_ms + self.ms_per_mmac * macs / 1e6
    }

    /// A table covering every signature reachable in `cfg`.
    pub fn generate(&self, cfg: &SearchSpaceConfig) -> Result<LatencyTable> {
        cfg.check()?;
        let mut table = LatencyTable::new(self.device_id.clone(), self.header_overhead_ms);
        let mut resolutions = vec![cfg.input_resolution];
        for _ in 1..cfg.num_searchable_blocks {
            let last = *resolutions.last().unwrap();
            let next = next_resolution(last, 2);
            if next == last {
                break;
            }
            resolutions.push(next);
        }
        let mut ch_ins = cfg.ch3_choices.clone();
        if !ch_ins.contains(&cfg.header_out_channels) {
            ch_ins.push(cfg.header_out_channels);
        }
        for &block_type in &cfg.block_types {
            for &kernel in &cfg.kernel_choices {
                for &ch2 in &cfg.ch2_choices {
                    for &ch3 in &cfg.ch3_choices {
                        let block = BlockChoice::new(block_type, kernel, ch2, ch3);
                        for &ch_in in &ch_ins {
                            for &res in &resolutions {
                                table.insert(
                                    BlockSignature::of(&block, ch_in, res),
                                    self.block_latency(&block, ch_in, res),
                                )?;
                            }
                        }
                    }
                }
            }
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize) -> SearchSpaceConfig {
        SearchSpaceConfig {
            num_searchable_blocks: n,
            block_types: BlockType::ALL.to_vec(),
            kernel_choices: vec![3, 5],
            ch2_choices: vec![8, 16],
            ch3_choices: vec![8, 16],
            allow_skip: true,
            header_out_channels: 8,
            input_resolution: 32,
        }
    }

    fn parse(text: &str) -> Result<LatencyTable> {
        LatencyTable::from_reader(text.as_bytes(), Path::new("t.csv"))
    }

    const HEAD: &str =
        "device,block_type,kernel,ch_in,ch_mid,ch_out,stride,resolution,latency_ms\n";

    #[test]
    fn loads_well_formed_table() {
        let t = parse(&format!(
            "{HEAD}pi,HEADER,0,0,0,0,0,0,100\npi,DB,3,8,8,16,1,32,40\npi,CB,3,16,8,8,1,32,60\npi,MB,3,8,16,16,2,32,5.5\n"
        ))
        .unwrap();
        assert_eq!(t.entries.len(), 3);
        assert_eq!(t.header_overhead_ms, 100.0);
        assert_eq!(t.device_id, "pi");
    }

    #[test]
    fn load_errors() {
        let dup = parse(&format!(
            "{HEAD}pi,DB,3,8,8,16,1,32,40\npi,DB,3,8,8,16,1,32,41\n"
        ));
        assert!(matches!(dup, Err(Error::DuplicateSignature(_))));
        let zero = parse(&format!("{HEAD}pi,DB,3,8,8,16,1,32,0\n"));
        assert!(matches!(zero, Err(Error::NonPositiveLatency { .. })));
        let bad = parse(&format!("{HEAD}pi,DB,three,8,8,16,1,32,1\n"));
        assert!(matches!(bad, Err(Error::Parse { line: 2, .. })));
        let header = parse("device,kernel\npi,3\n");
        assert!(matches!(header, Err(Error::Parse { line: 1, .. })));
        let mixed = parse(&format!(
            "{HEAD}pi,DB,3,8,8,16,1,32,4\nodroid,DB,5,8,8,16,1,32,4\n"
        ));
        assert!(matches!(mixed, Err(Error::Parse { line: 3, .. })));
    }

    fn two_block_table() -> (LatencyTable, ArchitectureSpec) {
        let mut t = LatencyTable::new("pi", 100.0);
        let a = BlockChoice::new(BlockType::Db, 3, 8, 16);
        let b = BlockChoice::new(BlockType::Cb, 3, 8, 8);
        t.insert(BlockSignature::of(&a, 8, 32), 40.0).unwrap();
        t.insert(BlockSignature::of(&b, 16, 32), 60.0).unwrap();
        let arch = ArchitectureSpec {
            blocks: vec![a, b],
            header_out_channels: 8,
        };
        (t, arch)
    }

    #[test]
    fn estimate_sums_entries() {
        let (t, arch) = two_block_table();
        assert_eq!(t.estimate(&arch, 32).unwrap(), 200.0);
    }

    #[test]
    fn skipped_block_contributes_nothing() {
        let (t, arch) = two_block_table();
        let c = cfg(3);
        let with_skip = ArchitectureSpec {
            blocks: vec![arch.blocks[0], c.placeholder(), arch.blocks[1]],
            header_out_channels: 8,
        };
        assert_eq!(t.estimate(&with_skip, 32).unwrap(), 200.0);
        let only_first = ArchitectureSpec {
            blocks: vec![arch.blocks[0], c.placeholder()],
            header_out_channels: 8,
        };
        assert_eq!(t.estimate(&only_first, 32).unwrap(), 140.0);
    }

    #[test]
    fn missing_entry_is_reported() {
        let (t, mut arch) = two_block_table();
        arch.blocks[1].kernel = 5;
        assert!(matches!(t.estimate(&arch, 32), Err(Error::MissingEntry(_))));
    }

    #[test]
    fn resolution_halves_after_mb() {
        let arch = ArchitectureSpec {
            blocks: vec![
                BlockChoice::new(BlockType::Mb, 3, 8, 8),
                BlockChoice::new(BlockType::Mb, 3, 8, 8),
                BlockChoice::new(BlockType::Db, 3, 8, 8),
            ],
            header_out_channels: 8,
        };
        let res: Vec<u32> = signatures(&arch, 3).iter().map(|s| s.resolution).collect();
        assert_eq!(res, vec![3, 1, 1]);
    }

    #[test]
    fn timing_boundary_and_published_latencies() {
        let s = Specification::new(1500.0, 0.0, "raspberry").unwrap();
        assert!(meets_timing(1500.0, &s));
        assert!(!meets_timing(1939.40, &s));
        assert!(meets_timing(714.19, &s));
    }

    #[test]
    fn generated_table_roundtrips_through_csv() {
        let t = CostModel::default().generate(&cfg(3)).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn generated_table_covers_space_and_is_additive(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let c = cfg(4);
            let t = CostModel::default().generate(&c).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let arities = c.arities();
            let acts: Vec<usize> = (0..c.action_len()).map(|i| rng.random_range(0..arities[i % 5])).collect();
            let acts = crate::search_space::encode(
                &match crate::search_space::decode(&acts, &c) { Ok(a) => a, Err(_) => return Ok(()) }, &c).unwrap();
            let arch = crate::search_space::decode(&acts, &c).unwrap();
            let total = t.estimate(&arch, c.input_resolution).unwrap();
            let sigs = signatures(&arch, c.input_resolution);
            let sum: f64 = sigs.iter().map(|s| t.lookup(s).unwrap()).sum();
            prop_assert!((total - t.header_overhead_ms - sum).abs() < 1e-9);

            // split into a prefix and a suffix that continues from the prefix's output
            let kept = arch.resolved();
            let cut = kept.len() / 2;
            let prefix = ArchitectureSpec { blocks: kept[..cut].iter().map(|r| r.block).collect(), header_out_channels: 8 };
            let mid_res = signatures(&prefix, c.input_resolution).last().map_or(c.input_resolution, |s| next_resolution(s.resolution, s.stride));
            let suffix = ArchitectureSpec { blocks: kept[cut..].iter().map(|r| r.block).collect(), header_out_channels: prefix.output_channels() };
            let parts = t.blocks_latency(&prefix, c.input_resolution).unwrap() + t.blocks_latency(&suffix, mid_res).unwrap();
            prop_assert!((total - t.header_overhead_ms - parts).abs() < 1e-9);
        }
    }
}
