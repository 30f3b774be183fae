//! Block-based architecture search space.
//!
//! An architecture is a fixed-length sequence of searchable blocks that
//! follows a frozen header. Each block picks a type, a kernel size and two
//! channel widths (mid and out), or is skipped. The input width of a block is
//! never stored: it is the output width of the nearest preceding kept block,
//! or the header's output width when there is none.

use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockType {
    /// Inverted residual, stride 2.
    #[serde(rename = "MB")]
    Mb,
    /// Inverted residual, stride 1.
    #[serde(rename = "DB")]
    Db,
    /// Residual block.
    #[serde(rename = "RB")]
    Rb,
    /// Plain convolution.
    #[serde(rename = "CB")]
    Cb,
}

impl BlockType {
    pub const ALL: [BlockType; 4] = [BlockType::Mb, BlockType::Db, BlockType::Rb, BlockType::Cb];

    pub fn stride(self) -> u32 {
        match self {
            BlockType::Mb => 2,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlockType::Mb => "MB",
            BlockType::Db => "DB",
            BlockType::Rb => "RB",
            BlockType::Cb => "CB",
        }
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BlockType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "MB" => Ok(BlockType::Mb),
            "DB" => Ok(BlockType::Db),
            "RB" => Ok(BlockType::Rb),
            "CB" => Ok(BlockType::Cb),
            other => Err(format!("unknown block type `{other}`")),
        }
    }
}

fn default_block_types() -> Vec<BlockType> {
    BlockType::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpaceConfig {
    pub num_searchable_blocks: usize,
    #[serde(default = "default_block_types")]
    pub block_types: Vec<BlockType>,
    pub kernel_choices: Vec<u32>,
    pub ch2_choices: Vec<u32>,
    pub ch3_choices: Vec<u32>,
    pub allow_skip: bool,
    /// Output channels of the last frozen block; CH1 of the first searchable block.
    pub header_out_channels: u32,
    /// Pixels per side entering the first searchable block.
    pub input_resolution: u32,
}

fn strictly_increasing<T: PartialOrd>(xs: &[T]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl SearchSpaceConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_searchable_blocks == 0 {
            return bad("num_searchable_blocks must be positive");
        }
        if self.header_out_channels == 0 || self.input_resolution == 0 {
            return bad("header_out_channels and input_resolution must be positive");
        }
        if self.block_types.is_empty() || !strictly_increasing(&self.block_types) {
            return bad(
                "block_types must be non-empty, duplicate-free and in MB, DB, RB, CB order",
            );
        }
        for (name, set) in [
            ("kernel_choices", &self.kernel_choices),
            ("ch2_choices", &self.ch2_choices),
            ("ch3_choices", &self.ch3_choices),
        ] {
            if set.is_empty() || !strictly_increasing(set) || set[0] == 0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be non-empty, positive and strictly increasing"
                )));
            }
        }
        if self.kernel_choices.iter().any(|k| k % 2 == 0) {
            return bad("kernel sizes must be odd");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SearchSpaceConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Number of non-skip options for a single block.
    pub fn block_variants(&self) -> usize {
        self.block_types.len()
            * self.kernel_choices.len()
            * self.ch2_choices.len()
            * self.ch3_choices.len()
    }

    /// Options per block including the skip option.
    pub fn per_block_options(&self) -> usize {
        self.block_variants() + usize::from(self.allow_skip)
    }

    /// Arity of each of the five per-block decisions, in action order.
    pub fn arities(&self) -> [usize; DECISIONS_PER_BLOCK] {
        [
            if self.allow_skip { 2 } else { 1 },
            self.block_types.len(),
            self.kernel_choices.len(),
            self.ch2_choices.len(),
            self.ch3_choices.len(),
        ]
    }

    pub fn action_len(&self) -> usize {
        DECISIONS_PER_BLOCK * self.num_searchable_blocks
    }

    pub fn placeholder(&self) -> BlockChoice {
        BlockChoice {
            block_type: self.block_types[0],
            kernel: self.kernel_choices[0],
            ch2: self.ch2_choices[0],
            ch3: self.ch3_choices[0],
            skipped: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockChoice {
    pub block_type: BlockType,
    pub kernel: u32,
    pub ch2: u32,
    pub ch3: u32,
    pub skipped: bool,
}

impl BlockChoice {
    pub fn new(block_type: BlockType, kernel: u32, ch2: u32, ch3: u32) -> Self {
        BlockChoice {
            block_type,
            kernel,
            ch2,
            ch3,
            skipped: false,
        }
    }

    /// Approximate weight count given the block's input width. Batch-norm
    /// and bias terms are ignored.
    pub fn params(&self, ch1: u32) -> u64 {
        if self.skipped {
            return 0;
        }
        let (k2, c1, c2, c3) = (
            u64::from(self.kernel) * u64::from(self.kernel),
            u64::from(ch1),
            u64::from(self.ch2),
            u64::from(self.ch3),
        );
        match self.block_type {
            BlockType::Cb => k2 * c1 * c3,
            BlockType::Rb => {
                let projection = if c1 != c3 { c1 * c3 } else { 0 };
                k2 * c1 * c2 + k2 * c2 * c3 + projection
            }
            BlockType::Mb | BlockType::Db => c1 * c2 + k2 * c2 + c2 * c3,
        }
    }
}

impl fmt::Display for BlockChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.skipped {
            f.write_str("skip")
        } else {
            write!(
                f,
                "{}(k{},{},{})",
                self.block_type, self.kernel, self.ch2, self.ch3
            )
        }
    }
}

/// One kept block with its derived input width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResolvedBlock {
    pub index: usize,
    pub block: BlockChoice,
    pub ch1: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub blocks: Vec<BlockChoice>,
    pub header_out_channels: u32,
}

impl ArchitectureSpec {
    /// Kept blocks in order, each paired with its effective CH1.
    pub fn resolved(&self) -> Vec<ResolvedBlock> {
        let mut ch1 = self.header_out_channels;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (index, block) in self.blocks.iter().enumerate() {
            if block.skipped {
                continue;
            }
            out.push(ResolvedBlock {
                index,
                block: *block,
                ch1,
            });
            ch1 = block.ch3;
        }
        out
    }

    /// Effective CH1 of every block position, skipped ones included.
    pub fn effective_ch1(&self) -> Vec<u32> {
        let mut ch1 = self.header_out_channels;
        self.blocks
            .iter()
            .map(|b| {
                let this = ch1;
                if !b.skipped {
                    ch1 = b.ch3;
                }
                this
            })
            .collect()
    }

    pub fn output_channels(&self) -> u32 {
        self.blocks
            .iter()
            .rev()
            .find(|b| !b.skipped)
            .map_or(self.header_out_channels, |b| b.ch3)
    }

    pub fn kept_count(&self) -> usize {
        self.blocks.iter().filter(|b| !b.skipped).count()
    }

    /// Compact one-line description, also used as a lookup key.
    pub fn summary(&self) -> String {
        let body: Vec<String> = self.blocks.iter().map(ToString::to_string).collect();
        format!("h{}:{}", self.header_out_channels, body.join("-"))
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary())
    }
}

pub fn validate(arch: &ArchitectureSpec, cfg: &SearchSpaceConfig) -> bool {
    if arch.blocks.len() != cfg.num_searchable_blocks
        || arch.header_out_channels != cfg.header_out_channels
    {
        return false;
    }
    let placeholder = cfg.placeholder();
    let blocks_ok = arch.blocks.iter().all(|b| {
        if b.skipped {
            cfg.allow_skip && *b == placeholder
        } else {
            cfg.block_types.contains(&b.block_type)
                && cfg.kernel_choices.contains(&b.kernel)
                && cfg.ch2_choices.contains(&b.ch2)
                && cfg.ch3_choices.contains(&b.ch3)
        }
    });
    blocks_ok && arch.kept_count() > 0
}

pub fn cardinality(cfg: &SearchSpaceConfig) -> BigUint {
    let per_block = BigUint::from(cfg.per_block_options());
    let total = per_block.pow(cfg.num_searchable_blocks as u32);
    if cfg.allow_skip {
        total - 1u32
    } else {
        total
    }
}

/// Every valid architecture exactly once, lexicographically ordered over
/// (skipped, type, kernel, ch2, ch3) per block, first block most significant.
pub fn enumerate(cfg: &SearchSpaceConfig, limit: u64) -> Result<Enumerate<'_>> {
    cfg.check()?;
    let count = cardinality(cfg);
    if count > BigUint::from(limit) {
        return Err(Error::SpaceTooLarge {
            cardinality: count.to_string(),
            limit,
        });
    }
    Ok(Enumerate {
        cfg,
        digits: vec![0; cfg.num_searchable_blocks],
        radix: cfg.per_block_options(),
        done: false,
    })
}

pub struct Enumerate<'a> {
    cfg: &'a SearchSpaceConfig,
    digits: Vec<usize>,
    radix: usize,
    done: bool,
}

impl Enumerate<'_> {
    fn option(&self, digit: usize) -> BlockChoice {
        let cfg = self.cfg;
        if digit == cfg.block_variants() {
            return cfg.placeholder();
        }
        let n3 = cfg.ch3_choices.len();
        let n2 = cfg.ch2_choices.len();
        let nk = cfg.kernel_choices.len();
        BlockChoice::new(
            cfg.block_types[digit / (n3 * n2 * nk)],
            cfg.kernel_choices[(digit / (n3 * n2)) % nk],
            cfg.ch2_choices[(digit / n3) % n2],
            cfg.ch3_choices[digit % n3],
        )
    }

    fn advance(&mut self) {
        for d in self.digits.iter_mut().rev() {
            *d += 1;
            if *d < self.radix {
                return;
            }
            *d = 0;
        }
        self.done = true;
    }
}

impl Iterator for Enumerate<'_> {
    type Item = ArchitectureSpec;

    fn next(&mut self) -> Option<ArchitectureSpec> {
        let skip_digit = self.cfg.block_variants();
        loop {
            if self.done {
                return None;
            }
            let all_skip = self.cfg.allow_skip && self.digits.iter().all(|&d| d == skip_digit);
            let arch = (!all_skip).then(|| ArchitectureSpec {
                blocks: self.digits.iter().map(|&d| self.option(d)).collect(),
                header_out_channels: self.cfg.header_out_channels,
            });
            self.advance();
            if arch.is_some() {
                return arch;
            }
        }
    }
}

pub const DECISIONS_PER_BLOCK: usize = 5;

/// The five per-block decision kinds, in action order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Skip,
    Type,
    Kernel,
    Ch2,
    Ch3,
}

impl Decision {
    pub const ORDER: [Decision; DECISIONS_PER_BLOCK] = [
        Decision::Skip,
        Decision::Type,
        Decision::Kernel,
        Decision::Ch2,
        Decision::Ch3,
    ];

    pub fn at_step(step: usize) -> Decision {
        Self::ORDER[step % DECISIONS_PER_BLOCK]
    }
}

/// Index of the skip decision meaning "skip this block". Only meaningful
/// when skipping is allowed; otherwise the decision has a single keep option.
pub const SKIP_INDEX: usize = 0;
const KEEP_INDEX_WITH_SKIP: usize = 1;

pub fn keep_index(cfg: &SearchSpaceConfig) -> usize {
    if cfg.allow_skip {
        KEEP_INDEX_WITH_SKIP
    } else {
        0
    }
}

fn position<T: PartialEq>(set: &[T], value: &T, what: &str) -> Result<usize> {
    set.iter()
        .position(|x| x == value)
        .ok_or_else(|| Error::InvalidArchitecture(format!("{what} not in choice set")))
}

pub fn encode(arch: &ArchitectureSpec, cfg: &SearchSpaceConfig) -> Result<Vec<usize>> {
    if !validate(arch, cfg) {
        return Err(Error::InvalidArchitecture(arch.summary()));
    }
    let mut actions = Vec::with_capacity(cfg.action_len());
    for b in &arch.blocks {
        if b.skipped {
            actions.extend([SKIP_INDEX, 0, 0, 0, 0]);
        } else {
            actions.push(keep_index(cfg));
            actions.push(position(&cfg.block_types, &b.block_type, "block type")?);
            actions.push(position(&cfg.kernel_choices, &b.kernel, "kernel")?);
            actions.push(position(&cfg.ch2_choices, &b.ch2, "ch2")?);
            actions.push(position(&cfg.ch3_choices, &b.ch3, "ch3")?);
        }
    }
    Ok(actions)
}

pub fn decode(actions: &[usize], cfg: &SearchSpaceConfig) -> Result<ArchitectureSpec> {
    if actions.len() != cfg.action_len() {
        return Err(Error::MalformedActions(format!(
            "expected {} actions, got {}",
            cfg.action_len(),
            actions.len()
        )));
    }
    let arities = cfg.arities();
    for (t, &a) in actions.iter().enumerate() {
        let arity = arities[t % DECISIONS_PER_BLOCK];
        if a >= arity {
            return Err(Error::MalformedActions(format!(
                "action {t} is {a}, arity is {arity}"
            )));
        }
    }
    let mut blocks = Vec::with_capacity(cfg.num_searchable_blocks);
    for (i, chunk) in actions.chunks_exact(DECISIONS_PER_BLOCK).enumerate() {
        let skipped = cfg.allow_skip && chunk[0] == SKIP_INDEX;
        if skipped {
            if chunk[1..].iter().any(|&a| a != 0) {
                return Err(Error::MalformedActions(format!(
                    "skipped block {i} carries non-placeholder choices"
                )));
            }
            blocks.push(cfg.placeholder());
        } else {
            blocks.push(BlockChoice::new(
                cfg.block_types[chunk[1]],
                cfg.kernel_choices[chunk[2]],
                cfg.ch2_choices[chunk[3]],
                cfg.ch3_choices[chunk[4]],
            ));
        }
    }
    let arch = ArchitectureSpec {
        blocks,
        header_out_channels: cfg.header_out_channels,
    };
    if arch.kept_count() == 0 {
        return Err(Error::InvalidArchitecture("all blocks skipped".into()));
    }
    Ok(arch)
}

pub fn param_count(arch: &ArchitectureSpec) -> u64 {
    arch.resolved().iter().map(|r| r.block.params(r.ch1)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    pub(crate) fn small_cfg(n: usize) -> SearchSpaceConfig {
        SearchSpaceConfig {
            num_searchable_blocks: n,
            block_types: BlockType::ALL.to_vec(),
            kernel_choices: vec![3, 5, 7],
            ch2_choices: vec![8, 16, 24, 32],
            ch3_choices: vec![8, 16, 24, 32],
            allow_skip: true,
            header_out_channels: 8,
            input_resolution: 32,
        }
    }

    fn arch(cfg: &SearchSpaceConfig, blocks: Vec<BlockChoice>) -> ArchitectureSpec {
        ArchitectureSpec {
            blocks,
            header_out_channels: cfg.header_out_channels,
        }
    }

    #[test]
    fn validate_accepts_in_set_blocks() {
        let cfg = small_cfg(3);
        let a = arch(
            &cfg,
            vec![
                BlockChoice::new(BlockType::Mb, 3, 8, 16),
                BlockChoice::new(BlockType::Rb, 5, 16, 24),
                BlockChoice::new(BlockType::Cb, 7, 32, 32),
            ],
        );
        assert!(validate(&a, &cfg));
    }

    #[test]
    fn validate_rejects_out_of_set_kernel() {
        let mut cfg = small_cfg(3);
        cfg.kernel_choices = vec![3, 5];
        let a = arch(
            &cfg,
            vec![
                BlockChoice::new(BlockType::Mb, 3, 8, 16),
                BlockChoice::new(BlockType::Db, 4, 8, 16),
                BlockChoice::new(BlockType::Cb, 5, 8, 16),
            ],
        );
        assert!(!validate(&a, &cfg));
    }

    #[test]
    fn validate_rejects_all_skip_and_noncanonical_skip() {
        let cfg = small_cfg(3);
        let all_skip = arch(&cfg, vec![cfg.placeholder(); 3]);
        assert!(!validate(&all_skip, &cfg));

        let mut odd_skip = cfg.placeholder();
        odd_skip.kernel = 5;
        let a = arch(
            &cfg,
            vec![
                BlockChoice::new(BlockType::Mb, 3, 8, 16),
                odd_skip,
                cfg.placeholder(),
            ],
        );
        assert!(!validate(&a, &cfg));
    }

    #[test]
    fn cardinality_examples() {
        assert_eq!(cardinality(&small_cfg(1)), BigUint::from(192u32));
        assert_eq!(cardinality(&small_cfg(2)), BigUint::from(37_248u32));
        assert_eq!(cardinality(&small_cfg(3)), BigUint::from(7_189_056u32));
        let single = SearchSpaceConfig {
            num_searchable_blocks: 1,
            block_types: vec![BlockType::Cb],
            kernel_choices: vec![3],
            ch2_choices: vec![8],
            ch3_choices: vec![8],
            allow_skip: false,
            header_out_channels: 8,
            input_resolution: 32,
        };
        assert_eq!(cardinality(&single), BigUint::from(1u32));
    }

    #[test]
    fn enumerate_counts_match_brute_force() {
        let cfg = small_cfg(1);
        let all: Vec<_> = enumerate(&cfg, 1_000).unwrap().collect();
        assert_eq!(all.len(), 192);
        assert!(all.iter().all(|a| validate(a, &cfg)));

        let cfg2 = small_cfg(2);
        let keys: HashSet<Vec<usize>> = enumerate(&cfg2, 100_000)
            .unwrap()
            .map(|a| encode(&a, &cfg2).unwrap())
            .collect();
        assert_eq!(keys.len(), 37_248);
    }

    #[test]
    fn enumerate_is_lexicographic() {
        let cfg = small_cfg(1);
        let all: Vec<_> = enumerate(&cfg, 1_000).unwrap().collect();
        let key = |a: &ArchitectureSpec| {
            let b = a.blocks[0];
            (b.skipped, b.block_type, b.kernel, b.ch2, b.ch3)
        };
        assert!(all.windows(2).all(|w| key(&w[0]) < key(&w[1])));
        assert!(all.last().unwrap().blocks[0].block_type == BlockType::Cb);
    }

    #[test]
    fn enumerate_guards_limit() {
        assert!(matches!(
            enumerate(&small_cfg(1), 10),
            Err(Error::SpaceTooLarge { .. })
        ));
    }

    #[test]
    fn arities_and_all_zero_decode() {
        let cfg = small_cfg(1);
        assert_eq!(cfg.arities(), [2, 4, 3, 4, 4]);
        let err = decode(&[0; 5], &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidArchitecture(_)));
    }

    #[test]
    fn decode_rejects_bad_sequences() {
        let cfg = small_cfg(2);
        assert!(matches!(
            decode(&[1, 0, 0], &cfg),
            Err(Error::MalformedActions(_))
        ));
        let mut acts = vec![1, 0, 0, 0, 0, 1, 0, 3, 0, 0];
        assert!(matches!(
            decode(&acts, &cfg),
            Err(Error::MalformedActions(_))
        ));
        acts[7] = 0;
        acts[0] = 0;
        acts[2] = 1;
        assert!(matches!(
            decode(&acts, &cfg),
            Err(Error::MalformedActions(_))
        ));
    }

    #[test]
    fn encode_decode_roundtrip_seeded() {
        use rand::{Rng, SeedableRng};
        let cfg = small_cfg(4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let arities = cfg.arities();
        let mut seen = 0;
        while seen < 100 {
            let acts: Vec<usize> = (0..cfg.action_len())
                .map(|t| rng.random_range(0..arities[t % 5]))
                .collect();
            let Ok(a) = decode(&acts, &cfg) else { continue };
            let canon = encode(&a, &cfg).unwrap();
            assert_eq!(decode(&canon, &cfg).unwrap(), a);
            seen += 1;
        }
    }

    #[test]
    fn param_count_examples() {
        let cfg = small_cfg(1);
        let cb = arch(&cfg, vec![BlockChoice::new(BlockType::Cb, 3, 8, 16)]);
        assert_eq!(param_count(&cb), 1_152);
        let rb = arch(&cfg, vec![BlockChoice::new(BlockType::Rb, 3, 16, 8)]);
        assert_eq!(param_count(&rb), 2_304);
        let mb = arch(&cfg, vec![BlockChoice::new(BlockType::Mb, 5, 32, 16)]);
        assert_eq!(param_count(&mb), 1_568);
    }

    #[test]
    fn rb_projection_drop_breaks_ch3_monotonicity() {
        let before = BlockChoice::new(BlockType::Rb, 3, 8, 24);
        let after = BlockChoice::new(BlockType::Rb, 3, 8, 32);
        assert_eq!(before.params(32), 9 * 32 * 8 + 9 * 8 * 24 + 32 * 24);
        assert!(after.params(32) < before.params(32));
    }

    #[test]
    fn ch1_chains_through_skips() {
        let cfg = small_cfg(3);
        let a = arch(
            &cfg,
            vec![
                BlockChoice::new(BlockType::Mb, 3, 8, 24),
                cfg.placeholder(),
                BlockChoice::new(BlockType::Db, 3, 8, 16),
            ],
        );
        assert_eq!(a.effective_ch1(), vec![8, 24, 24]);
        assert_eq!(a.output_channels(), 16);
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let ok = serde_json::to_string(&small_cfg(2)).unwrap();
        assert_eq!(SearchSpaceConfig::from_json(&ok).unwrap(), small_cfg(2));
        let bad = ok.replacen('{', "{\"extra\":1,", 1);
        assert!(SearchSpaceConfig::from_json(&bad).is_err());
        let mut dup = small_cfg(2);
        dup.ch2_choices = vec![8, 8];
        assert!(dup.check().is_err());
    }

    fn arb_block() -> impl Strategy<Value = BlockChoice> {
        (0usize..4, 0usize..3, 0usize..4, 0usize..4).prop_map(|(t, k, c2, c3)| {
            BlockChoice::new(
                BlockType::ALL[t],
                [3, 5, 7][k],
                [8, 16, 24, 32][c2],
                [8, 16, 24, 32][c3],
            )
        })
    }

    proptest! {
        #[test]
        fn inserting_skip_preserves_downstream_ch1(
            blocks in prop::collection::vec(arb_block(), 1..6),
            at in 0usize..6,
        ) {
            let cfg = small_cfg(blocks.len());
            let base = arch(&cfg, blocks.clone());
            let at = at.min(blocks.len());
            let mut with_skip = blocks.clone();
            with_skip.insert(at, cfg.placeholder());
            let skipped = arch(&cfg, with_skip);
            let before = base.resolved();
            let after = skipped.resolved();
            prop_assert_eq!(before.len(), after.len());
            for (x, y) in before.iter().zip(&after) {
                prop_assert_eq!(x.ch1, y.ch1);
            }
            prop_assert_eq!(param_count(&base), param_count(&skipped));
        }

        #[test]
        fn params_monotone_in_each_knob(b in arb_block(), ch1 in 1u32..64, bump in 1u32..16) {
            let p = b.params(ch1);
            let mut x = b; x.ch2 += bump;
            prop_assert!(x.params(ch1) >= p);
            let mut x = b; x.ch3 += bump;
            // RB loses its projection when ch3 lands on ch1.
            if !(b.block_type == BlockType::Rb && x.ch3 == ch1) {
                prop_assert!(x.params(ch1) >= p);
            }
            let mut x = b; x.kernel += 2 * bump;
            prop_assert!(x.params(ch1) >= p);
        }
    }
}
