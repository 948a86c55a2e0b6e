//! Kronecker-structured randomly wired search space.
//!
//! A sample draws two small binary matrices `R1` (strictly upper triangular,
//! the wiring inside a block) and `R2` (the shortcut wiring from one block to
//! the next) and composes the 16-node core graph
//!
//! ```text
//! A = K1 ⊗ R1 + K2 ⊗ R2
//! ```
//!
//! with `K1 = I4` and `K2` the superdiagonal shift. Input and output nodes
//! are attached afterwards and unused nodes are dropped, so an architecture
//! has between 2 and 18 nodes in topological order.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed;

/// Side length of the random and skeleton matrices.
pub const BLOCK: usize = 4;
/// Nodes in the composed core graph.
pub const CORE_NODES: usize = BLOCK * BLOCK;
/// Largest architecture: core nodes plus input and output.
pub const MAX_NODES: usize = CORE_NODES + 2;
/// Default Bernoulli edge probability for the random matrices.
pub const DEFAULT_EDGE_PROB: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchSpaceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("search space exhausted: {rejections} consecutive duplicate samples after {found} unique architectures")]
    Exhausted { found: usize, rejections: usize },
}

pub type Result<T> = std::result::Result<T, SearchSpaceError>;

pub type Block = [[u8; BLOCK]; BLOCK];

/// The two random matrices of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubMatrixPair {
    pub r1: Block,
    pub r2: Block,
}

impl SubMatrixPair {
    /// Checks the binary and strict-upper-triangular constraints.
    pub fn new(r1: Block, r2: Block) -> Result<Self> {
        for i in 0..BLOCK {
            for j in 0..BLOCK {
                if r1[i][j] > 1 || r2[i][j] > 1 {
                    return Err(SearchSpaceError::InvalidArgument(format!(
                        "entry ({i},{j}) is not binary"
                    )));
                }
                if i >= j && r1[i][j] != 0 {
                    return Err(SearchSpaceError::InvalidArgument(format!(
                        "r1 must be strictly upper triangular, found 1 at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { r1, r2 })
    }
}

/// Constant skeleton matrices imposing the block-plus-shortcut structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkeletonPair {
    pub k1: Block,
    pub k2: Block,
}

impl SkeletonPair {
    pub const fn resnet() -> Self {
        let mut k1 = [[0u8; BLOCK]; BLOCK];
        let mut k2 = [[0u8; BLOCK]; BLOCK];
        let mut i = 0;
        while i < BLOCK {
            k1[i][i] = 1;
            if i + 1 < BLOCK {
                k2[i][i + 1] = 1;
            }
            i += 1;
        }
        Self { k1, k2 }
    }
}

impl Default for SkeletonPair {
    fn default() -> Self {
        Self::resnet()
    }
}

/// Dense binary adjacency matrix in topological node order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        let mut adj = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(SearchSpaceError::InvalidSpec(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &b) in row.iter().enumerate() {
                adj.set(i, j, b);
            }
        }
        Ok(adj)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.n + j] = value;
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_zero(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn is_strictly_upper(&self) -> bool {
        (0..self.n).all(|i| (0..=i).all(|j| !self.get(i, j)))
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    pub fn predecessors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.get(i, j))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[bool]> {
        self.bits.chunks(self.n.max(1)).take(self.n)
    }

    /// Row `i` as a `0`/`1` string.
    pub fn row_string(&self, i: usize) -> String {
        (0..self.n)
            .map(|j| if self.get(i, j) { '1' } else { '0' })
            .collect()
    }

    /// Longest path length (in edges) from node 0 to every node.
    pub fn longest_path_from_source(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.n];
        for v in 0..self.n {
            for u in self.predecessors(v) {
                depth[v] = depth[v].max(depth[u] + 1);
            }
        }
        depth
    }
}

/// Layer alphabet. Discriminants are the one-hot column and hash byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerType {
    Input = 0,
    Output = 1,
    StemConv3x3 = 2,
    Conv3x3 = 3,
    Conv3x3Double = 4,
    Conv3x3Halve = 5,
    Conv3x3S2 = 6,
    Conv3x3S2Double = 7,
    Conv3x3S2Halve = 8,
}

/// How a layer maps its reference input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRule {
    Fixed(usize),
    Same,
    Double,
    Halve,
}

impl LayerType {
    pub const COUNT: usize = 9;

    pub const ALL: [LayerType; Self::COUNT] = [
        LayerType::Input,
        LayerType::Output,
        LayerType::StemConv3x3,
        LayerType::Conv3x3,
        LayerType::Conv3x3Double,
        LayerType::Conv3x3Halve,
        LayerType::Conv3x3S2,
        LayerType::Conv3x3S2Double,
        LayerType::Conv3x3S2Halve,
    ];

    /// The six convolutions any internal node may take.
    pub const CONV: [LayerType; 6] = [
        LayerType::Conv3x3,
        LayerType::Conv3x3Double,
        LayerType::Conv3x3Halve,
        LayerType::Conv3x3S2,
        LayerType::Conv3x3S2Double,
        LayerType::Conv3x3S2Halve,
    ];

    /// Choices for nodes fed directly by the input: the stem plus `CONV`.
    pub const STEM_ELIGIBLE: [LayerType; 7] = [
        LayerType::StemConv3x3,
        LayerType::Conv3x3,
        LayerType::Conv3x3Double,
        LayerType::Conv3x3Halve,
        LayerType::Conv3x3S2,
        LayerType::Conv3x3S2Double,
        LayerType::Conv3x3S2Halve,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerType::Input => "input",
            LayerType::Output => "output",
            LayerType::StemConv3x3 => "stem-conv3x3",
            LayerType::Conv3x3 => "conv3x3-same",
            LayerType::Conv3x3Double => "conv3x3-double",
            LayerType::Conv3x3Halve => "conv3x3-halve",
            LayerType::Conv3x3S2 => "conv3x3s2-same",
            LayerType::Conv3x3S2Double => "conv3x3s2-double",
            LayerType::Conv3x3S2Halve => "conv3x3s2-halve",
        }
    }

    pub fn is_conv(self) -> bool {
        !matches!(self, LayerType::Input | LayerType::Output)
    }

    pub fn stride(self) -> usize {
        match self {
            LayerType::Conv3x3S2 | LayerType::Conv3x3S2Double | LayerType::Conv3x3S2Halve => 2,
            _ => 1,
        }
    }

    /// `None` for the input and output nodes.
    pub fn channel_rule(self) -> Option<ChannelRule> {
        match self {
            LayerType::Input | LayerType::Output => None,
            LayerType::StemConv3x3 => Some(ChannelRule::Fixed(64)),
            LayerType::Conv3x3 | LayerType::Conv3x3S2 => Some(ChannelRule::Same),
            LayerType::Conv3x3Double | LayerType::Conv3x3S2Double => Some(ChannelRule::Double),
            LayerType::Conv3x3Halve | LayerType::Conv3x3S2Halve => Some(ChannelRule::Halve),
        }
    }
}

impl fmt::Display for LayerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerType {
    type Err = SearchSpaceError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| SearchSpaceError::InvalidSpec(format!("unknown layer type {s:?}")))
    }
}

/// A sampled architecture: wiring plus one layer type per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ArchJson", into = "ArchJson")]
pub struct ArchSpec {
    adjacency: Adjacency,
    layer_types: Vec<LayerType>,
}

impl ArchSpec {
    /// Builds a spec after checking every structural invariant.
    pub fn new(adjacency: Adjacency, layer_types: Vec<LayerType>) -> Result<Self> {
        let spec = Self {
            adjacency,
            layer_types,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn layer_types(&self) -> &[LayerType] {
        &self.layer_types
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn hash(&self) -> HashId {
        canonical_hash(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.adjacency.len();
        let bad = |msg: String| Err(SearchSpaceError::InvalidSpec(msg));
        if n < 2 {
            return bad(format!("need at least input and output nodes, got {n}"));
        }
        if n > MAX_NODES {
            return bad(format!("{n} nodes exceeds the maximum of {MAX_NODES}"));
        }
        if self.layer_types.len() != n {
            return bad(format!(
                "{} layer types for {n} nodes",
                self.layer_types.len()
            ));
        }
        if !self.adjacency.is_strictly_upper() {
            return bad("adjacency is not strictly upper triangular".into());
        }
        if self.layer_types[0] != LayerType::Input {
            return bad("node 0 must be the input".into());
        }
        if self.layer_types[n - 1] != LayerType::Output {
            return bad("last node must be the output".into());
        }
        for v in 1..n - 1 {
            if !self.layer_types[v].is_conv() {
                return bad(format!("internal node {v} has type {}", self.layer_types[v]));
            }
        }
        for v in 0..n {
            if v > 0 && self.adjacency.predecessors(v).next().is_none() {
                return bad(format!("node {v} has no predecessor"));
            }
            if v < n - 1 && self.adjacency.successors(v).next().is_none() {
                return bad(format!("node {v} has no successor"));
            }
        }
        Ok(())
    }
}

/// On-disk JSON form of an [`ArchSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchJson {
    pub n: usize,
    pub adjacency: Vec<String>,
    pub layer_types: Vec<String>,
}

impl From<ArchSpec> for ArchJson {
    fn from(spec: ArchSpec) -> Self {
        let n = spec.len();
        Self {
            n,
            adjacency: (0..n).map(|i| spec.adjacency.row_string(i)).collect(),
            layer_types: spec.layer_types.iter().map(|t| t.name().to_string()).collect(),
        }
    }
}

impl TryFrom<ArchJson> for ArchSpec {
    type Error = SearchSpaceError;

    fn try_from(json: ArchJson) -> Result<Self> {
        if json.adjacency.len() != json.n {
            return Err(SearchSpaceError::InvalidSpec(format!(
                "n = {} but {} adjacency rows",
                json.n,
                json.adjacency.len()
            )));
        }
        let rows = json
            .adjacency
            .iter()
            .map(|row| {
                row.chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        other => Err(SearchSpaceError::InvalidSpec(format!(
                            "adjacency character {other:?}"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let adjacency = Adjacency::from_rows(&rows)?;
        let layer_types = json
            .layer_types
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<_>>>()?;
        ArchSpec::new(adjacency, layer_types)
    }
}

/// SHA-256 digest of a canonical architecture, lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HashId(String);

impl HashId {
    /// Accepts a 64-character lowercase hex string.
    pub fn parse(s: &str) -> Result<Self> {
        if s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            Ok(Self(s.to_string()))
        } else {
            Err(SearchSpaceError::InvalidArgument(format!(
                "{s:?} is not a 64-digit lowercase hex digest"
            )))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First eight digest bytes as an integer, for seeding per-architecture streams.
    pub fn prefix_u64(&self) -> u64 {
        u64::from_str_radix(&self.0[..16], 16).expect("validated hex")
    }
}

impl fmt::Display for HashId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for HashId {
    type Err = SearchSpaceError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Draws `R1` and `R2` with independent Bernoulli(`edge_prob`) entries.
///
/// `R1` is filled over its strict upper triangle in row-major order, then
/// `R2` over all sixteen entries, from one ChaCha8 stream seeded by `seed`.
pub fn sample_submatrices(seed: u64, edge_prob: f64) -> Result<SubMatrixPair> {
    if !(edge_prob > 0.0 && edge_prob < 1.0) {
        return Err(SearchSpaceError::InvalidArgument(format!(
            "edge probability must lie in (0, 1), got {edge_prob}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r1 = [[0u8; BLOCK]; BLOCK];
    let mut r2 = [[0u8; BLOCK]; BLOCK];
    for (i, row) in r1.iter_mut().enumerate() {
        for cell in row.iter_mut().skip(i + 1) {
            *cell = rng.random_bool(edge_prob) as u8;
        }
    }
    for row in r2.iter_mut() {
        for cell in row.iter_mut() {
            *cell = rng.random_bool(edge_prob) as u8;
        }
    }
    Ok(SubMatrixPair { r1, r2 })
}

fn kron_into(out: &mut Adjacency, k: &Block, r: &Block) {
    for (bi, krow) in k.iter().enumerate() {
        for (bj, &kv) in krow.iter().enumerate() {
            if kv == 0 {
                continue;
            }
            for (ri, rrow) in r.iter().enumerate() {
                for (rj, &rv) in rrow.iter().enumerate() {
                    if rv != 0 {
                        out.set(bi * BLOCK + ri, bj * BLOCK + rj, true);
                    }
                }
            }
        }
    }
}

/// `K1 ⊗ R1 + K2 ⊗ R2` for the standard skeleton.
pub fn compose_adjacency(sub: &SubMatrixPair) -> Adjacency {
    compose_with_skeleton(&SkeletonPair::resnet(), sub)
}

/// Kronecker composition for an arbitrary pair of skeletons. The two
/// products must not overlap for the result to stay binary, which holds
/// whenever `K1` and `K2` have disjoint supports.
pub fn compose_with_skeleton(skeleton: &SkeletonPair, sub: &SubMatrixPair) -> Adjacency {
    let mut a = Adjacency::zeros(CORE_NODES);
    kron_into(&mut a, &skeleton.k1, &sub.r1);
    kron_into(&mut a, &skeleton.k2, &sub.r2);
    a
}

/// Adds input and output nodes to a composed core graph and drops unused nodes.
///
/// Core nodes without any incident edge are removed. The input feeds every
/// remaining node that has no predecessor and every remaining node without a
/// successor feeds the output, so each retained node lies on an input to
/// output path. An edgeless core collapses to the two-node graph.
pub fn attach_io(core: &Adjacency) -> Adjacency {
    let m = core.len();
    let active: Vec<usize> = (0..m)
        .filter(|&v| core.successors(v).next().is_some() || core.predecessors(v).next().is_some())
        .collect();
    let n = active.len() + 2;
    let mut adj = Adjacency::zeros(n);
    let output = n - 1;
    if active.is_empty() {
        adj.set(0, 1, true);
        return adj;
    }
    for (a, &u) in active.iter().enumerate() {
        for (b, &v) in active.iter().enumerate() {
            if core.get(u, v) {
                adj.set(a + 1, b + 1, true);
            }
        }
        if core.predecessors(u).next().is_none() {
            adj.set(0, a + 1, true);
        }
        if core.successors(u).next().is_none() {
            adj.set(a + 1, output, true);
        }
    }
    adj
}

/// Labels nodes of a pruned graph.
///
/// Node 0 is the input and the last node the output. Nodes fed directly by
/// the input draw uniformly from the stem plus the six convolutions; every
/// other internal node draws uniformly from the six convolutions.
pub fn assign_layer_types(adjacency: Adjacency, seed: u64) -> Result<ArchSpec> {
    let n = adjacency.len();
    if n < 2 {
        return Err(SearchSpaceError::InvalidSpec(format!("{n}-node graph")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut types = Vec::with_capacity(n);
    types.push(LayerType::Input);
    for v in 1..n - 1 {
        let t = if adjacency.get(0, v) {
            LayerType::STEM_ELIGIBLE[rng.random_range(0..LayerType::STEM_ELIGIBLE.len())]
        } else {
            LayerType::CONV[rng.random_range(0..LayerType::CONV.len())]
        };
        types.push(t);
    }
    types.push(LayerType::Output);
    ArchSpec::new(adjacency, types)
}

/// Canonical byte layout: node count (1 byte), the `n*n` adjacency bits in
/// row-major order packed MSB-first and zero-padded to a whole byte, then one
/// byte per layer type.
pub fn canonical_bytes(spec: &ArchSpec) -> Vec<u8> {
    let n = spec.len();
    let mut out = Vec::with_capacity(1 + (n * n).div_ceil(8) + n);
    out.push(n as u8);
    let mut acc = 0u8;
    let mut filled = 0;
    for row in spec.adjacency.rows() {
        for &bit in row {
            acc = (acc << 1) | bit as u8;
            filled += 1;
            if filled == 8 {
                out.push(acc);
                acc = 0;
                filled = 0;
            }
        }
    }
    if filled > 0 {
        out.push(acc << (8 - filled));
    }
    out.extend(spec.layer_types.iter().map(|t| t.index() as u8));
    out
}

pub fn canonical_hash(spec: &ArchSpec) -> HashId {
    HashId(hex::encode(Sha256::digest(canonical_bytes(spec))))
}

/// One architecture from a single seed.
pub fn sample_arch(seed: u64, edge_prob: f64) -> Result<ArchSpec> {
    let sub = sample_submatrices(seed::derive(seed, "submatrices"), edge_prob)?;
    let adjacency = attach_io(&compose_adjacency(&sub));
    assign_layer_types(adjacency, seed::derive(seed, "layer-types"))
}

/// `count` architectures with pairwise distinct hashes, rejection-sampled.
pub fn sample_unique(count: usize, seed: u64, edge_prob: f64) -> Result<Vec<ArchSpec>> {
    if count == 0 {
        return Err(SearchSpaceError::InvalidArgument("count must be at least 1".into()));
    }
    let max_rejections = count.saturating_mul(100);
    let mut rng = seed::rng(seed, "sample");
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut rejections = 0;
    while out.len() < count {
        let spec = sample_arch(rng.next_u64(), edge_prob)?;
        if seen.insert(spec.hash()) {
            out.push(spec);
            rejections = 0;
        } else {
            rejections += 1;
            if rejections >= max_rejections {
                return Err(SearchSpaceError::Exhausted {
                    found: out.len(),
                    rejections,
                });
            }
        }
    }
    Ok(out)
}

/// Nodes reachable from node 0 and nodes that reach the last node, by BFS.
pub fn reachability(adj: &Adjacency) -> (Vec<bool>, Vec<bool>) {
    let n = adj.len();
    let bfs = |start: usize, forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            let next: Vec<usize> = if forward {
                adj.successors(u).collect()
            } else {
                adj.predecessors(u).collect()
            };
            for v in next {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    };
    (bfs(0, true), bfs(n - 1, false))
}
