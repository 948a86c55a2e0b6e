use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encode::{EncodedGraph, EncoderConfig, FEATURES};
use super::{PredictorError, Result};
use crate::seed;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// How node embeddings are pooled into a graph embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Readout {
    /// Mean over real nodes of the last GCN layer.
    #[default]
    Final,
    /// Mean over real nodes of every GCN layer, concatenated.
    DenseSkip,
}

/// Pairwise head variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum HeadKind {
    /// The same head scores `[h1 ‖ h2]` and `[h2 ‖ h1]`; a softmax over the
    /// two logits gives the pair probabilities. Swapping the inputs swaps the
    /// probabilities exactly.
    #[default]
    Antisymmetric,
    /// One logit on `[h1 ‖ h2]`, the two-class softmax of the concatenation.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub units: usize,
    pub layers: usize,
    pub readout: Readout,
    pub head: HeadKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            units: 265,
            layers: 3,
            readout: Readout::Final,
            head: HeadKind::Antisymmetric,
        }
    }
}

impl ModelConfig {
    pub fn embedding_dim(&self) -> usize {
        match self.readout {
            Readout::Final => self.units,
            Readout::DenseSkip => self.units * self.layers,
        }
    }

    /// Input and output width of GCN layer `l`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        if l == 0 {
            (FEATURES, self.units)
        } else {
            (self.units, self.units)
        }
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 0.019041,
            weight_decay: 0.001126,
            eps: 1e-10,
        }
    }
}

/// Every trainable tensor. Also used for gradients and Adagrad accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub gcn: Vec<Array2<f64>>,
    /// Head weights over `[h1 ‖ h2]`.
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            gcn: (0..config.layers)
                .map(|l| Array2::zeros(config.layer_dims(l)))
                .collect(),
            head_w: Array1::zeros(2 * config.embedding_dim()),
            head_b: 0.0,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed, "predictor/init");
        let mut uniform = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
        };
        let gcn = (0..config.layers)
            .map(|l| {
                let (r, c) = config.layer_dims(l);
                uniform(r, c)
            })
            .collect();
        let head = uniform(2 * config.embedding_dim(), 1);
        Self {
            gcn,
            head_w: head.column(0).to_owned(),
            head_b: 0.0,
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.gcn.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
            + self.head_w.dot(&self.head_w)
            + self.head_b * self.head_b
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &Params) {
        for (w, o) in self.gcn.iter_mut().zip(&other.gcn) {
            w.scaled_add(alpha, o);
        }
        self.head_w.scaled_add(alpha, &other.head_w);
        self.head_b += alpha * other.head_b;
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.gcn.iter().map(|w| w.len()).sum::<usize>() + self.head_w.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scalar `i` in the flat order: GCN layers row-major, head weights, bias.
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for w in &self.gcn {
            if i < w.len() {
                return w[[i / w.ncols(), i % w.ncols()]];
            }
            i -= w.len();
        }
        if i < self.head_w.len() {
            return self.head_w[i];
        }
        assert_eq!(i, self.head_w.len(), "flat index out of range");
        self.head_b
    }

    pub fn flat_mut(&mut self, mut i: usize) -> &mut f64 {
        for w in &mut self.gcn {
            if i < w.len() {
                let c = w.ncols();
                return &mut w[[i / c, i % c]];
            }
            i -= w.len();
        }
        if i < self.head_w.len() {
            return &mut self.head_w[i];
        }
        assert_eq!(i, self.head_w.len(), "flat index out of range");
        &mut self.head_b
    }

    fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let zeros = Self::zeros(config);
        let ok = self.gcn.len() == zeros.gcn.len()
            && self.gcn.iter().zip(&zeros.gcn).all(|(a, b)| a.dim() == b.dim())
            && self.head_w.len() == zeros.head_w.len();
        if ok {
            Ok(())
        } else {
            Err(PredictorError::InvalidArgument(
                "parameter shapes do not match the model configuration".into(),
            ))
        }
    }
}

/// A labeled pair of indices into a graph table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairLabel {
    pub first: usize,
    pub second: usize,
    pub target: RankTarget,
}

/// One-hot pair target: `[1, 0]` when the first architecture is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RankTarget {
    FirstBetter,
    SecondBetter,
}

impl RankTarget {
    pub fn as_vector(self) -> [f64; 2] {
        match self {
            RankTarget::FirstBetter => [1.0, 0.0],
            RankTarget::SecondBetter => [0.0, 1.0],
        }
    }

    /// `None` on ties.
    pub fn from_scores(first: f64, second: f64) -> Option<Self> {
        if first > second {
            Some(RankTarget::FirstBetter)
        } else if second > first {
            Some(RankTarget::SecondBetter)
        } else {
            None
        }
    }

    fn sign(self) -> f64 {
        match self {
            RankTarget::FirstBetter => 1.0,
            RankTarget::SecondBetter => -1.0,
        }
    }
}

/// The ranking GCN with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub config: ModelConfig,
    pub hyper: Hyper,
    pub encoder: EncoderConfig,
    pub params: Params,
    pub accumulators: Params,
}

impl PredictorModel {
    pub fn new(config: ModelConfig, hyper: Hyper, encoder: EncoderConfig, seed: u64) -> Self {
        Self {
            params: Params::glorot(&config, seed),
            accumulators: Params::zeros(&config),
            config,
            hyper,
            encoder,
        }
    }

    pub fn from_parts(
        config: ModelConfig,
        hyper: Hyper,
        encoder: EncoderConfig,
        params: Params,
        accumulators: Params,
    ) -> Result<Self> {
        params.check_shapes(&config)?;
        accumulators.check_shapes(&config)?;
        Ok(Self {
            config,
            hyper,
            encoder,
            params,
            accumulators,
        })
    }

    /// Graph embedding of one encoded architecture.
    pub fn embed(&self, g: &EncodedGraph) -> Array1<f64> {
        let emb = embed_batch(&self.config, &self.params, &[g]);
        emb.embeddings.row(0).to_owned()
    }

    /// Embeddings of many graphs, processed in fixed-size chunks.
    pub fn embed_all(&self, graphs: &[&EncodedGraph]) -> Array2<f64> {
        let mut out = Array2::zeros((graphs.len(), self.config.embedding_dim()));
        for (c, chunk) in graphs.chunks(EMBED_CHUNK).enumerate() {
            let e = embed_batch(&self.config, &self.params, chunk);
            out.slice_mut(s![c * EMBED_CHUNK..c * EMBED_CHUNK + chunk.len(), ..])
                .assign(&e.embeddings);
        }
        out
    }

    /// `(p12, p21)`: probability that `g1` beats `g2` and the converse.
    pub fn rank_pair(&self, g1: &EncodedGraph, g2: &EncodedGraph) -> (f64, f64) {
        let h1 = self.embed(g1);
        let h2 = self.embed(g2);
        self.pair_probabilities(h1.view(), h2.view())
    }

    pub fn pair_probabilities(&self, h1: ArrayView1<f64>, h2: ArrayView1<f64>) -> (f64, f64) {
        probabilities(self.logit_difference(h1, h2))
    }

    /// Difference of the two softmax logits, `y1 - y2`.
    pub fn logit_difference(&self, h1: ArrayView1<f64>, h2: ArrayView1<f64>) -> f64 {
        head_logit(&self.config, &self.params, h1, h2)
    }

    /// `p(candidate beats best)` for every candidate.
    pub fn score_against_best(&self, candidates: &[&EncodedGraph], best: &EncodedGraph) -> Vec<f64> {
        self.logits_against_best(candidates, best)
            .into_iter()
            .map(|d| probabilities(d).0)
            .collect()
    }

    /// Logit differences behind [`Self::score_against_best`]. Same order as
    /// the probabilities but without saturation, so better for ranking.
    pub fn logits_against_best(&self, candidates: &[&EncodedGraph], best: &EncodedGraph) -> Vec<f64> {
        let hb = self.embed(best);
        let hc = self.embed_all(candidates);
        hc.rows()
            .into_iter()
            .map(|h| self.logit_difference(h, hb.view()))
            .collect()
    }
}

const EMBED_CHUNK: usize = 256;

/// Two-way softmax of a logit difference. The smaller probability is computed
/// directly and the larger as its complement, so the two always sum to one
/// and swapping the sign of `d` swaps them exactly.
pub fn probabilities(d: f64) -> (f64, f64) {
    let small = 1.0 / (1.0 + d.abs().exp());
    let large = 1.0 - small;
    if d >= 0.0 {
        (large, small)
    } else {
        (small, large)
    }
}

/// `-t · ln(clamp(p))`.
pub fn ranking_loss(p: (f64, f64), t: RankTarget) -> f64 {
    let clamp = |v: f64| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let [t1, t2] = t.as_vector();
    -(t1 * clamp(p.0).ln() + t2 * clamp(p.1).ln())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Loss and its derivative with respect to the logit difference.
fn pair_loss(d: f64, t: RankTarget) -> (f64, f64) {
    // With z = sign * d the target probability is sigmoid(z) and the loss is softplus(-z).
    let sign = t.sign();
    let z = sign * d;
    let loss = softplus(-z);
    let lo = -(1.0 - PROB_CLAMP).ln();
    let hi = -PROB_CLAMP.ln();
    if loss <= lo {
        (lo, 0.0)
    } else if loss >= hi {
        (hi, 0.0)
    } else {
        let dz = -1.0 / (1.0 + z.exp());
        (loss, sign * dz)
    }
}

fn head_logit(config: &ModelConfig, params: &Params, h1: ArrayView1<f64>, h2: ArrayView1<f64>) -> f64 {
    let e = config.embedding_dim();
    let wa = params.head_w.slice(s![..e]);
    let wb = params.head_w.slice(s![e..]);
    match config.head {
        HeadKind::Antisymmetric => {
            let y1 = wa.dot(&h1) + wb.dot(&h2) + params.head_b;
            let y2 = wa.dot(&h2) + wb.dot(&h1) + params.head_b;
            y1 - y2
        }
        HeadKind::Concat => wa.dot(&h1) + wb.dot(&h2) + params.head_b,
    }
}

/// Forward activations of a stacked batch, kept for the backward pass.
pub struct BatchForward {
    /// `[start, end)` row range of each graph in the stacked matrices.
    offsets: Vec<(usize, usize)>,
    /// Per-graph propagation matrices (real nodes only).
    a: Vec<Array2<f64>>,
    /// `h[l]` is the input to layer `l`; `h[layers]` the last output.
    h: Vec<Array2<f64>>,
    pub embeddings: Array2<f64>,
}

/// Stacks the real-node rows of every graph and runs the GCN layers.
///
/// `H <- relu(Â H W)` per layer, with `H W` computed for the whole stack
/// and `Â` applied block by block.
pub fn embed_batch(config: &ModelConfig, params: &Params, graphs: &[&EncodedGraph]) -> BatchForward {
    let mut offsets = Vec::with_capacity(graphs.len());
    let mut total = 0;
    for g in graphs {
        let n = g.nodes();
        offsets.push((total, total + n));
        total += n;
    }
    let a: Vec<Array2<f64>> = graphs.iter().map(|g| g.a_real().to_owned()).collect();
    let mut h0 = Array2::zeros((total, FEATURES));
    for (g, &(lo, hi)) in graphs.iter().zip(&offsets) {
        h0.slice_mut(s![lo..hi, ..]).assign(&g.x_real());
    }
    let mut h = Vec::with_capacity(config.layers + 1);
    h.push(h0);
    for w in &params.gcn {
        let p = h.last().expect("input layer").dot(w);
        let mut z = Array2::zeros(p.dim());
        for (ag, &(lo, hi)) in a.iter().zip(&offsets) {
            let block = ag.dot(&p.slice(s![lo..hi, ..]));
            z.slice_mut(s![lo..hi, ..]).assign(&block);
        }
        z.mapv_inplace(|v| v.max(0.0));
        h.push(z);
    }
    let units = config.units;
    let mut embeddings = Array2::zeros((graphs.len(), config.embedding_dim()));
    for (gi, &(lo, hi)) in offsets.iter().enumerate() {
        let mut row = embeddings.row_mut(gi);
        match config.readout {
            Readout::Final => {
                let last = &h[config.layers];
                row.assign(&mean_rows(last, lo, hi));
            }
            Readout::DenseSkip => {
                for l in 0..config.layers {
                    row.slice_mut(s![l * units..(l + 1) * units])
                        .assign(&mean_rows(&h[l + 1], lo, hi));
                }
            }
        }
    }
    BatchForward {
        offsets,
        a,
        h,
        embeddings,
    }
}

fn mean_rows(m: &Array2<f64>, lo: usize, hi: usize) -> Array1<f64> {
    let n = (hi - lo) as f64;
    m.slice(s![lo..hi, ..]).sum_axis(Axis(0)) / n
}

/// Backpropagates `d_emb` (one row per graph) through the GCN into `grad`.
pub fn backward_batch(
    config: &ModelConfig,
    params: &Params,
    fwd: &BatchForward,
    d_emb: &Array2<f64>,
    grad: &mut Params,
) {
    let units = config.units;
    let total = fwd.h[0].nrows();
    // Gradient flowing into the output of each layer from the readout.
    let pooled_grad = |layer_out: usize| -> Option<Array2<f64>> {
        let block = match config.readout {
            Readout::Final if layer_out == config.layers => 0..units,
            Readout::DenseSkip => (layer_out - 1) * units..layer_out * units,
            _ => return None,
        };
        let mut d = Array2::zeros((total, units));
        for (gi, &(lo, hi)) in fwd.offsets.iter().enumerate() {
            let scaled = d_emb.slice(s![gi, block.clone()]).to_owned() / (hi - lo) as f64;
            d.slice_mut(s![lo..hi, ..])
                .rows_mut()
                .into_iter()
                .for_each(|mut r| r.assign(&scaled));
        }
        Some(d)
    };

    let mut d_out =
        pooled_grad(config.layers).expect("readout always covers the final layer");
    for l in (0..config.layers).rev() {
        // d_out: gradient w.r.t. h[l + 1] = relu(z_l)
        Zip::from(&mut d_out)
            .and(&fwd.h[l + 1])
            .for_each(|d, &out| {
                if out <= 0.0 {
                    *d = 0.0;
                }
            });
        let mut g = Array2::zeros(d_out.dim());
        for (ag, &(lo, hi)) in fwd.a.iter().zip(&fwd.offsets) {
            let block = ag.t().dot(&d_out.slice(s![lo..hi, ..]));
            g.slice_mut(s![lo..hi, ..]).assign(&block);
        }
        grad.gcn[l] += &fwd.h[l].t().dot(&g);
        if l > 0 {
            d_out = g.dot(&params.gcn[l].t());
            if let Some(extra) = pooled_grad(l) {
                d_out += &extra;
            }
        }
    }
}

/// Mean pair loss plus `weight_decay / 2 * ||θ||²`, with the exact gradient.
pub fn loss_and_grad(
    config: &ModelConfig,
    params: &Params,
    weight_decay: f64,
    graphs: &[EncodedGraph],
    batch: &[PairLabel],
) -> (f64, Params) {
    let mut grad = Params::zeros(config);
    if batch.is_empty() {
        return (0.5 * weight_decay * params.sum_squares(), with_decay(grad, params, weight_decay));
    }
    // Each distinct graph is embedded once per batch.
    let mut slot = std::collections::HashMap::new();
    let mut used: Vec<&EncodedGraph> = Vec::new();
    for p in batch {
        for idx in [p.first, p.second] {
            slot.entry(idx).or_insert_with(|| {
                used.push(&graphs[idx]);
                used.len() - 1
            });
        }
    }
    let fwd = embed_batch(config, params, &used);
    let e = config.embedding_dim();
    let mut d_emb = Array2::<f64>::zeros((used.len(), e));
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let (wa, wb) = (
        params.head_w.slice(s![..e]).to_owned(),
        params.head_w.slice(s![e..]).to_owned(),
    );
    for p in batch {
        let (i, j) = (slot[&p.first], slot[&p.second]);
        let h1 = fwd.embeddings.row(i);
        let h2 = fwd.embeddings.row(j);
        let d = head_logit(config, params, h1, h2);
        let (loss, dd) = pair_loss(d, p.target);
        total += loss;
        if dd == 0.0 {
            continue;
        }
        let c = dd * scale;
        match config.head {
            HeadKind::Antisymmetric => {
                let diff = &h1 - &h2;
                grad.head_w.slice_mut(s![..e]).scaled_add(c, &diff);
                grad.head_w.slice_mut(s![e..]).scaled_add(-c, &diff);
                let dw = &wa - &wb;
                d_emb.row_mut(i).scaled_add(c, &dw);
                d_emb.row_mut(j).scaled_add(-c, &dw);
            }
            HeadKind::Concat => {
                grad.head_w.slice_mut(s![..e]).scaled_add(c, &h1);
                grad.head_w.slice_mut(s![e..]).scaled_add(c, &h2);
                grad.head_b += c;
                d_emb.row_mut(i).scaled_add(c, &wa);
                d_emb.row_mut(j).scaled_add(c, &wb);
            }
        }
    }
    backward_batch(config, params, &fwd, &d_emb, &mut grad);
    let objective = total * scale + 0.5 * weight_decay * params.sum_squares();
    (objective, with_decay(grad, params, weight_decay))
}

fn with_decay(mut grad: Params, params: &Params, weight_decay: f64) -> Params {
    grad.scaled_add(weight_decay, params);
    grad
}

/// Objective only; used by finite-difference checks.
pub fn objective(
    config: &ModelConfig,
    params: &Params,
    weight_decay: f64,
    graphs: &[EncodedGraph],
    batch: &[PairLabel],
) -> f64 {
    let refs: Vec<&EncodedGraph> = graphs.iter().collect();
    let fwd = embed_batch(config, params, &refs);
    let total: f64 = batch
        .iter()
        .map(|p| {
            let d = head_logit(
                config,
                params,
                fwd.embeddings.row(p.first),
                fwd.embeddings.row(p.second),
            );
            pair_loss(d, p.target).0
        })
        .sum();
    let mean = if batch.is_empty() { 0.0 } else { total / batch.len() as f64 };
    mean + 0.5 * weight_decay * params.sum_squares()
}
