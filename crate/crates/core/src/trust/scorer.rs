//! Transformer trust scorer with hand-written backpropagation.
//!
//! Pre-norm encoder over the valid (non-padding) tail of a sequence:
//!
//! ```text
//! h0  = norm(x) W_in + b_in + P[seq_len - L ..]
//! for each layer:
//!     h = h + Attn(LN1(h))
//!     h = h + W2 gelu(W1 LN2(h) + b1) + b2
//! z   = mean_rows(h) . w_head + b_head
//! out = sigmoid(z)
//! ```
//!
//! Padding positions are never computed. Because pre-norm blocks are
//! row-wise except for attention, and padded keys are masked out of
//! attention, dropping the padded rows is exactly equivalent to masking
//! them.
//!
//! All parameters live in one flat buffer; [`Layout`] maps tensor indices
//! to `(rows, cols)` views. The same layout orders gradients, Adam state
//! and the model file.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::linalg::general_mat_mul;
use ndarray::{
    s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, LinalgScalar,
    ScalarOperand,
};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FEATURE_DIM, SEQ_LEN};

/// Score returned for a sequence with no observed intervals.
pub const COLD_START_SCORE: f64 = 0.8;

const LN_EPS: f64 = 1e-5;

pub trait Real:
    LinalgScalar
    + Float
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Send
    + Sync
{
    fn c(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn c(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn c(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub input_dim: usize,
    pub seq_len: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            layers: 4,
            model_dim: 128,
            heads: 4,
            ff_dim: 896,
            input_dim: FEATURE_DIM,
            seq_len: SEQ_LEN,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.layers,
            self.model_dim,
            self.heads,
            self.ff_dim,
            self.input_dim,
            self.seq_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("scorer dimensions must be positive".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

// Tensor indices.
const IN_W: usize = 0;
const IN_B: usize = 1;
const POS: usize = 2;
const LAYER0: usize = 3;
const PER_LAYER: usize = 16;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const W1: usize = 12;
const B1: usize = 13;
const W2: usize = 14;
const B2: usize = 15;

fn li(layer: usize, t: usize) -> usize {
    LAYER0 + PER_LAYER * layer + t
}

/// Offsets of every tensor in the flat parameter buffer. Vectors are stored
/// as `(1, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    total: usize,
    head_w: usize,
    head_b: usize,
}

impl Layout {
    pub fn new(c: &ScorerConfig) -> Layout {
        let (d, ff) = (c.model_dim, c.ff_dim);
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut push = |n: String, s: (usize, usize)| {
            names.push(n);
            shapes.push(s);
        };
        push("in_w".into(), (c.input_dim, d));
        push("in_b".into(), (1, d));
        push("pos".into(), (c.seq_len, d));
        for l in 0..c.layers {
            let per: [(&str, (usize, usize)); PER_LAYER] = [
                ("ln1_g", (1, d)),
                ("ln1_b", (1, d)),
                ("wq", (d, d)),
                ("bq", (1, d)),
                ("wk", (d, d)),
                ("bk", (1, d)),
                ("wv", (d, d)),
                ("bv", (1, d)),
                ("wo", (d, d)),
                ("bo", (1, d)),
                ("ln2_g", (1, d)),
                ("ln2_b", (1, d)),
                ("w1", (d, ff)),
                ("b1", (1, ff)),
                ("w2", (ff, d)),
                ("b2", (1, d)),
            ];
            for (n, s) in per {
                push(format!("layer{l}.{n}"), s);
            }
        }
        push("head_w".into(), (d, 1));
        push("head_b".into(), (1, 1));
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for &(r, c) in &shapes {
            offsets.push(total);
            total += r * c;
        }
        let head_w = shapes.len() - 2;
        Layout {
            names,
            shapes,
            offsets,
            total,
            head_w,
            head_b: head_w + 1,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn tensor_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    /// Flat index range of tensor `idx`.
    pub fn range(&self, idx: usize) -> std::ops::Range<usize> {
        let (r, c) = self.shapes[idx];
        self.offsets[idx]..self.offsets[idx] + r * c
    }

    fn m<'a, T>(&self, buf: &'a [T], idx: usize) -> ArrayView2<'a, T> {
        ArrayView2::from_shape(self.shapes[idx], &buf[self.range(idx)]).expect("layout shape")
    }

    fn v<'a, T>(&self, buf: &'a [T], idx: usize) -> ArrayView1<'a, T> {
        ArrayView1::from(&buf[self.range(idx)])
    }

    fn m_mut<'a, T>(&self, buf: &'a mut [T], idx: usize) -> ArrayViewMut2<'a, T> {
        let r = self.range(idx);
        ArrayViewMut2::from_shape(self.shapes[idx], &mut buf[r]).expect("layout shape")
    }

    fn v_mut<'a, T>(&self, buf: &'a mut [T], idx: usize) -> ArrayViewMut1<'a, T> {
        let r = self.range(idx);
        ArrayViewMut1::from(&mut buf[r])
    }
}

/// A packed batch: the valid rows of every sequence stacked vertically,
/// already input-normalized.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    x: Array2<T>,
    lens: Vec<usize>,
    offsets: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }
}

struct LnCache<T> {
    xhat: Array2<T>,
    rstd: Array1<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    a: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// Attention probabilities, sequence-major then head.
    probs: Vec<Array2<T>>,
    o: Array2<T>,
    ln2: LnCache<T>,
    c: Array2<T>,
    u: Array2<T>,
    g: Array2<T>,
}

struct Forward<T> {
    layers: Vec<LayerCache<T>>,
    pooled: Array2<T>,
    logits: Array1<T>,
}

/// Scorer weights plus the fixed input normalization learned from the
/// training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer<T> {
    config: ScorerConfig,
    layout: Layout,
    params: Vec<T>,
    norm_shift: Vec<T>,
    norm_scale: Vec<T>,
}

impl<T: Real> Scorer<T> {
    /// All-zero weights, unit layer-norm gains, identity normalization.
    pub fn zeros(config: ScorerConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![T::zero(); layout.total];
        for l in 0..config.layers {
            for t in [LN1_G, LN2_G] {
                layout.v_mut(&mut params, li(l, t)).fill(T::one());
            }
        }
        Ok(Scorer {
            config,
            layout,
            params,
            norm_shift: vec![T::zero(); config.input_dim],
            norm_scale: vec![T::one(); config.input_dim],
        })
    }

    /// Random initialization: Xavier-uniform input projection, small
    /// normal elsewhere, residual output projections scaled by depth.
    pub fn init<R: Rng + ?Sized>(config: ScorerConfig, rng: &mut R) -> Result<Self> {
        let mut s = Self::zeros(config)?;
        let std = 0.02;
        let resid_std = std / (2.0 * config.layers as f64).sqrt();
        let normal = |sd: f64| Normal::new(0.0, sd).expect("positive std");
        let fill = |s: &mut Self, idx: usize, dist: &Normal<f64>, rng: &mut R| {
            for p in &mut s.params[s.layout.range(idx)] {
                *p = T::c(dist.sample(rng));
            }
        };
        let a = (6.0 / (config.input_dim + config.model_dim) as f64).sqrt();
        for i in s.layout.range(IN_W) {
            s.params[i] = T::c(rng.random_range(-a..a));
        }
        fill(&mut s, POS, &normal(std), rng);
        for l in 0..config.layers {
            for t in [WQ, WK, WV, W1] {
                fill(&mut s, li(l, t), &normal(std), rng);
            }
            for t in [WO, W2] {
                fill(&mut s, li(l, t), &normal(resid_std), rng);
            }
        }
        let hw = s.layout.head_w;
        fill(&mut s, hw, &normal(std), rng);
        Ok(s)
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn norm(&self) -> (&[T], &[T]) {
        (&self.norm_shift, &self.norm_scale)
    }

    pub fn set_norm(&mut self, shift: Vec<T>, scale: Vec<T>) -> Result<()> {
        let n = self.config.input_dim;
        if shift.len() != n || scale.len() != n {
            return Err(Error::InvalidArgument("normalization length mismatch".into()));
        }
        if scale.iter().any(|s| !(s.f64() > 0.0)) || shift.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("normalization must be finite, scale > 0".into()));
        }
        self.norm_shift = shift;
        self.norm_scale = scale;
        Ok(())
    }

    /// Builds a scorer from raw parts, checking sizes and finiteness.
    pub fn from_parts(
        config: ScorerConfig,
        params: Vec<T>,
        shift: Vec<T>,
        scale: Vec<T>,
    ) -> Result<Self> {
        let mut s = Self::zeros(config)?;
        if params.len() != s.params.len() {
            return Err(Error::ModelFormat(format!(
                "expected {} parameters, found {}",
                s.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("scorer weights"));
        }
        s.params = params;
        s.set_norm(shift, scale)?;
        Ok(s)
    }

    pub fn cast<U: Real>(&self) -> Scorer<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::c(x.f64())).collect::<Vec<U>>();
        Scorer {
            config: self.config,
            layout: self.layout.clone(),
            params: conv(&self.params),
            norm_shift: conv(&self.norm_shift),
            norm_scale: conv(&self.norm_scale),
        }
    }

    /// Packs the given sequences (each `L x input_dim`, oldest first) into a
    /// batch. Every sequence must have `1..=seq_len` rows.
    pub fn batch(&self, seqs: &[ArrayView2<'_, f64>]) -> Result<Batch<T>> {
        let din = self.config.input_dim;
        let total: usize = seqs.iter().map(|s| s.nrows()).sum();
        let mut x = Array2::zeros((total, din));
        let mut lens = Vec::with_capacity(seqs.len());
        let mut offsets = Vec::with_capacity(seqs.len());
        let mut off = 0;
        for seq in seqs {
            let l = seq.nrows();
            if l == 0 || l > self.config.seq_len || seq.ncols() != din {
                return Err(Error::InvalidArgument(format!(
                    "sequence shape {:?} incompatible with scorer (seq_len {}, input_dim {din})",
                    seq.dim(),
                    self.config.seq_len
                )));
            }
            for (r, row) in seq.rows().into_iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::NonFinite("scorer input"));
                    }
                    x[[off + r, j]] = (T::c(v) - self.norm_shift[j]) / self.norm_scale[j];
                }
            }
            lens.push(l);
            offsets.push(off);
            off += l;
        }
        Ok(Batch { x, lens, offsets })
    }

    pub fn batch_sequences(&self, seqs: &[&FeatureSequence]) -> Result<Batch<T>> {
        let arrays: Vec<Array2<f64>> = seqs.iter().map(|s| valid_rows(s)).collect();
        let views: Vec<_> = arrays.iter().map(|a| a.view()).collect();
        self.batch(&views)
    }

    fn forward(&self, b: &Batch<T>) -> Forward<T> {
        let (lay, p) = (&self.layout, &self.params[..]);
        let cfg = &self.config;
        let d = cfg.model_dim;
        let dh = cfg.head_dim();
        let scale = T::c(1.0 / (dh as f64).sqrt());

        let mut h = b.x.dot(&lay.m(p, IN_W));
        h += &lay.v(p, IN_B);
        let pos = lay.m(p, POS);
        for (&off, &l) in b.offsets.iter().zip(&b.lens) {
            let mut rows = h.slice_mut(s![off..off + l, ..]);
            rows += &pos.slice(s![cfg.seq_len - l.., ..]);
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for layer in 0..cfg.layers {
            let (a, ln1) = ln_forward(&h, lay.v(p, li(layer, LN1_G)), lay.v(p, li(layer, LN1_B)));
            let proj = |w: usize, bias: usize| {
                let mut y = a.dot(&lay.m(p, li(layer, w)));
                y += &lay.v(p, li(layer, bias));
                y
            };
            let q = proj(WQ, BQ);
            let k = proj(WK, BK);
            let v = proj(WV, BV);
            let mut o = Array2::zeros((h.nrows(), d));
            let mut probs = Vec::with_capacity(b.len() * cfg.heads);
            for (&off, &l) in b.offsets.iter().zip(&b.lens) {
                for hd in 0..cfg.heads {
                    let cols = s![off..off + l, hd * dh..(hd + 1) * dh];
                    let mut sc = q.slice(cols).dot(&k.slice(cols).t());
                    sc *= scale;
                    softmax_rows(&mut sc);
                    o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
                    probs.push(sc);
                }
            }
            let mut attn = o.dot(&lay.m(p, li(layer, WO)));
            attn += &lay.v(p, li(layer, BO));
            h += &attn;

            let (c, ln2) = ln_forward(&h, lay.v(p, li(layer, LN2_G)), lay.v(p, li(layer, LN2_B)));
            let mut u = c.dot(&lay.m(p, li(layer, W1)));
            u += &lay.v(p, li(layer, B1));
            let g = u.mapv(gelu);
            let mut f = g.dot(&lay.m(p, li(layer, W2)));
            f += &lay.v(p, li(layer, B2));
            h += &f;
            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                ln2,
                c,
                u,
                g,
            });
        }

        let mut pooled = Array2::zeros((b.len(), d));
        for (i, (&off, &l)) in b.offsets.iter().zip(&b.lens).enumerate() {
            let mean = h.slice(s![off..off + l, ..]).sum_axis(Axis(0)) / T::c(l as f64);
            pooled.row_mut(i).assign(&mean);
        }
        let hw = lay.m(p, lay.head_w);
        let mut logits = pooled.dot(&hw).column(0).to_owned();
        logits += p[lay.range(lay.head_b).start];
        Forward {
            layers,
            pooled,
            logits,
        }
    }

    /// Pre-sigmoid outputs for a batch.
    pub fn logits(&self, b: &Batch<T>) -> Array1<T> {
        self.forward(b).logits
    }

    /// Trust scores in (0, 1) for a batch.
    pub fn predict(&self, b: &Batch<T>) -> Vec<f64> {
        self.logits(b).iter().map(|z| sigmoid(z.f64())).collect()
    }

    /// Scores one feature sequence. An empty sequence gets the cold-start
    /// score without evaluating the network.
    pub fn score(&self, seq: &FeatureSequence) -> Result<f64> {
        Ok(self.score_many(&[seq])?[0])
    }

    /// Scores several sequences at once, in chunks to bound memory.
    pub fn score_many(&self, seqs: &[&FeatureSequence]) -> Result<Vec<f64>> {
        let mut out = vec![COLD_START_SCORE; seqs.len()];
        let live: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].valid_len > 0).collect();
        for chunk in live.chunks(16) {
            let batch: Vec<&FeatureSequence> = chunk.iter().map(|&i| seqs[i]).collect();
            let b = self.batch_sequences(&batch)?;
            for (&i, s) in chunk.iter().zip(self.predict(&b)) {
                out[i] = s;
            }
        }
        Ok(out)
    }

    /// Mean binary cross-entropy with logits (label 1 = trustworthy).
    pub fn loss(&self, b: &Batch<T>, labels: &[T]) -> T {
        bce(&self.logits(b), labels).0
    }

    /// Loss plus gradient, accumulated into `grad` (same layout as params).
    pub fn loss_and_grad(&self, b: &Batch<T>, labels: &[T], grad: &mut [T]) -> T {
        assert_eq!(labels.len(), b.len());
        assert_eq!(grad.len(), self.params.len());
        let fw = self.forward(b);
        let (loss, dz) = bce(&fw.logits, labels);
        self.backward(b, &fw, &dz, grad);
        loss
    }

    fn backward(&self, b: &Batch<T>, fw: &Forward<T>, dz: &Array1<T>, grad: &mut [T]) {
        let (lay, p) = (&self.layout, &self.params[..]);
        let cfg = &self.config;
        let d = cfg.model_dim;
        let dh = cfg.head_dim();
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let one = T::one();

        // Head.
        {
            let dz2 = dz.view().insert_axis(Axis(1));
            general_mat_mul(one, &fw.pooled.t(), &dz2, one, &mut lay.m_mut(grad, lay.head_w));
            let hb = lay.range(lay.head_b).start;
            grad[hb] += dz.sum();
        }
        let hw = lay.v(p, lay.head_w);
        let mut dh_rows = Array2::zeros((b.rows(), d));
        for (i, (&off, &l)) in b.offsets.iter().zip(&b.lens).enumerate() {
            let g = &hw * (dz[i] / T::c(l as f64));
            for mut row in dh_rows.slice_mut(s![off..off + l, ..]).rows_mut() {
                row.assign(&g);
            }
        }

        for layer in (0..cfg.layers).rev() {
            let cache = &fw.layers[layer];

            // Feed-forward branch.
            let df = &dh_rows;
            general_mat_mul(one, &cache.g.t(), df, one, &mut lay.m_mut(grad, li(layer, W2)));
            lay.v_mut(grad, li(layer, B2)).scaled_add(one, &df.sum_axis(Axis(0)));
            let mut du = df.dot(&lay.m(p, li(layer, W2)).t());
            du.zip_mut_with(&cache.u, |g, &u| *g *= gelu_grad(u));
            general_mat_mul(one, &cache.c.t(), &du, one, &mut lay.m_mut(grad, li(layer, W1)));
            lay.v_mut(grad, li(layer, B1)).scaled_add(one, &du.sum_axis(Axis(0)));
            let dc = du.dot(&lay.m(p, li(layer, W1)).t());
            let dx = ln_backward(&dc, &cache.ln2, lay.v(p, li(layer, LN2_G)), grad, lay, li(layer, LN2_G), li(layer, LN2_B));
            dh_rows += &dx;

            // Attention branch.
            let dattn = &dh_rows;
            general_mat_mul(one, &cache.o.t(), dattn, one, &mut lay.m_mut(grad, li(layer, WO)));
            lay.v_mut(grad, li(layer, BO)).scaled_add(one, &dattn.sum_axis(Axis(0)));
            let d_o = dattn.dot(&lay.m(p, li(layer, WO)).t());
            let mut dq = Array2::zeros(d_o.raw_dim());
            let mut dk = Array2::zeros(d_o.raw_dim());
            let mut dv = Array2::zeros(d_o.raw_dim());
            let mut pi = 0;
            for (&off, &l) in b.offsets.iter().zip(&b.lens) {
                for hd in 0..cfg.heads {
                    let cols = s![off..off + l, hd * dh..(hd + 1) * dh];
                    let probs = &cache.probs[pi];
                    pi += 1;
                    let doh = d_o.slice(cols);
                    dv.slice_mut(cols).assign(&probs.t().dot(&doh));
                    let dp = doh.dot(&cache.v.slice(cols).t());
                    // Softmax backward, folded with the 1/sqrt(dh) scale.
                    let mut ds = &dp * probs;
                    let rowsum = ds.sum_axis(Axis(1));
                    for ((mut row, prow), &rs) in
                        ds.rows_mut().into_iter().zip(probs.rows()).zip(rowsum.iter())
                    {
                        row.scaled_add(-rs, &prow);
                    }
                    ds *= scale;
                    dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
                    dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
                }
            }
            let mut da = Array2::zeros(d_o.raw_dim());
            for (dy, w, bias) in [(&dq, WQ, BQ), (&dk, WK, BK), (&dv, WV, BV)] {
                general_mat_mul(one, &cache.a.t(), dy, one, &mut lay.m_mut(grad, li(layer, w)));
                lay.v_mut(grad, li(layer, bias)).scaled_add(one, &dy.sum_axis(Axis(0)));
                general_mat_mul(one, dy, &lay.m(p, li(layer, w)).t(), one, &mut da);
            }
            let dx = ln_backward(&da, &cache.ln1, lay.v(p, li(layer, LN1_G)), grad, lay, li(layer, LN1_G), li(layer, LN1_B));
            dh_rows += &dx;
        }

        // Input projection and positional embedding.
        general_mat_mul(one, &b.x.t(), &dh_rows, one, &mut lay.m_mut(grad, IN_W));
        lay.v_mut(grad, IN_B).scaled_add(one, &dh_rows.sum_axis(Axis(0)));
        let mut dpos = lay.m_mut(grad, POS);
        for (&off, &l) in b.offsets.iter().zip(&b.lens) {
            let mut rows = dpos.slice_mut(s![cfg.seq_len - l.., ..]);
            rows += &dh_rows.slice(s![off..off + l, ..]);
        }
    }
}

/// Valid rows of a feature sequence as an `L x FEATURE_DIM` array.
pub fn valid_rows(seq: &FeatureSequence) -> Array2<f64> {
    let valid = seq.valid();
    let mut a = Array2::zeros((valid.len(), FEATURE_DIM));
    for (r, v) in valid.iter().enumerate() {
        for (j, &x) in v.0.iter().enumerate() {
            a[[r, j]] = x;
        }
    }
    a
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean BCE-with-logits and its gradient w.r.t. each logit.
fn bce<T: Real>(z: &Array1<T>, y: &[T]) -> (T, Array1<T>) {
    let n = T::c(z.len() as f64);
    let mut loss = T::zero();
    let mut dz = Array1::zeros(z.len());
    for i in 0..z.len() {
        let zi = z[i];
        loss += zi.max(T::zero()) - y[i] * zi + (-zi.abs()).exp().ln_1p();
        dz[i] = (T::c(sigmoid(zi.f64())) - y[i]) / n;
    }
    (loss / n, dz)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<T: Real>(u: T) -> T {
    let (c, a, half) = (T::c(GELU_C), T::c(GELU_A), T::c(0.5));
    half * u * (T::one() + (c * (u + a * u * u * u)).tanh())
}

fn gelu_grad<T: Real>(u: T) -> T {
    let (c, a, half) = (T::c(GELU_C), T::c(GELU_A), T::c(0.5));
    let t = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::c(3.0) * a * u * u)
}

fn softmax_rows<T: Real>(m: &mut Array2<T>) {
    for mut row in m.rows_mut() {
        let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn ln_forward<T: Real>(
    x: &Array2<T>,
    g: ArrayView1<'_, T>,
    b: ArrayView1<'_, T>,
) -> (Array2<T>, LnCache<T>) {
    let n = T::c(x.ncols() as f64);
    let eps = T::c(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / n;
        row -= mean;
        let var = row.fold(T::zero(), |acc, &v| acc + v * v) / n;
        let rs = T::one() / (var + eps).sqrt();
        row *= rs;
        *r = rs;
    }
    let mut y = &xhat * &g;
    y += &b;
    (y, LnCache { xhat, rstd })
}

fn ln_backward<T: Real>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    g: ArrayView1<'_, T>,
    grad: &mut [T],
    lay: &Layout,
    g_idx: usize,
    b_idx: usize,
) -> Array2<T> {
    let one = T::one();
    lay.v_mut(grad, g_idx)
        .scaled_add(one, &(dy * &cache.xhat).sum_axis(Axis(0)));
    lay.v_mut(grad, b_idx).scaled_add(one, &dy.sum_axis(Axis(0)));
    let n = T::c(dy.ncols() as f64);
    let mut dx = dy * &g;
    for ((mut row, xh), &rs) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let m1 = row.sum() / n;
        let m2 = row.iter().zip(xh.iter()).fold(T::zero(), |a, (&d, &x)| a + d * x) / n;
        row.zip_mut_with(&xh, |d, &x| *d = rs * (*d - m1 - x * m2));
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RngStreams;
    use crate::world::AgentId;
    use crate::features::FeatureVector;

    fn small() -> ScorerConfig {
        ScorerConfig {
            layers: 2,
            model_dim: 8,
            heads: 2,
            ff_dim: 12,
            input_dim: 3,
            seq_len: 6,
        }
    }

    fn rand_seq<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn default_budget() {
        let n = ScorerConfig::default().param_count();
        assert_eq!(n, 1_197_185);
        assert!((1_000_000..=1_400_000).contains(&n));
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ScorerConfig {
            heads: 3,
            ..Default::default()
        };
        assert!(Scorer::<f64>::zeros(cfg).is_err());
    }

    #[test]
    fn zero_network_scores_half() {
        let s = Scorer::<f64>::zeros(ScorerConfig::default()).unwrap();
        let seq = FeatureSequence::from_history(
            AgentId(0),
            &[FeatureVector([3.0, 1.0, 2.0, 0.5, 0.1, 4.0, 0.2]); 10],
        );
        assert_eq!(s.score(&seq).unwrap(), 0.5);
    }

    #[test]
    fn cold_start_skips_network() {
        let s = Scorer::<f32>::zeros(small()).unwrap();
        let seq = FeatureSequence::from_history(AgentId(0), &[]);
        assert_eq!(s.score(&seq).unwrap(), COLD_START_SCORE);
    }

    #[test]
    fn non_finite_input_rejected() {
        let s = Scorer::<f64>::zeros(ScorerConfig::default()).unwrap();
        let mut h = vec![FeatureVector::QUIET; 3];
        h[1].0[2] = f64::NAN;
        let seq = FeatureSequence::from_history(AgentId(0), &h);
        assert!(s.score(&seq).is_err());
    }

    #[test]
    fn permutation_invariant_without_positions() {
        let mut rng = RngStreams::new(3).stream("training-init");
        let mut s = Scorer::<f64>::init(small(), &mut rng).unwrap();
        let r = s.layout.range(POS);
        s.params[r].fill(0.0);
        let x = rand_seq(5, 3, &mut rng);
        let mut y = x.clone();
        for (dst, src) in [0usize, 3, 1, 4, 2].into_iter().enumerate() {
            y.row_mut(dst).assign(&x.row(src));
        }
        let a = s.predict(&s.batch(&[x.view()]).unwrap())[0];
        let b = s.predict(&s.batch(&[y.view()]).unwrap())[0];
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn batching_matches_single_evaluation() {
        let mut rng = RngStreams::new(4).stream("training-init");
        let s = Scorer::<f64>::init(small(), &mut rng).unwrap();
        let x1 = rand_seq(2, 3, &mut rng);
        let x2 = rand_seq(6, 3, &mut rng);
        let both = s.predict(&s.batch(&[x1.view(), x2.view()]).unwrap());
        let one = s.predict(&s.batch(&[x1.view()]).unwrap())[0];
        let two = s.predict(&s.batch(&[x2.view()]).unwrap())[0];
        assert!((both[0] - one).abs() < 1e-14 && (both[1] - two).abs() < 1e-14);
    }

    #[test]
    fn head_bias_gradient_closed_form() {
        // Zero network: every logit is 0, so dL/db_head = mean(0.5 - y).
        let s = Scorer::<f64>::zeros(small()).unwrap();
        let mut rng = RngStreams::new(5).stream("x");
        let xs: Vec<_> = (0..4).map(|_| rand_seq(3, 3, &mut rng)).collect();
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        let b = s.batch(&views).unwrap();
        let y = [1.0, 1.0, 1.0, 0.0];
        let mut g = vec![0.0; s.param_count()];
        s.loss_and_grad(&b, &y, &mut g);
        let hb = s.layout.range(s.layout.head_b).start;
        assert!((g[hb] - (0.5 - 0.75)).abs() < 1e-15);
    }

    #[test]
    fn first_order_taylor() {
        let mut rng = RngStreams::new(6).stream("training-init");
        let mut s = Scorer::<f64>::init(small(), &mut rng).unwrap();
        let xs: Vec<_> = (0..3).map(|i| rand_seq(2 + i, 3, &mut rng)).collect();
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        let b = s.batch(&views).unwrap();
        let y = [1.0, 0.0, 1.0];
        let mut g = vec![0.0; s.param_count()];
        let l0 = s.loss_and_grad(&b, &y, &mut g);
        let i = s.layout.range(li(1, W1)).start + 5;
        let h = 1e-6;
        s.params[i] += h;
        let l1 = s.loss(&b, &y);
        assert!(((l1 - l0) - g[i] * h).abs() < 1e-10);
    }

    #[test]
    fn cast_roundtrip_f32() {
        let mut rng = RngStreams::new(7).stream("training-init");
        let s = Scorer::<f32>::init(small(), &mut rng).unwrap();
        assert_eq!(s.cast::<f64>().cast::<f32>(), s);
    }
}
