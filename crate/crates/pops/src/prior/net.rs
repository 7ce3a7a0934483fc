//! Transformer denoiser with hand-written backprop.
//!
//! Parameters live in one flat `f64` buffer described by a layout table;
//! this keeps the optimizer, checkpointing, freeze masks, and
//! finite-difference probing trivial. All math is f64; sequence length is
//! fixed at 79 tokens.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    AttentionKind, PriorConfig, TimeEmbeddingKind, TokenSequence, OUTPUT_INDEX, SEQ_LEN, TIME_INDEX,
};
use crate::embedding::{Embedding, SpaceTag};
use crate::schedule::Denoiser;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParamGroup {
    Input,
    Time,
    Pos,
    Layer(usize),
    Output,
}

#[derive(Debug, Clone)]
pub struct ParamInfo {
    pub name: String,
    pub group: ParamGroup,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct PriorNet {
    config: PriorConfig,
    layout: Vec<ParamInfo>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

fn build_layout(cfg: &PriorConfig) -> Vec<ParamInfo> {
    let (d, w) = (cfg.d, cfg.width);
    let mut layout = Vec::new();
    let mut off = 0usize;
    let mut push = |name: String, group: ParamGroup, rows: usize, cols: usize| {
        layout.push(ParamInfo { name, group, offset: off, rows, cols });
        off += rows * cols;
    };
    push("input.w".into(), ParamGroup::Input, d, w);
    push("input.b".into(), ParamGroup::Input, 1, w);
    push("time.freq_w".into(), ParamGroup::Time, 1, d);
    push("time.freq_b".into(), ParamGroup::Time, 1, d);
    push("time.w1".into(), ParamGroup::Time, d, w);
    push("time.b1".into(), ParamGroup::Time, 1, w);
    push("time.w2".into(), ParamGroup::Time, w, w);
    push("time.b2".into(), ParamGroup::Time, 1, w);
    push("pos".into(), ParamGroup::Pos, SEQ_LEN, w);
    for i in 0..cfg.layers {
        let g = ParamGroup::Layer(i);
        push(format!("l{i}.ln1.g"), g, 1, w);
        push(format!("l{i}.ln1.b"), g, 1, w);
        push(format!("l{i}.wq"), g, w, w);
        push(format!("l{i}.bq"), g, 1, w);
        push(format!("l{i}.wk"), g, w, w);
        push(format!("l{i}.bk"), g, 1, w);
        push(format!("l{i}.wv"), g, w, w);
        push(format!("l{i}.bv"), g, 1, w);
        push(format!("l{i}.wo"), g, w, w);
        push(format!("l{i}.bo"), g, 1, w);
        push(format!("l{i}.ln2.g"), g, 1, w);
        push(format!("l{i}.ln2.b"), g, 1, w);
        push(format!("l{i}.mlp.w1"), g, w, 4 * w);
        push(format!("l{i}.mlp.b1"), g, 1, 4 * w);
        push(format!("l{i}.mlp.w2"), g, 4 * w, w);
        push(format!("l{i}.mlp.b2"), g, 1, w);
    }
    push("ln_f.g".into(), ParamGroup::Output, 1, w);
    push("ln_f.b".into(), ParamGroup::Output, 1, w);
    push("out.w".into(), ParamGroup::Output, w, d);
    push("out.b".into(), ParamGroup::Output, 1, d);
    layout
}

impl PriorNet {
    pub fn init(config: &PriorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = build_layout(config);
        let total: usize = layout.iter().map(|p| p.len()).sum();
        let mut data = vec![0.0f64; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        for info in &layout {
            let slice = &mut data[info.offset..info.offset + info.len()];
            let is_gain = info.name.ends_with("ln1.g")
                || info.name.ends_with("ln2.g")
                || info.name == "ln_f.g";
            let is_bias = info.name.ends_with(".b")
                || info.name.contains(".b1")
                || info.name.contains(".b2")
                || info.name.ends_with("bq")
                || info.name.ends_with("bk")
                || info.name.ends_with("bv")
                || info.name.ends_with("bo");
            if is_gain {
                slice.fill(1.0);
            } else if is_bias || info.name == "time.freq_b" {
                slice.fill(0.0);
            } else if info.name == "time.freq_w" {
                // Learned-frequency init spans a few octaves.
                for (k, v) in slice.iter_mut().enumerate() {
                    *v = 1.0 + k as f64;
                }
            } else {
                for v in slice.iter_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
        }
        let index = layout
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(PriorNet { config: config.clone(), layout, index, data })
    }

    /// Rebuilds a net from a flat parameter buffer (checkpoint load).
    pub fn from_flat(config: &PriorConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = build_layout(config);
        let total: usize = layout.iter().map(|p| p.len()).sum();
        if data.len() != total {
            return Err(Error::Config(format!(
                "parameter buffer length {} does not match layout {}",
                data.len(),
                total
            )));
        }
        let index = layout
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(PriorNet { config: config.clone(), layout, index, data })
    }

    pub fn config(&self) -> &PriorConfig {
        &self.config
    }

    pub fn layout(&self) -> &[ParamInfo] {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    fn idx(&self, name: &str) -> usize {
        self.index[name]
    }

    fn view(&self, name: &str) -> ArrayView2<'_, f64> {
        let info = &self.layout[self.idx(name)];
        ArrayView2::from_shape((info.rows, info.cols), &self.data[info.offset..info.offset + info.len()])
            .expect("layout shape")
    }

    fn row(&self, name: &str) -> Array1<f64> {
        self.view(name).row(0).to_owned()
    }

    /// Sinusoidal or learned timestep features of dimension d.
    fn time_features(&self, t: usize) -> (Array1<f64>, Option<Array1<f64>>) {
        let d = self.config.d;
        match self.config.time_embedding_kind {
            TimeEmbeddingKind::Sinusoidal => {
                let mut f = Array1::zeros(d);
                let half = d / 2;
                for j in 0..half {
                    let freq = (10000f64).powf(-2.0 * j as f64 / d as f64);
                    f[2 * j] = (t as f64 * freq).sin();
                    f[2 * j + 1] = (t as f64 * freq).cos();
                }
                if d % 2 == 1 {
                    f[d - 1] = (t as f64).sin();
                }
                (f, None)
            }
            TimeEmbeddingKind::Learned => {
                let fw = self.row("time.freq_w");
                let fb = self.row("time.freq_b");
                let tn = t as f64 * 1e-3;
                let u = &fw * tn + &fb;
                let f = u.mapv(f64::sin);
                (f, Some(u))
            }
        }
    }

    pub fn forward(&self, seq: &TokenSequence) -> Result<(Vec<f64>, ForwardCache)> {
        let d = self.config.d;
        if seq.dim() != d {
            return Err(Error::DimMismatch { expected: d, got: seq.dim() });
        }
        for slot in seq.slots() {
            if slot.dim() != d {
                return Err(Error::DimMismatch { expected: d, got: slot.dim() });
            }
        }
        let w = self.config.width;

        // Raw token matrix; the time row stays zero and is handled apart.
        let mut x = Array2::<f64>::zeros((SEQ_LEN, d));
        for (i, slot) in seq.slots().iter().enumerate() {
            for (j, &v) in slot.values().iter().enumerate() {
                x[[i, j]] = v as f64;
            }
        }
        for (j, &v) in seq.noised().values().iter().enumerate() {
            x[[OUTPUT_INDEX, j]] = v as f64;
        }

        // Input projection for all non-time tokens.
        let w_in = self.view("input.w");
        let b_in = self.row("input.b");
        let mut h = x.dot(&w_in);
        for mut r in h.rows_mut() {
            r += &b_in;
        }

        // Timestep token: features -> 2-layer MLP.
        let (feats, time_u) = self.time_features(seq.t());
        let t_pre = feats.dot(&self.view("time.w1")) + self.row("time.b1");
        let t_act = t_pre.mapv(gelu);
        let t_tok = t_act.dot(&self.view("time.w2")) + self.row("time.b2");
        h.row_mut(TIME_INDEX).assign(&t_tok);

        h += &self.view("pos");

        let mut layer_caches = Vec::with_capacity(self.config.layers);
        for i in 0..self.config.layers {
            let (h_next, cache) = self.layer_forward(i, &h);
            layer_caches.push(cache);
            h = h_next;
        }

        let (hf, ln_f) = layer_norm_forward(&h, &self.row("ln_f.g"), &self.row("ln_f.b"));
        let pred = hf.row(OUTPUT_INDEX).dot(&self.view("out.w")) + self.row("out.b");

        let cache = ForwardCache {
            x,
            feats,
            time_u,
            t_norm: seq.t() as f64 * 1e-3,
            t_pre,
            t_act,
            layers: layer_caches,
            ln_f,
            hf,
            _width: w,
        };
        Ok((pred.to_vec(), cache))
    }

    fn layer_forward(&self, i: usize, h_in: &Array2<f64>) -> (Array2<f64>, LayerCache) {
        let w = self.config.width;
        let heads = self.config.heads;
        let dk = w / heads;
        let scale = 1.0 / (dk as f64).sqrt();

        let (a, ln1) = layer_norm_forward(h_in, &self.row(&format!("l{i}.ln1.g")), &self.row(&format!("l{i}.ln1.b")));
        let mut q = a.dot(&self.view(&format!("l{i}.wq")));
        let mut k = a.dot(&self.view(&format!("l{i}.wk")));
        let mut v = a.dot(&self.view(&format!("l{i}.wv")));
        add_row(&mut q, &self.row(&format!("l{i}.bq")));
        add_row(&mut k, &self.row(&format!("l{i}.bk")));
        add_row(&mut v, &self.row(&format!("l{i}.bv")));

        let mut cat = Array2::<f64>::zeros((SEQ_LEN, w));
        let mut att = Vec::with_capacity(heads);
        for hix in 0..heads {
            let cols = s![.., hix * dk..(hix + 1) * dk];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t()) * scale;
            if self.config.attention_kind == AttentionKind::Causal {
                for r in 0..SEQ_LEN {
                    for c in (r + 1)..SEQ_LEN {
                        scores[[r, c]] = f64::NEG_INFINITY;
                    }
                }
            }
            let a_h = softmax_rows(&scores);
            let yh = a_h.dot(&vh);
            cat.slice_mut(cols).assign(&yh);
            att.push(a_h);
        }
        let mut attn_out = cat.dot(&self.view(&format!("l{i}.wo")));
        add_row(&mut attn_out, &self.row(&format!("l{i}.bo")));
        let h_attn = h_in + &attn_out;

        let (m, ln2) = layer_norm_forward(&h_attn, &self.row(&format!("l{i}.ln2.g")), &self.row(&format!("l{i}.ln2.b")));
        let mut pre = m.dot(&self.view(&format!("l{i}.mlp.w1")));
        add_row(&mut pre, &self.row(&format!("l{i}.mlp.b1")));
        let act = pre.mapv(gelu);
        let mut mlp_out = act.dot(&self.view(&format!("l{i}.mlp.w2")));
        add_row(&mut mlp_out, &self.row(&format!("l{i}.mlp.b2")));
        let h_out = &h_attn + &mlp_out;

        let cache = LayerCache { ln1, a, q, k, v, att, cat, ln2, m, pre, act };
        (h_out, cache)
    }

    /// Backprop from d(loss)/d(prediction) to a flat gradient buffer
    /// aligned with the parameter layout.
    pub fn backward(&self, cache: &ForwardCache, dpred: &[f64]) -> Vec<f64> {
        let w = self.config.width;
        let heads = self.config.heads;
        let dk = w / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut grads = vec![0.0f64; self.data.len()];
        let dp = Array1::from(dpred.to_vec());

        // Output head.
        let hf_row = cache.hf.row(OUTPUT_INDEX);
        self.add_grad(&mut grads, "out.w", &outer(&hf_row.to_owned(), &dp));
        self.add_grad_row(&mut grads, "out.b", &dp);
        let mut d_hf = Array2::<f64>::zeros((SEQ_LEN, w));
        d_hf.row_mut(OUTPUT_INDEX).assign(&self.view("out.w").dot(&dp));

        let (mut d_h, dg, db) = layer_norm_backward(&d_hf, &cache.ln_f, &self.row("ln_f.g"));
        self.add_grad_row(&mut grads, "ln_f.g", &dg);
        self.add_grad_row(&mut grads, "ln_f.b", &db);

        for i in (0..self.config.layers).rev() {
            let lc = &cache.layers[i];

            // MLP branch.
            let d_mlp_out = d_h.clone();
            self.add_grad(&mut grads, &format!("l{i}.mlp.w2"), &lc.act.t().dot(&d_mlp_out));
            self.add_grad_row(&mut grads, &format!("l{i}.mlp.b2"), &d_mlp_out.sum_axis(Axis(0)));
            let d_act = d_mlp_out.dot(&self.view(&format!("l{i}.mlp.w2")).t());
            let d_pre = &d_act * &lc.pre.mapv(gelu_grad);
            self.add_grad(&mut grads, &format!("l{i}.mlp.w1"), &lc.m.t().dot(&d_pre));
            self.add_grad_row(&mut grads, &format!("l{i}.mlp.b1"), &d_pre.sum_axis(Axis(0)));
            let d_m = d_pre.dot(&self.view(&format!("l{i}.mlp.w1")).t());
            let (d_from_ln2, dg2, db2) = layer_norm_backward(&d_m, &lc.ln2, &self.row(&format!("l{i}.ln2.g")));
            self.add_grad_row(&mut grads, &format!("l{i}.ln2.g"), &dg2);
            self.add_grad_row(&mut grads, &format!("l{i}.ln2.b"), &db2);
            let d_h_attn = &d_h + &d_from_ln2;

            // Attention branch.
            let d_attn_out = d_h_attn.clone();
            self.add_grad(&mut grads, &format!("l{i}.wo"), &lc.cat.t().dot(&d_attn_out));
            self.add_grad_row(&mut grads, &format!("l{i}.bo"), &d_attn_out.sum_axis(Axis(0)));
            let d_cat = d_attn_out.dot(&self.view(&format!("l{i}.wo")).t());

            let mut d_q = Array2::<f64>::zeros((SEQ_LEN, w));
            let mut d_k = Array2::<f64>::zeros((SEQ_LEN, w));
            let mut d_v = Array2::<f64>::zeros((SEQ_LEN, w));
            for hix in 0..heads {
                let cols = s![.., hix * dk..(hix + 1) * dk];
                let a_h = &lc.att[hix];
                let d_yh = d_cat.slice(cols);
                let vh = lc.v.slice(cols);
                let qh = lc.q.slice(cols);
                let kh = lc.k.slice(cols);

                d_v.slice_mut(cols).assign(&a_h.t().dot(&d_yh));
                let d_a = d_yh.dot(&vh.t());
                // Softmax backward per row.
                let prod = &d_a * a_h;
                let row_sums = prod.sum_axis(Axis(1));
                let mut d_s = prod;
                for (r, mut row) in d_s.rows_mut().into_iter().enumerate() {
                    row.scaled_add(-row_sums[r], &a_h.row(r));
                }
                d_q.slice_mut(cols).assign(&(d_s.dot(&kh) * scale));
                d_k.slice_mut(cols).assign(&(d_s.t().dot(&qh) * scale));
            }

            self.add_grad(&mut grads, &format!("l{i}.wq"), &lc.a.t().dot(&d_q));
            self.add_grad_row(&mut grads, &format!("l{i}.bq"), &d_q.sum_axis(Axis(0)));
            self.add_grad(&mut grads, &format!("l{i}.wk"), &lc.a.t().dot(&d_k));
            self.add_grad_row(&mut grads, &format!("l{i}.bk"), &d_k.sum_axis(Axis(0)));
            self.add_grad(&mut grads, &format!("l{i}.wv"), &lc.a.t().dot(&d_v));
            self.add_grad_row(&mut grads, &format!("l{i}.bv"), &d_v.sum_axis(Axis(0)));

            let d_a_total = d_q.dot(&self.view(&format!("l{i}.wq")).t())
                + d_k.dot(&self.view(&format!("l{i}.wk")).t())
                + d_v.dot(&self.view(&format!("l{i}.wv")).t());
            let (d_from_ln1, dg1, db1) = layer_norm_backward(&d_a_total, &lc.ln1, &self.row(&format!("l{i}.ln1.g")));
            self.add_grad_row(&mut grads, &format!("l{i}.ln1.g"), &dg1);
            self.add_grad_row(&mut grads, &format!("l{i}.ln1.b"), &db1);

            d_h = d_h_attn + d_from_ln1;
        }

        // d_h is now the gradient at h0 = proj(x) + time + pos.
        self.add_grad(&mut grads, "pos", &d_h);

        // Time token path (row 77).
        let d_t_tok = d_h.row(TIME_INDEX).to_owned();
        self.add_grad(&mut grads, "time.w2", &outer(&cache.t_act, &d_t_tok));
        self.add_grad_row(&mut grads, "time.b2", &d_t_tok);
        let d_t_act = self.view("time.w2").dot(&d_t_tok);
        let d_t_pre = &d_t_act * &cache.t_pre.mapv(gelu_grad);
        self.add_grad(&mut grads, "time.w1", &outer(&cache.feats, &d_t_pre));
        self.add_grad_row(&mut grads, "time.b1", &d_t_pre);
        if let Some(u) = &cache.time_u {
            let d_feats = self.view("time.w1").dot(&d_t_pre);
            let d_u = &d_feats * &u.mapv(f64::cos);
            self.add_grad_row(&mut grads, "time.freq_w", &(&d_u * cache.t_norm));
            self.add_grad_row(&mut grads, "time.freq_b", &d_u);
        }

        // Input projection over all non-time rows.
        let mut d_h_no_time = d_h;
        d_h_no_time.row_mut(TIME_INDEX).fill(0.0);
        self.add_grad(&mut grads, "input.w", &cache.x.t().dot(&d_h_no_time));
        self.add_grad_row(&mut grads, "input.b", &d_h_no_time.sum_axis(Axis(0)));

        grads
    }

    fn add_grad(&self, grads: &mut [f64], name: &str, g: &Array2<f64>) {
        let info = &self.layout[self.idx(name)];
        let mut view =
            ArrayViewMut2::from_shape((info.rows, info.cols), &mut grads[info.offset..info.offset + info.len()])
                .expect("layout shape");
        view += g;
    }

    fn add_grad_row(&self, grads: &mut [f64], name: &str, g: &Array1<f64>) {
        let info = &self.layout[self.idx(name)];
        let slice = &mut grads[info.offset..info.offset + info.len()];
        for (s, &v) in slice.iter_mut().zip(g.iter()) {
            *s += v;
        }
    }

    pub fn denoise(&self, seq: &TokenSequence) -> Result<Embedding> {
        let (pred, _) = self.forward(seq)?;
        Embedding::from_f64(&pred, SpaceTag::Image)
    }
}

impl Denoiser for PriorNet {
    fn dim(&self) -> usize {
        self.config.d
    }

    fn predict_x0(
        &self,
        conditions: &[(usize, Embedding)],
        t: usize,
        noised: &Embedding,
    ) -> Result<Embedding> {
        let seq = super::build_sequence(conditions, t, noised)?;
        self.denoise(&seq)
    }
}

pub struct ForwardCache {
    x: Array2<f64>,
    feats: Array1<f64>,
    time_u: Option<Array1<f64>>,
    t_norm: f64,
    t_pre: Array1<f64>,
    t_act: Array1<f64>,
    layers: Vec<LayerCache>,
    ln_f: LnCache,
    hf: Array2<f64>,
    _width: usize,
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    att: Vec<Array2<f64>>,
    cat: Array2<f64>,
    ln2: LnCache,
    m: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn add_row(m: &mut Array2<f64>, b: &Array1<f64>) {
    for mut r in m.rows_mut() {
        r += b;
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (n, m) = (a.len(), b.len());
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            out[[i, j]] = a[i] * b[j];
        }
    }
    out
}

fn layer_norm_forward(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let n = x.nrows();
    let w = x.ncols();
    let mut xhat = Array2::zeros((n, w));
    let mut rstd = Array1::zeros(n);
    let mut y = Array2::zeros((n, w));
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / w as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..w {
            let xh = (x[[i, j]] - mean) * r;
            xhat[[i, j]] = xh;
            y[[i, j]] = g[j] * xh + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = dy.nrows();
    let w = dy.ncols();
    let mut dx = Array2::zeros((n, w));
    let mut dg = Array1::zeros(w);
    let mut db = Array1::zeros(w);
    for i in 0..n {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..w {
            let dxhat = dy[[i, j]] * g[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * cache.xhat[[i, j]];
            dg[j] += dy[[i, j]] * cache.xhat[[i, j]];
            db[j] += dy[[i, j]];
        }
        let inv_w = 1.0 / w as f64;
        for j in 0..w {
            let dxhat = dy[[i, j]] * g[j];
            dx[[i, j]] = cache.rstd[i]
                * (dxhat - sum_dxhat * inv_w - cache.xhat[[i, j]] * sum_dxhat_xhat * inv_w);
        }
    }
    (dx, dg, db)
}

fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{build_sequence, FreezePolicy};
    use rand::Rng;

    fn toy_net() -> PriorNet {
        PriorNet::init(&PriorConfig::toy(16), 42).unwrap()
    }

    fn rand_emb(rng: &mut ChaCha8Rng, d: usize) -> Embedding {
        let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Embedding::new(v, SpaceTag::Image).unwrap()
    }

    #[test]
    fn denoise_deterministic_and_shaped() {
        let net = toy_net();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = build_sequence(
            &[(0, rand_emb(&mut rng, 16)), (1, rand_emb(&mut rng, 16))],
            500,
            &rand_emb(&mut rng, 16),
        )
        .unwrap();
        let a = net.denoise(&seq).unwrap();
        let b = net.denoise(&seq).unwrap();
        assert_eq!(a.dim(), 16);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn zero_slots_carry_no_content() {
        // Explicitly assigning a zero embedding to an otherwise-unassigned
        // slot leaves the output unchanged.
        let net = toy_net();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b, noised) = (rand_emb(&mut rng, 16), rand_emb(&mut rng, 16), rand_emb(&mut rng, 16));
        let seq1 = build_sequence(&[(0, a.clone()), (1, b.clone())], 10, &noised).unwrap();
        let seq2 = build_sequence(
            &[(0, a), (1, b), (50, Embedding::zeros(16, SpaceTag::Image))],
            10,
            &noised,
        )
        .unwrap();
        let o1 = net.denoise(&seq1).unwrap();
        let o2 = net.denoise(&seq2).unwrap();
        assert_eq!(o1.values(), o2.values());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Central differences (h=1e-3) on an MSE loss over random params.
        let mut net = toy_net();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = build_sequence(
            &[(0, rand_emb(&mut rng, 16)), (1, rand_emb(&mut rng, 16))],
            321,
            &rand_emb(&mut rng, 16),
        )
        .unwrap();
        let target: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss_of = |net: &PriorNet| -> f64 {
            let (pred, _) = net.forward(&seq).unwrap();
            pred.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / 16.0
        };

        let (pred, cache) = net.forward(&seq).unwrap();
        let dpred: Vec<f64> = pred.iter().zip(&target).map(|(p, t)| 2.0 * (p - t) / 16.0).collect();
        let grads = net.backward(&cache, &dpred);

        let n = net.n_params();
        let mut checked = 0;
        for _ in 0..20 {
            let idx = rng.gen_range(0..n);
            let analytic = grads[idx];
            if analytic.abs() < 1e-8 {
                continue;
            }
            let h = 1e-3;
            let orig = net.data()[idx];
            net.data_mut()[idx] = orig + h;
            let lp = loss_of(&net);
            net.data_mut()[idx] = orig - h;
            let lm = loss_of(&net);
            net.data_mut()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
            assert!(rel < 1e-4, "param {idx}: analytic {analytic} fd {fd} rel {rel}");
            checked += 1;
        }
        assert!(checked >= 5, "too few parameters checked ({checked})");
    }

    #[test]
    fn full_attention_variant_runs() {
        let mut cfg = PriorConfig::toy(8);
        cfg.attention_kind = AttentionKind::Full;
        cfg.time_embedding_kind = TimeEmbeddingKind::Learned;
        let net = PriorNet::init(&cfg, 0).unwrap();
        let seq = build_sequence(&[], 7, &Embedding::zeros(8, SpaceTag::Image)).unwrap();
        assert_eq!(net.denoise(&seq).unwrap().dim(), 8);
    }

    #[test]
    fn freeze_subset_selects_only_layer_groups() {
        let net = toy_net();
        let mask = crate::prior::freeze_policy(&net, &FreezePolicy::Subset(vec![1, 3])).unwrap();
        for (info, &tr) in net.layout().iter().zip(mask.trainable_slice()) {
            let expect = matches!(info.group, ParamGroup::Layer(1) | ParamGroup::Layer(3));
            assert_eq!(tr, expect, "{}", info.name);
        }
    }
}
