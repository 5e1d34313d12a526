//! Graph-attention classifier with hand-written backpropagation.

use super::graph::{Batch, NodeType, APPEARANCE_CODES, EDGE_FEATURES, SIGN_CODES, WEATHER_FEATURES};
use super::SemError;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemConfig {
    pub hidden: usize,
    pub heads: usize,
    pub embedding_dim: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for SemConfig {
    fn default() -> Self {
        SemConfig {
            hidden: 64,
            heads: 4,
            embedding_dim: 8,
            layers: 2,
            dropout: 0.1,
        }
    }
}

impl SemConfig {
    pub fn input_dim(&self) -> usize {
        3 + 3 * self.embedding_dim
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatParams {
    /// Input projection, `in x hidden`; head `k` owns columns `k*d..(k+1)*d`.
    pub w: Array2<f64>,
    /// Attention vectors, `heads x head_dim`.
    pub a_src: Array2<f64>,
    pub a_dst: Array2<f64>,
    /// Edge-feature attention weights, `heads x EDGE_FEATURES`.
    pub a_edge: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub emb_type: Array2<f64>,
    pub emb_sign: Array2<f64>,
    pub emb_appearance: Array2<f64>,
    pub layers: Vec<GatParams>,
    /// Head: `(hidden + weather) x hidden`, then `hidden x 1`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..=scale))
}

fn xavier<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    uniform(rng, rows, cols, (6.0 / (rows + cols) as f64).sqrt())
}

impl Params {
    pub fn init<R: Rng + ?Sized>(cfg: &SemConfig, rng: &mut R) -> Params {
        let e = cfg.embedding_dim;
        let (h, a, d) = (cfg.hidden, cfg.heads, cfg.head_dim());
        let layers = (0..cfg.layers)
            .map(|l| {
                let input = if l == 0 { cfg.input_dim() } else { h };
                GatParams {
                    w: xavier(rng, input, h),
                    a_src: xavier(rng, a, d),
                    a_dst: xavier(rng, a, d),
                    a_edge: xavier(rng, a, EDGE_FEATURES),
                    bias: Array1::zeros(h),
                    gamma: Array1::ones(h),
                    beta: Array1::zeros(h),
                }
            })
            .collect();
        Params {
            emb_type: uniform(rng, NodeType::COUNT, e, 0.5),
            emb_sign: uniform(rng, SIGN_CODES, e, 0.5),
            emb_appearance: uniform(rng, APPEARANCE_CODES, e, 0.5),
            layers,
            w1: xavier(rng, h + WEATHER_FEATURES, h),
            b1: Array1::zeros(h),
            w2: xavier(rng, h, 1),
            b2: Array1::zeros(1),
        }
    }

    pub fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        z.for_each_mut(|x| x.fill(0.0));
        z
    }

    /// Visit every tensor as a flat slice, in a fixed order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        let mut v = |x: &mut [f64]| f(x);
        v(self.emb_type.as_slice_mut().expect("standard layout"));
        v(self.emb_sign.as_slice_mut().expect("standard layout"));
        v(self.emb_appearance.as_slice_mut().expect("standard layout"));
        for l in &mut self.layers {
            v(l.w.as_slice_mut().expect("standard layout"));
            v(l.a_src.as_slice_mut().expect("standard layout"));
            v(l.a_dst.as_slice_mut().expect("standard layout"));
            v(l.a_edge.as_slice_mut().expect("standard layout"));
            v(l.bias.as_slice_mut().expect("standard layout"));
            v(l.gamma.as_slice_mut().expect("standard layout"));
            v(l.beta.as_slice_mut().expect("standard layout"));
        }
        v(self.w1.as_slice_mut().expect("standard layout"));
        v(self.b1.as_slice_mut().expect("standard layout"));
        v(self.w2.as_slice_mut().expect("standard layout"));
        v(self.b2.as_slice_mut().expect("standard layout"));
    }

    /// All parameters concatenated in `for_each_mut` order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.clone().for_each_mut(|x| out.extend_from_slice(x));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.for_each_mut(|x| {
            x.copy_from_slice(&flat[at..at + x.len()]);
            at += x.len();
        });
        assert_eq!(at, flat.len(), "flat parameter length");
    }

    pub fn count(&self) -> usize {
        self.flatten().len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnRunning {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// How batch normalization and dropout behave in one forward pass.
pub enum Mode<'r> {
    Inference,
    Train { dropout_rng: &'r mut dyn rand::RngCore },
}

struct LayerCache {
    x: Array2<f64>,
    z: Array2<f64>,
    raw: Array2<f64>,
    alpha: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    bn_out: Array2<f64>,
    mask: Option<Array2<f64>>,
}

pub(crate) struct Cache {
    layers: Vec<LayerCache>,
    head_in: Array2<f64>,
    u1: Array2<f64>,
    v1: Array2<f64>,
    pub logits: Array1<f64>,
    pub batch_stats: Vec<(Array1<f64>, Array1<f64>)>,
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit, computed stably.
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

pub(crate) fn input_features(p: &Params, b: &Batch, e: usize) -> Array2<f64> {
    let n = b.node_count();
    let mut x = Array2::zeros((n, 3 + 3 * e));
    x.slice_mut(s![.., 0..3]).assign(&b.positions);
    for i in 0..n {
        x.slice_mut(s![i, 3..3 + e]).assign(&p.emb_type.row(b.node_types[i]));
        x.slice_mut(s![i, 3 + e..3 + 2 * e]).assign(&p.emb_sign.row(b.signs[i]));
        x.slice_mut(s![i, 3 + 2 * e..3 + 3 * e]).assign(&p.emb_appearance.row(b.appearances[i]));
    }
    x
}

/// Attention-weighted aggregation for one layer. Returns (z, raw logits, alpha, output).
fn gat_aggregate(cfg: &SemConfig, l: &GatParams, b: &Batch, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let (a, d, h) = (cfg.heads, cfg.head_dim(), cfg.hidden);
    let z = x.dot(&l.w);
    let n = z.nrows();
    let ne = b.edge_count();
    let zs = z.as_slice().expect("standard layout");
    let (asrc, adst) = (l.a_src.as_slice().expect("standard layout"), l.a_dst.as_slice().expect("standard layout"));
    let mut s_src = vec![0.0; n * a];
    let mut s_dst = vec![0.0; n * a];
    for i in 0..n {
        for k in 0..a {
            let zk = &zs[i * h + k * d..i * h + (k + 1) * d];
            s_src[i * a + k] = dot(zk, &asrc[k * d..(k + 1) * d]);
            s_dst[i * a + k] = dot(zk, &adst[k * d..(k + 1) * d]);
        }
    }
    let s_edge = b.edge_features.dot(&l.a_edge.t());
    let se = s_edge.as_slice().expect("standard layout");
    let mut raw = vec![0.0; ne * a];
    let mut alpha = vec![0.0; ne * a];
    let mut out = vec![0.0; n * h];
    for i in 0..n {
        let range = b.dst_offsets[i]..b.dst_offsets[i + 1];
        for k in 0..a {
            let mut max = f64::NEG_INFINITY;
            for e in range.clone() {
                let r = s_dst[i * a + k] + s_src[b.edge_src[e] * a + k] + se[e * a + k];
                raw[e * a + k] = r;
                let lr = if r > 0.0 { r } else { LEAKY_SLOPE * r };
                max = max.max(lr);
                alpha[e * a + k] = lr;
            }
            let mut sum = 0.0;
            for e in range.clone() {
                let v = (alpha[e * a + k] - max).exp();
                alpha[e * a + k] = v;
                sum += v;
            }
            let o = &mut out[i * h + k * d..i * h + (k + 1) * d];
            for e in range.clone() {
                alpha[e * a + k] /= sum;
                let j = b.edge_src[e];
                axpy(alpha[e * a + k], &zs[j * h + k * d..j * h + (k + 1) * d], o);
            }
        }
    }
    let mut out = Array2::from_shape_vec((n, h), out).expect("shape");
    out += &l.bias;
    let raw = Array2::from_shape_vec((ne, a), raw).expect("shape");
    let alpha = Array2::from_shape_vec((ne, a), alpha).expect("shape");
    (z, raw, alpha, out)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn forward(
    cfg: &SemConfig,
    p: &Params,
    running: &[BnRunning],
    b: &Batch,
    mut mode: Mode<'_>,
) -> Result<Cache, SemError> {
    if b.positions.ncols() != 3 || b.weather.ncols() != WEATHER_FEATURES || b.edge_features.ncols() != EDGE_FEATURES {
        return Err(SemError::ShapeMismatch("batch feature widths".into()));
    }
    if p.layers.len() != cfg.layers || running.len() != cfg.layers {
        return Err(SemError::ShapeMismatch("layer count".into()));
    }
    let mut x = input_features(p, b, cfg.embedding_dim);
    let mut layers = Vec::with_capacity(cfg.layers);
    let mut batch_stats = Vec::new();
    for (l, run) in p.layers.iter().zip(running) {
        let (z, raw, alpha, h) = gat_aggregate(cfg, l, b, &x);
        let (mean, var) = match mode {
            Mode::Train { .. } => {
                let (mean, var) = column_moments(&h);
                batch_stats.push((mean.clone(), var.clone()));
                (mean, var)
            }
            Mode::Inference => (run.mean.clone(), run.var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let cols = h.ncols();
        let (m, is, gamma, beta) = (
            mean.as_slice().expect("contiguous"),
            inv_std.as_slice().expect("contiguous"),
            l.gamma.as_slice().expect("contiguous"),
            l.beta.as_slice().expect("contiguous"),
        );
        let mut xhat = h;
        let mut bn_out = Array2::zeros(xhat.raw_dim());
        let mut act = Array2::zeros(xhat.raw_dim());
        let xs = xhat.as_slice_mut().expect("standard layout");
        let bs = bn_out.as_slice_mut().expect("standard layout");
        let acts = act.as_slice_mut().expect("standard layout");
        for ((xr, br), ar) in xs.chunks_mut(cols).zip(bs.chunks_mut(cols)).zip(acts.chunks_mut(cols)) {
            for c in 0..cols {
                xr[c] = (xr[c] - m[c]) * is[c];
                br[c] = xr[c] * gamma[c] + beta[c];
                ar[c] = elu(br[c]);
            }
        }
        let mask = match &mut mode {
            Mode::Train { dropout_rng } if cfg.dropout > 0.0 => {
                let keep = 1.0 - cfg.dropout;
                let threshold = (keep * 4_294_967_296.0) as u64;
                let mut mask = Array2::zeros(act.raw_dim());
                for (mv, av) in mask.iter_mut().zip(act.iter_mut()) {
                    *mv = if u64::from(dropout_rng.next_u32()) < threshold { 1.0 / keep } else { 0.0 };
                    *av *= *mv;
                }
                Some(mask)
            }
            _ => None,
        };
        layers.push(LayerCache {
            x,
            z,
            raw,
            alpha,
            xhat,
            inv_std,
            bn_out,
            mask,
        });
        x = act;
    }
    let pooled = mean_pool(b, &x);
    let mut head_in = Array2::zeros((b.graph_count, cfg.hidden + WEATHER_FEATURES));
    head_in.slice_mut(s![.., ..cfg.hidden]).assign(&pooled);
    head_in.slice_mut(s![.., cfg.hidden..]).assign(&b.weather);
    let u1 = head_in.dot(&p.w1) + &p.b1;
    let v1 = u1.mapv(elu);
    let logits = (v1.dot(&p.w2) + &p.b2).column(0).to_owned();
    Ok(Cache {
        layers,
        head_in,
        u1,
        v1,
        logits,
        batch_stats,
    })
}

/// Per-column mean and biased variance.
fn column_moments(h: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let (n, cols) = h.dim();
    let mut mean = vec![0.0; cols];
    for row in h.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; cols];
    for row in h.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    (Array1::from(mean), Array1::from(var))
}

pub(crate) fn mean_pool(b: &Batch, x: &Array2<f64>) -> Array2<f64> {
    let mut pooled = Array2::zeros((b.graph_count, x.ncols()));
    for (i, &g) in b.node_graph.iter().enumerate() {
        let mut row = pooled.row_mut(g);
        row.scaled_add(1.0 / b.graph_sizes[g] as f64, &x.row(i));
    }
    pooled
}

/// Pooled graph embeddings, one row per graph.
pub(crate) fn pooled(cache: &Cache, hidden: usize) -> Array2<f64> {
    cache.head_in.slice(s![.., ..hidden]).to_owned()
}

/// Gradients of the mean loss given `dlogits` (already divided by the batch size).
pub(crate) fn backward(cfg: &SemConfig, p: &Params, b: &Batch, cache: &Cache, dlogits: &Array1<f64>) -> Params {
    let mut g = p.zeros_like();
    let (a, d, hdim) = (cfg.heads, cfg.head_dim(), cfg.hidden);
    let dlog = dlogits.view().insert_axis(Axis(1)).to_owned();
    g.w2 = cache.v1.t().dot(&dlog);
    g.b2 = dlog.sum_axis(Axis(0));
    let dv1 = dlog.dot(&p.w2.t());
    let du1 = &dv1 * &cache.u1.mapv(elu_grad);
    g.w1 = cache.head_in.t().dot(&du1);
    g.b1 = du1.sum_axis(Axis(0));
    let dhead = du1.dot(&p.w1.t());
    let dpooled = dhead.slice(s![.., ..hdim]);
    let n = b.node_count();
    let mut dx = Array2::zeros((n, hdim));
    for (i, &gi) in b.node_graph.iter().enumerate() {
        dx.row_mut(i).scaled_add(1.0 / b.graph_sizes[gi] as f64, &dpooled.row(gi));
    }
    for (li, (l, c)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
        let mut dact = dx;
        if let Some(m) = &c.mask {
            dact *= m;
        }
        let dbn = &dact * &c.bn_out.mapv(elu_grad);
        let gl = &mut g.layers[li];
        gl.gamma = (&dbn * &c.xhat).sum_axis(Axis(0));
        gl.beta = dbn.sum_axis(Axis(0));
        let dxhat = &dbn * &l.gamma;
        let nf = n as f64;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
        let dh = (&dxhat * nf - &sum_dxhat - &c.xhat * &sum_dxhat_xhat) * &(&c.inv_std / nf);
        gl.bias = dh.sum_axis(Axis(0));

        let zs = c.z.as_slice().expect("standard layout");
        let dhs = dh.as_slice().expect("standard layout");
        let (alpha, raw) = (c.alpha.as_slice().expect("standard layout"), c.raw.as_slice().expect("standard layout"));
        let ef = b.edge_features.as_slice().expect("standard layout");
        let mut dz = vec![0.0; n * hdim];
        let mut ds_src = vec![0.0; n * a];
        let mut ds_dst = vec![0.0; n * a];
        let mut da_edge = vec![0.0; a * EDGE_FEATURES];
        let mut dalpha = Vec::new();
        for i in 0..n {
            let range = b.dst_offsets[i]..b.dst_offsets[i + 1];
            for k in 0..a {
                let dh_k = &dhs[i * hdim + k * d..i * hdim + (k + 1) * d];
                dalpha.clear();
                let mut acc = 0.0;
                for e in range.clone() {
                    let j = b.edge_src[e];
                    let da = dot(dh_k, &zs[j * hdim + k * d..j * hdim + (k + 1) * d]);
                    dalpha.push(da);
                    acc += alpha[e * a + k] * da;
                    axpy(alpha[e * a + k], dh_k, &mut dz[j * hdim + k * d..j * hdim + (k + 1) * d]);
                }
                for (t, e) in range.clone().enumerate() {
                    let dsm = alpha[e * a + k] * (dalpha[t] - acc);
                    let draw = if raw[e * a + k] > 0.0 { dsm } else { LEAKY_SLOPE * dsm };
                    ds_dst[i * a + k] += draw;
                    ds_src[b.edge_src[e] * a + k] += draw;
                    axpy(
                        draw,
                        &ef[e * EDGE_FEATURES..(e + 1) * EDGE_FEATURES],
                        &mut da_edge[k * EDGE_FEATURES..(k + 1) * EDGE_FEATURES],
                    );
                }
            }
        }
        gl.a_edge = Array2::from_shape_vec((a, EDGE_FEATURES), da_edge).expect("shape");
        let (asrc, adst) = (l.a_src.as_slice().expect("standard layout"), l.a_dst.as_slice().expect("standard layout"));
        let ga_src = gl.a_src.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for k in 0..a {
                axpy(ds_src[i * a + k], &zs[i * hdim + k * d..i * hdim + (k + 1) * d], &mut ga_src[k * d..(k + 1) * d]);
            }
        }
        let ga_dst = gl.a_dst.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for k in 0..a {
                axpy(ds_dst[i * a + k], &zs[i * hdim + k * d..i * hdim + (k + 1) * d], &mut ga_dst[k * d..(k + 1) * d]);
                let dzk = &mut dz[i * hdim + k * d..i * hdim + (k + 1) * d];
                axpy(ds_src[i * a + k], &asrc[k * d..(k + 1) * d], dzk);
                axpy(ds_dst[i * a + k], &adst[k * d..(k + 1) * d], dzk);
            }
        }
        let dz = Array2::from_shape_vec((n, hdim), dz).expect("shape");
        gl.w = c.x.t().dot(&dz);
        dx = dz.dot(&l.w.t());
    }
    let e = cfg.embedding_dim;
    for i in 0..n {
        g.emb_type.row_mut(b.node_types[i]).scaled_add(1.0, &dx.slice(s![i, 3..3 + e]));
        g.emb_sign.row_mut(b.signs[i]).scaled_add(1.0, &dx.slice(s![i, 3 + e..3 + 2 * e]));
        g.emb_appearance
            .row_mut(b.appearances[i])
            .scaled_add(1.0, &dx.slice(s![i, 3 + 2 * e..3 + 3 * e]));
    }
    g
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW).
    pub weight_decay: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        let g = grads.flatten();
        let mut w = params.flatten();
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..w.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            w[i] -= self.lr * ((self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps) + self.weight_decay * w[i]);
        }
        params.set_flat(&w);
    }
}
