//! Forward and backward passes of the transformer building blocks. Every
//! forward returns a cache holding what its backward needs.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};

use super::params::{AttnIdx, DecBlockIdx, EncBlockIdx, FfnIdx, LinearIdx, NormIdx};

pub(crate) type Mat = Array2<f64>;

const NORM_EPS: f64 = 1e-5;

/// Gradient accumulators indexed like the parameter tensors; `None` marks a
/// frozen tensor whose gradient is never formed.
pub(crate) struct Grads {
    pub slots: Vec<Option<Mat>>,
}

impl Grads {
    pub fn zeros(params: &[&Mat], trainable: &[bool]) -> Self {
        Grads {
            slots: params
                .iter()
                .zip(trainable)
                .map(|(p, &t)| t.then(|| Array2::zeros(p.dim())))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for g in self.slots.iter_mut().flatten() {
            g.fill(0.0);
        }
    }

    fn slot(&mut self, i: usize) -> Option<&mut Mat> {
        self.slots[i].as_mut()
    }
}

pub(crate) fn linear(p: &[&Mat], l: LinearIdx, x: &Mat) -> Mat {
    let mut y = x.dot(p[l.w]);
    y += p[l.b];
    y
}

pub(crate) fn linear_back(p: &[&Mat], l: LinearIdx, x: &Mat, dy: &Mat, g: &mut Grads) -> Mat {
    if let Some(gw) = g.slot(l.w) {
        general_mat_mul(1.0, &x.t(), dy, 1.0, gw);
    }
    if let Some(gb) = g.slot(l.b) {
        *gb += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    dy.dot(&p[l.w].t())
}

pub(crate) struct NormCache {
    xhat: Mat,
    inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(p: &[&Mat], n: NormIdx, x: &Mat) -> (Mat, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + NORM_EPS).sqrt();
        row *= *inv;
    }
    let mut y = &xhat * p[n.gain];
    y += p[n.bias];
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_back(p: &[&Mat], n: NormIdx, cache: &NormCache, dy: &Mat, g: &mut Grads) -> Mat {
    if let Some(gg) = g.slot(n.gain) {
        *gg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if let Some(gb) = g.slot(n.bias) {
        *gb += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    let d = dy.ncols() as f64;
    let mut dx = dy * p[n.gain];
    for ((mut row, xhat), &inv) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
        let sum = row.sum();
        let dot = row.dot(&xhat);
        row.zip_mut_with(&xhat, |v, &xh| *v = inv * (*v - sum / d - xh * dot / d));
    }
    dx
}

/// Row-wise softmax in place; entries set to `-inf` become exact zeros.
pub(crate) fn softmax_rows(m: &mut Mat) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
}

pub(crate) struct AttnCache {
    xq: Mat,
    xkv: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    ctx: Mat,
}

/// Multi-head scaled dot-product attention of `xq` over `xkv`.
pub(crate) fn attention(p: &[&Mat], a: AttnIdx, xq: &Mat, xkv: &Mat, heads: usize, causal: bool) -> (Mat, AttnCache) {
    let q = linear(p, a.q, xq);
    let k = linear(p, a.k, xkv);
    let v = linear(p, a.v, xkv);
    let dh = q.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Array2::zeros(q.dim());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores *= scale;
        if causal {
            for ((i, j), s) in scores.indexed_iter_mut() {
                if j > i {
                    *s = f64::NEG_INFINITY;
                }
            }
        }
        softmax_rows(&mut scores);
        ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let out = linear(p, a.o, &ctx);
    let cache = AttnCache {
        xq: xq.clone(),
        xkv: xkv.clone(),
        q,
        k,
        v,
        probs,
        ctx,
    };
    (out, cache)
}

/// Returns gradients with respect to the query input and the key/value input.
pub(crate) fn attention_back(p: &[&Mat], a: AttnIdx, c: &AttnCache, dout: &Mat, g: &mut Grads) -> (Mat, Mat) {
    let dctx = linear_back(p, a.o, &c.ctx, dout, g);
    let heads = c.probs.len();
    let dh = c.q.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(c.q.dim());
    let mut dk = Array2::zeros(c.k.dim());
    let mut dv = Array2::zeros(c.v.dim());
    for (h, probs) in c.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx_h = dctx.slice(cols);
        dv.slice_mut(cols).assign(&probs.t().dot(&dctx_h));
        let mut ds = dctx_h.dot(&c.v.slice(cols).t());
        for (mut row, prow) in ds.rows_mut().into_iter().zip(probs.rows()) {
            let dot = row.dot(&prow);
            row.zip_mut_with(&prow, |d, &pr| *d = pr * (*d - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    let dxq = linear_back(p, a.q, &c.xq, &dq, g);
    let mut dxkv = linear_back(p, a.k, &c.xkv, &dk, g);
    dxkv += &linear_back(p, a.v, &c.xkv, &dv, g);
    (dxq, dxkv)
}

pub(crate) struct FfnCache {
    x: Mat,
    pre: Mat,
    hidden: Mat,
}

pub(crate) fn ffn(p: &[&Mat], f: FfnIdx, x: &Mat) -> (Mat, FfnCache) {
    let pre = linear(p, f.up, x);
    let hidden = pre.mapv(|v| v.max(0.0));
    let y = linear(p, f.down, &hidden);
    (
        y,
        FfnCache {
            x: x.clone(),
            pre,
            hidden,
        },
    )
}

pub(crate) fn ffn_back(p: &[&Mat], f: FfnIdx, c: &FfnCache, dy: &Mat, g: &mut Grads) -> Mat {
    let mut dh = linear_back(p, f.down, &c.hidden, dy, g);
    dh.zip_mut_with(&c.pre, |d, &pre| {
        if pre <= 0.0 {
            *d = 0.0
        }
    });
    linear_back(p, f.up, &c.x, &dh, g)
}

pub(crate) struct EncBlockCache {
    n1: NormCache,
    attn: AttnCache,
    n2: NormCache,
    ffn: FfnCache,
}

/// Pre-norm encoder block: `x + attn(norm(x))`, then `y + ffn(norm(y))`.
pub(crate) fn enc_block(p: &[&Mat], b: &EncBlockIdx, heads: usize, x: &Mat) -> (Mat, EncBlockCache) {
    let (a_in, n1) = layer_norm(p, b.norm_attn, x);
    let (a_out, attn) = attention(p, b.attn, &a_in, &a_in, heads, false);
    let y = x + &a_out;
    let (f_in, n2) = layer_norm(p, b.norm_ffn, &y);
    let (f_out, ffn_c) = ffn(p, b.ffn, &f_in);
    (y + &f_out, EncBlockCache { n1, attn, n2, ffn: ffn_c })
}

pub(crate) fn enc_block_back(p: &[&Mat], b: &EncBlockIdx, c: &EncBlockCache, dout: &Mat, g: &mut Grads) -> Mat {
    let df_in = ffn_back(p, b.ffn, &c.ffn, dout, g);
    let dy = dout + &layer_norm_back(p, b.norm_ffn, &c.n2, &df_in, g);
    let (dq, dkv) = attention_back(p, b.attn, &c.attn, &dy, g);
    dy + &layer_norm_back(p, b.norm_attn, &c.n1, &(dq + &dkv), g)
}

pub(crate) struct DecBlockCache {
    n1: NormCache,
    self_attn: AttnCache,
    n2: NormCache,
    cross_attn: AttnCache,
    n3: NormCache,
    ffn: FfnCache,
}

/// Pre-norm decoder block with causal self-attention and cross-attention
/// over the encoder output `mem`.
pub(crate) fn dec_block(p: &[&Mat], b: &DecBlockIdx, heads: usize, x: &Mat, mem: &Mat) -> (Mat, DecBlockCache) {
    let (s_in, n1) = layer_norm(p, b.norm_self, x);
    let (s_out, self_attn) = attention(p, b.self_attn, &s_in, &s_in, heads, true);
    let y1 = x + &s_out;
    let (c_in, n2) = layer_norm(p, b.norm_cross, &y1);
    let (c_out, cross_attn) = attention(p, b.cross_attn, &c_in, mem, heads, false);
    let y2 = y1 + &c_out;
    let (f_in, n3) = layer_norm(p, b.norm_ffn, &y2);
    let (f_out, ffn_c) = ffn(p, b.ffn, &f_in);
    (
        y2 + &f_out,
        DecBlockCache {
            n1,
            self_attn,
            n2,
            cross_attn,
            n3,
            ffn: ffn_c,
        },
    )
}

/// Returns the gradient for the block input and adds the cross-attention
/// gradient of the encoder output into `dmem`.
pub(crate) fn dec_block_back(
    p: &[&Mat],
    b: &DecBlockIdx,
    c: &DecBlockCache,
    dout: &Mat,
    dmem: &mut Mat,
    g: &mut Grads,
) -> Mat {
    let df_in = ffn_back(p, b.ffn, &c.ffn, dout, g);
    let dy2 = dout + &layer_norm_back(p, b.norm_ffn, &c.n3, &df_in, g);
    let (dc_in, dm) = attention_back(p, b.cross_attn, &c.cross_attn, &dy2, g);
    *dmem += &dm;
    let dy1 = dy2 + &layer_norm_back(p, b.norm_cross, &c.n2, &dc_in, g);
    let (dq, dkv) = attention_back(p, b.self_attn, &c.self_attn, &dy1, g);
    dy1 + &layer_norm_back(p, b.norm_self, &c.n1, &(dq + &dkv), g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one_and_respect_mask() {
        let mut m = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, f64::NEG_INFINITY, -500.0, 0.0, 700.0]).unwrap();
        softmax_rows(&mut m);
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m[[0, 2]], 0.0);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let gain = Array2::ones((1, 4));
        let bias = Array2::zeros((1, 4));
        let p = [&gain, &bias];
        let x = Array2::from_shape_vec((2, 4), vec![1.0, 2.0, 3.0, 4.0, -3.0, 0.0, 0.5, 9.0]).unwrap();
        let (y, _) = layer_norm(&p, NormIdx { gain: 0, bias: 1 }, &x);
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
