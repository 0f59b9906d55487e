//! Whole-model passes: embedding, encoder stack, decoder stack, output
//! projection and the teacher-forced loss with its gradient.

use ndarray::{Array2, Axis};

use super::layers::{
    dec_block, dec_block_back, enc_block, enc_block_back, layer_norm, layer_norm_back, linear, linear_back,
    DecBlockCache, EncBlockCache, Grads, Mat, NormCache,
};
use super::params::{Layout, ParamSet};
use super::vocab::{BEGIN, END};
use crate::privacy::GradSet;

/// Input ids (end-marked) and gold answer ids (no specials).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub input: Vec<usize>,
    pub answer: Vec<usize>,
}

impl EncodedExample {
    /// Teacher-forced decoder input `[begin, answer...]`.
    pub fn decoder_input(&self) -> Vec<usize> {
        std::iter::once(BEGIN).chain(self.answer.iter().copied()).collect()
    }

    /// Decoder targets `[answer..., end]`.
    pub fn targets(&self) -> Vec<usize> {
        self.answer.iter().copied().chain(std::iter::once(END)).collect()
    }
}

/// Sinusoidal position codes: `sin(pos / 10000^(2i/d))` on even columns and
/// the matching cosine on odd ones.
pub(crate) fn positions(len: usize, d: usize) -> Mat {
    Array2::from_shape_fn((len, d), |(pos, j)| {
        let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        let angle = pos as f64 / rate;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn embed(p: &[&Mat], layout: &Layout, ids: &[usize]) -> Mat {
    let table = p[layout.embed];
    let mut x = positions(ids.len(), table.ncols());
    for (mut row, &id) in x.rows_mut().into_iter().zip(ids) {
        row += &table.row(id);
    }
    x
}

fn embed_back(layout: &Layout, ids: &[usize], dx: &Mat, g: &mut Grads) {
    if let Some(ge) = g.slots[layout.embed].as_mut() {
        for (row, &id) in dx.rows().into_iter().zip(ids) {
            let mut target = ge.row_mut(id);
            target += &row;
        }
    }
}

pub(crate) struct Encoded {
    pub mem: Mat,
    blocks: Vec<EncBlockCache>,
    norm: NormCache,
}

pub(crate) fn encode(params: &ParamSet, layout: &Layout, p: &[&Mat], input: &[usize]) -> Encoded {
    let heads = params.preset.n_heads;
    let mut x = embed(p, layout, input);
    let mut blocks = Vec::with_capacity(layout.encoder.len());
    for b in &layout.encoder {
        let (y, c) = enc_block(p, b, heads, &x);
        blocks.push(c);
        x = y;
    }
    let (mem, norm) = layer_norm(p, layout.enc_norm, &x);
    Encoded { mem, blocks, norm }
}

pub(crate) struct Decoded {
    /// Row-wise log-softmax over the vocabulary.
    pub log_probs: Mat,
    blocks: Vec<DecBlockCache>,
    norm: NormCache,
    hidden: Mat,
}

pub(crate) fn decode(params: &ParamSet, layout: &Layout, p: &[&Mat], mem: &Mat, dec_in: &[usize]) -> Decoded {
    let heads = params.preset.n_heads;
    let mut x = embed(p, layout, dec_in);
    let mut blocks = Vec::with_capacity(layout.decoder.len());
    for b in &layout.decoder {
        let (y, c) = dec_block(p, b, heads, &x, mem);
        blocks.push(c);
        x = y;
    }
    let (hidden, norm) = layer_norm(p, layout.dec_norm, &x);
    let mut log_probs = linear(p, layout.out, &hidden);
    for mut row in log_probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row -= lse;
    }
    Decoded {
        log_probs,
        blocks,
        norm,
        hidden,
    }
}

/// Mean negative log-likelihood of `targets` under decoded rows.
fn nll(log_probs: &Mat, targets: &[usize]) -> f64 {
    -targets.iter().enumerate().map(|(t, &y)| log_probs[[t, y]]).sum::<f64>() / targets.len() as f64
}

pub fn example_loss(params: &ParamSet, ex: &EncodedExample) -> f64 {
    let layout = params.layout();
    let p = params.values();
    let enc = encode(params, &layout, &p, &ex.input);
    let dec = decode(params, &layout, &p, &enc.mem, &ex.decoder_input());
    nll(&dec.log_probs, &ex.targets())
}

/// Teacher-forced loss of one example; adds its gradient into `g`.
pub(crate) fn loss_and_backward(
    params: &ParamSet,
    layout: &Layout,
    p: &[&Mat],
    ex: &EncodedExample,
    g: &mut Grads,
) -> f64 {
    let dec_in = ex.decoder_input();
    let targets = ex.targets();
    let enc = encode(params, layout, p, &ex.input);
    let dec = decode(params, layout, p, &enc.mem, &dec_in);
    let loss = nll(&dec.log_probs, &targets);

    let mut dlogits = dec.log_probs.mapv(f64::exp);
    for (t, &y) in targets.iter().enumerate() {
        dlogits[[t, y]] -= 1.0;
    }
    dlogits /= targets.len() as f64;

    let dhidden = linear_back(p, layout.out, &dec.hidden, &dlogits, g);
    let mut dx = layer_norm_back(p, layout.dec_norm, &dec.norm, &dhidden, g);
    let mut dmem = Array2::zeros(enc.mem.dim());
    for (b, c) in layout.decoder.iter().zip(&dec.blocks).rev() {
        dx = dec_block_back(p, b, c, &dx, &mut dmem, g);
    }
    embed_back(layout, &dec_in, &dx, g);

    let mut dx = layer_norm_back(p, layout.enc_norm, &enc.norm, &dmem, g);
    for (b, c) in layout.encoder.iter().zip(&enc.blocks).rev() {
        dx = enc_block_back(p, b, c, &dx, g);
    }
    embed_back(layout, &ex.input, &dx, g);
    loss
}

/// Loss of one example and its gradient over the trainable tensors.
pub fn example_gradient(params: &ParamSet, ex: &EncodedExample) -> (f64, GradSet) {
    let layout = params.layout();
    let p = params.values();
    let mut g = Grads::zeros(&p, &params.trainable_mask());
    let loss = loss_and_backward(params, &layout, &p, ex, &mut g);
    (loss, super::train::to_gradset(params, &g))
}

/// Next-token distributions after each prefix position (rows sum to 1).
pub fn next_token_probs(params: &ParamSet, input: &[usize], prefix: &[usize]) -> Mat {
    let layout = params.layout();
    let p = params.values();
    let enc = encode(params, &layout, &p, input);
    decode(params, &layout, &p, &enc.mem, prefix).log_probs.mapv(f64::exp)
}

/// Mean per-token log-likelihood of each candidate sequence followed by the
/// end marker. The input is encoded once.
pub(crate) fn sequence_scores(params: &ParamSet, input: &[usize], candidates: &[Vec<usize>]) -> Vec<f64> {
    let layout = params.layout();
    let p = params.values();
    let enc = encode(params, &layout, &p, input);
    candidates
        .iter()
        .map(|cand| {
            let ex = EncodedExample {
                input: Vec::new(),
                answer: cand.clone(),
            };
            let dec = decode(params, &layout, &p, &enc.mem, &ex.decoder_input());
            -nll(&dec.log_probs, &ex.targets())
        })
        .collect()
}

/// Argmax decoding until the end marker or `max_len` tokens.
pub(crate) fn greedy_ids(params: &ParamSet, input: &[usize], max_len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if max_len == 0 {
        return out;
    }
    let layout = params.layout();
    let p = params.values();
    let enc = encode(params, &layout, &p, input);
    let mut prefix = vec![BEGIN];
    while out.len() < max_len {
        let dec = decode(params, &layout, &p, &enc.mem, &prefix);
        let last = dec.log_probs.index_axis(Axis(0), prefix.len() - 1);
        let next = crate::baselines::argmax(last.as_slice().expect("row-major logits"));
        if next == END {
            break;
        }
        out.push(next);
        prefix.push(next);
    }
    out
}
