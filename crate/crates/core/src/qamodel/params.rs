use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::{GradSet, GradTensor};

/// Model dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPreset {
    pub name: String,
    pub d_model: usize,
    pub n_heads: usize,
    /// Blocks in the encoder and, separately, in the decoder.
    pub n_layers: usize,
    pub d_ff: usize,
}

impl ModelPreset {
    pub fn small() -> Self {
        ModelPreset {
            name: "small".into(),
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 256,
        }
    }

    pub fn base() -> Self {
        ModelPreset {
            name: "base".into(),
            d_model: 128,
            n_heads: 4,
            n_layers: 4,
            d_ff: 512,
        }
    }

    /// Two-dimensional single-layer model for gradient checking.
    pub fn tiny() -> Self {
        ModelPreset {
            name: "tiny".into(),
            d_model: 2,
            n_heads: 1,
            n_layers: 1,
            d_ff: 4,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "small" => Ok(Self::small()),
            "base" => Ok(Self::base()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(Error::Config(format!("preset {:?} has a zero dimension", self.name)));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Shared token embedding table.
    Embeddings,
    Encoder,
    Decoder,
    /// Projection from decoder states to vocabulary logits.
    Output,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Embeddings,
        ParamGroup::Encoder,
        ParamGroup::Decoder,
        ParamGroup::Output,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Embeddings => "embeddings",
            ParamGroup::Encoder => "encoder",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub group: ParamGroup,
    pub value: Array2<f64>,
}

/// Every parameter tensor of the encoder-decoder, in a fixed layout order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub preset: ModelPreset,
    pub vocab_size: usize,
    pub tensors: Vec<ParamTensor>,
    pub frozen: Vec<ParamGroup>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIdx {
    pub q: LinearIdx,
    pub k: LinearIdx,
    pub v: LinearIdx,
    pub o: LinearIdx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnIdx {
    pub up: LinearIdx,
    pub down: LinearIdx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncBlockIdx {
    pub norm_attn: NormIdx,
    pub attn: AttnIdx,
    pub norm_ffn: NormIdx,
    pub ffn: FfnIdx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecBlockIdx {
    pub norm_self: NormIdx,
    pub self_attn: AttnIdx,
    pub norm_cross: NormIdx,
    pub cross_attn: AttnIdx,
    pub norm_ffn: NormIdx,
    pub ffn: FfnIdx,
}

/// Indices of every tensor in [`ParamSet::tensors`].
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embed: usize,
    pub encoder: Vec<EncBlockIdx>,
    pub enc_norm: NormIdx,
    pub decoder: Vec<DecBlockIdx>,
    pub dec_norm: NormIdx,
    pub out: LinearIdx,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform with unit variance.
    Embedding,
    /// Glorot uniform over (rows, cols).
    Glorot,
    Ones,
    Zeros,
}

struct Spec {
    name: String,
    group: ParamGroup,
    shape: (usize, usize),
    init: Init,
}

struct LayoutBuilder {
    specs: Vec<Spec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, group: ParamGroup, shape: (usize, usize), init: Init) -> usize {
        self.specs.push(Spec {
            name,
            group,
            shape,
            init,
        });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, group: ParamGroup, d_in: usize, d_out: usize) -> LinearIdx {
        LinearIdx {
            w: self.push(format!("{prefix}.weight"), group, (d_in, d_out), Init::Glorot),
            b: self.push(format!("{prefix}.bias"), group, (1, d_out), Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, group: ParamGroup, d: usize) -> NormIdx {
        NormIdx {
            gain: self.push(format!("{prefix}.gain"), group, (1, d), Init::Ones),
            bias: self.push(format!("{prefix}.bias"), group, (1, d), Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, group: ParamGroup, d: usize) -> AttnIdx {
        AttnIdx {
            q: self.linear(&format!("{prefix}.query"), group, d, d),
            k: self.linear(&format!("{prefix}.key"), group, d, d),
            v: self.linear(&format!("{prefix}.value"), group, d, d),
            o: self.linear(&format!("{prefix}.out"), group, d, d),
        }
    }

    fn ffn(&mut self, prefix: &str, group: ParamGroup, d: usize, d_ff: usize) -> FfnIdx {
        FfnIdx {
            up: self.linear(&format!("{prefix}.up"), group, d, d_ff),
            down: self.linear(&format!("{prefix}.down"), group, d_ff, d),
        }
    }
}

fn build_layout(preset: &ModelPreset, vocab_size: usize) -> (Layout, Vec<Spec>) {
    use ParamGroup::*;
    let d = preset.d_model;
    let mut b = LayoutBuilder { specs: Vec::new() };
    let embed = b.push("embed.tokens".into(), Embeddings, (vocab_size, d), Init::Embedding);
    let encoder = (0..preset.n_layers)
        .map(|i| {
            let p = format!("encoder.{i}");
            EncBlockIdx {
                norm_attn: b.norm(&format!("{p}.norm_attn"), Encoder, d),
                attn: b.attn(&format!("{p}.self_attn"), Encoder, d),
                norm_ffn: b.norm(&format!("{p}.norm_ffn"), Encoder, d),
                ffn: b.ffn(&format!("{p}.ffn"), Encoder, d, preset.d_ff),
            }
        })
        .collect();
    let enc_norm = b.norm("encoder.final_norm", Encoder, d);
    let decoder = (0..preset.n_layers)
        .map(|i| {
            let p = format!("decoder.{i}");
            DecBlockIdx {
                norm_self: b.norm(&format!("{p}.norm_self"), Decoder, d),
                self_attn: b.attn(&format!("{p}.self_attn"), Decoder, d),
                norm_cross: b.norm(&format!("{p}.norm_cross"), Decoder, d),
                cross_attn: b.attn(&format!("{p}.cross_attn"), Decoder, d),
                norm_ffn: b.norm(&format!("{p}.norm_ffn"), Decoder, d),
                ffn: b.ffn(&format!("{p}.ffn"), Decoder, d, preset.d_ff),
            }
        })
        .collect();
    let dec_norm = b.norm("decoder.final_norm", Decoder, d);
    let out = b.linear("output.proj", Output, d, vocab_size);
    (
        Layout {
            embed,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            out,
        },
        b.specs,
    )
}

impl ParamSet {
    /// Freshly initialized parameters, deterministic per seed.
    pub fn init(preset: &ModelPreset, vocab_size: usize, seed: u64) -> Result<Self> {
        preset.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let (_, specs) = build_layout(preset, vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .into_iter()
            .map(|spec| {
                let (r, c) = spec.shape;
                let value = match spec.init {
                    Init::Zeros => Array2::zeros((r, c)),
                    Init::Ones => Array2::ones((r, c)),
                    Init::Embedding => {
                        let a = 3f64.sqrt();
                        Array2::from_shape_simple_fn((r, c), || rng.random_range(-a..a))
                    }
                    Init::Glorot => {
                        let a = (6.0 / (r + c) as f64).sqrt();
                        Array2::from_shape_simple_fn((r, c), || rng.random_range(-a..a))
                    }
                };
                ParamTensor {
                    name: spec.name,
                    group: spec.group,
                    value,
                }
            })
            .collect();
        Ok(ParamSet {
            preset: preset.clone(),
            vocab_size,
            tensors,
            frozen: Vec::new(),
        })
    }

    pub(crate) fn layout(&self) -> Layout {
        build_layout(&self.preset, self.vocab_size).0
    }

    /// Checks tensor names, shapes and finiteness against the preset layout.
    pub fn validate(&self) -> Result<()> {
        self.preset.validate()?;
        let (_, specs) = build_layout(&self.preset, self.vocab_size);
        if specs.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&self.tensors) {
            if spec.name != t.name || spec.group != t.group || spec.shape != t.value.dim() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match layout {} {:?}",
                    t.name,
                    t.value.dim(),
                    spec.name,
                    spec.shape
                )));
            }
            if t.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("tensor {} has non-finite entries", t.name)));
            }
        }
        Ok(())
    }

    pub fn freeze(&mut self, group: ParamGroup) {
        if !self.frozen.contains(&group) {
            self.frozen.push(group);
            self.frozen.sort();
        }
    }

    pub fn unfreeze(&mut self, group: ParamGroup) {
        self.frozen.retain(|g| *g != group);
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }

    pub fn trainable_groups(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL.into_iter().filter(|g| !self.is_frozen(*g)).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub(crate) fn values(&self) -> Vec<&Array2<f64>> {
        self.tensors.iter().map(|t| &t.value).collect()
    }

    pub(crate) fn trainable_mask(&self) -> Vec<bool> {
        self.tensors.iter().map(|t| !self.is_frozen(t.group)).collect()
    }

    /// A zero gradient set over the trainable tensors.
    pub fn zero_grads(&self) -> GradSet {
        GradSet {
            tensors: self
                .tensors
                .iter()
                .filter(|t| !self.is_frozen(t.group))
                .map(|t| GradTensor {
                    name: t.name.clone(),
                    shape: t.value.dim(),
                    data: vec![0.0; t.value.len()],
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_is_larger_than_small() {
        let (s, b) = (ModelPreset::small(), ModelPreset::base());
        assert!(b.d_model > s.d_model && b.n_heads > s.n_heads && b.n_layers > s.n_layers && b.d_ff > s.d_ff);
    }

    #[test]
    fn init_matches_layout_and_is_seeded() {
        let p = ParamSet::init(&ModelPreset::small(), 50, 3).unwrap();
        p.validate().unwrap();
        assert_eq!(p, ParamSet::init(&ModelPreset::small(), 50, 3).unwrap());
        assert_ne!(p, ParamSet::init(&ModelPreset::small(), 50, 4).unwrap());
        assert_eq!(p.get("embed.tokens").unwrap().value.dim(), (50, 64));
        assert_eq!(p.get("output.proj.weight").unwrap().value.dim(), (64, 50));
        assert!(p.get("decoder.1.cross_attn.key.weight").is_some());
        for g in ParamGroup::ALL {
            assert!(p.tensors.iter().any(|t| t.group == g));
        }
    }

    #[test]
    fn freezing_restricts_grads() {
        let mut p = ParamSet::init(&ModelPreset::tiny(), 10, 0).unwrap();
        let all = p.zero_grads().tensors.len();
        p.freeze(ParamGroup::Encoder);
        p.freeze(ParamGroup::Decoder);
        p.freeze(ParamGroup::Encoder);
        assert_eq!(p.frozen, vec![ParamGroup::Encoder, ParamGroup::Decoder]);
        let names: Vec<String> = p.zero_grads().tensors.into_iter().map(|t| t.name).collect();
        assert_eq!(names, ["embed.tokens", "output.proj.weight", "output.proj.bias"]);
        assert!(names.len() < all);
        assert_eq!(p.trainable_groups(), vec![ParamGroup::Embeddings, ParamGroup::Output]);
    }

    #[test]
    fn bad_presets_rejected() {
        let mut p = ModelPreset::small();
        p.n_heads = 3;
        assert!(p.validate().is_err());
        assert!(ModelPreset::by_name("huge").is_err());
        assert!(ParamSet::init(&ModelPreset::small(), 0, 0).is_err());
    }
}
