//! The thumbnail illuminant-estimation network: parameter container,
//! Kaiming initialization, forward pass with cached intermediates, the
//! hand-written backward pass, the versioned binary weight format,
//! ablation variants, and feature/focus visualization maps.
//!
//! The default network is two 3x3 convolutions, each followed by 2x2 max
//! pooling and a ReLU, then a 1x1 convolution with ReLU and per-channel
//! global average pooling, L2-normalized into a unit illuminant estimate.
//! No layer carries a bias term.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{self, LabeledImage, THUMB_HEIGHT, THUMB_WIDTH};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, global_avg_pool, l2_normalize, maxpool2x2, relu, Kernel4, PoolRouting, Tensor3,
};

/// Weight-file magic, version and header size.
const WEIGHT_MAGIC: &[u8; 4] = b"CMW1";
const WEIGHT_VERSION: u8 = 0x01;
const WEIGHT_HEADER_LEN: usize = 8;

/// Network variants: the default two-conv net plus the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Default network.
    Cm,
    /// Pooling removed; spatial dims stay 48x32 until the global average.
    NoMaxPool,
    /// ReLU removed from the pool stages (the final ReLU stays).
    NoRelu,
    /// One wider convolution (38 channels) instead of two layers.
    SingleConv,
    /// Consumes rgb chromaticity instead of intensities.
    ChromaInput,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Cm,
        Variant::NoMaxPool,
        Variant::NoRelu,
        Variant::SingleConv,
        Variant::ChromaInput,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            Variant::Cm => "cm",
            Variant::NoMaxPool => "cm-a",
            Variant::NoRelu => "cm-b",
            Variant::SingleConv => "cm-c",
            Variant::ChromaInput => "cm-d",
        }
    }

    fn code(self) -> u8 {
        match self {
            Variant::Cm => 0,
            Variant::NoMaxPool => 1,
            Variant::NoRelu => 2,
            Variant::SingleConv => 3,
            Variant::ChromaInput => 4,
        }
    }

    fn from_code(code: u8) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.code() == code)
    }

    fn pools(self) -> bool {
        self != Variant::NoMaxPool
    }

    fn rectifies_stages(self) -> bool {
        self != Variant::NoRelu
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.cli_name() == s)
            .ok_or_else(|| Error::Data(format!("unknown variant '{s}' (expected cm|cm-a|cm-b|cm-c|cm-d)")))
    }
}

/// The filter banks of the network. Immutable once constructed; training
/// mutates a private copy through [`CmParams::flat_iter_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct CmParams {
    variant: Variant,
    f1: Kernel4,
    f2: Option<Kernel4>,
    f3: Kernel4,
}

fn bank_shapes(variant: Variant) -> (usize, Option<usize>, usize) {
    // (f1 cout, f2 cout, f3 cin); f3 always maps to 3 output channels
    match variant {
        Variant::SingleConv => (38, None, 38),
        _ => (7, Some(14), 14),
    }
}

impl CmParams {
    /// All-zero filters (useful for tests; produces a degenerate estimate).
    pub fn zeros(variant: Variant) -> CmParams {
        let (c1, c2, c3in) = bank_shapes(variant);
        CmParams {
            variant,
            f1: Kernel4::zeros(3, 3, 3, c1),
            f2: c2.map(|c| Kernel4::zeros(3, 3, c1, c)),
            f3: Kernel4::zeros(1, 1, c3in, 3),
        }
    }

    /// Kaiming-normal initialization: each weight is drawn from
    /// `Normal(0, sqrt(2 / fan_in))` with `fan_in = kh*kw*cin`, from a
    /// deterministic seeded generator.
    pub fn init_kaiming(seed: u64, variant: Variant) -> CmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = CmParams::zeros(variant);
        for bank in [Some(&mut params.f1), params.f2.as_mut(), Some(&mut params.f3)]
            .into_iter()
            .flatten()
        {
            let fan_in = (bank.kh() * bank.kw() * bank.cin()) as f32;
            let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("valid std");
            for w in bank.weights_mut() {
                *w = normal.sample(&mut rng);
            }
        }
        params
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn f1(&self) -> &Kernel4 {
        &self.f1
    }

    pub fn f2(&self) -> Option<&Kernel4> {
        self.f2.as_ref()
    }

    pub fn f3(&self) -> &Kernel4 {
        &self.f3
    }

    pub fn param_count(&self) -> usize {
        self.f1.len() + self.f2.as_ref().map_or(0, Kernel4::len) + self.f3.len()
    }

    /// Weights in canonical order (F1, F2, F3, each row-major). This is the
    /// serialization order and the optimizer's flattening order.
    pub fn flat_iter(&self) -> impl Iterator<Item = f32> + '_ {
        self.f1
            .weights()
            .iter()
            .chain(self.f2.iter().flat_map(|k| k.weights().iter()))
            .chain(self.f3.weights().iter())
            .copied()
    }

    pub fn flat_iter_mut(&mut self) -> impl Iterator<Item = &mut f32> {
        self.f1
            .weights_mut()
            .iter_mut()
            .chain(self.f2.iter_mut().flat_map(|k| k.weights_mut().iter_mut()))
            .chain(self.f3.weights_mut().iter_mut())
    }

    /// Serialize to the `CMW1` byte format: 4 magic bytes, 1 version byte,
    /// 1 variant byte, 2 reserved zero bytes, then every weight as a
    /// little-endian 32-bit float in canonical order. The default variant
    /// serializes to exactly 4460 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(WEIGHT_HEADER_LEN + 4 * self.param_count());
        out.extend_from_slice(WEIGHT_MAGIC);
        out.push(WEIGHT_VERSION);
        out.push(self.variant.code());
        out.extend_from_slice(&[0, 0]);
        for w in self.flat_iter() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Parse the `CMW1` byte format; rejects bad magic, version, variant or
    /// length without producing a partial model.
    pub fn from_bytes(bytes: &[u8]) -> Result<CmParams> {
        if bytes.len() < WEIGHT_HEADER_LEN {
            return Err(Error::Format("weight file shorter than its header".into()));
        }
        if &bytes[0..4] != WEIGHT_MAGIC {
            return Err(Error::Format("bad weight file magic (expected CMW1)".into()));
        }
        if bytes[4] != WEIGHT_VERSION {
            return Err(Error::Format(format!("unsupported weight file version {}", bytes[4])));
        }
        let variant = Variant::from_code(bytes[5])
            .ok_or_else(|| Error::Format(format!("unknown variant code {}", bytes[5])))?;
        let mut params = CmParams::zeros(variant);
        let expected = WEIGHT_HEADER_LEN + 4 * params.param_count();
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "weight file is {} bytes, expected {} for variant {}",
                bytes.len(),
                expected,
                variant
            )));
        }
        let mut chunks = bytes[WEIGHT_HEADER_LEN..].chunks_exact(4);
        for w in params.flat_iter_mut() {
            let raw = chunks.next().expect("length checked above");
            *w = f32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CmParams> {
        let bytes = fs::read(path)?;
        CmParams::from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Gradients shaped like [`CmParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub f1: Kernel4,
    pub f2: Option<Kernel4>,
    pub f3: Kernel4,
}

impl ParamGrads {
    pub fn zeros_like(params: &CmParams) -> ParamGrads {
        let zero = |k: &Kernel4| Kernel4::zeros(k.kh(), k.kw(), k.cin(), k.cout());
        ParamGrads { f1: zero(&params.f1), f2: params.f2.as_ref().map(zero), f3: zero(&params.f3) }
    }

    pub fn flat_iter(&self) -> impl Iterator<Item = f32> + '_ {
        self.f1
            .weights()
            .iter()
            .chain(self.f2.iter().flat_map(|k| k.weights().iter()))
            .chain(self.f3.weights().iter())
            .copied()
    }

    pub fn flat_iter_mut(&mut self) -> impl Iterator<Item = &mut f32> {
        self.f1
            .weights_mut()
            .iter_mut()
            .chain(self.f2.iter_mut().flat_map(|k| k.weights_mut().iter_mut()))
            .chain(self.f3.weights_mut().iter_mut())
    }

    /// Elementwise accumulate (shapes must agree).
    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.flat_iter_mut().zip(other.flat_iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f32) {
        for w in self.flat_iter_mut() {
            *w *= k;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.flat_iter().all(f32::is_finite)
    }
}

/// One conv-plus-pooling stage of the cached forward pass.
struct StageCache {
    /// Post-convolution activations (pre pooling).
    conv_out: Tensor3,
    /// Argmax routing when the variant pools.
    routing: Option<PoolRouting>,
    /// Stage output after pooling and/or rectification.
    output: Tensor3,
}

/// Every intermediate needed to run the backward pass.
pub struct ForwardCache {
    variant: Variant,
    input: Tensor3,
    stages: Vec<StageCache>,
    conv3_out: Tensor3,
    /// Final 3-channel response after the last ReLU.
    response: Tensor3,
    /// Per-channel mean of the response (the pre-normalization vector).
    pooled_mean: [f32; 3],
    degenerate: bool,
}

impl ForwardCache {
    pub fn response(&self) -> &Tensor3 {
        &self.response
    }

    pub fn pooled_mean(&self) -> [f32; 3] {
        self.pooled_mean
    }
}

/// Result of a cached forward pass.
pub struct Forward {
    /// Unit estimate with nonnegative components.
    pub estimate: [f32; 3],
    /// Set when the network response was all-zero and the gray fallback
    /// was substituted.
    pub degenerate: bool,
    pub cache: ForwardCache,
}

/// Convert intensities to rgb chromaticity (`r = R/(R+G+B)`, ...); all-zero
/// pixels stay zero so masking survives the conversion.
pub fn to_chromaticity(t: &Tensor3) -> Tensor3 {
    let mut out = t.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let sum = px[0] + px[1] + px[2];
        if sum > 0.0 {
            px[0] /= sum;
            px[1] /= sum;
            px[2] /= sum;
        }
    }
    out
}

/// Apply the variant's input convention to a max-normalized tensor.
pub fn prepare_input(variant: Variant, t: Tensor3) -> Tensor3 {
    match variant {
        Variant::ChromaInput => to_chromaticity(&t),
        _ => t,
    }
}

fn stage_forward(variant: Variant, bank: &Kernel4, input: &Tensor3) -> Result<StageCache> {
    let pad = (bank.kh() - 1) / 2;
    let conv_out = conv2d(input, bank, pad, 1)?;
    let (pooled, routing) = if variant.pools() {
        let (p, r) = maxpool2x2(&conv_out)?;
        (p, Some(r))
    } else {
        (conv_out.clone(), None)
    };
    let output = if variant.rectifies_stages() { relu(&pooled) } else { pooled };
    Ok(StageCache { conv_out, routing, output })
}

/// Run the network on a 48x32x3 input (already max-normalized, and already
/// converted to chromaticity for that variant). Returns the unit estimate,
/// the degenerate flag and the cache needed for [`backward`].
pub fn forward(params: &CmParams, input: &Tensor3) -> Result<Forward> {
    if input.height() != THUMB_HEIGHT || input.width() != THUMB_WIDTH || input.channels() != 3 {
        return Err(Error::Shape(format!(
            "network input must be {}x{}x3, got {}x{}x{}",
            THUMB_WIDTH,
            THUMB_HEIGHT,
            input.width(),
            input.height(),
            input.channels()
        )));
    }
    let variant = params.variant;
    let mut stages = Vec::with_capacity(2);
    let stage1 = stage_forward(variant, &params.f1, input)?;
    stages.push(stage1);
    if let Some(f2) = &params.f2 {
        let stage2 = stage_forward(variant, f2, &stages[0].output)?;
        stages.push(stage2);
    }
    let conv3_out = conv2d(&stages.last().unwrap().output, &params.f3, 0, 1)?;
    let response = relu(&conv3_out);
    let pooled_mean = global_avg_pool(&response)?;
    let (estimate, degenerate) = l2_normalize(pooled_mean);
    Ok(Forward {
        estimate,
        degenerate,
        cache: ForwardCache {
            variant,
            input: input.clone(),
            stages,
            conv3_out,
            response,
            pooled_mean,
            degenerate,
        },
    })
}

/// Full pipeline for one 48x32 image: max-normalize, apply the variant's
/// input convention, run the network.
pub fn estimate_image(params: &CmParams, img: &LabeledImage) -> Result<([f32; 3], bool)> {
    let t = data::normalize_input(img)?;
    let t = prepare_input(params.variant, t);
    let fwd = forward(params, &t)?;
    Ok((fwd.estimate, fwd.degenerate))
}

/// Gradient and input-gradient of a convolution, mirroring the forward loop.
fn conv2d_backward(
    input: &Tensor3,
    kernel: &Kernel4,
    d_out: &Tensor3,
    pad: usize,
    d_kernel: &mut Kernel4,
    want_d_input: bool,
) -> Option<Tensor3> {
    let (cin, cout) = (kernel.cin(), kernel.cout());
    let (kh, kw) = (kernel.kh(), kernel.kw());
    let (in_h, in_w) = (input.height(), input.width());
    let (out_h, out_w) = (d_out.height(), d_out.width());
    let mut d_input = if want_d_input {
        Some(Tensor3::zeros(in_h, in_w, input.channels()))
    } else {
        None
    };
    for oy in 0..out_h {
        let ky_lo = pad.saturating_sub(oy);
        let ky_hi = kh.min(in_h + pad - oy);
        for ox in 0..out_w {
            let kx_lo = pad.saturating_sub(ox);
            let kx_hi = kw.min(in_w + pad - ox);
            let g_base = (oy * out_w + ox) * cout;
            let g = &d_out.data()[g_base..g_base + cout];
            for ky in ky_lo..ky_hi {
                let row_base = (oy + ky - pad) * in_w * cin;
                for kx in kx_lo..kx_hi {
                    let in_base = row_base + (ox + kx - pad) * cin;
                    let in_vals = &input.data()[in_base..in_base + cin];
                    let w_base = (ky * kw + kx) * cin * cout;
                    let w_blk = &kernel.weights()[w_base..w_base + cin * cout];
                    let dw_blk = &mut d_kernel.weights_mut()[w_base..w_base + cin * cout];
                    for (ci, (&x, (w_row, dw_row))) in in_vals
                        .iter()
                        .zip(w_blk.chunks_exact(cout).zip(dw_blk.chunks_exact_mut(cout)))
                        .enumerate()
                    {
                        let mut acc = 0.0f32;
                        for ((dw, &w), &gv) in dw_row.iter_mut().zip(w_row).zip(g) {
                            *dw += x * gv;
                            acc += w * gv;
                        }
                        if let Some(d_in) = &mut d_input {
                            d_in.data_mut()[in_base + ci] += acc;
                        }
                    }
                }
            }
        }
    }
    d_input
}

/// Zero where the rectified activation is zero.
fn relu_backward(d: &Tensor3, activated: &Tensor3) -> Tensor3 {
    let data = d
        .data()
        .iter()
        .zip(activated.data())
        .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
        .collect();
    Tensor3::from_vec(d.height(), d.width(), d.channels(), data).expect("same shape")
}

/// Scatter pooled gradients back to their argmax positions.
fn maxpool_backward(d_pooled: &Tensor3, routing: &PoolRouting, pre_pool: &Tensor3) -> Tensor3 {
    let mut d = Tensor3::zeros(pre_pool.height(), pre_pool.width(), pre_pool.channels());
    for y in 0..routing.out_height() {
        for x in 0..routing.out_width() {
            for c in 0..routing.channels() {
                let (sy, sx) = routing.source(y, x, c);
                let i = d.index(sy, sx, c);
                d.data_mut()[i] += d_pooled.get(y, x, c);
            }
        }
    }
    d
}

/// Backpropagate a loss gradient on the estimate through normalization,
/// averaging, the final ReLU and every conv/pool stage, producing one
/// gradient per filter weight.
pub fn backward(params: &CmParams, cache: &ForwardCache, d_estimate: [f32; 3]) -> Result<ParamGrads> {
    if cache.variant != params.variant
        || cache.stages.len() != if params.f2.is_some() { 2 } else { 1 }
        || cache.stages[0].conv_out.channels() != params.f1.cout()
        || cache.conv3_out.channels() != params.f3.cout()
    {
        return Err(Error::Shape("forward cache does not match these parameters".into()));
    }

    let mut grads = ParamGrads::zeros_like(params);

    // through L2 normalization: d_v = (d_e - e (e . d_e)) / ||v||.
    // A degenerate pass produced a constant fallback, so nothing flows back.
    let d_mean: [f32; 3] = if cache.degenerate {
        [0.0; 3]
    } else {
        let v = cache.pooled_mean;
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let e = [v[0] / norm, v[1] / norm, v[2] / norm];
        let dot = e[0] * d_estimate[0] + e[1] * d_estimate[1] + e[2] * d_estimate[2];
        [
            (d_estimate[0] - e[0] * dot) / norm,
            (d_estimate[1] - e[1] * dot) / norm,
            (d_estimate[2] - e[2] * dot) / norm,
        ]
    };

    // through the global average: every cell of a channel sees d_mean/(H*W)
    let resp = &cache.response;
    let cells = (resp.height() * resp.width()) as f32;
    let mut d_response = Tensor3::zeros(resp.height(), resp.width(), 3);
    for px in d_response.data_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = d_mean[c] / cells;
        }
    }

    let d_conv3 = relu_backward(&d_response, resp);
    let last_output = &cache.stages.last().unwrap().output;
    let mut d_stage_out = conv2d_backward(last_output, &params.f3, &d_conv3, 0, &mut grads.f3, true)
        .expect("input gradient requested");

    let banks: Vec<(&Kernel4, &mut Kernel4)> = match (&params.f2, &mut grads.f2) {
        (Some(f2), Some(g2)) => vec![(&params.f1, &mut grads.f1), (f2, g2)],
        _ => vec![(&params.f1, &mut grads.f1)],
    };

    for (idx, (bank, d_bank)) in banks.into_iter().enumerate().rev() {
        let stage = &cache.stages[idx];
        let mut d = d_stage_out;
        if cache.variant.rectifies_stages() {
            d = relu_backward(&d, &stage.output);
        }
        if let Some(routing) = &stage.routing {
            d = maxpool_backward(&d, routing, &stage.conv_out);
        }
        let stage_input =
            if idx == 0 { &cache.input } else { &cache.stages[idx - 1].output };
        let pad = (bank.kh() - 1) / 2;
        // the image itself needs no gradient
        let d_in = conv2d_backward(stage_input, bank, &d, pad, d_bank, idx > 0);
        d_stage_out = match d_in {
            Some(t) => t,
            None => break,
        };
    }
    Ok(grads)
}

/// Visualization maps for one input.
pub struct FeatureMaps {
    /// Rectified pre-pool activations of the last feature convolution
    /// (24x16x14 for the default net).
    pub features: Tensor3,
    /// Final 3-channel response ahead of the averaging (12x8x3).
    pub response: Tensor3,
    /// Per-pixel channel mean of the response, min-max normalized to [0, 1].
    /// Brighter cells contribute more to the estimate.
    pub focus: Tensor3,
}

/// Compute the learned feature maps, the final response and the focus map.
pub fn feature_maps(params: &CmParams, input: &Tensor3) -> Result<FeatureMaps> {
    let fwd = forward(params, input)?;
    let last_stage = fwd.cache.stages.last().unwrap();
    let features = relu(&last_stage.conv_out);
    let response = fwd.cache.response.clone();

    let (h, w) = (response.height(), response.width());
    let mut focus = Tensor3::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let m = (response.get(y, x, 0) + response.get(y, x, 1) + response.get(y, x, 2)) / 3.0;
            focus.set(y, x, 0, m);
        }
    }
    let min = focus.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let max = focus.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if max > min {
        for v in focus.data_mut() {
            *v = (*v - min) / (max - min);
        }
    } else {
        for v in focus.data_mut() {
            *v = 0.0;
        }
    }
    Ok(FeatureMaps { features, response, focus })
}
