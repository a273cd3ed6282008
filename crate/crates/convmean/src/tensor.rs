//! Dense tensor primitives for the thumbnail network: 2-D convolution,
//! 2x2 max pooling, ReLU, per-channel global average pooling and L2
//! normalization.
//!
//! All operations are pure functions over immutable inputs and use 32-bit
//! arithmetic throughout. Layout is channel-last: `data[(y * w + x) * c + ch]`.

use crate::error::{Error, Result};

/// Norms below this are treated as a degenerate (all-zero) response.
pub const NORM_EPSILON: f32 = 1e-9;

/// Fallback estimate for a degenerate response: ideal gray, unit length.
pub const GRAY_FALLBACK: [f32; 3] = [
    0.577_350_26_f32, // 1/sqrt(3)
    0.577_350_26_f32,
    0.577_350_26_f32,
];

/// H x W x C array of reals, channel-last, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    /// Zero-filled tensor.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "dims must be positive");
        Tensor3 { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    /// Wrap an existing buffer; its length must equal `h*w*c`.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape("tensor dims must be positive".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Tensor3 { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Elementwise map into a new tensor of the same shape.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor3 {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// kh x kw x cin x cout filter bank, no bias terms.
///
/// Weight layout is `[ky][kx][cin][cout]` row-major; this is also the
/// serialization order of the weight file format.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4 {
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    weights: Vec<f32>,
}

impl Kernel4 {
    pub fn zeros(kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        assert!(kh > 0 && kw > 0 && cin > 0 && cout > 0, "dims must be positive");
        Kernel4 { kh, kw, cin, cout, weights: vec![0.0; kh * kw * cin * cout] }
    }

    pub fn from_vec(kh: usize, kw: usize, cin: usize, cout: usize, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != kh * kw * cin * cout {
            return Err(Error::Shape(format!(
                "kernel weight count {} does not match {}x{}x{}x{}",
                weights.len(),
                kh,
                kw,
                cin,
                cout
            )));
        }
        Ok(Kernel4 { kh, kw, cin, cout, weights })
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn cin(&self) -> usize {
        self.cin
    }

    pub fn cout(&self) -> usize {
        self.cout
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    /// Number of weights in the bank.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kw + kx) * self.cin + ci) * self.cout + co
    }

    #[inline]
    pub fn get(&self, ky: usize, kx: usize, ci: usize, co: usize) -> f32 {
        self.weights[self.index(ky, kx, ci, co)]
    }

    #[inline]
    pub fn set(&mut self, ky: usize, kx: usize, ci: usize, co: usize, v: f32) {
        let i = self.index(ky, kx, ci, co);
        self.weights[i] = v;
    }

    pub fn same_shape(&self, other: &Kernel4) -> bool {
        self.kh == other.kh && self.kw == other.kw && self.cin == other.cin && self.cout == other.cout
    }
}

/// Argmax positions recorded by [`maxpool2x2`], one per output cell and
/// channel, laid out like the pooled tensor. Stored as 2-bit window offsets
/// (row-major scan order) to keep the cache small.
#[derive(Debug, Clone)]
pub struct PoolRouting {
    out_height: usize,
    out_width: usize,
    channels: usize,
    offsets: Vec<u8>,
}

impl PoolRouting {
    pub fn out_height(&self) -> usize {
        self.out_height
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Source `(row, col)` in the pre-pool tensor for output cell `(y, x, c)`.
    pub fn source(&self, y: usize, x: usize, c: usize) -> (usize, usize) {
        let off = self.offsets[(y * self.out_width + x) * self.channels + c];
        (2 * y + (off >> 1) as usize, 2 * x + (off & 1) as usize)
    }
}

/// Widest filter bank the blocked fast path handles on the stack.
const MAX_BLOCK_COUT: usize = 64;

/// 2-D cross-correlation (no kernel flip) with zero padding.
///
/// Output dims are `(dim + 2*pad - k) / stride + 1` and must divide exactly.
/// Accumulation order per output cell is ky, kx, cin, cout regardless of the
/// code path taken.
pub fn conv2d(input: &Tensor3, kernel: &Kernel4, pad: usize, stride: usize) -> Result<Tensor3> {
    if stride == 0 {
        return Err(Error::Shape("conv2d stride must be positive".into()));
    }
    if kernel.cin != input.channels {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {} channels, kernel expects {}",
            input.channels, kernel.cin
        )));
    }
    let out_h = conv_out_dim(input.height, kernel.kh, pad, stride, "height")?;
    let out_w = conv_out_dim(input.width, kernel.kw, pad, stride, "width")?;

    let mut out = Tensor3::zeros(out_h, out_w, kernel.cout);
    if stride == 1 && kernel.cout <= MAX_BLOCK_COUT {
        conv2d_stride1_blocked(input, kernel, pad, out_h, out_w, &mut out);
    } else {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let base = (oy * out_w + ox) * kernel.cout;
                conv_cell(input, kernel, pad, stride, oy, ox, &mut out.data[base..base + kernel.cout]);
            }
        }
    }
    Ok(out)
}

/// Accumulate one output cell into `acc` (length `cout`). Valid kernel taps
/// are computed analytically so the loops stay branch-free.
#[inline]
fn conv_cell(
    input: &Tensor3,
    kernel: &Kernel4,
    pad: usize,
    stride: usize,
    oy: usize,
    ox: usize,
    acc: &mut [f32],
) {
    let (cin, cout) = (kernel.cin, kernel.cout);
    let (oy_s, ox_s) = (oy * stride, ox * stride);
    let ky_lo = pad.saturating_sub(oy_s);
    let ky_hi = kernel.kh.min(input.height + pad - oy_s);
    let kx_lo = pad.saturating_sub(ox_s);
    let kx_hi = kernel.kw.min(input.width + pad - ox_s);
    for ky in ky_lo..ky_hi {
        let row_base = (oy_s + ky - pad) * input.width * cin;
        for kx in kx_lo..kx_hi {
            let in_base = row_base + (ox_s + kx - pad) * cin;
            let in_vals = &input.data[in_base..in_base + cin];
            let w_base = (ky * kernel.kw + kx) * cin * cout;
            let w_blk = &kernel.weights[w_base..w_base + cin * cout];
            for (&v, w_row) in in_vals.iter().zip(w_blk.chunks_exact(cout)) {
                for (a, &w) in acc.iter_mut().zip(w_row) {
                    *a += v * w;
                }
            }
        }
    }
}

/// Stride-1 path: interior output columns (where every kx tap is in bounds)
/// are processed four at a time so each weight row is loaded once per block.
fn conv2d_stride1_blocked(
    input: &Tensor3,
    kernel: &Kernel4,
    pad: usize,
    out_h: usize,
    out_w: usize,
    out: &mut Tensor3,
) {
    let (cin, cout) = (kernel.cin, kernel.cout);
    let (kh, kw) = (kernel.kh, kernel.kw);
    // interior columns satisfy ox >= pad and ox + kw - 1 - pad <= width - 1
    let x_lo = pad.min(out_w);
    let x_hi = (input.width + pad + 1).saturating_sub(kw).min(out_w).max(x_lo);

    for oy in 0..out_h {
        let ky_lo = pad.saturating_sub(oy);
        let ky_hi = kh.min(input.height + pad - oy);

        for ox in (0..x_lo).chain(x_hi..out_w) {
            let base = (oy * out_w + ox) * cout;
            conv_cell(input, kernel, pad, 1, oy, ox, &mut out.data[base..base + cout]);
        }

        let mut ox = x_lo;
        while ox + 4 <= x_hi {
            let mut acc = [[0f32; MAX_BLOCK_COUT]; 4];
            for ky in ky_lo..ky_hi {
                let row_base = (oy + ky - pad) * input.width * cin;
                for kx in 0..kw {
                    let in_base = row_base + (ox + kx - pad) * cin;
                    let w_base = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let vs = [
                            input.data[in_base + ci],
                            input.data[in_base + cin + ci],
                            input.data[in_base + 2 * cin + ci],
                            input.data[in_base + 3 * cin + ci],
                        ];
                        let w_row = &kernel.weights[w_base + ci * cout..w_base + (ci + 1) * cout];
                        for (a, &v) in acc.iter_mut().zip(vs.iter()) {
                            for (x, &w) in a[..cout].iter_mut().zip(w_row) {
                                *x += v * w;
                            }
                        }
                    }
                }
            }
            for (j, a) in acc.iter().enumerate() {
                let base = (oy * out_w + ox + j) * cout;
                out.data[base..base + cout].copy_from_slice(&a[..cout]);
            }
            ox += 4;
        }
        for ox in ox..x_hi {
            let base = (oy * out_w + ox) * cout;
            conv_cell(input, kernel, pad, 1, oy, ox, &mut out.data[base..base + cout]);
        }
    }
}

fn conv_out_dim(dim: usize, k: usize, pad: usize, stride: usize, name: &str) -> Result<usize> {
    let padded = dim + 2 * pad;
    if padded < k {
        return Err(Error::Shape(format!(
            "conv2d {name} {dim} with pad {pad} is smaller than kernel {k}"
        )));
    }
    let span = padded - k;
    if span % stride != 0 {
        return Err(Error::Shape(format!(
            "conv2d {name} {dim} with pad {pad}, kernel {k}, stride {stride} does not tile evenly"
        )));
    }
    Ok(span / stride + 1)
}

/// Non-overlapping 2x2 max pooling, stride 2, per channel.
///
/// Ties resolve to the first element in row-major window order so the
/// recorded routing (and therefore gradients) are deterministic.
pub fn maxpool2x2(input: &Tensor3) -> Result<(Tensor3, PoolRouting)> {
    if input.height % 2 != 0 || input.width % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2x2 requires even dims, got {}x{}",
            input.height, input.width
        )));
    }
    let (out_h, out_w, c) = (input.height / 2, input.width / 2, input.channels);
    let mut out = Tensor3::zeros(out_h, out_w, c);
    let mut offsets = vec![0u8; out_h * out_w * c];
    let row_len = input.width * c;
    for oy in 0..out_h {
        let top = &input.data[2 * oy * row_len..(2 * oy + 1) * row_len];
        let bottom = &input.data[(2 * oy + 1) * row_len..(2 * oy + 2) * row_len];
        for ox in 0..out_w {
            let col = 2 * ox * c;
            // window cells in row-major scan order; strict '>' keeps the first
            let cells = [
                &top[col..col + c],
                &top[col + c..col + 2 * c],
                &bottom[col..col + c],
                &bottom[col + c..col + 2 * c],
            ];
            let base = (oy * out_w + ox) * c;
            for ch in 0..c {
                let mut best = cells[0][ch];
                let mut off = 0u8;
                for (i, cell) in cells.iter().enumerate().skip(1) {
                    if cell[ch] > best {
                        best = cell[ch];
                        off = i as u8;
                    }
                }
                out.data[base + ch] = best;
                offsets[base + ch] = off;
            }
        }
    }
    Ok((out, PoolRouting { out_height: out_h, out_width: out_w, channels: c, offsets }))
}

/// Elementwise `max(x, 0)`.
pub fn relu(input: &Tensor3) -> Tensor3 {
    input.map(|v| v.max(0.0))
}

/// Per-channel arithmetic mean over all spatial positions; requires a
/// 3-channel input. Accumulates in 64-bit to keep the mean faithful.
pub fn global_avg_pool(input: &Tensor3) -> Result<[f32; 3]> {
    if input.channels != 3 {
        return Err(Error::Shape(format!(
            "global_avg_pool expects 3 channels, got {}",
            input.channels
        )));
    }
    let mut sums = [0.0f64; 3];
    for px in input.data.chunks_exact(3) {
        sums[0] += px[0] as f64;
        sums[1] += px[1] as f64;
        sums[2] += px[2] as f64;
    }
    let n = (input.height * input.width) as f64;
    Ok([(sums[0] / n) as f32, (sums[1] / n) as f32, (sums[2] / n) as f32])
}

/// Scale to unit L2 norm. A norm below [`NORM_EPSILON`] signals an all-zero
/// network response; the result is then [`GRAY_FALLBACK`] with the degenerate
/// flag set.
pub fn l2_normalize(v: [f32; 3]) -> ([f32; 3], bool) {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm < NORM_EPSILON {
        (GRAY_FALLBACK, true)
    } else {
        ([v[0] / norm, v[1] / norm, v[2] / norm], false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3 {
        let data = (0..h * w * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Tensor3::from_vec(h, w, c, data).unwrap()
    }

    fn random_kernel(rng: &mut ChaCha8Rng, kh: usize, kw: usize, cin: usize, cout: usize) -> Kernel4 {
        let data = (0..kh * kw * cin * cout).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Kernel4::from_vec(kh, kw, cin, cout, data).unwrap()
    }

    // 64-bit magnitude scale of a same-size 3x3 correlation: sum of |x|*|w|
    // accumulated per output cell. Float-comparison tolerances are relative
    // to this accumulation scale.
    fn conv_abs_scale(input: &Tensor3, kernel: &Kernel4) -> Vec<f64> {
        let (h, w) = (input.height(), input.width());
        let mut scale = vec![0.0f64; h * w * kernel.cout()];
        for oy in 0..h {
            for ox in 0..w {
                for co in 0..kernel.cout() {
                    let mut s = 0.0f64;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (iy, ix) = (oy as isize + ky - 1, ox as isize + kx - 1);
                            if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                continue;
                            }
                            for ci in 0..kernel.cin() {
                                s += (input.get(iy as usize, ix as usize, ci) as f64).abs()
                                    * (kernel.get(ky as usize, kx as usize, ci, co) as f64).abs();
                            }
                        }
                    }
                    scale[(oy * w + ox) * kernel.cout() + co] = s;
                }
            }
        }
        scale
    }

    #[test]
    fn conv_center_tap_scales_single_pixel() {
        let input = Tensor3::from_vec(1, 1, 1, vec![5.0]).unwrap();
        let mut kernel = Kernel4::zeros(3, 3, 1, 1);
        kernel.set(1, 1, 0, 0, 2.0);
        let out = conv2d(&input, &kernel, 1, 1).unwrap();
        assert_eq!((out.height(), out.width(), out.channels()), (1, 1, 1));
        assert_eq!(out.get(0, 0, 0), 10.0);
    }

    #[test]
    fn conv_ones_counts_window_overlap() {
        let input = Tensor3::from_vec(3, 3, 1, vec![1.0; 9]).unwrap();
        let kernel = Kernel4::from_vec(3, 3, 1, 1, vec![1.0; 9]).unwrap();
        let out = conv2d(&input, &kernel, 1, 1).unwrap();
        assert_eq!(out.get(1, 1, 0), 9.0);
        assert_eq!(out.get(0, 1, 0), 6.0);
        assert_eq!(out.get(1, 0, 0), 6.0);
        assert_eq!(out.get(0, 0, 0), 4.0);
        assert_eq!(out.get(2, 2, 0), 4.0);
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = random_tensor(&mut rng, 5, 4, 3);
        let mut kernel = Kernel4::zeros(3, 3, 3, 3);
        for c in 0..3 {
            kernel.set(1, 1, c, c, 1.0);
        }
        let out = conv2d(&input, &kernel, 1, 1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_bad_tiling() {
        let input = Tensor3::zeros(4, 4, 2);
        let kernel = Kernel4::zeros(3, 3, 3, 1);
        assert!(matches!(conv2d(&input, &kernel, 1, 1), Err(Error::Shape(_))));
        let kernel = Kernel4::zeros(3, 3, 2, 1);
        // (4 + 0 - 3) not divisible by stride 2
        assert!(matches!(conv2d(&input, &kernel, 0, 2), Err(Error::Shape(_))));
        assert!(matches!(conv2d(&input, &kernel, 0, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_takes_window_max_and_handles_negatives() {
        let t = Tensor3::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, routing) = maxpool2x2(&t).unwrap();
        assert_eq!(out.get(0, 0, 0), 4.0);
        assert_eq!(routing.source(0, 0, 0), (1, 1));

        let t = Tensor3::from_vec(2, 2, 1, vec![-1.0, -2.0, -3.0, -4.0]).unwrap();
        let (out, routing) = maxpool2x2(&t).unwrap();
        assert_eq!(out.get(0, 0, 0), -1.0);
        assert_eq!(routing.source(0, 0, 0), (0, 0));
    }

    #[test]
    fn maxpool_ties_pick_first_in_row_major_order() {
        let t = Tensor3::from_vec(2, 2, 1, vec![7.0, 7.0, 7.0, 7.0]).unwrap();
        let (_, routing) = maxpool2x2(&t).unwrap();
        assert_eq!(routing.source(0, 0, 0), (0, 0));
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        assert!(maxpool2x2(&Tensor3::zeros(3, 4, 1)).is_err());
        assert!(maxpool2x2(&Tensor3::zeros(4, 5, 1)).is_err());
    }

    #[test]
    fn maxpool_output_equals_input_at_routing_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&mut rng, 8, 6, 3);
        let (out, routing) = maxpool2x2(&t).unwrap();
        for y in 0..out.height() {
            for x in 0..out.width() {
                for c in 0..out.channels() {
                    let (sy, sx) = routing.source(y, x, c);
                    assert!(sy / 2 == y && sx / 2 == x, "routing index outside window");
                    assert_eq!(out.get(y, x, c), t.get(sy, sx, c));
                }
            }
        }
    }

    #[test]
    fn relu_clamps_negatives_and_is_idempotent() {
        let t = Tensor3::from_vec(1, 3, 1, vec![-1.0, 0.0, 2.0]).unwrap();
        let r = relu(&t);
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tensor(&mut rng, 4, 4, 2);
        let once = relu(&t);
        assert_eq!(relu(&once), once);
        // already nonnegative input is unchanged
        assert_eq!(relu(&once).data(), once.data());
    }

    #[test]
    fn gap_of_constant_channels_returns_the_constants() {
        let mut t = Tensor3::zeros(4, 6, 3);
        for y in 0..4 {
            for x in 0..6 {
                t.set(y, x, 0, 0.3);
                t.set(y, x, 1, 0.7);
                t.set(y, x, 2, 0.1);
            }
        }
        let g = global_avg_pool(&t).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-7);
        assert!((g[1] - 0.7).abs() < 1e-7);
        assert!((g[2] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn gap_of_balanced_extremes_is_their_midpoint() {
        let mut t = Tensor3::zeros(2, 2, 3);
        for c in 0..3 {
            t.set(0, 0, c, 0.0);
            t.set(0, 1, c, 2.0);
            t.set(1, 0, c, 0.0);
            t.set(1, 1, c, 2.0);
        }
        let g = global_avg_pool(&t).unwrap();
        assert_eq!(g, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn gap_rejects_non_rgb_inputs() {
        assert!(global_avg_pool(&Tensor3::zeros(2, 2, 4)).is_err());
    }

    #[test]
    fn l2_normalize_known_vectors() {
        let (v, degenerate) = l2_normalize([3.0, 0.0, 4.0]);
        assert!(!degenerate);
        assert!((v[0] - 0.6).abs() < 1e-7 && v[1] == 0.0 && (v[2] - 0.8).abs() < 1e-7);

        let (v, degenerate) = l2_normalize([1.0, 1.0, 1.0]);
        assert!(!degenerate);
        for c in v {
            assert!((c - 1.0 / 3.0f32.sqrt()).abs() < 1e-7);
        }

        let (v, degenerate) = l2_normalize([0.0, 0.0, 0.0]);
        assert!(degenerate);
        assert_eq!(v, GRAY_FALLBACK);
    }

    proptest! {
        #[test]
        fn conv_is_linear_in_the_input(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, 6, 4, 3);
            let y = random_tensor(&mut rng, 6, 4, 3);
            let k = random_kernel(&mut rng, 3, 3, 3, 2);
            let (a, b) = (rng.random_range(-2.0f32..2.0), rng.random_range(-2.0f32..2.0));

            let mixed = Tensor3::from_vec(
                6, 4, 3,
                x.data().iter().zip(y.data()).map(|(&xv, &yv)| a * xv + b * yv).collect(),
            ).unwrap();
            let lhs = conv2d(&mixed, &k, 1, 1).unwrap();
            let cx = conv2d(&x, &k, 1, 1).unwrap();
            let cy = conv2d(&y, &k, 1, 1).unwrap();
            let scale = conv_abs_scale(&mixed, &k);
            for (i, ((&l, &gx), &gy)) in lhs.data().iter().zip(cx.data()).zip(cy.data()).enumerate() {
                let rhs = (a * gx) as f64 + (b * gy) as f64;
                let tol = 1e-6 * scale[i].max((a * gx).abs() as f64 + (b * gy).abs() as f64).max(1.0);
                prop_assert!(
                    (l as f64 - rhs).abs() <= tol,
                    "cell {i}: {l} vs {rhs} beyond {tol}"
                );
            }
        }

        #[test]
        fn l2_normalize_is_unit_and_scale_invariant(
            vx in -10.0f32..10.0, vy in -10.0f32..10.0, vz in -10.0f32..10.0,
            k in 0.01f32..100.0,
        ) {
            let v = [vx, vy, vz];
            let (n, degenerate) = l2_normalize(v);
            if !degenerate {
                let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-6);
                let (nk, _) = l2_normalize([k * vx, k * vy, k * vz]);
                for (a, b) in n.iter().zip(nk.iter()) {
                    prop_assert!((a - b).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn gap_commutes_with_per_channel_scaling(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&mut rng, 5, 7, 3);
            let k = [
                rng.random_range(0.1f32..3.0),
                rng.random_range(0.1f32..3.0),
                rng.random_range(0.1f32..3.0),
            ];
            let mut scaled = t.clone();
            for px in scaled.data_mut().chunks_exact_mut(3) {
                for c in 0..3 {
                    px[c] *= k[c];
                }
            }
            let g = global_avg_pool(&t).unwrap();
            let gs = global_avg_pool(&scaled).unwrap();
            for c in 0..3 {
                prop_assert!((gs[c] - k[c] * g[c]).abs() <= 1e-6 * (k[c] * g[c]).abs().max(1.0));
            }
        }
    }
}
