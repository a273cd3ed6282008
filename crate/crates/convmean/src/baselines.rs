//! Hand-crafted illuminant estimators: gray-world, white-patch,
//! shades-of-gray and first/second-order gray-edge.
//!
//! All estimators return unit vectors, work on 8-bit images, exclude
//! masked (all-zero) pixels by default, and compute in 64-bit.

use crate::error::{Error, Result};
use crate::data::LabeledImage;

const UNIT_EPSILON: f64 = 1e-12;
const GRAY: [f64; 3] = [0.577_350_269_189_625_8; 3];

/// Derivative order for gray-edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeOrder {
    First,
    Second,
}

/// Knobs for the statistical estimators.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    /// Minkowski norm for shades-of-gray / gray-edge; must be >= 1.
    pub minkowski_p: f64,
    pub edge_order: EdgeOrder,
    /// Skip pixels that are zero in all three channels.
    pub exclude_masked: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { minkowski_p: 6.0, edge_order: EdgeOrder::First, exclude_masked: true }
    }
}

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm < UNIT_EPSILON {
        None
    } else {
        Some([v[0] / norm, v[1] / norm, v[2] / norm])
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) {
        return Err(Error::Data(format!("Minkowski p must be >= 1, got {p}")));
    }
    Ok(())
}

/// Minkowski-p mean `((sum x^p) / n)^(1/p)`, prescaled by the maximum so
/// large p does not overflow.
fn minkowski_mean(values: impl Iterator<Item = f64> + Clone, n: usize, p: f64) -> f64 {
    let max = values.clone().fold(0.0f64, f64::max);
    if max <= 0.0 || n == 0 {
        return 0.0;
    }
    let sum: f64 = values.map(|v| (v / max).powf(p)).sum();
    max * (sum / n as f64).powf(1.0 / p)
}

fn unmasked_pixels<'a>(
    img: &'a LabeledImage,
    exclude_masked: bool,
) -> impl Iterator<Item = [u8; 3]> + Clone + 'a {
    img.pixels
        .chunks_exact(3)
        .map(|px| [px[0], px[1], px[2]])
        .filter(move |px| !exclude_masked || *px != [0, 0, 0])
}

/// Per-channel mean of the unmasked pixels, unit-normalized.
pub fn gray_world(img: &LabeledImage, exclude_masked: bool) -> Result<[f64; 3]> {
    let mut sums = [0.0f64; 3];
    let mut count = 0usize;
    for px in unmasked_pixels(img, exclude_masked) {
        for c in 0..3 {
            sums[c] += px[c] as f64;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data(format!("image '{}': fully masked", img.id)));
    }
    unit(sums.map(|s| s / count as f64))
        .ok_or_else(|| Error::Data(format!("image '{}': black mean", img.id)))
}

/// Per-channel maximum of the unmasked pixels, unit-normalized.
pub fn white_patch(img: &LabeledImage, exclude_masked: bool) -> Result<[f64; 3]> {
    let mut maxes = [0.0f64; 3];
    let mut count = 0usize;
    for px in unmasked_pixels(img, exclude_masked) {
        for c in 0..3 {
            maxes[c] = maxes[c].max(px[c] as f64);
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data(format!("image '{}': fully masked", img.id)));
    }
    unit(maxes).ok_or_else(|| Error::Data(format!("image '{}': black maximum", img.id)))
}

/// Per-channel Minkowski-p mean of the unmasked pixels, unit-normalized.
/// Interpolates between gray-world (p = 1) and white-patch (p -> inf).
pub fn shades_of_gray(img: &LabeledImage, p: f64, exclude_masked: bool) -> Result<[f64; 3]> {
    check_p(p)?;
    let count = unmasked_pixels(img, exclude_masked).count();
    if count == 0 {
        return Err(Error::Data(format!("image '{}': fully masked", img.id)));
    }
    let est: [f64; 3] = std::array::from_fn(|c| {
        minkowski_mean(unmasked_pixels(img, exclude_masked).map(|px| px[c] as f64), count, p)
    });
    unit(est).ok_or_else(|| Error::Data(format!("image '{}': black statistic", img.id)))
}

/// Minkowski-p mean of per-channel derivative magnitudes.
///
/// Order one uses central differences, order two the five-point Laplacian.
/// Responses whose stencil touches a masked pixel are excluded. When no
/// usable response remains (e.g. a constant image), returns ideal gray
/// with the degenerate flag set.
pub fn gray_edge(
    img: &LabeledImage,
    order: EdgeOrder,
    p: f64,
    exclude_masked: bool,
) -> Result<([f64; 3], bool)> {
    check_p(p)?;
    if img.width < 3 || img.height < 3 {
        return Err(Error::Data(format!(
            "image '{}' is {}x{}; gray-edge needs at least 3x3",
            img.id, img.width, img.height
        )));
    }
    let mut responses: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for y in 1..img.height - 1 {
        for x in 1..img.width - 1 {
            if exclude_masked {
                let stencil_masked = img.is_masked(y, x)
                    || img.is_masked(y, x - 1)
                    || img.is_masked(y, x + 1)
                    || img.is_masked(y - 1, x)
                    || img.is_masked(y + 1, x);
                if stencil_masked {
                    continue;
                }
            }
            let center = img.rgb(y, x);
            let left = img.rgb(y, x - 1);
            let right = img.rgb(y, x + 1);
            let up = img.rgb(y - 1, x);
            let down = img.rgb(y + 1, x);
            for c in 0..3 {
                let response = match order {
                    EdgeOrder::First => {
                        let dx = (right[c] as f64 - left[c] as f64) / 2.0;
                        let dy = (down[c] as f64 - up[c] as f64) / 2.0;
                        (dx * dx + dy * dy).sqrt()
                    }
                    EdgeOrder::Second => (right[c] as f64
                        + left[c] as f64
                        + down[c] as f64
                        + up[c] as f64
                        - 4.0 * center[c] as f64)
                        .abs(),
                };
                responses[c].push(response);
            }
        }
    }
    let n = responses[0].len();
    if n == 0 {
        return Ok((GRAY, true));
    }
    let est: [f64; 3] =
        std::array::from_fn(|c| minkowski_mean(responses[c].iter().cloned(), n, p));
    match unit(est) {
        Some(v) => Ok((v, false)),
        None => Ok((GRAY, true)),
    }
}

/// Run a baseline by its CLI name (`grayworld|whitepatch|sog|ge1|ge2`).
/// Returns the estimate and a degenerate flag (only gray-edge can set it).
pub fn estimate_by_name(
    name: &str,
    img: &LabeledImage,
    cfg: &BaselineConfig,
) -> Result<([f64; 3], bool)> {
    match name {
        "grayworld" => Ok((gray_world(img, cfg.exclude_masked)?, false)),
        "whitepatch" => Ok((white_patch(img, cfg.exclude_masked)?, false)),
        "sog" => Ok((shades_of_gray(img, cfg.minkowski_p, cfg.exclude_masked)?, false)),
        "ge1" => gray_edge(img, EdgeOrder::First, cfg.minkowski_p, cfg.exclude_masked),
        "ge2" => gray_edge(img, EdgeOrder::Second, cfg.minkowski_p, cfg.exclude_masked),
        other => Err(Error::Data(format!(
            "unknown algorithm '{other}' (expected grayworld|whitepatch|sog|ge1|ge2)"
        ))),
    }
}

/// Conventional default norm for an algorithm when the caller gives none:
/// 6 for shades-of-gray, 1 for the gray-edge family.
pub fn default_p(name: &str) -> f64 {
    match name {
        "sog" => 6.0,
        _ => 1.0,
    }
}
