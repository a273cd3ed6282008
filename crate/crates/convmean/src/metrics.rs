//! Angular-error metric and the five-statistic error summary
//! (mean, median, trimean, best-25%, worst-25%), plus geometric-mean
//! aggregation across cameras.

use crate::error::{Error, Result};

/// Five-number summary of per-image angular errors, in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub trimean: f64,
    pub best25: f64,
    pub worst25: f64,
    pub n: usize,
}

impl ErrorStats {
    /// One CSV row in table column order: `algo,mean,med,tri,best25,worst25,n`.
    pub fn csv_row(&self, algo: &str) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            algo, self.mean, self.median, self.trimean, self.best25, self.worst25, self.n
        )
    }

    pub const CSV_HEADER: &'static str = "algo,mean,med,tri,best25,worst25,n";
}

/// Angle between two illuminant vectors in degrees; scale-invariant.
pub fn angular_error(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("angular_error of a zero vector".into()));
    }
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    // clamp guards float drift for near-identical vectors
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Convenience for the 32-bit pipeline outputs.
pub fn angular_error_f32(a: [f32; 3], b: [f32; 3]) -> Result<f64> {
    angular_error(a.map(f64::from), b.map(f64::from))
}

/// Linear-interpolation quantile at rank `q * (n - 1)` of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Compute the five-statistic summary of an error list.
///
/// Quartiles use linear interpolation at `q*(n-1)`; the trimean is
/// `(Q1 + 2*Q2 + Q3) / 4`; best/worst-25% average the `ceil(n/4)` smallest
/// and largest values.
pub fn error_stats(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::Numeric("error_stats of an empty list".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("errors must not contain NaN"));

    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let q1 = quantile(&sorted, 0.25);
    let q2 = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let quarter = n.div_ceil(4);
    let best25 = sorted[..quarter].iter().sum::<f64>() / quarter as f64;
    let worst25 = sorted[n - quarter..].iter().sum::<f64>() / quarter as f64;

    Ok(ErrorStats {
        mean,
        median: q2,
        trimean: (q1 + 2.0 * q2 + q3) / 4.0,
        best25,
        worst25,
        n,
    })
}

/// Aggregate per-camera summaries by taking the geometric mean of each of
/// the five statistics. Rejects zero statistics (geometric mean undefined).
pub fn aggregate_cameras(per_camera: &[ErrorStats]) -> Result<ErrorStats> {
    if per_camera.is_empty() {
        return Err(Error::Numeric("aggregate_cameras of an empty set".into()));
    }
    let geomean = |pick: fn(&ErrorStats) -> f64| -> Result<f64> {
        let mut log_sum = 0.0f64;
        for stats in per_camera {
            let v = pick(stats);
            if v <= 0.0 {
                return Err(Error::Numeric(format!(
                    "geometric mean undefined for non-positive statistic {v}"
                )));
            }
            log_sum += v.ln();
        }
        Ok((log_sum / per_camera.len() as f64).exp())
    };
    Ok(ErrorStats {
        mean: geomean(|s| s.mean)?,
        median: geomean(|s| s.median)?,
        trimean: geomean(|s| s.trimean)?,
        best25: geomean(|s| s.best25)?,
        worst25: geomean(|s| s.worst25)?,
        n: per_camera.iter().map(|s| s.n).sum(),
    })
}
