//! Order statistics shared by plane fitting, measurement and aggregation.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("statistic of an empty sample")]
pub struct EmptyInput;

/// Median; even-length samples average the two central order statistics.
pub fn median(values: &[f64]) -> Result<f64, EmptyInput> {
    if values.is_empty() {
        return Err(EmptyInput);
    }
    let mut buf = values.to_vec();
    Ok(median_in_place(&mut buf))
}

fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (lower, upper_mid, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper_mid = *upper_mid;
    if n % 2 == 1 {
        upper_mid
    } else {
        let lower_mid = lower.iter().copied().max_by(f64::total_cmp).unwrap();
        (lower_mid + upper_mid) / 2.0
    }
}

/// Median absolute deviation from the median (unscaled).
pub fn mad(values: &[f64]) -> Result<f64, EmptyInput> {
    let centre = median(values)?;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - centre).abs()).collect();
    Ok(median_in_place(&mut dev))
}
