use std::path::Path;

use anyhow::{Context, Result};

pub const HISTOGRAM_BINS: usize = 20;

/// Equal-width bins spanning the data: `(low, high, count)`. The last bin
/// is closed on the right.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in finite {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

pub fn write_histogram(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["bin_low", "bin_high", "count"])?;
    for (lo, hi, c) in histogram(values, HISTOGRAM_BINS) {
        w.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `min / median / max` of the finite values.
pub fn spread(values: &[f64]) -> String {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return "n/a".into();
    }
    v.sort_by(f64::total_cmp);
    format!("{:.3} / {:.3} / {:.3}", v[0], v[v.len() / 2], v[v.len() - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_every_value_once() {
        let v = [0.0, 0.5, 1.0, 1.0, 2.0];
        let h = histogram(&v, 4);
        assert_eq!(h.len(), 4);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 5);
        assert_eq!(h[3].2, 1);
        assert_eq!((h[0].0, h[3].1), (0.0, 2.0));
    }

    #[test]
    fn constant_values_fill_first_bin() {
        let h = histogram(&[3.0; 4], 5);
        assert_eq!(h[0].2, 4);
    }
}
