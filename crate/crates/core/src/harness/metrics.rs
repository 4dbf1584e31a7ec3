//! Summary statistics over per-step streams.

/// Sums over consecutive full laps; a trailing partial lap is dropped.
pub fn per_lap(values: &[f64], steps_per_lap: usize) -> Vec<f64> {
    if steps_per_lap == 0 {
        return Vec::new();
    }
    values
        .chunks_exact(steps_per_lap)
        .map(|c| c.iter().sum())
        .collect()
}

/// Root-mean-square of `sqrt(values)` per full lap, for squared errors.
pub fn per_lap_rms(squared: &[f64], steps_per_lap: usize) -> Vec<f64> {
    per_lap(squared, steps_per_lap)
        .into_iter()
        .map(|s| (s / steps_per_lap as f64).sqrt())
        .collect()
}

/// Average slope per sample of the first and last quarter of a curve.
pub fn quarter_slopes(curve: &[f64]) -> Option<(f64, f64)> {
    let q = curve.len() / 4;
    if q < 2 {
        return None;
    }
    let slope = |a: usize, b: usize| (curve[b] - curve[a]) / (b - a) as f64;
    let n = curve.len();
    Some((slope(0, q - 1), slope(n - q, n - 1)))
}

/// Mean of the last `count` entries of each column.
pub fn tail_mean(rows: &[Vec<f64>], count: usize) -> Vec<f64> {
    let count = count.min(rows.len());
    let Some(first) = rows.last() else {
        return Vec::new();
    };
    let mut out = vec![0.0; first.len()];
    for row in &rows[rows.len() - count..] {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter().map(|v| v / count as f64).collect()
}
