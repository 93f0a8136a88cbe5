//! Brute-force Grenander fit: an ECDF vertex is kept iff it lies strictly
//! above every chord joining a vertex on its left to a vertex on its right.
//! Cubic in the number of distinct samples; meant for small inputs only.

/// Returns `(breakpoints, levels)`.
pub fn brute_force_fit(samples: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len();
    let min_positive = samples
        .iter()
        .copied()
        .filter(|&s| s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let zero_at = if min_positive.is_finite() { min_positive } else { 1.0 };
    let mut xs: Vec<f64> = samples
        .iter()
        .map(|&s| if s == 0.0 { zero_at } else { s })
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let mut points = vec![(0.0, 0.0)];
    for &x in &xs {
        let below = samples
            .iter()
            .filter(|&&s| (if s == 0.0 { zero_at } else { s }) <= x)
            .count();
        points.push((x, below as f64 / n as f64));
    }
    if *xs.last().unwrap() < 1.0 {
        points.push((1.0, 1.0));
    }

    let last = points.len() - 1;
    let on_hull: Vec<(f64, f64)> = (0..points.len())
        .filter(|&i| {
            if i == 0 || i == last {
                return true;
            }
            let v = points[i];
            (0..i).all(|a| {
                (i + 1..points.len()).all(|b| {
                    let (pa, pb) = (points[a], points[b]);
                    (pb.0 - pa.0) * (v.1 - pa.1) - (pb.1 - pa.1) * (v.0 - pa.0) > 0.0
                })
            })
        })
        .map(|i| points[i])
        .collect();

    let breakpoints = on_hull.iter().map(|p| p.0).collect();
    let levels = on_hull
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    (breakpoints, levels)
}

/// Largest absolute difference, or `None` when the piece counts differ.
pub fn max_deviation(a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> Option<f64> {
    if a.0.len() != b.0.len() || a.1.len() != b.1.len() {
        return None;
    }
    let dev = a
        .0
        .iter()
        .zip(b.0)
        .chain(a.1.iter().zip(b.1))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Some(dev)
}
