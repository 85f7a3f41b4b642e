//! Small statistics helpers for reports and synthetic-data checks.

/// Empirical 1-D Wasserstein-1 distance between two samples, computed on a
/// common quantile grid.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|x, y| x.total_cmp(y));
    xb.sort_by(|x, y| x.total_cmp(y));
    if xa.len() == xb.len() {
        return xa
            .iter()
            .zip(xb.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / xa.len() as f64;
    }
    let grid = 512usize;
    let quantile = |xs: &[f64], q: f64| -> f64 {
        let pos = q * (xs.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        xs[lo] * (1.0 - frac) + xs[hi] * frac
    };
    (0..grid)
        .map(|i| {
            let q = (i as f64 + 0.5) / grid as f64;
            (quantile(&xa, q) - quantile(&xb, q)).abs()
        })
        .sum::<f64>()
        / grid as f64
}

/// Pearson correlation; the point-biserial coefficient is this applied to a
/// 0/1 indicator against a continuous variable.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
