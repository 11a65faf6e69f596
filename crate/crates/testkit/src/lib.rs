//! Reference oracles for the test suites.
//!
//! Everything here is written against first principles (de Casteljau
//! evaluation, adaptive quadrature, textbook statistics) and shares no code
//! with the engine it checks.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

/// Quadratic Bézier point by repeated linear interpolation.
pub fn de_casteljau(p: [(f64, f64); 3], t: f64) -> (f64, f64) {
    let lerp = |a: (f64, f64), b: (f64, f64)| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
    let q0 = lerp(p[0], p[1]);
    let q1 = lerp(p[1], p[2]);
    lerp(q0, q1)
}

fn speed(p: [(f64, f64); 3], t: f64) -> f64 {
    let dx = 2.0 * ((1.0 - t) * (p[1].0 - p[0].0) + t * (p[2].0 - p[1].0));
    let dy = 2.0 * ((1.0 - t) * (p[1].1 - p[0].1) + t * (p[2].1 - p[1].1));
    dx.hypot(dy)
}

// 5-point Gauss-Legendre on [a, b].
fn gauss5(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 5] = [
        0.0,
        0.538_469_310_105_683_1,
        -0.538_469_310_105_683_1,
        0.906_179_845_938_664,
        -0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = 0.5 * (b - a);
    let m = 0.5 * (b + a);
    X.iter().zip(W.iter()).map(|(x, w)| w * f(m + h * x)).sum::<f64>() * h
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let mid = 0.5 * (a + b);
    let left = gauss5(f, a, mid);
    let right = gauss5(f, mid, b);
    if depth == 0 || (left + right - whole).abs() <= tol {
        left + right
    } else {
        adaptive(f, a, mid, left, 0.5 * tol, depth - 1) + adaptive(f, mid, b, right, 0.5 * tol, depth - 1)
    }
}

/// Arc length of a quadratic Bézier by adaptive Gauss-Legendre quadrature of
/// the speed |B'(t)|.
pub fn arc_length_quadrature(p: [(f64, f64); 3]) -> f64 {
    let f = move |t: f64| speed(p, t);
    let whole = gauss5(&f, 0.0, 1.0);
    adaptive(&f, 0.0, 1.0, whole, 1e-13, 40)
}

/// Interval `p ± k·sqrt(p(1-p)/n)` for a binomial proportion.
pub fn binomial_band(n: usize, p: f64, sigmas: f64) -> (f64, f64) {
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    (p - sigmas * sd, p + sigmas * sd)
}

/// Two-sided Welch t-test p-value for a difference of means.
pub fn welch_p_value(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Pearson chi-square statistic against a uniform expectation.
pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Upper quantile of the chi-square distribution.
pub fn chi_square_quantile(df: usize, q: f64) -> f64 {
    ChiSquared::new(df as f64).expect("valid df").inverse_cdf(q)
}

/// Minimum distance between two curves sampled at the same parameters
/// `i / (samples - 1)`, evaluated with [`de_casteljau`].
pub fn brute_min_separation(a: [(f64, f64); 3], b: [(f64, f64); 3], samples: usize) -> f64 {
    (0..samples)
        .map(|i| {
            let t = i as f64 / (samples - 1) as f64;
            let pa = de_casteljau(a, t);
            let pb = de_casteljau(b, t);
            (pa.0 - pb.0).hypot(pa.1 - pb.1)
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_segment_length() {
        let l = arc_length_quadrature([(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)]);
        assert!((l - 1.0).abs() < 1e-13);
    }

    #[test]
    fn folded_segment_length() {
        // Goes out to x=0.5 and comes back: total travel 1.0.
        let l = arc_length_quadrature([(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]);
        assert!((l - 1.0).abs() < 1e-10, "{l}");
    }

    #[test]
    fn welch_identical_samples() {
        let a = [1.0, 2.0, 3.0];
        assert!((welch_p_value(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_reference_quantile() {
        // chi2(7) 99th percentile is 18.475 in standard tables.
        assert!((chi_square_quantile(7, 0.99) - 18.475).abs() < 1e-3);
    }
}
