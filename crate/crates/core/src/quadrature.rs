//! Fixed-order quadrature rules on uniform grids.

use std::f64::consts::PI;

pub(crate) const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Normal density with mean `mean` and standard deviation `std`.
#[inline]
pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let u = (x - mean) / std;
    INV_SQRT_2PI / std * (-0.5 * u * u).exp()
}

/// Differential entropy of a normal distribution, in nats.
#[inline]
pub fn normal_entropy(std: f64) -> f64 {
    0.5 * ((2.0 * PI * std * std).ln() + 1.0)
}

/// Composite trapezoid rule for samples on a uniform grid with spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let interior: f64 = values[1..n - 1].iter().sum();
            h * (interior + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Composite Simpson rule of `f` on `[a, b]` with `points` samples.
///
/// `points` is bumped to the next odd number so every panel pair is complete.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, points: usize) -> f64 {
    let n = if points.is_multiple_of(2) { points + 1 } else { points.max(3) };
    let h = (b - a) / (n - 1) as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n - 1 {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `x ln x` with the continuous extension at zero.
#[inline]
pub(crate) fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let h = 0.5;
        let v: Vec<f64> = (0..5).map(|i| 2.0 * i as f64 * h + 1.0).collect();
        // integral of 2x + 1 over [0, 2]
        assert!((trapezoid(&v, h) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn simpson_integrates_normal_to_one() {
        let mass = simpson(|x| normal_pdf(x, 0.3, 0.7), -10.0, 10.0, 4001);
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_matches_quadrature() {
        let s = 1.7;
        let h = simpson(|x| -xlogx(normal_pdf(x, 0.0, s)), -20.0, 20.0, 8001);
        assert!((h - normal_entropy(s)).abs() < 1e-10);
    }
}
