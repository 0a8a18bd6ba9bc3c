use num_complex::{Complex32, Complex64};
use std::f64::consts::PI;

/// Direct O(N²) forward DFT in double precision.
pub fn reference_dft(input: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    let roots: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
        .collect();
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(m, x)| x * roots[(m * k) % n])
                .sum()
        })
        .collect()
}

/// `max |got - want| / max |want|` (or the absolute error when `want` is 0).
pub fn max_relative_error(got: &[Complex32], want: &[Complex64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().map(|w| w.norm()).fold(0.0, f64::max);
    let err = got
        .iter()
        .zip(want)
        .map(|(g, w)| (Complex64::new(g.re as f64, g.im as f64) - w).norm())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}
