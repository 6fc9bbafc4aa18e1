//! Log-gamma helpers.

pub use statrs::function::gamma::ln_gamma;

/// Stirling correction `lnΓ(z) − [(z−½)ln z − z + ½ln 2π]` for large `z`.
fn stirling_tail(z: f64) -> f64 {
    let z2 = z * z;
    (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * z2)) / z2) / z2) / z
}

/// `lnΓ(a + b) − lnΓ(a)` without cancellation when `a` is large.
///
/// Coupled normalizers need this ratio at `a = 1/(2κ)` with `b = d/2`, where
/// small couplings push `a` into the millions and the difference of two
/// log-gammas would lose most of its digits.
pub fn ln_gamma_ratio(a: f64, b: f64) -> f64 {
    if a >= 50.0 && a + b >= 50.0 {
        (a - 0.5) * (b / a).ln_1p() + b * (a + b).ln() - b + (stirling_tail(a + b) - stirling_tail(a))
    } else {
        ln_gamma(a + b) - ln_gamma(a)
    }
}
