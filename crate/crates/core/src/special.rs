//! Log-space special functions: Gamma ratios, ball volumes, Bessel I.
//!
//! Everything that involves `Γ` or `ω_n` is evaluated through `ln Γ` so that
//! ratios stay exact to floating point well past the dimension where `ω_n`
//! itself underflows.

use std::f64::consts::PI;

pub use statrs::function::gamma::ln_gamma;

/// `ln ω_n`, the log-volume of the Euclidean unit ball in dimension `n`.
pub fn ln_unit_ball_volume(n: usize) -> f64 {
    let n = n as f64;
    0.5 * n * PI.ln() - ln_gamma(0.5 * n + 1.0)
}

/// `ω_n = π^{n/2} / Γ(n/2 + 1)`.
pub fn unit_ball_volume(n: usize) -> f64 {
    ln_unit_ball_volume(n).exp()
}

/// Log surface area of `S^{n-1}`, i.e. `ln(n ω_n)`.
pub fn ln_sphere_area(n: usize) -> f64 {
    (n as f64).ln() + ln_unit_ball_volume(n)
}

/// `E|g|^p` for a standard normal `g`.
pub fn gaussian_abs_moment(p: f64) -> f64 {
    (0.5 * p * 2f64.ln() + ln_gamma(0.5 * (p + 1.0)) - 0.5 * PI.ln()).exp()
}

/// Radius of `Z_p(γ_n)`: `(E|g|^p)^{1/p} = √2 (Γ((p+1)/2)/√π)^{1/p}`.
pub fn gaussian_zp_radius(p: f64) -> f64 {
    gaussian_abs_moment(p).powf(1.0 / p)
}

/// `I_q(γ_n) = √2 (Γ((n+q)/2) / Γ(n/2))^{1/q}` for `q > -n`, `q != 0`.
pub fn gaussian_norm_moment(n: usize, q: f64) -> f64 {
    let n = n as f64;
    let ln_mean = 0.5 * q * 2f64.ln() + ln_gamma(0.5 * (n + q)) - ln_gamma(0.5 * n);
    (ln_mean / q).exp()
}

/// `ln I_ν(z)` for the modified Bessel function of the first kind, `ν ≥ 0`, `z ≥ 0`.
///
/// Power series summed in log space; the terms peak near `k ≈ z/2` so the
/// loop length grows linearly with `z`.
pub fn ln_bessel_i(nu: f64, z: f64) -> f64 {
    if z == 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let ln_half_z = (0.5 * z).ln();
    let term = |k: f64| (2.0 * k + nu) * ln_half_z - ln_gamma(k + 1.0) - ln_gamma(k + nu + 1.0);
    // locate the peak so the running log-sum-exp never overflows
    let peak = (0.5 * z).floor();
    let ln_max = term(peak);
    let mut sum = 0.0;
    let mut k = 0.0;
    loop {
        let t = (term(k) - ln_max).exp();
        sum += t;
        if k > peak && t < 1e-18 * sum {
            break;
        }
        k += 1.0;
    }
    ln_max + sum.ln()
}
