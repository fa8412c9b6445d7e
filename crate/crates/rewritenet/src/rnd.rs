//! Small deterministic sampling helpers shared across modules.

use rand::RngCore;

/// Uniform on the open interval (0, 1).
pub fn uniform01(rng: &mut dyn RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box-Muller.
pub fn randn(rng: &mut dyn RngCore) -> f64 {
    let u1 = uniform01(rng);
    let u2 = uniform01(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
