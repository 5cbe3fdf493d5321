use rand::Rng;
use rand_distr::StandardNormal;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Smallest variance carried by scalar Gaussian messages.
pub const VAR_FLOOR: f64 = 1e-300;

#[inline]
pub fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    mean + var.sqrt() * std_normal(rng)
}

/// Log of ∫ N(x; m, v) exp(-J x²/2 + h x) dx together with the mean and
/// variance of the tilted (normalized) Gaussian. `None` when the integral
/// diverges.
pub fn tilt(m: f64, v: f64, j: f64, h: f64) -> Option<(f64, f64, f64)> {
    let prec = 1.0 / v + j;
    if !(prec > 0.0) {
        return None;
    }
    let lin = m / v + h;
    let var = 1.0 / prec;
    let mean = lin * var;
    let log_mass = 0.5 * (var.ln() - v.ln()) + 0.5 * (lin * lin * var - m * m / v);
    Some((log_mass, mean, var))
}
