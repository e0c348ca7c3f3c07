//! Model parameters and the scalar functions of the latent-price diffusion
//!
//! ```text
//! dX = αβ μ(X) dt + σ dB
//! dY = dX / α + sqrt(σ̄² − σ²/α²) dW̃,   Y_0 = 0
//! ```
//!
//! with micro-drift μ(x) = (x mod 1) − ½, quotes obtained by rounding X to
//! the tick grid, and the special functions φ, ψ that govern the long-run
//! behaviour of X mod 1.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::quadrature::Quadrature;

/// Above this argument φ is evaluated in the log domain with the inner
/// integrand rescaled by exp(−z/4).
const LARGE_Z: f64 = 50.0;

/// Parameters θ = (α, β, σ²) together with the known constants σ̄² and ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Price impact: ticks per unit of signed order flow.
    pub alpha: f64,
    /// Micro-drift strength (1/s).
    pub beta: f64,
    /// Latent-price variance rate (ticks²/s).
    pub sigma2: f64,
    /// Order-flow variance rate (volume²/s).
    pub sigma_bar2: f64,
    /// Half-width of the spread-widening zone around integer prices.
    pub eps: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, beta: f64, sigma2: f64, sigma_bar2: f64, eps: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            sigma2,
            sigma_bar2,
            eps,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters from the (α², σ²) grid coordinates.
    pub fn from_alpha2(alpha2: f64, beta: f64, sigma2: f64, sigma_bar2: f64, eps: f64) -> Result<Self> {
        if !(alpha2 > 0.0) {
            return Err(Error::InvalidParams(format!("alpha2 must be positive, got {alpha2}")));
        }
        Self::new(alpha2.sqrt(), beta, sigma2, sigma_bar2, eps)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.sigma2, self.sigma_bar2, self.eps];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite parameter in {self:?}")));
        }
        if self.alpha <= 0.0 {
            return Err(Error::InvalidParams(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidParams(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.sigma2 <= 0.0 {
            return Err(Error::InvalidParams(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.sigma_bar2 <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "sigma_bar2 must be positive, got {}",
                self.sigma_bar2
            )));
        }
        if self.sigma2 >= self.alpha2() * self.sigma_bar2 {
            return Err(Error::InvalidParams(format!(
                "need sigma2 < alpha^2 * sigma_bar2, got sigma2 = {} and alpha^2 * sigma_bar2 = {}",
                self.sigma2,
                self.alpha2() * self.sigma_bar2
            )));
        }
        if !(0.0..0.5).contains(&self.eps) {
            return Err(Error::InvalidParams(format!("eps must lie in [0, 1/2), got {}", self.eps)));
        }
        Ok(())
    }

    pub fn alpha2(&self) -> f64 {
        self.alpha * self.alpha
    }

    /// γ = αβ/σ², the shape parameter of the stationary density of X mod 1.
    pub fn gamma(&self) -> f64 {
        self.alpha * self.beta / self.sigma2
    }

    /// κ = σ²/(ασ̄²); X − κY is uncorrelated with Y.
    pub fn kappa(&self) -> f64 {
        self.sigma2 / (self.alpha * self.sigma_bar2)
    }

    /// Variance rate of the order-flow noise independent of X: σ̄² − σ²/α².
    pub fn idiosyncratic_flow_var(&self) -> f64 {
        self.sigma_bar2 - self.sigma2 / self.alpha2()
    }
}

/// `x mod 1` mapped into [0, 1), negative inputs wrapped upward.
#[inline]
pub fn frac(x: f64) -> f64 {
    let r = x - x.floor();
    // tiny negatives round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Micro-drift μ(x) = (x mod 1) − ½ without input validation.
#[inline]
pub fn mu_unchecked(x: f64) -> f64 {
    frac(x) - 0.5
}

/// Micro-drift μ(x) = (x mod 1) − ½, a 1-periodic sawtooth in [−½, ½).
pub fn mu(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("mu: non-finite argument {x}")));
    }
    Ok(mu_unchecked(x))
}

/// Best bid and ask (in ticks) generated by latent price `x`.
///
/// The spread is one tick unless `x` lies within `eps` of an integer `i`, in
/// which case the quotes widen to `(i − 1, i + 1)`.
pub fn bid_ask(x: f64, eps: f64) -> Result<(i64, i64)> {
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("bid_ask: non-finite price {x}")));
    }
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::InvalidParams(format!("eps must lie in [0, 1/2), got {eps}")));
    }
    Ok(bid_ask_unchecked(x, eps))
}

#[inline]
pub(crate) fn bid_ask_unchecked(x: f64, eps: f64) -> (i64, i64) {
    let nearest = x.round();
    if (x - nearest).abs() <= eps {
        let i = nearest as i64;
        (i - 1, i + 1)
    } else {
        (x.floor() as i64, x.ceil() as i64)
    }
}

fn default_quadrature() -> &'static Quadrature {
    static QUAD: OnceLock<Quadrature> = OnceLock::new();
    QUAD.get_or_init(Quadrature::default)
}

fn check_nonneg(name: &str, z: f64) -> Result<()> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::InvalidInput(format!("{name}: argument must be finite and >= 0, got {z}")));
    }
    Ok(())
}

/// φ(z) = 2∫₀¹ exp(−z(x−½)²) ∫₀ˣ exp(z(y−½)²) dy dx.
pub fn phi(z: f64) -> Result<f64> {
    phi_with(default_quadrature(), z)
}

pub fn phi_with(q: &Quadrature, z: f64) -> Result<f64> {
    check_nonneg("phi", z)?;
    if z == 0.0 {
        Ok(1.0)
    } else if z <= LARGE_Z {
        Ok(1.0 + z * z * phi_excess(q, z)?)
    } else {
        Ok(log_phi_large(q, z)?.exp())
    }
}

/// ln φ(z), finite for arguments where φ itself overflows.
pub fn log_phi(z: f64) -> Result<f64> {
    log_phi_with(default_quadrature(), z)
}

pub fn log_phi_with(q: &Quadrature, z: f64) -> Result<f64> {
    check_nonneg("log_phi", z)?;
    if z == 0.0 {
        Ok(0.0)
    } else if z <= LARGE_Z {
        Ok((z * z * phi_excess(q, z)?).ln_1p())
    } else {
        log_phi_large(q, z)
    }
}

/// (φ(z) − 1)/z², evaluated through expm1 so that small z keeps full
/// relative precision (φ − 1 = O(z²) as z → 0).
fn phi_excess(q: &Quadrature, z: f64) -> Result<f64> {
    let z2 = z * z;
    let inner = |x: f64| -> Result<f64> {
        let ex = (x - 0.5) * (x - 0.5);
        let f = |y: f64| ((z * ((y - 0.5) * (y - 0.5) - ex)).exp_m1()) / z2;
        q.integrate_pieces(f, &[0.0, x.min(0.5), x])
    };
    Ok(2.0 * q.try_integrate_pieces(&mut { inner }, &[0.0, 0.5, 1.0])?)
}

/// ln φ(z) for large z: the inner integrand is rescaled by exp(−z/4) (its
/// maximum, attained at y = 0) and the double integral by z^{3/2} so that the
/// quadrature works on O(1) quantities.
fn log_phi_large(q: &Quadrature, z: f64) -> Result<f64> {
    let scale = z.powf(1.5);
    let inner = |x: f64| -> Result<f64> {
        let outer_w = (-z * (x - 0.5) * (x - 0.5)).exp();
        if outer_w == 0.0 {
            return Ok(0.0);
        }
        let f = |y: f64| (z * (y * y - y)).exp();
        Ok(scale * outer_w * q.integrate_pieces(f, &[0.0, x.min(0.5), x])?)
    };
    let s = q.try_integrate_pieces(&mut { inner }, &[0.0, 0.5, 1.0])?;
    Ok(0.25 * z + std::f64::consts::LN_2 + s.ln() - 1.5 * z.ln())
}

/// ψ(z) = ∫₀¹ exp(z y² − z y) dy.
pub fn psi(z: f64) -> Result<f64> {
    psi_with(default_quadrature(), z)
}

pub fn psi_with(q: &Quadrature, z: f64) -> Result<f64> {
    check_nonneg("psi", z)?;
    if z == 0.0 {
        return Ok(1.0);
    }
    q.integrate_pieces(|y| (z * (y * y - y)).exp(), &[0.0, 0.5, 1.0])
}

/// (1 − ψ(z))/z via expm1; tends to 1/6 as z → 0.
fn psi_deficit(q: &Quadrature, z: f64) -> Result<f64> {
    q.integrate_pieces(|y| -(-z * y * (1.0 - y)).exp_m1() / z, &[0.0, 0.5, 1.0])
}

/// Σ(θ) = σ²/φ(γ(θ)), the long-run variance rate of the midprice.
pub fn big_sigma(params: &ModelParams) -> Result<f64> {
    let g = params.gamma();
    if g == 0.0 {
        return Ok(params.sigma2);
    }
    Ok(params.sigma2 * (-log_phi(g)?).exp())
}

/// z ↦ (1 − 1/φ(z)) / (z (1/ψ(z) − 1) φ(z)); its invertibility on the set
/// of γ values of a candidate grid makes the grid identifiable.
pub fn assumption1_fn(z: f64) -> Result<f64> {
    assumption1_fn_with(default_quadrature(), z)
}

pub fn assumption1_fn_with(q: &Quadrature, z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::InvalidInput(format!(
            "assumption1_fn: argument must be finite and > 0, got {z}"
        )));
    }
    if z <= LARGE_Z {
        let e = phi_excess(q, z)?;
        let p = psi_deficit(q, z)?;
        let phi = 1.0 + z * z * e;
        let psi = 1.0 - z * p;
        Ok(e * psi / (p * phi * phi))
    } else {
        let lp = log_phi_large(q, z)?;
        let psi = psi_with(q, z)?;
        let inv_phi = (-lp).exp();
        Ok((1.0 - inv_phi) * inv_phi / (z * (1.0 / psi - 1.0)))
    }
}

/// Stationary density χ(x) = exp(γx² − γx)/ψ(γ) of X mod 1, with ψ(γ)
/// computed once.
#[derive(Debug, Clone, Copy)]
pub struct StationaryDensity {
    gamma: f64,
    psi: f64,
}

impl StationaryDensity {
    pub fn new(gamma: f64) -> Result<Self> {
        Ok(Self {
            gamma,
            psi: psi(gamma)?,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Density at `x`; zero outside [0, 1].
    pub fn density(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        (self.gamma * (x * x - x)).exp() / self.psi
    }

    /// Stationary probability that X lies within `eps` of an integer,
    /// 2∫₀^ε χ, i.e. the long-run fraction of time the spread is two ticks.
    pub fn wide_spread_mass(&self, eps: f64) -> Result<f64> {
        let eps = eps.clamp(0.0, 0.5);
        Ok(2.0 * default_quadrature().integrate(|x| self.density(x), 0.0, eps)?)
    }
}

/// χ(γ, x) for a single point. Prefer [`StationaryDensity`] when evaluating
/// many points with the same γ.
pub fn chi(gamma: f64, x: f64) -> Result<f64> {
    check_nonneg("chi", gamma)?;
    Ok(StationaryDensity::new(gamma)?.density(x))
}
