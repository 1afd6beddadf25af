//! Closed-form quantities for geometric Brownian motion under constant
//! proportional control, and evaluation of the discounted characteristic
//! operator `A0 = -beta + drift * d/dx + 1/2 * diffusion^2 * d^2/dx^2`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative step for central finite differences.
pub const DEFAULT_REL_STEP: f64 = 1e-5;

/// Drift, volatility and subjective discount rate of the underlying market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub mu: f64,
    pub sigma: f64,
    pub beta: f64,
}

impl MarketParams {
    pub fn new(mu: f64, sigma: f64, beta: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Domain(format!("mu must be positive, got {mu}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { mu, sigma, beta })
    }
}

/// Which root of the characteristic quadratic to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

/// Which side of the barrier the process starts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierSide {
    Upper,
    Lower,
}

type Evaluable = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// State-dependent drift and diffusion of a one-dimensional controlled wealth
/// process `dX = drift(X) dt + diffusion(X) dW`.
#[derive(Clone)]
pub struct ControlledDynamics1D {
    pub drift: Evaluable,
    pub diffusion: Evaluable,
}

impl ControlledDynamics1D {
    /// `dX = mu * theta * X dt + sigma * theta * X dW` for a constant proportion.
    pub fn constant_proportion(theta: f64, market: &MarketParams) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::Domain(format!("theta must be positive, got {theta}")));
        }
        let (mu, sigma) = (market.mu, market.sigma);
        Ok(Self {
            drift: Arc::new(move |x| mu * theta * x),
            diffusion: Arc::new(move |x| sigma * theta * x),
        })
    }
}

/// A scalar function with optional analytic first and second derivatives.
/// Missing derivatives are supplied by central finite differences.
#[derive(Clone)]
pub struct SmoothFunction1D {
    pub value: Evaluable,
    pub d1: Option<Evaluable>,
    pub d2: Option<Evaluable>,
}

impl SmoothFunction1D {
    pub fn from_value(value: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { value: Arc::new(value), d1: None, d2: None }
    }

    pub fn with_derivatives(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { value: Arc::new(value), d1: Some(Arc::new(d1)), d2: Some(Arc::new(d2)) }
    }

    /// Value and both derivatives at `x`. The boolean is true when any
    /// derivative came from finite differences rather than analytic formulas.
    pub fn derivs(&self, x: f64, rel_step: f64) -> Result<(f64, f64, f64, bool)> {
        let v = (self.value)(x);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("function value not finite at x = {x}")));
        }
        match (&self.d1, &self.d2) {
            (Some(d1), Some(d2)) => {
                let (g1, g2) = (d1(x), d2(x));
                if !(g1.is_finite() && g2.is_finite()) {
                    return Err(Error::Numeric(format!("analytic derivative not finite at x = {x}")));
                }
                Ok((v, g1, g2, false))
            }
            _ => {
                let (fv, g1, g2) = finite_diff_derivs(|y| (self.value)(y), x, rel_step)?;
                let d1v = match &self.d1 {
                    Some(d1) => d1(x),
                    None => g1,
                };
                let d2v = match &self.d2 {
                    Some(d2) => d2(x),
                    None => g2,
                };
                let _ = fv;
                Ok((v, d1v, d2v, true))
            }
        }
    }
}

/// Root of `1/2 sigma^2 theta^2 a(a-1) + mu theta a - beta = 0` in `a`.
///
/// Uses the cancellation-free quadratic formula: the larger-magnitude root is
/// computed directly, the other via the product of roots (Vieta), because
/// `beta << sigma^2 theta^2` makes the naive formula lose precision.
pub fn alpha_exponent(theta: f64, market: &MarketParams, branch: Branch) -> Result<f64> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta must be positive, got {theta}")));
    }
    // A a^2 + B a + C = 0 with A = sigma^2 theta^2 / 2, B = mu theta - A, C = -beta.
    let a = 0.5 * market.sigma * market.sigma * theta * theta;
    let b = market.mu * theta - a;
    let c = -market.beta;
    let disc = (b * b - 4.0 * a * c).sqrt();
    let q = -0.5 * (b + b.signum() * disc);
    let (r1, r2) = (q / a, c / q);
    let (plus, minus) = if r1 > r2 { (r1, r2) } else { (r2, r1) };
    Ok(match branch {
        Branch::Plus => plus,
        Branch::Minus => minus,
    })
}

/// `E^x[e^{-beta tau}]` for the first hit of a single barrier by GBM with
/// constant proportion `theta`: `(x/barrier)^{alpha_+}` toward an upper
/// barrier, `(x/barrier)^{alpha_-}` toward a lower one.
pub fn gbm_discounted_hit(
    x: f64,
    barrier: f64,
    theta: f64,
    market: &MarketParams,
    side: BarrierSide,
) -> Result<f64> {
    if !(barrier > 0.0) {
        return Err(Error::Domain(format!("barrier must be positive, got {barrier}")));
    }
    if !(x > 0.0) {
        return Err(Error::Domain(format!("x must be positive, got {x}")));
    }
    match side {
        BarrierSide::Upper => {
            if x > barrier {
                return Err(Error::Domain(format!(
                    "x = {x} above the upper barrier {barrier}"
                )));
            }
            let alpha = alpha_exponent(theta, market, Branch::Plus)?;
            Ok((x / barrier).powf(alpha))
        }
        BarrierSide::Lower => {
            if x < barrier {
                return Err(Error::Domain(format!(
                    "x = {x} below the lower barrier {barrier}"
                )));
            }
            let alpha = alpha_exponent(theta, market, Branch::Minus)?;
            Ok((x / barrier).powf(alpha))
        }
    }
}

/// Result of applying the discounted generator, with a flag recording whether
/// finite differences had to stand in for analytic derivatives.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorEval {
    pub value: f64,
    pub analytic_derivatives: bool,
}

/// `-beta f(x) + mu theta x f'(x) + 1/2 sigma^2 theta^2 x^2 f''(x)`.
pub fn apply_generator(
    f: &SmoothFunction1D,
    x: f64,
    theta: f64,
    market: &MarketParams,
) -> Result<GeneratorEval> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("x must be positive, got {x}")));
    }
    let (v, d1, d2, fd) = f.derivs(x, DEFAULT_REL_STEP)?;
    let value = -market.beta * v
        + market.mu * theta * x * d1
        + 0.5 * market.sigma * market.sigma * theta * theta * x * x * d2;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("generator not finite at x = {x}")));
    }
    Ok(GeneratorEval { value, analytic_derivatives: !fd })
}

/// Central finite differences with absolute step `h = rel_step * max(|x|, 1)`.
pub fn finite_diff_derivs(
    f: impl Fn(f64) -> f64,
    x: f64,
    rel_step: f64,
) -> Result<(f64, f64, f64)> {
    if !(rel_step > 0.0) {
        return Err(Error::Domain(format!("rel_step must be positive, got {rel_step}")));
    }
    let h = rel_step * x.abs().max(1.0);
    let (fm, f0, fp) = (f(x - h), f(x), f(x + h));
    if !(fm.is_finite() && f0.is_finite() && fp.is_finite()) {
        return Err(Error::Numeric(format!(
            "function evaluation failed near x = {x} (step {h})"
        )));
    }
    let d1 = (fp - fm) / (2.0 * h);
    let d2 = (fp - 2.0 * f0 + fm) / (h * h);
    Ok((f0, d1, d2))
}
