//! Discount-rate ambiguity: mean discount functions for a belief over rates,
//! the candidate boundary from smooth fitting, the pointwise maximizing
//! proportion, and the exclusion computation showing that no constant
//! proportion survives genuine ambiguity.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{checked_gamma_ur, ln_gamma};

use crate::diffusion::{alpha_exponent, Branch, MarketParams};
use crate::error::{Error, Result};
use crate::habit::{ConditionItem, ConditionReport};

/// Rates closer than this (relatively) are treated as one support point.
const RATE_MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateAtom {
    pub rate: f64,
    pub weight: f64,
}

/// Discrete (or quadrature-discretized) belief over discount rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    atoms: Vec<RateAtom>,
}

impl Belief {
    pub fn from_atoms(atoms: Vec<RateAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("belief needs at least one atom".into()));
        }
        let mut total = 0.0;
        for a in &atoms {
            if !(a.rate > 0.0 && a.rate.is_finite()) {
                return Err(Error::Config(format!("belief rate must be positive, got {}", a.rate)));
            }
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::Config(format!(
                    "belief weight must be positive, got {}",
                    a.weight
                )));
            }
            total += a.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("belief weights sum to {total}, expected 1")));
        }
        Ok(Self { atoms })
    }

    /// Renormalizing constructor for file input; accepts sums in [0.999, 1.001].
    pub fn from_atoms_renormalized(mut atoms: Vec<RateAtom>) -> Result<(Self, bool)> {
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if !(0.999..=1.001).contains(&total) {
            return Err(Error::Config(format!(
                "belief weights sum to {total}, outside the accepted band [0.999, 1.001]"
            )));
        }
        let renormalized = (total - 1.0).abs() > 1e-12;
        if renormalized {
            for a in &mut atoms {
                a.weight /= total;
            }
        }
        Ok((Self::from_atoms(atoms)?, renormalized))
    }

    pub fn singleton(rate: f64) -> Result<Self> {
        Self::from_atoms(vec![RateAtom { rate, weight: 1.0 }])
    }

    /// Two-rate belief `lambda` on `rate1`, `1 - lambda` on `rate2`.
    pub fn two_point(lambda: f64, rate1: f64, rate2: f64) -> Result<Self> {
        if !(0.0 < lambda && lambda < 1.0) {
            if lambda == 1.0 {
                return Self::singleton(rate1);
            }
            if lambda == 0.0 {
                return Self::singleton(rate2);
            }
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        Self::from_atoms(vec![
            RateAtom { rate: rate1, weight: lambda },
            RateAtom { rate: rate2, weight: 1.0 - lambda },
        ])
    }

    /// Gamma-density belief with mean discount `(1 + a t)^{-b/a}`, discretized
    /// by 64-node Gauss-Legendre quadrature on [0, B_max] where the density
    /// tail mass beyond B_max is below 1e-10.
    pub fn generalized_hyperbolic(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Config(format!(
                "hyperbolic discount parameters must be positive, got a = {a}, b = {b}"
            )));
        }
        let shape = b / a;
        let scale = a;
        let mut bmax = (shape + 10.0 * shape.sqrt()).max(1.0) * scale;
        loop {
            let tail = checked_gamma_ur(shape, bmax / scale)
                .map_err(|e| Error::Numeric(format!("gamma tail evaluation failed: {e}")))?;
            if tail < 1e-10 {
                break;
            }
            bmax *= 2.0;
            if bmax > 1e12 {
                return Err(Error::Numeric("gamma tail never fell below 1e-10".into()));
            }
        }
        let ln_norm = shape * scale.ln() + ln_gamma(shape);
        Self::from_density(
            move |beta: f64| ((shape - 1.0) * beta.ln() - beta / scale - ln_norm).exp(),
            0.0,
            bmax,
            64,
        )
    }

    /// Quadrature discretization of a density supported on [lo, hi].
    /// Weights are renormalized so the single point of approximation is the
    /// node placement, measurable against closed-form discount functions.
    pub fn from_density(
        density: impl Fn(f64) -> f64,
        lo: f64,
        hi: f64,
        nodes: usize,
    ) -> Result<Self> {
        if !(hi > lo && lo >= 0.0) {
            return Err(Error::Config(format!("bad density support [{lo}, {hi}]")));
        }
        let (xs, ws) = gauss_legendre(nodes);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let mut atoms = Vec::with_capacity(nodes);
        let mut total = 0.0;
        for (&x, &w) in xs.iter().zip(&ws) {
            let rate = mid + half * x;
            let weight = w * half * density(rate);
            if weight > 0.0 && rate > 0.0 {
                atoms.push(RateAtom { rate, weight });
                total += weight;
            }
        }
        if atoms.is_empty() || total <= 0.0 {
            return Err(Error::Config("density integrates to zero on the support".into()));
        }
        for a in &mut atoms {
            a.weight /= total;
        }
        Self::from_atoms(atoms)
    }

    pub fn atoms(&self) -> &[RateAtom] {
        &self.atoms
    }

    /// Number of distinct support rates (merging numerically equal ones).
    pub fn distinct_rates(&self) -> usize {
        let mut rates: Vec<f64> = self.atoms.iter().map(|a| a.rate).collect();
        rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut n = 1;
        for w in rates.windows(2) {
            if (w[1] - w[0]).abs() > RATE_MERGE_TOL * w[1].abs().max(1.0) {
                n += 1;
            }
        }
        n
    }
}

/// Mean discount `B(t) = sum_i w_i e^{-rate_i t}`.
pub fn mean_discount(belief: &Belief, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t must be nonnegative, got {t}")));
    }
    Ok(belief.atoms.iter().map(|a| a.weight * (-a.rate * t).exp()).sum())
}

/// Mean rate `sum_i w_i rate_i`.
pub fn belief_mean_rate(belief: &Belief) -> f64 {
    belief.atoms.iter().map(|a| a.weight * a.rate).sum()
}

fn mean_plus_exponent(theta: f64, belief: &Belief, mu: f64, sigma: f64) -> Result<f64> {
    let mut acc = 0.0;
    for a in &belief.atoms {
        let m = MarketParams::new(mu, sigma, a.rate)?;
        acc += a.weight * alpha_exponent(theta, &m, Branch::Plus)?;
    }
    Ok(acc)
}

/// Candidate upper boundary `r = exp(1 / mean of the positive exponents)`
/// implied by smooth fitting for the log-payoff; always above 1.
pub fn candidate_boundary_r(theta: f64, belief: &Belief, mu: f64, sigma: f64) -> Result<f64> {
    Ok((1.0 / mean_plus_exponent(theta, belief, mu, sigma)?).exp())
}

/// Pointwise maximizer of the generator over the control at wealth `x` inside
/// (0, r): the ratio `-mu f_x / (sigma^2 x f_xx)` expanded over the belief.
///
/// A vanishing denominator means the curvature of the candidate value is
/// degenerate there, making the control supremum unbounded; reported as an
/// error carrying that diagnosis.
pub fn theta_tilde(x: f64, theta: f64, r: f64, belief: &Belief, mu: f64, sigma: f64) -> Result<f64> {
    if !(x > 0.0 && x < r) {
        return Err(Error::Domain(format!("x must lie in (0, {r}), got {x}")));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for a in &belief.atoms {
        let m = MarketParams::new(mu, sigma, a.rate)?;
        let al = alpha_exponent(theta, &m, Branch::Plus)?;
        let w = a.weight * al * x.powf(al - 1.0) / r.powf(al);
        num += w;
        den += w * (1.0 - al);
    }
    if den.abs() < 1e-14 * num.abs().max(1.0) {
        return Err(Error::Numeric(format!(
            "degenerate curvature at x = {x}: the control supremum is unbounded"
        )));
    }
    Ok(mu / (sigma * sigma) * num / den)
}

/// Analytic limits of the pointwise maximizer at the two ends of (0, r):
/// at 0+ the smallest exponent dominates; at r- the powers cancel.
///
/// When the smallest exponent equals 1 exactly, its curvature coefficient
/// vanishes identically and the 0+ limit diverges to -infinity (every other
/// exponent is larger than 1, so the surviving curvature is negative); the
/// divergence is itself exclusion evidence.
pub fn theta_tilde_limits(theta: f64, belief: &Belief, mu: f64, sigma: f64) -> Result<(f64, f64)> {
    let mut alphas = Vec::with_capacity(belief.atoms.len());
    for a in &belief.atoms {
        let m = MarketParams::new(mu, sigma, a.rate)?;
        alphas.push((alpha_exponent(theta, &m, Branch::Plus)?, a.weight));
    }
    let amin = alphas.iter().map(|&(a, _)| a).fold(f64::INFINITY, f64::min);
    let at_zero = if (1.0 - amin).abs() < 1e-12 {
        f64::NEG_INFINITY
    } else {
        mu / (sigma * sigma) / (1.0 - amin)
    };
    let num: f64 = alphas.iter().map(|&(a, w)| w * a).sum();
    let den: f64 = alphas.iter().map(|&(a, w)| w * a * (1.0 - a)).sum();
    if den.abs() < 1e-14 {
        return Err(Error::Numeric("degenerate limit at r-: curvature term vanishes".into()));
    }
    let at_r = mu / (sigma * sigma) * num / den;
    Ok((at_zero, at_r))
}

/// Exclusion tolerance on the endpoint gap for a two-point belief.
pub const ENDPOINT_GAP_TOL: f64 = 0.1;
/// Non-constancy tolerance for the interior grid of the maximizer.
pub const RANGE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub singleton: bool,
    pub boundary_r: f64,
    pub theta_at_zero: Option<f64>,
    pub theta_at_r: Option<f64>,
    pub endpoint_gap: Option<f64>,
    pub grid_range: Option<f64>,
    /// Lower bound on states outside the continuation component from the
    /// stop-region generator inequality: `exp((mu theta - sigma^2 theta^2/2)/m_p)`.
    pub stop_region_lower_bound: f64,
    /// Number of interior grid points where the curvature degenerated
    /// (exclusion evidence in itself, not a failure).
    pub degenerate_points: usize,
    /// True when no constant proportion can be an equilibrium.
    pub excluded: bool,
    pub conditions: ConditionReport,
}

/// Probe whether the constant proportion `theta` can survive as an
/// equilibrium under the given belief. With at least two distinct rates,
/// exclusion is demonstrated when the pointwise maximizer deviates from
/// `theta` or is non-constant over (0, r); singleton beliefs reduce to the
/// unambiguous model and are reported as "no exclusion".
pub fn exclusion_check(theta: f64, belief: &Belief, mu: f64, sigma: f64) -> Result<ExclusionReport> {
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("theta must be positive, got {theta}")));
    }
    let r = candidate_boundary_r(theta, belief, mu, sigma)?;
    let m_p = belief_mean_rate(belief);
    let lower = ((mu * theta - 0.5 * sigma * sigma * theta * theta) / m_p).exp();
    let singleton = belief.distinct_rates() < 2;

    let mut items = Vec::new();
    let mut degenerate = 0usize;

    if singleton {
        let (t0, tr) = theta_tilde_limits(theta, belief, mu, sigma)?;
        let gap = (t0 - tr).abs();
        items.push(ConditionItem {
            id: "singleton_constant_maximizer".into(),
            witness: None,
            worst: gap,
            pass: gap < 1e-9,
        });
        let report = ConditionReport::from_items(items);
        return Ok(ExclusionReport {
            singleton: true,
            boundary_r: r,
            theta_at_zero: Some(t0),
            theta_at_r: Some(tr),
            endpoint_gap: Some(gap),
            grid_range: None,
            stop_region_lower_bound: lower,
            degenerate_points: 0,
            excluded: false,
            conditions: report,
        });
    }

    let (t0, tr) = theta_tilde_limits(theta, belief, mu, sigma)?;
    let gap = (t0 - tr).abs();
    items.push(ConditionItem {
        id: "endpoint_gap".into(),
        witness: None,
        worst: gap,
        pass: gap > ENDPOINT_GAP_TOL,
    });

    let grid_n = 100usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut worst_dev = 0.0f64;
    let mut worst_at = f64::NAN;
    for i in 0..grid_n {
        let x = r * (i as f64 + 0.5) / grid_n as f64;
        match theta_tilde(x, theta, r, belief, mu, sigma) {
            Ok(t) => {
                lo = lo.min(t);
                hi = hi.max(t);
                let dev = (t - theta).abs();
                if dev > worst_dev {
                    worst_dev = dev;
                    worst_at = x;
                }
            }
            Err(Error::Numeric(_)) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    let range = if lo.is_finite() { hi - lo } else { f64::INFINITY };
    items.push(ConditionItem {
        id: "grid_nonconstancy".into(),
        witness: Some(worst_at),
        worst: range,
        pass: range > RANGE_TOL || degenerate > 0,
    });
    items.push(ConditionItem {
        id: "maximizer_deviates".into(),
        witness: Some(worst_at),
        worst: worst_dev,
        pass: worst_dev > RANGE_TOL || degenerate > 0,
    });

    let excluded = items.iter().any(|i| i.pass);
    let mut report = ConditionReport::from_items(items);
    // exclusion needs any witness, not all of them
    report.overall = excluded;
    Ok(ExclusionReport {
        singleton: false,
        boundary_r: r,
        theta_at_zero: Some(t0),
        theta_at_r: Some(tr),
        endpoint_gap: Some(gap),
        grid_range: Some(range),
        stop_region_lower_bound: lower,
        degenerate_points: degenerate,
        excluded,
        conditions: report,
    })
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0f64, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                xs[i] = -x;
                xs[n - 1 - i] = x;
                ws[i] = w;
                ws[n - 1 - i] = w;
                break;
            }
        }
    }
    (xs, ws)
}
