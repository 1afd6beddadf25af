//! Investment-withdrawal model where realized utility is reduced by a
//! wealth-dependent reference level: equilibrium proportion, withdrawal
//! threshold, auxiliary value function, dominance and sufficient-condition
//! checks, and comparative statics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::{alpha_exponent, Branch, MarketParams};
use crate::error::{Error, Result};

/// Exponential-utility parameters: risk aversion `a` and utility shift `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceParams {
    pub a: f64,
    pub k: f64,
}

impl PreferenceParams {
    pub fn new(a: f64, k: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Domain(format!("a must be positive, got {a}")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Domain(format!("k must be positive, got {k}")));
        }
        Ok(Self { a, k })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HabitKind {
    Zero,
    Linear { slope: f64 },
    Custom,
}

type Evaluable = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Reference-level function `h` with its first two derivatives.
///
/// Requires `h(0) = 0` and `0 <= h' <= 1` so that `x - h(x)` is nondecreasing.
#[derive(Clone)]
pub struct HabitSpec {
    pub kind: HabitKind,
    h: Evaluable,
    d1: Evaluable,
    d2: Evaluable,
}

impl HabitSpec {
    pub fn zero() -> Self {
        Self {
            kind: HabitKind::Zero,
            h: Arc::new(|_| 0.0),
            d1: Arc::new(|_| 0.0),
            d2: Arc::new(|_| 0.0),
        }
    }

    pub fn linear(slope: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&slope) {
            return Err(Error::Domain(format!(
                "linear habit slope must lie in [0, 1], got {slope}"
            )));
        }
        if slope == 0.0 {
            return Ok(Self::zero());
        }
        Ok(Self {
            kind: HabitKind::Linear { slope },
            h: Arc::new(move |x| slope * x),
            d1: Arc::new(move |_| slope),
            d2: Arc::new(|_| 0.0),
        })
    }

    /// User-supplied habit; validated on a sample grid over (0, 100].
    pub fn custom(
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if h(0.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("habit must satisfy h(0) = 0, got {}", h(0.0))));
        }
        for i in 1..=200 {
            let x = 0.5 * i as f64;
            let s = d1(x);
            if !( -1e-12..=1.0 + 1e-12).contains(&s) {
                return Err(Error::Domain(format!(
                    "habit derivative must lie in [0, 1]; h'({x}) = {s}"
                )));
            }
        }
        Ok(Self { kind: HabitKind::Custom, h: Arc::new(h), d1: Arc::new(d1), d2: Arc::new(d2) })
    }

    pub fn h(&self, x: f64) -> f64 {
        (self.h)(x)
    }

    pub fn d1(&self, x: f64) -> f64 {
        (self.d1)(x)
    }

    pub fn d2(&self, x: f64) -> f64 {
        (self.d2)(x)
    }
}

/// Withdrawal payoff `1 - exp{-a [x - h(y) - k]}`: strictly increasing in the
/// realized wealth `x`, nonincreasing in the reference wealth `y`.
pub fn payoff_g(x: f64, y: f64, prefs: &PreferenceParams, habit: &HabitSpec) -> f64 {
    1.0 - (-prefs.a * (x - habit.h(y) - prefs.k)).exp()
}

/// First x-derivative of the payoff with the reference wealth frozen.
pub fn payoff_g_dx(x: f64, y: f64, prefs: &PreferenceParams, habit: &HabitSpec) -> f64 {
    prefs.a * (-prefs.a * (x - habit.h(y) - prefs.k)).exp()
}

/// Second x-derivative of the payoff with the reference wealth frozen.
pub fn payoff_g_dxx(x: f64, y: f64, prefs: &PreferenceParams, habit: &HabitSpec) -> f64 {
    -prefs.a * prefs.a * (-prefs.a * (x - habit.h(y) - prefs.k)).exp()
}

/// Equilibrium constant proportion `2 beta / mu + mu / sigma^2`.
pub fn equilibrium_theta(market: &MarketParams) -> f64 {
    2.0 * market.beta / market.mu + market.mu / (market.sigma * market.sigma)
}

/// Smooth-fit residual `psi(x) = -alpha + (a x + alpha) e^{-a (x - h(x) - k)}`.
/// The withdrawal threshold is its unique positive root.
pub fn smooth_fit_residual(x: f64, alpha: f64, prefs: &PreferenceParams, habit: &HabitSpec) -> f64 {
    -alpha + (prefs.a * x + alpha) * (-prefs.a * (x - habit.h(x) - prefs.k)).exp()
}

/// Unique positive root of the smooth-fit residual, by bisection.
///
/// The bracket starts at [1e-8, 10/a] and the right end doubles until the
/// residual turns negative (cap 2^15 / a); the residual is single-crossing for
/// admissible habits, so bisection cannot fail inside a valid bracket.
pub fn solve_threshold(alpha: f64, prefs: &PreferenceParams, habit: &HabitSpec) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let lo0 = 1e-8;
    let psi = |x: f64| smooth_fit_residual(x, alpha, prefs, habit);
    if psi(lo0) <= 0.0 {
        return Err(Error::NoRoot(format!(
            "smooth-fit residual not positive at the left bracket end ({})",
            psi(lo0)
        )));
    }
    let mut hi = 10.0 / prefs.a;
    let cap = (1u64 << 15) as f64 / prefs.a;
    while psi(hi) > 0.0 {
        hi *= 2.0;
        if hi > cap {
            return Err(Error::NoRoot(
                "smooth-fit residual stays positive up to the bracket cap; \
                 habit outside the admissible class"
                    .into(),
            ));
        }
    }
    let mut lo = lo0;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if psi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// A fully solved constant-proportion equilibrium candidate for the habit
/// model: proportion, characteristic exponent, withdrawal threshold, and the
/// habit-free benchmark threshold.
#[derive(Clone)]
pub struct HabitEquilibrium {
    pub theta_star: f64,
    pub alpha: f64,
    pub x_star: f64,
    /// Threshold solved with the habit switched off (same alpha).
    pub x0_star: f64,
    pub market: MarketParams,
    pub prefs: PreferenceParams,
    pub habit: HabitSpec,
    /// True when the proportion was locked externally rather than solved.
    pub locked: bool,
}

impl HabitEquilibrium {
    /// Solve for the equilibrium proportion and withdrawal threshold.
    pub fn solve(market: MarketParams, prefs: PreferenceParams, habit: HabitSpec) -> Result<Self> {
        let theta_star = equilibrium_theta(&market);
        let alpha = alpha_exponent(theta_star, &market, Branch::Plus)?;
        let x_star = solve_threshold(alpha, &prefs, &habit)?;
        let x0_star = solve_threshold(alpha, &prefs, &HabitSpec::zero())?;
        Ok(Self { theta_star, alpha, x_star, x0_star, market, prefs, habit, locked: false })
    }

    /// Solve the withdrawal threshold with the proportion locked externally.
    pub fn solve_locked(
        theta: f64,
        market: MarketParams,
        prefs: PreferenceParams,
        habit: HabitSpec,
    ) -> Result<Self> {
        let alpha = alpha_exponent(theta, &market, Branch::Plus)?;
        let x_star = solve_threshold(alpha, &prefs, &habit)?;
        let x0_star = solve_threshold(alpha, &prefs, &HabitSpec::zero())?;
        Ok(Self { theta_star: theta, alpha, x_star, x0_star, market, prefs, habit, locked: true })
    }

    /// Candidate value function: `(x/x*)^alpha g(x*, y)` inside the
    /// continuation region, the payoff itself outside. Continuous with
    /// continuous first x-derivative at the threshold by construction.
    pub fn aux_f(&self, x: f64, y: f64) -> f64 {
        if x < self.x_star {
            (x / self.x_star).powf(self.alpha) * payoff_g(self.x_star, y, &self.prefs, &self.habit)
        } else {
            payoff_g(x, y, &self.prefs, &self.habit)
        }
    }

    /// First x-partial of the candidate value (reference wealth frozen),
    /// one-sided from inside the continuation region at the threshold.
    pub fn aux_f_dx(&self, x: f64, y: f64) -> f64 {
        if x <= self.x_star {
            self.alpha / x * self.aux_f(x, y)
        } else {
            payoff_g_dx(x, y, &self.prefs, &self.habit)
        }
    }

    /// Second x-partial; jumps at the threshold.
    pub fn aux_f_dxx(&self, x: f64, y: f64) -> f64 {
        if x < self.x_star {
            self.alpha * (self.alpha - 1.0) / (x * x) * self.aux_f(x, y)
        } else {
            payoff_g_dxx(x, y, &self.prefs, &self.habit)
        }
    }

    pub fn payoff(&self, x: f64, y: f64) -> f64 {
        payoff_g(x, y, &self.prefs, &self.habit)
    }

    /// Minimum of the three derivative bounds that the habit slope must stay
    /// under for the sufficient conditions; returns (term1, term2, term3).
    pub fn slope_bound_terms(&self) -> (f64, f64, f64) {
        let (a, k) = (self.prefs.a, self.prefs.k);
        let alpha = self.alpha;
        let t1 = 1.0 / (2.0 * (1.0 + 1.0 / (a * self.x0_star + alpha - 1.0)));
        let cap = (alpha * (a * k).exp()).min(2.0 * (alpha - 2.0 + a * k).exp());
        let t2 = 1.0 / (1.0 - (-a * self.x_star).exp()) * (1.0 - alpha / cap);
        (t1, t2, 0.5)
    }

    pub fn slope_bound(&self) -> f64 {
        let (t1, t2, t3) = self.slope_bound_terms();
        t1.min(t2).min(t3)
    }
}

/// One checked inequality: id, the worst grid point (when grid-based), the
/// worst signed residual, and the verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionItem {
    pub id: String,
    pub witness: Option<f64>,
    pub worst: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub items: Vec<ConditionItem>,
    pub overall: bool,
}

impl ConditionReport {
    pub fn from_items(items: Vec<ConditionItem>) -> Self {
        let overall = items.iter().all(|i| i.pass);
        Self { items, overall }
    }

    pub fn item(&self, id: &str) -> Option<&ConditionItem> {
        self.items.iter().find(|i| i.id == id)
    }
}

/// Pass tolerance for inequality conditions: rounding at analytic zeros is
/// absorbed, genuine violations are not.
pub const INEQUALITY_TOL: f64 = 1e-9;

/// Value-dominance check inside the continuation region:
/// `F(x) = x^alpha (1 - e^{-a(x* - h(x) - k)}) - (x*)^alpha (1 - e^{-a(x - h(x) - k)})`
/// must be nonnegative on a uniform grid over (0, x*).
pub fn check_value_dominance(eq: &HabitEquilibrium, grid_n: usize) -> Result<ConditionReport> {
    if grid_n < 2 {
        return Err(Error::Domain(format!("grid_n must be at least 2, got {grid_n}")));
    }
    let (a, k) = (eq.prefs.a, eq.prefs.k);
    let xs = eq.x_star;
    let n = grid_n as f64;
    let mut worst = f64::INFINITY;
    let mut at = f64::NAN;
    let lo = xs / n;
    let hi = xs * (1.0 - 1.0 / n);
    for i in 0..grid_n {
        let x = lo + (hi - lo) * i as f64 / (n - 1.0);
        let hx = eq.habit.h(x);
        let f = x.powf(eq.alpha) * (1.0 - (-a * (xs - hx - k)).exp())
            - xs.powf(eq.alpha) * (1.0 - (-a * (x - hx - k)).exp());
        if f < worst {
            worst = f;
            at = x;
        }
    }
    let pass = worst >= -INEQUALITY_TOL;
    Ok(ConditionReport::from_items(vec![ConditionItem {
        id: "value_dominance".into(),
        witness: Some(at),
        worst,
        pass,
    }]))
}

/// Sufficient conditions for the candidate pair to be an equilibrium:
/// threshold floor on the habit-free benchmark (with its closed-form
/// equivalent), concavity of the habit, the slope bound, and the
/// stop-region generator inequalities' threshold condition.
pub fn check_sufficient_conditions(eq: &HabitEquilibrium) -> ConditionReport {
    let (a, k) = (eq.prefs.a, eq.prefs.k);
    let alpha = eq.alpha;
    let mut items = Vec::new();

    // Benchmark threshold floor, plus the equivalent closed-form test.
    let floor = (2.0 - alpha) / a;
    items.push(ConditionItem {
        id: "x0_floor".into(),
        witness: None,
        worst: eq.x0_star - floor,
        pass: eq.x0_star > floor,
    });
    let equiv = 2.0 * (alpha - 2.0 + a * k).exp() - alpha;
    items.push(ConditionItem {
        id: "x0_floor_equiv".into(),
        witness: None,
        worst: equiv,
        pass: equiv > 0.0,
    });

    // Concavity of the habit on (0, x*).
    let grid_n = 400usize;
    let mut worst = f64::NEG_INFINITY;
    let mut at = f64::NAN;
    for i in 0..grid_n {
        let x = eq.x_star * (i as f64 + 0.5) / grid_n as f64;
        let d2 = eq.habit.d2(x);
        if d2 > worst {
            worst = d2;
            at = x;
        }
    }
    items.push(ConditionItem {
        id: "habit_concave".into(),
        witness: Some(at),
        worst,
        pass: worst <= INEQUALITY_TOL,
    });

    // Strict slope bound: sup h' < min of the three terms.
    let bound = eq.slope_bound();
    let mut sup_slope = f64::NEG_INFINITY;
    let mut at_slope = f64::NAN;
    for i in 0..grid_n {
        let x = eq.x_star * (i as f64 + 0.5) / grid_n as f64;
        let d1 = eq.habit.d1(x);
        if d1 > sup_slope {
            sup_slope = d1;
            at_slope = x;
        }
    }
    items.push(ConditionItem {
        id: "slope_bound".into(),
        witness: Some(at_slope),
        worst: bound - sup_slope,
        pass: sup_slope < bound,
    });

    // x* >= min(2 mu / (sigma^2 theta a), mu^2 alpha / (2 beta sigma^2 a)).
    let (mu, s2, beta) = (eq.market.mu, eq.market.sigma * eq.market.sigma, eq.market.beta);
    let xbar1 = 2.0 * mu / (s2 * eq.theta_star * a);
    let xbar2 = mu * mu * alpha / (2.0 * beta * s2 * a);
    let need = xbar1.min(xbar2);
    items.push(ConditionItem {
        id: "threshold_floor".into(),
        witness: None,
        worst: eq.x_star - need,
        pass: eq.x_star >= need - INEQUALITY_TOL,
    });

    ConditionReport::from_items(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Mu,
    Sigma,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub theta_star: f64,
    pub alpha: f64,
    pub x_star: f64,
    pub x0_star: f64,
    pub m_bound: f64,
}

/// Recompute the equilibrium along a one-parameter sweep of the market.
pub fn sweep_threshold(
    axis: SweepAxis,
    from: f64,
    to: f64,
    steps: usize,
    market: &MarketParams,
    prefs: &PreferenceParams,
    habit: &HabitSpec,
) -> Result<Vec<SweepRow>> {
    if steps < 2 && from != to {
        return Err(Error::Domain(format!("steps must be at least 2, got {steps}")));
    }
    if from > to {
        return Err(Error::Domain(format!("empty sweep range [{from}, {to}]")));
    }
    let n = steps.max(1);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let p = from + (to - from) * t;
        let m = match axis {
            SweepAxis::Mu => MarketParams::new(p, market.sigma, market.beta),
            SweepAxis::Sigma => MarketParams::new(market.mu, p, market.beta),
        }
        .map_err(|e| Error::Domain(format!("sweep point {p}: {e}")))?;
        let eq = HabitEquilibrium::solve(m, *prefs, habit.clone())
            .map_err(|e| Error::NoRoot(format!("sweep point {p}: {e}")))?;
        rows.push(SweepRow {
            param: p,
            theta_star: eq.theta_star,
            alpha: eq.alpha,
            x_star: eq.x_star,
            x0_star: eq.x0_star,
            m_bound: eq.slope_bound(),
        });
    }
    Ok(rows)
}
