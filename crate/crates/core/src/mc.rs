//! Monte Carlo probing of the equilibrium conditions on simulated paths:
//! stopped-payoff estimation, control-perturbation and stopping-delay slopes,
//! and the immediate-stop comparison. Estimates are deterministic for a fixed
//! seed regardless of scheduling (counter-based per-path random streams,
//! pairwise-tree aggregation).

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::MarketParams;
use crate::error::{Error, Result};
use crate::habit::{payoff_g, HabitEquilibrium};

/// Paths with a remaining discounted contribution bound below this are
/// settled as never-stopping without simulating them to the horizon. The
/// absolute bias is at most this bound (each settled path's conditional
/// expectation lies below it), orders of magnitude under any achievable
/// standard error.
const PRUNE_BOUND: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McConfig {
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub t_max: f64,
    pub bridge_correction: bool,
}

impl McConfig {
    pub fn new(paths: usize, dt: f64, seed: u64, t_max: f64, bridge_correction: bool) -> Result<Self> {
        if paths < 1 {
            return Err(Error::Config("paths must be at least 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::Config(format!("t_max must be positive, got {t_max}")));
        }
        Ok(Self { paths, dt, seed, t_max, bridge_correction })
    }

    /// Horizon cap making the truncation bias at most 1e-8 of the payoff scale.
    pub fn default_t_max(beta: f64) -> f64 {
        (1e8f64).ln() / beta
    }

    /// 1e5 paths, dt = 1e-3, seed 42, horizon from the discount rate.
    pub fn default_for(beta: f64) -> Self {
        Self { paths: 100_000, dt: 1e-3, seed: 42, t_max: Self::default_t_max(beta), bridge_correction: false }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    /// Fraction of paths reaching the horizon (or settled as never-stopping)
    /// without exiting the region; they contribute zero payoff.
    pub truncated_fraction: f64,
}

/// Control policy driving the wealth paths.
#[derive(Clone)]
pub enum Control {
    Constant(f64),
    StateDependent(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Per-path counter-based normal stream: draw `step` depends only on
/// (seed, path, step), so any execution order reproduces the same numbers.
pub struct NormalStream {
    base: u64,
    cached_pair: u64,
    cached_z1: f64,
    has_cache: bool,
}

impl NormalStream {
    pub fn new(seed: u64, path: u64) -> Self {
        let base = mix64(seed ^ mix64(path.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0x2545f4914f6cdd1d)));
        Self { base, cached_pair: 0, cached_z1: 0.0, has_cache: false }
    }

    fn raw(&self, ctr: u64) -> u64 {
        mix64(self.base ^ ctr.wrapping_mul(0xd1b54a32d192ed03))
    }

    fn uniform(&self, ctr: u64) -> f64 {
        ((self.raw(ctr) >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Auxiliary uniform stream (bridge-crossing decisions), disjoint from
    /// the counters used by the normal draws.
    pub fn uniform_aux(&self, step: u64) -> f64 {
        self.uniform((1u64 << 62) | step)
    }

    /// Standard normal draw with index `step` (Box-Muller pairs).
    pub fn normal(&mut self, step: u64) -> f64 {
        let pair = step >> 1;
        if step & 1 == 1 && self.has_cache && self.cached_pair == pair {
            return self.cached_z1;
        }
        let u1 = self.uniform(2 * pair);
        let u2 = self.uniform(2 * pair + 1);
        let r = (-2.0 * u1.ln()).sqrt();
        let t = std::f64::consts::TAU * u2;
        let (s, c) = t.sin_cos();
        self.cached_pair = pair;
        self.cached_z1 = r * s;
        self.has_cache = true;
        if step & 1 == 0 {
            r * c
        } else {
            self.cached_z1
        }
    }
}

/// Deterministic pairwise-tree sum, independent of chunking or scheduling.
pub fn tree_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n <= 8 => v.iter().sum(),
        n => {
            let mid = n / 2;
            tree_sum(&v[..mid]) + tree_sum(&v[mid..])
        }
    }
}

fn estimate(samples: &[f64], truncated: usize) -> McEstimate {
    let n = samples.len();
    let mean = tree_sum(samples) / n as f64;
    let stderr = if n > 1 {
        let devs: Vec<f64> = samples.iter().map(|s| (s - mean) * (s - mean)).collect();
        (tree_sum(&devs) / (n as f64 - 1.0) / n as f64).sqrt()
    } else {
        0.0
    };
    McEstimate { mean, stderr, n, truncated_fraction: truncated as f64 / n as f64 }
}

struct PathOutcome {
    value: f64,
    truncated: bool,
}

#[allow(clippy::too_many_arguments)]
fn simulate_constant_path(
    path: u64,
    x0: f64,
    y: f64,
    theta: f64,
    lo: f64,
    hi: f64,
    payoff: &(dyn Fn(f64, f64) -> f64 + Sync),
    market: &MarketParams,
    cfg: &McConfig,
) -> PathOutcome {
    let mut rng = NormalStream::new(cfg.seed, path);
    let nu = market.mu * theta - 0.5 * market.sigma * market.sigma * theta * theta;
    let svol = market.sigma * theta;
    let drift_dt = nu * cfg.dt;
    let vol_dt = svol * cfg.dt.sqrt();
    let ln_hi = hi.ln();
    let ln_lo = if lo > 0.0 { lo.ln() } else { f64::NEG_INFINITY };
    let n_steps = (cfg.t_max / cfg.dt).ceil() as u64;
    // never-stopping paths can be settled early only when the lower end is
    // unreachable and the log-drift points away from the upper barrier
    let prune_ok = lo <= 0.0 && nu < 0.0;
    let payoff_bound = payoff(hi, y).abs().max(1e-3);
    let mut ln_x = x0.ln();
    let mut step = 0u64;
    loop {
        if step >= n_steps {
            return PathOutcome { value: 0.0, truncated: true };
        }
        if prune_ok && step % 64 == 0 {
            // P(ever reach the barrier) = exp(-2 |nu| d / svol^2) for drifted
            // Brownian log-wealth a distance d below it
            let d = ln_hi - ln_x;
            let log_bound =
                -2.0 * nu.abs() * d / (svol * svol) - market.beta * step as f64 * cfg.dt;
            if log_bound.exp() * payoff_bound < PRUNE_BOUND {
                return PathOutcome { value: 0.0, truncated: true };
            }
        }
        let prev = ln_x;
        ln_x += drift_dt + vol_dt * rng.normal(step);
        step += 1;
        let t = step as f64 * cfg.dt;
        if ln_x >= ln_hi || ln_x <= ln_lo {
            let disc = (-market.beta * t).exp();
            return PathOutcome { value: disc * payoff(ln_x.exp(), y), truncated: false };
        }
        if cfg.bridge_correction {
            let pc = (-2.0 * (ln_hi - prev) * (ln_hi - ln_x) / (svol * svol * cfg.dt)).exp();
            if rng.uniform_aux(step) < pc {
                let disc = (-market.beta * t).exp();
                return PathOutcome { value: disc * payoff(hi, y), truncated: false };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_state_dependent_path(
    path: u64,
    x0: f64,
    y: f64,
    theta: &(dyn Fn(f64) -> f64 + Sync),
    lo: f64,
    hi: f64,
    payoff: &(dyn Fn(f64, f64) -> f64 + Sync),
    market: &MarketParams,
    cfg: &McConfig,
) -> PathOutcome {
    let mut rng = NormalStream::new(cfg.seed, path);
    let sqdt = cfg.dt.sqrt();
    let n_steps = (cfg.t_max / cfg.dt).ceil() as u64;
    let mut x = x0;
    let mut step = 0u64;
    loop {
        if step >= n_steps {
            return PathOutcome { value: 0.0, truncated: true };
        }
        let th = theta(x);
        x += market.mu * th * x * cfg.dt + market.sigma * th * x * sqdt * rng.normal(step);
        x = x.max(1e-300);
        step += 1;
        if x >= hi || x <= lo {
            let disc = (-market.beta * step as f64 * cfg.dt).exp();
            return PathOutcome { value: disc * payoff(x, y), truncated: false };
        }
    }
}

/// Estimate `E[e^{-beta tau} payoff(X_tau, y)]` where `tau` is the first grid
/// time the controlled wealth exits `region = (lo, hi)`, starting from `x0`
/// with the reference level frozen at `y`. Exact-GBM (log-Euler) steps are
/// used for constant controls, plain Euler otherwise; exits are detected at
/// grid times, optionally refined by a Brownian-bridge crossing draw.
pub fn simulate_stopped_payoff(
    x0: f64,
    y: f64,
    control: &Control,
    region: (f64, f64),
    payoff: impl Fn(f64, f64) -> f64 + Sync,
    market: &MarketParams,
    cfg: &McConfig,
) -> Result<McEstimate> {
    let (lo, hi) = region;
    if !(hi > lo && hi > 0.0 && lo >= 0.0) {
        return Err(Error::Domain(format!("bad region ({lo}, {hi})")));
    }
    if x0 < lo || x0 > hi {
        return Err(Error::Domain(format!("x0 = {x0} outside the region ({lo}, {hi})")));
    }
    if let Control::Constant(theta) = control {
        if !(*theta > 0.0) {
            return Err(Error::Domain(format!("theta must be positive, got {theta}")));
        }
    }
    if x0 >= hi || (lo > 0.0 && x0 <= lo) {
        // already outside the open region: tau = 0 for every path
        return Ok(McEstimate {
            mean: payoff(x0, y),
            stderr: 0.0,
            n: cfg.paths,
            truncated_fraction: 0.0,
        });
    }
    let outcomes: Vec<PathOutcome> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| match control {
            Control::Constant(theta) => {
                simulate_constant_path(p, x0, y, *theta, lo, hi, &payoff, market, cfg)
            }
            Control::StateDependent(th) => {
                simulate_state_dependent_path(p, x0, y, th.as_ref(), lo, hi, &payoff, market, cfg)
            }
        })
        .collect();
    let samples: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
    let truncated = outcomes.iter().filter(|o| o.truncated).count();
    Ok(estimate(&samples, truncated))
}

/// Default perturbation-window grid for the probes.
pub fn default_eps_list() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025, 0.0125]
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbePoint {
    pub eps: f64,
    pub slope: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub points: Vec<ProbePoint>,
    /// Weighted least-squares extrapolation of slope vs eps to eps = 0.
    pub intercept: f64,
    pub intercept_stderr: f64,
}

fn wls_intercept(points: &[ProbePoint]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::Domain("need at least two window sizes for the intercept".into()));
    }
    let (mut sw, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let w = 1.0 / (p.stderr * p.stderr).max(1e-300);
        sw += w;
        sx += w * p.eps;
        sxx += w * p.eps * p.eps;
        sy += w * p.slope;
        sxy += w * p.eps * p.slope;
    }
    let det = sw * sxx - sx * sx;
    if det <= 0.0 {
        return Err(Error::Numeric("degenerate window grid in the intercept fit".into()));
    }
    let a = (sxx * sy - sx * sxy) / det;
    let var_a = sxx / det;
    Ok((a, var_a.sqrt()))
}

fn validate_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::Domain("eps list must be nonempty".into()));
    }
    for w in eps_list.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Domain("eps list must be strictly decreasing".into()));
        }
    }
    if *eps_list.last().unwrap() <= 0.0 {
        return Err(Error::Domain("eps values must be positive".into()));
    }
    Ok(())
}

/// Probe the no-gain-from-control-deviation condition: run the constant
/// control `u_const` on [0, eps) with stopping monitored throughout, then
/// switch back to the equilibrium control, whose value from the reached state
/// is the closed-form auxiliary function. The reported slope is
/// `(J_perturbed - f(x0, x0)) / eps`, extrapolated to eps -> 0.
pub fn control_perturbation_probe(
    x0: f64,
    eq: &HabitEquilibrium,
    u_const: f64,
    eps_list: &[f64],
    cfg: &McConfig,
) -> Result<ProbeResult> {
    if !(u_const > 0.0) {
        return Err(Error::Domain(format!("perturbed control must be positive, got {u_const}")));
    }
    if !(x0 > 0.0 && x0 < eq.x_star) {
        return Err(Error::Domain(format!(
            "x0 = {x0} outside the continuation region (0, {})",
            eq.x_star
        )));
    }
    validate_eps_list(eps_list)?;
    let base = eq.aux_f(x0, x0);
    let m = eq.market;
    let nu = m.mu * u_const - 0.5 * m.sigma * m.sigma * u_const * u_const;
    let svol = m.sigma * u_const;
    let ln_hi = eq.x_star.ln();
    let mut points = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let n = (eps / cfg.dt).ceil().max(1.0) as u64;
        let dt = eps / n as f64;
        let drift_dt = nu * dt;
        let vol_dt = svol * dt.sqrt();
        let samples: Vec<f64> = (0..cfg.paths as u64)
            .into_par_iter()
            .map(|p| {
                let mut rng = NormalStream::new(cfg.seed, p);
                let mut ln_x = x0.ln();
                for step in 0..n {
                    ln_x += drift_dt + vol_dt * rng.normal(step);
                    if ln_x >= ln_hi {
                        let t = (step + 1) as f64 * dt;
                        return (-m.beta * t).exp() * eq.payoff(ln_x.exp(), x0);
                    }
                }
                // back on the equilibrium control: remaining value is the
                // closed-form auxiliary function at the reached state
                (-m.beta * eps).exp() * eq.aux_f(ln_x.exp(), x0)
            })
            .collect();
        let est = estimate(&samples, 0);
        points.push(ProbePoint {
            eps,
            slope: (est.mean - base) / eps,
            stderr: est.stderr / eps,
        });
    }
    let (intercept, intercept_stderr) = wls_intercept(&points)?;
    Ok(ProbeResult { points, intercept, intercept_stderr })
}

/// Probe the no-gain-from-delayed-stopping condition: suppress stopping on
/// [0, eps) under the equilibrium control, then stop at the first exit, whose
/// value from the reached state is the closed-form auxiliary function. The
/// slope baseline is the payoff for `x0` in the stop region, the auxiliary
/// value inside the continuation region; the boundary point itself is not a
/// Monte Carlo question and is rejected.
pub fn stop_delay_probe(
    x0: f64,
    eq: &HabitEquilibrium,
    eps_list: &[f64],
    cfg: &McConfig,
) -> Result<ProbeResult> {
    if !(x0 > 0.0) {
        return Err(Error::Domain(format!("x0 must be positive, got {x0}")));
    }
    if (x0 - eq.x_star).abs() < 1e-9 * eq.x_star.max(1.0) {
        return Err(Error::Domain(
            "x0 at the continuation boundary: the boundary condition is certified \
             by smooth fitting, not by simulation"
                .into(),
        ));
    }
    validate_eps_list(eps_list)?;
    let base = eq.aux_f(x0, x0);
    let m = eq.market;
    let theta = eq.theta_star;
    let nu = m.mu * theta - 0.5 * m.sigma * m.sigma * theta * theta;
    let svol = m.sigma * theta;
    let mut points = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let n = (eps / cfg.dt).ceil().max(1.0) as u64;
        let dt = eps / n as f64;
        let drift_dt = nu * dt;
        let vol_dt = svol * dt.sqrt();
        let samples: Vec<f64> = (0..cfg.paths as u64)
            .into_par_iter()
            .map(|p| {
                let mut rng = NormalStream::new(cfg.seed, p);
                let mut ln_x = x0.ln();
                for step in 0..n {
                    ln_x += drift_dt + vol_dt * rng.normal(step);
                }
                (-m.beta * eps).exp() * eq.aux_f(ln_x.exp(), x0)
            })
            .collect();
        let est = estimate(&samples, 0);
        points.push(ProbePoint {
            eps,
            slope: (est.mean - base) / eps,
            stderr: est.stderr / eps,
        });
    }
    let (intercept, intercept_stderr) = wls_intercept(&points)?;
    Ok(ProbeResult { points, intercept, intercept_stderr })
}

/// Monte Carlo estimate of `J(x0; equilibrium) - g(x0, x0)`: nonnegative (up
/// to noise) exactly when stopping immediately is not preferable. In the stop
/// region the gap is identically zero.
pub fn immediate_stop_gap(x0: f64, eq: &HabitEquilibrium, cfg: &McConfig) -> Result<McEstimate> {
    if !(x0 > 0.0) {
        return Err(Error::Domain(format!("x0 must be positive, got {x0}")));
    }
    if x0 >= eq.x_star {
        return Ok(McEstimate { mean: 0.0, stderr: 0.0, n: cfg.paths, truncated_fraction: 0.0 });
    }
    let e = eq.clone();
    let est = simulate_stopped_payoff(
        x0,
        x0,
        &Control::Constant(eq.theta_star),
        (0.0, eq.x_star),
        move |x, y| payoff_g(x, y, &e.prefs, &e.habit),
        &eq.market,
        cfg,
    )?;
    Ok(McEstimate {
        mean: est.mean - eq.payoff(x0, x0),
        stderr: est.stderr,
        n: est.n,
        truncated_fraction: est.truncated_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::habit::{HabitSpec, PreferenceParams};

    // fast-market reference: upward log-drift, so every path stops quickly
    fn fast_eq() -> HabitEquilibrium {
        HabitEquilibrium::solve(
            MarketParams::new(0.2, 0.2, 0.1).unwrap(),
            PreferenceParams::new(0.7, 0.7).unwrap(),
            HabitSpec::linear(0.15).unwrap(),
        )
        .unwrap()
    }

    fn cfg(paths: usize, dt: f64, seed: u64) -> McConfig {
        McConfig::new(paths, dt, seed, McConfig::default_t_max(0.1), false).unwrap()
    }

    fn stopped(eq: &HabitEquilibrium, x0: f64, c: &McConfig) -> McEstimate {
        let e = eq.clone();
        simulate_stopped_payoff(
            x0,
            x0,
            &Control::Constant(eq.theta_star),
            (0.0, eq.x_star),
            move |x, y| payoff_g(x, y, &e.prefs, &e.habit),
            &eq.market,
            c,
        )
        .unwrap()
    }

    #[test]
    fn normal_stream_statistics_and_determinism() {
        let mut rng = NormalStream::new(7, 3);
        let n = 100_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let z = rng.normal(i);
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean = {mean}");
        assert!((var - 1.0).abs() < 0.02, "var = {var}");

        // out-of-order access reproduces the same draws
        let mut a = NormalStream::new(7, 3);
        let mut b = NormalStream::new(7, 3);
        let fwd: Vec<f64> = (0..10).map(|i| a.normal(i)).collect();
        let rev: Vec<f64> = (0..10).rev().map(|i| b.normal(i)).collect();
        for i in 0..10 {
            assert_eq!(fwd[i], rev[9 - i]);
        }
        // different paths decorrelate
        let mut c = NormalStream::new(7, 4);
        assert_ne!(a.normal(0), c.normal(0));
    }

    #[test]
    fn tree_sum_matches_naive() {
        let v: Vec<f64> = (1..=1000).map(|i| 1.0 / i as f64).collect();
        let naive: f64 = v.iter().sum();
        assert!((tree_sum(&v) - naive).abs() < 1e-12);
        assert_eq!(tree_sum(&[]), 0.0);
        assert_eq!(tree_sum(&[2.5]), 2.5);
    }

    #[test]
    fn boundary_start_is_exact() {
        let eq = fast_eq();
        let c = cfg(1000, 1e-3, 1);
        let est = stopped(&eq, eq.x_star, &c);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.n, 1000);
        assert!((est.mean - eq.payoff(eq.x_star, eq.x_star)).abs() < 1e-15);
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let eq = fast_eq();
        let c = cfg(2000, 1e-3, 42);
        let a = stopped(&eq, 1.0, &c);
        let b = stopped(&eq, 1.0, &c);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        let c2 = cfg(2000, 1e-3, 43);
        let d = stopped(&eq, 1.0, &c2);
        assert_ne!(a.mean.to_bits(), d.mean.to_bits());
    }

    #[test]
    fn stopped_payoff_matches_closed_form() {
        let eq = fast_eq();
        let c = cfg(20_000, 1e-3, 42);
        assert!((eq.x_star - 6.4223).abs() < 2e-3, "x* = {}", eq.x_star);
        for &x0 in &[0.5, 1.0, 3.0] {
            let est = stopped(&eq, x0, &c);
            let target = eq.aux_f(x0, x0);
            let tol = (4.0 * est.stderr).max(5e-3);
            assert!(
                (est.mean - target).abs() < tol,
                "x0 = {x0}: {} vs {target} (stderr {})",
                est.mean,
                est.stderr
            );
            assert!(est.truncated_fraction < 1e-3);
        }
    }

    #[test]
    fn bridge_correction_raises_the_estimate() {
        // earlier detection of crossings means less discounting on average
        let eq = fast_eq();
        let mut c = cfg(20_000, 4e-3, 42);
        let plain = stopped(&eq, 1.0, &c);
        c.bridge_correction = true;
        let bridged = stopped(&eq, 1.0, &c);
        assert!(bridged.mean > plain.mean);
        // and moves toward the closed form at a coarse step
        let target = eq.aux_f(1.0, 1.0);
        assert!((bridged.mean - target).abs() < (plain.mean - target).abs() + 2e-3);
    }

    #[test]
    fn discount_scaling_decreases_estimate() {
        let eq = fast_eq();
        let c = cfg(5000, 1e-3, 42);
        let base = stopped(&eq, 1.0, &c);
        let m2 = MarketParams::new(0.2, 0.2, 0.2).unwrap();
        let eq2 = HabitEquilibrium::solve_locked(eq.theta_star, m2, eq.prefs, eq.habit.clone()).unwrap();
        // same threshold so only the discounting changes
        let e = eq.clone();
        let c2 = McConfig::new(5000, 1e-3, 42, McConfig::default_t_max(0.2), false).unwrap();
        let est2 = simulate_stopped_payoff(
            1.0,
            1.0,
            &Control::Constant(eq.theta_star),
            (0.0, eq.x_star),
            move |x, y| payoff_g(x, y, &e.prefs, &e.habit),
            &eq2.market,
            &c2,
        )
        .unwrap();
        assert!(est2.mean < base.mean, "{} vs {}", est2.mean, base.mean);
    }

    #[test]
    fn stderr_halves_when_paths_quadruple() {
        let eq = fast_eq();
        let a = stopped(&eq, 1.0, &cfg(4000, 2e-3, 42));
        let b = stopped(&eq, 1.0, &cfg(16_000, 2e-3, 42));
        let ratio = a.stderr / b.stderr;
        assert!((1.6..=2.4).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn dt_refinement_stays_within_combined_error() {
        let eq = fast_eq();
        let coarse = stopped(&eq, 1.0, &cfg(20_000, 4e-3, 42));
        let fine = stopped(&eq, 1.0, &cfg(20_000, 1e-3, 42));
        let combined = (coarse.stderr.powi(2) + fine.stderr.powi(2)).sqrt();
        assert!(
            (coarse.mean - fine.mean).abs() < 3.0 * combined + 2e-3,
            "{} vs {} (combined {combined})",
            coarse.mean,
            fine.mean
        );
    }

    #[test]
    fn state_dependent_control_reduces_to_constant() {
        let eq = fast_eq();
        let c = cfg(10_000, 1e-3, 42);
        let theta = eq.theta_star;
        let e = eq.clone();
        let est = simulate_stopped_payoff(
            1.0,
            1.0,
            &Control::StateDependent(Arc::new(move |_| theta)),
            (0.0, eq.x_star),
            move |x, y| payoff_g(x, y, &e.prefs, &e.habit),
            &eq.market,
            &c,
        )
        .unwrap();
        let target = eq.aux_f(1.0, 1.0);
        assert!((est.mean - target).abs() < (4.0 * est.stderr).max(6e-3));
    }

    #[test]
    fn control_probe_zero_at_equilibrium_negative_when_doubled() {
        let eq = fast_eq();
        let c = cfg(20_000, 1e-3, 42);
        let eps = default_eps_list();
        let at_eq = control_perturbation_probe(1.0, &eq, eq.theta_star, &eps, &c).unwrap();
        assert!(
            at_eq.intercept.abs() < 4.0 * at_eq.intercept_stderr + 1e-3,
            "intercept {} +- {}",
            at_eq.intercept,
            at_eq.intercept_stderr
        );
        let doubled = control_perturbation_probe(1.0, &eq, 2.0 * eq.theta_star, &eps, &c).unwrap();
        assert!(doubled.intercept < 0.0, "intercept {}", doubled.intercept);
        // analytic generator under the doubled control as the oracle
        let u = 2.0 * eq.theta_star;
        let (x, y) = (1.0, 1.0);
        let (f, fx, fxx) = (
            eq.aux_f(x, y),
            eq.aux_f_dx(x, y),
            eq.aux_f_dxx(x, y),
        );
        let m = eq.market;
        let oracle = -m.beta * f
            + m.mu * u * x * fx
            + 0.5 * m.sigma * m.sigma * u * u * x * x * fxx;
        assert!(oracle < 0.0);
        assert!(
            (doubled.intercept - oracle).abs() < 4.0 * doubled.intercept_stderr + 5e-3,
            "intercept {} vs oracle {oracle} (stderr {})",
            doubled.intercept,
            doubled.intercept_stderr
        );
    }

    #[test]
    fn stop_delay_probe_signs() {
        let eq = fast_eq();
        let c = cfg(20_000, 1e-3, 42);
        let eps = default_eps_list();
        // inside the continuation region the delay is costless to first order
        let inside = stop_delay_probe(1.0, &eq, &eps, &c).unwrap();
        assert!(
            inside.intercept.abs() < 4.0 * inside.intercept_stderr + 1e-3,
            "intercept {} +- {}",
            inside.intercept,
            inside.intercept_stderr
        );
        // in the stop region the delay is strictly costly, matching the
        // generator of the payoff; smaller windows keep the slope-vs-eps
        // relation in its linear regime here
        let x0 = 8.0;
        let eps_small = [0.05, 0.025, 0.0125, 0.00625];
        let delayed = stop_delay_probe(x0, &eq, &eps_small, &c).unwrap();
        assert!(delayed.intercept < 0.0);
        let (g, gx, gxx) = (
            eq.payoff(x0, x0),
            crate::habit::payoff_g_dx(x0, x0, &eq.prefs, &eq.habit),
            crate::habit::payoff_g_dxx(x0, x0, &eq.prefs, &eq.habit),
        );
        let m = eq.market;
        let th = eq.theta_star;
        let oracle = -m.beta * g
            + m.mu * th * x0 * gx
            + 0.5 * m.sigma * m.sigma * th * th * x0 * x0 * gxx;
        assert!(
            (delayed.intercept - oracle).abs() < 4.0 * delayed.intercept_stderr + 0.02,
            "intercept {} vs oracle {oracle}",
            delayed.intercept
        );
    }

    #[test]
    fn immediate_stop_gap_signs() {
        let eq = fast_eq();
        let c = cfg(10_000, 1e-3, 42);
        let in_d = immediate_stop_gap(8.0, &eq, &c).unwrap();
        assert_eq!(in_d.mean, 0.0);
        assert_eq!(in_d.stderr, 0.0);
        let in_c = immediate_stop_gap(1.0, &eq, &c).unwrap();
        assert!(in_c.mean > 3.0 * in_c.stderr, "gap {} +- {}", in_c.mean, in_c.stderr);
        let target = eq.aux_f(1.0, 1.0) - eq.payoff(1.0, 1.0);
        assert!((in_c.mean - target).abs() < (4.0 * in_c.stderr).max(6e-3));
    }

    #[test]
    fn truncation_accounting() {
        // a market drifting away from the barrier leaves most paths unstopped;
        // they are counted, not silently dropped
        let m = MarketParams::new(0.05, 0.3, 0.1).unwrap();
        let eq = HabitEquilibrium::solve(
            m,
            PreferenceParams::new(0.7, 0.7).unwrap(),
            HabitSpec::linear(0.15).unwrap(),
        )
        .unwrap();
        let c = McConfig::new(2000, 1e-2, 42, McConfig::default_t_max(0.1), false).unwrap();
        let est = stopped(&eq, 1.0, &c);
        assert!(est.truncated_fraction > 0.3);
        assert!(est.truncated_fraction < 0.9);
        assert!(est.mean > 0.0);
    }

    #[test]
    fn domain_errors() {
        let eq = fast_eq();
        let c = cfg(100, 1e-3, 1);
        let e = eq.clone();
        assert!(simulate_stopped_payoff(
            10.0,
            1.0,
            &Control::Constant(1.0),
            (0.0, eq.x_star),
            move |x, y| payoff_g(x, y, &e.prefs, &e.habit),
            &eq.market,
            &c
        )
        .is_err());
        assert!(control_perturbation_probe(1.0, &eq, -1.0, &default_eps_list(), &c).is_err());
        assert!(control_perturbation_probe(1.0, &eq, 1.0, &[0.1, 0.2], &c).is_err());
        assert!(stop_delay_probe(eq.x_star, &eq, &default_eps_list(), &c).is_err());
        assert!(McConfig::new(0, 1e-3, 1, 10.0, false).is_err());
        assert!(McConfig::new(10, -1.0, 1, 10.0, false).is_err());
    }

    #[test]
    fn wls_intercept_recovers_linear_trend() {
        let pts: Vec<ProbePoint> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&e| ProbePoint { eps: e, slope: -0.5 + 2.0 * e, stderr: 0.01 })
            .collect();
        let (a, se) = wls_intercept(&pts).unwrap();
        assert!((a - (-0.5)).abs() < 1e-12);
        assert!(se > 0.0);
    }
}
