//! End-to-end acceptance checks for the reference parameter set
//! (mu = 0.05, sigma = 0.3, beta = 0.1, a = 0.7, k = 0.7, linear habit).
//! Each check prints a single pass/fail line; two checks are expected to
//! fail and document genuine gaps between the reported reference values and
//! what the model actually yields (see the assertions' messages).

use std::sync::Mutex;
use std::time::Instant;

// The timed criteria share one core in CI; serialize them so each runtime
// budget measures the work itself rather than scheduler contention.
static TIMED: Mutex<()> = Mutex::new(());

use eqstop_core::ambiguity::{exclusion_check, theta_tilde, candidate_boundary_r, Belief};
use eqstop_core::diffusion::{alpha_exponent, Branch, MarketParams};
use eqstop_core::habit::{
    check_value_dominance, equilibrium_theta, smooth_fit_residual, solve_threshold,
    sweep_threshold, HabitEquilibrium, HabitSpec, PreferenceParams, SweepAxis,
};
use eqstop_core::mc::{
    control_perturbation_probe, default_eps_list, simulate_stopped_payoff, stop_delay_probe,
    Control, McConfig,
};
use eqstop_core::verifier::{verify_system, CandidateProblem, GridSpec};

fn market() -> MarketParams {
    MarketParams::new(0.05, 0.3, 0.1).unwrap()
}

fn prefs() -> PreferenceParams {
    PreferenceParams::new(0.7, 0.7).unwrap()
}

fn solved(slope: f64) -> HabitEquilibrium {
    HabitEquilibrium::solve(market(), prefs(), HabitSpec::linear(slope).unwrap()).unwrap()
}

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_01_equilibrium_proportion() {
    let m = market();
    let theta = equilibrium_theta(&m);
    let alpha = alpha_exponent(theta, &m, Branch::Plus).unwrap();
    let fixed_point = (theta - m.mu / (m.sigma * m.sigma * (1.0 - alpha))).abs();
    let pass = (theta - 4.5556).abs() < 1e-3 && fixed_point < 1e-10;
    report(1, pass, &format!("theta* = {theta}, fixed-point residual {fixed_point:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_02_benchmark_thresholds() {
    let m = market();
    let p = prefs();
    let alpha = alpha_exponent(equilibrium_theta(&m), &m, Branch::Plus).unwrap();
    let x0 = solve_threshold(alpha, &p, &HabitSpec::zero()).unwrap();
    let r0 = smooth_fit_residual(x0, alpha, &p, &HabitSpec::zero()).abs();
    let alpha1 = alpha_exponent(1.0, &m, Branch::Plus).unwrap();
    let h = HabitSpec::linear(0.15).unwrap();
    let x1 = solve_threshold(alpha1, &p, &h).unwrap();
    let r1 = smooth_fit_residual(x1, alpha1, &p, &h).abs();
    let pass = (x0 - 2.1090).abs() < 1e-3
        && (x1 - 1.9436).abs() < 1e-3
        && r0 < 1e-10
        && r1 < 1e-10;
    report(2, pass, &format!("x0* = {x0}, x1* = {x1}, residuals {r0:.2e}/{r1:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_03_habit_threshold() {
    let eq = solved(0.15);
    let res = smooth_fit_residual(eq.x_star, eq.alpha, &eq.prefs, &eq.habit).abs();
    let rel = (eq.x_star / 2.7419 - 1.0).abs();
    let pass = res < 1e-10 && rel < 0.02;
    report(3, pass, &format!("x* = {}, residual {res:.2e}, {:.2}% from 2.7419", eq.x_star, rel * 100.0));
    assert!(pass);
}

#[test]
fn criterion_04_dominance_trichotomy() {
    let _lock = TIMED.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let ok15 = check_value_dominance(&solved(0.15), 400).unwrap().overall;
    let rep40 = check_value_dominance(&solved(0.4), 400).unwrap();
    let rep60 = check_value_dominance(&solved(0.6), 400).unwrap();
    let neg60 = !rep60.overall && rep60.items[0].worst < 0.0;
    let pass = ok15 && rep40.overall && neg60 && t.elapsed().as_secs_f64() < 1.0;
    report(
        4,
        pass,
        &format!(
            "slope 0.15 pass = {ok15}, slope 0.4 worst = {:.3e} (pass = {}), slope 0.6 negative witness = {neg60}",
            rep40.items[0].worst, rep40.overall
        ),
    );
    // Expected to FAIL: at slope 0.4 the dominance function solved at its own
    // threshold dips to about -1.8e-4 near the boundary, far beyond any
    // rounding tolerance, so the reference pass for 0.4 is not reproducible.
    // The 0.15 and 0.6 verdicts match.
    assert!(pass, "slope-0.4 dominance does not hold at the solved threshold");
}

#[test]
fn criterion_05_slope_bound() {
    let eq = solved(0.15);
    let m = eq.slope_bound();
    let pass = (m - 0.204).abs() < 0.005 && 0.15 < m && m < 0.4;
    report(5, pass, &format!("M = {m}"));
    assert!(pass);
}

#[test]
fn criterion_06_verifier_trichotomy() {
    let _lock = TIMED.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let g = GridSpec::default();
    let run = |p: &CandidateProblem, scale: usize| {
        verify_system(p, g.grid_c * scale, g.grid_d * scale, g.y_grid * scale, g.tol).unwrap()
    };
    let p15 = CandidateProblem::from_habit_equilibrium(&solved(0.15)).unwrap();
    let p60 = CandidateProblem::from_habit_equilibrium(&solved(0.6)).unwrap();
    let eq = solved(0.15);
    let pss = CandidateProblem::from_habit_with_boundary(&eq, eq.x_star + 0.5).unwrap();
    let (r15, r60, rss) = (run(&p15, 1), run(&p60, 1), run(&pss, 1));
    let trichotomy = r15.overall
        && !r60.overall
        && !r60.condition("G6").unwrap().pass
        && r60.conditions.iter().filter(|c| !c.pass).count() == 1
        && !rss.overall
        && !rss.condition("SS").unwrap().pass;
    let mut stable = true;
    for (p, r) in [(&p15, &r15), (&p60, &r60), (&pss, &rss)] {
        let fine = run(p, 2);
        for (a, b) in r.conditions.iter().zip(&fine.conditions) {
            stable &= a.pass == b.pass;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = trichotomy && stable && secs < 5.0;
    report(6, pass, &format!("trichotomy = {trichotomy}, refinement-stable = {stable}, {secs:.2}s"));
    assert!(pass);
}

#[test]
fn criterion_07_monte_carlo_representation() {
    let _lock = TIMED.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let eq = solved(0.15);
    let cfg = McConfig::new(100_000, 1e-3, 42, McConfig::default_t_max(0.1), false).unwrap();
    let e = eq.clone();
    let est = simulate_stopped_payoff(
        1.0,
        1.0,
        &Control::Constant(eq.theta_star),
        (0.0, eq.x_star),
        move |x, y| e.payoff(x, y),
        &eq.market,
        &cfg,
    )
    .unwrap();
    let target = eq.aux_f(1.0, 1.0);
    let dev = (est.mean - target).abs();
    let secs = t.elapsed().as_secs_f64();
    let pass = dev < 3.0 * est.stderr && est.stderr < 0.01 && secs < 60.0;
    report(
        7,
        pass,
        &format!(
            "estimate {} vs closed form {target} ({:.2} stderr away, stderr {:.2e}), {secs:.1}s",
            est.mean,
            dev / est.stderr,
            est.stderr
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_perturbation_probes() {
    let _lock = TIMED.lock().unwrap_or_else(|e| e.into_inner());
    let eq = solved(0.15);
    let cfg = McConfig::new(100_000, 1e-3, 42, McConfig::default_t_max(0.1), false).unwrap();
    let eps = default_eps_list();

    let at_eq = control_perturbation_probe(1.0, &eq, eq.theta_star, &eps, &cfg).unwrap();
    let eq_ok = at_eq.intercept.abs() < 3.0 * at_eq.intercept_stderr;

    let u = 2.0 * eq.theta_star;
    let doubled = control_perturbation_probe(1.0, &eq, u, &eps, &cfg).unwrap();
    let m = eq.market;
    let oracle = -m.beta * eq.aux_f(1.0, 1.0)
        + m.mu * u * eq.aux_f_dx(1.0, 1.0)
        + 0.5 * m.sigma * m.sigma * u * u * eq.aux_f_dxx(1.0, 1.0);
    let dbl_ok =
        doubled.intercept < 0.0 && (doubled.intercept - oracle).abs() < 3.0 * doubled.intercept_stderr;

    // The diffusion scale sigma*theta*x ~ 4 smears the delay window across
    // the boundary kink, so the stop-delay probe needs much smaller windows
    // (and correspondingly more paths) than the control probe.
    let delay_cfg =
        McConfig::new(400_000, 1e-4, 42, McConfig::default_t_max(0.1), false).unwrap();
    let delay_eps = [0.002, 0.001, 0.0005, 0.00025];
    let delayed = stop_delay_probe(3.0, &eq, &delay_eps, &delay_cfg).unwrap();
    let delay_ok = (delayed.intercept - (-1.0695)).abs() < 3.0 * delayed.intercept_stderr;

    let pass = eq_ok && dbl_ok && delay_ok;
    report(
        8,
        pass,
        &format!(
            "at theta*: {:.4} +- {:.4}; doubled: {:.4} vs {oracle:.4} +- {:.4}; delay: {:.4} vs -1.0695 +- {:.4}",
            at_eq.intercept,
            at_eq.intercept_stderr,
            doubled.intercept,
            doubled.intercept_stderr,
            delayed.intercept,
            delayed.intercept_stderr
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_ambiguity_exclusion() {
    let (mu, sigma) = (0.05, 0.3);
    let two = Belief::two_point(0.5, 0.05, 0.15).unwrap();
    let rep = exclusion_check(1.0, &two, mu, sigma).unwrap();
    let gap = rep.endpoint_gap.unwrap();
    let gap_ok = (gap - 0.4069).abs() < 1e-3;

    let single = Belief::singleton(0.1).unwrap();
    let theta = equilibrium_theta(&market());
    let r = candidate_boundary_r(theta, &single, mu, sigma).unwrap();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 1..100 {
        let v = theta_tilde(r * i as f64 / 100.0, theta, r, &single, mu, sigma).unwrap();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let srep = exclusion_check(theta, &single, mu, sigma).unwrap();
    let single_ok = hi - lo < 1e-9 && !srep.excluded;

    let pass = gap_ok && rep.excluded && single_ok;
    report(
        9,
        pass,
        &format!(
            "two-point gap = {gap} (excluded = {}), singleton range = {:.2e} (excluded = {})",
            rep.excluded,
            hi - lo,
            srep.excluded
        ),
    );
    // Expected to FAIL on the gap value: one support rate equals mu * theta,
    // which puts a unit exponent in the candidate value; the curvature
    // coefficient of the dominant small-x term then vanishes identically and
    // the 0+ endpoint diverges to -infinity instead of the reference -0.7206
    // (that number comes from plugging the larger of the two exponents into
    // the endpoint formula, which the small-x asymptotics do not justify).
    // Exclusion itself still holds — the gap is infinite, not 0.4069.
    assert!(pass, "endpoint gap diverges for this belief; exclusion verdicts are correct");
}

#[test]
fn criterion_10_comparative_statics() {
    let _lock = TIMED.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let h = HabitSpec::linear(0.15).unwrap();
    let sig = sweep_threshold(SweepAxis::Sigma, 0.2, 0.5, 25, &market(), &prefs(), &h).unwrap();
    let dec = sig.windows(2).all(|w| w[1].x_star < w[0].x_star);
    let mu = sweep_threshold(SweepAxis::Mu, 0.03, 0.08, 25, &market(), &prefs(), &h).unwrap();
    let inc = mu.windows(2).all(|w| w[1].x_star > w[0].x_star);
    let secs = t.elapsed().as_secs_f64();
    let pass = dec && inc && secs < 2.0;
    report(10, pass, &format!("x* decreasing in sigma = {dec}, increasing in mu = {inc}, {secs:.2}s"));
    assert!(pass);
}
