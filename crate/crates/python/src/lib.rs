//! Python bindings: the solved equilibrium bundle with its verifier and
//! Monte Carlo probes, plus the ambiguity exclusion check.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use eqstop_core::ambiguity::{self, Belief, RateAtom};
use eqstop_core::diffusion::{alpha_exponent, Branch, MarketParams};
use eqstop_core::habit::{
    check_sufficient_conditions, check_value_dominance, sweep_threshold, ConditionReport,
    HabitEquilibrium, HabitSpec, PreferenceParams, SweepAxis,
};
use eqstop_core::mc::{
    control_perturbation_probe, default_eps_list, immediate_stop_gap, simulate_stopped_payoff,
    stop_delay_probe, Control, McConfig, McEstimate, ProbeResult,
};
use eqstop_core::verifier::{verify_system, CandidateProblem};

fn err(e: eqstop_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn estimate_dict(py: Python<'_>, e: &McEstimate) -> PyResult<Py<PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("mean", e.mean)?;
    d.set_item("stderr", e.stderr)?;
    d.set_item("n", e.n)?;
    d.set_item("truncated_fraction", e.truncated_fraction)?;
    Ok(d.unbind())
}

fn probe_dict(py: Python<'_>, r: &ProbeResult) -> PyResult<Py<PyDict>> {
    let d = PyDict::new_bound(py);
    let pts: Vec<(f64, f64, f64)> = r.points.iter().map(|p| (p.eps, p.slope, p.stderr)).collect();
    d.set_item("points", pts)?;
    d.set_item("intercept", r.intercept)?;
    d.set_item("intercept_stderr", r.intercept_stderr)?;
    Ok(d.unbind())
}

fn conditions_dict(py: Python<'_>, r: &ConditionReport) -> PyResult<Py<PyDict>> {
    let d = PyDict::new_bound(py);
    let items = PyList::empty_bound(py);
    for i in &r.items {
        let e = PyDict::new_bound(py);
        e.set_item("id", &i.id)?;
        e.set_item("witness", i.witness)?;
        e.set_item("worst", i.worst)?;
        e.set_item("pass", i.pass)?;
        items.append(e)?;
    }
    d.set_item("items", items)?;
    d.set_item("overall", r.overall)?;
    Ok(d.unbind())
}

fn mc_config(paths: usize, dt: f64, seed: u64, t_max: Option<f64>, bridge: bool, beta: f64) -> PyResult<McConfig> {
    McConfig::new(paths, dt, seed, t_max.unwrap_or_else(|| McConfig::default_t_max(beta)), bridge)
        .map_err(err)
}

/// A solved constant-proportion equilibrium of the investment-withdrawal model.
#[pyclass(name = "Equilibrium")]
struct PyEquilibrium {
    inner: HabitEquilibrium,
}

#[pymethods]
impl PyEquilibrium {
    #[new]
    #[pyo3(signature = (mu=0.05, sigma=0.3, beta=0.1, a=0.7, k=0.7, habit_slope=0.15, theta_lock=None))]
    fn new(
        mu: f64,
        sigma: f64,
        beta: f64,
        a: f64,
        k: f64,
        habit_slope: f64,
        theta_lock: Option<f64>,
    ) -> PyResult<Self> {
        let market = MarketParams::new(mu, sigma, beta).map_err(err)?;
        let prefs = PreferenceParams::new(a, k).map_err(err)?;
        let habit = HabitSpec::linear(habit_slope).map_err(err)?;
        let inner = match theta_lock {
            None => HabitEquilibrium::solve(market, prefs, habit),
            Some(t) => HabitEquilibrium::solve_locked(t, market, prefs, habit),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn theta_star(&self) -> f64 {
        self.inner.theta_star
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn x_star(&self) -> f64 {
        self.inner.x_star
    }

    #[getter]
    fn x0_star(&self) -> f64 {
        self.inner.x0_star
    }

    fn payoff(&self, x: f64, y: f64) -> f64 {
        self.inner.payoff(x, y)
    }

    fn aux_f(&self, x: f64, y: f64) -> f64 {
        self.inner.aux_f(x, y)
    }

    fn slope_bound(&self) -> f64 {
        self.inner.slope_bound()
    }

    #[pyo3(signature = (grid_n=400))]
    fn value_dominance(&self, py: Python<'_>, grid_n: usize) -> PyResult<Py<PyDict>> {
        let rep = check_value_dominance(&self.inner, grid_n).map_err(err)?;
        conditions_dict(py, &rep)
    }

    fn sufficient_conditions(&self, py: Python<'_>) -> PyResult<Py<PyDict>> {
        conditions_dict(py, &check_sufficient_conditions(&self.inner))
    }

    /// Verify the stationary generator system; boundary_shift rebuilds the
    /// auxiliary function from a displaced continuation boundary.
    #[pyo3(signature = (boundary_shift=0.0, grid_c=400, grid_d=400, y_grid=50, tol=1e-6))]
    fn verify(
        &self,
        py: Python<'_>,
        boundary_shift: f64,
        grid_c: usize,
        grid_d: usize,
        y_grid: usize,
        tol: f64,
    ) -> PyResult<Py<PyDict>> {
        let problem =
            CandidateProblem::from_habit_with_boundary(&self.inner, self.inner.x_star + boundary_shift)
                .map_err(err)?;
        let rep = verify_system(&problem, grid_c, grid_d, y_grid, tol).map_err(err)?;
        let d = PyDict::new_bound(py);
        let conds = PyList::empty_bound(py);
        for c in &rep.conditions {
            let e = PyDict::new_bound(py);
            e.set_item("id", &c.id)?;
            e.set_item("worst", c.worst)?;
            e.set_item("at", c.at)?;
            e.set_item("pass", c.pass)?;
            conds.append(e)?;
        }
        d.set_item("conditions", conds)?;
        d.set_item("overall", rep.overall)?;
        d.set_item("unbounded_hamiltonian", rep.unbounded_hamiltonian)?;
        d.set_item("x_star", rep.x_star)?;
        d.set_item("d_truncation", rep.d_truncation)?;
        Ok(d.unbind())
    }

    /// Monte Carlo estimate of the stopped payoff from (x0, y).
    #[pyo3(signature = (x0, y=None, paths=100_000, dt=1e-3, seed=42, t_max=None, bridge_correction=false))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        py: Python<'_>,
        x0: f64,
        y: Option<f64>,
        paths: usize,
        dt: f64,
        seed: u64,
        t_max: Option<f64>,
        bridge_correction: bool,
    ) -> PyResult<Py<PyDict>> {
        let cfg = mc_config(paths, dt, seed, t_max, bridge_correction, self.inner.market.beta)?;
        let e = self.inner.clone();
        let est = simulate_stopped_payoff(
            x0,
            y.unwrap_or(x0),
            &Control::Constant(self.inner.theta_star),
            (0.0, self.inner.x_star),
            move |x, yy| e.payoff(x, yy),
            &self.inner.market,
            &cfg,
        )
        .map_err(err)?;
        estimate_dict(py, &est)
    }

    /// Slope of the value under a short constant-control deviation.
    #[pyo3(signature = (x0, u, eps_list=None, paths=100_000, dt=1e-3, seed=42))]
    #[allow(clippy::too_many_arguments)]
    fn probe_control(
        &self,
        py: Python<'_>,
        x0: f64,
        u: f64,
        eps_list: Option<Vec<f64>>,
        paths: usize,
        dt: f64,
        seed: u64,
    ) -> PyResult<Py<PyDict>> {
        let cfg = mc_config(paths, dt, seed, None, false, self.inner.market.beta)?;
        let eps = eps_list.unwrap_or_else(default_eps_list);
        let res = control_perturbation_probe(x0, &self.inner, u, &eps, &cfg).map_err(err)?;
        probe_dict(py, &res)
    }

    /// Slope of the value under a short stopping delay.
    #[pyo3(signature = (x0, eps_list=None, paths=100_000, dt=1e-3, seed=42))]
    fn probe_stop(
        &self,
        py: Python<'_>,
        x0: f64,
        eps_list: Option<Vec<f64>>,
        paths: usize,
        dt: f64,
        seed: u64,
    ) -> PyResult<Py<PyDict>> {
        let cfg = mc_config(paths, dt, seed, None, false, self.inner.market.beta)?;
        let eps = eps_list.unwrap_or_else(default_eps_list);
        let res = stop_delay_probe(x0, &self.inner, &eps, &cfg).map_err(err)?;
        probe_dict(py, &res)
    }

    /// Monte Carlo estimate of J(x0) - g(x0, x0).
    #[pyo3(signature = (x0, paths=100_000, dt=1e-3, seed=42))]
    fn stop_gap(
        &self,
        py: Python<'_>,
        x0: f64,
        paths: usize,
        dt: f64,
        seed: u64,
    ) -> PyResult<Py<PyDict>> {
        let cfg = mc_config(paths, dt, seed, None, false, self.inner.market.beta)?;
        let est = immediate_stop_gap(x0, &self.inner, &cfg).map_err(err)?;
        estimate_dict(py, &est)
    }
}

/// Root of the characteristic quadratic for a constant proportion.
#[pyfunction(name = "alpha_exponent")]
#[pyo3(signature = (theta, mu, sigma, beta, branch="plus"))]
fn py_alpha_exponent(theta: f64, mu: f64, sigma: f64, beta: f64, branch: &str) -> PyResult<f64> {
    let market = MarketParams::new(mu, sigma, beta).map_err(err)?;
    let b = match branch {
        "plus" => Branch::Plus,
        "minus" => Branch::Minus,
        other => return Err(PyValueError::new_err(format!("unknown branch {other:?}"))),
    };
    alpha_exponent(theta, &market, b).map_err(err)
}

fn belief_from_atoms(atoms: Vec<(f64, f64)>) -> PyResult<Belief> {
    let atoms = atoms.into_iter().map(|(rate, weight)| RateAtom { rate, weight }).collect();
    let (b, _) = Belief::from_atoms_renormalized(atoms).map_err(err)?;
    Ok(b)
}

/// Quadrature atoms of the Gamma-rate belief with mean discount (1+a t)^(-b/a).
#[pyfunction]
fn hyperbolic_atoms(a: f64, b: f64) -> PyResult<Vec<(f64, f64)>> {
    let belief = Belief::generalized_hyperbolic(a, b).map_err(err)?;
    Ok(belief.atoms().iter().map(|x| (x.rate, x.weight)).collect())
}

/// Mean discount factor of a belief given as (rate, weight) atoms.
#[pyfunction]
fn mean_discount(atoms: Vec<(f64, f64)>, t: f64) -> PyResult<f64> {
    ambiguity::mean_discount(&belief_from_atoms(atoms)?, t).map_err(err)
}

/// Check whether a constant proportion survives discount ambiguity.
#[pyfunction]
fn exclude(py: Python<'_>, theta: f64, mu: f64, sigma: f64, atoms: Vec<(f64, f64)>) -> PyResult<Py<PyDict>> {
    let rep = ambiguity::exclusion_check(theta, &belief_from_atoms(atoms)?, mu, sigma).map_err(err)?;
    let d = PyDict::new_bound(py);
    d.set_item("singleton", rep.singleton)?;
    d.set_item("excluded", rep.excluded)?;
    d.set_item("constant_equilibrium_possible", !rep.excluded)?;
    d.set_item("boundary_r", rep.boundary_r)?;
    d.set_item("theta_at_zero", rep.theta_at_zero)?;
    d.set_item("theta_at_r", rep.theta_at_r)?;
    d.set_item("endpoint_gap", rep.endpoint_gap)?;
    d.set_item("grid_range", rep.grid_range)?;
    d.set_item("stop_region_lower_bound", rep.stop_region_lower_bound)?;
    d.set_item("degenerate_points", rep.degenerate_points)?;
    Ok(d.unbind())
}

/// Sweep mu or sigma and return the solved bundle per grid point.
#[pyfunction]
#[pyo3(signature = (axis, start, stop, steps, mu=0.05, sigma=0.3, beta=0.1, a=0.7, k=0.7, habit_slope=0.15))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    axis: &str,
    start: f64,
    stop: f64,
    steps: usize,
    mu: f64,
    sigma: f64,
    beta: f64,
    a: f64,
    k: f64,
    habit_slope: f64,
) -> PyResult<Py<PyList>> {
    let axis = match axis {
        "mu" => SweepAxis::Mu,
        "sigma" => SweepAxis::Sigma,
        other => return Err(PyValueError::new_err(format!("unknown axis {other:?}"))),
    };
    let market = MarketParams::new(mu, sigma, beta).map_err(err)?;
    let prefs = PreferenceParams::new(a, k).map_err(err)?;
    let habit = HabitSpec::linear(habit_slope).map_err(err)?;
    let rows = sweep_threshold(axis, start, stop, steps, &market, &prefs, &habit).map_err(err)?;
    let list = PyList::empty_bound(py);
    for r in rows {
        let d = PyDict::new_bound(py);
        d.set_item("param", r.param)?;
        d.set_item("theta_star", r.theta_star)?;
        d.set_item("alpha", r.alpha)?;
        d.set_item("x_star", r.x_star)?;
        d.set_item("x0_star", r.x0_star)?;
        d.set_item("M_bound", r.m_bound)?;
        list.append(d)?;
    }
    Ok(list.unbind())
}

#[pymodule]
fn eqstop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEquilibrium>()?;
    m.add_function(wrap_pyfunction!(py_alpha_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(hyperbolic_atoms, m)?)?;
    m.add_function(wrap_pyfunction!(mean_discount, m)?)?;
    m.add_function(wrap_pyfunction!(exclude, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    let _ = m.add("DEFAULT_EPS_LIST", default_eps_list());
    Ok(())
}
