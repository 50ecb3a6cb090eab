//! Python module `adherence_rmab`.

use adherence_core as core;
use adherence_core::{CohortInitial, InitialSampler, SimConfig, Threshold};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: core::ModelError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn threshold(z: f64) -> PyResult<Threshold> {
    Threshold::new(z).map_err(err)
}

/// One patient type: lapse `p`, recovery `q`, reward `r`, discount `beta`,
/// intervention cost `cost`.
#[pyclass(name = "PatientParams", module = "adherence_rmab", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyPatient {
    inner: core::PatientParams,
}

#[pymethods]
impl PyPatient {
    #[new]
    #[pyo3(signature = (p, q, r, beta, cost = 0.0))]
    fn new(p: f64, q: f64, r: f64, beta: f64, cost: f64) -> PyResult<Self> {
        let inner = core::PatientParams::new(p, q, r, beta).and_then(|m| m.with_cost(cost)).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.p()
    }
    #[getter]
    fn q(&self) -> f64 {
        self.inner.q()
    }
    #[getter]
    fn r(&self) -> f64 {
        self.inner.r()
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta()
    }
    #[getter]
    fn cost(&self) -> f64 {
        self.inner.cost()
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho()
    }
    #[getter]
    fn z_inf(&self) -> f64 {
        self.inner.z_inf()
    }

    fn crossing_time(&self, x: f64, z: f64) -> PyResult<Option<u64>> {
        Ok(self.inner.crossing_time(x, threshold(z)?).finite())
    }

    /// `(F, G)` of the `z`-policy from belief `x`.
    fn threshold_metrics(&self, x: f64, z: f64) -> PyResult<(f64, f64)> {
        let m = self.inner.threshold_metrics(x, threshold(z)?);
        Ok((m.reward, m.work))
    }

    /// `(f, g)` of a one-step deviation at `x`.
    fn marginal_metrics(&self, x: f64, z: f64) -> PyResult<(f64, f64)> {
        let m = self.inner.marginal_metrics(x, threshold(z)?);
        Ok((m.reward, m.work))
    }

    fn mp_metric(&self, x: f64, z: f64) -> PyResult<f64> {
        Ok(self.inner.mp_metric(x, threshold(z)?))
    }

    fn uniform_metrics(&self, z: f64) -> PyResult<(f64, f64)> {
        let m = self.inner.uniform_metrics(threshold(z)?);
        Ok((m.reward, m.work))
    }

    fn avg_metrics(&self, z: f64) -> PyResult<(f64, f64)> {
        let m = self.inner.avg_metrics(threshold(z)?);
        Ok((m.reward_rate, m.work_rate))
    }

    /// Whittle index net of cost.
    fn index(&self, x: f64) -> f64 {
        self.inner.mp_index(x)
    }

    /// Average-criterion priority index.
    fn avg_index(&self, x: f64) -> f64 {
        self.inner.avg_mp_index(x)
    }

    /// Optimal threshold at price `lam`; `-inf` means always active and
    /// `inf` always passive.
    fn optimal_threshold(&self, lam: f64) -> f64 {
        self.inner.optimal_threshold(lam).value()
    }

    fn lambda_max(&self) -> f64 {
        self.inner.lambda_max()
    }

    /// Returns `(passed, discounted_report_json, average_report_json)`.
    #[pyo3(signature = (triples = 200, seed = 20240601))]
    fn verify(&self, triples: usize, seed: u64) -> PyResult<(bool, String, String)> {
        let spec = core::GridSpec { triples, seed, ..core::GridSpec::default() };
        let (d, a) = (self.inner.verify_pcl(&spec), self.inner.verify_apcli(&spec));
        let json = |r: &core::VerificationReport| serde_json::to_string(r).map_err(|e| PyValueError::new_err(e.to_string()));
        Ok((d.passed() && a.passed(), json(&d)?, json(&a)?))
    }

    /// Index at `x` along a grid of lapse probabilities; `(values, passed)`.
    fn sensitivity_p(&self, x: f64, grid: Vec<f64>) -> PyResult<(Vec<f64>, bool)> {
        let r = self.inner.sensitivity_p(x, &grid).map_err(err)?;
        Ok((r.values.clone(), r.passed()))
    }

    /// Index at `x` along a grid of recovery probabilities; `(values, passed)`.
    fn sensitivity_q(&self, x: f64, grid: Vec<f64>) -> PyResult<(Vec<f64>, bool)> {
        let r = self.inner.sensitivity_q(x, &grid).map_err(err)?;
        Ok((r.values.clone(), r.passed()))
    }

    fn __repr__(&self) -> String {
        let m = &self.inner;
        format!("PatientParams(p={}, q={}, r={}, beta={}, cost={})", m.p(), m.q(), m.r(), m.beta(), m.cost())
    }
}

fn expand(types: &[PyPatient], counts: Option<Vec<usize>>) -> PyResult<Vec<core::PatientParams>> {
    let counts = counts.unwrap_or_else(|| vec![1; types.len()]);
    if counts.len() != types.len() {
        return Err(PyValueError::new_err("counts must match the number of patient types"));
    }
    Ok(types.iter().zip(counts).flat_map(|(t, k)| std::iter::repeat_n(t.inner, k)).collect())
}

/// Lagrangian dual bound of a cohort with uniform initial beliefs.
#[pyfunction]
#[pyo3(signature = (types, capacity, counts = None, eps = 1e-6))]
fn dual_bound<'py>(
    py: Python<'py>,
    types: Vec<PyPatient>,
    capacity: usize,
    counts: Option<Vec<usize>>,
    eps: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cohort = expand(&types, counts)?;
    let res = core::dual_bound(&cohort, capacity, eps, &CohortInitial::Uniform).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("lambda_star", res.lambda_star)?;
    d.set_item("bound", res.bound)?;
    d.set_item("bound_at_star", res.bound_at_star)?;
    d.set_item("normalized", res.normalized(cohort.len(), cohort[0].beta()))?;
    d.set_item("iterations", res.iterations)?;
    d.set_item("iteration_cap", res.iteration_cap)?;
    d.set_item("bracket", res.bracket)?;
    d.set_item("mode", format!("{:?}", res.mode))?;
    Ok(d)
}

/// Monte-Carlo value of a policy; `policy` is a name such as `"whittle"`.
#[pyfunction]
#[pyo3(signature = (types, capacity, policy, counts = None, horizon = 300, runs = 200, seed = 2024))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    types: Vec<PyPatient>,
    capacity: usize,
    policy: &str,
    counts: Option<Vec<usize>>,
    horizon: usize,
    runs: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cohort = expand(&types, counts)?;
    let policy: core::Policy = policy.parse().map_err(PyValueError::new_err)?;
    let config = SimConfig { horizon, runs, capacity, seed, policy, initial: InitialSampler::Uniform };
    let res = py.detach(|| core::simulate(&config, &cohort)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("policy", policy.name())?;
    d.set_item("vbar", res.vbar_mean)?;
    d.set_item("stderr", res.vbar_stderr)?;
    d.set_item("mean_active", res.mean_active)?;
    d.set_item("truncation_bias", res.truncation_bias)?;
    Ok(d)
}

/// `(dbar - vbar) / dbar`.
#[pyfunction]
fn relative_gap(vbar: f64, dbar: f64) -> PyResult<f64> {
    core::relative_gap(vbar, dbar).map_err(err)
}

/// Number of instances in the default two-type grid with cohort size `n`.
#[pyfunction]
#[pyo3(signature = (n = 1000))]
fn instance_count(n: usize) -> PyResult<usize> {
    let cfg = core::GridConfig { n, ..core::GridConfig::default() };
    Ok(core::build_instance_grid(&cfg, 0).map_err(err)?.instances.len())
}

#[pymodule]
pub fn adherence_rmab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPatient>()?;
    m.add_function(wrap_pyfunction!(dual_bound, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(relative_gap, m)?)?;
    m.add_function(wrap_pyfunction!(instance_count, m)?)?;
    Ok(())
}
