use pyo3::prelude::*;
use pyo3::types::PyDict;

fn module(py: Python<'_>) -> Bound<'_, PyModule> {
    let m = PyModule::new(py, "pyuwtrust").unwrap();
    pyuwtrust::init(&m).unwrap();
    m
}

#[test]
fn simulate_round_trips_through_python() {
    Python::attach(|py| {
        let m = module(py);
        let cfg = m.getattr("ScenarioConfig").unwrap().call0().unwrap();
        cfg.setattr("n_agents", 16).unwrap();
        cfg.setattr("n_auvs", 3).unwrap();
        cfg.setattr("mission_duration_s", 900.0).unwrap();
        cfg.setattr("warmup_intervals", 2).unwrap();
        let kwargs = PyDict::new(py);
        kwargs.set_item("mode", "Static").unwrap();
        let out = m.getattr("simulate").unwrap().call((&cfg, 4u64), Some(&kwargs)).unwrap();
        let rows = out.get_item("rows").unwrap();
        assert_eq!(rows.len().unwrap(), 30);
        let recall: f64 = out.get_item("stats").unwrap().get_item("recall").unwrap().extract().unwrap();
        assert!((0.0..=1.0).contains(&recall));
    });
}

#[test]
fn bad_inputs_raise_value_error() {
    Python::attach(|py| {
        let m = module(py);
        let cfg = m.getattr("ScenarioConfig").unwrap().call0().unwrap();
        let e = cfg.setattr("mode", "nonsense").unwrap_err();
        assert!(e.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let e = m.getattr("ScenarioConfig").unwrap().getattr("from_toml").unwrap().call1(("n_agent = 3",)).unwrap_err();
        assert!(e.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}
