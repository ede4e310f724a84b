//! End-to-end checks across graph, circuit, transpiler, simulator and driver.

use ringcut::circuit::QaoaParams;
use ringcut::experiment::{run_sweep, ExperimentConfig, Mitigation};
use ringcut::graph::make_ring;
use ringcut::noise::preset;
use ringcut::qaoa::{evaluate, objective, optimize_params, Backend, BackendMode};

fn params(p: usize) -> QaoaParams {
    let gammas = (0..p).map(|k| 0.3 + 0.2 * k as f64).collect();
    let betas = (0..p).map(|k| 0.7 - 0.15 * k as f64).collect();
    QaoaParams::new(gammas, betas).unwrap()
}

#[test]
fn zero_noise_device_matches_the_statevector() {
    let device = preset("noiseless").unwrap();
    for n in [5, 6, 12] {
        let g = make_ring(n).unwrap();
        let ideal = objective(&g, &params(2), &Backend::noiseless_exact()).unwrap();
        for m in [Mitigation::Off, Mitigation::On] {
            let backend = Backend::noisy_exact(device.clone(), m.pass_config());
            let routed = objective(&g, &params(2), &backend).unwrap();
            assert!((routed - ideal).abs() < 1e-9, "n={n} {m}: {routed} vs {ideal}");
        }
    }
}

#[test]
fn noise_lowers_the_expectation_and_mitigation_helps() {
    let g = make_ring(6).unwrap();
    let ideal = objective(&g, &params(2), &Backend::noiseless_exact()).unwrap();
    let profile = preset("kolkata-like").unwrap();
    let on = objective(&g, &params(2), &Backend::noisy_exact(profile.clone(), Mitigation::On.pass_config())).unwrap();
    let off = objective(&g, &params(2), &Backend::noisy_exact(profile, Mitigation::Off.pass_config())).unwrap();
    assert!(off < on && on < ideal, "off {off}, on {on}, ideal {ideal}");
}

#[test]
fn shot_streams_are_reproducible() {
    let g = make_ring(4).unwrap();
    let profile = preset("lagos-like").unwrap();
    let backend = Backend::shots(Some((profile, Mitigation::On.pass_config())), 1000, 9);
    let a = evaluate(&g, &params(1), &backend, 3).unwrap();
    let b = evaluate(&g, &params(1), &backend, 3).unwrap();
    let c = evaluate(&g, &params(1), &backend, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.value, c.value);
    assert_eq!(a.exact_value, c.exact_value);
}

#[test]
fn optimizer_history_is_monotone_in_best_so_far() {
    let g = make_ring(6).unwrap();
    let r = optimize_params(&g, 2, &Backend::noiseless_exact(), 3, 150).unwrap();
    let best = r.best_so_far();
    assert_eq!(best.len(), r.history.len());
    assert!(best.windows(2).all(|w| w[1] >= w[0]));
    assert!((best.last().unwrap() - r.f_star).abs() < 1e-12);
}

#[test]
fn sweep_records_aggregate_into_rows() {
    let mut cfg = ExperimentConfig::new(vec![4], (1, 2), "lagos-like", Mitigation::On);
    cfg.runs = 3;
    cfg.backend_mode = BackendMode::NoisyExact;
    cfg.restarts = 2;
    cfg.max_evals = 60;
    cfg.refine_evals = Some(5);
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.records.len(), 6);
    assert_eq!(out.rows.len(), 2);
    for row in &out.rows {
        let ratios: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.p == row.p)
            .map(|r| r.ratio)
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((row.mean_ratio - mean).abs() < 1e-12);
        assert_eq!(row.runs, 3);
    }
    assert_eq!(run_sweep(&cfg).unwrap().records, out.records);
}
