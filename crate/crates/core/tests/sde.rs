use ratiometric::model::{integrate_ode, CellState, InducerInput, ToggleSwitchParams};
use ratiometric::rng::{stream, StreamKind};
use ratiometric::stochastic::{build_reaction_network, simulate_cell, InputSchedule, NoiseConfig};

fn endpoint_gap(noise_scale: f64) -> f64 {
    let p = ToggleSwitchParams::default();
    let net = build_reaction_network(&p);
    let cfg = NoiseConfig { noise_scale, ..Default::default() };
    let x0 = CellState { mrna_laci: 2.0, mrna_tetr: 30.0, laci: 60.0, tetr: 900.0, atc: 0.0, iptg: 0.0 };
    let sched = InputSchedule::constant(InducerInput::new(30.0, 0.0), 60.0);
    let n = 1000;
    let (mut l, mut t) = (0.0, 0.0);
    for i in 0..n {
        let tr = simulate_cell(i, &x0, &sched, 60.0, 60.0, &net, &cfg, &mut stream(2, StreamKind::Cell, i, 0)).unwrap();
        let end = tr.samples.last().unwrap().1;
        l += end.laci;
        t += end.tetr;
    }
    let ode = integrate_ode(&x0, &InducerInput::new(30.0, 0.0), 60.0, cfg.sde_step, &p).unwrap();
    (l / n as f64 - ode.laci).hypot(t / n as f64 - ode.tetr)
}

#[test]
fn ensemble_mean_approaches_ode_as_noise_vanishes() {
    let gaps: Vec<f64> = [1.0, 0.5, 0.0].iter().map(|&s| endpoint_gap(s)).collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    // Only the Euler-vs-RK4 discretization gap remains.
    assert!(gaps[2] < 0.5, "{gaps:?}");
}

#[test]
fn trajectories_are_sampled_on_the_grid() {
    let p = ToggleSwitchParams::default();
    let net = build_reaction_network(&p);
    let cfg = NoiseConfig::default();
    let sched = InputSchedule::constant(InducerInput::new(10.0, 0.2), 30.0);
    let x0 = CellState { laci: 200.0, tetr: 200.0, ..Default::default() };
    let tr = simulate_cell(7, &x0, &sched, 30.0, 5.0, &net, &cfg, &mut stream(0, StreamKind::Cell, 7, 0)).unwrap();
    let times: Vec<f64> = tr.samples.iter().map(|s| s.0).collect();
    assert_eq!(times.len(), 7);
    for (k, t) in times.iter().enumerate() {
        assert!((t - 5.0 * k as f64).abs() < 1e-9);
    }
    assert!(tr.samples.iter().all(|(_, x)| x.is_nonnegative()));
}
