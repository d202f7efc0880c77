use isoflow::gas::GasLaw;
use isoflow::init::{InitialCondition, Profile};
use isoflow::metrics::{bl_norm, wasserstein_p};
use isoflow::state::{second_moment, total_energy, ParticleState};
use isoflow::stepper::SolverOptions;
use isoflow::trajectory::{density_measure, march, momentum_measure, InterpolantKind, Trajectory};

fn blob(n: usize, kappa: f64, gamma: f64) -> Trajectory<f64> {
    let ic = InitialCondition::GaussianBlob { center: 0.0, sigma: 0.3, drift: 0.2, slope: -1.5 };
    let state = ic.particles::<f64>(n).unwrap();
    march(state, GasLaw::new(kappa, gamma).unwrap(), 0.01, 0.2, &SolverOptions::default()).unwrap()
}

#[test]
fn monotone_pressureless_flow_is_exact_transport() {
    let ic = InitialCondition::Block { x_min: -1.0, x_max: 1.0, profile: Profile::Uniform, velocity: 0.3, slope: 0.5 };
    let s0 = ic.particles::<f64>(32).unwrap();
    let traj = march(s0.clone(), GasLaw::pressureless(2.0).unwrap(), 0.05, 0.5, &SolverOptions::default()).unwrap();
    assert_eq!(traj.n_steps(), 10);
    for (k, s) in traj.states().iter().enumerate() {
        let t = 0.05 * k as f64;
        for (x, (x0, u0)) in s.positions().iter().zip(s0.positions().iter().zip(s0.velocities())) {
            assert!((x - (x0 + t * u0)).abs() < 1e-12);
        }
    }
    let mid = traj.sample(0.125, InterpolantKind::PiecewiseLinear).unwrap();
    for (x, (x0, u0)) in mid.state.positions().iter().zip(s0.positions().iter().zip(s0.velocities())) {
        assert!((x - (x0 + 0.125 * u0)).abs() < 1e-12);
    }
}

#[test]
fn resting_gas_loses_energy_while_expanding() {
    let ic = InitialCondition::Block { x_min: -0.5, x_max: 0.5, profile: Profile::Uniform, velocity: 0.0, slope: 0.0 };
    let s0 = ic.particles::<f64>(24).unwrap();
    let traj = march(s0, GasLaw::new(1.0, 2.0).unwrap(), 0.02, 0.4, &SolverOptions::default()).unwrap();
    let e = traj.energies();
    for w in e.windows(2) {
        assert!(w[1] < w[0], "{} !< {}", w[1], w[0]);
    }
    let widths: Vec<f64> = traj.states().iter().map(|s| s.width()).collect();
    assert!(widths.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn step_count_and_nodes() {
    let traj = blob(16, 1.0, 2.0);
    assert_eq!(traj.n_steps(), 20);
    assert!((traj.final_time() - 0.2).abs() < 1e-14);
    for k in [0, 7, 20] {
        let t = traj.node_time(k);
        let a = traj.sample(t, InterpolantKind::PiecewiseLinear).unwrap();
        let b = traj.sample(t, InterpolantKind::PiecewiseConstant).unwrap();
        assert_eq!(a.state.positions(), traj.states()[k].positions());
        assert_eq!(b.state.positions(), traj.states()[k].positions());
        assert_eq!(a.state.velocities(), traj.states()[k].velocities());
    }
    assert!(traj.sample(0.25, InterpolantKind::PiecewiseLinear).is_err());
    assert!(traj.sample(-0.1, InterpolantKind::PiecewiseConstant).is_err());
}

#[test]
fn interpolant_energy_bounds() {
    for &(kappa, gamma) in &[(1.0, 1.4), (1.0, 2.0), (0.5, 3.0), (0.0, 2.0)] {
        let traj = blob(32, kappa, gamma);
        let law = *traj.law();
        let e0 = traj.energies()[0];
        let m0 = second_moment(traj.initial_state());
        for t in traj.sample_times(8) {
            let lin = traj.sample(t, InterpolantKind::PiecewiseLinear).unwrap();
            let pc = traj.sample(t, InterpolantKind::PiecewiseConstant).unwrap();
            let (k, _) = traj.locate(t).unwrap();
            let e_lin = total_energy(&lin.state, &law).total;
            let e_pc = total_energy(&pc.state, &law).total;
            assert!(e_lin <= traj.energies()[k] + 1e-8, "t={t}");
            assert!(e_lin <= e_pc + 1e-8, "t={t}");
            assert!(second_moment(&lin.state) <= m0 + t * (2.0 * e0).sqrt() + 1e-6);
        }
        let times = traj.sample_times(4);
        let bound = (2.0 * e0).sqrt();
        for i in 0..times.len() {
            for j in (i + 1)..times.len().min(i + 6) {
                let a = traj.sample(times[i], InterpolantKind::PiecewiseLinear).unwrap();
                let b = traj.sample(times[j], InterpolantKind::PiecewiseLinear).unwrap();
                let w = wasserstein_p(&density_measure(&a.state), &density_measure(&b.state), 2).unwrap();
                assert!(w <= bound * (times[j] - times[i]) + 1e-6);
                let mb = bl_norm(&momentum_measure(&a.state).difference(&momentum_measure(&b.state))).0;
                assert!(mb.is_finite());
            }
        }
    }
}

#[test]
fn directory_output_is_deterministic() {
    let a = blob(16, 1.0, 2.0);
    let b = blob(16, 1.0, 2.0);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.write_dir(da.path()).unwrap();
    b.write_dir(db.path()).unwrap();
    for name in ["ledger.csv", "manifest.json", "states/step_000000.csv", "states/step_000020.csv"] {
        let x = std::fs::read(da.path().join(name)).unwrap();
        let y = std::fs::read(db.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let ledger = std::fs::read_to_string(da.path().join("ledger.csv")).unwrap();
    assert!(ledger.starts_with("k,t,E_before,E_after,velocity_term,bregman_term,multiplier_term\n"));
    assert_eq!(ledger.lines().count(), 21);
    let back = ParticleState::<f64>::read_csv(std::fs::File::open(da.path().join("states/step_000020.csv")).unwrap(), 0.2).unwrap();
    assert_eq!(back.positions(), a.final_state().positions());
}

#[test]
fn tau_larger_than_horizon_is_rejected() {
    let s = InitialCondition::GaussianBlob { center: 0.0, sigma: 0.3, drift: 0.0, slope: 0.0 }.particles::<f64>(8).unwrap();
    assert!(march(s, GasLaw::new(1.0, 2.0).unwrap(), 0.5, 0.2, &SolverOptions::default()).is_err());
}
