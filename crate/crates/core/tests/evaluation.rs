use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use specflow::evalkit::{
    energy_distance, expert_set, mode_coverage, rollout, rollout_success_rate, spectrum_report,
    speed_benchmark, EvalSettings, MetricsReport, Outcome, PointMassEnv, Policy,
};
use specflow::policynet::init_params;
use specflow::spectral::{dct2_chunk, idct2_chunk};
use specflow::synthdata::{expert_chunk, gen_dataset, normalize, Task};
use specflow::{ActionChunk, Result};

fn normal_set(seed: u64, n: usize, dim: usize) -> Vec<ActionChunk> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            ActionChunk::new(
                1,
                dim,
                (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn energy_distance_of_two_normal_draws_is_small() {
    let a = normal_set(1, 500, 2);
    let b = normal_set(2, 500, 2);
    let ed = energy_distance(&a, &b).unwrap();
    assert!(ed < 0.05, "{ed}");
    // A shifted draw is clearly further away.
    let shifted: Vec<ActionChunk> = b
        .iter()
        .map(|c| ActionChunk::new(1, 2, c.data().iter().map(|x| x + 1.0).collect()).unwrap())
        .collect();
    assert!(energy_distance(&a, &shifted).unwrap() > 10.0 * ed);
    assert!(energy_distance(&a, &[]).is_err());
}

#[test]
fn expert_set_covers_both_modes_evenly() {
    let ds = gen_dataset(Task::Bimodal, 1000, 12).unwrap();
    let mut samples = Vec::new();
    let mut modes = Vec::new();
    for e in &ds.episodes {
        samples.push(normalize(&e.chunk, &ds.norm).unwrap());
        let mut m = expert_set(Task::Bimodal, &e.obs, &ds.norm).unwrap();
        let m1 = m.pop().unwrap();
        modes.push((m.pop().unwrap(), m1));
    }
    let cov = mode_coverage(&samples, &modes, 0.1).unwrap();
    assert_eq!(cov.coverage, 1.0);
    assert!((0.8..=1.0).contains(&cov.balance), "{}", cov.balance);
    assert_eq!(cov.collapse_rate, 0.0);
}

#[test]
fn mode_zero_oracle_reaches_every_goal() {
    let oracle = |obs: &[f64], _seed: u64| -> Result<ActionChunk> {
        expert_chunk(Task::Bimodal, obs, 0, 16)
    };
    let rate = rollout_success_rate(Task::Bimodal, &oracle, 100, 8, 5).unwrap();
    assert_eq!(rate, 1.0);
    let mode1 = |obs: &[f64], _seed: u64| -> Result<ActionChunk> {
        expert_chunk(Task::Bimodal, obs, 1, 16)
    };
    assert_eq!(
        rollout_success_rate(Task::Bimodal, &mode1, 100, 8, 5).unwrap(),
        1.0
    );
}

#[test]
fn averaged_modes_hit_the_obstacle() {
    let avg = |obs: &[f64], _seed: u64| -> Result<ActionChunk> {
        let a = expert_chunk(Task::Bimodal, obs, 0, 16)?;
        let b = expert_chunk(Task::Bimodal, obs, 1, 16)?;
        ActionChunk::new(
            16,
            2,
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x + y) / 2.0)
                .collect(),
        )
    };
    let r = rollout(PointMassEnv::new([0.8, 0.6]), &avg, 8, 0).unwrap();
    assert_eq!(r.outcome, Outcome::Collision);
}

#[test]
fn zero_stub_times_out_at_the_step_limit() {
    let zero = |_: &[f64], _: u64| -> Result<ActionChunk> { Ok(ActionChunk::zeros(16, 2)) };
    for exec in [1, 5, 8, 16] {
        let r = rollout(PointMassEnv::new([1.0, -0.5]), &zero, exec, 3).unwrap();
        assert_eq!(r.outcome, Outcome::Timeout);
        assert_eq!(r.steps, PointMassEnv::MAX_STEPS);
        assert_eq!(r.trajectory.len(), PointMassEnv::MAX_STEPS + 1);
    }
    assert!(rollout(PointMassEnv::new([1.0, 0.0]), &zero, 0, 0).is_err());
    assert!(rollout(PointMassEnv::new([1.0, 0.0]), &zero, 17, 0).is_err());
}

#[test]
fn straight_stub_succeeds_without_obstacle() {
    let straight = |obs: &[f64], _: u64| expert_chunk(Task::Reach, obs, 0, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let g = Task::Reach.sample_obs(&mut rng);
        let r = rollout(PointMassEnv::obstacle_free([g[0], g[1]]), &straight, 8, 0).unwrap();
        assert!(r.success);
        // Geometry: every visited point lies on the segment from the origin to g.
        for p in &r.trajectory {
            assert!((p[0] * g[1] - p[1] * g[0]).abs() < 1e-9);
        }
    }
}

fn untrained_policy(task: Task, nfe: usize) -> Policy {
    let ds = gen_dataset(task, 50, 0).unwrap();
    let dims = specflow::TrainConfig::new(task, "", "").model_dims();
    let mut m = init_params(dims, 1).unwrap();
    // Non-zero head so samples depend on the seed path through the network.
    let vals = m
        .params()
        .iter()
        .map(|(name, t)| {
            if name.starts_with("head") {
                specflow::Tensor::new(t.shape().to_vec(), vec![0.01; t.numel()]).unwrap()
            } else {
                t.clone()
            }
        })
        .collect();
    m.set_tensors(vals).unwrap();
    Policy::new(task, &m, ds.norm, nfe).unwrap()
}

#[test]
fn rollout_is_deterministic() {
    let p = untrained_policy(Task::Bimodal, 2);
    let a = rollout(PointMassEnv::new([0.7, 0.2]), &p, 8, 42).unwrap();
    let b = rollout(PointMassEnv::new([0.7, 0.2]), &p, 8, 42).unwrap();
    assert_eq!(a, b);
    let c = rollout(PointMassEnv::new([0.7, 0.2]), &p, 8, 43).unwrap();
    assert_ne!(a.trajectory, c.trajectory);
}

#[test]
fn reach_spectrum_is_low_frequency() {
    let ds = gen_dataset(Task::Reach, 500, 4).unwrap();
    let chunks: Vec<ActionChunk> = ds.episodes.iter().map(|e| e.chunk.clone()).collect();
    let h = Task::Reach.horizon();
    let (mut high, mut total) = (0.0, 0.0);
    for c in &chunks {
        let f = dct2_chunk(c).unwrap();
        for k in 0..h {
            for d in 0..c.dims() {
                let w = if k == 0 { 1.0 } else { 2.0 };
                let e = w * f.get(k, d).powi(2);
                total += e;
                if k >= h / 2 {
                    high += e;
                }
            }
        }
    }
    assert!(high < 0.05 * total, "{}", high / total);
    let rep = spectrum_report(&chunks).unwrap();
    // A ramp: k = 1 dominates every higher frequency.
    for d in 0..2 {
        assert!((2..h).all(|k| rep.coeff(1, d) > 4.0 * rep.coeff(k, d)));
    }
}

#[test]
fn gripper_flag_and_reconstruction() {
    let ds = gen_dataset(Task::Gripper, 300, 4).unwrap();
    let chunks: Vec<ActionChunk> = ds.episodes.iter().map(|e| e.chunk.clone()).collect();
    let rep = spectrum_report(&chunks).unwrap();
    assert!(rep.non_stationary[2]);
    assert!(rep
        .ac_energy_fraction
        .iter()
        .all(|f| (0.0..=1.0).contains(f)));
    let rebuilt: Vec<ActionChunk> = chunks
        .iter()
        .map(|c| idct2_chunk(&dct2_chunk(c).unwrap()).unwrap())
        .collect();
    let again = spectrum_report(&rebuilt).unwrap();
    for (a, b) in rep.mean_abs_coeff.iter().zip(&again.mean_abs_coeff) {
        assert!((a - b).abs() < 1e-8);
    }
    assert_eq!(rep.non_stationary, again.non_stationary);
    let csv = rep.to_csv();
    assert_eq!(csv.lines().count(), 1 + rep.horizon * 3);
    assert!(spectrum_report(&[]).is_err());
}

#[test]
fn fewer_steps_are_faster() {
    let p = untrained_policy(Task::Reach, 1);
    let obs = specflow::evalkit::heldout_observations(Task::Reach, 128, 0);
    let rep = speed_benchmark(&p, &obs, &[1, 10], 5).unwrap();
    let (one, ten) = (rep.get(1).unwrap(), rep.get(10).unwrap());
    assert!(one > ten, "{one} vs {ten}");
    assert!(!rep.hardware.is_empty());
}

#[test]
fn larger_batches_do_not_slow_chunks_down() {
    let p = untrained_policy(Task::Reach, 4);
    let small = specflow::evalkit::heldout_observations(Task::Reach, 64, 0);
    let large = specflow::evalkit::heldout_observations(Task::Reach, 128, 0);
    let a = speed_benchmark(&p, &small, &[4], 7)
        .unwrap()
        .get(4)
        .unwrap();
    let b = speed_benchmark(&p, &large, &[4], 7)
        .unwrap()
        .get(4)
        .unwrap();
    // Timing jitter on a shared machine: allow 10%.
    assert!(b >= 0.9 * a, "{a} -> {b}");
}

#[test]
fn report_shapes() {
    let p = untrained_policy(Task::Reach, 1);
    let settings = EvalSettings {
        observations: 4,
        samples_per_obs: 4,
        rollout_trials: 3,
        bench_repetitions: 1,
        ..EvalSettings::default()
    };
    let rep = specflow::evalkit::evaluate(&p, &settings).unwrap();
    assert!(rep.energy_distance >= 0.0);
    assert!((0.0..=1.0).contains(&rep.mode_coverage));
    assert_eq!(rep.mode_balance, None);
    let json: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
    for key in [
        "energy_distance",
        "mode_coverage",
        "mode_balance",
        "collapse_rate",
        "straightness",
        "success_rate",
        "throughput",
    ] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert!(json["mode_balance"].is_null());
    let back: MetricsReport = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
    let csv = rep.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    assert!(lines[0].contains("throughput_nfe1"));

    let b = untrained_policy(Task::Bimodal, 1);
    let rep = specflow::evalkit::evaluate(&b, &settings).unwrap();
    assert!(rep.mode_balance.is_some() && rep.collapse_rate.is_some());
}

fn small_set(n: usize) -> impl Strategy<Value = Vec<ActionChunk>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..n).prop_map(|v| {
        v.into_iter()
            .map(|x| ActionChunk::new(1, 3, x).unwrap())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn energy_distance_symmetric(a in small_set(8), b in small_set(8)) {
        prop_assert_eq!(energy_distance(&a, &b).unwrap(), energy_distance(&b, &a).unwrap());
        prop_assert!(energy_distance(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
    }

    // The squared statistic is not itself a metric; its square root is.
    #[test]
    fn root_energy_distance_triangle(a in small_set(6), b in small_set(6), c in small_set(6)) {
        let d = |x: &[ActionChunk], y: &[ActionChunk]| energy_distance(x, y).unwrap().sqrt();
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }
}
