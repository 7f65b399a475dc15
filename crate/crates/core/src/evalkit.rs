//! Evaluation: energy distance, mode coverage, closed-loop point-mass
//! rollouts, spectral profiles, and sampling throughput.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunk::ActionChunk;
use crate::error::{Error, Result};
use crate::policynet::{BoundModel, VelocityModel};
use crate::sampler::{euler_sample, sample_chunks, straightness};
use crate::spectral::dct2_chunk;
use crate::synthdata::{denormalize, expert_chunk, normalize, NormStats, Task};

/// Energy distance (V-statistic) between two chunk sets under the flattened
/// Euclidean metric.
pub fn energy_distance(a: &[ActionChunk], b: &[ActionChunk]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("energy distance needs two non-empty sets"));
    }
    let len = a[0].data().len();
    if a.iter().chain(b).any(|c| c.data().len() != len) {
        return Err(Error::invalid("energy distance needs chunks of one shape"));
    }
    let mean_dist = |x: &[ActionChunk], y: &[ActionChunk]| {
        let mut s = 0.0;
        for p in x {
            for q in y {
                s += p.l2_distance(q);
            }
        }
        s / (x.len() * y.len()) as f64
    };
    // Canonical argument order makes the result exactly symmetric.
    let (a, b) = if set_order(a, b).is_gt() {
        (b, a)
    } else {
        (a, b)
    };
    let ab = mean_dist(a, b);
    let aa = mean_dist(a, a);
    let bb = mean_dist(b, b);
    Ok((2.0 * ab - aa - bb).max(0.0))
}

fn set_order(a: &[ActionChunk], b: &[ActionChunk]) -> std::cmp::Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .flat_map(|c| c.data())
            .zip(b.iter().flat_map(|c| c.data()))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub coverage: f64,
    pub balance: f64,
    pub collapse_rate: f64,
}

/// Nearest-mode assignment of each sample against its own observation's two
/// expert chunks.
pub fn mode_coverage(
    samples: &[ActionChunk],
    modes: &[(ActionChunk, ActionChunk)],
    eps: f64,
) -> Result<ModeCoverage> {
    if !(eps > 0.0) {
        return Err(Error::invalid("mode coverage radius must be positive"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("no samples for mode coverage"));
    }
    if modes.len() != samples.len() {
        return Err(Error::DimMismatch {
            what: "mode labels",
            expected: samples.len(),
            found: modes.len(),
        });
    }
    let (mut hits, mut collapsed) = ([0usize; 2], 0usize);
    for (s, (m0, m1)) in samples.iter().zip(modes) {
        if !s.same_shape(m0) || !s.same_shape(m1) {
            return Err(Error::invalid("sample and mode chunks differ in shape"));
        }
        let (d0, d1) = (s.l2_distance(m0), s.l2_distance(m1));
        if d0.min(d1) <= eps {
            hits[usize::from(d1 < d0)] += 1;
        }
        let avg: Vec<f64> = m0
            .data()
            .iter()
            .zip(m1.data())
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        let avg = ActionChunk::new(m0.horizon(), m0.dims(), avg)?;
        if s.l2_distance(&avg) <= eps {
            collapsed += 1;
        }
    }
    let n = samples.len() as f64;
    let (lo, hi) = (hits[0].min(hits[1]), hits[0].max(hits[1]));
    Ok(ModeCoverage {
        coverage: (hits[0] + hits[1]) as f64 / n,
        balance: if hi == 0 { 0.0 } else { lo as f64 / hi as f64 },
        collapse_rate: collapsed as f64 / n,
    })
}

/// A trained model plus the statistics needed to map its samples back to
/// action units.
#[derive(Clone, Debug)]
pub struct Policy {
    task: Task,
    model: BoundModel,
    norm: NormStats,
    nfe: usize,
}

impl Policy {
    pub fn new(task: Task, model: &VelocityModel, norm: NormStats, nfe: usize) -> Result<Self> {
        let dims = model.dims();
        for (what, expected, found) in [
            ("obs_dim", task.obs_dim(), dims.obs_dim),
            ("action_dim", task.action_dim(), dims.action_dim),
            ("horizon", task.horizon(), dims.horizon),
            ("action_dim", dims.action_dim, norm.dims()),
        ] {
            if expected != found {
                return Err(Error::DimMismatch {
                    what,
                    expected,
                    found,
                });
            }
        }
        if nfe == 0 {
            return Err(Error::invalid("nfe must be at least 1"));
        }
        Ok(Policy {
            task,
            model: model.frozen(),
            norm,
            nfe,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn nfe(&self) -> usize {
        self.nfe
    }

    pub fn with_nfe(&self, nfe: usize) -> Result<Self> {
        if nfe == 0 {
            return Err(Error::invalid("nfe must be at least 1"));
        }
        Ok(Policy {
            nfe,
            ..self.clone()
        })
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn field(&self) -> &BoundModel {
        &self.model
    }

    /// Samples in normalized space, observation-major.
    pub fn sample_normalized(
        &self,
        observations: &[Vec<f64>],
        per_obs: usize,
        seed: u64,
    ) -> Result<Vec<ActionChunk>> {
        sample_chunks(&self.model, observations, per_obs, self.nfe, seed)
    }

    /// Samples in action units, observation-major.
    pub fn sample(
        &self,
        observations: &[Vec<f64>],
        per_obs: usize,
        seed: u64,
    ) -> Result<Vec<ActionChunk>> {
        self.sample_normalized(observations, per_obs, seed)?
            .iter()
            .map(|c| denormalize(c, &self.norm))
            .collect()
    }
}

/// Produces a denormalized chunk for an observation.
pub trait ChunkPolicy {
    fn act(&self, obs: &[f64], seed: u64) -> Result<ActionChunk>;
}

impl ChunkPolicy for Policy {
    fn act(&self, obs: &[f64], seed: u64) -> Result<ActionChunk> {
        let mut out = self.sample(&[obs.to_vec()], 1, seed)?;
        Ok(out.remove(0))
    }
}

impl<F: Fn(&[f64], u64) -> Result<ActionChunk>> ChunkPolicy for F {
    fn act(&self, obs: &[f64], seed: u64) -> Result<ActionChunk> {
        self(obs, seed)
    }
}

/// Every expert chunk for `obs`, normalized.
pub fn expert_set(task: Task, obs: &[f64], norm: &NormStats) -> Result<Vec<ActionChunk>> {
    (0..task.num_modes())
        .map(|m| normalize(&expert_chunk(task, obs, m, task.horizon())?, norm))
        .collect()
}

/// Held-out observations drawn from the task distribution.
pub fn heldout_observations(task: Task, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| task.sample_obs(&mut rng)).collect()
}

/// Mean over observations of the energy distance between that observation's
/// samples and its expert set, in normalized space.
pub fn conditional_energy_distance(
    policy: &Policy,
    observations: &[Vec<f64>],
    per_obs: usize,
    seed: u64,
) -> Result<f64> {
    if observations.is_empty() || per_obs == 0 {
        return Err(Error::invalid("conditional energy distance needs samples"));
    }
    let samples = policy.sample_normalized(observations, per_obs, seed)?;
    let mut total = 0.0;
    for (obs, group) in observations.iter().zip(samples.chunks(per_obs)) {
        total += energy_distance(group, &expert_set(policy.task, obs, &policy.norm)?)?;
    }
    Ok(total / observations.len() as f64)
}

/// Fraction of samples within `eps` of the unique expert chunk (single-mode
/// tasks).
pub fn expert_hit_rate(
    policy: &Policy,
    observations: &[Vec<f64>],
    per_obs: usize,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    let samples = policy.sample_normalized(observations, per_obs, seed)?;
    let mut hits = 0usize;
    for (obs, group) in observations.iter().zip(samples.chunks(per_obs)) {
        let experts = expert_set(policy.task, obs, &policy.norm)?;
        hits += group
            .iter()
            .filter(|s| experts.iter().any(|e| s.l2_distance(e) <= eps))
            .count();
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Mode coverage of `per_obs` samples at each observation (bimodal task only).
pub fn policy_mode_coverage(
    policy: &Policy,
    observations: &[Vec<f64>],
    per_obs: usize,
    eps: f64,
    seed: u64,
) -> Result<ModeCoverage> {
    if policy.task.num_modes() != 2 {
        return Err(Error::invalid(format!(
            "mode coverage needs the two-mode task, got `{}`",
            policy.task.as_str()
        )));
    }
    let samples = policy.sample_normalized(observations, per_obs, seed)?;
    let mut modes = Vec::with_capacity(samples.len());
    for obs in observations {
        let mut e = expert_set(policy.task, obs, &policy.norm)?;
        let m1 = e.pop().expect("two modes");
        let m0 = e.pop().expect("two modes");
        modes.extend(std::iter::repeat_n((m0, m1), per_obs));
    }
    mode_coverage(&samples, &modes, eps)
}

/// Mean straightness of `steps`-step traces from one sample per observation.
pub fn mean_straightness(
    policy: &Policy,
    observations: &[Vec<f64>],
    steps: usize,
    seed: u64,
) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::invalid("no observations"));
    }
    let mut total = 0.0;
    for (i, obs) in observations.iter().enumerate() {
        let trace = euler_sample(&policy.model, obs, steps, seed.wrapping_add(i as u64))?;
        total += straightness(&trace);
    }
    Ok(total / observations.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

/// Planar point mass moved by per-step displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMassEnv {
    pub goal: [f64; 2],
    /// Center and radius.
    pub obstacle: Option<([f64; 2], f64)>,
    pub max_steps: usize,
    pub success_radius: f64,
    /// Extra observation entries appended after `g - p` (e.g. a gripper phase).
    pub context: Vec<f64>,
    pos: [f64; 2],
    steps: usize,
}

impl PointMassEnv {
    pub const MAX_STEPS: usize = 64;
    pub const SUCCESS_RADIUS: f64 = 0.08;
    pub const OBSTACLE_RADIUS: f64 = 0.12;

    /// Obstacle halfway to the goal.
    pub fn new(goal: [f64; 2]) -> Self {
        PointMassEnv {
            obstacle: Some(([goal[0] / 2.0, goal[1] / 2.0], Self::OBSTACLE_RADIUS)),
            ..Self::obstacle_free(goal)
        }
    }

    pub fn obstacle_free(goal: [f64; 2]) -> Self {
        PointMassEnv {
            goal,
            obstacle: None,
            max_steps: Self::MAX_STEPS,
            success_radius: Self::SUCCESS_RADIUS,
            context: Vec::new(),
            pos: [0.0, 0.0],
            steps: 0,
        }
    }

    /// The environment a task's observations describe.
    pub fn for_task(task: Task, obs: &[f64]) -> Self {
        let goal = [obs[0], obs[1]];
        let mut env = match task {
            Task::Bimodal => Self::new(goal),
            _ => Self::obstacle_free(goal),
        };
        env.context = obs[2..].to_vec();
        env
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut o = vec![self.goal[0] - self.pos[0], self.goal[1] - self.pos[1]];
        o.extend_from_slice(&self.context);
        o
    }

    /// Applies one displacement; `Some` once the episode is over.
    pub fn step(&mut self, disp: [f64; 2]) -> Option<Outcome> {
        self.pos = [self.pos[0] + disp[0], self.pos[1] + disp[1]];
        self.steps += 1;
        let dist = |c: [f64; 2]| (self.pos[0] - c[0]).hypot(self.pos[1] - c[1]);
        if let Some((c, r)) = self.obstacle {
            if dist(c) <= r {
                return Some(Outcome::Collision);
            }
        }
        if dist(self.goal) <= self.success_radius {
            return Some(Outcome::Success);
        }
        (self.steps >= self.max_steps).then_some(Outcome::Timeout)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub success: bool,
    pub outcome: Outcome,
    pub steps: usize,
    pub trajectory: Vec<[f64; 2]>,
}

/// Closed-loop execution with re-planning. Chunk rows are positions relative
/// to where the plan started; each plan is executed as `exec_horizon`
/// control steps through evenly spaced rows ending on the last one, so a
/// plan that is followed exactly arrives at its final row.
pub fn rollout(
    mut env: PointMassEnv,
    policy: &impl ChunkPolicy,
    exec_horizon: usize,
    seed: u64,
) -> Result<RolloutResult> {
    let mut trajectory = vec![env.position()];
    let mut plan_seed = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let chunk = policy.act(&env.observation(), plan_seed.random())?;
        let h = chunk.horizon();
        if exec_horizon == 0 || exec_horizon > h {
            return Err(Error::invalid(format!(
                "exec_horizon {exec_horizon} outside 1..={h}"
            )));
        }
        if chunk.dims() < 2 {
            return Err(Error::invalid("rollout needs planar chunks"));
        }
        let mut prev = [0.0, 0.0];
        for j in 0..exec_horizon {
            let row = chunk.row((j + 1) * h / exec_horizon - 1);
            let target = [row[0], row[1]];
            let done = env.step([target[0] - prev[0], target[1] - prev[1]]);
            prev = target;
            trajectory.push(env.position());
            if let Some(outcome) = done {
                return Ok(RolloutResult {
                    success: outcome == Outcome::Success,
                    outcome,
                    steps: env.steps(),
                    trajectory,
                });
            }
        }
    }
}

/// One rollout per goal drawn from the task distribution.
pub fn rollout_trials(
    task: Task,
    policy: &impl ChunkPolicy,
    n_trials: usize,
    exec_horizon: usize,
    seed: u64,
) -> Result<Vec<RolloutResult>> {
    if n_trials == 0 {
        return Err(Error::invalid("n_trials must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_trials)
        .map(|_| {
            let obs = task.sample_obs(&mut rng);
            let env = PointMassEnv::for_task(task, &obs);
            rollout(env, policy, exec_horizon, rng.random())
        })
        .collect()
}

/// Success rate over `n_trials` goals drawn from the task distribution.
pub fn rollout_success_rate(
    task: Task,
    policy: &impl ChunkPolicy,
    n_trials: usize,
    exec_horizon: usize,
    seed: u64,
) -> Result<f64> {
    let runs = rollout_trials(task, policy, n_trials, exec_horizon, seed)?;
    Ok(runs.iter().filter(|r| r.success).count() as f64 / n_trials as f64)
}

/// Per-dimension DCT magnitude profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub horizon: usize,
    pub dims: usize,
    /// `[H, D]`, frequency-major.
    pub mean_abs_coeff: Vec<f64>,
    /// Share of each dimension's energy outside `k = 0`.
    pub ac_energy_fraction: Vec<f64>,
    pub non_stationary: Vec<bool>,
}

impl SpectrumReport {
    pub const NON_STATIONARY_THRESHOLD: f64 = 0.2;

    pub fn coeff(&self, k: usize, d: usize) -> f64 {
        self.mean_abs_coeff[k * self.dims + d]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,dim,mean_abs_coeff\n");
        for k in 0..self.horizon {
            for d in 0..self.dims {
                out.push_str(&format!("{k},{d},{}\n", self.coeff(k, d)));
            }
        }
        out
    }
}

/// Mean `|dct2|` per frequency and dimension. Energies use the transform's
/// Parseval weights (`1/H` for `k = 0`, `2/H` otherwise), so the fractions are
/// shares of the signal's squared norm.
pub fn spectrum_report(chunks: &[ActionChunk]) -> Result<SpectrumReport> {
    let first = chunks
        .first()
        .ok_or_else(|| Error::invalid("empty chunk set"))?;
    let (h, d) = (first.horizon(), first.dims());
    let mut mean = vec![0.0; h * d];
    let mut dc = vec![0.0; d];
    let mut total = vec![0.0; d];
    for c in chunks {
        if !c.same_shape(first) {
            return Err(Error::invalid("chunks differ in shape"));
        }
        let coeffs = dct2_chunk(c)?;
        for k in 0..h {
            let w = if k == 0 { 1.0 } else { 2.0 } / h as f64;
            for j in 0..d {
                let x = coeffs.get(k, j);
                mean[k * d + j] += x.abs();
                let e = w * x * x;
                total[j] += e;
                if k == 0 {
                    dc[j] += e;
                }
            }
        }
    }
    let n = chunks.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let ac_energy_fraction: Vec<f64> = dc
        .iter()
        .zip(&total)
        .map(|(z, t)| if *t > 0.0 { (t - z) / t } else { 0.0 })
        .collect();
    Ok(SpectrumReport {
        horizon: h,
        dims: d,
        mean_abs_coeff: mean,
        non_stationary: ac_energy_fraction
            .iter()
            .map(|f| *f > SpectrumReport::NON_STATIONARY_THRESHOLD)
            .collect(),
        ac_energy_fraction,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub nfe: usize,
    pub batch: usize,
    pub chunks_per_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub hardware: String,
    pub repetitions: usize,
    pub results: Vec<Throughput>,
}

impl BenchReport {
    pub fn get(&self, nfe: usize) -> Option<f64> {
        self.results
            .iter()
            .find(|r| r.nfe == nfe)
            .map(|r| r.chunks_per_second)
    }
}

/// Architecture, OS, core count and CPU model when the OS reports one.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{} {} / {} / {} logical cores",
        std::env::consts::ARCH,
        std::env::consts::OS,
        cpu,
        cores
    )
}

/// Median chunks-per-second over `repetitions` timed batches per NFE, after
/// one untimed warm-up batch. Runs on the calling thread.
pub fn speed_benchmark(
    policy: &Policy,
    observations: &[Vec<f64>],
    nfe_list: &[usize],
    repetitions: usize,
) -> Result<BenchReport> {
    if observations.is_empty() || repetitions == 0 {
        return Err(Error::invalid(
            "benchmark needs observations and repetitions",
        ));
    }
    let mut results = Vec::with_capacity(nfe_list.len());
    for &nfe in nfe_list {
        let p = policy.with_nfe(nfe)?;
        p.sample(observations, 1, 0)?;
        let mut rates = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            let start = Instant::now();
            let out = p.sample(observations, 1, rep as u64 + 1)?;
            let secs = start.elapsed().as_secs_f64().max(1e-9);
            rates.push(out.len() as f64 / secs);
        }
        rates.sort_by(f64::total_cmp);
        results.push(Throughput {
            nfe,
            batch: observations.len(),
            chunks_per_second: rates[rates.len() / 2],
        });
    }
    Ok(BenchReport {
        hardware: hardware_descriptor(),
        repetitions,
        results,
    })
}

/// The numbers one evaluation produces. Metrics that do not apply to the
/// task, or were not measured, are `None` (`null` in JSON, empty in CSV).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub nfe: usize,
    pub energy_distance: f64,
    pub mode_coverage: f64,
    pub mode_balance: Option<f64>,
    pub collapse_rate: Option<f64>,
    pub straightness: f64,
    pub success_rate: Option<f64>,
    pub throughput: Vec<Throughput>,
}

/// Settings for [`evaluate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub observations: usize,
    pub samples_per_obs: usize,
    pub eps: f64,
    pub straightness_steps: usize,
    pub rollout_trials: usize,
    pub exec_horizon: usize,
    pub bench_repetitions: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            observations: 64,
            samples_per_obs: 16,
            eps: 0.1,
            straightness_steps: 10,
            rollout_trials: 100,
            exec_horizon: 8,
            bench_repetitions: 5,
            seed: 0,
        }
    }
}

/// Held-out observations are drawn from a stream disjoint from any dataset seed
/// by flipping the top bit.
pub fn heldout_seed(seed: u64) -> u64 {
    seed ^ (1 << 63)
}

pub fn evaluate(policy: &Policy, settings: &EvalSettings) -> Result<MetricsReport> {
    let task = policy.task;
    let obs = heldout_observations(task, settings.observations, heldout_seed(settings.seed));
    let energy_distance =
        conditional_energy_distance(policy, &obs, settings.samples_per_obs, settings.seed)?;
    let (mode_coverage, mode_balance, collapse_rate) = if task.num_modes() == 2 {
        let mc = policy_mode_coverage(
            policy,
            &obs,
            settings.samples_per_obs,
            settings.eps,
            settings.seed,
        )?;
        (mc.coverage, Some(mc.balance), Some(mc.collapse_rate))
    } else {
        let hit = expert_hit_rate(
            policy,
            &obs,
            settings.samples_per_obs,
            settings.eps,
            settings.seed,
        )?;
        (hit, None, None)
    };
    let straightness = mean_straightness(policy, &obs, settings.straightness_steps, settings.seed)?;
    let success_rate = if settings.rollout_trials > 0 {
        let exec = settings.exec_horizon.min(task.horizon());
        Some(rollout_success_rate(
            task,
            policy,
            settings.rollout_trials,
            exec,
            settings.seed,
        )?)
    } else {
        None
    };
    let throughput = if settings.bench_repetitions > 0 {
        let bench_obs = heldout_observations(task, 128, settings.seed);
        speed_benchmark(
            policy,
            &bench_obs,
            &[policy.nfe],
            settings.bench_repetitions,
        )?
        .results
    } else {
        Vec::new()
    };
    Ok(MetricsReport {
        task,
        nfe: policy.nfe,
        energy_distance,
        mode_coverage,
        mode_balance,
        collapse_rate,
        straightness,
        success_rate,
        throughput,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One header line and one value line; throughput becomes one column per NFE.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut keys: Vec<String> = [
            "task",
            "nfe",
            "energy_distance",
            "mode_coverage",
            "mode_balance",
            "collapse_rate",
            "straightness",
            "success_rate",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut vals = vec![
            self.task.as_str().to_string(),
            self.nfe.to_string(),
            self.energy_distance.to_string(),
            self.mode_coverage.to_string(),
            opt(self.mode_balance),
            opt(self.collapse_rate),
            self.straightness.to_string(),
            opt(self.success_rate),
        ];
        for t in &self.throughput {
            keys.push(format!("throughput_nfe{}", t.nfe));
            vals.push(t.chunks_per_second.to_string());
        }
        format!("{}\n{}\n", keys.join(","), vals.join(","))
    }
}
