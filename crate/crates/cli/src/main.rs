//! `specflow` command-line entry point.
//!
//! Every command reads and writes files; nothing of record goes only to the
//! console. Failures print one line to stderr:
//!
//! ```text
//! error: kind=dim_mismatch dimension=obs_dim expected=2 found=3 message="..."
//! ```

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use specflow::evalkit::{
    evaluate, expert_set, heldout_observations, rollout_trials, spectrum_report, speed_benchmark,
    EvalSettings, Outcome,
};
use specflow::synthdata::{gen_dataset, read_dataset, write_dataset, Dataset, Episode};
use specflow::trainer::{load_checkpoint, train, Checkpoint};
use specflow::{Policy, Task, TrainConfig};

use report::{write_file, CliError};

#[derive(Parser, Debug)]
#[command(
    name = "specflow",
    version,
    about = "One-step action-chunk generation with frequency-consistent flow matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic demonstration dataset (FQPD).
    GenData(GenData),
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Draw chunks from a checkpoint and write them as FQPD.
    Sample(SampleArgs),
    /// Compute the metrics report for a checkpoint.
    Eval(EvalArgs),
    /// Closed-loop rollouts in the point-mass environment.
    Rollout(RolloutArgs),
    /// Per-dimension DCT profile of a dataset or sample file.
    Spectrum(SpectrumArgs),
    /// Sampling throughput per number of function evaluations.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenData {
    /// reach | bimodal | gripper
    #[arg(long)]
    task: Task,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["obs_file", "dataset"])))]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Text file, one observation per line (comma or whitespace separated).
    #[arg(long)]
    obs_file: Option<PathBuf>,
    /// Use the observations of an FQPD file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    nfe: usize,
    /// Samples per observation.
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset the checkpoint is evaluated against; its seed picks the
    /// held-out observations.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 1)]
    nfe: usize,
    /// JSON report; a CSV with the same stem is written next to it.
    #[arg(long)]
    out_report: PathBuf,
    #[arg(long, default_value_t = 100)]
    rollout_trials: usize,
    #[arg(long, default_value_t = 5)]
    bench_reps: usize,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_trials: usize,
    #[arg(long, default_value_t = 1)]
    nfe: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    exec_horizon: usize,
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["dataset", "samples"])))]
struct SpectrumArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output of `specflow sample`.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// CSV `k,dim,mean_abs_coeff`; flags go to a JSON file with the same stem.
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    nfe_list: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long)]
    out_report: PathBuf,
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}

/// Parses and dispatches; returns the process exit status.
fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
        Command::Rollout(a) => rollout_cmd(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Bench(a) => bench(a),
    }
}

fn gen_data(a: GenData) -> Result<(), CliError> {
    let ds = gen_dataset(a.task, a.n, a.seed).map_err(|e| CliError::from(e).field("n"))?;
    write_dataset(&ds, &a.out).map_err(|e| CliError::from(e).path(&a.out))?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let cfg = TrainConfig::load(&a.config).map_err(|e| CliError::from(e).path(&a.config))?;
    let out = train(&cfg).map_err(|e| CliError::from(e).path(&cfg.checkpoint_path))?;
    println!(
        "trained {} steps; checkpoint {}; loss log {}",
        out.checkpoint.step,
        cfg.checkpoint_path.display(),
        cfg.loss_log().display()
    );
    Ok(())
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(path).map_err(|e| CliError::from(e).path(path))
}

fn open_dataset(path: &Path) -> Result<Dataset, CliError> {
    read_dataset(path).map_err(|e| CliError::from(e).path(path))
}

fn policy(ckpt: &Checkpoint, nfe: usize, path: &Path) -> Result<Policy, CliError> {
    Policy::new(
        ckpt.config.task,
        ckpt.inference_model(),
        ckpt.norm.clone(),
        nfe,
    )
    .map_err(|e| CliError::from(e).path(path))
}

/// The dataset must describe the same task shape the checkpoint was trained on.
fn check_compatible(ckpt: &Checkpoint, ds: &Dataset, path: &Path) -> Result<(), CliError> {
    let task = ckpt.config.task;
    for (what, expected, found) in [
        ("obs_dim", task.obs_dim(), ds.obs_dim),
        ("action_dim", task.action_dim(), ds.action_dim),
        ("horizon", task.horizon(), ds.horizon),
    ] {
        if expected != found {
            return Err(CliError::from(specflow::Error::DimMismatch {
                what,
                expected,
                found,
            })
            .path(path));
        }
    }
    if ds.task != task {
        return Err(CliError::new(
            "task_mismatch",
            format!(
                "dataset task `{}` does not match checkpoint task `{}`",
                ds.task.as_str(),
                task.as_str()
            ),
        )
        .path(path)
        .field("task"));
    }
    Ok(())
}

fn read_observations(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::from(specflow::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| {
                CliError::new("parse", format!("{e}"))
                    .path(path)
                    .line(i + 1)
            })?;
        if vals.len() != dim {
            return Err(CliError::from(specflow::Error::DimMismatch {
                what: "obs_dim",
                expected: dim,
                found: vals.len(),
            })
            .path(path)
            .line(i + 1));
        }
        out.push(vals);
    }
    if out.is_empty() {
        return Err(CliError::new("invalid", "no observations").path(path));
    }
    Ok(out)
}

fn sample(a: SampleArgs) -> Result<(), CliError> {
    let ckpt = open_checkpoint(&a.ckpt)?;
    let task = ckpt.config.task;
    let obs = match (&a.obs_file, &a.dataset) {
        (Some(p), _) => read_observations(p, task.obs_dim())?,
        (None, Some(p)) => {
            let ds = open_dataset(p)?;
            check_compatible(&ckpt, &ds, p)?;
            ds.episodes.into_iter().map(|e| e.obs).collect()
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let pol = policy(&ckpt, a.nfe, &a.ckpt)?;
    let normalized = pol
        .sample_normalized(&obs, a.n, a.seed)
        .map_err(|e| CliError::from(e).field("n"))?;
    let mut episodes = Vec::with_capacity(normalized.len());
    for (o, group) in obs.iter().zip(normalized.chunks(a.n.max(1))) {
        let experts = expert_set(task, o, &ckpt.norm)?;
        for s in group {
            // Label each sample with its nearest expert mode.
            let mode_id = experts
                .iter()
                .enumerate()
                .min_by(|x, y| s.l2_distance(x.1).total_cmp(&s.l2_distance(y.1)))
                .map(|(i, _)| i as u32)
                .unwrap_or(0);
            episodes.push(Episode {
                obs: o.clone(),
                chunk: specflow::synthdata::denormalize(s, &ckpt.norm)?,
                mode_id,
            });
        }
    }
    let out = Dataset {
        task,
        obs_dim: task.obs_dim(),
        action_dim: task.action_dim(),
        horizon: task.horizon(),
        seed: a.seed,
        norm: ckpt.norm.clone(),
        episodes,
    };
    write_dataset(&out, &a.out).map_err(|e| CliError::from(e).path(&a.out))?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = open_checkpoint(&a.ckpt)?;
    let ds = open_dataset(&a.dataset)?;
    check_compatible(&ckpt, &ds, &a.dataset)?;
    let pol = policy(&ckpt, a.nfe, &a.ckpt)?;
    let settings = EvalSettings {
        rollout_trials: a.rollout_trials,
        bench_repetitions: a.bench_reps,
        seed: ds.seed,
        ..EvalSettings::default()
    };
    let rep = evaluate(&pol, &settings)?;
    write_file(&a.out_report, rep.to_json())?;
    write_file(&a.out_report.with_extension("csv"), rep.to_csv())?;
    Ok(())
}

fn rollout_cmd(a: RolloutArgs) -> Result<(), CliError> {
    let ckpt = open_checkpoint(&a.ckpt)?;
    let task = ckpt.config.task;
    let pol = policy(&ckpt, a.nfe, &a.ckpt)?;
    let runs = rollout_trials(task, &pol, a.n_trials, a.exec_horizon, a.seed).map_err(|e| {
        CliError::from(e).field(if a.n_trials == 0 {
            "n_trials"
        } else {
            "exec_horizon"
        })
    })?;
    let count = |o: Outcome| runs.iter().filter(|r| r.outcome == o).count();
    let json = serde_json::json!({
        "task": task.as_str(),
        "nfe": a.nfe,
        "seed": a.seed,
        "exec_horizon": a.exec_horizon,
        "n_trials": a.n_trials,
        "success_rate": count(Outcome::Success) as f64 / a.n_trials as f64,
        "successes": count(Outcome::Success),
        "collisions": count(Outcome::Collision),
        "timeouts": count(Outcome::Timeout),
        "mean_steps": runs.iter().map(|r| r.steps as f64).sum::<f64>() / a.n_trials as f64,
    });
    write_file(&a.out_report, pretty(&json))?;
    Ok(())
}

fn spectrum(a: SpectrumArgs) -> Result<(), CliError> {
    let path = a
        .dataset
        .as_ref()
        .or(a.samples.as_ref())
        .expect("clap requires one input");
    let ds = open_dataset(path)?;
    let chunks: Vec<_> = ds.episodes.iter().map(|e| e.chunk.clone()).collect();
    let rep = spectrum_report(&chunks).map_err(|e| CliError::from(e).path(path))?;
    write_file(&a.out_csv, rep.to_csv())?;
    let json = serde_json::json!({
        "source": path,
        "task": ds.task.as_str(),
        "chunks": chunks.len(),
        "horizon": rep.horizon,
        "dims": rep.dims,
        "ac_energy_fraction": rep.ac_energy_fraction,
        "non_stationary": rep.non_stationary,
    });
    write_file(&a.out_csv.with_extension("json"), pretty(&json))?;
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let ckpt = open_checkpoint(&a.ckpt)?;
    let task = ckpt.config.task;
    if a.nfe_list.is_empty() || a.nfe_list.contains(&0) {
        return Err(CliError::new("invalid", "every NFE must be at least 1").field("nfe_list"));
    }
    let pol = policy(&ckpt, a.nfe_list[0], &a.ckpt)?;
    let obs = heldout_observations(task, a.batch, 0);
    let rep = speed_benchmark(&pol, &obs, &a.nfe_list, a.reps)
        .map_err(|e| CliError::from(e).field("batch"))?;
    let json = serde_json::to_value(&rep).expect("report serializes");
    write_file(&a.out_report, pretty(&json))?;
    Ok(())
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json serializes")
}
