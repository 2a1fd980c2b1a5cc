//! Command-line front end: babbling, single runs, method comparisons,
//! boundary curve dumps and target recording.

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;

use shapeservo::harness::{
    self, babble, compare, record_target, resolve_scenario, run, write_babble_csv, write_run_log_csv,
    write_summary, Method, Scenario,
};

#[derive(Parser)]
#[command(name = "shapeservo", version, about = "Deformable-sheet shape servoing lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record a motor-babbling log as CSV.
    Babble {
        /// Preset name (task_a, task_b, task_c) or a scenario JSON path.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute one closed-loop run and write its log and result.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum, default_value_t = Method::PpcRbf)]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for run.csv and result.json.
        #[arg(long)]
        out: PathBuf,
        /// Run only the first N stages.
        #[arg(long)]
        stages: Option<usize>,
    },
    /// Run several methods over a seed range and summarize.
    Compare {
        #[arg(long)]
        scenario: String,
        /// Methods to compare; repeat the flag for each one.
        #[arg(long, value_enum, num_args = 1.., required = true)]
        method: Vec<Method>,
        /// First seed of the range.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of seeds.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stages: Option<usize>,
    },
    /// Dump the boundary curves of every stage for plotting.
    Envelope {
        #[arg(long)]
        scenario: String,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Record the demonstrated per-stage targets as JSON.
    DemoTarget {
        #[arg(long)]
        scenario: String,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn truncate_stages(scenario: &mut Scenario, stages: Option<usize>) -> shapeservo::Result<()> {
    if let Some(n) = stages {
        if n == 0 || n > scenario.stages.len() {
            return Err(shapeservo::Error::Config(format!(
                "--stages {n} out of range (scenario has {})",
                scenario.stages.len()
            )));
        }
        scenario.stages.truncate(n);
    }
    Ok(())
}

fn dispatch(command: Command) -> shapeservo::Result<()> {
    match command {
        Command::Babble { scenario, seed, out } => {
            let scenario = resolve_scenario(&scenario)?;
            let prepared = harness::prepare(&scenario)?;
            let mut master = ChaCha8Rng::seed_from_u64(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            let mut plant = prepared.plant.clone();
            let samples = babble(
                &mut plant,
                &prepared.keypoints,
                scenario.babble.samples,
                scenario.babble_magnitude(),
                scenario.dt,
                scenario.noise_std,
                &mut rng,
            )?;
            write_babble_csv(&out, &samples)?;
            println!("wrote {} babbling samples to {}", samples.len(), out.display());
            Ok(())
        }
        Command::Run { scenario, method, seed, out, stages } => {
            let mut scenario = resolve_scenario(&scenario)?;
            truncate_stages(&mut scenario, stages)?;
            let result = run(&scenario, method, seed)?;
            std::fs::create_dir_all(&out)?;
            let csv_path = out.join("run.csv");
            write_run_log_csv(&result.log, &csv_path)?;
            let report = serde_json::json!({
                "scenario": scenario.name,
                "method": method.as_str(),
                "seed": seed,
                "success": result.success,
                "steady_state_error": result.steady_state_error,
                "convergence_time": result.convergence_time,
                "violation_count": result.violation_count,
                "failure": result.failure,
                "steps": result.log.rows.len(),
                "log_sha256": harness::sha256_file(&csv_path)?,
            });
            write_summary(&report, out.join("result.json"))?;
            println!(
                "{} seed {}: success={} steady_state={:.5} convergence={:.2}s violations={}",
                method, seed, result.success, result.steady_state_error, result.convergence_time,
                result.violation_count
            );
            Ok(())
        }
        Command::Compare { scenario, method, seed, seeds, out, stages } => {
            let mut scenario = resolve_scenario(&scenario)?;
            truncate_stages(&mut scenario, stages)?;
            let seed_list: Vec<u64> = (0..seeds as u64).map(|i| seed + i).collect();
            let summary = compare(&scenario, &method, &seed_list)?;
            write_summary(&summary, &out)?;
            for stats in &summary.methods {
                println!(
                    "{:<18} success {:>5.1}%  sse median {:.5}  ct median {:.2}s  violations {}",
                    stats.method.as_str(),
                    100.0 * stats.success_rate,
                    stats.steady_state_error.median,
                    stats.convergence_time.median,
                    stats.total_violations
                );
            }
            println!("summary written to {}", out.display());
            Ok(())
        }
        Command::Envelope { scenario, out } => {
            let scenario = resolve_scenario(&scenario)?;
            dump_envelopes(&scenario, &out)?;
            println!("boundary curves written to {}", out.display());
            Ok(())
        }
        Command::DemoTarget { scenario, out } => {
            let scenario = resolve_scenario(&scenario)?;
            let targets = record_target(&scenario)?;
            let as_json: Vec<Vec<f64>> = targets.iter().map(|t| t.iter().copied().collect()).collect();
            write_summary(
                &serde_json::json!({ "scenario": scenario.name, "targets": as_json }),
                &out,
            )?;
            println!("recorded {} stage targets to {}", targets.len(), out.display());
            Ok(())
        }
    }
}

/// Writes `t, stage, axis, mu, phi_a, phi_b` rows over each stage horizon.
fn dump_envelopes(scenario: &Scenario, out: &std::path::Path) -> shapeservo::Result<()> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
    writeln!(file, "t,stage,axis,mu,phi_a,phi_b")?;
    let mut t0 = 0.0;
    for (si, stage) in scenario.stages.iter().enumerate() {
        let steps = (stage.duration / scenario.dt).round() as usize;
        for step in 0..=steps {
            let t = t0 + step as f64 * scenario.dt;
            for (axis, name) in ["x", "y", "z"].iter().enumerate() {
                let env = stage.envelopes.axis(axis).envelope(t0)?;
                let (mu, _) = env.value(t)?;
                let (a, b) = env.boundaries(t)?;
                writeln!(file, "{t},{si},{name},{mu},{a},{b}")?;
            }
        }
        t0 += stage.duration + scenario.inter_stage_pause;
    }
    Ok(())
}
