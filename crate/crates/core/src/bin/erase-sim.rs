use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use erase_sim::baselines::SchedulerPolicy;
use erase_sim::experiment::{
    cmd_compare, cmd_profile, cmd_run, cmd_sweep, write_atomic, ExperimentConfig, ExperimentError, Result,
};
use erase_sim::platform::PlatformTopology;

/// Energy-aware work-stealing scheduler simulator.
#[derive(Parser)]
#[command(name = "erase-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy over every dop and repetition.
    Run(ExperimentArgs),
    /// Measure microbenchmark intensities and write a power profile.
    Profile {
        #[arg(long, default_value = "tx2")]
        platform: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Profile file to write; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several policies on one workload and report deltas against the first.
    Compare {
        /// Config files differing only in policy; overrides `--policy`.
        configs: Vec<PathBuf>,
        #[command(flatten)]
        args: ExperimentArgs,
    },
    /// Sweep dop, frequency permutations and all policies.
    Sweep(ExperimentArgs),
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Base TOML config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset (tx2, sym<N>) or topology file.
    #[arg(long)]
    platform: Option<String>,
    /// Comma-separated for compare.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<SchedulerPolicy>,
    /// Kernel presets joined by '+', or sparselu[:blocks].
    #[arg(long)]
    dag: Option<String>,
    #[arg(long, value_delimiter = ',')]
    dop: Vec<u32>,
    #[arg(long)]
    tasks: Option<usize>,
    /// cluster=level with level MIN, MAX, an index or Hz; cluster may be `all`.
    #[arg(long, value_name = "CLUSTER=LEVEL")]
    freq: Vec<String>,
    /// Step file or random:<lo>,<hi> gap range in seconds.
    #[arg(long)]
    dvfs_schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u32>,
    /// Log-normal sigma of task-time noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Failed steal attempts before a back-off sleep.
    #[arg(long)]
    backoff_n: Option<u32>,
    /// Disable frequency-change detection.
    #[arg(long)]
    no_detection: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_plot_data: bool,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        self.apply(&mut c)?;
        c.validate()?;
        Ok(c)
    }

    fn apply(&self, c: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = &self.platform {
            c.platform = v.clone();
        }
        if let Some(&p) = self.policy.first() {
            c.policy = p;
        }
        if let Some(v) = &self.dag {
            c.dag = v.clone();
        }
        if !self.dop.is_empty() {
            c.dop = self.dop.clone();
        }
        if let Some(v) = self.tasks {
            c.tasks = v;
        }
        for f in &self.freq {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| ExperimentError::Config(format!("--freq: expected cluster=level, got '{f}'")))?;
            c.freq.insert(k.trim().to_string(), v.trim().to_string());
        }
        if let Some(v) = &self.dvfs_schedule {
            c.dvfs_schedule = Some(v.clone());
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.reps {
            c.reps = v;
        }
        if let Some(v) = self.noise {
            c.noise = v;
        }
        if let Some(v) = self.backoff_n {
            c.params.backoff_n = v;
        }
        if self.no_detection {
            c.params.dvfs_detection = false;
        }
        if let Some(v) = &self.out {
            c.out = Some(v.clone());
        }
        c.emit_plot_data |= self.emit_plot_data;
        Ok(())
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            if args.policy.len() > 1 {
                return Err(ExperimentError::Config("--policy: run takes one policy; use compare".into()));
            }
            let cfg = args.config()?;
            let out = cmd_run(&cfg)?;
            println!("policy\tkernel\tdop\tfreq\treps\tenergy_j\tcv_pct\tmakespan_s\tedp_js\ttime_mape_pct");
            for a in &out.aggregates {
                let mape: Vec<String> = out
                    .cells
                    .iter()
                    .filter(|c| c.dop == a.dop)
                    .filter_map(|c| c.summary.time_mape_pct)
                    .map(|m| format!("{m:.3}"))
                    .take(1)
                    .collect();
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.3}\t{:.4}\t{:.4}\t{}",
                    a.policy,
                    a.kernel,
                    a.dop,
                    a.freq,
                    a.reps,
                    a.energy_j_mean,
                    a.energy_cv_pct,
                    a.makespan_s_mean,
                    a.edp_js_mean,
                    mape.first().map(String::as_str).unwrap_or("-"),
                );
            }
        }
        Command::Profile { platform, seed, out } => {
            let topology = PlatformTopology::preset(&platform).map_or_else(
                || ExperimentConfig { platform: platform.clone(), ..ExperimentConfig::default() }.topology(),
                Ok,
            )?;
            let p = cmd_profile(&topology, seed)?;
            eprintln!("thresholds: low={} high={}", p.thresholds.low, p.thresholds.high);
            let text = p.profile.to_toml();
            match out {
                Some(path) => write_atomic(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Command::Compare { configs, args } => {
            let cfgs: Vec<ExperimentConfig> = if configs.is_empty() {
                let base = args.config()?;
                if args.policy.len() < 2 {
                    return Err(ExperimentError::Config("--policy: compare needs at least two".into()));
                }
                args.policy.iter().map(|&p| ExperimentConfig { policy: p, ..base.clone() }).collect()
            } else {
                configs.iter().map(|p| ExperimentConfig::load(p)).collect::<Result<_>>()?
            };
            let rows = cmd_compare(&cfgs)?;
            println!("policy\tenergy_j\tmakespan_s\tedp_js\tenergy_delta_pct\tmakespan_delta_pct\tedp_delta_pct");
            for r in rows {
                println!(
                    "{}\t{:.4}\t{:.4}\t{:.4}\t{:+.2}\t{:+.2}\t{:+.2}",
                    r.policy,
                    r.energy_j,
                    r.makespan_s,
                    r.edp_js,
                    r.energy_delta_pct,
                    r.makespan_delta_pct,
                    r.edp_delta_pct
                );
            }
        }
        Command::Sweep(args) => {
            let cfg = args.config()?;
            let out = cmd_sweep(&cfg)?;
            for s in &out.skipped {
                eprintln!("skipped {s}: not supported on this platform");
            }
            println!("dop\tfreq\tpolicy\tenergy_j\tmakespan_s\tedp_js");
            for a in &out.rows {
                println!(
                    "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                    a.dop, a.freq, a.policy, a.energy_j_mean, a.makespan_s_mean, a.edp_js_mean
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("erase-sim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
