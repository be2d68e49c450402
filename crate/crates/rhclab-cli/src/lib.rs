//! Experiment runner: reproducible studies with persistent artifacts.
//!
//! Each command reads a TOML config, runs the corresponding study, and
//! writes its artifacts plus a deterministic `manifest.json` into the output
//! directory. The manifest names the config hash, the artifact version and
//! every output file; identical configs and seeds produce byte-identical
//! artifacts. Wall-clock data goes to a separate `meta.json` so manifests
//! stay comparable.

pub mod config;
mod counterexamples;

pub use counterexamples::{run_counterexamples, CounterexampleReport};

use config::ExperimentConfig;
use rhclab::certify::{certify_system, rhc_constants};
use rhclab::planner::plan;
use rhclab::rhc::{decay_report, run_fo_rhc, RhcConfig};
use rhclab::sampling::SampleSpec;
use rhclab::sim::eval_cost;
use rhclab::Error as LabError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Command outcomes map onto process exit codes:
/// 0 ok, 1 config or reproduction failure, 2 divergence, 3 planner stall,
/// 4 truncated closed-loop trace.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("planner stalled: {0}")]
    Stall(String),
    #[error("trace truncated: {0}")]
    Truncated(String),
    #[error("study did not reproduce: {0}")]
    Reproduction(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Reproduction(_) | Self::Io(_) => 1,
            Self::Divergence(_) => 2,
            Self::Stall(_) => 3,
            Self::Truncated(_) => 4,
        }
    }
}

fn lab_err(e: LabError) -> CliError {
    match e {
        LabError::Divergence { .. } => CliError::Divergence(e.to_string()),
        LabError::Stalled { .. } => CliError::Stall(e.to_string()),
        LabError::Io(io) => CliError::Io(io),
        other => CliError::Config(other.to_string()),
    }
}

/// Options shared by every command.
#[derive(Debug, Clone)]
pub struct CommonOpts {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl CommonOpts {
    /// Resolve the output directory: the explicit flag, else
    /// `$RHCLAB_OUT/<command>`, else `runs/<command>`.
    pub fn resolve_out(explicit: Option<PathBuf>, command: &str) -> PathBuf {
        explicit.unwrap_or_else(|| {
            std::env::var_os("RHCLAB_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(command)
        })
    }
}

pub(crate) struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    /// Prepare the output directory; an existing manifest is never silently
    /// overwritten.
    pub(crate) fn create(dir: &Path) -> Result<Self, CliError> {
        if dir.join("manifest.json").exists() {
            return Err(CliError::Config(format!(
                "{} already contains a manifest; refusing to overwrite",
                dir.display()
            )));
        }
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub(crate) fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub(crate) fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Config(format!("serialization: {e}")))?;
        self.write(name, &text)
    }

    /// Write the deterministic manifest plus the timestamped side file.
    pub(crate) fn finish(
        mut self,
        command: &str,
        config_text: &str,
        seed: u64,
        summary: serde_json::Value,
    ) -> Result<PathBuf, CliError> {
        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        let config_sha256 = format!("{:x}", hasher.finalize());
        self.files.sort();
        let manifest = serde_json::json!({
            "command": command,
            "config_sha256": config_sha256,
            "seed": seed,
            "artifact_version": env!("CARGO_PKG_VERSION"),
            "files": self.files,
            "summary": summary,
        });
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Config(format!("serialization: {e}")))?;
        std::fs::write(self.dir.join("manifest.json"), text)?;
        let meta = serde_json::json!({
            "written_unix_ms": std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        });
        std::fs::write(
            self.dir.join("meta.json"),
            serde_json::to_string_pretty(&meta).unwrap(),
        )?;
        Ok(self.dir)
    }
}

fn seeded_rng(config: &ExperimentConfig, opts: &CommonOpts) -> (rand_chacha::ChaCha8Rng, u64) {
    use rand::SeedableRng;
    let seed = opts.seed.unwrap_or(config.seed);
    (rand_chacha::ChaCha8Rng::seed_from_u64(seed), seed)
}

/// Roll the configured system out under the configured control and write the
/// trajectory CSV plus a summary JSON.
pub fn cmd_simulate(config_path: &Path, opts: &CommonOpts) -> Result<PathBuf, CliError> {
    let (config, text) = ExperimentConfig::load(config_path)?;
    let entry = config.entry()?;
    let grid = config.grid()?;
    let (mut rng, seed) = seeded_rng(&config, opts);
    let base = config_path.parent().unwrap_or(Path::new("."));
    let u = config
        .control
        .build(grid, entry.system.input_dim(), base, &mut rng)?;
    let x0 = config.initial_state(entry.system.state_dim())?;
    let costs = config.cost_model(entry.system.state_dim(), entry.system.input_dim())?;

    let result = eval_cost(entry.system.as_ref(), costs.as_ref(), &u, &x0).map_err(lab_err)?;

    let mut run = RunDir::create(&opts.out_dir)?;
    run.write("config.toml", &text)?;
    run.write("trajectory.csv", &result.trajectory.to_csv())?;
    run.write("control.csv", &u.to_csv())?;
    let summary = serde_json::to_value(result.summary())
        .map_err(|e| CliError::Config(e.to_string()))?;
    run.write_json("summary.json", &summary)?;
    if !opts.quiet {
        println!("J = {:.6e} over [0, {}]", result.cost, grid.horizon());
    }
    run.finish("simulate", &text, seed, summary)
}

/// Run the first-order planner from the configured warm start and write the
/// planner summary and the resulting control.
pub fn cmd_plan(config_path: &Path, opts: &CommonOpts) -> Result<PathBuf, CliError> {
    let (config, text) = ExperimentConfig::load(config_path)?;
    let entry = config.entry()?;
    let grid = config.grid()?;
    let (mut rng, seed) = seeded_rng(&config, opts);
    let base = config_path.parent().unwrap_or(Path::new("."));
    let u0 = config
        .control
        .build(grid, entry.system.input_dim(), base, &mut rng)?;
    let x0 = config.initial_state(entry.system.state_dim())?;
    let costs = config.cost_model(entry.system.state_dim(), entry.system.input_dim())?;
    let planner_config = config.planner.clone().unwrap_or_default();

    let mut run = RunDir::create(&opts.out_dir)?;
    run.write("config.toml", &text)?;
    let result = match plan(entry.system.as_ref(), costs.as_ref(), &x0, &u0, &planner_config) {
        Ok(r) => r,
        Err(LabError::Stalled { grad_norm, iterate }) => {
            // Persist the best iterate before reporting the stall.
            run.write("control.csv", &iterate.to_csv())?;
            run.finish(
                "plan",
                &text,
                seed,
                serde_json::json!({"stalled": true, "grad_norm": grad_norm}),
            )?;
            return Err(CliError::Stall(format!(
                "|g| = {grad_norm:.3e}; best iterate persisted"
            )));
        }
        Err(e) => return Err(lab_err(e)),
    };

    run.write("control.csv", &result.u_out.to_csv())?;
    let summary =
        serde_json::to_value(result.summary()).map_err(|e| CliError::Config(e.to_string()))?;
    run.write_json("planner.json", &summary)?;
    if !opts.quiet {
        println!(
            "J: {:.6e} -> {:.6e} in {} iterations (eps = {:.3e})",
            result.j_in, result.j_out, result.iterations, result.eps_measured
        );
    }
    run.finish("plan", &text, seed, summary)
}

/// Run the assumption pipeline over the configured census and write the
/// certificate JSON. Failed assumptions are data, not errors.
pub fn cmd_certify(config_path: &Path, opts: &CommonOpts) -> Result<PathBuf, CliError> {
    let (config, text) = ExperimentConfig::load(config_path)?;
    let entry = config.entry()?;
    let (_, seed) = seeded_rng(&config, opts);
    let mut spec = config.sampling.clone().unwrap_or_else(|| SampleSpec {
        horizons: vec![1.0, 3.0],
        n_initial: 6,
        n_controls: 2,
        control_amplitude: 2.0,
        seed: 0,
        max_dt: 0.01,
    });
    spec.seed = seed;
    let costs = config.cost_model(entry.system.state_dim(), entry.system.input_dim())?;

    let cert = certify_system(entry.system.as_ref(), costs.as_ref(), &spec, config.delta)
        .map_err(lab_err)?;

    let mut run = RunDir::create(&opts.out_dir)?;
    run.write("config.toml", &text)?;
    let json = cert.to_json();
    run.write_json("certificate.json", &json)?;
    if !opts.quiet {
        println!(
            "assumptions: a4 {} a5 {} a6 {} a7 {} (applicable: {})",
            cert.assumptions.a4.pass,
            cert.assumptions.a5.pass,
            cert.assumptions.a6.pass,
            cert.assumptions.a7.pass,
            cert.applicable
        );
    }
    run.finish("certify", &text, seed, json)
}

/// Run the closed loop and write the trace manifest, the closed-loop state
/// CSV and the applied-control CSV.
pub fn cmd_rhc(config_path: &Path, opts: &CommonOpts) -> Result<PathBuf, CliError> {
    let (config, text) = ExperimentConfig::load(config_path)?;
    let entry = config.entry()?;
    let grid = config.grid()?;
    let (mut rng, seed) = seeded_rng(&config, opts);
    let base = config_path.parent().unwrap_or(Path::new("."));
    let x0 = config.initial_state(entry.system.state_dim())?;
    let costs = config.cost_model(entry.system.state_dim(), entry.system.input_dim())?;
    let warm = config
        .warm_start
        .clone()
        .unwrap_or_default()
        .build(grid, entry.system.input_dim(), base, &mut rng)?;
    let delta = config
        .delta
        .ok_or_else(|| CliError::Config("missing `delta`".into()))?;

    let rhc_config = RhcConfig {
        horizon: grid.horizon(),
        delta,
        n_replans: config.n_replans,
        planner: config.planner.clone().unwrap_or_default(),
        x0,
        warm_start: warm,
    };
    rhc_config.validate().map_err(lab_err)?;

    let trace = run_fo_rhc(entry.system.as_ref(), costs.as_ref(), &rhc_config).map_err(lab_err)?;

    // Decay constants come from a certificate over the same system when the
    // caller provides eps0; the report is marked inapplicable otherwise.
    let report = if let Some(eps0) = config.eps0 {
        let mut spec = config.sampling.clone().unwrap_or_else(|| SampleSpec {
            horizons: vec![1.0, 3.0],
            n_initial: 6,
            n_controls: 2,
            control_amplitude: 2.0,
            seed: 0,
            max_dt: 0.01,
        });
        spec.seed = seed;
        let cert = certify_system(entry.system.as_ref(), costs.as_ref(), &spec, Some(delta))
            .map_err(lab_err)?;
        let constants = rhc_constants(&cert, delta, grid.horizon(), eps0).map_err(lab_err)?;
        Some((decay_report(&trace, &constants, cert.applicable), constants))
    } else {
        None
    };

    let mut run = RunDir::create(&opts.out_dir)?;
    run.write("config.toml", &text)?;
    run.write("closed_loop.csv", &trace.closed_loop.to_csv())?;
    // Applied control stitched onto global time. The control may jump at
    // replanning boundaries, so boundary instants appear twice (left and
    // right values).
    let mut applied_csv = String::from("t");
    if let Some(first) = trace.cycles.first() {
        for i in 0..first.applied.dim() {
            applied_csv.push_str(&format!(",v{i}"));
        }
        applied_csv.push('\n');
        for cycle in &trace.cycles {
            let seg_grid = cycle.applied.grid();
            for k in 0..seg_grid.n_nodes() {
                applied_csv.push_str(&format!("{:.16e}", cycle.t_k + seg_grid.node_time(k)));
                for v in cycle.applied.node(k).iter() {
                    applied_csv.push_str(&format!(",{v:.16e}"));
                }
                applied_csv.push('\n');
            }
        }
    }
    run.write("applied_control.csv", &applied_csv)?;

    let cycles: Vec<serde_json::Value> = trace
        .cycles
        .iter()
        .map(|c| {
            serde_json::json!({
                "t_k": c.t_k,
                "state": c.state.iter().copied().collect::<Vec<f64>>(),
                "planner": c.planner.summary(),
            })
        })
        .collect();
    let summary = serde_json::json!({
        "delta": trace.delta,
        "horizon": trace.horizon,
        "n_cycles": trace.cycles.len(),
        "state_norms": trace.state_norms,
        "truncated": trace.truncated(),
        "failure": trace.failure,
        "cycles": cycles,
        "decay": report.as_ref().map(|(r, c)| serde_json::json!({
            "report": r,
            "constants": c,
        })),
    });
    run.write_json("trace.json", &summary)?;
    if !opts.quiet {
        println!(
            "{} cycles, |x|: {:.4e} -> {:.4e}{}",
            trace.cycles.len(),
            trace.state_norms.first().unwrap(),
            trace.state_norms.last().unwrap(),
            if trace.truncated() { " (truncated)" } else { "" }
        );
    }
    let dir = run.finish("rhc", &text, seed, summary)?;
    if trace.truncated() {
        return Err(CliError::Truncated(format!(
            "cycle {}: {}",
            trace.failure.as_ref().unwrap().cycle,
            trace.failure.as_ref().unwrap().reason
        )));
    }
    Ok(dir)
}
