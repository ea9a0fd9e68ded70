//! Command-line entry point: fit models from traces, simulate synthetic
//! traces, evaluate moments and visibility similarity, plan frame splits,
//! and run the Monte-Carlo verification suite.
//!
//! Exit codes: 0 success, 1 validation error (or failed verification),
//! 2 numeric-convergence failure. Outputs are written atomically (temp
//! file + rename) and are byte-identical across runs with the same seed.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use vrpose::error::{Error, Result};
use vrpose::model::ModelDocument;
use vrpose::moments;
use vrpose::oracle;
use vrpose::pose::DEG_PER_RAD;
use vrpose::splitter::{self, SplitConfig};
use vrpose::trace::{self, ExtractConfig, FitConfig};
use vrpose::vis::{self, ViSConfig};

#[derive(Parser)]
#[command(
    name = "vrpose",
    version,
    about = "viewport-pose statistics, visibility similarity, and frame splitting"
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit orientation and position models from a pose-trace CSV.
    Fit(FitArgs),
    /// Generate a synthetic pose trace from a model document.
    Simulate(SimulateArgs),
    /// Tabulate squared-displacement moments for one time gap.
    Moments(MomentsArgs),
    /// Evaluate the visibility-similarity curve over a distance grid.
    Vis(VisArgs),
    /// Plan a background/foreground split for a frame sequence.
    Split(SplitArgs),
    /// Run the Monte-Carlo oracle suite against the closed forms.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input trace CSV (t,x,y,z,theta_deg,phi_deg).
    #[arg(long)]
    trace: PathBuf,
    /// Output model JSON.
    #[arg(long)]
    output: PathBuf,
    /// Time gaps (seconds) for the orientation tables.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,2.0,8.0,32.0")]
    dt_grid: Vec<f64>,
    /// Skip the orientation fit and reuse the bundled reference tables.
    #[arg(long)]
    position_only: bool,
    #[arg(long, default_value_t = 30.0)]
    turn_threshold_deg: f64,
    #[arg(long, default_value_t = 0.5)]
    min_flight_length: f64,
    #[arg(long, default_value_t = 0.05)]
    pause_speed: f64,
    #[arg(long, default_value_t = 0.2)]
    pause_min: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Seconds of trace to generate.
    #[arg(long, default_value_t = 600.0)]
    duration: f64,
    #[arg(long, default_value_t = 60.0)]
    fps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MomentsArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output CSV (k, m, m_case1, m_case2).
    #[arg(long)]
    output: PathBuf,
    /// Time gap in seconds.
    #[arg(long)]
    dt: f64,
    #[arg(long, default_value_t = 8)]
    k_max: u32,
}

#[derive(Args)]
struct VisArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output CSV (d, vis_fov, vis_dst, vis, err_bound).
    #[arg(long)]
    output: PathBuf,
    /// Time gap in seconds.
    #[arg(long)]
    dt: f64,
    /// Distance grid start:stop:step in meters.
    #[arg(long, default_value = "5:50:0.5")]
    d_grid: String,
    /// Camera angle of view in degrees.
    #[arg(long, default_value_t = 90.0)]
    aov_deg: f64,
    /// Far clipping plane in meters.
    #[arg(long, default_value_t = 50.0)]
    d_fp: f64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output CSV (frame_index, role, dt_to_reference, d_tr).
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    fps: f64,
    #[arg(long, default_value_t = splitter::DEFAULT_VIS_THRESHOLD)]
    vis_tr: f64,
    #[arg(long, default_value_t = 600)]
    frames: u64,
    /// Frames per reference cycle (default: largest feasible).
    #[arg(long)]
    interval: Option<u32>,
    /// Plan a fixed-threshold baseline at this distance instead.
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long, default_value_t = 90.0)]
    aov_deg: f64,
    #[arg(long, default_value_t = 50.0)]
    d_fp: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output JSON report.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Sample-count scale in (0, 1]; 1 is the full suite.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            std::process::exit(1);
        }
    }
    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Moments(a) => cmd_moments(a),
        Command::Vis(a) => cmd_vis(a),
        Command::Split(a) => cmd_split(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

/// Write a file atomically: a temp file in the target directory, then a
/// rename over the destination.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::domain(format!("cannot create temp file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| Error::domain(format!("cannot rename into {}: {e}", path.display())))?;
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let extract_cfg = ExtractConfig {
        turn_threshold: a.turn_threshold_deg / DEG_PER_RAD,
        min_flight_length: a.min_flight_length,
        pause_speed: a.pause_speed,
        pause_min: a.pause_min,
    };
    let fit_cfg = FitConfig { seed: a.seed, ..FitConfig::default() };
    let traj = trace::load_trace(&a.trace)?;
    let extracted = trace::extract_flights(&traj, &extract_cfg)?;
    for w in &extracted.warnings {
        eprintln!("warning: {w}");
    }
    let position = trace::fit_position_model(&extracted.flights, &extracted.pauses, &fit_cfg)?;
    eprintln!(
        "position: mu={:.4} lambda={:.4} c={:.4} v={:.4} (flight-fit sse {:.3e})",
        position.model.mu,
        position.model.lambda,
        position.model.c,
        position.model.v,
        position.flight_report.sse
    );
    let orientation = if a.position_only {
        ModelDocument::reference().orientation
    } else {
        let fit = trace::fit_orientation_model(&traj, &a.dt_grid, &fit_cfg)?;
        for w in &fit.warnings {
            eprintln!("warning: {w}");
        }
        eprintln!("orientation: beta1={:.3} s, beta2={:.3} s", fit.beta1, fit.beta2);
        fit.model
    };
    let doc = ModelDocument::new(orientation, position.model);
    let json = serde_json::to_string_pretty(&doc).expect("model serializes");
    write_atomic(&a.output, (json + "\n").as_bytes())?;
    eprintln!("wrote {}", a.output.display());
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let doc = ModelDocument::load(&a.model)?;
    let traj = trace::simulate_trace(
        &doc.orientation,
        &doc.position,
        a.duration,
        a.fps,
        doc.eye_height,
        a.seed,
    )?;
    // save_trace writes directly; route it through the atomic writer
    let tmp_dir = tempfile::tempdir()?;
    let tmp_path = tmp_dir.path().join("trace.csv");
    trace::save_trace(&traj, &tmp_path)?;
    write_atomic(&a.output, &std::fs::read(&tmp_path)?)?;
    eprintln!("wrote {} ({} samples)", a.output.display(), traj.len());
    Ok(())
}

fn cmd_moments(a: MomentsArgs) -> Result<()> {
    let doc = ModelDocument::load(&a.model)?;
    let table = moments::moments(&doc.position, a.dt, a.k_max, moments::DEFAULT_N_MAX)?;
    let mut out = String::from("k,m,m_case1,m_case2\n");
    for k in 0..=a.k_max as usize {
        out.push_str(&format!(
            "{k},{},{},{}\n",
            table.m[k], table.m_case1[k], table.m_case2[k]
        ));
    }
    write_atomic(&a.output, out.as_bytes())?;
    eprintln!(
        "wrote {} (dt={} s, p_flight={:.6})",
        a.output.display(),
        a.dt,
        table.p_flight
    );
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::parse(format!("grid must be start:stop:step, got {spec:?}")));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::parse(format!("grid component {p:?} is not a number")))
        })
        .collect::<Result<_>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || !(stop >= start) || !(start > 0.0) {
        return Err(Error::parse(format!("grid {spec:?} must satisfy 0 < start <= stop, step > 0")));
    }
    let n = ((stop - start) / step).floor() as usize + 1;
    Ok((0..n).map(|i| start + step * i as f64).collect())
}

fn cmd_vis(a: VisArgs) -> Result<()> {
    let doc = ModelDocument::load(&a.model)?;
    let cfg = ViSConfig {
        w_fv: a.aov_deg / DEG_PER_RAD,
        d_fp: a.d_fp,
        ..ViSConfig::default()
    };
    cfg.validate()?;
    let grid = parse_grid(&a.d_grid)?;
    let table = moments::moments(&doc.position, a.dt, cfg.series_terms + 1, moments::DEFAULT_N_MAX)?;
    let eps = vis::auto_epsilon(&doc.position, a.dt);
    let mut out = String::from("d,vis_fov,vis_dst,vis,err_bound\n");
    for d in grid {
        let p = vis::vis_from_table(&doc.orientation, &table, eps, d, &cfg)?;
        out.push_str(&format!(
            "{d},{},{},{},{}\n",
            p.vis_fov, p.vis_dst, p.vis, p.err_bound
        ));
    }
    write_atomic(&a.output, out.as_bytes())?;
    eprintln!("wrote {}", a.output.display());
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let doc = ModelDocument::load(&a.model)?;
    let cfg = SplitConfig {
        fps: a.fps,
        reference_interval: a.interval,
        vis_tr: a.vis_tr,
        vis_cfg: ViSConfig {
            w_fv: a.aov_deg / DEG_PER_RAD,
            d_fp: a.d_fp,
            ..ViSConfig::default()
        },
        ..SplitConfig::default()
    };
    let plan = match a.baseline {
        Some(d_fixed) => splitter::baseline_fixed(d_fixed, a.frames, &cfg)?,
        None => splitter::plan(&doc.orientation, &doc.position, a.frames, &cfg)?,
    };
    let mut out = String::from("frame_index,role,dt_to_reference,d_tr\n");
    for f in &plan.frames {
        let role = match f.role {
            splitter::FrameRole::Reference => "reference",
            splitter::FrameRole::Novel => "novel",
        };
        let d_tr = f.d_tr.map_or(String::new(), |d| d.to_string());
        out.push_str(&format!("{},{role},{},{d_tr}\n", f.frame_index, f.dt_to_reference));
    }
    write_atomic(&a.output, out.as_bytes())?;
    eprintln!(
        "wrote {} (R={}, {} reference frames of {})",
        a.output.display(),
        plan.reference_interval,
        plan.reference_count(),
        plan.frames.len()
    );
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let doc = ModelDocument::load(&a.model)?;
    let reports = oracle::oracle_suite(&doc.orientation, &doc.position, a.seed, a.scale)?;
    let all_pass = reports.iter().all(|r| r.verdict);
    let json = serde_json::json!({
        "schema_version": vrpose::model::SCHEMA_VERSION,
        "seed": a.seed,
        "scale": a.scale,
        "all_pass": all_pass,
        "reports": reports,
    });
    let text = serde_json::to_string_pretty(&json).expect("report serializes");
    write_atomic(&a.output, (text + "\n").as_bytes())?;
    for r in &reports {
        eprintln!(
            "{} {}: analytic {:.6e} mc {:.6e} +- {:.1e}",
            if r.verdict { "pass" } else { "FAIL" },
            r.quantity,
            r.analytic,
            r.mc_estimate,
            r.mc_stderr
        );
    }
    if all_pass {
        Ok(())
    } else {
        Err(Error::domain("oracle suite reported failures"))
    }
}
