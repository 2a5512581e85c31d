//! `posematch` command line.
//!
//! Settings resolve as flags, then the `--config` TOML file (keys mirror the
//! long flag names), then built-in defaults.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::backend::{Backend, DegradationModel, OracleBackend, OracleObject};
use crate::bench::{
    ablate, generate_dataset, render_ablation_table, render_summary, write_ablation, write_report,
    Dataset, DatasetSpec, ElevationInit, EvalConfig, SweepGrid,
};
use crate::error::{Error, Result};
use crate::geometry::Viewpoint;
use crate::imaging::{ImageBuffer, NoiseSchedule};
use crate::remote::{serve, RemoteBackend, RemoteConfig, ServerOptions};
use crate::scoring::{intermediate_views, ScoreConfig, DEFAULT_SEED};
use crate::search::{estimate_pose, EstimateConfig, MatchingScheme, RefineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "posematch", version, about = "Relative viewpoint estimation by two-side generation matching")]
pub struct Cli {
    /// `oracle` or `remote:<url>`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// TOML file whose keys mirror the long flag names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(flatten)]
    oracle: OracleArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Oracle degradation gain.
    #[arg(long, global = true)]
    oracle_gain: Option<f64>,
    /// Oracle degradation exponent.
    #[arg(long, global = true)]
    oracle_exponent: Option<f64>,
    /// Oracle working resolution in pixels.
    #[arg(long, global = true)]
    oracle_size: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct SearchArgs {
    /// Intermediate viewpoints.
    #[arg(long)]
    n: Option<usize>,
    /// Monte-Carlo samples.
    #[arg(long)]
    m: Option<usize>,
    /// Timestep as a fraction of the schedule.
    #[arg(long)]
    t: Option<f64>,
    /// Refinement iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// two-side, naive or naive-image.
    #[arg(long)]
    scheme: Option<MatchingScheme>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    GenDataset {
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        queries: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the query viewpoint of one pair.
    Estimate {
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Reference pose as `elevation,azimuth` in degrees.
        #[arg(long, allow_hyphen_values = true)]
        ref_pose: String,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        elev_init: f64,
        #[command(flatten)]
        search: SearchArgs,
        /// Write both sides' generations at every intermediate viewpoint.
        #[arg(long)]
        dump_intermediates: Option<PathBuf>,
    },
    /// Evaluate a dataset.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        /// Std of the elevation initializer's error, in degrees.
        #[arg(long)]
        init_std: Option<f64>,
        /// Report every runtime as 0 so reports compare byte for byte.
        #[arg(long)]
        no_timing: bool,
    },
    /// Sweep N, M, t, refinement iterations or scheme over a dataset.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, value_delimiter = ',')]
        sweep_n: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        sweep_m: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        sweep_t: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        sweep_iterations: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        sweep_scheme: Vec<MatchingScheme>,
        #[arg(long)]
        init_std: Option<f64>,
        #[arg(long)]
        no_timing: bool,
    },
    /// Serve the oracle over the HTTP protocol until SIGTERM.
    ServeOracle {
        #[arg(long)]
        host: Option<String>,
        /// 0 picks a free port.
        #[arg(long)]
        port: Option<u16>,
        /// Pre-build this object.
        #[arg(long)]
        object_seed: Option<u64>,
    },
}

/// Values from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    backend: Option<String>,
    seed: Option<u64>,
    jobs: Option<usize>,
    oracle_gain: Option<f64>,
    oracle_exponent: Option<f64>,
    oracle_size: Option<usize>,
    objects: Option<usize>,
    views: Option<usize>,
    queries: Option<usize>,
    size: Option<usize>,
    n: Option<usize>,
    m: Option<usize>,
    t: Option<f64>,
    iterations: Option<usize>,
    steps: Option<usize>,
    step_deg: Option<f64>,
    final_step_deg: Option<f64>,
    fd_h_deg: Option<f64>,
    scheme: Option<MatchingScheme>,
    init_std: Option<f64>,
    host: Option<String>,
    port: Option<u16>,
    timeout_ms: Option<u64>,
    max_in_flight: Option<usize>,
    retry_limit: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

struct Ctx {
    cli: Cli,
    file: FileConfig,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.cli.seed.or(self.file.seed).unwrap_or(DEFAULT_SEED)
    }

    fn estimate_config(&self, s: &SearchArgs) -> Result<EstimateConfig> {
        let f = &self.file;
        let base = EstimateConfig::default();
        let cfg = EstimateConfig {
            score: ScoreConfig {
                n_intermediate: s.n.or(f.n).unwrap_or(base.score.n_intermediate),
                m_samples: s.m.or(f.m).unwrap_or(base.score.m_samples),
                t_fraction: s.t.or(f.t).unwrap_or(base.score.t_fraction),
                seed: self.seed(),
            },
            schedule: base.schedule,
            refine: RefineConfig {
                iterations: s.iterations.or(f.iterations).unwrap_or(base.refine.iterations),
                steps_per_iteration: f.steps.unwrap_or(base.refine.steps_per_iteration),
                step_deg: f.step_deg.unwrap_or(base.refine.step_deg),
                final_step_deg: f.final_step_deg.unwrap_or(base.refine.final_step_deg),
                fd_h_deg: f.fd_h_deg.unwrap_or(base.refine.fd_h_deg),
            },
            scheme: s.scheme.or(f.scheme).unwrap_or_default(),
        };
        cfg.score.validate()?;
        cfg.refine.validate()?;
        Ok(cfg)
    }

    fn eval_config(&self, s: &SearchArgs, init_std: Option<f64>, no_timing: bool) -> Result<EvalConfig> {
        Ok(EvalConfig {
            estimate: self.estimate_config(s)?,
            init: ElevationInit {
                std_deg: init_std.or(self.file.init_std).unwrap_or(ElevationInit::default().std_deg),
                seed: self.seed(),
            },
            timing: !no_timing,
        })
    }

    /// Backend selected by `--backend`; `default_size` sizes the oracle.
    fn backend(&self, default_size: usize) -> Result<Box<dyn Backend>> {
        let sel = self.cli.backend.clone().or(self.file.backend.clone()).unwrap_or_else(|| "oracle".into());
        if sel == "oracle" {
            return Ok(Box::new(self.oracle(default_size)?));
        }
        if let Some(url) = sel.strip_prefix("remote:") {
            let d = RemoteConfig::default();
            let f = &self.file;
            return Ok(Box::new(RemoteBackend::connect(RemoteConfig {
                base_url: url.to_string(),
                timeout_ms: f.timeout_ms.unwrap_or(d.timeout_ms),
                max_in_flight: f.max_in_flight.unwrap_or(d.max_in_flight),
                retry_limit: f.retry_limit.unwrap_or(d.retry_limit),
            })?));
        }
        Err(Error::InvalidConfig(format!("backend must be `oracle` or `remote:<url>`, got {sel:?}")))
    }

    fn oracle(&self, default_size: usize) -> Result<OracleBackend> {
        let (o, f) = (&self.cli.oracle, &self.file);
        let degradation = DegradationModel::new(
            o.oracle_gain.or(f.oracle_gain).unwrap_or(0.0),
            o.oracle_exponent.or(f.oracle_exponent).unwrap_or(1.0),
        )?;
        let size = o.oracle_size.or(f.oracle_size).unwrap_or(default_size);
        OracleBackend::new(degradation, NoiseSchedule::default(), size)
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Dataset(_) | Error::Codec(_) | Error::Json(_) => EXIT_IO,
        e if e.is_backend() => EXIT_BACKEND,
        Error::InvalidConditioning(_) => EXIT_BACKEND,
        _ => EXIT_USAGE,
    }
}

fn parse_pose(s: &str) -> Result<Viewpoint> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [e, a] = parts.as_slice() else {
        return Err(Error::InvalidViewpoint(format!("expected `elevation,azimuth`, got {s:?}")));
    };
    let num = |x: &str| x.parse::<f64>().map_err(|_| Error::InvalidViewpoint(format!("not a number: {x:?}")));
    Viewpoint::unit(num(e)?, num(a)?)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let file = match FileConfig::load(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let ctx = Ctx { cli, file };
    if let Some(jobs) = ctx.cli.jobs.or(ctx.file.jobs) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    match dispatch(&ctx) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(ctx: &Ctx) -> Result<()> {
    match &ctx.cli.command {
        Command::GenDataset { objects, views, queries, size, out } => {
            let f = &ctx.file;
            let d = DatasetSpec::default();
            let spec = DatasetSpec {
                n_objects: objects.or(f.objects).unwrap_or(d.n_objects),
                views_per_object: views.or(f.views).unwrap_or(d.views_per_object),
                queries_per_reference: queries.or(f.queries).unwrap_or(d.queries_per_reference),
                image_size: size.or(f.size).unwrap_or(d.image_size),
                seed: ctx.seed(),
            };
            let ds = generate_dataset(&spec, out)?;
            println!(
                "wrote {} objects, {} images, {} pairs to {}",
                spec.n_objects,
                spec.n_objects * spec.views_per_object,
                spec.n_pairs(),
                ds.root().display()
            );
            Ok(())
        }
        Command::Estimate { reference, ref_pose, query, elev_init, search, dump_intermediates } => {
            let ref_vp = parse_pose(ref_pose)?;
            let ref_img = ImageBuffer::load_png(reference)?;
            let query_img = ImageBuffer::load_png(query)?;
            let cfg = ctx.estimate_config(search)?;
            let backend = ctx.backend(query_img.width())?;
            let est = estimate_pose(&ref_img, &ref_vp, &query_img, *elev_init, &cfg, backend.as_ref())?;
            println!("elevation_deg={:.4}", est.viewpoint.elevation_deg());
            println!("azimuth_deg={:.4}", est.viewpoint.azimuth_deg());
            println!("score={:.6}", est.score);
            println!("evaluations={}", est.trace.len());
            if let Some(dir) = dump_intermediates {
                std::fs::create_dir_all(dir)?;
                let views = intermediate_views(&ref_img, &ref_vp, &query_img, &est.viewpoint, &cfg.score, backend.as_ref())?;
                for (i, (r, q)) in views.iter().enumerate() {
                    r.image.save_png(dir.join(format!("ref_{i:03}.png")))?;
                    q.image.save_png(dir.join(format!("query_{i:03}.png")))?;
                }
                println!("dumped {} images to {}", 2 * views.len(), dir.display());
            }
            Ok(())
        }
        Command::Bench { dataset, out, search, init_std, no_timing } => {
            let ds = Dataset::load(dataset)?;
            let cfg = ctx.eval_config(search, *init_std, *no_timing)?;
            let backend = ctx.backend(ds.manifest().spec.image_size)?;
            let pairs = ds.pairs()?;
            let report = crate::bench::evaluate(&pairs, &cfg, backend.as_ref())?;
            write_report(&report, out)?;
            print!("{}", render_summary(&report));
            Ok(())
        }
        Command::Ablate {
            dataset,
            out,
            search,
            sweep_n,
            sweep_m,
            sweep_t,
            sweep_iterations,
            sweep_scheme,
            init_std,
            no_timing,
        } => {
            let ds = Dataset::load(dataset)?;
            let cfg = ctx.eval_config(search, *init_std, *no_timing)?;
            let backend = ctx.backend(ds.manifest().spec.image_size)?;
            let grid = SweepGrid {
                n: sweep_n.clone(),
                m: sweep_m.clone(),
                t: sweep_t.clone(),
                iterations: sweep_iterations.clone(),
                schemes: sweep_scheme.clone(),
            };
            let pairs = ds.pairs()?;
            let results = ablate(&pairs, &grid, &cfg, backend.as_ref())?;
            write_ablation(&results, &grid, out)?;
            print!("{}", render_ablation_table(&results, &grid));
            Ok(())
        }
        Command::ServeOracle { host, port, object_seed } => {
            let f = &ctx.file;
            let oracle = ctx.oracle(64)?;
            if let Some(seed) = object_seed {
                oracle.insert_object(OracleObject::from_seed(*seed));
            }
            let host = host.clone().or(f.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
            let port = port.or(f.port).unwrap_or(8080);
            let stop = Arc::new(AtomicBool::new(false));
            for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
                signal_hook::flag::register(sig, stop.clone())?;
            }
            let handle = serve(Arc::new(oracle), &format!("{host}:{port}"), ServerOptions::default())?;
            println!("listening on {}", handle.url());
            std::io::stdout().flush()?;
            while !stop.load(Ordering::SeqCst) {
                std::thread::sleep(Duration::from_millis(50));
            }
            log::info!("shutting down");
            handle.shutdown();
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_parsing() {
        let v = parse_pose("30, 137.5").unwrap();
        assert_eq!((v.elevation_deg(), v.azimuth_deg()), (30.0, 137.5));
        assert!(parse_pose("30").is_err());
        assert!(parse_pose("a,b").is_err());
        assert!(parse_pose("-10,-20").is_ok());
    }

    #[test]
    fn missing_required_flag_is_usage() {
        assert_eq!(run(["posematch", "gen-dataset", "--objects", "2"]), EXIT_USAGE);
        assert_eq!(run(["posematch", "no-such-command"]), EXIT_USAGE);
    }

    #[test]
    fn config_file_keys_mirror_flags() {
        let f: FileConfig = toml::from_str("n = 16\nscheme = \"naive\"\noracle-gain = 0.5\ninit-std = 3.0\n").unwrap();
        assert_eq!(f.n, Some(16));
        assert_eq!(f.scheme, Some(MatchingScheme::Naive));
        assert_eq!(f.oracle_gain, Some(0.5));
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Unreachable("x".into())), EXIT_BACKEND);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), EXIT_IO);
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), EXIT_USAGE);
    }
}
