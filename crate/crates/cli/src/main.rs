use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use deepcast::forecast::{simulate_paths, OriginStates};
use deepcast::panel::{format_timestamp, parse_timestamp};
use deepcast::pipeline::archive::{load_fits, read_forecasts, save_fits, write_forecasts, write_outputs, write_scores};
use deepcast::pipeline::backtest::{fit_window, ArchivedForecast};
use deepcast::pipeline::{
    audit, load_data, plan, run_backtest, run_backtest_with_fits, score_archive, BacktestConfig, TEMPLATE,
};
use deepcast::rng::derive_seed;
use deepcast::scoring::write_calibration;

/// Probabilistic time-series forecasting with ensembles of Bayesian echo state networks.
#[derive(Parser)]
#[command(name = "deepcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Panel file; replaces the configured data source.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Forecast horizon in steps.
    #[arg(long)]
    horizon: Option<usize>,
    /// Simulated paths per origin.
    #[arg(long)]
    n_path: Option<usize>,
    /// Configurations per ensemble.
    #[arg(long)]
    k: Option<usize>,
    /// Seed for both fitting and simulation.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on the number of forecast origins.
    #[arg(long)]
    max_origins: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print an annotated configuration with every default.
    Template {
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic panel file from the config's [data.synthetic] table.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fit every refit window and save the models.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Forecast from one origin with saved models.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fits: PathBuf,
        /// Origin timestamp, e.g. 2019-07-01T12:00:00.
        #[arg(long)]
        origin: String,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the rolling-window study and write all report files.
    Backtest {
        #[command(flatten)]
        common: Common,
        /// Output directory; replaces output.dir.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Reuse saved fits instead of refitting.
        #[arg(long)]
        fits: Option<PathBuf>,
    },
    /// Check every input of the planned fits and forecasts for look-ahead.
    Audit {
        #[command(flatten)]
        common: Common,
    },
    /// Score a forecast file against realized data.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Marginal calibration curves of a forecast file.
    Calibration {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> anyhow::Result<BacktestConfig> {
    let mut cfg = BacktestConfig::load(&c.config).with_context(|| format!("reading {}", c.config.display()))?;
    if let Some(p) = &c.panel {
        cfg.data.panel = Some(p.clone());
        cfg.data.synthetic = None;
    }
    if let Some(h) = c.horizon {
        cfg.schedule.horizon = h;
    }
    if let Some(n) = c.n_path {
        cfg.simulation.n_path = n;
    }
    if let Some(k) = c.k {
        cfg.models.k = k;
    }
    if let Some(s) = c.seed {
        cfg.models.seed = s;
        cfg.simulation.seed = s;
    }
    if let Some(m) = c.max_origins {
        cfg.schedule.max_origins = Some(m);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> anyhow::Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Template { out } => match out {
            Some(p) => std::fs::write(&p, TEMPLATE)?,
            None => print!("{TEMPLATE}"),
        },
        Command::Synth { common, out } => {
            let cfg = load_config(&common)?;
            if cfg.data.synthetic.is_none() {
                bail!(deepcast::Error::InvalidConfig(
                    "synth needs a [data.synthetic] table".into()
                ));
            }
            let (panel, _) = load_data(&cfg)?;
            panel.write_long_csv(create(&out)?)?;
            eprintln!(
                "wrote {} steps × {} series to {}",
                panel.len(),
                panel.n_series(),
                out.display()
            );
        }
        Command::Fit { common, out } => {
            let cfg = load_config(&common)?;
            let (panel, _) = load_data(&cfg)?;
            let plan = plan(&panel, &cfg)?;
            audit(&cfg, Some((&panel, &plan))).into_result()?;
            let fits = plan
                .windows
                .iter()
                .map(|w| fit_window(&panel, &cfg, w))
                .collect::<deepcast::Result<Vec<_>>>()?;
            save_fits(&fits, &out)?;
            eprintln!("saved {} windows to {}", fits.len(), out.display());
        }
        Command::Forecast {
            common,
            fits,
            origin,
            out,
        } => {
            let cfg = load_config(&common)?;
            let (panel, _) = load_data(&cfg)?;
            let ts = parse_timestamp(&origin)
                .ok_or_else(|| deepcast::Error::InvalidInput(format!("bad origin {origin:?}")))?;
            let t = panel.index_at_or_after(ts);
            if t >= panel.len() || panel.timestamp(t) != ts {
                bail!(deepcast::Error::InvalidInput(format!(
                    "origin {origin} is not a panel timestamp"
                )));
            }
            let windows = load_fits(&fits)?;
            let wf = windows
                .iter()
                .filter(|w| w.window.train_end <= t)
                .max_by_key(|w| w.window.train_end)
                .ok_or_else(|| deepcast::Error::LookAhead(format!("no saved fit ends at or before {origin}")))?;
            let mut archive = Vec::new();
            for (label, model_fits) in &wf.models {
                let mut states = OriginStates::at_train_end(model_fits)?;
                states.advance(model_fits, &panel, t)?;
                let opts = cfg.sim_options(derive_seed(cfg.simulation.seed, &[model_fits[0].family as u64]));
                let ens = simulate_paths(model_fits, &panel, &states, &opts)?;
                archive.push(ArchivedForecast {
                    model: label.clone(),
                    origin_time: ens.origin_time,
                    series: ens.series,
                    summary: ens.summary,
                    paths: None,
                });
            }
            write_forecasts(&archive, create(&out)?)?;
            eprintln!("forecast from {} written to {}", format_timestamp(ts), out.display());
        }
        Command::Audit { common } => {
            let cfg = load_config(&common)?;
            let rep = match load_data(&cfg) {
                Ok((panel, _)) => {
                    let plan = plan(&panel, &cfg)?;
                    audit(&cfg, Some((&panel, &plan)))
                }
                Err(deepcast::Error::Io(e)) => {
                    eprintln!("panel unavailable ({e}); auditing the configuration alone");
                    audit(&cfg, None)
                }
                Err(e) => return Err(e.into()),
            };
            println!("{}", serde_json::to_string_pretty(&rep.violations)?);
            rep.into_result()?;
        }
        Command::Backtest { common, output, fits } => {
            let mut cfg = load_config(&common)?;
            if let Some(o) = output {
                cfg.output.dir = o;
            }
            let (panel, _) = load_data(&cfg)?;
            let result = match fits {
                Some(f) => run_backtest_with_fits(&panel, &cfg, load_fits(&f)?)?,
                None => run_backtest(&panel, &cfg)?,
            };
            let manifest = write_outputs(&cfg.output.dir, &result, &cfg, &panel)?;
            eprintln!(
                "{} origins over {} windows; reports in {} (config {})",
                manifest.n_origins,
                manifest.windows.len(),
                cfg.output.dir.display(),
                &manifest.config_hash[..12]
            );
        }
        Command::Score {
            common,
            forecasts,
            output,
        } => {
            let cfg = load_config(&common)?;
            let (panel, _) = load_data(&cfg)?;
            let archive = read_forecasts(
                std::fs::File::open(&forecasts).with_context(|| format!("opening {}", forecasts.display()))?,
            )?;
            let (report, calibration) = score_archive(&archive, &panel, &cfg)?;
            write_scores(&output, &report, &calibration)?;
            eprintln!("scored {} forecasts; reports in {}", archive.len(), output.display());
        }
        Command::Calibration { common, forecasts, out } => {
            let cfg = load_config(&common)?;
            let (panel, _) = load_data(&cfg)?;
            let archive = read_forecasts(
                std::fs::File::open(&forecasts).with_context(|| format!("opening {}", forecasts.display()))?,
            )?;
            let (_, calibration) = score_archive(&archive, &panel, &cfg)?;
            write_calibration(&calibration, create(&out)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("DEEPCAST_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<deepcast::Error>().map_or("error", |d| d.kind());
            // thiserror messages already embed their source, so skip repeats in the chain
            let mut message = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !message.contains(&text) {
                    if !message.is_empty() {
                        message.push_str(": ");
                    }
                    message.push_str(&text);
                }
            }
            let report = serde_json::json!({ "error": kind, "message": message });
            eprintln!("{report}");
            ExitCode::from(if kind == "invalid_config" || kind == "config_parse" {
                2
            } else {
                1
            })
        }
    }
}
