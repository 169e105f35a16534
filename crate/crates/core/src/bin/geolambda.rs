use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use geolambda::gameday::{generate, GamedayConfig};
use geolambda::gateway::{self, ApiError, ExportFormat, ExportRequest, Layer, ServiceConfig};
use geolambda::ingestion::{replay, ReplaySpec};
use geolambda::Engine;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "geolambda", version, about = "Spatio-temporal analytics engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Store {
    /// Service config file (key = value); PS_* env vars override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data directory; overrides the config.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl Store {
    fn service_config(&self) -> Result<ServiceConfig, String> {
        let mut cfg = ServiceConfig::load(self.config.as_deref()).map_err(|e| e.to_string())?;
        if let Some(d) = &self.data_dir {
            cfg.data_dir = d.clone();
        }
        Ok(cfg)
    }

    fn engine(&self) -> Result<Engine, String> {
        Engine::open(self.service_config()?.engine_config()).map_err(|e| e.to_string())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service and the background recompute loop.
    Serve {
        #[command(flatten)]
        store: Store,
    },
    /// Feed an NDJSON event file through ingestion.
    Replay {
        #[arg(long)]
        file: PathBuf,
        /// Playback speed relative to event time; 0 = as fast as possible.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
        #[arg(long = "loop")]
        looping: bool,
        #[command(flatten)]
        store: Store,
    },
    /// Build one batch view at the current high watermark and summarize it.
    BuildView {
        #[arg(long)]
        name: String,
        #[command(flatten)]
        store: Store,
    },
    /// Export a view as asc, csv or ndjson.
    Export {
        #[arg(long)]
        view: String,
        #[arg(long)]
        format: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "raw")]
        layer: String,
        #[arg(long, default_value_t = 2)]
        radius: usize,
        #[arg(long)]
        population: Option<f64>,
        #[arg(long)]
        baseline: Option<String>,
        #[command(flatten)]
        store: Store,
    },
    /// Write the synthetic game-day scenario to a directory.
    GenGameday {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        days: usize,
        #[arg(long)]
        attendance: Option<f64>,
    },
}

fn api(e: ApiError) -> String {
    e.to_string()
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Serve { store } => {
            let cfg = store.service_config()?;
            let engine = Arc::new(Engine::open(cfg.engine_config()).map_err(|e| e.to_string())?);
            let _recompute = engine.spawn_recompute_loop(cfg.recompute_interval);
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(cfg.listen).await.map_err(|e| e.to_string())?;
                tracing::info!(addr = %cfg.listen, data_dir = %cfg.data_dir.display(), "listening");
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                gateway::serve(engine, listener, shutdown).await.map_err(|e| e.to_string())
            })
        }
        Command::Replay {
            file,
            speed,
            looping,
            store,
        } => {
            let engine = store.engine()?;
            let spec = ReplaySpec {
                path: file,
                speed_factor: speed,
                r#loop: looping,
            };
            let report = replay(&spec, &engine).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string(&report).expect("serializable"));
            Ok(())
        }
        Command::BuildView { name, store } => {
            let engine = store.engine()?;
            let (batch, venues) = engine.build_view(&name).map_err(|e| api(e.into()))?;
            let summary = serde_json::json!({
                "name": name,
                "watermark": batch.watermark,
                "total": batch.counts.sum(),
                "ncols": batch.counts.ncols(),
                "nrows": batch.counts.nrows(),
                "venue_total": venues.map(|v| v.bins.total()),
            });
            println!("{summary}");
            Ok(())
        }
        Command::Export {
            view,
            format,
            out,
            layer,
            radius,
            population,
            baseline,
            store,
        } => {
            let engine = store.engine()?;
            let mut req = ExportRequest::new(&view, format.parse::<ExportFormat>().map_err(api)?);
            req.layer = layer.parse::<Layer>().map_err(api)?;
            req.radius = radius;
            req.population = population;
            req.baseline = baseline;
            let prepared = gateway::prepare_export(&engine, &req).map_err(api)?;
            let file = File::create(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            let n = gateway::write_export(&engine, &prepared, BufWriter::new(file)).map_err(api)?;
            eprintln!("wrote {n} records to {}", out.display());
            Ok(())
        }
        Command::GenGameday {
            out,
            seed,
            days,
            attendance,
        } => {
            let mut cfg = GamedayConfig::with_seed(seed);
            cfg.days = days.max(1);
            if let Some(a) = attendance {
                cfg.attendance = a;
            }
            let scenario = generate(&cfg);
            scenario.write(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            eprintln!("wrote {} events to {}", scenario.events.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
