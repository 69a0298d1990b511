use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hazardpipe::api::parse_bbox;
use hazardpipe::{build_detectors, demo_scenario, open_blobs, open_pipeline, router, AppState};
use hazardpipe_core::domain::DetectionId;
use hazardpipe_core::ingest::RawSubmission;
use hazardpipe_core::metrics::{evaluate, GroundTruth, Prediction, PredictionsByImage, Truth};
use hazardpipe_core::sim::run_ensemble;
use hazardpipe_core::Config;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "hazardpipe", version, about = "Citizen hazard report pipeline")]
struct Cli {
    /// TOML config file; `HAZARDPIPE_*` environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `simulation.seed` and `explain.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Submit the synthetic scenario images on startup.
        #[arg(long)]
        demo: bool,
    },
    /// Run the synthetic end-to-end scenario over several seeds.
    Simulate {
        /// Scenario or config TOML, or `default`.
        scenario: String,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Score predictions against ground truth (JSON lines, one image per line).
    Evaluate { preds: PathBuf, truth: PathBuf },
    /// Run LIME for a stored detection and print the explanation.
    Explain {
        detection_id: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Write the validated-report heatmap as GeoJSON.
    ExportHeatmap {
        /// `min_lon,min_lat,max_lon,max_lat`
        #[arg(allow_hyphen_values = true)]
        bbox: String,
        #[arg(long)]
        resolution: Option<f64>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Bad input; exits with status 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Config> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Config::from_toml_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => Config::default(),
    };
    let mut cfg = cfg.with_env().map_err(|e| invalid(e.to_string()))?;
    if let Some(s) = seed {
        cfg.simulation.seed = s;
        cfg.explain.seed = s;
    }
    Ok(cfg)
}

fn data_dir(cfg: &Config, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| PathBuf::from(&cfg.server.data_dir))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let base = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Serve { bind, data_dir: dir, demo } => serve(base, bind, dir, demo),
        Command::Simulate { scenario, out, seeds } => simulate(base, &scenario, &out, seeds, cli.seed),
        Command::Evaluate { preds, truth } => evaluate_files(&preds, &truth),
        Command::Explain {
            detection_id,
            data_dir: dir,
        } => {
            let dir = data_dir(&base, dir);
            let blobs = open_blobs(&dir)?;
            let scenario = base.detector.command.is_empty().then(|| demo_scenario(&base)).transpose()?;
            let detectors = build_detectors(&base, &blobs, scenario.as_ref())?;
            let pipeline = open_pipeline(base, &dir, detectors, blobs)?;
            let id = DetectionId::new(detection_id);
            if pipeline.detection_record(&id).is_none() {
                return Err(invalid(format!("unknown detection {id}")));
            }
            let lime = pipeline.explain_now(&id)?;
            println!("{}", serde_json::to_string_pretty(&lime)?);
            Ok(())
        }
        Command::ExportHeatmap {
            bbox,
            resolution,
            data_dir: dir,
            out,
        } => {
            let region = parse_bbox(&bbox).map_err(invalid)?;
            if resolution.is_some_and(|r| !(r.is_finite() && r > 0.0)) {
                return Err(invalid("resolution must be positive"));
            }
            let dir = data_dir(&base, dir);
            let blobs = open_blobs(&dir)?;
            let pipeline = open_pipeline(base, &dir, Vec::new(), blobs)?;
            let geojson = pipeline.heatmap(Some(region), resolution)?;
            let text = serde_json::to_string_pretty(&geojson)?;
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

fn serve(cfg: Config, bind: Option<String>, dir: Option<PathBuf>, demo: bool) -> anyhow::Result<()> {
    let dir = data_dir(&cfg, dir);
    let bind = bind.unwrap_or_else(|| cfg.server.bind.clone());
    let blobs = open_blobs(&dir)?;
    let scenario = if cfg.detector.command.is_empty() {
        Some(demo_scenario(&cfg)?)
    } else {
        None
    };
    let detectors = build_detectors(&cfg, &blobs, scenario.as_ref())?;
    let pipeline = Arc::new(open_pipeline(cfg, &dir, detectors, blobs)?);

    let pending = pipeline.awaiting_detection();
    let p = Arc::clone(&pipeline);
    std::thread::spawn(move || {
        for id in pending {
            if let Err(e) = p.detect(&id) {
                eprintln!("detection failed for {id}: {e}");
            }
        }
        if let (true, Some(s)) = (demo, scenario) {
            let mut accepted = 0;
            for img in &s.images {
                let raw = RawSubmission {
                    image_bytes: img.bytes.clone(),
                    declared_geo: None,
                    device_time: None,
                    submitter_token: img.submitter.clone(),
                };
                match p.process(&raw) {
                    Ok(o) if o.report_id().is_some() => accepted += 1,
                    Ok(_) => {}
                    Err(e) => eprintln!("demo submission {} failed: {e}", img.id),
                }
            }
            eprintln!("demo: {accepted} reports submitted");
        }
    });

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(AppState { pipeline }))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn simulate(
    base: Config,
    scenario: &str,
    out: &Path,
    seeds: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let mut cfg = if scenario == "default" {
        base
    } else {
        let text = fs::read_to_string(scenario).with_context(|| format!("reading {scenario}"))?;
        let mut c = Config::from_scenario_or_config_str(&text).map_err(|e| invalid(format!("{scenario}: {e}")))?;
        if let Some(s) = seed {
            c.simulation.seed = s;
        }
        c
    };
    if let Some(n) = seeds {
        cfg.simulation.n_seeds = n;
    }
    cfg.simulation.validate().map_err(|e| invalid(e.to_string()))?;
    let report = run_ensemble(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("metrics.csv"), report.csv())?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&report.summary_json())?)?;
    for run in &report.runs {
        fs::write(
            out.join(format!("sites-{}.geojson", run.seed)),
            serde_json::to_string_pretty(&run.geojson)?,
        )?;
        println!(
            "seed {}: P {:.4} R {:.4} mAP50 {:.4} mAP50-95 {:.4} agreement {:.4} latency -{:.1}% sites {}/{} overhead {:.2} ms/image",
            run.seed,
            run.aggregate.box_precision,
            run.aggregate.recall,
            run.aggregate.map_50,
            run.aggregate.map_50_95,
            run.agreement.unwrap_or(f64::NAN),
            100.0 * run.aggregate.latency_reduction.unwrap_or(f64::NAN),
            run.sites.recovered,
            report.n_planted,
            run.overhead_ms_per_image,
        );
    }
    println!(
        "mean: P {:.4} R {:.4} agreement {:.4} latency -{:.1}% sites {:.1}/{} ({:.1} s)",
        report.box_precision,
        report.recall,
        report.agreement,
        100.0 * report.latency_reduction,
        report.sites_recovered_mean,
        report.n_planted,
        report.runtime_s,
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Deserialize)]
struct PredLine {
    image_id: String,
    #[serde(default, alias = "detections")]
    predictions: Vec<Prediction>,
}

#[derive(Deserialize)]
struct TruthLine {
    image_id: String,
    #[serde(default, alias = "labels")]
    truths: Vec<Truth>,
}

fn read_lines<L: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<L>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn evaluate_files(preds: &Path, truth: &Path) -> anyhow::Result<()> {
    let mut p: PredictionsByImage = BTreeMap::new();
    for l in read_lines::<PredLine>(preds)? {
        p.entry(l.image_id).or_default().extend(l.predictions);
    }
    let mut t: GroundTruth = BTreeMap::new();
    for l in read_lines::<TruthLine>(truth)? {
        t.entry(l.image_id).or_default().extend(l.truths);
    }
    let report = evaluate(&p, &t).map_err(|e| invalid(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
