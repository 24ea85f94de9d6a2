use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use transit_retrieve::error::Result;
use transit_retrieve::model::BaggedModel;
use transit_retrieve::pipeline::{
    cross_validate, extract_dataset, fit_pipeline_model, predict_pipeline, DatasetCalibration,
    PipelineConfig,
};
use transit_retrieve::scoring::{
    fit_reference, make_report, save_landscape_csv, score_landscape, ScoreConfig,
};
use transit_retrieve::simgen::{generate_dataset, SimConfig};
use transit_retrieve::{features::FeatureMatrix, io};

#[derive(Parser)]
#[command(name = "transit-retrieve", version, about = "Transmission-spectrum retrieval pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every stage that needs a pipeline configuration.
#[derive(Args)]
struct ConfigOpts {
    /// Pipeline preset: "iter1".."iter7" (or just the number).
    #[arg(long, default_value = "iter7")]
    preset: String,
    /// Override the preset's geometric correction setting.
    #[arg(long, value_parser = ["on", "off"])]
    geometric_correction: Option<String>,
    /// JSON pipeline config file; takes precedence over --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

impl ConfigOpts {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => serde_json::from_slice(&std::fs::read(path)?).map_err(|e| {
                transit_retrieve::Error::Config(format!("{}: {e}", path.display()))
            })?,
            None => {
                let n = self
                    .preset
                    .strip_prefix("iter")
                    .unwrap_or(&self.preset)
                    .parse::<usize>()
                    .map_err(|_| {
                        transit_retrieve::Error::Config(format!(
                            "bad preset {:?}, expected iter1..iter7",
                            self.preset
                        ))
                    })?;
                PipelineConfig::preset(n)?
            }
        };
        if let Some(gc) = &self.geometric_correction {
            config.geometric_correction = gc == "on";
        }
        config.validate()?;
        if self.print_config {
            println!("{}", serde_json::to_string_pretty(&config).expect("serializable config"));
            std::process::exit(0);
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        planets: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable jitter noise (detector effects still apply).
        #[arg(long)]
        no_noise: bool,
        /// JSON simulation config file; flags above override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the calibration chain on one planet and write the calibrated cubes.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        planet: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Extract the feature matrix for every planet in a dataset.
    Extract {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Train the regression stage from extracted features and targets.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Predict spectra with uncertainties for extracted features.
    Predict {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Score predictions against a dataset's targets.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Star-grouped K-fold cross-validation on one dataset.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Export the per-term likelihood over an (error, sigma) grid.
    Landscape {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
}

fn timed<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    log::info!("{stage}: {:.2}s", start.elapsed().as_secs_f64());
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { out, planets, seed, no_noise, config } => {
            let mut sim: SimConfig = match &config {
                Some(path) => serde_json::from_slice(&std::fs::read(path)?).map_err(|e| {
                    transit_retrieve::Error::Config(format!("{}: {e}", path.display()))
                })?,
                None => SimConfig::default(),
            };
            if let Some(n) = planets {
                sim.n_planets = n;
            }
            if let Some(s) = seed {
                sim.seed = s;
            }
            if no_noise {
                sim.noise = false;
            }
            let manifest = timed("simulate", || generate_dataset(&sim, &out))?;
            println!("wrote {} planets to {}", manifest.planets.len(), out.display());
        }
        Command::Calibrate { data, planet, out, opts } => {
            let config = opts.resolve()?;
            let manifest = io::load_manifest(&data)?;
            let entry = manifest
                .planets
                .iter()
                .find(|p| p.planet_id == planet)
                .ok_or_else(|| {
                    transit_retrieve::Error::Data(format!("planet {planet:?} not in manifest"))
                })?;
            let calib = DatasetCalibration::load(&data)?;
            timed("calibrate", || {
                std::fs::create_dir_all(&out)?;
                for (rel, set, name) in
                    [(&entry.airs, &calib.airs, "airs"), (&entry.fgs, &calib.fgs, "fgs")]
                {
                    let raw = io::load_cube(&data.join(rel))?;
                    let cube = transit_retrieve::calib::calibrate(&raw, set, &config.calib)?;
                    io::save_cube(&cube, &out.join(format!("{name}.bin")))?;
                }
                Ok(())
            })?;
            println!("calibrated {planet} into {}", out.display());
        }
        Command::Extract { data, out, opts } => {
            let config = opts.resolve()?;
            let manifest = io::load_manifest(&data)?;
            let calib = DatasetCalibration::load(&data)?;
            let features = timed("extract", || extract_dataset(&manifest, &calib, &config))?;
            features.save_csv(&out)?;
            println!(
                "extracted {} features for {} planets",
                features.names.len(),
                features.planet_ids.len()
            );
        }
        Command::Train { data, features, model_out, opts } => {
            let config = opts.resolve()?;
            let manifest = io::load_manifest(&data)?;
            let targets = io::load_targets(&manifest)?;
            let matrix = FeatureMatrix::load_csv(&features)?;
            let model = timed("train", || fit_pipeline_model(&matrix, &targets, &config))?;
            model.save(&model_out)?;
            println!("saved model with {} members to {}", model.members.len(), model_out.display());
        }
        Command::Predict { features, model, out, opts } => {
            let config = opts.resolve()?;
            let matrix = FeatureMatrix::load_csv(&features)?;
            let model = BaggedModel::load(&model)?;
            let preds = timed("predict", || predict_pipeline(&model, &matrix, &config))?;
            io::save_predictions(&out, &preds)?;
            println!("wrote {} predictions to {}", preds.len(), out.display());
        }
        Command::Score { data, predictions } => {
            let manifest = io::load_manifest(&data)?;
            let targets = io::load_targets(&manifest)?;
            let preds = io::load_predictions(&predictions)?;
            let baseline = fit_reference(&targets)?;
            let report = timed("score", || {
                make_report(&preds, &targets, &baseline, &ScoreConfig::default(), None)
            })?;
            println!("L        = {:.6}", report.l);
            println!("L_ref    = {:.6}", report.l_ref);
            println!("L_ideal  = {:.6}", report.l_ideal);
            println!("score    = {:.6} (clipped {:.6})", report.score_raw, report.score_clipped);
            for (star, l) in &report.per_star {
                println!("  star {star}: L = {l:.6}");
            }
        }
        Command::Cv { data, k, seed, opts } => {
            let config = opts.resolve()?;
            let manifest = io::load_manifest(&data)?;
            let targets = io::load_targets(&manifest)?;
            let calib = DatasetCalibration::load(&data)?;
            let features = timed("extract", || extract_dataset(&manifest, &calib, &config))?;
            let report = timed("cross-validate", || {
                cross_validate(&manifest, &features, &targets, &config, k, seed, &ScoreConfig::default())
            })?;
            for fold in &report.folds {
                println!(
                    "fold {}: score = {:.6} (clipped {:.6})",
                    fold.fold.unwrap_or(0),
                    fold.score_raw,
                    fold.score_clipped
                );
            }
            println!(
                "macro score = {:.6} (clipped {:.6})",
                report.macro_score_raw, report.macro_score_clipped
            );
        }
        Command::Landscape { out, grid } => {
            let errors: Vec<f64> = (0..grid).map(|i| 1e-4 * i as f64 / (grid - 1) as f64).collect();
            let sigmas: Vec<f64> = (0..grid)
                .map(|i| {
                    // log-spaced from 1e-6 to 1e-3
                    10f64.powf(-6.0 + 3.0 * i as f64 / (grid - 1) as f64)
                })
                .collect();
            let values = score_landscape(&errors, &sigmas)?;
            save_landscape_csv(&out, &errors, &sigmas, &values)?;
            println!("wrote {grid}x{grid} landscape to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(threads) = std::env::var("TRANSIT_RETRIEVE_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not set thread pool size: {e}");
                }
            }
            _ => log::warn!("ignoring invalid TRANSIT_RETRIEVE_THREADS={threads:?}"),
        }
    }
    let cli = match Cli::try_parse_from(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with successful exit
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ transit_retrieve::Error::Io(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
