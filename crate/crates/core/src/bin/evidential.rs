//! Command-line front end: train/evaluate evidential and ensemble models,
//! run calibration sweeps, compute diurnal profiles, and emit synthetic
//! datasets. Exit codes: 0 success, 2 config error, 3 data error,
//! 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evidential::error::Error;
use evidential::experiment::{
    diurnal_profile, load_dataset, run_evaluate, run_sweep_dropout, run_sweep_lambda, run_train,
    write_discard_csv, write_manifest, write_trace_csv, ExperimentConfig,
};
use evidential::nn::Network;
use evidential::rng::RngState;
use evidential::synth::{gen_categorical, gen_heteroscedastic, SyntheticTruth};

#[derive(Parser)]
#[command(
    name = "evidential",
    version,
    about = "Train and verify evidential networks and ensemble baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Override a config field by dotted path, e.g. --set train.epochs=50
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model file, trace CSV, and manifest
    Train(ConfigArgs),
    /// Evaluate a trained model and write a JSON report plus curve CSVs
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained model file (defaults to <output_dir>/model.json)
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train one model per lambda and select the PITD-minimizing value
    SweepLambda(ConfigArgs),
    /// MC-dropout calibration sweep over inference dropout rates
    SweepDropout {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Per-bin medians of prediction and uncertainty over a cycle column
    Diurnal {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Name of the cycle column in the CSV dataset
        #[arg(long)]
        cycle_column: String,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
        #[arg(long, default_value_t = 24.0)]
        cycle_length: f64,
    },
    /// Emit a synthetic dataset as CSV
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidParam(_) | Error::Dimension(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        Error::Numerical(_) | Error::Domain(_) => 4,
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(&args.config)?;
    ExperimentConfig::from_json(&text, &args.overrides)
}

fn model_path(cfg: &ExperimentConfig, explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("model.json"))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            let data = load_dataset(&cfg)?;
            let model = run_train(&cfg, &data)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            model.network.save(&cfg.output_dir.join("model.json"))?;
            write_trace_csv(&cfg.output_dir.join("trace.csv"), &model.trace)?;
            write_manifest(&cfg.output_dir, "train", &cfg, &["model.json", "trace.csv"])?;
            if let Some(last) = model.trace.last() {
                println!("trained {} epochs, final loss {last:.6}", model.trace.len());
            } else {
                println!("trained 0 epochs (initialization saved)");
            }
            Ok(())
        }
        Command::Evaluate { cfg: args, model } => {
            let cfg = load_config(&args)?;
            let data = load_dataset(&cfg)?;
            let net = Network::load(&model_path(&cfg, &model))?;
            let report = run_evaluate(&cfg, &net, &data)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            write_json(&cfg.output_dir.join("report.json"), &report)?;
            let mut outputs = vec!["report.json"];
            if let Some(cls) = &report.classification {
                write_discard_csv(&cfg.output_dir.join("discard.csv"), &cls.discard)?;
                outputs.push("discard.csv");
                println!(
                    "brier {:.4}  bss {:.4}  macro-F1 {:.4}",
                    cls.brier, cls.bss, cls.macro_f1
                );
            }
            if let Some(reg) = &report.regression {
                write_discard_csv(&cfg.output_dir.join("discard.csv"), &reg.discard)?;
                outputs.push("discard.csv");
                match &reg.pit {
                    Some(p) => println!(
                        "rmse {:.4}  pitd {:.4}  pitd skill {:.4}",
                        reg.rmse, p.pitd, p.pitd_skill
                    ),
                    None => println!("rmse {:.4}", reg.rmse),
                }
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_manifest(&cfg.output_dir, "evaluate", &cfg, &outputs)?;
            Ok(())
        }
        Command::SweepLambda(args) => {
            let cfg = load_config(&args)?;
            let data = load_dataset(&cfg)?;
            let result = run_sweep_lambda(&cfg, &data)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            write_json(&cfg.output_dir.join("lambda_sweep.json"), &result)?;
            let mut w = csv::Writer::from_path(cfg.output_dir.join("lambda_sweep.csv"))?;
            w.write_record(["lambda", "pitd", "pitd_skill", "error"])?;
            for row in &result.rows {
                w.write_record([
                    format!("{}", row.lambda),
                    row.pitd.map(|v| format!("{v}")).unwrap_or_default(),
                    row.pitd_skill.map(|v| format!("{v}")).unwrap_or_default(),
                    row.error.clone().unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            write_manifest(
                &cfg.output_dir,
                "sweep-lambda",
                &cfg,
                &["lambda_sweep.json", "lambda_sweep.csv"],
            )?;
            println!("selected lambda {}", result.selected_lambda);
            Ok(())
        }
        Command::SweepDropout { cfg: args, model } => {
            let cfg = load_config(&args)?;
            let data = load_dataset(&cfg)?;
            let net = Network::load(&model_path(&cfg, &model))?;
            let rows = run_sweep_dropout(&cfg, &net, &data)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            write_json(&cfg.output_dir.join("dropout_sweep.json"), &rows)?;
            let mut w = csv::Writer::from_path(cfg.output_dir.join("dropout_sweep.csv"))?;
            w.write_record(["rate", "pitd", "mean_discard_skill", "mean_spread"])?;
            for row in &rows {
                w.write_record([
                    format!("{}", row.rate),
                    format!("{}", row.pitd),
                    format!("{}", row.mean_discard_skill),
                    format!("{}", row.mean_spread),
                ])?;
            }
            w.flush()?;
            write_manifest(
                &cfg.output_dir,
                "sweep-dropout",
                &cfg,
                &["dropout_sweep.json", "dropout_sweep.csv"],
            )?;
            for row in &rows {
                println!(
                    "rate {:.2}  pitd {:.4}  mean discard skill {:.4}",
                    row.rate, row.pitd, row.mean_discard_skill
                );
            }
            Ok(())
        }
        Command::Diurnal { cfg: args, model, cycle_column, bin_width, cycle_length } => {
            let cfg = load_config(&args)?;
            let evidential::experiment::DatasetSource::Csv { path, schema } = &cfg.dataset
            else {
                return Err(Error::Config(
                    "diurnal profiles need a CSV dataset with a cycle column".into(),
                ));
            };
            // read the cycle column alongside the features
            let mut reader = csv::Reader::from_path(path)?;
            let headers: Vec<String> =
                reader.headers()?.iter().map(|h| h.to_string()).collect();
            let cyc_idx = headers
                .iter()
                .position(|h| *h == cycle_column)
                .ok_or_else(|| Error::Data(format!("missing column '{cycle_column}'")))?;
            let feat_idx: Vec<usize> = schema
                .feature_columns
                .iter()
                .map(|c| {
                    headers
                        .iter()
                        .position(|h| h == c)
                        .ok_or_else(|| Error::Data(format!("missing column '{c}'")))
                })
                .collect::<Result<_, _>>()?;
            let mut feats = Vec::new();
            let mut cycle = Vec::new();
            let mut n = 0usize;
            for (r, rec) in reader.records().enumerate() {
                let rec = rec?;
                let row = r + 1;
                let parse = |col: usize| -> Result<f64, Error> {
                    rec.get(col)
                        .and_then(|s| s.trim().parse::<f64>().ok())
                        .ok_or_else(|| {
                            Error::Data(format!(
                                "row {row}, column '{}': not a number",
                                headers[col]
                            ))
                        })
                };
                for &c in &feat_idx {
                    feats.push(parse(c)?);
                }
                cycle.push(parse(cyc_idx)?);
                n += 1;
            }
            let inputs = ndarray::Array2::from_shape_vec((n, feat_idx.len()), feats)
                .map_err(|e| Error::Data(e.to_string()))?;
            let net = Network::load(&model_path(&cfg, &model))?;
            let bins = diurnal_profile(&net, &inputs, &cycle, bin_width, cycle_length)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let mut w = csv::Writer::from_path(cfg.output_dir.join("diurnal.csv"))?;
            w.write_record([
                "bin_start",
                "bin_end",
                "median_prediction",
                "median_aleatoric",
                "median_epistemic",
                "count",
            ])?;
            for b in &bins {
                w.write_record([
                    format!("{}", b.bin_start),
                    format!("{}", b.bin_end),
                    format!("{}", b.median_prediction),
                    b.median_aleatoric.map(|v| format!("{v}")).unwrap_or_default(),
                    b.median_epistemic.map(|v| format!("{v}")).unwrap_or_default(),
                    b.count.to_string(),
                ])?;
            }
            w.flush()?;
            write_manifest(&cfg.output_dir, "diurnal", &cfg, &["diurnal.csv"])?;
            println!("wrote {} bins", bins.len());
            Ok(())
        }
        Command::Synth { cfg: args, out } => {
            let cfg = load_config(&args)?;
            let mut rng = RngState::new(cfg.seed).child(0x73796e7468); // "synth"
            let d = match &cfg.dataset {
                evidential::experiment::DatasetSource::SynthCategorical {
                    n,
                    k,
                    noise_level,
                } => gen_categorical(*n, *k, *noise_level, &mut rng)?,
                evidential::experiment::DatasetSource::SynthHeteroscedastic { n, n_ood } => {
                    gen_heteroscedastic(*n, *n_ood, &mut rng)?
                }
                evidential::experiment::DatasetSource::Csv { .. } => {
                    return Err(Error::Config(
                        "synth needs a synthetic dataset source in the config".into(),
                    ))
                }
            };
            let mut w = csv::Writer::from_path(&out)?;
            let n_feat = d.features.ncols();
            let mut header: Vec<String> =
                (0..n_feat).map(|j| format!("x{j}")).collect();
            match &d.truth {
                SyntheticTruth::Categorical { probs } => {
                    header.push("label".into());
                    header.push("day".into());
                    for j in 0..probs.ncols() {
                        header.push(format!("true_p{j}"));
                    }
                    w.write_record(&header)?;
                    for i in 0..d.features.nrows() {
                        let mut rec: Vec<String> = (0..n_feat)
                            .map(|j| format!("{}", d.features[[i, j]]))
                            .collect();
                        let label = (0..d.targets.ncols())
                            .find(|&j| d.targets[[i, j]] == 1.0)
                            .unwrap_or(0);
                        rec.push(label.to_string());
                        rec.push(d.groups[i].to_string());
                        for j in 0..probs.ncols() {
                            rec.push(format!("{}", probs[[i, j]]));
                        }
                        w.write_record(&rec)?;
                    }
                }
                SyntheticTruth::Continuous { mean, variance } => {
                    header.extend(
                        ["y", "day", "true_mean", "true_variance", "ood"]
                            .map(String::from),
                    );
                    w.write_record(&header)?;
                    for i in 0..d.features.nrows() {
                        let mut rec: Vec<String> = (0..n_feat)
                            .map(|j| format!("{}", d.features[[i, j]]))
                            .collect();
                        rec.push(format!("{}", d.targets[[i, 0]]));
                        rec.push(d.groups[i].to_string());
                        rec.push(format!("{}", mean[i]));
                        rec.push(format!("{}", variance[i]));
                        rec.push(u8::from(d.ood_flag[i]).to_string());
                        w.write_record(&rec)?;
                    }
                }
            }
            w.flush()?;
            println!("wrote {} rows to {}", d.features.nrows(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
