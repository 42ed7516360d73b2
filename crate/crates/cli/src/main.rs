//! `geoalign` command-line tool.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use geoalign::checkpoint::Checkpoint;
use geoalign::config::{parse_override, Value};
use geoalign::data::{generate_world, load_dataset, save_dataset, split, Dataset, WorldConfig};
use geoalign::eval::{evaluate, write_query_results, EvalConfig, EvalReport};
use geoalign::geodesy::distances_from;
use geoalign::supervision::label_row;
use geoalign::trainer::{train, write_log, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "geoalign", version, about = "Spatially weighted contrastive geo-alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic world and write it as a dataset file.
    GenData {
        /// World config file (flat key = value). Built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset path (JSON lines).
        #[arg(long)]
        out: PathBuf,
        /// Override a config key, e.g. --set n_cities=4. Repeatable; applied after --config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Split a dataset, train on the train part and write a checkpoint.
    Train {
        /// Dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Training config file (flat key = value). Built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Supervision mode; overrides `mode` from the config.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Per-step training log (JSON lines). Default: <OUT>.log.jsonl
        #[arg(long)]
        log: Option<PathBuf>,
        /// Override a config key, e.g. --set epochs=10. Repeatable; applied after --config and --mode.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a split and write a report.
    Eval {
        /// Dataset file (the one the checkpoint was trained on).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which part of the dataset to evaluate, using the split stored in the checkpoint.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Output report path (JSON).
        #[arg(long)]
        report: PathBuf,
        /// Optional per-query results (JSON lines).
        #[arg(long)]
        per_query: Option<PathBuf>,
        /// Neighbour radius for SSI, meters.
        #[arg(long, default_value_t = 1000.0)]
        d_nbr: f64,
        /// Row label. Default: the checkpoint's training mode.
        #[arg(long)]
        label: Option<String>,
    },
    /// Print reports side by side, best value per column marked with `*`.
    Compare {
        /// Two or more report files.
        #[arg(long, num_args = 2.., required = true)]
        reports: Vec<PathBuf>,
    },
    /// Print the soft-label row of one sample against the whole dataset.
    InspectWeights {
        /// Dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Training config file supplying the kernel settings. Built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Zero-based sample index.
        #[arg(long)]
        index: usize,
        /// Override a config key, e.g. --set sigma_m=100. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Sw,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Test,
    Train,
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { config, out, overrides } => gen_data(config.as_deref(), &out, &overrides),
        Command::Train {
            data,
            config,
            mode,
            out,
            log,
            overrides,
        } => run_train(&data, config.as_deref(), mode, &out, log, &overrides),
        Command::Eval {
            data,
            checkpoint,
            split,
            report,
            per_query,
            d_nbr,
            label,
        } => run_eval(&data, &checkpoint, split, &report, per_query.as_deref(), d_nbr, label),
        Command::Compare { reports } => compare(&reports),
        Command::InspectWeights {
            data,
            config,
            index,
            overrides,
        } => inspect_weights(&data, config.as_deref(), index, &overrides),
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, Value)>> {
    raw.iter().map(|s| parse_override(s).map_err(Into::into)).collect()
}

fn gen_data(config: Option<&Path>, out: &Path, overrides: &[String]) -> Result<()> {
    let cfg = WorldConfig::load(config, &parse_overrides(overrides)?)?;
    let ds = generate_world(&cfg)?;
    save_dataset(&ds, out)?;
    let (lat0, lat1, lon0, lon1) = ds.bounding_box().context("generated dataset is empty")?;
    println!("wrote {} samples to {}", ds.len(), out.display());
    println!("bounding box: lat [{lat0:.5}, {lat1:.5}], lon [{lon0:.5}, {lon1:.5}]");
    Ok(())
}

fn run_train(
    data: &Path,
    config: Option<&Path>,
    mode: Option<ModeArg>,
    out: &Path,
    log: Option<PathBuf>,
    overrides: &[String],
) -> Result<()> {
    let mut pairs = Vec::new();
    if let Some(m) = mode {
        let name = match m {
            ModeArg::Sw => "sw",
            ModeArg::Baseline => "baseline",
        };
        pairs.push(("mode".to_string(), Value::String(name.into())));
    }
    pairs.extend(parse_overrides(overrides)?);
    let cfg = TrainConfig::load(config, &pairs)?;
    let ds = load_dataset(data)?;
    let (train_set, test_set) = split(&ds, cfg.train_frac, cfg.split_seed)?;
    log::info!("split: {} train / {} test", train_set.len(), test_set.len());

    let t0 = Instant::now();
    let outcome = train(&train_set, &cfg)?;
    let ck = Checkpoint::new(outcome.params, &cfg);
    ck.save(out)?;

    let log_path = log.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let f = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut w = BufWriter::new(f);
    write_log(&outcome.log, &mut w)?;
    w.flush().with_context(|| format!("writing {}", log_path.display()))?;

    let last = outcome.log.last();
    println!(
        "mode {} | {} train samples | {} epochs, {} steps | final l_total {} | {:.1}s",
        cfg.mode.as_str(),
        train_set.len(),
        cfg.epochs,
        outcome.log.len(),
        last.map_or("n/a".to_string(), |r| format!("{:.5}", r.l_total)),
        t0.elapsed().as_secs_f64()
    );
    println!("checkpoint: {}", out.display());
    println!("log: {}", log_path.display());
    Ok(())
}

fn select_split(ds: &Dataset, ck: &Checkpoint, which: SplitArg) -> Result<Dataset> {
    if which == SplitArg::All {
        return Ok(ds.clone());
    }
    let (tr, te) = split(ds, ck.train_frac, ck.split_seed)?;
    Ok(if which == SplitArg::Train { tr } else { te })
}

fn run_eval(
    data: &Path,
    checkpoint: &Path,
    which: SplitArg,
    report_path: &Path,
    per_query: Option<&Path>,
    d_nbr: f64,
    label: Option<String>,
) -> Result<()> {
    if !(d_nbr.is_finite() && d_nbr > 0.0) {
        bail!("--d-nbr must be a positive number of meters, got {d_nbr}");
    }
    let ds = load_dataset(data)?;
    let ck = Checkpoint::load(checkpoint)?;
    let part = select_split(&ds, &ck, which)?;
    let cfg = EvalConfig {
        d_nbr_m: d_nbr,
        ..EvalConfig::default()
    };
    let label = label.unwrap_or_else(|| ck.mode.as_str().to_string());
    let (report, queries) = evaluate(&ck.params, &part, &cfg, &label)
        .with_context(|| format!("evaluating {} on {}", checkpoint.display(), data.display()))?;
    fs::write(report_path, report.to_json()?).with_context(|| format!("writing {}", report_path.display()))?;
    if let Some(p) = per_query {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        let mut w = BufWriter::new(f);
        write_query_results(&queries, &mut w)?;
        w.flush().with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{}", render_table(&[report], false));
    Ok(())
}

const COLUMNS: [(&str, bool); 6] = [
    ("Med. GE (m)", false),
    ("Mean GE (m)", false),
    ("R@1", true),
    ("Geo-Align", true),
    ("SSI", true),
    ("City-Align", true),
];

fn column_values(r: &EvalReport) -> [Option<f64>; 6] {
    [
        Some(r.med_ge_m),
        Some(r.mean_ge_m),
        Some(r.r_at_1),
        Some(r.geo_align),
        r.ssi,
        Some(r.city_align),
    ]
}

/// Best value per column: lowest for errors, highest otherwise. Every row
/// equal to the best is marked, so ties are marked the same way every time.
fn best_marks(reports: &[EvalReport]) -> Vec<[bool; 6]> {
    let vals: Vec<[Option<f64>; 6]> = reports.iter().map(column_values).collect();
    let mut marks = vec![[false; 6]; reports.len()];
    for (c, &(_, higher)) in COLUMNS.iter().enumerate() {
        let best = vals.iter().filter_map(|v| v[c]).reduce(|a, b| {
            if (higher && b > a) || (!higher && b < a) {
                b
            } else {
                a
            }
        });
        if let Some(best) = best {
            for (r, v) in vals.iter().enumerate() {
                marks[r][c] = v[c] == Some(best);
            }
        }
    }
    marks
}

fn render_table(reports: &[EvalReport], mark: bool) -> String {
    let marks = if mark {
        best_marks(reports)
    } else {
        vec![[false; 6]; reports.len()]
    };
    let label_w = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<label_w$}", "model");
    for (name, _) in COLUMNS {
        out += &format!(" | {name:>12}");
    }
    out.push('\n');
    out += &"-".repeat(label_w + COLUMNS.len() * 15);
    out.push('\n');
    for (r, m) in reports.iter().zip(&marks) {
        out += &format!("{:<label_w$}", r.label);
        for (c, v) in column_values(r).iter().enumerate() {
            let cell = match (c, v) {
                (_, None) => "n/a".to_string(),
                (0 | 1, Some(x)) => format!("{x:.2}"),
                (_, Some(x)) => format!("{x:.3}"),
            };
            let cell = if m[c] { format!("{cell}*") } else { cell };
            out += &format!(" | {cell:>12}");
        }
        out.push('\n');
    }
    out
}

fn compare(paths: &[PathBuf]) -> Result<()> {
    if paths.len() < 2 {
        bail!("compare needs at least two reports");
    }
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            EvalReport::from_json(&text).with_context(|| format!("parsing report {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", render_table(&reports, true));
    Ok(())
}

fn inspect_weights(data: &Path, config: Option<&Path>, index: usize, overrides: &[String]) -> Result<()> {
    let cfg = TrainConfig::load(config, &parse_overrides(overrides)?)?;
    let ds = load_dataset(data)?;
    if index >= ds.len() {
        bail!("index {index} out of range for {} samples", ds.len());
    }
    let points = ds.points();
    let dists = distances_from(points[index], &points)?;
    let row = label_row(index, &dists, &ds.samples, &cfg.kernel)?;
    let mut entries: Vec<usize> = (0..ds.len()).filter(|&j| row.weight[j] > 0.0).collect();
    entries.sort_by(|&a, &b| row.weight[b].total_cmp(&row.weight[a]).then(a.cmp(&b)));

    let k = &cfg.kernel;
    println!(
        "sample {index} ({}): sigma {} m, d_cut {} m, alpha_street {}, beta_city {}",
        ds.samples[index].id, k.sigma_m, k.d_cut_m, k.alpha_street, k.beta_city
    );
    println!(
        "{:>6}  {:<14} {:>12} {:>10} {:>7} {:>10}",
        "index", "id", "distance_m", "kernel", "prior", "weight"
    );
    for j in entries {
        println!(
            "{:>6}  {:<14} {:>12.3} {:>10.6} {:>7.3} {:>10.6}",
            j, ds.samples[j].id, dists[j], row.kernel[j], row.prior[j], row.weight[j]
        );
    }
    Ok(())
}
