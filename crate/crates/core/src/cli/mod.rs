//! The `mcic` command line.

pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backbone::{Tensor, TinyZoneNet};
use crate::data::image::resize_mask_to;
use crate::data::{
    generate_phantom_dataset, preprocess, read_image, write_mask, Dataset, DatasetManifest, PhantomConfig, Split,
};
use crate::engine::{
    checkpoint, evaluate_state, load_checkpoint, save_checkpoint, train, HistoryRow, Mode, TrainConfig, TrainData,
    TrainState,
};
use crate::error::{Error, ErrorClass, Result};
use crate::metrics::report::fmt_opt;
use crate::metrics::{evaluate, predict_masks};
use plot::{line_chart, Series};

#[derive(Debug, Parser)]
#[command(name = "mcic", version, about = "Semi-supervised zone segmentation trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    Synth(SynthArgs),
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Write predicted masks for image files.
    Predict(PredictArgs),
    /// Compare run directories and draw their curves.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Phantom config JSON (defaults when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Train config JSON (defaults when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<String>,
    /// Keep only the first n labeled patients (sorted ids).
    #[arg(long)]
    labeled_patients: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Start from the parameters of this checkpoint.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// With --init-from, zero the optimizer moments.
    #[arg(long, requires = "init_from")]
    reset_optimizer: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Evaluate the student instead of the teacher.
    #[arg(long)]
    student: bool,
    /// Directory for the report files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    student: bool,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.class())
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, contents).map_err(|e| Error::io(p, e))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: PhantomConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PhantomConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let manifest = generate_phantom_dataset(&cfg, &a.out)?;
    println!(
        "wrote {} slices ({} labeled, {} unlabeled, {} test) to {}",
        manifest.entries.len(),
        manifest.count(Split::TrainLabeled),
        manifest.count(Split::TrainUnlabeled),
        manifest.count(Split::Test),
        a.out.display()
    );
    Ok(())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path)?;
    m.validate()?;
    Ok(m)
}

/// Training state seeded from a checkpoint for fine-tuning.
fn state_from_checkpoint(net: &TinyZoneNet, cfg: &TrainConfig, path: &Path, reset: bool) -> Result<TrainState> {
    let (ck, _) = load_checkpoint(path)?;
    let fresh = net.init_params(0);
    let compatible = fresh.is_congruent(&ck.state.student)
        && fresh
            .params()
            .iter()
            .zip(ck.state.student.params())
            .all(|(a, b)| a.trainable == b.trainable);
    if !compatible {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with an incompatible architecture",
            path.display()
        )));
    }
    let old = ck.into_state(reset);
    let mut state = TrainState::from_params(old.student, old.teacher, cfg);
    state.moments = old.moments;
    Ok(state)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = &a.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let mut manifest = load_manifest(&a.manifest)?;
    if let Some(n) = a.labeled_patients {
        manifest = manifest.restrict_labeled_patients(n);
    }
    let ds = Dataset::load(&manifest, cfg.arch.input_size)?;
    let data = TrainData::new(&ds, &cfg)?;
    let net = TinyZoneNet::new(cfg.arch.clone())?;
    let mut state = match &a.init_from {
        Some(p) => state_from_checkpoint(&net, &cfg, p, a.reset_optimizer)?,
        None => TrainState::new(&net, &cfg),
    };

    let out = &a.out;
    let ckpt_dir = out.join("checkpoints");
    for d in [out.clone(), ckpt_dir.clone(), out.join("reports"), out.join("plots")] {
        mkdir(&d)?;
    }
    write(&out.join("config.json"), cfg.to_json() + "\n")?;
    let hist_path = out.join("history.csv");
    let mut hist = fs::File::create(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
    writeln!(hist, "{}", HistoryRow::CSV_HEADER).map_err(|e| Error::io(&hist_path, e))?;

    let epochs = cfg.epochs;
    let mut hook = |st: &TrainState, row: &HistoryRow, _: Option<&crate::metrics::MetricsReport>| -> Result<()> {
        writeln!(hist, "{}", row.csv_line()).map_err(|e| Error::io(&hist_path, e))?;
        if cfg.checkpoint_every > 0 && st.epoch.is_multiple_of(cfg.checkpoint_every) && st.epoch < epochs {
            save_checkpoint(
                &ckpt_dir.join(format!("epoch-{:04}.ckpt", st.epoch)),
                &cfg.arch,
                &cfg,
                st,
            )?;
        }
        if !a.quiet {
            eprintln!(
                "epoch {}/{epochs} loss_sup={:.4} loss_con={:.5} w={:.4} mask={:.3} dice_pz={} dice_tz={}",
                row.epoch + 1,
                row.loss_sup,
                row.loss_con,
                row.ramp_w,
                row.mask_frac,
                fmt_opt(row.dice_pz),
                fmt_opt(row.dice_tz)
            );
        }
        Ok(())
    };
    let history = train(&net, &cfg, &data, &mut state, &mut hook)?;
    hist.flush().map_err(|e| Error::io(&hist_path, e))?;

    let id = save_checkpoint(&ckpt_dir.join("final.ckpt"), &cfg.arch, &cfg, &state)?;
    if !data.test.is_empty() {
        let report = evaluate_state(&net, &cfg, &state, &data.test)?.with_provenance(&state.config_hash, &id, cfg.seed);
        report.write(
            &out.join("reports").join("test.json"),
            &out.join("reports").join("test.csv"),
        )?;
        println!(
            "final test dice pz={:.4} tz={:.4}",
            report.per_class.pz.dice, report.per_class.tz.dice
        );
    }
    write_plots(&out.join("plots"), &[(cfg.mode.to_string(), history)])?;
    Ok(())
}

fn split_from(s: &str) -> Result<Split> {
    s.parse::<Split>()
        .map_err(|_| Error::Config(format!("unknown split `{s}`")))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let (ck, id) = load_checkpoint(&a.checkpoint)?;
    let split = split_from(&a.split)?;
    if !split.is_labeled() {
        return Err(Error::Config("evaluation needs a labeled split".into()));
    }
    let manifest = load_manifest(&a.manifest)?;
    let ds = Dataset::load(&manifest, ck.arch.input_size)?;
    let net = TinyZoneNet::new(ck.arch.clone())?;
    let params = if a.student {
        &ck.state.student
    } else {
        &ck.state.teacher
    };
    let (report, slices) = evaluate(&net, params, ds.split(split), ck.config.hd95_spacing)?;
    let report = report.with_provenance(&ck.state.config_hash, &id, ck.state.seed);
    mkdir(&a.out)?;
    let name = split.as_str();
    report.write(&a.out.join(format!("{name}.json")), &a.out.join(format!("{name}.csv")))?;
    let mut per = String::from("patient_id,dice_pz,dice_tz,hd95_pz,hd95_tz\n");
    for s in &slices {
        per.push_str(&format!(
            "{},{},{},{},{}\n",
            s.patient_id,
            s.pz.dice,
            s.tz.dice,
            fmt_opt(s.pz.hd95),
            fmt_opt(s.tz.hd95)
        ));
    }
    write(&a.out.join(format!("{name}_slices.csv")), per)?;
    println!(
        "{name}: dice pz={:.4} tz={:.4} hd95 pz={} tz={} (undefined {})",
        report.per_class.pz.dice,
        report.per_class.tz.dice,
        fmt_opt(report.per_class.pz.hd95),
        fmt_opt(report.per_class.tz.hd95),
        report.undefined_hd95_count
    );
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let (ck, _) = load_checkpoint(&a.checkpoint)?;
    let net = TinyZoneNet::new(ck.arch.clone())?;
    let params = if a.student {
        &ck.state.student
    } else {
        &ck.state.teacher
    };
    mkdir(&a.out)?;
    for path in &a.images {
        let image = read_image(path)?;
        let (input, _) = preprocess(&image, None, ck.arch.input_size)?;
        let pred = predict_masks(&net, params, &Tensor::from_images([&input])?)?;
        let mask = resize_mask_to(&pred[0], image.height(), image.width());
        let stem = path
            .file_stem()
            .ok_or_else(|| Error::InvalidInput(format!("{} has no file name", path.display())))?;
        let dest = a.out.join(Path::new(stem).with_extension("msk"));
        write_mask(&dest, &mask)?;
    }
    println!("wrote {} masks to {}", a.images.len(), a.out.display());
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HistoryRow::CSV_HEADER => {}
        _ => return Err(Error::InvalidInput(format!("{} is not a history file", path.display()))),
    }
    lines.filter(|l| !l.trim().is_empty()).map(HistoryRow::parse).collect()
}

fn write_plots(dir: &Path, runs: &[(String, Vec<HistoryRow>)]) -> Result<()> {
    type Pick = fn(&HistoryRow) -> Option<f64>;
    let charts: [(&str, &str, Pick); 5] = [
        ("loss_sup", "supervised loss", |r| Some(r.loss_sup)),
        ("loss_con", "consistency loss", |r| Some(r.loss_con)),
        ("mask_frac", "kept pixel fraction", |r| Some(r.mask_frac)),
        ("dice_pz", "test Dice (PZ)", |r| r.dice_pz),
        ("dice_tz", "test Dice (TZ)", |r| r.dice_tz),
    ];
    for (file, title, pick) in charts {
        let series: Vec<Series> = runs
            .iter()
            .map(|(label, rows)| Series {
                label: label.clone(),
                points: rows
                    .iter()
                    .filter_map(|r| pick(r).map(|v| ((r.epoch + 1) as f64, v)))
                    .collect(),
            })
            .collect();
        write(
            &dir.join(format!("{file}.svg")),
            line_chart(title, "epoch", file, &series),
        )?;
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let mut rows =
        String::from("run,mode,seed,epochs,iters,loss_sup,loss_con,dice_pz,dice_tz,hd95_pz,hd95_tz,config_hash\n");
    let mut runs = Vec::new();
    for dir in &a.runs {
        let cfg: TrainConfig = read_json(&dir.join("config.json"))?;
        let history = read_history(&dir.join("history.csv"))?;
        let label = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        let last = history.last();
        let evaluated = history.iter().rev().find(|r| r.dice_pz.is_some());
        rows.push_str(&format!(
            "{label},{},{},{},{},{},{},{},{},{},{},{}\n",
            cfg.mode,
            cfg.seed,
            history.len(),
            last.map_or(0, |r| r.iter),
            fmt_opt(last.map(|r| r.loss_sup)),
            fmt_opt(last.map(|r| r.loss_con)),
            fmt_opt(evaluated.and_then(|r| r.dice_pz)),
            fmt_opt(evaluated.and_then(|r| r.dice_tz)),
            fmt_opt(evaluated.and_then(|r| r.hd95_pz)),
            fmt_opt(evaluated.and_then(|r| r.hd95_tz)),
            cfg.hash()
        ));
        runs.push((label, history));
    }
    let plots = a.out.join("plots");
    mkdir(&plots)?;
    write(&a.out.join("comparison.csv"), &rows)?;
    write_plots(&plots, &runs)?;
    print!("{rows}");
    Ok(())
}

/// Checkpoint id of a file on disk, for scripts that want provenance.
pub fn checkpoint_file_id(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint::decode_checkpoint(&bytes)?;
    Ok(checkpoint::checkpoint_id(&bytes))
}
