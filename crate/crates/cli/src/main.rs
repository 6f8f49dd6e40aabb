//! `needlenet`: data generation, training, evaluation, parameter audits and
//! real-time replay from one binary.

mod settings;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use needlenet::data::{
    clip_dir, load_dataset_with, read_labels, read_manifest, LoadOptions, NeedleState, SplitKind, VideoClip,
};
use needlenet::error::Error;
use needlenet::eval::{evaluate, evaluate_model, EvalReport};
use needlenet::model::{count_parameters, Checkpoint, CrnnSpec, LightCnnSpec, Model, ModelSpec};
use needlenet::realtime::{
    percentile, read_packet, replay_dir, session_report, Replay, StreamOutput, StreamSession,
    RECORD_HEADER,
};
use needlenet::synth::{generate_corpus, SplitPolicy, SynthConfig};
use needlenet::train::{
    select_time_steps, sweep_crnn_timesteps, train_cnn_observed, train_crnn_observed, write_history_csv,
    write_sweep_csv, EpochRecord, TrainConfig,
};

use settings::{Failure, Settings};

#[derive(Parser)]
#[command(name = "needlenet", version, about = "Needle-tip state detection toolkit")]
struct Cli {
    /// Worker threads for data-parallel work (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key = value` settings file; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus in the dataset layout.
    GenData(GenData),
    /// Train a light CNN.
    TrainCnn(TrainCnn),
    /// Train a CRNN on top of a light-CNN checkpoint.
    TrainCrnn(TrainCrnn),
    /// Train one CRNN per time-step count and report validation accuracy.
    SweepTimesteps(Sweep),
    /// Evaluate a checkpoint on one split.
    Eval(Eval),
    /// Print parameter counts.
    Params(Params),
    /// Stream frames through a checkpoint and emit per-frame records.
    Stream(Stream),
    /// Summarize recorded stream sessions against their labels.
    Report(Report),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    clips_per_section: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hold out `VALIDATION,TEST` clips per section instead of the default
    /// infiltration-balanced split.
    #[arg(long)]
    holdout: Option<String>,
}

#[derive(Args)]
struct TrainOptions {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for `model.nsnet` and `history.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train without augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args)]
struct TrainCnn {
    #[arg(long)]
    arch: Option<String>,
    #[command(flatten)]
    train: TrainOptions,
}

#[derive(Args)]
struct TrainCrnn {
    #[arg(long)]
    base_checkpoint: Option<PathBuf>,
    #[arg(long)]
    timesteps: Option<usize>,
    /// Let the copied conv stack train as well.
    #[arg(long)]
    unfreeze_conv: bool,
    #[command(flatten)]
    train: TrainOptions,
}

#[derive(Args)]
struct Sweep {
    #[arg(long)]
    base_checkpoint: Option<PathBuf>,
    /// Comma-separated time-step counts.
    #[arg(long)]
    timesteps: Option<String>,
    #[command(flatten)]
    train: TrainOptions,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Directory for `confusion.csv` and `accuracy.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Params {
    /// A light-CNN architecture such as `16-32-32`, `crnn`, or `all`.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    timesteps: Option<usize>,
}

#[derive(Args)]
struct Stream {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset root; every clip of `--split` (or just `--clip`) is replayed.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    /// A single clip directory of numbered frames.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Read raw frames from standard input.
    #[arg(long)]
    pipe: bool,
    /// Replay rate; 0 replays as fast as frames are consumed.
    #[arg(long)]
    fps: Option<f64>,
    /// Directory for one record file per session plus `sessions.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Report {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Directory written by `stream --out`.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Directory for `confusion.csv` and `accuracy.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            eprint!("{rendered}");
            return ExitCode::from(Failure::USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.category, f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let threads = settings.pick("threads", cli.threads)?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::internal(e.to_string()))?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(a, settings),
        Command::TrainCnn(a) => train_cnn(a, settings),
        Command::TrainCrnn(a) => train_crnn(a, settings),
        Command::SweepTimesteps(a) => sweep(a, settings),
        Command::Eval(a) => eval(a, settings),
        Command::Params(a) => params(a, settings),
        Command::Stream(a) => stream(a, settings),
        Command::Report(a) => report(a, settings),
    }
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

fn parse_split(s: Option<String>) -> Result<SplitKind, Failure> {
    s.as_deref()
        .unwrap_or("test")
        .parse()
        .map_err(Failure::invalid)
}

fn check_dataset(root: &Path) -> Result<(), Failure> {
    read_manifest(root)?;
    Ok(())
}

fn gen_data(a: GenData, mut s: Settings) -> Result<(), Failure> {
    let out = s.require("out", a.out)?;
    let clips = s.pick("clips_per_section", a.clips_per_section)?;
    let seed = s.pick("seed", a.seed)?;
    let holdout: Option<String> = s.pick("holdout", a.holdout)?;
    let mut config = SynthConfig::default();
    for (key, value) in s.drain() {
        config.set(&key, &value).map_err(|e| Failure::invalid(format!("config: {e}")))?;
    }
    if let Some(n) = clips {
        config.clips_per_section = n;
    }
    config.seed = seed_or_entropy(seed);
    let policy = match holdout {
        None => SplitPolicy::Standard,
        Some(h) => {
            let (v, t) = h
                .split_once(',')
                .and_then(|(v, t)| Some((v.trim().parse().ok()?, t.trim().parse().ok()?)))
                .ok_or_else(|| Failure::invalid(format!("--holdout expects VALIDATION,TEST, got {h:?}")))?;
            SplitPolicy::PerSection { validation: v, test: t }
        }
    };
    needlenet::synth::plan_corpus(&config, policy)?;
    let entries = generate_corpus(&config, policy, &out)?;
    let cfg_path = out.join("synth.cfg");
    fs::write(&cfg_path, config.to_string()).map_err(|e| Failure::from(Error::Io { path: cfg_path, source: e }))?;
    for kind in SplitKind::ALL {
        let n = entries.iter().filter(|e| e.split == kind).count();
        println!("{kind}: {n} clips");
    }
    Ok(())
}

struct ResolvedTrain {
    data: PathBuf,
    out: PathBuf,
    config: TrainConfig,
}

fn resolve_train(t: TrainOptions, s: &mut Settings) -> Result<ResolvedTrain, Failure> {
    let data = s.require("data", t.data)?;
    let out = s.require("out", t.out)?;
    let epochs = s.pick("epochs", t.epochs)?;
    let lr = s.pick("lr", t.lr)?;
    let batch = s.pick("batch", t.batch)?;
    let seed = s.pick("seed", t.seed)?;
    let augment: bool = s.pick("augment", t.no_augment.then_some(false))?.unwrap_or(true);
    let mut config = TrainConfig::default();
    if let Some(e) = epochs {
        config.epochs = e;
    }
    if let Some(lr) = lr {
        config.learning_rate = lr;
    }
    config.batch_size = batch;
    if !augment {
        config.augment = None;
    }
    config.validate()?;
    check_dataset(&data)?;
    config.seed = seed_or_entropy(seed);
    Ok(ResolvedTrain { data, out, config })
}

fn report_epoch(r: &EpochRecord) {
    eprintln!("epoch {:>3}  loss {:.5}  val_acc {:.4}", r.epoch, r.train_loss, r.val_acc);
}

fn load_split(root: &Path, side: usize) -> Result<needlenet::data::DataSplit, Failure> {
    Ok(load_dataset_with(
        root,
        LoadOptions {
            resize_to: Some(side as u32),
        },
    )?)
}

fn save_run(out: &Path, checkpoint: &Checkpoint, history: &[EpochRecord]) -> Result<(), Failure> {
    create_dir(out)?;
    checkpoint.save(&out.join("model.nsnet"))?;
    write_history_csv(&out.join("history.csv"), history)?;
    Ok(())
}

fn load_base(path: &Path) -> Result<needlenet::model::LightCnn<f32>, Failure> {
    let (base, _) = Checkpoint::load(path)?.into_light_cnn()?;
    Ok(base)
}

fn train_cnn(a: TrainCnn, mut s: Settings) -> Result<(), Failure> {
    let arch: String = s.pick("arch", a.arch)?.unwrap_or_else(|| "16-32-32".into());
    let spec: LightCnnSpec = arch.parse()?;
    let r = resolve_train(a.train, &mut s)?;
    s.finish()?;
    let split = load_split(&r.data, spec.input_side())?;
    let run = train_cnn_observed(&spec, &split, &r.config, report_epoch)?;
    save_run(&r.out, &run.checkpoint, &run.history)?;
    println!(
        "best epoch {} val_acc {:.4}",
        run.checkpoint.meta.epoch.unwrap_or(0),
        run.best_val_acc()
    );
    Ok(())
}

fn train_crnn(a: TrainCrnn, mut s: Settings) -> Result<(), Failure> {
    let base_path = s.require("base_checkpoint", a.base_checkpoint)?;
    let t = s.pick("timesteps", a.timesteps)?.unwrap_or(30);
    let freeze: bool = !s.pick("unfreeze_conv", a.unfreeze_conv.then_some(true))?.unwrap_or(false);
    let mut r = resolve_train(a.train, &mut s)?;
    s.finish()?;
    r.config.freeze_conv = freeze;
    CrnnSpec::new(t)?;
    let base = load_base(&base_path)?;
    let split = load_split(&r.data, base.spec().input_side())?;
    let run = train_crnn_observed(&base, t, &split, &r.config, report_epoch)?;
    save_run(&r.out, &run.checkpoint, &run.history)?;
    println!(
        "best epoch {} val_acc {:.4}",
        run.checkpoint.meta.epoch.unwrap_or(0),
        run.best_val_acc()
    );
    Ok(())
}

fn sweep(a: Sweep, mut s: Settings) -> Result<(), Failure> {
    let base_path = s.require("base_checkpoint", a.base_checkpoint)?;
    let list: String = s.pick("timesteps", a.timesteps)?.unwrap_or_else(|| "10,20,30,40,50".into());
    let steps = list
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::invalid(format!("bad time-step list {list:?}")))?;
    if steps.is_empty() || steps.contains(&0) {
        return Err(Failure::invalid(format!("time steps must be positive, got {list:?}")));
    }
    let r = resolve_train(a.train, &mut s)?;
    s.finish()?;
    let base = load_base(&base_path)?;
    let split = load_split(&r.data, base.spec().input_side())?;
    let rows = sweep_crnn_timesteps(&base, &steps, &split, &r.config)?;
    create_dir(&r.out)?;
    write_sweep_csv(&r.out.join("sweep.csv"), &rows)?;
    println!("time_steps,best_val_acc,best_epoch");
    for row in &rows {
        println!("{},{:.6},{}", row.time_steps, row.best_val_acc, row.best_epoch);
    }
    if let Some(best) = select_time_steps(&rows) {
        println!("selected {}", best.time_steps);
    }
    Ok(())
}

fn model_side(model: &Model) -> usize {
    match model {
        Model::LightCnn(m) => m.spec().input_side(),
        Model::Crnn(m) => m.spec().base.input_side(),
    }
}

fn write_eval_files(out: &Path, report: &EvalReport) -> Result<(), Failure> {
    create_dir(out)?;
    let mut text = String::from("truth,pred,count,proportion\n");
    let norm = report.confusion.normalized();
    for t in NeedleState::ALL {
        for p in NeedleState::ALL {
            text.push_str(&format!(
                "{},{},{},{:.2}\n",
                t.name(),
                p.name(),
                report.confusion.counts[t.index()][p.index()],
                norm[t.index()][p.index()]
            ));
        }
    }
    let path = out.join("confusion.csv");
    fs::write(&path, text).map_err(|e| Failure::from(Error::Io { path, source: e }))?;
    report.write_clip_csv(&out.join("accuracy.csv"))?;
    Ok(())
}

fn print_clip_csv(report: &EvalReport) {
    println!("clip_id,section,infiltration,frames,accuracy,excess");
    for c in &report.clips {
        println!(
            "{},{},{},{},{:.6},{}",
            c.clip_id, c.section, c.infiltration, c.frames, c.accuracy, c.excess
        );
    }
}

fn eval(a: Eval, mut s: Settings) -> Result<(), Failure> {
    let ckpt = s.require("checkpoint", a.checkpoint)?;
    let data = s.require("data", a.data)?;
    let split_kind = parse_split(s.pick("split", a.split)?)?;
    let out = s.pick("out", a.out)?;
    s.finish()?;
    let checkpoint = Checkpoint::load(&ckpt)?;
    check_dataset(&data)?;
    let split = load_split(&data, model_side(&checkpoint.model))?;
    let clips = split.get(split_kind);
    if clips.is_empty() {
        return Err(Failure::invalid(format!("split {split_kind} has no clips")));
    }
    let (report, _) = evaluate_model(&checkpoint.model, clips)?;
    print!("{report}");
    match out {
        Some(dir) => write_eval_files(&dir, &report)?,
        None => print_clip_csv(&report),
    }
    Ok(())
}

fn params(a: Params, mut s: Settings) -> Result<(), Failure> {
    let arch: String = s.pick("arch", a.arch)?.unwrap_or_else(|| "16-32-32".into());
    let t = s.pick("timesteps", a.timesteps)?.unwrap_or(30);
    s.finish()?;
    match arch.as_str() {
        "all" => {
            for spec in LightCnnSpec::table() {
                println!("{} {}", spec.arch_string(), spec.parameter_count());
            }
            println!("crnn {}", CrnnSpec::new(t)?.parameter_count());
        }
        "crnn" => {
            let count = count_parameters(&ModelSpec::Crnn(CrnnSpec::new(t)?));
            println!("{}", count.total);
        }
        other => {
            let spec: LightCnnSpec = other.parse()?;
            println!("{}", count_parameters(&ModelSpec::LightCnn(spec)).total);
        }
    }
    Ok(())
}

enum StreamInput {
    Clips { root: PathBuf, split: SplitKind, only: Option<String> },
    Frames(PathBuf),
    Pipe,
}

struct Session {
    name: String,
    outputs: Vec<StreamOutput>,
    labels: Option<Vec<NeedleState>>,
    dropped: usize,
}

fn run_replay(session: &mut StreamSession, replay: &mut Replay, sink: &mut dyn FnMut(&StreamOutput)) -> Result<Vec<StreamOutput>, Failure> {
    let mut outputs = Vec::new();
    for packet in replay.by_ref() {
        let out = session.infer(&packet?.image)?;
        sink(&out);
        outputs.push(out);
    }
    Ok(outputs)
}

fn stream(a: Stream, mut s: Settings) -> Result<(), Failure> {
    let ckpt = s.require("checkpoint", a.checkpoint)?;
    let data = s.pick("data", a.data)?;
    let split = s.pick("split", a.split)?;
    let clip = s.pick("clip", a.clip)?;
    let frames = s.pick("frames", a.frames)?;
    let pipe = s.pick("pipe", a.pipe.then_some(true))?.unwrap_or(false);
    let fps = s.pick("fps", a.fps)?.unwrap_or(0.0);
    let out = s.pick("out", a.out)?;
    s.finish()?;
    if !(fps >= 0.0 && fps.is_finite()) {
        return Err(Failure::invalid(format!("--fps must be non-negative, got {fps}")));
    }
    let input = match (data, frames, pipe) {
        (Some(root), None, false) => {
            check_dataset(&root)?;
            StreamInput::Clips {
                root,
                split: parse_split(split)?,
                only: clip,
            }
        }
        (None, Some(dir), false) => StreamInput::Frames(dir),
        (None, None, true) => StreamInput::Pipe,
        _ => return Err(Failure::invalid("give exactly one of --data, --frames or --pipe")),
    };
    let checkpoint = Checkpoint::load(&ckpt)?;
    let mut session = StreamSession::new(checkpoint.model);

    let mut jobs: Vec<(String, Option<(PathBuf, Vec<NeedleState>)>)> = Vec::new();
    match &input {
        StreamInput::Clips { root, split, only } => {
            for (entry, _, _) in read_manifest(root)? {
                if entry.split != *split || only.as_ref().is_some_and(|c| *c != entry.clip_id) {
                    continue;
                }
                let dir = clip_dir(root, entry.split, &entry.clip_id);
                let labels = read_labels(&dir, &entry.clip_id)?;
                jobs.push((entry.clip_id, Some((dir, labels))));
            }
            if jobs.is_empty() {
                return Err(Failure::invalid("no clips match the requested split and clip"));
            }
        }
        StreamInput::Frames(dir) => {
            let name = dir.file_name().map_or("frames".into(), |n| n.to_string_lossy().into_owned());
            jobs.push((name, None));
        }
        StreamInput::Pipe => jobs.push(("stream".into(), None)),
    }
    if out.is_none() && jobs.len() > 1 {
        return Err(Failure::invalid("streaming several clips needs --out"));
    }
    if let Some(dir) = &out {
        create_dir(dir)?;
    }

    let mut sessions = Vec::new();
    let stdout = io::stdout();
    for (name, job) in jobs {
        session.reset();
        let mut lines: Vec<String> = Vec::new();
        let mut to_stdout = out.is_none().then(|| BufWriter::new(stdout.lock()));
        if let Some(w) = to_stdout.as_mut() {
            let _ = writeln!(w, "{RECORD_HEADER}");
        }
        let mut sink = |o: &StreamOutput| match to_stdout.as_mut() {
            Some(w) => {
                let _ = writeln!(w, "{}", o.record());
            }
            None => lines.push(o.record()),
        };
        let (outputs, labels, dropped) = match (&input, job) {
            (StreamInput::Pipe, _) => {
                let mut stdin = io::stdin().lock();
                let mut outputs = Vec::new();
                while let Some(packet) = read_packet(&mut stdin)? {
                    let mut o = session.infer(&packet.image)?;
                    o.frame_index = packet.index;
                    sink(&o);
                    outputs.push(o);
                }
                (outputs, None, 0)
            }
            (StreamInput::Frames(dir), _) => {
                let mut replay = replay_dir(dir, fps)?;
                let outputs = run_replay(&mut session, &mut replay, &mut sink)?;
                (outputs, None, replay.dropped())
            }
            (StreamInput::Clips { .. }, Some((dir, labels))) => {
                let mut replay = replay_dir(&dir, fps)?;
                let outputs = run_replay(&mut session, &mut replay, &mut sink)?;
                let labels = (outputs.len() == labels.len()).then_some(labels);
                (outputs, labels, replay.dropped())
            }
            (StreamInput::Clips { .. }, None) => unreachable!("clip jobs carry their directory"),
        };
        if let Some(mut w) = to_stdout {
            let _ = w.flush();
        }
        if let Some(dir) = &out {
            let path = dir.join(format!("{name}.csv"));
            let mut text = format!("{RECORD_HEADER}\n");
            for l in &lines {
                text.push_str(l);
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| Failure::from(Error::Io { path, source: e }))?;
        }
        if outputs.is_empty() {
            return Err(Failure::from(Error::from(needlenet::error::StreamError::MissingFrame {
                index: 0,
                reason: format!("session {name} produced no frames"),
            })));
        }
        let summary = session_report(&outputs, labels.as_deref(), dropped)?;
        eprintln!("session {name}");
        eprint!("{summary}");
        sessions.push(Session {
            name,
            outputs,
            labels,
            dropped,
        });
    }

    if let Some(dir) = &out {
        let mut text = String::from("session,frames,dropped,accuracy,latency_p50_ms,latency_p95_ms,latency_mean_ms,fps,transitions\n");
        for s in &sessions {
            let r = session_report(&s.outputs, s.labels.as_deref(), s.dropped)?;
            text.push_str(&format!(
                "{},{},{},{},{:.3},{:.3},{:.3},{:.2},{}\n",
                s.name,
                r.frames,
                r.dropped,
                r.accuracy.map_or(String::new(), |a| format!("{a:.6}")),
                r.latency_p50_ms,
                r.latency_p95_ms,
                r.latency_mean_ms,
                r.fps,
                r.transitions.len()
            ));
        }
        let path = dir.join("sessions.csv");
        fs::write(&path, text).map_err(|e| Failure::from(Error::Io { path, source: e }))?;
    }
    Ok(())
}

/// Parses a record file back into states and latencies.
fn read_records(path: &Path) -> Result<(Vec<NeedleState>, Vec<f64>), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    let mut lines = text.lines();
    if lines.next() != Some(RECORD_HEADER) {
        return Err(Failure::invalid(format!("{} is not a stream record file", path.display())));
    }
    let mut states = Vec::new();
    let mut latency = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Failure::invalid(format!("{} line {}: malformed record", path.display(), n + 2));
        if fields.len() != 6 {
            return Err(bad());
        }
        states.push(fields[1].parse().map_err(|_| bad())?);
        latency.push(fields[5].parse().map_err(|_| bad())?);
    }
    Ok((states, latency))
}

fn report(a: Report, mut s: Settings) -> Result<(), Failure> {
    let data = s.require("data", a.data)?;
    let split = parse_split(s.pick("split", a.split)?)?;
    let records = s.require("records", a.records)?;
    let out = s.pick("out", a.out)?;
    s.finish()?;
    let mut clips = Vec::new();
    let mut predictions = Vec::new();
    let mut latencies = Vec::new();
    for (entry, section, infiltration) in read_manifest(&data)? {
        if entry.split != split {
            continue;
        }
        let labels = read_labels(&clip_dir(&data, entry.split, &entry.clip_id), &entry.clip_id)?;
        let (states, lat) = read_records(&records.join(format!("{}.csv", entry.clip_id)))?;
        if states.len() != labels.len() {
            return Err(Failure::invalid(format!(
                "{}: {} records for {} labeled frames",
                entry.clip_id,
                states.len(),
                labels.len()
            )));
        }
        clips.push(VideoClip {
            id: entry.clip_id,
            section,
            infiltration,
            frames: Vec::new(),
            labels,
        });
        predictions.push(states);
        latencies.extend(lat);
    }
    if clips.is_empty() {
        return Err(Failure::invalid(format!("split {split} has no clips")));
    }
    let refs: Vec<&VideoClip> = clips.iter().collect();
    let report = evaluate(&refs, &predictions)?;
    print!("{report}");
    println!(
        "latency ms: p50 {:.2} p95 {:.2}",
        percentile(&latencies, 50.0),
        percentile(&latencies, 95.0)
    );
    match out {
        Some(dir) => write_eval_files(&dir, &report)?,
        None => print_clip_csv(&report),
    }
    Ok(())
}
