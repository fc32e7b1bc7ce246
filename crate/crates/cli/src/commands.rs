//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use ustar_core::analysis::{
    drift_series, study_content_vs_visits, study_time_vs_space, trajectory, ContentStudyConfig,
    DistanceUnit, StudyReport, TimeStudyConfig,
};
use ustar_core::discretize::RegionId;
use ustar_core::embed::Snapshot;
use ustar_core::engine::{group_by_step, Engine};
use ustar_core::eval::{baseline, evaluate, EvalConfig, Method, UstarMethod, WindowSpec};
use ustar_core::geo::GeotaggedIndex;
use ustar_core::ingest::{
    parse_record, read_raw_records, FrequencyMode, Ingestor, InputFormat, RawRecord, Record,
    Vocabulary,
};
use ustar_core::synth::{generate, SynthConfig};
use ustar_core::train::{TrainConfig, Variant};
use ustar_core::unit::{Modality, UnitId, UserId};

use crate::config::{env_seed, parse_duration_secs, Layer, Settings};
use crate::manifest::{beside, Recorder};
use crate::{
    CliError, DataArgs, DriftArgs, EvalArgs, ExportArgs, GenArgs, HomophilyArgs, InferGeoArgs,
    TrainArgs,
};

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| CliError::io(path, e))?,
    ))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w).map_err(|e| CliError::io(path, e))?;
    finish(w, path)
}

fn file_layer(path: Option<&Path>) -> Result<Layer, CliError> {
    path.map_or(Ok(Layer::default()), Layer::load)
}

fn settings(flags: Layer, config: Option<&Path>) -> Result<Settings, CliError> {
    Settings::resolve(flags, env_seed()?, file_layer(config)?)
}

fn read_stream(path: &Path) -> Result<Vec<RawRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_raw_records(BufReader::new(file), InputFormat::from_path(path))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Read and preprocess a stream under `s`.
fn load(path: &Path, s: &Settings, data: &DataArgs) -> Result<(Ingestor, Vec<Record>), CliError> {
    let raws = read_stream(path)?;
    let grid = s.grid(raws.iter().filter_map(|r| r.location), data.bbox_from_data)?;
    let mut ing = Ingestor::new(grid, s.tz_offset_min, s.min_freq, FrequencyMode::Offline)
        .with_time_bins(s.time_bins());
    let records = ing.ingest_all(&raws);
    let st = &ing.stats;
    log::info!(
        "{} records read, {} kept ({} without keywords, {} out of bounds)",
        st.input,
        st.emitted,
        st.dropped_no_keywords,
        st.dropped_out_of_bounds
    );
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no usable records",
            path.display()
        )));
    }
    Ok((ing, records))
}

pub fn gen(a: GenArgs) -> Result<(), CliError> {
    let seed = a
        .seed
        .or(env_seed()?)
        .unwrap_or(SynthConfig::default().seed);
    let cfg = SynthConfig {
        n_clusters: a.clusters,
        records: a.records,
        noise_rate: a.noise,
        g: a.g,
        span_secs: a.days * 86_400,
        seed,
        ..SynthConfig::default()
    };
    let mut rec = Recorder::new("gen", Some(seed), &cfg);
    let synth = generate(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    rec.mark("generate");

    let mut w = create(&a.out)?;
    for r in &synth.records {
        writeln!(w, "{}", r.to_json_line()).map_err(|e| CliError::io(&a.out, e))?;
    }
    finish(w, &a.out)?;
    if let Some(path) = &a.truth {
        write_json(path, &synth.truth)?;
    }
    if let Some(path) = &a.write_config {
        let b = cfg.grid.bbox;
        let text = format!(
            "bbox = [{:?}, {:?}, {:?}, {:?}]\ncell_m = {:?}\nmin_freq = 1\n",
            b.lat_min, b.lat_max, b.lon_min, b.lon_max, cfg.grid.cell_m
        );
        fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    }
    rec.mark("write");
    rec.write(&beside(&a.out))
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let s = settings(
        a.model.layer().over(a.data.layer()),
        a.data.config.as_deref(),
    )?;
    let mut rec = Recorder::new("train", Some(s.seed), &s);
    rec.input(&a.input)?;
    let (ing, records) = load(&a.input, &s, &a.data)?;
    rec.mark("load");

    let snap_dir = a.out.join("snapshots");
    fs::create_dir_all(&snap_dir).map_err(|e| CliError::io(&snap_dir, e))?;
    let mut engine = Engine::new(s.train.clone())?;
    let loss_path = a.out.join("loss.csv");
    let mut loss = csv::Writer::from_path(&loss_path).map_err(|e| CliError::Data(e.to_string()))?;
    loss.write_record(["step", "epoch", "mean_loss"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    for (i, (key, batch)) in group_by_step(records, s.step_secs).into_iter().enumerate() {
        let report = engine.process_batch(batch)?;
        for (epoch, l) in report.trace.epoch_losses.iter().enumerate() {
            loss.write_record([i.to_string(), epoch.to_string(), l.to_string()])
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
        log::info!(
            "step {i}: {} arrived, buffer {}, {} weak labels",
            report.arrived,
            report.buffer_len,
            report.trace.weak_labels
        );
        let snap = engine.snapshot(&ing.grid, s.tz_offset_min, (key + 1) * s.step_secs)?;
        snap.save(snap_dir.join(format!("step-{i:06}.snap")))?;
    }
    loss.flush().map_err(|e| CliError::io(&loss_path, e))?;
    rec.mark("train");

    let vocab_path = a.out.join("vocab.tsv");
    let mut w = create(&vocab_path)?;
    ing.vocab.write_sidecar(&mut w)?;
    finish(w, &vocab_path)?;
    let buffer_path = a.out.join("buffer.jsonl");
    let mut w = create(&buffer_path)?;
    for r in engine.buffer().records() {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(w).map_err(|e| CliError::io(&buffer_path, e))?;
    }
    finish(w, &buffer_path)?;
    rec.mark("write");
    rec.write(&a.out.join("manifest.json"))
}

fn variant_of(name: &str) -> Result<Variant, CliError> {
    match name {
        "ustar" => Ok(Variant::Full),
        "ustar-base" => Ok(Variant::Base),
        "ustar-semi" => Ok(Variant::Semi),
        _ => Err(CliError::Usage(format!(
            "unknown method `{name}`; expected ustar, ustar-base or ustar-semi"
        ))),
    }
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let flags = Layer {
        g: a.g,
        windows: a.windows,
        m: a.m,
        ..a.model.layer().over(a.data.layer())
    };
    let s = settings(flags, a.data.config.as_deref())?;
    let mut methods: Vec<Box<dyn Method>> = Vec::new();
    for name in &a.methods {
        let cfg = TrainConfig {
            variant: variant_of(name)?,
            ..s.train.clone()
        };
        methods.push(Box::new(UstarMethod::new(cfg)?));
    }
    for name in &a.baseline {
        methods.push(baseline(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown baseline `{name}`; expected tfidf or tfidf-user"
            ))
        })?);
    }
    if methods.is_empty() {
        return Err(CliError::Usage("nothing to evaluate".into()));
    }
    let cfg = EvalConfig {
        m: s.m,
        windows: WindowSpec::Random(s.windows),
        g: s.g,
        seed: s.seed,
        step_secs: s.step_secs,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut rec = Recorder::new("eval", Some(s.seed), &s);
    rec.input(&a.input)?;
    let (_, records) = load(&a.input, &s, &a.data)?;
    rec.mark("load");
    let report = evaluate(&records, &cfg, &mut methods)?;
    rec.mark("evaluate");
    write_json(&a.out, &report)?;
    rec.write(&beside(&a.out))
}

fn read_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Vocabulary::read_sidecar(BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct RegionWeight {
    region: u32,
    row: u32,
    col: u32,
    weight: f64,
}

pub fn infer_geo(a: InferGeoArgs) -> Result<(), CliError> {
    let file = file_layer(a.config.as_deref())?;
    let c_u = a.c_u.or(file.c_u).unwrap_or(TrainConfig::default().c_u);
    let raw = parse_record(&a.record, InputFormat::Jsonl, 1)?;
    let snap = Snapshot::load(&a.snapshot)?;
    let vocab_path = a.vocab.clone().unwrap_or_else(|| {
        a.buffer
            .parent()
            .unwrap_or(Path::new("."))
            .join("vocab.tsv")
    });
    let vocab = read_vocab(&vocab_path)?;
    let user: UserId = vocab
        .user(&raw.user)
        .ok_or_else(|| CliError::Data(format!("user {:?} is not in the vocabulary", raw.user)))?;
    if !snap.embeddings.has(user.into()) {
        return Err(CliError::Data(format!(
            "user {:?} has no embedding in the snapshot",
            raw.user
        )));
    }

    let file = File::open(&a.buffer).map_err(|e| CliError::io(&a.buffer, e))?;
    let mut buffer = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&a.buffer, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", a.buffer.display(), i + 1)))?;
        buffer.push(r);
    }
    let dist = GeotaggedIndex::build(&buffer).distribution(user, &snap.embeddings, c_u);
    let mut out: Vec<RegionWeight> = dist
        .normalized()
        .into_iter()
        .map(|(r, weight)| {
            let (row, col) = snap.grid.row_col(r);
            RegionWeight {
                region: r.0,
                row,
                col,
                weight,
            }
        })
        .collect();
    out.sort_by(|x, y| y.weight.total_cmp(&x.weight).then(x.region.cmp(&y.region)));
    let text = serde_json::to_string_pretty(&out).expect("serializes");
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(CliError::Data(format!("stdout: {e}")))
        }
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct HomophilyReport {
    content_vs_visits: StudyReport,
    time_vs_space: StudyReport,
}

pub fn homophily(a: HomophilyArgs) -> Result<(), CliError> {
    let s = settings(a.data.layer(), a.data.config.as_deref())?;
    let mut rec = Recorder::new("analyze homophily", Some(s.seed), &s);
    rec.input(&a.input)?;
    let (ing, records) = load(&a.input, &s, &a.data)?;
    rec.mark("load");
    let users = &ing.vocab.users;
    let key = |u: UserId| users.name_of(u.0).unwrap_or_default().to_string();
    let content = ContentStudyConfig {
        n: a.n,
        users: a.users,
        seed: s.seed,
    };
    let time = TimeStudyConfig {
        bin_secs: parse_duration_secs(&a.bin)?,
        pairs: a.pairs,
        unit: if a.meters {
            DistanceUnit::Meters
        } else {
            DistanceUnit::Degrees
        },
        seed: s.seed,
    };
    let report = HomophilyReport {
        content_vs_visits: study_content_vs_visits(&records, key, &content)?,
        time_vs_space: study_time_vs_space(&records, &time)?,
    };
    rec.mark("studies");
    write_json(&a.out, &report)?;
    rec.write(&beside(&a.out))
}

fn snapshot_paths(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "snap"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn window_steps(window: &str, step: &str) -> Result<usize, CliError> {
    if let Ok(n) = window.parse::<usize>() {
        return Ok(n);
    }
    let (w, s) = (parse_duration_secs(window)?, parse_duration_secs(step)?);
    if w % s != 0 {
        return Err(CliError::Usage(format!(
            "window {window} is not a whole number of {step} steps"
        )));
    }
    Ok((w / s) as usize)
}

pub fn drift(a: DriftArgs) -> Result<(), CliError> {
    let window = window_steps(&a.window, &a.step)?;
    let mut rec = Recorder::new("analyze drift", None, &(&a.window, &a.step, a.region));
    let paths = snapshot_paths(&a.snapshots)?;
    let mut snaps = Vec::with_capacity(paths.len());
    for p in &paths {
        snaps.push(Snapshot::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?);
    }
    rec.mark("load");
    let series = drift_series(&trajectory(&snaps, RegionId(a.region).into())?, window)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| CliError::Data(e.to_string()))?;
    w.write_record(["step", "delta"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    for (step, delta) in &series.points {
        w.write_record([step.to_string(), delta.to_string()])
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(&a.out, e))?;
    rec.write(&beside(&a.out))
}

pub fn export(a: ExportArgs) -> Result<(), CliError> {
    let mut rec = Recorder::new("export", None, &(&a.snapshot, &a.vocab));
    rec.input(&a.snapshot)?;
    rec.input(&a.vocab)?;
    let snap = Snapshot::load(&a.snapshot)?;
    let vocab = read_vocab(&a.vocab)?;
    let mut w = create(&a.out)?;
    for m in Modality::ALL {
        for i in 0..snap.embeddings.len(m) as u32 {
            let name = match m {
                Modality::Region | Modality::Hour => i.to_string(),
                Modality::Keyword => vocab.keywords.name_of(i).unwrap_or_default().to_string(),
                Modality::User => vocab.users.name_of(i).unwrap_or_default().to_string(),
            };
            let v = snap.embeddings.vector(UnitId::new(m, i));
            let values: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{m}\t{name}\t{}", values.join("\t"))
                .map_err(|e| CliError::io(&a.out, e))?;
        }
    }
    finish(w, &a.out)?;
    rec.write(&beside(&a.out))
}
