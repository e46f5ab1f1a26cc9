use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use codealign::contrastive::Direction;
use codealign::dataset::{
    load_records, mock_audio_embed, mock_code_embed, read_wav, save_records, synth_pairs, Dataset,
    DatasetError, PairRecord, SynthSpec,
};
use codealign::metrics::{pairwise_cosine_vector, pearson, perm_pvalue, spearman, Statistic};
use codealign::soniclink::{submit_program, validate_recording_with, RenderJob, SubmitMode};
use codealign::templater::{
    builtin_templates, generate_corpus, load_template_dir, read_corpus, write_corpus, ParamSpace,
};
use codealign::trainer::{
    self, evaluate_split, load_run, sweep_csv, sweep_table, write_run, RunMetrics, TrainConfig,
    TrainError,
};
use serde::{Deserialize, Serialize};

use crate::{
    AnalyzeArgs, CliError, CliResult, DataSource, EmbedArgs, EvalArgs, FileConfig, GenCorpusArgs,
    RenderAudioArgs, SweepArgs, TrainArgs, TrainOverrides,
};

pub const RENDER_REPORT_FILE: &str = "render_report.jsonl";
pub const SYNTHETIC_FILE: &str = "synthetic.toml";
pub const SWEEP_CSV_FILE: &str = "sweep.csv";
pub const SWEEP_TABLE_FILE: &str = "sweep.txt";
pub const EVAL_METRICS_FILE: &str = "eval_metrics.json";
pub const SIDECAR_SUFFIX: &str = ".embedding.json";

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn io_failed(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Failed(format!("{}: {e}", path.display()))
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::Data(DatasetError::Config(_)) => usage(e),
        _ => failed(e),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_failed(dir))?;
    }
    fs::write(path, contents).map_err(io_failed(path))
}

pub fn gen_corpus(a: &GenCorpusArgs, cfg: &FileConfig) -> CliResult<()> {
    let per_template = a.per_template.unwrap_or(cfg.corpus.per_template);
    if per_template == 0 {
        return Err(usage("--per-template must be at least 1"));
    }
    let templates = match a.templates.as_ref().or(cfg.corpus.templates.as_ref()) {
        Some(dir) => {
            let t = load_template_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
            if t.is_empty() {
                return Err(usage(format!(
                    "{}: no *{} templates",
                    dir.display(),
                    codealign::templater::TEMPLATE_EXTENSION
                )));
            }
            t
        }
        None => builtin_templates(),
    };
    let space = match a.params.as_ref().or(cfg.corpus.params.as_ref()) {
        Some(p) => ParamSpace::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => ParamSpace::default(),
    };
    space.validate().map_err(usage)?;
    let programs =
        generate_corpus(&templates, &space, per_template, cfg.corpus.seed).map_err(usage)?;
    write_corpus(&a.out, &programs).map_err(|e| failed(format!("{}: {e}", a.out.display())))?;
    println!(
        "rendered {} programs (templates: {}, failed: 0)",
        programs.len(),
        templates.len()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct RenderEntry {
    name: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    bytes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    duration_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    peak: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

impl RenderEntry {
    fn new(name: &str, status: &'static str) -> Self {
        Self {
            name: name.to_string(),
            status,
            bytes: None,
            duration_seconds: None,
            peak: None,
            reason: None,
        }
    }

    fn succeeded(&self) -> bool {
        matches!(self.status, "captured" | "sent" | "valid")
    }
}

fn program_stem(file_name: &str) -> &str {
    file_name.strip_suffix(".pi").unwrap_or(file_name)
}

pub fn render_audio(a: &RenderAudioArgs, cfg: &FileConfig) -> CliResult<()> {
    let mut link = cfg.link.clone();
    if let Some(ep) = &a.endpoint {
        link.endpoint = ep.clone();
    }
    if let Some(addr) = &a.osc_address {
        link.osc_address = addr.clone();
    }
    if a.token.is_some() {
        link.token = a.token;
    }
    link.validate().map_err(usage)?;
    if !(a.record_seconds > 0.0 && a.record_seconds.is_finite()) {
        return Err(usage("--record-seconds must be positive"));
    }
    let programs =
        read_corpus(&a.corpus).map_err(|e| usage(format!("{}: {e}", a.corpus.display())))?;
    if programs.is_empty() {
        return Err(failed("nothing to render"));
    }
    fs::create_dir_all(&a.out).map_err(io_failed(&a.out))?;
    let mode = if a.dry_run {
        SubmitMode::DryRun(a.out.clone())
    } else {
        SubmitMode::Live
    };
    let mut entries = Vec::with_capacity(programs.len());
    for p in &programs {
        let name = program_stem(&p.file_name);
        let wav = a.out.join(format!("{name}.wav"));
        let mut job = RenderJob::new(name, p.text.clone(), wav.clone());
        job.record_seconds = a.record_seconds;
        let entry = match submit_program(&job, &link, &mode) {
            Err(e) => {
                log::warn!("{name}: {e}");
                RenderEntry {
                    reason: Some(e.to_string()),
                    ..RenderEntry::new(name, "error")
                }
            }
            Ok(out) if a.dry_run || !wav.exists() => RenderEntry {
                bytes: Some(out.bytes),
                ..RenderEntry::new(name, if a.dry_run { "captured" } else { "sent" })
            },
            Ok(out) => match validate_recording_with(
                &wav,
                a.record_seconds,
                link.silence_threshold,
                link.duration_factor,
            ) {
                Ok(check) => {
                    if let Some(r) = &check.reason {
                        log::warn!("{name}: {r}");
                    }
                    RenderEntry {
                        bytes: Some(out.bytes),
                        duration_seconds: Some(check.duration_seconds),
                        peak: Some(check.peak),
                        reason: check.reason,
                        ..RenderEntry::new(name, if check.valid { "valid" } else { "invalid" })
                    }
                }
                Err(e) => {
                    log::warn!("{name}: {e}");
                    RenderEntry {
                        bytes: Some(out.bytes),
                        reason: Some(e.to_string()),
                        ..RenderEntry::new(name, "invalid")
                    }
                }
            },
        };
        entries.push(entry);
    }
    let mut report = String::new();
    for e in &entries {
        report.push_str(&serde_json::to_string(e).expect("report entry serializes"));
        report.push('\n');
    }
    write_file(&a.out.join(RENDER_REPORT_FILE), report)?;
    let count = |s: &str| entries.iter().filter(|e| e.status == s).count();
    println!(
        "submitted {}: captured {}, sent {}, valid {}, invalid {}, errors {}",
        entries.len(),
        count("captured"),
        count("sent"),
        count("valid"),
        count("invalid"),
        count("error")
    );
    if entries.iter().any(RenderEntry::succeeded) {
        Ok(())
    } else {
        Err(failed("every program failed to render"))
    }
}

/// Precomputed embeddings for one stem; either side may be omitted.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    code_embedding: Option<Vec<f64>>,
    audio_embedding: Option<Vec<f64>>,
}

fn find_sidecar(stem: &str, dirs: [&Path; 2]) -> CliResult<Option<(PathBuf, Sidecar)>> {
    for dir in dirs {
        let path = dir.join(format!("{stem}{SIDECAR_SUFFIX}"));
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(io_failed(&path))?;
            let sidecar = serde_json::from_str(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            return Ok(Some((path, sidecar)));
        }
    }
    Ok(None)
}

fn list_programs(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(".pi")
                .map(|stem| (stem.to_string(), e.path()))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn embed(a: &EmbedArgs) -> CliResult<()> {
    let programs = list_programs(&a.corpus)?;
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for (stem, path) in &programs {
        let text = fs::read_to_string(path).map_err(io_failed(path))?;
        let sidecar = find_sidecar(stem, [&a.wavs, &a.corpus])?;
        let mut meta = BTreeMap::new();
        meta.insert("program".to_string(), format!("{stem}.pi"));
        let (code_pre, audio_pre) = match sidecar {
            Some((p, s)) => {
                log::info!("{stem}: using precomputed embeddings from {}", p.display());
                meta.insert(
                    "sidecar".to_string(),
                    p.file_name()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .into_owned(),
                );
                (s.code_embedding, s.audio_embedding)
            }
            None => (None, None),
        };
        let audio_embedding = match audio_pre {
            Some(v) => v,
            None => {
                let wav = a.wavs.join(format!("{stem}.wav"));
                if !wav.exists() {
                    log::warn!("{stem}: no recording {}, skipped", wav.display());
                    skipped += 1;
                    continue;
                }
                let embedded = read_wav(&wav)
                    .and_then(|audio| mock_audio_embed(&audio.samples, audio.sample_rate));
                match embedded {
                    Ok(v) => {
                        meta.insert("recording".to_string(), format!("{stem}.wav"));
                        v
                    }
                    Err(e) => {
                        log::warn!("{stem}: {e}, skipped");
                        skipped += 1;
                        continue;
                    }
                }
            }
        };
        let code_embedding = code_pre.unwrap_or_else(|| mock_code_embed(&text));
        records.push(PairRecord {
            id: stem.clone(),
            code_text: Some(text),
            code_embedding,
            audio_embedding,
            meta,
        });
    }
    if records.is_empty() {
        return Err(failed(format!(
            "no program/recording pairs in {} and {}",
            a.corpus.display(),
            a.wavs.display()
        )));
    }
    let dataset = Dataset::new(records).map_err(usage)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_failed(dir))?;
    }
    save_records(&dataset, &a.out).map_err(|e| failed(format!("{}: {e}", a.out.display())))?;
    println!("embedded {} pairs (skipped {skipped})", dataset.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct CorrelationSummary {
    records: usize,
    pairs: usize,
    pearson: Option<f64>,
    pearson_p: Option<f64>,
    spearman: Option<f64>,
    spearman_p: Option<f64>,
    trials: usize,
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    load_records(path).map_err(|e| match e {
        DatasetError::Io(_) => failed(format!("{}: {e}", path.display())),
        _ => usage(format!("{}: {e}", path.display())),
    })
}

pub fn analyze(a: &AnalyzeArgs, cfg: &FileConfig) -> CliResult<()> {
    if a.trials < 100 {
        return Err(usage("--trials must be at least 100"));
    }
    let data = load_dataset(&a.dataset)?;
    if data.len() < 2 {
        return Err(failed(format!(
            "{}: at least 2 records are needed, got {}",
            a.dataset.display(),
            data.len()
        )));
    }
    let code = pairwise_cosine_vector(&data.code_matrix()).map_err(failed)?;
    let audio = pairwise_cosine_vector(&data.audio_matrix()).map_err(failed)?;
    let n = data.len();
    let mut csv = String::from("i,j,code_sim,audio_sim\n");
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            writeln!(csv, "{i},{j},{},{}", code[k], audio[k]).expect("write to string");
            k += 1;
        }
    }
    write_file(&a.out, csv)?;

    let seed = cfg.train.seed;
    let stat = |s: Statistic| -> Option<(f64, f64)> {
        let r = match s {
            Statistic::Pearson => pearson(&code, &audio),
            Statistic::Spearman => spearman(&code, &audio),
        };
        let r = r.and_then(|r| Ok((r, perm_pvalue(&code, &audio, s, a.trials, seed)?)));
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("{s:?} correlation undefined: {e}");
                None
            }
        }
    };
    let p = stat(Statistic::Pearson);
    let s = stat(Statistic::Spearman);
    let summary = CorrelationSummary {
        records: n,
        pairs: code.len(),
        pearson: p.map(|v| v.0),
        pearson_p: p.map(|v| v.1),
        spearman: s.map(|v| v.0),
        spearman_p: s.map(|v| v.1),
        trials: a.trials,
    };
    let show = |v: Option<(f64, f64)>| {
        v.map(|(r, p)| format!("{r:.4} (p={p:.4})"))
            .unwrap_or_else(|| "undefined".into())
    };
    println!(
        "pairs {}: pearson r={} spearman rho={}",
        summary.pairs,
        show(p),
        show(s)
    );
    if let Some(path) = &a.summary {
        let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        json.push('\n');
        write_file(path, json)?;
    }
    Ok(())
}

fn apply_overrides(mut c: TrainConfig, o: &TrainOverrides) -> TrainConfig {
    if let Some(v) = o.epochs {
        c.epochs = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = o.lr {
        c.lr = v;
    }
    if let Some(v) = o.d_hidden {
        c.d_hidden = v;
    }
    if let Some(v) = o.d_out {
        c.d_out = v;
    }
    if let Some(v) = o.layers {
        c.layers = v;
    }
    if let Some(v) = o.temperature {
        c.temperature = v;
    }
    if o.symmetric {
        c.direction = Direction::Symmetric;
    }
    c
}

fn source_dataset(src: &DataSource, synthetic: &SynthSpec) -> CliResult<Dataset> {
    match &src.dataset {
        Some(path) => load_dataset(path),
        None => synth_pairs(synthetic).map_err(|e| usage(format!("synthetic: {e}"))),
    }
}

fn synthetic_toml(spec: &SynthSpec) -> String {
    toml::to_string(spec).expect("synthetic spec serializes")
}

pub fn train(a: &TrainArgs, cfg: &FileConfig) -> CliResult<()> {
    let config = apply_overrides(cfg.train.clone(), &a.overrides);
    config.validate().map_err(train_error)?;
    let data = source_dataset(&a.source, &cfg.synthetic)?;
    let out = trainer::run(&data, &config).map_err(train_error)?;
    write_run(&a.out, &out).map_err(|e| failed(format!("{}: {e}", a.out.display())))?;
    if a.source.synthetic {
        write_file(&a.out.join(SYNTHETIC_FILE), synthetic_toml(&cfg.synthetic))?;
    }
    println!(
        "baseline cka {:.4} cca {:.4}; trained cka {:.4} cca {:.4} diag {:.4} r@1 {:.4} ({} {:?} records)",
        out.baseline.cka,
        out.baseline.cca,
        out.metrics.cka,
        out.metrics.cca,
        out.metrics.mean_diagonal_cosine,
        out.metrics.retrieval_at_1,
        out.eval_size,
        config.eval_split
    );
    Ok(())
}

pub fn sweep(a: &SweepArgs, cfg: &FileConfig) -> CliResult<()> {
    let base = apply_overrides(cfg.train.clone(), &a.overrides);
    let mut grid = cfg.sweep.grid(base);
    if let Some(s) = a.seeds {
        grid.seeds = s;
    }
    grid.validate().map_err(train_error)?;
    let data = source_dataset(&a.source, &cfg.synthetic)?;
    let report = trainer::sweep(&data, &grid).map_err(train_error)?;
    write_file(&a.out.join(SWEEP_CSV_FILE), sweep_csv(&report))?;
    let table = sweep_table(&report);
    write_file(&a.out.join(SWEEP_TABLE_FILE), &table)?;
    print!("{table}");
    let failures: usize = report.results.iter().map(|r| r.failures().len()).sum();
    if failures > 0 {
        log::warn!("{failures} sweep runs failed; see the error column");
    }
    if report.results.iter().all(|r| r.cka().is_none()) {
        return Err(failed("every sweep run failed"));
    }
    Ok(())
}

pub fn eval(a: &EvalArgs, cfg: &FileConfig) -> CliResult<()> {
    let run = load_run(&a.run).map_err(|e| usage(format!("{}: {e}", a.run.display())))?;
    let data = if a.source.synthetic {
        let saved = a.run.join(SYNTHETIC_FILE);
        let spec = if saved.exists() {
            let text = fs::read_to_string(&saved).map_err(io_failed(&saved))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", saved.display())))?
        } else {
            cfg.synthetic
        };
        source_dataset(&a.source, &spec)?
    } else {
        source_dataset(&a.source, &cfg.synthetic)?
    };
    let (baseline, trained, eval_size) =
        evaluate_split(&run.code, &run.audio, &data, &run.config).map_err(train_error)?;
    let metrics = RunMetrics {
        eval_split: run.config.eval_split,
        eval_size,
        baseline,
        trained,
    };
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| a.run.join(EVAL_METRICS_FILE));
    write_file(&path, metrics.to_json())?;
    if let Some(saved) = run.metrics {
        if saved == metrics {
            log::info!("metrics match the saved run");
        } else {
            log::warn!("metrics differ from the saved run");
        }
    }
    println!(
        "trained cka {:.4} cca {:.4} diag {:.4} r@1 {:.4}",
        trained.cka, trained.cca, trained.mean_diagonal_cosine, trained.retrieval_at_1
    );
    Ok(())
}
