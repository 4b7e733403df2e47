//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data
//! error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::binarize::binarize_score;
use crate::contrastive::{predict, train_head, EmbeddingSet};
use crate::io::{
    config_hash, read_config, read_embeddings, read_head, read_records, write_head, write_plan, write_report,
    HeadFile, IoError, ReportFormat, ReportRecord, RunConfig, BA_BASIS,
};
use crate::metrics::{detection_metrics, manipulation_accuracy, ScoredLabels};
use crate::protocol::{make_plan, parse_loss_list, LossSetting, Mode, PlanRequest, ResearchQuestion};
use crate::registry::{
    builtin_dataset_descriptors, load_catalog_with, load_descriptors, DatasetDescriptor, ManipulationRegistry,
    SampleCatalog, Split,
};

#[derive(Parser)]
#[command(name = "attribench", version, about = "Cross-dataset DeepFake attribution benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the experiment cells of one research question.
    Plan(PlanArgs),
    /// Train an attribution head on precomputed embeddings.
    TrainHead(TrainArgs),
    /// Evaluate a head on the test split of a catalog.
    Evaluate(EvaluateArgs),
    /// Merge record files into one CSV, JSON or markdown report.
    Report(ReportArgs),
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, value_parser = parse_rq)]
    rq: ResearchQuestion,
    /// Dataset descriptor file; the builtin registry when omitted.
    #[arg(long)]
    descriptors: Option<PathBuf>,
    /// Comma-separated model tags.
    #[arg(long)]
    models: String,
    /// Comma-separated loss settings (b, t-h, t-hs, nt, sc).
    #[arg(long, default_value = "b,t-h,t-hs,nt,sc")]
    losses: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated training datasets for RQ1 and RQ3.
    #[arg(long)]
    sources: Option<String>,
    /// Comma-separated test datasets for RQ1 and RQ3.
    #[arg(long)]
    tests: Option<String>,
    /// Add within-dataset cells to RQ2 plans.
    #[arg(long)]
    with_diagonal: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    /// Extra dataset descriptors the catalog may reference.
    #[arg(long)]
    descriptors: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, value_parser = parse_loss)]
    loss: LossSetting,
    /// `key = value` hyperparameter file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "model")]
    model_tag: String,
    /// Per-epoch training log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    head: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    descriptors: Option<PathBuf>,
    /// Also report the accuracy on this manipulation's test rows.
    #[arg(long)]
    manipulation: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Glob matching record files written by `evaluate`.
    #[arg(long)]
    inputs: String,
    #[arg(long, value_parser = parse_format)]
    format: ReportFormat,
    #[arg(long)]
    out: PathBuf,
}

fn parse_rq(s: &str) -> Result<ResearchQuestion, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_loss(s: &str) -> Result<LossSetting, String> {
    s.parse().map_err(|e: crate::protocol::ProtocolError| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

enum Failure {
    Usage(String),
    Data(String),
}

fn data(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Plan(a) => plan(a),
        Command::TrainHead(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn descriptors(path: Option<&Path>) -> Result<Vec<DatasetDescriptor>, Failure> {
    match path {
        None => Ok(builtin_dataset_descriptors()),
        Some(p) => load_descriptors(p).map_err(|e| data(p, e)),
    }
}

/// Builtin descriptors plus any from `extra`, the latter winning on name.
fn catalog_descriptors(extra: Option<&Path>) -> Result<Vec<DatasetDescriptor>, Failure> {
    let mut all = builtin_dataset_descriptors();
    if let Some(p) = extra {
        for d in load_descriptors(p).map_err(|e| data(p, e))? {
            all.retain(|b| b.name != d.name);
            all.push(d);
        }
    }
    Ok(all)
}

fn load_catalog(path: &Path, extra: Option<&Path>) -> Result<SampleCatalog, Failure> {
    let descs = catalog_descriptors(extra)?;
    load_catalog_with(path, ManipulationRegistry::builtin(), &descs).map_err(|e| data(path, e))
}

fn load_embeddings(path: &Path, catalog: &SampleCatalog) -> Result<EmbeddingSet, Failure> {
    let m = read_embeddings(path).map_err(|e| data(path, e))?;
    if m.nrows() != catalog.len() {
        return Err(data(path, format!("{} embedding rows for {} catalog rows", m.nrows(), catalog.len())));
    }
    EmbeddingSet::new(m).map_err(|e| data(path, e))
}

fn plan(a: PlanArgs) -> Result<(), Failure> {
    let descs = descriptors(a.descriptors.as_deref())?;
    let models = list(&a.models);
    let losses = parse_loss_list(&a.losses).map_err(|e| Failure::Usage(format!("--losses: {e}")))?;
    let mut req = PlanRequest::new(a.rq, models, a.seed).losses(losses).include_diagonal(a.with_diagonal);
    if let Some(s) = &a.sources {
        req = req.sources(list(s));
    }
    if let Some(t) = &a.tests {
        req = req.tests(list(t));
    }
    let plan = make_plan(&req, &descs).map_err(|e| Failure::Usage(e.to_string()))?;
    write_plan(&a.out, &plan).map_err(|e| data(&a.out, e))
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    if a.mode == Mode::Binary && a.loss != LossSetting::Baseline {
        return Err(Failure::Usage(format!("--loss {} requires --mode multiclass", a.loss)));
    }
    let cfg = match &a.config {
        Some(p) => read_config(p, a.loss, a.seed).map_err(|e| data(p, e))?,
        None => RunConfig::new(a.loss, a.seed),
    };
    let catalog = load_catalog(&a.catalog, a.descriptors.as_deref())?;
    let emb = load_embeddings(&a.embeddings, &catalog)?;
    let (params, log) = train_head(&emb, &catalog, a.mode, &cfg.loss, &cfg.train).map_err(|e| data(&a.embeddings, e))?;
    if log.collapsed {
        eprintln!("warning: training balanced accuracy {:.4} is at chance level", log.train_balanced_accuracy);
    }
    let metadata = BTreeMap::from([
        ("collapsed".to_string(), log.collapsed.to_string()),
        ("config_hash".to_string(), config_hash(&cfg)),
        ("loss_setting".to_string(), a.loss.tag().to_string()),
        ("model_tag".to_string(), a.model_tag.clone()),
        ("seed".to_string(), a.seed.to_string()),
        ("train_dataset".to_string(), catalog.datasets_in(Split::Train).join("+")),
    ]);
    let head = HeadFile { params, metadata };
    write_head(&a.out, &head).map_err(|e| data(&a.out, e))?;
    if let Some(p) = &a.log {
        std::fs::write(p, log.to_csv()).map_err(|e| data(p, e))?;
    }
    Ok(())
}

fn meta<'a>(head: &'a HeadFile, key: &str, path: &Path) -> Result<&'a str, Failure> {
    head.metadata
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| data(path, format!("head metadata lacks {key}")))
}

fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let head_bytes = std::fs::read(&a.head).map_err(|e| data(&a.head, e))?;
    let head = read_head(&a.head).map_err(|e| data(&a.head, e))?;
    let catalog = load_catalog(&a.catalog, a.descriptors.as_deref())?;
    let emb = load_embeddings(&a.embeddings, &catalog)?;
    if emb.dim() != head.params.dim() {
        return Err(data(
            &a.embeddings,
            format!("embedding width {} does not match head width {}", emb.dim(), head.params.dim()),
        ));
    }
    let target = match &a.manipulation {
        Some(raw) => Some(
            ManipulationRegistry::builtin()
                .canonicalize(raw)
                .map_err(|e| Failure::Usage(format!("--manipulation: {e}")))?,
        ),
        None => None,
    };
    let preds = predict(&emb, &head.params).map_err(|e| data(&a.embeddings, e))?;

    let loss_setting: LossSetting = meta(&head, "loss_setting", &a.head)?
        .parse()
        .map_err(|e| data(&a.head, e))?;
    let seed: u64 = meta(&head, "seed", &a.head)?.parse().map_err(|e| data(&a.head, e))?;
    let mut record = ReportRecord {
        model_tag: meta(&head, "model_tag", &a.head)?.to_string(),
        train_dataset: meta(&head, "train_dataset", &a.head)?.to_string(),
        test_dataset: catalog.datasets_in(Split::Test).join("+"),
        manipulation: target.clone(),
        mode: head.params.mode,
        loss_setting,
        auc: None,
        eer: None,
        eer_threshold: None,
        ba: None,
        n_real: 0,
        n_fake: 0,
        manipulation_accuracy: None,
        n_manipulation: None,
        ba_basis: BA_BASIS.to_string(),
        collapsed: head.metadata.get("collapsed").map(|c| c == "true"),
        config_hash: meta(&head, "config_hash", &a.head)?.to_string(),
        seed,
        head_sha256: hex::encode(Sha256::digest(&head_bytes)),
        tool_version: crate::TOOL_VERSION.to_string(),
    };

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for row in catalog.split_rows(Split::Test) {
        scores.push(binarize_score(preds.row(row.row_index)).map_err(|e| data(&a.embeddings, e))?);
        labels.push(u8::from(row.label.is_fake()));
    }
    if scores.is_empty() {
        return Err(data(&a.catalog, "catalog has no test rows"));
    }
    record.n_fake = labels.iter().filter(|&&l| l == 1).count();
    record.n_real = labels.len() - record.n_fake;
    if record.n_fake > 0 && record.n_real > 0 {
        let sl = ScoredLabels::new(&scores, &labels).map_err(|e| data(&a.embeddings, e))?;
        let d = detection_metrics(&sl, 0.5).map_err(|e| data(&a.embeddings, e))?;
        record.set_detection(&d);
    } else {
        eprintln!("warning: test rows hold a single class; AUC, EER and BA are omitted");
    }
    if let Some(t) = &target {
        let acc = manipulation_accuracy(&preds, &catalog, t, &head.params.label_order)
            .map_err(|e| data(&a.catalog, e))?;
        record.manipulation_accuracy = Some(acc);
        record.n_manipulation = Some(catalog.split_rows(Split::Test).filter(|r| &r.label == t).count());
    }
    let mut text = serde_json::to_string_pretty(&record).map_err(|e| data(&a.out, e))?;
    text.push('\n');
    std::fs::write(&a.out, text).map_err(|e| data(&a.out, e))
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let paths = glob::glob(&a.inputs).map_err(|e| Failure::Usage(format!("--inputs: {e}")))?;
    let mut records = Vec::new();
    let mut files: Vec<PathBuf> = Vec::new();
    for p in paths {
        files.push(p.map_err(|e| data(e.path(), e.error()))?);
    }
    files.sort();
    for f in &files {
        if f == &a.out {
            continue;
        }
        records.extend(read_records(f).map_err(|e| data(f, e))?);
    }
    if records.is_empty() {
        return Err(Failure::Data(format!("{}: {}", a.inputs, IoError::EmptyInput)));
    }
    write_report(&a.out, &records, a.format).map_err(|e| data(&a.out, e))
}
