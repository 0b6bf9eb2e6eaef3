//! Command-line surface: search, score, classify, eval, calibrate, bench,
//! review and plot-data.
//!
//! Every run resolves a [`RunConfig`] from an optional JSON config file
//! plus flag overrides, and every output embeds that resolved config: JSON
//! outputs carry a `config` field, CSV outputs start with a `# config=...`
//! comment line (readers here skip `#` lines). Exit codes: 0 success,
//! 1 operational error, 2 usage error.

use std::fs::File;
use std::io::{BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::backend::{LogProbProvider, RemoteProvider, RemoteProviderConfig, ToyModel, ToyProvider};
use crate::bench::{measure_overhead, OverheadReport};
use crate::dataset::{load_dataset, DatasetFormat};
use crate::error::{Error, Result};
use crate::eval::{auc, calibrate_tau, f1_for_scores, rel_score, roc_points, MetricsReport};
use crate::scoring::score_batch;
use crate::search::{beam_search, select_prefixes, SearchConfig, SearchOutcome};
use crate::store::{load_prefix_set, save_prefix_set};
use crate::types::{
    BackendDescriptor, Dataset, Prefix, PrefixSet, Prompt, Role, RunConfig, SearchParams,
    SearchSnapshot, TemplateMode, MANUAL_AGREEMENT_TEXT, MANUAL_REFUSAL_TEXT,
};

/// Environment variable holding the bearer token for remote endpoints.
pub const AUTH_TOKEN_ENV: &str = "PREFIXGUARD_AUTH_TOKEN";

#[derive(Parser, Debug)]
#[command(
    name = "prefixguard",
    version,
    about = "Detect harmful prompts from a model's own agreement-vs-refusal prefix log-probabilities"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct CommonOpts {
    /// JSON run-config file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Remote endpoint URL (single POST endpoint).
    #[arg(long, global = true)]
    backend_url: Option<String>,
    /// Model identifier sent to the backend.
    #[arg(long, global = true)]
    model_id: Option<String>,
    /// Toy-model file to use as the backend instead of a remote endpoint.
    #[arg(long, global = true)]
    toy_model: Option<PathBuf>,
    /// Prefix-set file.
    #[arg(long, global = true)]
    prefix_set: Option<PathBuf>,
    /// Dataset file (.jsonl or .csv).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Decision threshold in nats.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Wrap prompts in the serving side's chat template.
    #[arg(long, global = true, value_parser = parse_template)]
    template: Option<TemplateMode>,
    /// Max in-flight probe requests.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn parse_template(s: &str) -> std::result::Result<TemplateMode, String> {
    match s {
        "raw" => Ok(TemplateMode::Raw),
        "chat" => Ok(TemplateMode::Chat),
        other => Err(format!("unknown template mode `{other}` (raw|chat)")),
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Discover a discriminative prefix set with the sign-balanced beam
    /// search and write it plus a per-layer candidate report.
    Search {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long)]
        max_length: Option<usize>,
        #[arg(long)]
        final_per_side: Option<usize>,
        /// Prompts of each label taken (in dataset order) as init sets.
        #[arg(long)]
        init_per_class: Option<usize>,
        /// Also write the per-layer candidate table here (CSV).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a dataset: one CSV row per prompt with ell_ref, ell_agr, s.
    Score {
        #[command(flatten)]
        common: CommonOpts,
        /// Build the prefix set from the built-in manual openers instead of
        /// a prefix-set file.
        #[arg(long)]
        manual_prefixes: bool,
    },
    /// Threshold a dataset: one CSV row per prompt with the decision.
    Classify {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manual_prefixes: bool,
    },
    /// Metrics (F1/AUC, optional RelScore) from a scores CSV or a live run.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Scores CSV produced by `score` (otherwise runs live).
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Upper-bound F1 of the model's prompt-based classifier; enables
        /// the rel_score field.
        #[arg(long)]
        m_upper: Option<f64>,
        #[arg(long)]
        manual_prefixes: bool,
    },
    /// Pick the F1-maximizing threshold on a validation dataset.
    Calibrate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        manual_prefixes: bool,
    },
    /// Measure per-detection probe overhead with the cache bypassed vs
    /// reused.
    Bench {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        /// Limit to the first N prompts of the dataset.
        #[arg(long)]
        limit: Option<usize>,
        /// Also sweep 1..=N prefix pairs and write an overhead curve CSV.
        #[arg(long)]
        sweep_pairs: bool,
        #[arg(long)]
        manual_prefixes: bool,
    },
    /// Inspect a prefix set and drop entries (never adds or edits).
    Review {
        #[command(flatten)]
        common: CommonOpts,
        /// Entries to drop, e.g. "a0,r2" (a = agreement, r = refusal,
        /// index as printed). Without this flag the drop list is read from
        /// stdin when it is a terminal.
        #[arg(long)]
        drop: Option<String>,
    },
    /// Emit per-class score histograms and ROC points from a scores CSV.
    PlotData {
        #[command(flatten)]
        common: CommonOpts,
        /// Scores CSV produced by `score`.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

/// Parse argv and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message; usage problems exit 2
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

// ---- config resolution ----

fn load_config_file(path: &Path) -> Result<RunConfig> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::BadFile {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn default_config() -> RunConfig {
    RunConfig {
        backend: BackendDescriptor::Remote {
            endpoint: String::new(),
            model_id: String::new(),
            template: TemplateMode::Raw,
        },
        prefix_set: None,
        tau: 0.0,
        search: SearchParams::default(),
        concurrency: 4,
        timeout_secs: 30,
        retries: 3,
        calibration_split: None,
    }
}

/// File config overlaid with flags; flags win.
fn resolve_config(common: &CommonOpts) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => load_config_file(path)?,
        None => default_config(),
    };
    if let Some(path) = &common.toy_model {
        let model_id = common.model_id.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "toy".into())
        });
        config.backend = BackendDescriptor::Toy {
            path: path.clone(),
            model_id,
        };
    } else if let Some(url) = &common.backend_url {
        let (model_id, template) = match &config.backend {
            BackendDescriptor::Remote {
                model_id, template, ..
            } => (model_id.clone(), *template),
            _ => (String::new(), TemplateMode::Raw),
        };
        config.backend = BackendDescriptor::Remote {
            endpoint: url.clone(),
            model_id: common.model_id.clone().unwrap_or(model_id),
            template: common.template.unwrap_or(template),
        };
    } else if let Some(model_id) = &common.model_id {
        if let BackendDescriptor::Remote {
            model_id: ref mut m,
            ..
        } = config.backend
        {
            *m = model_id.clone();
        }
    }
    if let (Some(mode), BackendDescriptor::Remote { template, .. }) =
        (common.template, &mut config.backend)
    {
        *template = mode;
    }
    if let Some(p) = &common.prefix_set {
        config.prefix_set = Some(p.clone());
    }
    if let Some(t) = common.tau {
        config.tau = t;
    }
    if let Some(c) = common.concurrency {
        config.concurrency = c;
    }
    config.validate()?;
    Ok(config)
}

fn build_provider(config: &RunConfig) -> Result<Arc<dyn LogProbProvider>> {
    match &config.backend {
        BackendDescriptor::Toy { path, model_id } => {
            let model = ToyModel::load(path)?;
            Ok(Arc::new(ToyProvider::new(model, model_id.clone())))
        }
        BackendDescriptor::Remote {
            endpoint,
            model_id,
            template,
        } => {
            if endpoint.is_empty() {
                return Err(Error::InvalidConfig(
                    "no backend configured: pass --backend-url or --toy-model".into(),
                ));
            }
            let mut remote = RemoteProviderConfig::new(endpoint.clone(), model_id.clone());
            remote.template = *template;
            remote.timeout = Duration::from_secs(config.timeout_secs);
            remote.retries = config.retries;
            remote.auth_token = std::env::var(AUTH_TOKEN_ENV).ok();
            Ok(Arc::new(RemoteProvider::new(remote)))
        }
    }
}

fn require_dataset(common: &CommonOpts) -> Result<Dataset> {
    let path = common
        .dataset
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--dataset is required".into()))?;
    let dataset = load_dataset(path, DatasetFormat::from_path(path))?;
    if dataset.is_empty() {
        eprintln!("warning: dataset {} is empty", path.display());
    }
    Ok(dataset)
}

fn resolve_prefix_set(
    common: &CommonOpts,
    config: &RunConfig,
    manual: bool,
    provider: &dyn LogProbProvider,
) -> Result<PrefixSet> {
    if manual {
        return manual_prefix_set(provider);
    }
    let path = common
        .prefix_set
        .as_ref()
        .or(config.prefix_set.as_ref())
        .ok_or_else(|| {
            Error::InvalidConfig("--prefix-set is required (or pass --manual-prefixes)".into())
        })?;
    load_prefix_set(path)
}

/// The shipped manual openers, tokenized by the live backend.
pub fn manual_prefix_set(provider: &dyn LogProbProvider) -> Result<PrefixSet> {
    let agreement = Prefix::new(
        provider.tokenize(MANUAL_AGREEMENT_TEXT)?,
        MANUAL_AGREEMENT_TEXT,
        Role::Agreement,
        None,
    )?;
    let refusal = Prefix::new(
        provider.tokenize(MANUAL_REFUSAL_TEXT)?,
        MANUAL_REFUSAL_TEXT,
        Role::Refusal,
        None,
    )?;
    PrefixSet::new(provider.model_id(), vec![agreement], vec![refusal], None)
}

// ---- output helpers ----

fn config_comment(config: &RunConfig) -> String {
    format!(
        "# config={}",
        serde_json::to_string(config).expect("config serializes")
    )
}

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn json_with_config(value: serde_json::Value, config: &RunConfig) -> serde_json::Value {
    let mut object = serde_json::Map::new();
    match value {
        serde_json::Value::Object(m) => object = m,
        other => {
            object.insert("result".into(), other);
        }
    }
    object.insert(
        "config".into(),
        serde_json::to_value(config).expect("config serializes"),
    );
    serde_json::Value::Object(object)
}

fn emit_json(out: Option<&PathBuf>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    match out {
        Some(path) => {
            let mut w = open_out(path)?;
            writeln!(w, "{text}").map_err(|e| Error::io(path, e))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

// ---- scores CSV ----

struct ScoreRow {
    prompt_id: String,
    ell_ref: f64,
    ell_agr: f64,
    s: f64,
    label: Option<u8>,
}

fn write_scores_csv(path: &Path, config: &RunConfig, rows: &[ScoreRow]) -> Result<()> {
    let mut w = open_out(path)?;
    let io_err = |e: std::io::Error| Error::io(path, e);
    writeln!(w, "{}", config_comment(config)).map_err(io_err)?;
    writeln!(w, "prompt_id,ell_ref,ell_agr,s,label").map_err(io_err)?;
    for r in rows {
        let label = r
            .label
            .map(|l| l.to_string())
            .unwrap_or_default();
        writeln!(
            w,
            "{},{:.12},{:.12},{:.12},{label}",
            r.prompt_id, r.ell_ref, r.ell_agr, r.s
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn read_scores_csv(path: &Path) -> Result<Vec<(String, f64, Option<u8>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::BadFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("prompt_id").ok_or_else(|| Error::BadFile {
        path: path.to_path_buf(),
        msg: "missing prompt_id column".into(),
    })?;
    let s_col = col("s").ok_or_else(|| Error::BadFile {
        path: path.to_path_buf(),
        msg: "missing s column".into(),
    })?;
    let label_col = col("label");
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedRecord {
            line: i + 2,
            msg: e.to_string(),
        })?;
        let id = record.get(id_col).unwrap_or("").to_string();
        let s: f64 = record
            .get(s_col)
            .unwrap_or("")
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::MalformedRecord {
                line: i + 2,
                msg: "s is not a finite number".into(),
            })?;
        let label = match label_col.and_then(|c| record.get(c)) {
            None | Some("") => None,
            Some(v) => Some(v.parse::<u8>().map_err(|_| Error::MalformedRecord {
                line: i + 2,
                msg: "label is not 0 or 1".into(),
            })?),
        };
        rows.push((id, s, label));
    }
    Ok(rows)
}

fn labeled_scores(rows: &[(String, f64, Option<u8>)]) -> Result<Vec<(f64, u8)>> {
    rows.iter()
        .map(|(id, s, label)| match label {
            Some(l) => Ok((*s, *l)),
            None => Err(Error::UnlabeledPrompt(id.clone())),
        })
        .collect()
}

// ---- live scoring ----

fn live_scores(
    provider: &dyn LogProbProvider,
    dataset: &Dataset,
    set: &PrefixSet,
    tau: f64,
    concurrency: usize,
) -> Result<Vec<(ScoreRow, bool)>> {
    let decisions = score_batch(provider, &dataset.prompts, set, tau, concurrency)?;
    let mut rows = Vec::with_capacity(decisions.len());
    for (prompt, decision) in dataset.prompts.iter().zip(decisions) {
        let decision = decision?;
        rows.push((
            ScoreRow {
                prompt_id: prompt.id.clone(),
                ell_ref: decision.score.ell_ref,
                ell_agr: decision.score.ell_agr,
                s: decision.score.s,
                label: prompt.label,
            },
            decision.harmful,
        ));
    }
    Ok(rows)
}

// ---- subcommand bodies ----

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Search {
            common,
            top_k,
            beam_width,
            max_length,
            final_per_side,
            init_per_class,
            report,
        } => {
            let mut config = resolve_config(&common)?;
            if let Some(v) = top_k {
                config.search.top_k = v;
            }
            if let Some(v) = beam_width {
                config.search.beam_width = v;
            }
            if let Some(v) = max_length {
                config.search.max_length = v;
            }
            if let Some(v) = final_per_side {
                config.search.final_per_side = v;
            }
            if let Some(v) = init_per_class {
                config.search.init_per_class = v;
            }
            cmd_search(&common, &config, report.as_ref())
        }
        Command::Score {
            common,
            manual_prefixes,
        } => cmd_score(&common, manual_prefixes),
        Command::Classify {
            common,
            manual_prefixes,
        } => cmd_classify(&common, manual_prefixes),
        Command::Eval {
            common,
            scores,
            m_upper,
            manual_prefixes,
        } => cmd_eval(&common, scores.as_ref(), m_upper, manual_prefixes),
        Command::Calibrate {
            common,
            scores,
            manual_prefixes,
        } => cmd_calibrate(&common, scores.as_ref(), manual_prefixes),
        Command::Bench {
            common,
            repetitions,
            limit,
            sweep_pairs,
            manual_prefixes,
        } => cmd_bench(&common, repetitions, limit, sweep_pairs, manual_prefixes),
        Command::Review { common, drop } => cmd_review(&common, drop.as_deref()),
        Command::PlotData {
            common,
            scores,
            bins,
        } => cmd_plot_data(&common, &scores, bins),
    }
}

fn cmd_search(common: &CommonOpts, config: &RunConfig, report: Option<&PathBuf>) -> Result<()> {
    let provider = build_provider(config)?;
    let dataset = require_dataset(common)?;
    let (benign_all, harmful_all) = dataset.by_label();
    let n = config.search.init_per_class;
    let init_benign: Vec<Prompt> = benign_all.into_iter().take(n).collect();
    let init_harmful: Vec<Prompt> = harmful_all.into_iter().take(n).collect();
    let mut search_config =
        SearchConfig::new(init_benign, init_harmful, config.search.clone())?;
    search_config.concurrency = config.concurrency;

    let outcome = beam_search(provider.as_ref(), &search_config)?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    let mut set = select_prefixes(
        &outcome.candidates,
        config.search.final_per_side,
        provider.model_id(),
    )?;
    set.created_with = Some(SearchSnapshot {
        top_k: config.search.top_k,
        beam_width: config.search.beam_width,
        max_length: config.search.max_length,
        final_per_side: config.search.final_per_side,
        init_benign: search_config.init_benign.len(),
        init_harmful: search_config.init_harmful.len(),
        aggregation: "mean_next_token_logprob".into(),
        template: match &config.backend {
            BackendDescriptor::Remote { template, .. } => *template,
            BackendDescriptor::Toy { .. } => TemplateMode::Raw,
        },
    });

    let out = common
        .out
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--out is required for search".into()))?;
    save_prefix_set(&set, out)?;
    println!(
        "wrote {} ({} agreement + {} refusal prefixes)",
        out.display(),
        set.agreement.len(),
        set.refusal.len()
    );
    if let Some(report_path) = report {
        write_layer_report(report_path, config, &outcome)?;
        println!("wrote {}", report_path.display());
    }
    Ok(())
}

fn write_layer_report(path: &Path, config: &RunConfig, outcome: &SearchOutcome) -> Result<()> {
    let mut w = open_out(path)?;
    let io_err = |e: std::io::Error| Error::io(path, e);
    writeln!(w, "{}", config_comment(config)).map_err(io_err)?;
    writeln!(w, "layer,tokens,text,mu_benign,mu_harmful,delta,retained").map_err(io_err)?;
    for layer in &outcome.layers {
        for c in &layer.scored {
            let retained = layer.retained.iter().any(|r| r.tokens == c.tokens);
            let tokens = c
                .tokens
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(
                w,
                "{},{},{:?},{:.12},{:.12},{:.12},{}",
                layer.depth, tokens, c.text, c.mu_benign, c.mu_harmful, c.delta, retained
            )
            .map_err(io_err)?;
        }
    }
    Ok(())
}

fn cmd_score(common: &CommonOpts, manual: bool) -> Result<()> {
    let config = resolve_config(common)?;
    let provider = build_provider(&config)?;
    let dataset = require_dataset(common)?;
    let set = resolve_prefix_set(common, &config, manual, provider.as_ref())?;
    let rows = live_scores(
        provider.as_ref(),
        &dataset,
        &set,
        config.tau,
        config.concurrency,
    )?;
    let out = common
        .out
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--out is required for score".into()))?;
    let score_rows: Vec<ScoreRow> = rows.into_iter().map(|(r, _)| r).collect();
    write_scores_csv(out, &config, &score_rows)?;
    println!("wrote {} ({} prompts)", out.display(), score_rows.len());
    Ok(())
}

fn cmd_classify(common: &CommonOpts, manual: bool) -> Result<()> {
    let config = resolve_config(common)?;
    let provider = build_provider(&config)?;
    let dataset = require_dataset(common)?;
    let set = resolve_prefix_set(common, &config, manual, provider.as_ref())?;
    let rows = live_scores(
        provider.as_ref(),
        &dataset,
        &set,
        config.tau,
        config.concurrency,
    )?;
    let out = common
        .out
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--out is required for classify".into()))?;
    let mut w = open_out(out)?;
    let io_err = |e: std::io::Error| Error::io(out, e);
    writeln!(w, "{}", config_comment(&config)).map_err(io_err)?;
    writeln!(w, "prompt_id,ell_ref,ell_agr,s,harmful").map_err(io_err)?;
    for (r, harmful) in &rows {
        writeln!(
            w,
            "{},{:.12},{:.12},{:.12},{harmful}",
            r.prompt_id, r.ell_ref, r.ell_agr, r.s
        )
        .map_err(io_err)?;
    }
    println!("wrote {} ({} prompts)", out.display(), rows.len());
    Ok(())
}

fn cmd_eval(
    common: &CommonOpts,
    scores: Option<&PathBuf>,
    m_upper: Option<f64>,
    manual: bool,
) -> Result<()> {
    let config = resolve_config(common)?;
    let labeled = match scores {
        Some(path) => labeled_scores(&read_scores_csv(path)?)?,
        None => {
            let provider = build_provider(&config)?;
            let dataset = require_dataset(common)?;
            let set = resolve_prefix_set(common, &config, manual, provider.as_ref())?;
            let rows = live_scores(
                provider.as_ref(),
                &dataset,
                &set,
                config.tau,
                config.concurrency,
            )?;
            rows.iter()
                .map(|(r, _)| match r.label {
                    Some(l) => Ok((r.s, l)),
                    None => Err(Error::UnlabeledPrompt(r.prompt_id.clone())),
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut report = f1_for_scores(&labeled, config.tau)?;
    if let Some(upper) = m_upper {
        report.rel_score = Some(rel_score(report.f1, upper)?);
    }
    println!("{}", MetricsReport::CSV_HEADER);
    println!("{}", report.csv_row());
    let value = json_with_config(
        serde_json::to_value(&report).expect("report serializes"),
        &config,
    );
    emit_json(common.out.as_ref(), &value)?;
    Ok(())
}

fn cmd_calibrate(common: &CommonOpts, scores: Option<&PathBuf>, manual: bool) -> Result<()> {
    let mut config = resolve_config(common)?;
    let labeled = match scores {
        Some(path) => labeled_scores(&read_scores_csv(path)?)?,
        None => {
            let provider = build_provider(&config)?;
            let dataset = require_dataset(common)?;
            config.calibration_split = Some(dataset.name.clone());
            let set = resolve_prefix_set(common, &config, manual, provider.as_ref())?;
            let rows = live_scores(
                provider.as_ref(),
                &dataset,
                &set,
                config.tau,
                config.concurrency,
            )?;
            rows.iter()
                .map(|(r, _)| match r.label {
                    Some(l) => Ok((r.s, l)),
                    None => Err(Error::UnlabeledPrompt(r.prompt_id.clone())),
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let tau = calibrate_tau(&labeled)?;
    let f1 = f1_for_scores(&labeled, tau)?.f1;
    let value = json_with_config(
        serde_json::json!({ "tau": tau, "f1_at_tau": f1, "n": labeled.len() }),
        &config,
    );
    emit_json(common.out.as_ref(), &value)?;
    Ok(())
}

fn cmd_bench(
    common: &CommonOpts,
    repetitions: usize,
    limit: Option<usize>,
    sweep_pairs: bool,
    manual: bool,
) -> Result<()> {
    let config = resolve_config(common)?;
    let provider = build_provider(&config)?;
    let dataset = require_dataset(common)?;
    let set = resolve_prefix_set(common, &config, manual, provider.as_ref())?;
    let prompts: Vec<Prompt> = match limit {
        Some(n) => dataset.prompts.into_iter().take(n).collect(),
        None => dataset.prompts,
    };
    let report = measure_overhead(provider.as_ref(), &prompts, &set, repetitions)?;
    if report.cache_indistinguishable {
        eprintln!("warning: provider ignored cache hints; report is cache-indistinguishable");
    }
    println!("{}", OverheadReport::CSV_HEADER);
    println!("{}", report.csv_row());
    let value = json_with_config(
        serde_json::to_value(&report).expect("report serializes"),
        &config,
    );
    emit_json(common.out.as_ref(), &value)?;

    if sweep_pairs {
        let out = common
            .out
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("--out is required with --sweep-pairs".into()))?;
        let curve_path = out.with_extension("pairs.csv");
        let mut w = open_out(&curve_path)?;
        let io_err = |e: std::io::Error| Error::io(&curve_path, e);
        writeln!(w, "{}", config_comment(&config)).map_err(io_err)?;
        writeln!(w, "pairs,overhead_no_cache_s,overhead_cache_s,speedup").map_err(io_err)?;
        for pairs in 1..=set.pair_count() {
            let subset = set.truncated(pairs)?;
            let r = measure_overhead(provider.as_ref(), &prompts, &subset, repetitions)?;
            writeln!(
                w,
                "{pairs},{:.6},{:.6},{:.2}",
                r.t_no_cache.as_secs_f64(),
                r.t_cache.as_secs_f64(),
                r.speedup
            )
            .map_err(io_err)?;
        }
        println!("wrote {}", curve_path.display());
    }
    Ok(())
}

fn cmd_review(common: &CommonOpts, drop: Option<&str>) -> Result<()> {
    let path = common
        .prefix_set
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--prefix-set is required for review".into()))?;
    let set = load_prefix_set(path)?;
    println!("prefix set for model {}", set.model_id);
    let print_side = |tag: char, prefixes: &[Prefix]| {
        for (i, p) in prefixes.iter().enumerate() {
            let delta = p
                .delta
                .map(|d| format!("{d:+.4}"))
                .unwrap_or_else(|| "manual".into());
            println!("  {tag}{i}  delta={delta:>10}  text={:?}", p.text);
        }
    };
    print_side('a', &set.agreement);
    print_side('r', &set.refusal);

    let drop_spec = match drop {
        Some(s) => s.to_string(),
        None => {
            if !std::io::stdin().is_terminal() {
                println!("(no --drop given and stdin is not a terminal; keeping all prefixes)");
                String::new()
            } else {
                print!("entries to drop (e.g. a0 r2), empty to keep all: ");
                std::io::stdout().flush().ok();
                let mut line = String::new();
                std::io::stdin()
                    .read_line(&mut line)
                    .map_err(|e| Error::io("stdin", e))?;
                line
            }
        }
    };
    let mut drop_agreement = Vec::new();
    let mut drop_refusal = Vec::new();
    for token in drop_spec.split([' ', ',', '\n', '\t']) {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let (side, idx) = token.split_at(1);
        let idx: usize = idx.parse().map_err(|_| {
            Error::InvalidConfig(format!("bad drop entry `{token}` (expected e.g. a0, r2)"))
        })?;
        match side {
            "a" => drop_agreement.push(idx),
            "r" => drop_refusal.push(idx),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "bad drop entry `{token}` (expected e.g. a0, r2)"
                )))
            }
        }
    }
    let keep = |prefixes: &[Prefix], drops: &[usize]| -> Vec<Prefix> {
        prefixes
            .iter()
            .enumerate()
            .filter(|(i, _)| !drops.contains(i))
            .map(|(_, p)| p.clone())
            .collect()
    };
    let reviewed = PrefixSet::new(
        set.model_id.clone(),
        keep(&set.agreement, &drop_agreement),
        keep(&set.refusal, &drop_refusal),
        set.created_with.clone(),
    )?;
    let out = common.out.as_ref().unwrap_or(path);
    save_prefix_set(&reviewed, out)?;
    println!(
        "wrote {} ({} agreement + {} refusal prefixes)",
        out.display(),
        reviewed.agreement.len(),
        reviewed.refusal.len()
    );
    Ok(())
}

fn cmd_plot_data(common: &CommonOpts, scores: &Path, bins: usize) -> Result<()> {
    let config = resolve_config(common)?;
    if bins == 0 {
        return Err(Error::InvalidConfig("--bins must be positive".into()));
    }
    let rows = read_scores_csv(scores)?;
    let labeled = labeled_scores(&rows)?;
    let out = common
        .out
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--out is required for plot-data".into()))?;

    // histogram: shared bin edges over the score range, one count column
    // per class
    let lo = labeled.iter().map(|&(s, _)| s).fold(f64::INFINITY, f64::min);
    let hi = labeled
        .iter()
        .map(|&(s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut benign = vec![0usize; bins];
    let mut harmful = vec![0usize; bins];
    for &(s, label) in &labeled {
        let mut bin = ((s - lo) / width) as usize;
        if bin >= bins {
            bin = bins - 1;
        }
        if label == 1 {
            harmful[bin] += 1;
        } else {
            benign[bin] += 1;
        }
    }
    let hist_path = out.with_extension("hist.csv");
    let mut w = open_out(&hist_path)?;
    let io_err = |e: std::io::Error| Error::io(&hist_path, e);
    writeln!(w, "{}", config_comment(&config)).map_err(io_err)?;
    writeln!(w, "bin_lo,bin_hi,benign,harmful").map_err(io_err)?;
    for i in 0..bins {
        writeln!(
            w,
            "{:.6},{:.6},{},{}",
            lo + i as f64 * width,
            lo + (i + 1) as f64 * width,
            benign[i],
            harmful[i]
        )
        .map_err(io_err)?;
    }
    drop(w);

    let roc_path = out.with_extension("roc.csv");
    let points = roc_points(&labeled)?;
    let auc_value = auc(&labeled)?;
    let mut w = open_out(&roc_path)?;
    let io_err = |e: std::io::Error| Error::io(&roc_path, e);
    writeln!(w, "{}", config_comment(&config)).map_err(io_err)?;
    writeln!(w, "threshold,fpr,tpr").map_err(io_err)?;
    for p in points {
        writeln!(w, "{:.12},{:.6},{:.6}", p.threshold, p.fpr, p.tpr).map_err(io_err)?;
    }
    println!(
        "wrote {} and {} (auc {:.4})",
        hist_path.display(),
        roc_path.display(),
        auc_value
    );
    Ok(())
}
