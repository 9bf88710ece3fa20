use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use covsearch::config::{Settings, KEYS};
use covsearch::eval::{deltas_to_tsv, paired_t_test, paired_values, per_query_deltas, relevance_by_date};
use covsearch::fsutil::write_atomic_str;
use covsearch::pipeline::{stage1_run, stage2_run, TopicWarning};
use covsearch::query_filter::{filter_queries, load_lexicon, read_queries};
use covsearch::rerank::conformance::{check_endpoint, serve};
use covsearch::rerank::{ConstantScorer, Scorer, WireScorer};
use covsearch::trec::{read_run, read_topics, write_run};
use covsearch::tuning::{emit_heatmap, grid_search, Axis, GridSpec, ModelKind};
use covsearch::{
    load_corpus, Analyzer, BuildOptions, DateFilter, Exec, FieldSelector, InvertedIndex, Judgments, Metric,
    PipelineConfig, Preset, QueryField, Run,
};

mod failure;

use failure::Failure;

#[derive(Parser)]
#[command(name = "covsearch", version, about = "Two-stage literature search: index, retrieve, re-rank, tune, evaluate")]
struct Cli {
    /// Run every data-parallel loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index file from a corpus directory (metadata.csv + fulltext).
    Index(IndexArgs),
    /// First-stage retrieval for every topic, or one ad-hoc `--query`.
    Search(SearchArgs),
    /// First-stage retrieval followed by re-ranking against a scorer.
    Rerank(RerankArgs),
    /// Grid search over first-stage parameters.
    Tune(TuneArgs),
    /// Score run files against judgments.
    Eval(EvalArgs),
    /// Keep the ids of queries that mention a lexicon term.
    FilterQueries(FilterArgs),
    /// Print the resolved pipeline configuration as `key = value` lines.
    ShowConfig(PipelineArgs),
    /// List every configuration key with a short description.
    Keys,
    /// Judged-document relevance before and after a publication date.
    DateSplit(DateSplitArgs),
    /// Serve the scorer protocol on stdin/stdout with a constant score.
    EchoScorer {
        #[arg(long, default_value_t = 0.5)]
        score: f64,
    },
    /// Run protocol conformance checks against a scorer endpoint.
    CheckScorer {
        endpoint: String,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
    },
}

#[derive(Args)]
struct IndexArgs {
    corpus: PathBuf,
    /// title, title_abstract, full_text, or a `+`-joined list.
    #[arg(long, default_value = "full_text")]
    fields: String,
    #[arg(long)]
    out: PathBuf,
    /// Skip term positions (SDM needs them).
    #[arg(long)]
    no_positions: bool,
}

/// Pipeline configuration layers. Explicit flags override `--preset`, which
/// overrides `--config`.
#[derive(Args, Clone, Default)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Any configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    k1: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    k: Option<String>,
    /// YYYY-MM-DD or `none`.
    #[arg(long)]
    date_min: Option<String>,
    #[arg(long)]
    query_field: Option<String>,
    #[arg(long)]
    doc_fields: Option<String>,
    #[arg(long)]
    run_tag: Option<String>,
    #[arg(long)]
    index: Option<String>,
    #[arg(long)]
    corpus: Option<String>,
    #[arg(long)]
    topics: Option<String>,
    #[arg(long)]
    output: Option<String>,
    /// `echo`, `stdio:<cmd>`, `tcp:<host:port>` or `unix:<path>`.
    #[arg(long)]
    scorer: Option<String>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Ad-hoc mode: rank this text and print the hits instead of a run file.
    #[arg(long)]
    query: Option<String>,
}

#[derive(Args)]
struct RerankArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long, default_value = "bm25")]
    model: String,
    /// `min:max:step` or a single value.
    #[arg(long)]
    k1: Option<String>,
    #[arg(long)]
    b: Option<String>,
    /// Any other axis as `name=min:max:step`. Repeatable.
    #[arg(long = "axis", value_name = "NAME=SPEC")]
    axes: Vec<String>,
    #[arg(long, default_value = "recall@100")]
    metric: String,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value = "query")]
    query_field: String,
    #[arg(long)]
    date_min: Option<String>,
    #[arg(long)]
    heatmap_out: Option<PathBuf>,
    /// Every cell as CSV.
    #[arg(long)]
    table_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "ndcg@10,p@5,recall@100")]
    metrics: Vec<String>,
    /// Compare every run against this one with a paired t-test.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Per-topic deltas of the first metric (needs --baseline and one run).
    #[arg(long)]
    deltas_out: Option<PathBuf>,
    /// Also print per-topic values.
    #[arg(long)]
    per_topic: bool,
}

#[derive(Args)]
struct FilterArgs {
    /// `id<TAB>text` per line.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    /// Defaults to the built-in list.
    #[arg(long)]
    exclusions: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DateSplitArgs {
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "2020-01-01")]
    cutoff: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::usage(first_line(&e.to_string())).report(),
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

fn first_line(s: &str) -> String {
    s.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string()
}

fn run(command: Command, exec: Exec) -> Result<(), Failure> {
    match command {
        Command::Index(a) => cmd_index(a),
        Command::Search(a) => cmd_search(a, exec),
        Command::Rerank(a) => cmd_rerank(a, exec),
        Command::Tune(a) => cmd_tune(a, exec),
        Command::Eval(a) => cmd_eval(a),
        Command::FilterQueries(a) => cmd_filter(a, exec),
        Command::ShowConfig(a) => {
            let cfg = resolve(&a)?;
            print!("{}", cfg.to_settings().to_text());
            Ok(())
        }
        Command::Keys => {
            for (k, desc) in KEYS {
                println!("{k:<22} {desc}");
            }
            Ok(())
        }
        Command::DateSplit(a) => cmd_date_split(a),
        Command::EchoScorer { score } => {
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            serve(stdin, stdout, |_, _| score).map_err(|e| Failure::scorer(e.to_string()))
        }
        Command::CheckScorer { endpoint, timeout_ms } => {
            let outcomes = check_endpoint(&endpoint, Duration::from_millis(timeout_ms));
            let mut failed = 0;
            for o in &outcomes {
                match &o.result {
                    Ok(()) => println!("PASS  {}", o.name),
                    Err(e) => {
                        failed += 1;
                        println!("FAIL  {}: {e}", o.name);
                    }
                }
            }
            if failed > 0 {
                return Err(Failure::scorer(format!("{failed} of {} checks failed", outcomes.len())));
            }
            Ok(())
        }
    }
}

fn cmd_index(a: IndexArgs) -> Result<(), Failure> {
    let fields = FieldSelector::parse(&a.fields).map_err(Failure::usage_from)?;
    let corpus = load_corpus(&a.corpus)?;
    let opts = BuildOptions {
        fields,
        store_positions: !a.no_positions,
    };
    let index = InvertedIndex::build(&corpus.documents, &Analyzer::default(), opts)?;
    index.save(&a.out)?;
    let s = index.stats();
    eprintln!(
        "indexed {} documents ({} terms, {} fields) into {}",
        s.doc_count,
        s.total_terms,
        fields.name(),
        a.out.display()
    );
    Ok(())
}

/// Settings from the flag layers, lowest precedence first.
fn layers(a: &PipelineArgs) -> Result<Vec<Settings>, Failure> {
    let mut out = Vec::new();
    if let Some(path) = &a.config {
        out.push(Settings::load(path)?);
    }
    if let Some(p) = &a.preset {
        out.push(Preset::parse(p).map_err(Failure::usage_from)?.settings());
    }
    let mut flags = Settings::new();
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        flags.set(k.trim(), v.trim()).map_err(Failure::usage_from)?;
    }
    let named = [
        ("stage1.model", &a.model),
        ("bm25.k1", &a.k1),
        ("bm25.b", &a.b),
        ("stage1.k", &a.k),
        ("stage1.date_min", &a.date_min),
        ("stage1.query_field", &a.query_field),
        ("stage1.doc_fields", &a.doc_fields),
        ("run_tag", &a.run_tag),
        ("index", &a.index),
        ("corpus", &a.corpus),
        ("topics", &a.topics),
        ("output", &a.output),
        ("scorer", &a.scorer),
    ];
    for (key, value) in named {
        if let Some(v) = value {
            flags.set(key, v.as_str()).map_err(Failure::usage_from)?;
        }
    }
    out.push(flags);
    Ok(out)
}

fn resolve(a: &PipelineArgs) -> Result<PipelineConfig, Failure> {
    let layers = layers(a)?;
    let refs: Vec<&Settings> = layers.iter().collect();
    PipelineConfig::resolve(&refs).map_err(Failure::usage_from)
}

fn required<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T, Failure> {
    v.as_ref()
        .ok_or_else(|| Failure::usage(format!("`{key}` is not set (flag --{key} or config key `{key}`)")))
}

fn emit_run(run: &Run, output: Option<&PathBuf>) -> Result<(), Failure> {
    match output {
        Some(path) => write_run(run, path).map_err(Failure::from),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(run.to_trec_string().as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::data(format!("stdout: {e}")))
        }
    }
}

fn warn_topics(warnings: &[TopicWarning]) {
    for w in warnings {
        match w {
            TopicWarning::EmptyQuery { topic_id } => {
                log::warn!("topic {topic_id}: query has no terms after analysis, ranking left empty")
            }
        }
    }
}

fn cmd_search(a: SearchArgs, exec: Exec) -> Result<(), Failure> {
    let cfg = resolve(&a.pipeline)?;
    let index = InvertedIndex::load(required(&cfg.paths.index, "index")?)?;
    let analyzer = Analyzer::default();
    if let Some(q) = &a.query {
        let hits = cfg.stage1.model.search(&index, &analyzer, q, cfg.stage1.k, cfg.stage1.date_filter().as_ref())?;
        for h in hits {
            println!("{}\t{}\t{:.6}", h.rank, h.doc_id, h.score);
        }
        return Ok(());
    }
    let topics = read_topics(required(&cfg.paths.topics, "topics")?)?;
    let (run, warnings) = stage1_run(&index, &analyzer, &topics, &cfg.stage1, &cfg.run_tag, exec)?;
    warn_topics(&warnings);
    emit_run(&run, cfg.paths.output.as_ref())
}

fn connect_scorer(endpoint: &str, timeout: Duration) -> Result<Box<dyn Scorer>, Failure> {
    if endpoint == "echo" {
        return Ok(Box::new(ConstantScorer::default()));
    }
    WireScorer::connect(endpoint, timeout)
        .map(|s| Box::new(s) as Box<dyn Scorer>)
        .map_err(|e| Failure::scorer(format!("cannot reach scorer `{endpoint}`: {e}")))
}

fn cmd_rerank(a: RerankArgs, exec: Exec) -> Result<(), Failure> {
    let cfg = resolve(&a.pipeline)?;
    let index = InvertedIndex::load(required(&cfg.paths.index, "index")?)?;
    let topics = read_topics(required(&cfg.paths.topics, "topics")?)?;
    let corpus = load_corpus(required(&cfg.paths.corpus, "corpus")?)?;
    let scorer = connect_scorer(required(&cfg.paths.scorer, "scorer")?, cfg.scorer_timeout)?;
    let (stage1, warnings) = stage1_run(&index, &Analyzer::default(), &topics, &cfg.stage1, &cfg.run_tag, exec)?;
    warn_topics(&warnings);
    let run = stage2_run(&stage1, &topics, &corpus, &cfg.rerank, scorer, &cfg.run_tag)?;
    emit_run(&run, cfg.paths.output.as_ref())
}

fn parse_date_min(s: Option<&str>) -> Result<Option<DateFilter>, Failure> {
    match s.map(str::trim) {
        None | Some("none") | Some("") => Ok(None),
        Some(d) => chrono_date(d).map(|d| Some(DateFilter::new(d))),
    }
}

fn chrono_date(d: &str) -> Result<chrono::NaiveDate, Failure> {
    chrono::NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|_| Failure::usage(format!("`{d}` is not YYYY-MM-DD")))
}

fn load_judgments(path: &Path) -> Result<Judgments, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let (j, dups) = Judgments::parse(&text, &path.display().to_string())?;
    if !dups.is_empty() {
        log::warn!("{}: {} duplicate judgments, last one kept", path.display(), dups.len());
    }
    Ok(j)
}

fn cmd_tune(a: TuneArgs, exec: Exec) -> Result<(), Failure> {
    let kind = ModelKind::parse(&a.model).map_err(Failure::usage_from)?;
    let mut given: Vec<(String, String)> = Vec::new();
    if let Some(v) = &a.k1 {
        given.push(("k1".into(), v.clone()));
    }
    if let Some(v) = &a.b {
        given.push(("b".into(), v.clone()));
    }
    for kv in &a.axes {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--axis expects NAME=SPEC, got `{kv}`")))?;
        given.push((k.trim().to_string(), v.trim().to_string()));
    }
    let axes = if given.is_empty() {
        kind.default_axes()
    } else {
        given
            .iter()
            .map(|(n, s)| Axis::parse(n, s))
            .collect::<covsearch::Result<Vec<_>>>()
            .map_err(Failure::usage_from)?
    };
    let mut spec = GridSpec::new(kind, axes).map_err(Failure::usage_from)?;
    spec.metric = Metric::parse(&a.metric).map_err(Failure::usage_from)?;
    spec.query_field = QueryField::parse(&a.query_field).map_err(Failure::usage_from)?;
    spec.date_filter = parse_date_min(a.date_min.as_deref())?;

    let index = InvertedIndex::load(&a.index)?;
    let topics = read_topics(&a.topics)?;
    let judgments = load_judgments(&a.qrels)?;
    let result = grid_search(&index, &Analyzer::default(), &topics, &judgments, &spec, exec)?;

    let best: Vec<String> = result.best_params().iter().map(|(n, v)| format!("{n}={v}")).collect();
    println!("best\t{}\t{}={:.4}", best.join(" "), result.metric, result.best.value);
    println!("cells\t{} evaluated, {} skipped", result.cells.len(), result.skipped);
    if let Some(path) = &a.table_out {
        write_atomic_str(path, &result.to_table())?;
    }
    if let Some(path) = &a.heatmap_out {
        let matrix = result
            .heatmap(&spec)
            .ok_or_else(|| Failure::usage("a heatmap needs exactly two swept axes and no skipped cells"))?;
        emit_heatmap(&matrix, path)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let judgments = load_judgments(&a.qrels)?;
    let metrics = a
        .metrics
        .iter()
        .map(|m| Metric::parse(m))
        .collect::<covsearch::Result<Vec<_>>>()
        .map_err(Failure::usage_from)?;
    if metrics.is_empty() {
        return Err(Failure::usage("--metrics is empty"));
    }
    if a.deltas_out.is_some() && (a.baseline.is_none() || a.runs.len() != 1) {
        return Err(Failure::usage("--deltas-out needs --baseline and exactly one run"));
    }
    let baseline = a.baseline.as_ref().map(|p| read_run(p)).transpose()?;
    let runs = a.runs.iter().map(|p| read_run(p)).collect::<covsearch::Result<Vec<_>>>()?;

    let mut out = String::from("run\tmetric\tmean\ttopics\n");
    let mut tests = String::new();
    for (path, run) in a.runs.iter().zip(&runs) {
        let name = path.display();
        for m in &metrics {
            let rep = m.evaluate(run, &judgments);
            for (t, flag) in &rep.flagged {
                log::warn!("{name}: topic {t} {flag:?} for {m}");
            }
            out.push_str(&format!("{name}\t{m}\t{:.4}\t{}\n", rep.mean, rep.per_topic.len()));
            if a.per_topic {
                for (t, v) in &rep.per_topic {
                    out.push_str(&format!("{name}\t{m}\t{v:.4}\t{t}\n"));
                }
            }
            if let Some(base) = &baseline {
                let brep = m.evaluate(base, &judgments);
                let (_, va, vb) = paired_values(&rep, &brep);
                match paired_t_test(&va, &vb) {
                    Ok(t) => tests.push_str(&format!(
                        "{name}\t{m}\tdiff={:+.4}\tt={:.4}\tp={:.4}\tdf={}\t{}\n",
                        t.mean_diff,
                        t.t,
                        t.p,
                        t.df,
                        if t.significant(a.alpha) { "significant" } else { "not significant" }
                    )),
                    Err(e) => tests.push_str(&format!("{name}\t{m}\tt-test unavailable: {e}\n")),
                }
            }
        }
    }
    print!("{out}");
    if !tests.is_empty() {
        println!("\npaired t-test against {} (alpha {})", a.baseline.as_ref().unwrap().display(), a.alpha);
        print!("{tests}");
    }
    if let (Some(path), Some(base)) = (&a.deltas_out, &baseline) {
        let deltas = per_query_deltas(&runs[0], base, &judgments, metrics[0]);
        write_atomic_str(path, &deltas_to_tsv(metrics[0], &deltas))?;
    }
    Ok(())
}

fn cmd_filter(a: FilterArgs, exec: Exec) -> Result<(), Failure> {
    let lexicon = load_lexicon(&a.lexicon, a.exclusions.as_deref())?;
    let queries = read_queries(&a.queries)?;
    let ids = filter_queries(&queries, &lexicon, &Analyzer::default(), exec)?;
    let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
    eprintln!("kept {} of {} queries", ids.len(), queries.len());
    match &a.out {
        Some(path) => write_atomic_str(path, &text).map_err(Failure::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_date_split(a: DateSplitArgs) -> Result<(), Failure> {
    let cutoff = chrono_date(&a.cutoff)?;
    let judgments = load_judgments(&a.qrels)?;
    let corpus = load_corpus(&a.corpus)?;
    let (before, after) = relevance_by_date(&judgments, |d| corpus.get(d).and_then(|d| d.publish_date), cutoff);
    println!("period\tjudged\trelevant\tfraction\tfully_relevant\tfraction");
    for (label, s) in [("before", before), ("on_or_after", after)] {
        println!(
            "{label}\t{}\t{}\t{:.4}\t{}\t{:.4}",
            s.judged,
            s.relevant,
            s.relevant_fraction(),
            s.fully_relevant,
            s.fully_relevant_fraction()
        );
    }
    Ok(())
}
