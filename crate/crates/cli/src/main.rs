//! Pipeline orchestrator: flatten → graph → ccl → prompt → audit → eval
//! → stats (+ annotate-summarize), each stage reading the previous
//! stage's on-disk artifact.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use coaudit_core::audit::{
    analyze_response, assemble_csv, assemble_markdown, parse_csv, AuditFinding, PromptContext,
    Taxonomy,
};
use coaudit_core::callgraph::build_fcg;
use coaudit_core::ccl::{batch_text, generate_all_ccls, parse_batch_text};
use coaudit_core::evalstats::{
    match_findings, parse_annotations, parse_ground_truth, stats_report_markdown,
    stats_report_text, summarize_annotations,
};
use coaudit_core::gateway::{
    exchanges_text, parse_exchanges_text, run_plan, Backend, Cassette, HttpTransport, Transport,
};
use coaudit_core::ingest::{flatten, load_project, parse_remappings};
use coaudit_core::parser::{parse, FunctionId, ParsedUnit};
use coaudit_core::prompts::{
    default_catalog, parse_catalog, parse_plan_text, plan_audit, plan_text, PromptMode,
};

const STAGES: &[&str] = &[
    "flatten",
    "graph",
    "ccl",
    "prompt",
    "audit",
    "eval",
    "stats",
    "annotate-summarize",
    "all",
];

#[derive(Parser, Debug)]
#[command(name = "coaudit", about = "LLM-assisted Solidity co-auditing pipeline", version)]
struct Cli {
    /// Pipeline stage: flatten, graph, ccl, prompt, audit, eval, stats,
    /// annotate-summarize, or all.
    stage: String,

    /// Key=value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Project root directory.
    #[arg(long)]
    project: Option<PathBuf>,
    /// Entry .sol file, relative to the project root.
    #[arg(long)]
    entry: Option<String>,
    /// Remappings file (`prefix=dir` lines), relative to the project root.
    #[arg(long)]
    remappings: Option<String>,
    /// Main contract to audit; defaults to the entry file stem.
    #[arg(long)]
    contract: Option<String>,
    /// Output directory for stage artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CCL token budget.
    #[arg(long)]
    budget: Option<usize>,
    /// Prompt mode: caq or cwe.
    #[arg(long)]
    mode: Option<String>,
    /// Vulnerability-type catalog file (id|name|description lines).
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Synonym table file (keyword|category lines).
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Ground-truth file (contract,path,function-or-linerange,category).
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Annotation file (cclId,annotator,correctness,relevance).
    #[arg(long)]
    annotations: Option<PathBuf>,

    /// Backend: live, replay, or record.
    #[arg(long)]
    backend: Option<String>,
    /// Cassette path for replay/record backends.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Maximum concurrent in-flight requests.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Decoding temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Response token limit.
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Model tag sent to the backend.
    #[arg(long)]
    model: Option<String>,
    /// Chat-completion endpoint URL (live/record backends).
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Debug, Clone)]
struct RunConfig {
    project: PathBuf,
    entry: String,
    remappings: Option<String>,
    contract: Option<String>,
    out: PathBuf,
    budget: usize,
    mode: PromptMode,
    catalog: Option<PathBuf>,
    taxonomy: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
    annotations: Option<PathBuf>,
    backend: String,
    cassette: Option<PathBuf>,
    parallelism: usize,
    temperature: f64,
    max_tokens: usize,
    model: String,
    endpoint: String,
}

fn fail(stage: &str, msg: &str) -> String {
    format!("coaudit {stage}: {msg}")
}

/// Precedence: flags > config file > COAUDIT_* environment > defaults.
fn resolve_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut file_values = std::collections::BTreeMap::new();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| fail("config", &format!("cannot read {}: {e}", path.display())))?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                file_values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
    }
    let lookup = |key: &str| -> Option<String> {
        file_values
            .get(key)
            .cloned()
            .or_else(|| std::env::var(format!("COAUDIT_{}", key.to_uppercase())).ok())
    };
    let pick_path = |flag: &Option<PathBuf>, key: &str| -> Option<PathBuf> {
        flag.clone().or_else(|| lookup(key).map(PathBuf::from))
    };
    let pick_str = |flag: &Option<String>, key: &str| -> Option<String> {
        flag.clone().or_else(|| lookup(key))
    };

    let project = pick_path(&cli.project, "project").unwrap_or_else(|| PathBuf::from("."));
    let entry = pick_str(&cli.entry, "entry").unwrap_or_default();
    let out = pick_path(&cli.out, "out").unwrap_or_else(|| PathBuf::from("coaudit-out"));
    let budget = match &cli.budget {
        Some(b) => *b,
        None => lookup("budget").map(|v| v.parse()).transpose().map_err(|_| {
            fail("config", "budget must be an integer")
        })?.unwrap_or(7000),
    };
    if budget == 0 {
        return Err(fail("config", "budget must be positive"));
    }
    let mode_str = pick_str(&cli.mode, "mode").unwrap_or_else(|| "caq".into());
    let mode = PromptMode::parse(&mode_str)
        .ok_or_else(|| fail("config", &format!("unknown mode {mode_str} (expected caq or cwe)")))?;
    let backend = pick_str(&cli.backend, "backend").unwrap_or_else(|| "replay".into());
    if !matches!(backend.as_str(), "live" | "replay" | "record") {
        return Err(fail("config", &format!("unknown backend {backend}")));
    }
    let parallelism = match &cli.parallelism {
        Some(p) => *p,
        None => lookup("parallelism")
            .map(|v| v.parse())
            .transpose()
            .map_err(|_| fail("config", "parallelism must be an integer"))?
            .unwrap_or(4),
    };
    if parallelism == 0 {
        return Err(fail("config", "parallelism must be at least 1"));
    }
    let temperature = match &cli.temperature {
        Some(t) => *t,
        None => lookup("temperature")
            .map(|v| v.parse())
            .transpose()
            .map_err(|_| fail("config", "temperature must be a number"))?
            .unwrap_or(0.0),
    };
    let max_tokens = match &cli.max_tokens {
        Some(m) => *m,
        None => lookup("max_tokens")
            .map(|v| v.parse())
            .transpose()
            .map_err(|_| fail("config", "max_tokens must be an integer"))?
            .unwrap_or(8000),
    };

    Ok(RunConfig {
        project,
        entry,
        remappings: pick_str(&cli.remappings, "remappings"),
        contract: pick_str(&cli.contract, "contract"),
        out,
        budget,
        mode,
        catalog: pick_path(&cli.catalog, "catalog"),
        taxonomy: pick_path(&cli.taxonomy, "taxonomy"),
        ground_truth: pick_path(&cli.ground_truth, "ground_truth"),
        annotations: pick_path(&cli.annotations, "annotations"),
        backend,
        cassette: pick_path(&cli.cassette, "cassette"),
        parallelism,
        temperature,
        max_tokens,
        model: pick_str(&cli.model, "model").unwrap_or_else(|| "gpt-4".into()),
        endpoint: pick_str(&cli.endpoint, "endpoint")
            .unwrap_or_else(|| "https://api.openai.com/v1/chat/completions".into()),
    })
}

fn read_artifact(config: &RunConfig, stage: &str, name: &str) -> Result<String, String> {
    let path = config.out.join(name);
    std::fs::read_to_string(&path).map_err(|_| {
        fail(
            stage,
            &format!(
                "missing stage input {} — run the producing stage first",
                path.display()
            ),
        )
    })
}

fn write_artifact(config: &RunConfig, stage: &str, name: &str, text: &str) -> Result<(), String> {
    std::fs::create_dir_all(&config.out)
        .map_err(|e| fail(stage, &format!("cannot create {}: {e}", config.out.display())))?;
    let path = config.out.join(name);
    std::fs::write(&path, text)
        .map_err(|e| fail(stage, &format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn main_contract(config: &RunConfig) -> String {
    config.contract.clone().unwrap_or_else(|| {
        Path::new(&config.entry)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    })
}

fn parse_flattened(config: &RunConfig, stage: &str) -> Result<ParsedUnit, String> {
    let text = read_artifact(config, stage, "flattened.sol")?;
    parse(&text).map_err(|e| fail(stage, &format!("cannot parse flattened source: {e}")))
}

fn stage_flatten(config: &RunConfig) -> Result<(), String> {
    if config.entry.is_empty() {
        return Err(fail("flatten", "no entry file configured (--entry)"));
    }
    let remappings = match &config.remappings {
        Some(rel) => {
            let path = config.project.join(rel);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| fail("flatten", &format!("cannot read {}: {e}", path.display())))?;
            parse_remappings(&text)
        }
        None => Vec::new(),
    };
    let project = load_project(&config.project, &config.entry, &remappings)
        .map_err(|e| fail("flatten", &e.to_string()))?;
    let flat = flatten(&project).map_err(|e| fail("flatten", &e.to_string()))?;
    write_artifact(config, "flatten", "flattened.sol", &flat.text)?;
    write_artifact(config, "flatten", "flattened.origin", &flat.origin_map_text())?;
    eprintln!("flatten: {} files -> flattened.sol", flat.included_files.len());
    Ok(())
}

fn stage_graph(config: &RunConfig) -> Result<(), String> {
    let unit = parse_flattened(config, "graph")?;
    let graph = build_fcg(&unit);
    write_artifact(config, "graph", "callgraph.txt", &graph.adjacency_text())?;
    write_artifact(config, "graph", "callgraph.dot", &graph.dot())?;
    eprintln!("graph: {} nodes -> callgraph.txt", graph.nodes.len());
    Ok(())
}

fn stage_ccl(config: &RunConfig) -> Result<(), String> {
    let unit = parse_flattened(config, "ccl")?;
    let graph = build_fcg(&unit);
    let contract = main_contract(config);
    if unit.contract(&contract).is_none() {
        return Err(fail("ccl", &format!("contract {contract} not found in flattened source")));
    }
    let (ccls, diagnostics) = generate_all_ccls(&graph, &unit, &contract, config.budget);
    for (id, err) in &diagnostics {
        eprintln!("ccl: warning: {id}: {err}");
    }
    write_artifact(config, "ccl", "ccls.txt", &batch_text(&ccls))?;
    eprintln!("ccl: {} records -> ccls.txt", ccls.len());
    Ok(())
}

fn load_catalog(config: &RunConfig, stage: &str) -> Result<Vec<coaudit_core::prompts::CweEntry>, String> {
    match &config.catalog {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| fail(stage, &format!("cannot read {}: {e}", path.display())))?;
            Ok(parse_catalog(&text))
        }
        None => Ok(default_catalog()),
    }
}

fn stage_prompt(config: &RunConfig) -> Result<(), String> {
    let ccls = parse_batch_text(&read_artifact(config, "prompt", "ccls.txt")?)
        .map_err(|e| fail("prompt", &e))?;
    let catalog = load_catalog(config, "prompt")?;
    let plan =
        plan_audit(&ccls, config.mode, &catalog).map_err(|e| fail("prompt", &e.to_string()))?;
    write_artifact(config, "prompt", "plan.txt", &plan_text(&plan))?;
    eprintln!("prompt: {} instances -> plan.txt", plan.len());
    Ok(())
}

fn stage_audit(config: &RunConfig) -> Result<(), String> {
    let plan = parse_plan_text(&read_artifact(config, "audit", "plan.txt")?)
        .map_err(|e| fail("audit", &e))?;

    let cassette = match &config.cassette {
        Some(path) if path.exists() => {
            Cassette::load(path).map_err(|e| fail("audit", &e.to_string()))?
        }
        _ => Cassette::default(),
    };
    if config.backend == "replay" && config.cassette.is_none() {
        return Err(fail("audit", "replay backend needs --cassette"));
    }

    let transport: Option<HttpTransport> = if config.backend == "replay" {
        None
    } else {
        Some(
            HttpTransport::from_env(&config.endpoint, "COAUDIT_API_KEY")
                .map_err(|e| fail("audit", &e.to_string()))?,
        )
    };
    let backend = match (config.backend.as_str(), &transport) {
        ("replay", _) => Backend::replay(cassette),
        ("record", Some(t)) => Backend::record(cassette, t as &dyn Transport),
        ("live", Some(t)) => Backend::live(t as &dyn Transport),
        _ => unreachable!("backend validated at config time"),
    };

    let results = run_plan(
        &plan,
        &backend,
        config.parallelism,
        config.temperature,
        config.max_tokens,
        &config.model,
    );
    let failures = results.iter().filter(|r| r.is_err()).count();
    write_artifact(config, "audit", "exchanges.txt", &exchanges_text(&results))?;

    if config.backend == "record" {
        if let Some(path) = &config.cassette {
            backend
                .cassette
                .lock()
                .unwrap()
                .save(path)
                .map_err(|e| fail("audit", &e.to_string()))?;
        }
    }
    eprintln!(
        "audit: {} exchanges ({failures} failed) -> exchanges.txt",
        results.len()
    );
    Ok(())
}

fn load_taxonomy(config: &RunConfig, stage: &str) -> Result<Taxonomy, String> {
    match &config.taxonomy {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| fail(stage, &format!("cannot read {}: {e}", path.display())))?;
            Ok(Taxonomy::parse(&text))
        }
        None => Ok(Taxonomy::default()),
    }
}

fn stage_eval(config: &RunConfig) -> Result<(), String> {
    let plan = parse_plan_text(&read_artifact(config, "eval", "plan.txt")?)
        .map_err(|e| fail("eval", &e))?;
    let exchanges = parse_exchanges_text(&read_artifact(config, "eval", "exchanges.txt")?)
        .map_err(|e| fail("eval", &e))?;
    if plan.len() != exchanges.len() {
        return Err(fail(
            "eval",
            &format!("plan has {} entries but exchanges has {}", plan.len(), exchanges.len()),
        ));
    }
    let taxonomy = load_taxonomy(config, "eval")?;
    let mut findings: Vec<AuditFinding> = Vec::new();
    for (instance, exchange) in plan.iter().zip(&exchanges) {
        let context = PromptContext {
            target: instance.target.clone(),
            mode: instance.mode,
            cwe: instance.cwe.clone(),
        };
        match exchange {
            Ok(response) => findings.push(analyze_response(response, &context, &taxonomy)),
            Err(err) => eprintln!("eval: warning: {}: {err}", instance.target),
        }
    }
    write_artifact(
        config,
        "eval",
        "findings.csv",
        &assemble_csv(&findings).map_err(|e| fail("eval", &e.to_string()))?,
    )?;
    write_artifact(
        config,
        "eval",
        "report.md",
        &assemble_markdown(&findings).map_err(|e| fail("eval", &e.to_string()))?,
    )?;
    eprintln!("eval: {} findings -> findings.csv", findings.len());
    Ok(())
}

fn stage_stats(config: &RunConfig) -> Result<(), String> {
    let findings = parse_csv(&read_artifact(config, "stats", "findings.csv")?)
        .map_err(|e| fail("stats", &e.to_string()))?;
    let gt_path = config
        .ground_truth
        .as_ref()
        .ok_or_else(|| fail("stats", "no ground-truth file configured (--ground-truth)"))?;
    let gt_text = std::fs::read_to_string(gt_path)
        .map_err(|e| fail("stats", &format!("cannot read {}: {e}", gt_path.display())))?;

    // Line-range locators resolve against the flattened source when present.
    let unit = parse_flattened(config, "stats").ok();
    let resolve = |contract: &str, start: usize, end: usize| -> Option<FunctionId> {
        let unit = unit.as_ref()?;
        unit.functions_of(contract).into_iter().find_map(|f| {
            let f_start = f.span.line as usize;
            let f_end = f_start + unit.span_text(&f.id).map(|t| t.lines().count()).unwrap_or(1);
            (f_start <= end && start <= f_end).then(|| f.id.clone())
        })
    };
    let ground_truth =
        parse_ground_truth(&gt_text, &resolve).map_err(|e| fail("stats", &e.to_string()))?;

    let label = config.mode.as_str();
    let summary = match_findings(&findings, &ground_truth);
    write_artifact(
        config,
        "stats",
        "stats.md",
        &stats_report_markdown(label, &summary, None).map_err(|e| fail("stats", &e.to_string()))?,
    )?;
    write_artifact(
        config,
        "stats",
        "stats.txt",
        &stats_report_text(label, &summary, None).map_err(|e| fail("stats", &e.to_string()))?,
    )?;
    eprintln!("stats: {}/{} detected -> stats.md", summary.correct, summary.total);
    Ok(())
}

fn stage_annotate_summarize(config: &RunConfig) -> Result<(), String> {
    let path = config
        .annotations
        .as_ref()
        .ok_or_else(|| fail("annotate-summarize", "no annotation file configured (--annotations)"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail("annotate-summarize", &format!("cannot read {}: {e}", path.display())))?;
    let records = parse_annotations(&text).map_err(|e| fail("annotate-summarize", &e.to_string()))?;
    if records.is_empty() {
        return Err(fail("annotate-summarize", "annotation file has no records"));
    }
    let summary = summarize_annotations(&records);
    let mut out = String::new();
    for (annotator, (c3, c2, r3, r2)) in &summary.per_annotator {
        out.push_str(&format!(
            "annotator.{annotator}.correctness_perfect={c3:.2}\n\
             annotator.{annotator}.correctness_at_least_partial={c2:.2}\n\
             annotator.{annotator}.relevance_total={r3:.2}\n\
             annotator.{annotator}.relevance_at_least_partial={r2:.2}\n"
        ));
    }
    let (c3, c2, r3, r2) = summary.averaged;
    out.push_str(&format!(
        "average.correctness_perfect={c3:.2}\n\
         average.correctness_at_least_partial={c2:.2}\n\
         average.relevance_total={r3:.2}\n\
         average.relevance_at_least_partial={r2:.2}\n"
    ));
    write_artifact(config, "annotate-summarize", "annotations_summary.txt", &out)?;
    eprintln!("annotate-summarize: {} records -> annotations_summary.txt", records.len());
    Ok(())
}

fn run_stage(config: &RunConfig, stage: &str) -> Result<(), String> {
    match stage {
        "flatten" => stage_flatten(config),
        "graph" => stage_graph(config),
        "ccl" => stage_ccl(config),
        "prompt" => stage_prompt(config),
        "audit" => stage_audit(config),
        "eval" => stage_eval(config),
        "stats" => stage_stats(config),
        "annotate-summarize" => stage_annotate_summarize(config),
        "all" => {
            for s in ["flatten", "graph", "ccl", "prompt", "audit", "eval", "stats"] {
                run_stage(config, s)?;
            }
            if config.annotations.is_some() {
                run_stage(config, "annotate-summarize")?;
            }
            Ok(())
        }
        other => Err(fail(
            "config",
            &format!("unknown stage {other}; expected one of {}", STAGES.join(", ")),
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    match run_stage(&config, &cli.stage) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
