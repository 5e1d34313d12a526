use crate::args::*;
use crate::summary::Summary;
use scenariofuzz::analysis::{self, AnalysisError, AnalyzeOptions};
use scenariofuzz::corpus::{build_corpus, CorpusParams, SeedCorpus};
use scenariofuzz::fixtures;
use scenariofuzz::fuzz::{run_campaign, Budget, CampaignReport, FuzzConfig, JournalLine, StateStore, REPORT_FILE};
use scenariofuzz::map::{build_topology, parse_opendrive, RoadNetwork};
use scenariofuzz::rng::derive_seed;
use scenariofuzz::sem::{scenario_to_graph, Sample, SemModel, TestRecord};
use scenariofuzz::sim::stdio::{serve, ProcessAgent};
use scenariofuzz::sim::{agent_by_name, Agent, MapContext, Perception, AGENT_NAMES};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

pub enum Failure {
    /// Bad invocation: exit 1.
    Usage(String),
    /// A module error: exit 3.
    Internal { module: &'static str, message: String },
}

impl Failure {
    pub fn internal(module: &'static str, e: impl Display) -> Failure {
        Failure::Internal {
            module,
            message: e.to_string(),
        }
    }
}

pub type Outcome = Result<i32, Failure>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERRORS_FOUND: i32 = 2;

const TAG_SEM_INIT: u64 = 4;
const TAG_SEM_TRAIN: u64 = 5;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::internal("io", format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(path, text).map_err(io(path))
}

fn state_dir(cli: &Cli) -> Result<PathBuf, Failure> {
    cli.state_dir
        .clone()
        .ok_or_else(|| Failure::Usage("--state-dir (or SCENARIOFUZZ_STATE) is required".into()))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// Parse an OpenDRIVE file, or a bundled map by name.
fn load_network(map: &str) -> Result<RoadNetwork, Failure> {
    let path = Path::new(map);
    let text = if path.is_file() {
        std::fs::read_to_string(path).map_err(io(path))?
    } else if let Some(text) = fixtures::xodr(map) {
        text.to_string()
    } else {
        return Err(Failure::Usage(format!(
            "`{map}` is neither a file nor a bundled map ({})",
            fixtures::MAP_NAMES.join(", ")
        )));
    };
    let mut net = parse_opendrive(&text).map_err(|e| Failure::internal("map", e))?;
    if net.name.is_empty() {
        net.name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(map).to_string();
    }
    Ok(net)
}

fn build(net: &RoadNetwork, params: &CorpusParams) -> Result<SeedCorpus, Failure> {
    let graph = build_topology(net, params.spacing).map_err(|e| Failure::internal("map", e))?;
    build_corpus(net, &graph, params).map_err(|e| Failure::internal("corpus", e))
}

pub fn corpus_build(cli: &Cli, a: &CorpusBuildArgs) -> Outcome {
    let out = match &a.out {
        Some(o) => o.clone(),
        None => state_dir(cli)?.join("corpus"),
    };
    let net = load_network(&a.map)?;
    let mut params = CorpusParams::default();
    if let Some(s) = a.spacing {
        params.spacing = s;
    }
    if let Some(h) = a.max_hops {
        params.max_hops = h;
    }
    let corpus = build(&net, &params)?;
    let path = corpus.save(&out, &net).map_err(|e| Failure::internal("corpus", e))?;
    println!("{}: {} seeds -> {}", corpus.map, corpus.seeds.len(), path.display());
    Ok(EXIT_OK)
}

/// `200` executions or a duration such as `90s`, `15m`, `2h`.
pub fn parse_budget(text: &str) -> Result<Budget, String> {
    let t = text.trim();
    if let Ok(n) = t.parse::<usize>() {
        return Ok(Budget {
            executions: Some(n),
            seconds: None,
        });
    }
    let split = t.find(|c: char| c.is_ascii_alphabetic()).ok_or_else(|| format!("bad budget `{text}`"))?;
    let (num, unit) = t.split_at(split);
    let value: f64 = num.trim().parse().map_err(|_| format!("bad budget `{text}`"))?;
    let scale = match unit {
        "s" | "sec" => 1.0,
        "m" | "min" => 60.0,
        "h" => 3600.0,
        _ => return Err(format!("bad budget unit `{unit}` (use s, m or h)")),
    };
    if !(value >= 0.0 && value.is_finite()) {
        return Err(format!("bad budget `{text}`"));
    }
    Ok(Budget {
        executions: None,
        seconds: Some(value * scale),
    })
}

fn corpus_maps(dir: &Path) -> Vec<String> {
    let mut maps: Vec<String> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok()?.file_name().into_string().ok())
                .filter(|n| !n.ends_with(".network.json"))
                .filter_map(|n| n.strip_suffix(".json").map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    maps.sort();
    maps
}

/// Corpus and context for a campaign: a prebuilt corpus, else a map built on the fly.
fn campaign_world(map: Option<&str>, corpus_dir: &Path) -> Result<(SeedCorpus, MapContext), Failure> {
    let available = corpus_maps(corpus_dir);
    let name = match map {
        Some(m) => m.to_string(),
        None => match available.as_slice() {
            [one] => one.clone(),
            [] => return Err(Failure::Usage(format!("no corpus in {}; pass --map", corpus_dir.display()))),
            many => return Err(Failure::Usage(format!("several corpora ({}); pass --map", many.join(", ")))),
        },
    };
    let (corpus, net) = if available.contains(&name) {
        SeedCorpus::load(corpus_dir, &name).map_err(|e| Failure::internal("corpus", e))?
    } else {
        let net = load_network(&name)?;
        let corpus = build(&net, &CorpusParams::default())?;
        (corpus, net)
    };
    let ctx = MapContext::new(net, corpus.params.spacing).map_err(|e| Failure::internal("map", e))?;
    Ok((corpus, ctx))
}

fn make_agent(a: &FuzzRunArgs) -> Result<Box<dyn Agent>, Failure> {
    match &a.agent_cmd {
        Some(cmd) => {
            let mut words = cmd.split_whitespace();
            let program = words.next().ok_or_else(|| Failure::Usage("empty --agent-cmd".into()))?;
            let mut command = Process::new(program);
            command.args(words);
            let agent = ProcessAgent::spawn(command, &a.agent, &a.agent_version, Perception::default())
                .map_err(|e| Failure::internal("sim", e.0))?;
            Ok(Box::new(agent))
        }
        None => builtin_agent(&a.agent),
    }
}

fn builtin_agent(name: &str) -> Result<Box<dyn Agent>, Failure> {
    agent_by_name(name).ok_or_else(|| Failure::Usage(format!("unknown agent `{name}` (built in: {})", AGENT_NAMES.join(", "))))
}

pub fn fuzz_run(cli: &Cli, a: &FuzzRunArgs) -> Outcome {
    let state = state_dir(cli)?;
    let mut cfg = match &a.config {
        Some(p) => FuzzConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => FuzzConfig::default(),
    };
    if let Some(seed) = cli.rng_seed {
        cfg.rng_seed = seed;
    }
    if let Some(b) = &a.budget {
        cfg.budget = parse_budget(b).map_err(Failure::Usage)?;
    }
    if cfg.budget.executions.is_none() && cfg.budget.seconds.is_none() {
        return Err(Failure::Usage("a campaign needs --budget or a [budget] table".into()));
    }
    let corpus_dir = a.corpus.clone().unwrap_or_else(|| state.join("corpus"));
    let map = a.map.as_deref().or(cfg.seed.map.as_deref());
    let (corpus, ctx) = campaign_world(map, &corpus_dir)?;
    let mut agent = make_agent(a)?;
    let report = run_campaign(&cfg, &corpus, &ctx, agent.as_mut(), Some(&state)).map_err(|e| Failure::internal("fuzz", e))?;
    println!(
        "{} {} on {}: {} executions, {} error scenarios",
        report.mode.name(),
        report.agent,
        report.map,
        report.executions,
        report.error_scenarios
    );
    for e in report.errors_by_kind.iter().filter(|e| e.count > 0) {
        println!("  {:?}: {}", e.kind, e.count);
    }
    Ok(if report.error_scenarios > 0 { EXIT_ERRORS_FOUND } else { EXIT_OK })
}

/// Test records from a campaign journal or from plain record lines.
fn read_records(path: &Path) -> Result<Vec<TestRecord>, Failure> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        if let Ok(j) = serde_json::from_str::<JournalLine>(line) {
            if let JournalLine::Exec(e) = j {
                records.push(e.record);
            }
            continue;
        }
        let r: TestRecord = serde_json::from_str(line)
            .map_err(|e| Failure::internal("sem", format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(r);
    }
    Ok(records)
}

fn samples(input: &RecordsArgs) -> Result<Vec<Sample>, Failure> {
    let records = read_records(&input.records)?;
    let dir = match &input.corpus {
        Some(d) => d.clone(),
        None => input.records.parent().unwrap_or(Path::new(".")).join("corpus"),
    };
    let mut corpora: BTreeMap<String, SeedCorpus> = BTreeMap::new();
    let mut out = Vec::with_capacity(records.len());
    for r in &records {
        let map = &r.scenario.map;
        if !corpora.contains_key(map) {
            let (c, _) = SeedCorpus::load(&dir, map).map_err(|e| Failure::internal("corpus", e))?;
            corpora.insert(map.clone(), c);
        }
        let seed = corpora[map]
            .seed(r.scenario.seed_id)
            .ok_or_else(|| Failure::internal("sem", format!("seed {} not in the {map} corpus", r.scenario.seed_id)))?;
        out.push(Sample {
            graph: scenario_to_graph(&r.scenario, seed).map_err(|e| Failure::internal("sem", e))?,
            label: r.label,
            key: r.key(),
        });
    }
    Ok(out)
}

pub fn sem_train(cli: &Cli, a: &SemTrainArgs) -> Outcome {
    let mut settings = match &a.config {
        Some(p) => FuzzConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?.sem,
        None => FuzzConfig::default().sem,
    };
    if let Some(e) = a.epochs {
        settings.epochs = e;
    }
    let out = match &a.out {
        Some(o) => o.clone(),
        None => state_dir(cli)?.join("sem").join("trained.ckpt"),
    };
    let data = samples(&a.input)?;
    let seed = cli.rng_seed.unwrap_or(0);
    let mut model = SemModel::new(settings.model_config(), derive_seed(seed, &[TAG_SEM_INIT]));
    let report = model
        .train(&data, &settings.train_config(derive_seed(seed, &[TAG_SEM_TRAIN, 1])))
        .map_err(|e| Failure::internal("sem", e))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    model.save(&out).map_err(|e| Failure::internal("sem", e))?;
    if let Some(m) = &a.metrics {
        write_file(m, &json(&report))?;
    }
    println!("{}", json(&report.validation));
    log::info!("checkpoint written to {}", out.display());
    Ok(EXIT_OK)
}

pub fn sem_eval(_cli: &Cli, a: &SemEvalArgs) -> Outcome {
    let model = SemModel::load(&a.model).map_err(|e| Failure::internal("sem", e))?;
    let data = samples(&a.input)?;
    let graphs: Vec<_> = data.iter().map(|s| s.graph.clone()).collect();
    let labels: Vec<bool> = data.iter().map(|s| s.label).collect();
    let metrics = model.evaluate(&graphs, &labels).map_err(|e| Failure::internal("sem", e))?;
    if let Some(m) = &a.metrics {
        write_file(m, &json(&metrics))?;
    }
    println!("{}", json(&metrics));
    Ok(EXIT_OK)
}

fn analysis_failure(e: AnalysisError) -> Failure {
    match e {
        AnalysisError::MissingArtifacts(_) | AnalysisError::UnknownAgent(_) => Failure::Usage(e.to_string()),
        e => Failure::internal("analysis", e),
    }
}

pub fn replay(cli: &Cli, a: &ReplayArgs) -> Outcome {
    let store = StateStore { root: state_dir(cli)? };
    let report = match &a.agent {
        Some(name) => {
            let mut agent = builtin_agent(name)?;
            analysis::replay(&store, &a.id, Some(agent.as_mut()))
        }
        None => analysis::replay(&store, &a.id, None),
    }
    .map_err(analysis_failure)?;
    println!("{}", json(&report));
    if report.agent_version_mismatch() {
        eprintln!(
            "warning: recorded with agent version {}, replayed with {}",
            report.stored_agent_version, report.agent_version
        );
    }
    if report.pass {
        println!("PASS {}", report.id);
        Ok(EXIT_OK)
    } else {
        Err(Failure::internal(
            "replay",
            format!("{} diverged at tick {}", report.id, report.first_divergence.unwrap_or(0)),
        ))
    }
}

pub fn analyze_cluster(cli: &Cli, a: &ClusterArgs) -> Outcome {
    let root = match &a.state {
        Some(s) => s.clone(),
        None => state_dir(cli)?,
    };
    let store = StateStore { root };
    let mut opts = AnalyzeOptions {
        k: a.k,
        system: a.system.clone(),
        seed: cli.rng_seed.unwrap_or(0),
        ..AnalyzeOptions::default()
    };
    if let Some(e) = a.epochs {
        opts.encoder.epochs = e;
    }
    let report = analysis::analyze_state(&store, &opts).map_err(|e| match e {
        AnalysisError::InsufficientData { .. } => Failure::Usage(e.to_string()),
        e => analysis_failure(e),
    })?;
    let out = a.out.clone().unwrap_or_else(|| store.root.join("clusters.json"));
    write_file(&out, &json(&report))?;
    println!("{} crash scenarios in {} clusters (silhouette {:.3})", report.pairs, report.k, report.silhouette);
    for c in &report.clusters {
        println!("  cluster {}: {} members, medoid {}", c.index, c.size, c.medoid);
    }
    Ok(EXIT_OK)
}

pub fn report(cli: &Cli, a: &ReportArgs) -> Outcome {
    let states = if a.states.is_empty() { vec![state_dir(cli)?] } else { a.states.clone() };
    let mut reports = Vec::new();
    for s in &states {
        let path = s.join(REPORT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let r: CampaignReport = serde_json::from_str(&text).map_err(|e| Failure::internal("fuzz", format!("{}: {e}", path.display())))?;
        reports.push(r);
    }
    let summary = Summary::from_reports(&reports);
    if let Some(dir) = &a.out {
        write_file(&dir.join("summary.md"), &summary.markdown())?;
        write_file(&dir.join("summary.json"), &json(&summary))?;
    }
    match a.format {
        ReportFormat::Markdown => print!("{}", summary.markdown()),
        ReportFormat::Json => println!("{}", json(&summary)),
    }
    Ok(EXIT_OK)
}

pub fn serve_agent(name: &str) -> Outcome {
    let mut agent = builtin_agent(name)?;
    let stdin = std::io::stdin();
    serve(agent.as_mut(), stdin.lock(), std::io::stdout().lock()).map_err(|e| Failure::internal("sim", e))?;
    Ok(EXIT_OK)
}
