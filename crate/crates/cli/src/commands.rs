//! Subcommand implementations.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use tpet_core::baselines::{FixedTimeController, MaxPressureController, RandomController};
use tpet_core::caf::{analyze as analyze_log, render_critique, DecisionRecord, DefectCounts};
use tpet_core::dsl::{parse_text, PolicyProgram, GRAMMAR};
use tpet_core::episode::{run_episode, signature_for, Controller, EpisodeResult, PolicyController};
use tpet_core::events::read_jsonl;
use tpet_core::evolution::{
    evolve as evolve_run, summarize, Environment, HistoryRecord, MutationEngine, RunOutcome, RunStatus, RunSummary,
};
use tpet_core::metrics::MetricsReport;
use tpet_core::network::{load_flows, load_network};
use tpet_core::scenario::{generate_with, DemandKind, ScenarioParams};
use tpet_core::ssa::{vocabulary_description, SsaConfig};
use tpet_llm::{EngineKind, MockEngine, RemoteEngine};

use crate::config::RunConfig;
use crate::output::{metrics_table, write_atomic, write_json, write_jsonl, MetricsRow};
use crate::{AnalyzeArgs, CliError, CompareArgs, ConfigArgs, EngineChoice, EvolveArgs, GenScenarioArgs, SimulateArgs, VocabArgs};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControllerSpec {
    Random,
    FixedTime,
    MaxPressure,
    Policy(PathBuf),
}

impl FromStr for ControllerSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "fixedtime" => Ok(Self::FixedTime),
            "maxpressure" => Ok(Self::MaxPressure),
            _ => match s.strip_prefix("policy:") {
                Some(p) if !p.is_empty() => Ok(Self::Policy(PathBuf::from(p))),
                _ => Err(CliError::Validation(format!(
                    "unknown controller `{s}` (expected random, fixedtime, maxpressure or policy:<file>)"
                ))),
            },
        }
    }
}

impl ControllerSpec {
    /// Directory-safe name used for output paths.
    pub fn slug(&self) -> String {
        match self {
            Self::Random => "random".into(),
            Self::FixedTime => "fixedtime".into(),
            Self::MaxPressure => "maxpressure".into(),
            Self::Policy(p) => format!("policy-{}", file_stem(p)),
        }
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "policy".into())
}

/// Parses a policy file against the scenario's signature.
pub fn load_policy(path: &Path, cfg: &RunConfig) -> Result<PolicyProgram, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let sig = signature_for(&cfg.network, &cfg.episode.ssa, &cfg.evolution.limits).map_err(CliError::Validation)?;
    parse_text(&text, &sig).map_err(|d| CliError::Validation(format!("{}:{d}", path.display())))
}

/// Builds controllers for one spec; policies are parsed once.
struct ControllerFactory<'a> {
    spec: ControllerSpec,
    cfg: &'a RunConfig,
    program: Option<PolicyProgram>,
}

impl<'a> ControllerFactory<'a> {
    fn new(spec: ControllerSpec, cfg: &'a RunConfig) -> Result<Self, CliError> {
        let program = match &spec {
            ControllerSpec::Policy(p) => Some(load_policy(p, cfg)?),
            _ => None,
        };
        Ok(Self { spec, cfg, program })
    }

    fn label(&self) -> String {
        match &self.spec {
            ControllerSpec::Random => "Random".into(),
            ControllerSpec::FixedTime => "FixedTime".into(),
            ControllerSpec::MaxPressure => "MaxPressure".into(),
            ControllerSpec::Policy(p) => format!("policy:{}", file_stem(p)),
        }
    }

    fn build(&self, seed: u64) -> Result<Box<dyn Controller>, CliError> {
        Ok(match &self.spec {
            ControllerSpec::Random => Box::new(RandomController::new(seed)),
            ControllerSpec::FixedTime => match &self.cfg.fixed_time_plan {
                Some(plan) => {
                    let inter = &self.cfg.network.intersections[0];
                    let min_green = self.cfg.episode.sim.min_green.unwrap_or(inter.min_green);
                    Box::new(
                        FixedTimeController::with_plan(plan.clone(), inter.phase_count(), min_green)
                            .map_err(|e| CliError::Validation(e.to_string()))?,
                    )
                }
                None => Box::new(FixedTimeController::round_robin()),
            },
            ControllerSpec::MaxPressure => Box::new(MaxPressureController),
            ControllerSpec::Policy(_) => Box::new(PolicyController::new(
                self.program.clone().unwrap_or_else(PolicyProgram::max_pressure),
                self.label(),
            )),
        })
    }

    fn run(&self, seed: u64) -> Result<EpisodeResult, CliError> {
        let mut controller = self.build(seed)?;
        let sim_seed = self.cfg.episode_seed(seed);
        run_episode(&self.cfg.network, &self.cfg.flows, controller.as_mut(), &self.cfg.episode, sim_seed)
            .map_err(|e| CliError::Runtime(format!("{} seed {seed}: {e}", self.label())))
    }
}

fn load_config(args: &ConfigArgs) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.override_seeds(&args.seeds);
    if args.traffic_seed.is_some() {
        cfg.traffic_seed = args.traffic_seed;
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (cfg, out) = load_config(&args.common)?;
    let spec: ControllerSpec = args.controller.parse()?;
    let factory = ControllerFactory::new(spec.clone(), &cfg)?;
    let dir = out.join("simulate").join(spec.slug());
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        let result = factory.run(seed)?;
        let seed_dir = dir.join(format!("seed-{seed}"));
        write_jsonl(&seed_dir.join("events.jsonl"), &result.events)?;
        write_jsonl(&seed_dir.join("decisions.jsonl"), &result.decisions)?;
        write_json(&seed_dir.join("metrics.json"), &result.metrics)?;
        rows.push(MetricsRow::new(format!("seed {seed}"), vec![result.metrics]));
        all.push(result.metrics);
    }
    let summary = MetricsRow::new(factory.label(), all);
    write_json(&dir.join("metrics.json"), &summary)?;
    rows.push(summary);
    print!("{}", metrics_table(&rows, &cfg.seeds));
    println!("wrote {}", dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct CompareReport {
    seeds: Vec<u64>,
    rows: Vec<MetricsRow>,
    defects: Vec<(String, Vec<DefectCounts>)>,
}

/// Runs every controller on every seed; rows keep the given order.
pub fn compare_rows(cfg: &RunConfig, specs: &[ControllerSpec]) -> Result<(Vec<MetricsRow>, Vec<(String, Vec<DefectCounts>)>), CliError> {
    let mut rows = Vec::new();
    let mut defects = Vec::new();
    for spec in specs {
        let factory = ControllerFactory::new(spec.clone(), cfg)?;
        let mut metrics = Vec::new();
        let mut counts = Vec::new();
        for &seed in &cfg.seeds {
            let r = factory.run(seed)?;
            metrics.push(r.metrics);
            counts.push(analyze_log(&r.decisions, &cfg.caf).counts);
        }
        rows.push(MetricsRow::new(factory.label(), metrics));
        defects.push((factory.label(), counts));
    }
    Ok((rows, defects))
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let (cfg, out) = load_config(&args.common)?;
    let mut specs = vec![ControllerSpec::Random, ControllerSpec::FixedTime, ControllerSpec::MaxPressure];
    specs.extend(cfg.policies.iter().chain(&args.policies).cloned().map(ControllerSpec::Policy));
    let (rows, defects) = compare_rows(&cfg, &specs)?;
    let table = metrics_table(&rows, &cfg.seeds);
    let dir = out.join("compare");
    write_atomic(&dir.join("table.txt"), table.as_bytes())?;
    write_json(
        &dir.join("compare.json"),
        &CompareReport {
            seeds: cfg.seeds.clone(),
            rows,
            defects,
        },
    )?;
    print!("{table}");
    println!("wrote {}", dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunReport {
    run: usize,
    status: RunStatus,
    best_id: String,
    best_fitness: f64,
    best_source: String,
    best_metrics: MetricsReport,
    best_defects: DefectCounts,
    best_per_generation: Vec<f64>,
    evaluated_per_generation: Vec<usize>,
    task: String,
}

#[derive(Debug, Serialize)]
struct EvolveReport {
    eval_seeds: Vec<u64>,
    summary: RunSummary,
    runs: Vec<RunReport>,
}

fn summary_table(outcomes: &[RunOutcome], summary: &RunSummary) -> String {
    let mut s = String::from("run  status                   best fitness  best id\n");
    for o in outcomes {
        let status = match &o.status {
            RunStatus::Completed => "completed",
            RunStatus::EngineExhausted { .. } => "engine exhausted",
            RunStatus::RetryBudgetExhausted => "retry budget exhausted",
        };
        s.push_str(&format!("{:<3}  {:<23}  {:>12.2}  {}\n", o.run, status, o.best.fitness, o.best.id));
    }
    s.push_str(&format!(
        "best fitness over {} runs: {:.2} ± {:.2} (mean ± population std)\n",
        outcomes.len(),
        summary.mean,
        summary.std
    ));
    s
}

/// Appends each generation to the history file and flushes it, so an
/// interrupted run leaves whole lines only.
struct HistoryWriter {
    file: File,
    path: PathBuf,
    error: Option<CliError>,
}

impl HistoryWriter {
    fn create(path: PathBuf) -> Result<Self, CliError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        }
        let file = File::create(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(Self { file, path, error: None })
    }

    fn append(&mut self, records: &[HistoryRecord]) {
        if self.error.is_some() {
            return;
        }
        let mut buf = Vec::new();
        let res = tpet_core::events::write_jsonl(&mut buf, records)
            .and_then(|_| self.file.write_all(&buf))
            .and_then(|_| self.file.flush());
        if let Err(e) = res {
            self.error = Some(CliError::Runtime(format!("{}: {e}", self.path.display())));
        }
    }
}

pub fn evolve(args: &EvolveArgs) -> Result<(), CliError> {
    let (mut cfg, out) = load_config(&args.common)?;
    if let Some(runs) = args.runs {
        cfg.evolution.runs = runs;
        cfg.evolution.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    }
    match args.engine {
        Some(EngineChoice::Mock) => cfg.engine.kind = EngineKind::Mock,
        Some(EngineChoice::Remote) => cfg.engine.kind = EngineKind::Remote,
        None => {}
    }
    let env = Environment::new(
        cfg.network.clone(),
        cfg.flows.clone(),
        cfg.episode.clone(),
        cfg.caf.clone(),
        &cfg.evolution.limits,
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;
    // Built before any run so a missing token fails fast.
    let mut remote = match cfg.engine.kind {
        EngineKind::Remote => Some(RemoteEngine::new(cfg.engine.clone()).map_err(|e| CliError::Validation(e.to_string()))?),
        EngineKind::Mock => None,
    };

    let dir = out.join("evolve");
    let mut history = HistoryWriter::create(dir.join("history.jsonl"))?;
    let mut outcomes = Vec::new();
    for run in 0..cfg.evolution.runs {
        let mut mock;
        let engine: &mut dyn MutationEngine = match remote.as_mut() {
            Some(r) => r,
            None => {
                mock = MockEngine::with_params(
                    cfg.evolution.engine_seed.wrapping_add(run as u64),
                    env.signature.clone(),
                    cfg.engine.mock.clone(),
                );
                &mut mock
            }
        };
        let outcome = evolve_run(&env, engine, &cfg.evolution, run, &mut |records| history.append(records))
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if let Some(e) = history.error.take() {
            return Err(e);
        }
        write_atomic(&dir.join(format!("best_run{run}.tpet")), policy_file(&outcome.best.source.text).as_bytes())?;
        outcomes.push(outcome);
    }
    if let Some(r) = &remote {
        for line in r.diagnostics() {
            eprintln!("engine: {line}");
        }
    }

    let summary = summarize(&outcomes);
    let best = outcomes
        .iter()
        .min_by(|a, b| a.best.fitness.total_cmp(&b.best.fitness))
        .ok_or_else(|| CliError::Runtime("no runs".into()))?;
    write_atomic(&dir.join("best.tpet"), policy_file(&best.best.source.text).as_bytes())?;
    let report = EvolveReport {
        eval_seeds: cfg.evolution.eval_seeds.clone(),
        summary: summary.clone(),
        runs: outcomes
            .iter()
            .map(|o| RunReport {
                run: o.run,
                status: o.status.clone(),
                best_id: o.best.id.clone(),
                best_fitness: o.best.fitness,
                best_source: o.best.source.text.clone(),
                best_metrics: o.best.metrics,
                best_defects: o.best.critique.counts,
                best_per_generation: o.best_per_generation.clone(),
                evaluated_per_generation: o.evaluated_per_generation.clone(),
                task: o.task.clone(),
            })
            .collect(),
    };
    write_json(&dir.join("summary.json"), &report)?;
    let table = summary_table(&outcomes, &summary);
    write_atomic(&dir.join("summary.txt"), table.as_bytes())?;
    print!("{table}");
    println!("wrote {}", dir.display());

    let exhausted: Vec<String> = outcomes
        .iter()
        .filter_map(|o| match &o.status {
            RunStatus::EngineExhausted { reason } => Some(format!("run {}: engine exhausted: {reason}", o.run)),
            RunStatus::RetryBudgetExhausted => Some(format!("run {}: retry budget exhausted", o.run)),
            RunStatus::Completed => None,
        })
        .collect();
    if exhausted.is_empty() {
        Ok(())
    } else {
        Err(CliError::Exhausted(exhausted.join("; ")))
    }
}

fn policy_file(source: &str) -> String {
    format!("{}\n", source.trim_end())
}

/// Reads a decision log; errors name the offending line.
pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    read_jsonl(BufReader::new(file))
        .map_err(|(line, msg)| CliError::Validation(format!("{}: line {line}: {msg}", path.display())))
}

pub fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let caf = match &args.config {
        Some(c) => RunConfig::load(c)?.caf,
        None => Default::default(),
    };
    let records = read_decisions(&args.log)?;
    let critique = analyze_log(&records, &caf);
    let text = match &args.metrics {
        Some(m) => {
            let raw = std::fs::read_to_string(m).map_err(|e| CliError::Validation(format!("{}: {e}", m.display())))?;
            let metrics: MetricsReport =
                serde_json::from_str(&raw).map_err(|e| CliError::Validation(format!("{}: {e}", m.display())))?;
            render_critique(&critique, &metrics)
        }
        // Without metrics the fitness header line is left out.
        None => render_critique(&critique, &MetricsReport::default())
            .split_once('\n')
            .map(|(_, rest)| rest.to_string())
            .unwrap_or_default(),
    };
    let out = args.out.clone().unwrap_or_else(|| {
        let stem = file_stem(&args.log);
        args.log.with_file_name(format!("{stem}.critique.json"))
    });
    write_json(&out, &critique)?;
    print!("{text}");
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Validation(format!("grid `{s}` must look like 2x3"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

pub fn gen_scenario(args: &GenScenarioArgs) -> Result<(), CliError> {
    let kind: DemandKind = args.kind.parse().map_err(CliError::Validation)?;
    let (rows, cols) = parse_grid(&args.grid)?;
    let params: ScenarioParams = match &args.params {
        Some(p) => {
            let raw = std::fs::read_to_string(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&raw).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        None => ScenarioParams::default(),
    };
    let (doc, flows) = generate_with(kind, rows, cols, &params, args.seed).map_err(|e| CliError::Validation(e.to_string()))?;
    let network_text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
    let flows_text = serde_json::to_string_pretty(&flows).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
    // What is written must load back.
    let net = load_network(&network_text).map_err(|e| CliError::Runtime(format!("generated network: {e}")))?;
    load_flows(&flows_text, &net).map_err(|e| CliError::Runtime(format!("generated flows: {e}")))?;
    write_atomic(&args.out.join("network.json"), network_text.as_bytes())?;
    write_atomic(&args.out.join("flows.json"), flows_text.as_bytes())?;
    println!(
        "wrote {} ({} intersections, {} flows)",
        args.out.display(),
        net.intersections.len(),
        flows.len()
    );
    Ok(())
}

pub fn vocab(args: &VocabArgs) -> Result<(), CliError> {
    let ssa: SsaConfig = match &args.config {
        Some(c) => RunConfig::load(c)?.episode.ssa,
        None => SsaConfig::default(),
    };
    println!("POLICY LANGUAGE\n{GRAMMAR}\n");
    println!("{}", vocabulary_description(&ssa).trim_end());
    Ok(())
}
