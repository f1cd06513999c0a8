//! Policy evolution: prompt assembly, candidate evaluation, elitist selection.
//!
//! The outer loop may rewrite the task description; the inner loop asks the
//! mutation engine for a population of candidates built from the current
//! elites and their critiques, evaluates them in parallel, and keeps the best.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caf::{analyze, render_critique, render_fitness, CafConfig, Critique, DefectCounts};
use crate::dsl::{parse, render, Diagnostic, DslLimits, PolicyProgram, PolicySource, Signature, GRAMMAR};
use crate::episode::{run_episode, signature_for, EpisodeSettings, PolicyController};
use crate::metrics::MetricsReport;
use crate::network::{FlowSpec, RoadNetwork};
use crate::ssa::vocabulary_description;

pub const DEFAULT_TASK: &str = "Design a traffic signal control policy for a signalized intersection. \
At every decision the policy picks the phase that receives green for the next interval. \
The goal is to minimize the average travel time of vehicles while keeping every approach served.";

const INSTRUCTION: &str = "Write improved policies in the policy language above. \
Address the defects reported for the elites. \
Return each policy inside its own fenced code block (```), with no other text inside the block.";

/// Policies every run starts from: the max-pressure equivalent plus simple
/// state-light programs (`argmax(starvation)` cycles through the phases).
pub const INITIAL_PROGRAMS: [&str; 4] = [
    "ELSE argmax(pressure)",
    "ELSE argmax(starvation)",
    "ELSE argmax(queue)",
    "ELSE argmax(wait)",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitnessDefinition {
    /// Seed-mean average travel time.
    Att,
    Weighted { att: f64, aql: f64, awt: f64 },
}

impl FitnessDefinition {
    pub fn scalar(&self, m: &MetricsReport) -> f64 {
        match self {
            Self::Att => m.att,
            Self::Weighted { att, aql, awt } => att * m.att + aql * m.aql + awt * m.awt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population: usize,
    pub elites: usize,
    /// Inner (algorithm) iterations per outer iteration.
    pub iterations: usize,
    /// Outer (task description) iterations; 1 keeps the task fixed.
    pub outer_iterations: usize,
    pub runs: usize,
    /// Episode seeds every candidate is evaluated on.
    pub eval_seeds: Vec<u64>,
    /// Engine seed of run 0; run `r` uses `engine_seed + r`.
    pub engine_seed: u64,
    /// Invalid candidates tolerated per run.
    pub retry_budget: usize,
    pub fitness: FitnessDefinition,
    pub limits: DslLimits,
    /// Prompt size bound in characters; critiques are cut first.
    pub max_prompt_chars: usize,
    /// Replaces the built-in initial programs when non-empty.
    pub initial_programs: Vec<String>,
    pub task: Option<String>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 20,
            elites: 3,
            iterations: 20,
            outer_iterations: 1,
            runs: 3,
            eval_seeds: vec![1, 2, 3],
            engine_seed: 0,
            retry_budget: 200,
            fitness: FitnessDefinition::Att,
            limits: DslLimits::default(),
            max_prompt_chars: 24_000,
            initial_programs: Vec::new(),
            task: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error("initial program `{source_text}` rejected: {reason}")]
    Initial { source_text: String, reason: String },
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let err = |m: &str| Err(EvolutionError::Config(m.into()));
        if self.population == 0 || self.elites == 0 || self.iterations == 0 || self.outer_iterations == 0 || self.runs == 0 {
            return err("population, elites, iterations, outer_iterations and runs must all be >= 1");
        }
        if self.elites >= self.population {
            return err("elites must be smaller than population");
        }
        if self.eval_seeds.is_empty() {
            return err("eval_seeds must not be empty");
        }
        if let FitnessDefinition::Weighted { att, aql, awt } = self.fitness {
            if ![att, aql, awt].iter().all(|w| w.is_finite() && *w >= 0.0) || att + aql + awt == 0.0 {
                return err("fitness weights must be finite, non-negative and not all zero");
            }
        }
        Ok(())
    }

    pub fn initial_sources(&self) -> Vec<String> {
        if self.initial_programs.is_empty() {
            INITIAL_PROGRAMS.iter().map(|s| s.to_string()).collect()
        } else {
            self.initial_programs.clone()
        }
    }
}

/// Everything needed to score a policy.
#[derive(Debug, Clone)]
pub struct Environment {
    pub network: RoadNetwork,
    pub flows: FlowSpec,
    pub settings: EpisodeSettings,
    pub caf: CafConfig,
    pub signature: Signature,
}

impl Environment {
    pub fn new(
        network: RoadNetwork,
        flows: FlowSpec,
        settings: EpisodeSettings,
        caf: CafConfig,
        limits: &DslLimits,
    ) -> Result<Self, EvolutionError> {
        settings.validate().map_err(|e| EvolutionError::Config(e.to_string()))?;
        caf.validate().map_err(|e| EvolutionError::Config(e.to_string()))?;
        let signature = signature_for(&network, &settings.ssa, limits).map_err(EvolutionError::Config)?;
        Ok(Self {
            network,
            flows,
            settings,
            caf,
            signature,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub source: PolicySource,
    pub program: PolicyProgram,
    /// Seed-mean metrics.
    pub metrics: MetricsReport,
    pub per_seed: Vec<MetricsReport>,
    pub fitness: f64,
    /// Analysis of the first seed's decision log.
    pub critique: Critique,
    pub generation: u32,
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    Invalid(Diagnostic),
    Aborted(String),
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::Invalid(d) => write!(f, "invalid policy: {d}"),
            Rejection::Aborted(e) => write!(f, "simulation aborted: {e}"),
        }
    }
}

pub fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    if reports.is_empty() {
        return MetricsReport::default();
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let avg_u = |f: fn(&MetricsReport) -> u64| (reports.iter().map(f).sum::<u64>() as f64 / n).round() as u64;
    MetricsReport {
        att: avg(|m| m.att),
        aql: avg(|m| m.aql),
        awt: avg(|m| m.awt),
        completed: avg_u(|m| m.completed),
        remaining: avg_u(|m| m.remaining),
    }
}

/// Simulates an already-parsed program on every seed.
pub fn evaluate_program(
    program: PolicyProgram,
    source: PolicySource,
    env: &Environment,
    seeds: &[u64],
    fitness: &FitnessDefinition,
) -> Result<Candidate, Rejection> {
    let mut controller = PolicyController::new(program.clone(), source.name.clone().unwrap_or_default());
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut critique = None;
    for &seed in seeds {
        let r = run_episode(&env.network, &env.flows, &mut controller, &env.settings, seed)
            .map_err(|e| Rejection::Aborted(e.to_string()))?;
        if critique.is_none() {
            critique = Some(analyze(&r.decisions, &env.caf));
        }
        per_seed.push(r.metrics);
    }
    let metrics = mean_report(&per_seed);
    let scalar = fitness.scalar(&metrics);
    if !scalar.is_finite() {
        return Err(Rejection::Aborted(format!("non-finite fitness {scalar}")));
    }
    Ok(Candidate {
        id: source.name.clone().unwrap_or_default(),
        generation: source.generation,
        parent: source.parent.clone(),
        source,
        program,
        metrics,
        per_seed,
        fitness: scalar,
        critique: critique.unwrap_or_default(),
    })
}

/// Parses and scores one source.
pub fn evaluate_candidate(
    source: PolicySource,
    env: &Environment,
    seeds: &[u64],
    fitness: &FitnessDefinition,
) -> Result<Candidate, Rejection> {
    let program = parse(&source, &env.signature).map_err(Rejection::Invalid)?;
    evaluate_program(program, source, env, seeds, fitness)
}

/// The `k` best by fitness, then AWT, then earlier generation. Stable.
pub fn select_elites(population: &[Candidate], k: usize) -> Vec<Candidate> {
    let mut v: Vec<&Candidate> = population.iter().collect();
    v.sort_by(|a, b| {
        a.fitness
            .total_cmp(&b.fitness)
            .then(a.metrics.awt.total_cmp(&b.metrics.awt))
            .then(a.generation.cmp(&b.generation))
    });
    v.into_iter().take(k).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptElite {
    pub id: String,
    pub source: String,
    pub fitness: f64,
    pub critique: String,
}

/// Structured prompt handed to a mutation engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptState {
    pub task: String,
    pub grammar: String,
    pub vocabulary: String,
    pub elites: Vec<PromptElite>,
    /// Diagnostics from candidates rejected in the previous generation.
    pub feedback: Vec<String>,
    pub instruction: String,
}

impl PromptState {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "## TASK\n{}\n", self.task.trim_end());
        let _ = writeln!(s, "## POLICY LANGUAGE\n{}\n", self.grammar.trim_end());
        let _ = writeln!(s, "## {}\n", self.vocabulary.trim_end());
        s.push_str("## CURRENT ELITES\n");
        for (k, e) in self.elites.iter().enumerate() {
            let _ = writeln!(s, "### Elite {} ({}) fitness {:.2}", k + 1, e.id, e.fitness);
            let _ = writeln!(s, "```\n{}\n```", e.source.trim_end());
            let _ = writeln!(s, "{}", e.critique.trim_end());
        }
        if !self.feedback.is_empty() {
            s.push_str("\n## REJECTED CANDIDATES\n");
            for f in &self.feedback {
                let _ = writeln!(s, "- {f}");
            }
        }
        let _ = write!(s, "\n## INSTRUCTION\n{}\n", self.instruction);
        s
    }
}

fn cut(text: &str, max: usize) -> String {
    const MARK: &str = "[critique truncated]";
    if text.len() <= max {
        return text.to_string();
    }
    let mut end = max.saturating_sub(MARK.len() + 1);
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}\n{MARK}", &text[..end])
}

/// Assembles the prompt; when over `max_chars`, critiques are shortened
/// evenly (sources are never cut), then feedback is dropped.
pub fn build_prompt(
    elites: &[Candidate],
    vocabulary: &str,
    grammar: &str,
    task: &str,
    caf_enabled: bool,
    feedback: &[String],
    max_chars: usize,
) -> PromptState {
    let mut p = PromptState {
        task: task.to_string(),
        grammar: grammar.to_string(),
        vocabulary: vocabulary.to_string(),
        elites: elites
            .iter()
            .map(|c| PromptElite {
                id: c.id.clone(),
                source: c.source.text.clone(),
                fitness: c.fitness,
                critique: if caf_enabled {
                    render_critique(&c.critique, &c.metrics)
                } else {
                    render_fitness(&c.metrics)
                }
                .trim_end()
                .to_string(),
            })
            .collect(),
        feedback: feedback.to_vec(),
        instruction: INSTRUCTION.to_string(),
    };
    let size = p.render().len();
    if size <= max_chars || p.elites.is_empty() {
        return p;
    }
    let critique_total: usize = p.elites.iter().map(|e| e.critique.len()).sum();
    let fixed = size - critique_total;
    let per = max_chars.saturating_sub(fixed) / p.elites.len();
    for e in &mut p.elites {
        e.critique = cut(&e.critique, per);
    }
    if p.render().len() > max_chars {
        p.feedback.clear();
    }
    p
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EngineStatus {
    Ok,
    Exhausted { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub sources: Vec<PolicySource>,
    /// Responses that yielded no candidate.
    pub dropped: usize,
    pub status: EngineStatus,
}

impl Proposal {
    pub fn ok(sources: Vec<PolicySource>) -> Self {
        Self {
            sources,
            dropped: 0,
            status: EngineStatus::Ok,
        }
    }
}

/// Source of new candidates. Implementations never fail the loop: errors are
/// reported through [`Proposal::status`].
pub trait MutationEngine: Send {
    fn propose(&mut self, prompt: &PromptState, n: usize) -> Proposal;

    /// New task description for the next outer iteration.
    fn refine_prompt(&mut self, prompt: &PromptState) -> String {
        prompt.task.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Evaluated,
    /// Same canonical program seen earlier in the run; score reused.
    Cached,
    Rejected,
    Aborted,
}

/// One line of the evolution history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub run: usize,
    pub generation: u32,
    pub id: String,
    pub parent: Option<String>,
    pub status: CandidateStatus,
    pub source: String,
    pub fitness: Option<f64>,
    pub metrics: Option<MetricsReport>,
    pub defects: Option<DefectCounts>,
    pub diagnostic: Option<Diagnostic>,
    pub error: Option<String>,
    /// Kept as an elite at the end of its generation.
    pub elite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    EngineExhausted { reason: String },
    RetryBudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: usize,
    pub best: Candidate,
    pub elites: Vec<Candidate>,
    /// Best fitness after each generation, generation 0 first.
    pub best_per_generation: Vec<f64>,
    pub history: Vec<HistoryRecord>,
    pub status: RunStatus,
    pub task: String,
    /// Simulated (non-cached) candidate evaluations per generation.
    pub evaluated_per_generation: Vec<usize>,
}

fn record(run: usize, c: &Candidate, status: CandidateStatus) -> HistoryRecord {
    HistoryRecord {
        run,
        generation: c.generation,
        id: c.id.clone(),
        parent: c.parent.clone(),
        status,
        source: c.source.text.clone(),
        fitness: Some(c.fitness),
        metrics: Some(c.metrics),
        defects: Some(c.critique.counts),
        diagnostic: None,
        error: None,
        elite: false,
    }
}

fn mark_elites(records: &mut [HistoryRecord], elites: &[Candidate]) {
    for r in records {
        r.elite = elites.iter().any(|e| e.id == r.id);
    }
}

/// One evolution run. `sink` receives each generation's history records
/// once the generation is complete.
pub fn evolve(
    env: &Environment,
    engine: &mut dyn MutationEngine,
    cfg: &EvolutionConfig,
    run: usize,
    sink: &mut dyn FnMut(&[HistoryRecord]),
) -> Result<RunOutcome, EvolutionError> {
    cfg.validate()?;
    let seeds = &cfg.eval_seeds;
    let vocabulary = vocabulary_description(&env.settings.ssa);
    let mut cache: HashMap<String, Candidate> = HashMap::new();
    let mut history = Vec::new();

    let initial: Vec<PolicySource> = cfg
        .initial_sources()
        .into_iter()
        .enumerate()
        .map(|(k, text)| PolicySource {
            text,
            name: Some(format!("r{run}g0c{k}")),
            generation: 0,
            parent: None,
        })
        .collect();
    let scored: Vec<Result<Candidate, Rejection>> = initial
        .par_iter()
        .map(|s| evaluate_candidate(s.clone(), env, seeds, &cfg.fitness))
        .collect();
    let mut population = Vec::new();
    for (src, r) in initial.iter().zip(scored) {
        let c = r.map_err(|e| EvolutionError::Initial {
            source_text: src.text.clone(),
            reason: e.to_string(),
        })?;
        cache.insert(render(&c.program), c.clone());
        population.push(c);
    }
    let mut elites = select_elites(&population, cfg.elites);
    let mut gen_records: Vec<HistoryRecord> = population.iter().map(|c| record(run, c, CandidateStatus::Evaluated)).collect();
    mark_elites(&mut gen_records, &elites);
    sink(&gen_records);
    history.extend(gen_records);
    let mut best_per_generation = vec![elites[0].fitness];
    let mut evaluated_per_generation = vec![population.len()];

    let mut task = cfg.task.clone().unwrap_or_else(|| DEFAULT_TASK.to_string());
    let mut feedback: Vec<String> = Vec::new();
    let mut retries_left = cfg.retry_budget;
    let mut status = RunStatus::Completed;
    let mut generation = 0u32;

    'outer: for outer in 0..cfg.outer_iterations {
        if outer > 0 {
            let prompt = build_prompt(&elites, &vocabulary, GRAMMAR, &task, env.caf.enabled, &[], cfg.max_prompt_chars);
            task = engine.refine_prompt(&prompt);
        }
        for _ in 0..cfg.iterations {
            generation += 1;
            let prompt = build_prompt(&elites, &vocabulary, GRAMMAR, &task, env.caf.enabled, &feedback, cfg.max_prompt_chars);
            let proposal = engine.propose(&prompt, cfg.population);
            if let EngineStatus::Exhausted { reason } = proposal.status {
                status = RunStatus::EngineExhausted { reason };
                break 'outer;
            }
            feedback.clear();
            let mut gen_records = Vec::new();
            let mut fresh: Vec<(PolicySource, PolicyProgram)> = Vec::new();
            let mut fresh_index: HashMap<String, usize> = HashMap::new();
            // Repeats of a program first seen in this generation.
            let mut repeats: Vec<(PolicySource, usize)> = Vec::new();
            let mut reused = Vec::new();
            for (k, mut src) in proposal.sources.into_iter().take(cfg.population).enumerate() {
                let id = format!("r{run}g{generation}c{k}");
                src.name = Some(id.clone());
                src.generation = generation;
                match parse(&src, &env.signature) {
                    Err(d) => {
                        feedback.push(format!("{}: {d}", src.text.lines().next().unwrap_or("").trim()));
                        gen_records.push(HistoryRecord {
                            run,
                            generation,
                            id,
                            parent: src.parent.clone(),
                            status: CandidateStatus::Rejected,
                            source: src.text.clone(),
                            fitness: None,
                            metrics: None,
                            defects: None,
                            diagnostic: Some(d),
                            error: None,
                            elite: false,
                        });
                        if retries_left == 0 {
                            status = RunStatus::RetryBudgetExhausted;
                        } else {
                            retries_left -= 1;
                        }
                    }
                    Ok(program) => match cache.get(&render(&program)) {
                        None if fresh_index.contains_key(&render(&program)) => {
                            repeats.push((src, fresh_index[&render(&program)]));
                        }
                        Some(hit) => {
                            let c = Candidate {
                                id,
                                generation,
                                parent: src.parent.clone(),
                                source: src,
                                ..hit.clone()
                            };
                            gen_records.push(record(run, &c, CandidateStatus::Cached));
                            reused.push(c);
                        }
                        None => {
                            fresh_index.insert(render(&program), fresh.len());
                            fresh.push((src, program));
                        }
                    },
                }
            }
            if status == RunStatus::RetryBudgetExhausted {
                sink(&gen_records);
                history.extend(gen_records);
                break 'outer;
            }

            let scored: Vec<Result<Candidate, Rejection>> = fresh
                .par_iter()
                .map(|(src, program)| evaluate_program(program.clone(), src.clone(), env, seeds, &cfg.fitness))
                .collect();
            let evaluated = scored.len();
            for (src, k) in repeats {
                if let Ok(hit) = &scored[k] {
                    let c = Candidate {
                        id: src.name.clone().unwrap_or_default(),
                        generation,
                        parent: src.parent.clone(),
                        source: src,
                        ..hit.clone()
                    };
                    gen_records.push(record(run, &c, CandidateStatus::Cached));
                    reused.push(c);
                }
            }
            let mut pool: Vec<Candidate> = elites.clone();
            for ((src, program), r) in fresh.into_iter().zip(scored) {
                match r {
                    Ok(c) => {
                        cache.insert(render(&program), c.clone());
                        gen_records.push(record(run, &c, CandidateStatus::Evaluated));
                        pool.push(c);
                    }
                    Err(e) => gen_records.push(HistoryRecord {
                        run,
                        generation,
                        id: src.name.clone().unwrap_or_default(),
                        parent: src.parent.clone(),
                        status: CandidateStatus::Aborted,
                        source: src.text.clone(),
                        fitness: None,
                        metrics: None,
                        defects: None,
                        diagnostic: None,
                        error: Some(e.to_string()),
                        elite: false,
                    }),
                }
            }
            // Order by id so cached and fresh candidates interleave as proposed.
            gen_records.sort_by_key(|r| r.id.trim_start_matches(&format!("r{run}g{generation}c")).parse::<usize>().unwrap_or(0));
            pool.extend(reused);
            elites = select_elites(&pool, cfg.elites);
            mark_elites(&mut gen_records, &elites);
            sink(&gen_records);
            history.extend(gen_records);
            best_per_generation.push(elites[0].fitness);
            evaluated_per_generation.push(evaluated);
        }
    }

    Ok(RunOutcome {
        run,
        best: elites[0].clone(),
        elites,
        best_per_generation,
        history,
        status,
        task,
        evaluated_per_generation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_fitness: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (0 for a single run).
    pub std: f64,
    pub best_sources: Vec<String>,
    pub statuses: Vec<RunStatus>,
}

/// Mean and population std, accumulated as offsets from the first value so
/// identical samples give exactly that value and a std of 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let Some(&pivot) = values.first() else {
        return (0.0, 0.0);
    };
    let n = values.len() as f64;
    let shift = values.iter().map(|v| v - pivot).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - pivot - shift).powi(2)).sum::<f64>() / n;
    (pivot + shift, var.sqrt())
}

pub fn summarize(outcomes: &[RunOutcome]) -> RunSummary {
    let best: Vec<f64> = outcomes.iter().map(|o| o.best.fitness).collect();
    let (mean, std) = mean_std(&best);
    RunSummary {
        best_fitness: best,
        mean,
        std,
        best_sources: outcomes.iter().map(|o| o.best.source.text.clone()).collect(),
        statuses: outcomes.iter().map(|o| o.status.clone()).collect(),
    }
}
