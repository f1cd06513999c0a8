//! Single-edit AST mutations and random program generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Aggregate, CmpOp, Cond, NumExpr, NumFeature, PhaseExpr, PolicyProgram, Rule, Signature};
use crate::ssa::{Congestion, Imbalance, Urgency};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationKind {
    ThresholdPerturb,
    RuleInsert,
    RuleDelete,
    RuleSwap,
    OperatorFlip,
    SelectorSwap,
}

impl MutationKind {
    pub const ALL: [MutationKind; 6] = [
        Self::ThresholdPerturb,
        Self::RuleInsert,
        Self::RuleDelete,
        Self::RuleSwap,
        Self::OperatorFlip,
        Self::SelectorSwap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ThresholdPerturb => "threshold-perturb",
            Self::RuleInsert => "rule-insert",
            Self::RuleDelete => "rule-delete",
            Self::RuleSwap => "rule-swap",
            Self::OperatorFlip => "operator-flip",
            Self::SelectorSwap => "selector-swap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationParams {
    /// Threshold edits draw a shift uniformly from `[-range, range]`.
    pub threshold_range: f64,
    /// Probability that a rule insertion uses the starvation template.
    pub starvation_bias: f64,
}

impl Default for MutationParams {
    fn default() -> Self {
        Self {
            threshold_range: 3.0,
            starvation_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mutation {
    Applied(PolicyProgram),
    NoOp { reason: String },
}

impl Mutation {
    pub fn applied(self) -> Option<PolicyProgram> {
        match self {
            Mutation::Applied(p) => Some(p),
            Mutation::NoOp { .. } => None,
        }
    }

    fn noop(reason: impl Into<String>) -> Self {
        Mutation::NoOp { reason: reason.into() }
    }
}

/// Rule shapes used by insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleTemplate {
    /// Serve a phase whose starvation risk is flagged.
    Starvation,
    PressureThreshold,
    WaitThreshold,
    CongestionQueue,
    UrgencyWait,
}

impl RuleTemplate {
    pub const ALL: [RuleTemplate; 5] = [
        Self::Starvation,
        Self::PressureThreshold,
        Self::WaitThreshold,
        Self::CongestionQueue,
        Self::UrgencyWait,
    ];

    /// A concrete rule, or `None` when the signature lacks the vocabulary.
    pub fn instantiate(self, rng: &mut impl Rng, sig: &Signature) -> Option<Rule> {
        if sig.phase_count == 0 {
            return None;
        }
        let phase = rng.random_range(0..sig.phase_count);
        let cmp = |f, lit: f64| Cond::Cmp(NumExpr::Feature(f, phase), CmpOp::Gt, NumExpr::Lit(lit));
        let fixed = PhaseExpr::Fixed(phase);
        match self {
            Self::Starvation if sig.categorical => Some(Rule {
                cond: Cond::StarvationRisk(phase),
                phase: fixed,
            }),
            Self::Starvation if sig.allows(NumFeature::Starvation) && sig.allows(NumFeature::Pressure) => {
                let s = rng.random_range(6..=18) as f64 * 10.0;
                let p = rng.random_range(3..=12) as f64;
                Some(Rule {
                    cond: Cond::and(cmp(NumFeature::Starvation, s), cmp(NumFeature::Pressure, p)),
                    phase: fixed,
                })
            }
            Self::PressureThreshold if sig.allows(NumFeature::Pressure) => Some(Rule {
                cond: cmp(NumFeature::Pressure, rng.random_range(2..=20) as f64),
                phase: fixed,
            }),
            Self::WaitThreshold if sig.allows(NumFeature::Wait) => Some(Rule {
                cond: cmp(NumFeature::Wait, rng.random_range(3..=15) as f64 * 10.0),
                phase: fixed,
            }),
            Self::CongestionQueue if sig.categorical && sig.allows(NumFeature::Queue) => Some(Rule {
                cond: Cond::Congestion(if rng.random_bool(0.5) { Congestion::Critical } else { Congestion::High }),
                phase: PhaseExpr::ArgMax(NumFeature::Queue),
            }),
            Self::UrgencyWait if sig.categorical && sig.allows(NumFeature::Wait) => Some(Rule {
                cond: Cond::Urgency(Urgency::Critical),
                phase: PhaseExpr::ArgMax(NumFeature::Wait),
            }),
            _ => None,
        }
    }
}

fn literals<'a>(c: &'a mut Cond, out: &mut Vec<&'a mut f64>) {
    match c {
        Cond::Cmp(l, _, r) => {
            if let NumExpr::Lit(v) = l {
                out.push(v);
            }
            if let NumExpr::Lit(v) = r {
                out.push(v);
            }
        }
        Cond::Not(c) => literals(c, out),
        Cond::And(a, b) | Cond::Or(a, b) => {
            literals(a, out);
            literals(b, out);
        }
        _ => {}
    }
}

fn operator_count(c: &Cond) -> usize {
    match c {
        Cond::Cmp(..) => 1,
        Cond::Not(c) => operator_count(c),
        Cond::And(a, b) | Cond::Or(a, b) => 1 + operator_count(a) + operator_count(b),
        _ => 0,
    }
}

/// Flips the `n`-th operator in pre-order; returns true once done.
fn flip_nth(c: &mut Cond, n: &mut usize) -> bool {
    match c {
        Cond::Cmp(_, op, _) => {
            if *n == 0 {
                *op = op.flipped();
                return true;
            }
            *n -= 1;
            false
        }
        Cond::Not(inner) => flip_nth(inner, n),
        Cond::And(a, b) | Cond::Or(a, b) => {
            if *n == 0 {
                let (a, b) = (std::mem::replace(a, dummy()), std::mem::replace(b, dummy()));
                *c = match c {
                    Cond::And(..) => Cond::Or(a, b),
                    _ => Cond::And(a, b),
                };
                return true;
            }
            *n -= 1;
            flip_nth(a, n) || flip_nth(b, n)
        }
        _ => false,
    }
}

fn dummy() -> Box<Cond> {
    Box::new(Cond::Dominant(None))
}

fn selectors(sig: &Signature) -> Vec<PhaseExpr> {
    let mut out: Vec<PhaseExpr> = (0..sig.phase_count).map(PhaseExpr::Fixed).collect();
    for f in NumFeature::ALL.into_iter().filter(|f| sig.allows(*f)) {
        out.push(PhaseExpr::ArgMax(f));
        out.push(PhaseExpr::ArgMin(f));
    }
    out
}

/// Applies one edit of `kind`, deterministic in `(program, seed, kind)`.
pub fn mutate_ast(
    program: &PolicyProgram,
    sig: &Signature,
    seed: u64,
    kind: MutationKind,
    params: &MutationParams,
) -> Mutation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = program.clone();
    match kind {
        MutationKind::ThresholdPerturb => {
            let mut lits = Vec::new();
            for r in &mut out.rules {
                literals(&mut r.cond, &mut lits);
            }
            if lits.is_empty() {
                return Mutation::noop("program has no numeric thresholds");
            }
            let slot = rng.random_range(0..lits.len());
            let range = params.threshold_range.abs().max(0.01);
            let old = *lits[slot];
            let delta = rng.random_range(-range..=range);
            let mut new = ((old + delta) * 100.0).round() / 100.0;
            if new == old || !new.is_finite() {
                new = old + range.min(1.0);
            }
            *lits[slot] = new;
        }
        MutationKind::RuleInsert => {
            if out.rules.len() >= sig.limits.max_rules {
                return Mutation::noop("rule limit reached");
            }
            let usable: Vec<RuleTemplate> = RuleTemplate::ALL
                .into_iter()
                .filter(|t| t.instantiate(&mut ChaCha8Rng::seed_from_u64(0), sig).is_some())
                .collect();
            if usable.is_empty() {
                return Mutation::noop("no rule template fits the signature");
            }
            let starvation_ok = usable.contains(&RuleTemplate::Starvation);
            let template = if starvation_ok && rng.random_bool(params.starvation_bias.clamp(0.0, 1.0)) {
                RuleTemplate::Starvation
            } else {
                usable[rng.random_range(0..usable.len())]
            };
            let Some(rule) = template.instantiate(&mut rng, sig) else {
                return Mutation::noop("no rule template fits the signature");
            };
            if rule.cond.depth() > sig.limits.max_depth {
                return Mutation::noop("template exceeds depth limit");
            }
            let at = rng.random_range(0..=out.rules.len());
            out.rules.insert(at, rule);
        }
        MutationKind::RuleDelete => {
            if out.rules.is_empty() {
                return Mutation::noop("default-only program has no rule to delete");
            }
            let at = rng.random_range(0..out.rules.len());
            out.rules.remove(at);
        }
        MutationKind::RuleSwap => {
            let n = out.rules.len();
            if n < 2 {
                return Mutation::noop("fewer than two rules to swap");
            }
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            out.rules.swap(i, j);
        }
        MutationKind::OperatorFlip => {
            let counts: Vec<usize> = out.rules.iter().map(|r| operator_count(&r.cond)).collect();
            let total: usize = counts.iter().sum();
            if total == 0 {
                return Mutation::noop("program has no operators");
            }
            let mut n = rng.random_range(0..total);
            for (rule, count) in out.rules.iter_mut().zip(&counts) {
                if n < *count {
                    flip_nth(&mut rule.cond, &mut n);
                    break;
                }
                n -= count;
            }
        }
        MutationKind::SelectorSwap => {
            let site = rng.random_range(0..=out.rules.len());
            let current = if site == out.rules.len() { out.default } else { out.rules[site].phase };
            let options: Vec<PhaseExpr> = selectors(sig).into_iter().filter(|p| *p != current).collect();
            if options.is_empty() {
                return Mutation::noop("no alternative phase selector");
            }
            let pick = options[rng.random_range(0..options.len())];
            if site == out.rules.len() {
                out.default = pick;
            } else {
                out.rules[site].phase = pick;
            }
        }
    }
    Mutation::Applied(out)
}

fn random_feature(rng: &mut impl Rng, sig: &Signature) -> Option<NumFeature> {
    (!sig.numeric.is_empty()).then(|| sig.numeric[rng.random_range(0..sig.numeric.len())])
}

fn random_literal(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.7) {
        rng.random_range(-20..=200) as f64 / 2.0
    } else {
        rng.random_range(-1000.0..1000.0)
    }
}

fn random_num(rng: &mut impl Rng, sig: &Signature, literal_bias: f64) -> NumExpr {
    let Some(f) = random_feature(rng, sig) else {
        return NumExpr::Lit(random_literal(rng));
    };
    if rng.random_bool(literal_bias) {
        NumExpr::Lit(random_literal(rng))
    } else if sig.phase_count > 0 && rng.random_bool(0.75) {
        NumExpr::Feature(f, rng.random_range(0..sig.phase_count))
    } else {
        NumExpr::Agg(Aggregate::ALL[rng.random_range(0..3)], f)
    }
}

fn random_atom(rng: &mut impl Rng, sig: &Signature) -> Cond {
    let categorical = sig.categorical && sig.phase_count > 0;
    let kinds = if categorical { 6 } else { 1 };
    match rng.random_range(0..kinds * 2) {
        // Comparisons get half the mass.
        k if k < kinds || !categorical => Cond::Cmp(
            random_num(rng, sig, 0.1),
            CmpOp::ALL[rng.random_range(0..6)],
            random_num(rng, sig, 0.7),
        ),
        k => match k - kinds {
            0 => Cond::Congestion(Congestion::ALL[rng.random_range(0..4)]),
            1 => Cond::Urgency(Urgency::ALL[rng.random_range(0..2)]),
            2 => Cond::Imbalance(Imbalance::ALL[rng.random_range(0..3)]),
            3 => Cond::Dominant(rng.random_bool(0.7).then(|| rng.random_range(0..sig.phase_count))),
            4 => Cond::StarvationRisk(rng.random_range(0..sig.phase_count)),
            _ => Cond::Cmp(
                random_num(rng, sig, 0.1),
                CmpOp::ALL[rng.random_range(0..6)],
                random_num(rng, sig, 0.7),
            ),
        },
    }
}

fn random_cond(rng: &mut impl Rng, sig: &Signature, depth: usize) -> Cond {
    if depth <= 1 || rng.random_bool(0.35) {
        return random_atom(rng, sig);
    }
    match rng.random_range(0..5) {
        0 => Cond::not(random_cond(rng, sig, depth - 1)),
        1 | 2 => Cond::and(random_cond(rng, sig, depth - 1), random_cond(rng, sig, depth - 1)),
        _ => Cond::or(random_cond(rng, sig, depth - 1), random_cond(rng, sig, depth - 1)),
    }
}

fn random_selector(rng: &mut impl Rng, sig: &Signature) -> PhaseExpr {
    let options = selectors(sig);
    if options.is_empty() {
        return PhaseExpr::Fixed(0);
    }
    options[rng.random_range(0..options.len())]
}

/// A random program valid under `sig`, for fuzzing.
pub fn random_program(rng: &mut impl Rng, sig: &Signature) -> PolicyProgram {
    let rules = rng.random_range(0..=sig.limits.max_rules.min(6));
    let depth = sig.limits.max_depth.min(5);
    PolicyProgram {
        rules: (0..rules)
            .map(|_| {
                let d = rng.random_range(1..=depth.max(1));
                Rule {
                    cond: random_cond(rng, sig, d),
                    phase: random_selector(rng, sig),
                }
            })
            .collect(),
        default: random_selector(rng, sig),
    }
}
