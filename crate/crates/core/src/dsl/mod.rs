//! The policy language.
//!
//! A policy is an ordered list of `IF <condition> THEN <phase>` rules and a
//! mandatory `ELSE <phase>` default. The first rule whose condition holds
//! selects the phase. There are no loops or side effects, so evaluation is
//! total on any program that parsed.

mod eval;
mod mutate;
mod parse;
mod render;

use serde::{Deserialize, Serialize};

use crate::ssa::{Congestion, Imbalance, Urgency};

pub use eval::{argmax, argmin, evaluate};
pub use mutate::{mutate_ast, random_program, Mutation, MutationKind, MutationParams, RuleTemplate};
pub use parse::{parse, parse_text, Diagnostic, DiagnosticCode};
pub use render::render;

/// Grammar published to mutation engines.
pub const GRAMMAR: &str = r#"policy     := rule* default
rule       := "IF" bexpr "THEN" pexpr
default    := "ELSE" pexpr
pexpr      := INT | ("argmax" | "argmin") "(" FEATURE ")"
bexpr      := comparison | bexpr ("AND" | "OR") bexpr | "NOT" bexpr | "(" bexpr ")"
comparison := nexpr OP nexpr | CATFEATURE "==" LEVEL | "starvation_risk" "[" INT "]"
nexpr      := NUMBER | FEATURE "[" INT "]" | ("max" | "min" | "sum") "(" FEATURE ")"
FEATURE    := "pressure" | "queue" | "wait" | "starvation"
CATFEATURE := "congestion" | "urgency" | "imbalance" | "dominant_flow"
LEVEL      := congestion: Low | Moderate | High | Critical
              urgency: Normal | Critical
              imbalance: None | NS_Dominant | EW_Dominant
              dominant_flow: INT | None
OP         := ">" | ">=" | "<" | "<=" | "==" | "!="
Phases are numbered from 0. NOT binds tighter than AND, AND tighter than OR.
argmax/argmin break ties toward the lowest phase index. Lines starting with # are comments."#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NumFeature {
    Pressure,
    Queue,
    Wait,
    Starvation,
}

impl NumFeature {
    pub const ALL: [NumFeature; 4] = [Self::Pressure, Self::Queue, Self::Wait, Self::Starvation];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pressure => "pressure",
            Self::Queue => "queue",
            Self::Wait => "wait",
            Self::Starvation => "starvation",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregate {
    Max,
    Min,
    Sum,
}

impl Aggregate {
    pub const ALL: [Aggregate; 3] = [Self::Max, Self::Min, Self::Sum];

    pub fn name(self) -> &'static str {
        match self {
            Self::Max => "max",
            Self::Min => "min",
            Self::Sum => "sum",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NumExpr {
    Lit(f64),
    Feature(NumFeature, usize),
    Agg(Aggregate, NumFeature),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [Self::Gt, Self::Ge, Self::Lt, Self::Le, Self::Eq, Self::Ne];

    pub fn symbol(self) -> &'static str {
        match self {
            Self::Gt => ">",
            Self::Ge => ">=",
            Self::Lt => "<",
            Self::Le => "<=",
            Self::Eq => "==",
            Self::Ne => "!=",
        }
    }

    /// The opposite comparison used by operator flips.
    pub fn flipped(self) -> Self {
        match self {
            Self::Gt => Self::Lt,
            Self::Lt => Self::Gt,
            Self::Ge => Self::Le,
            Self::Le => Self::Ge,
            Self::Eq => Self::Ne,
            Self::Ne => Self::Eq,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cond {
    Cmp(NumExpr, CmpOp, NumExpr),
    Congestion(Congestion),
    Urgency(Urgency),
    Imbalance(Imbalance),
    Dominant(Option<usize>),
    StarvationRisk(usize),
    Not(Box<Cond>),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
}

impl Cond {
    /// Nesting depth; a single comparison has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Cond::Not(c) => 1 + c.depth(),
            Cond::And(a, b) | Cond::Or(a, b) => 1 + a.depth().max(b.depth()),
            _ => 1,
        }
    }

    pub fn and(a: Cond, b: Cond) -> Cond {
        Cond::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Cond, b: Cond) -> Cond {
        Cond::Or(Box::new(a), Box::new(b))
    }

    pub fn not(c: Cond) -> Cond {
        Cond::Not(Box::new(c))
    }

    /// True if any starvation feature or predicate occurs in the condition.
    pub fn mentions_starvation(&self) -> bool {
        let num = |e: &NumExpr| matches!(e, NumExpr::Feature(NumFeature::Starvation, _) | NumExpr::Agg(_, NumFeature::Starvation));
        match self {
            Cond::StarvationRisk(_) => true,
            Cond::Cmp(l, _, r) => num(l) || num(r),
            Cond::Not(c) => c.mentions_starvation(),
            Cond::And(a, b) | Cond::Or(a, b) => a.mentions_starvation() || b.mentions_starvation(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhaseExpr {
    Fixed(usize),
    ArgMax(NumFeature),
    ArgMin(NumFeature),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub cond: Cond,
    pub phase: PhaseExpr,
}

/// Parsed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyProgram {
    pub rules: Vec<Rule>,
    pub default: PhaseExpr,
}

impl PolicyProgram {
    pub fn default_only(default: PhaseExpr) -> Self {
        Self {
            rules: Vec::new(),
            default,
        }
    }

    /// The program equivalent to the max-pressure controller.
    pub fn max_pressure() -> Self {
        Self::default_only(PhaseExpr::ArgMax(NumFeature::Pressure))
    }

    pub fn mentions_starvation(&self) -> bool {
        self.rules.iter().any(|r| {
            r.cond.mentions_starvation()
                || matches!(r.phase, PhaseExpr::ArgMax(NumFeature::Starvation) | PhaseExpr::ArgMin(NumFeature::Starvation))
        }) || matches!(self.default, PhaseExpr::ArgMax(NumFeature::Starvation) | PhaseExpr::ArgMin(NumFeature::Starvation))
    }
}

/// Size limits applied at parse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DslLimits {
    pub max_depth: usize,
    pub max_rules: usize,
}

impl Default for DslLimits {
    fn default() -> Self {
        Self {
            max_depth: 12,
            max_rules: 16,
        }
    }
}

/// What a program may reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub phase_count: usize,
    pub numeric: Vec<NumFeature>,
    /// Categorical predicates available (false in passthrough abstraction).
    pub categorical: bool,
    pub limits: DslLimits,
}

impl Signature {
    pub fn new(phase_count: usize) -> Self {
        Self {
            phase_count,
            numeric: NumFeature::ALL.to_vec(),
            categorical: true,
            limits: DslLimits::default(),
        }
    }

    pub fn with_limits(mut self, limits: DslLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn numeric_only(mut self) -> Self {
        self.categorical = false;
        self
    }

    pub fn allows(&self, f: NumFeature) -> bool {
        self.numeric.contains(&f)
    }
}

/// Policy text as proposed by an engine or read from disk.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolicySource {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub generation: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl PolicySource {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }
}
