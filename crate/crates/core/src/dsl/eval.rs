use super::{Aggregate, CmpOp, Cond, NumExpr, NumFeature, PhaseExpr, PolicyProgram};
use crate::ssa::StructuredFacts;

/// Index of the largest value; the lowest index wins ties. Empty → 0.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value; the lowest index wins ties. Empty → 0.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn vector(facts: &StructuredFacts, f: NumFeature) -> &[f64] {
    match f {
        NumFeature::Pressure => &facts.pressure,
        NumFeature::Queue => &facts.queue,
        NumFeature::Wait => &facts.wait,
        NumFeature::Starvation => &facts.starvation,
    }
}

fn num(e: &NumExpr, facts: &StructuredFacts) -> f64 {
    match e {
        NumExpr::Lit(v) => *v,
        NumExpr::Feature(f, i) => vector(facts, *f).get(*i).copied().unwrap_or(0.0),
        NumExpr::Agg(agg, f) => {
            let v = vector(facts, *f);
            if v.is_empty() {
                return 0.0;
            }
            match agg {
                Aggregate::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Aggregate::Min => v.iter().copied().fold(f64::INFINITY, f64::min),
                Aggregate::Sum => v.iter().sum(),
            }
        }
    }
}

fn holds(c: &Cond, facts: &StructuredFacts) -> bool {
    match c {
        Cond::Cmp(l, op, r) => {
            let (a, b) = (num(l, facts), num(r, facts));
            match op {
                CmpOp::Gt => a > b,
                CmpOp::Ge => a >= b,
                CmpOp::Lt => a < b,
                CmpOp::Le => a <= b,
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
            }
        }
        Cond::Congestion(level) => facts.congestion == *level,
        Cond::Urgency(level) => facts.urgency == *level,
        Cond::Imbalance(level) => facts.imbalance == *level,
        Cond::Dominant(p) => facts.dominant_flow == *p,
        Cond::StarvationRisk(p) => facts.starvation_risk.get(*p).copied().unwrap_or(false),
        Cond::Not(c) => !holds(c, facts),
        Cond::And(a, b) => holds(a, facts) && holds(b, facts),
        Cond::Or(a, b) => holds(a, facts) || holds(b, facts),
    }
}

fn select(p: &PhaseExpr, facts: &StructuredFacts) -> usize {
    match p {
        PhaseExpr::Fixed(i) => *i,
        PhaseExpr::ArgMax(f) => argmax(vector(facts, *f)),
        PhaseExpr::ArgMin(f) => argmin(vector(facts, *f)),
    }
}

/// Phase chosen by the first rule whose condition holds, else the default.
pub fn evaluate(program: &PolicyProgram, facts: &StructuredFacts) -> usize {
    program
        .rules
        .iter()
        .find(|r| holds(&r.cond, facts))
        .map_or_else(|| select(&program.default, facts), |r| select(&r.phase, facts))
}
