use std::fmt;

use super::{Cond, NumExpr, PhaseExpr, PolicyProgram};

impl fmt::Display for NumExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumExpr::Lit(v) => write!(f, "{v}"),
            NumExpr::Feature(feat, i) => write!(f, "{}[{i}]", feat.name()),
            NumExpr::Agg(agg, feat) => write!(f, "{}({})", agg.name(), feat.name()),
        }
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cond::Cmp(l, op, r) => write!(f, "{l} {} {r}", op.symbol()),
            Cond::Congestion(c) => write!(f, "congestion == {}", c.name()),
            Cond::Urgency(u) => write!(f, "urgency == {}", u.name()),
            Cond::Imbalance(i) => write!(f, "imbalance == {}", i.name()),
            Cond::Dominant(Some(p)) => write!(f, "dominant_flow == {p}"),
            Cond::Dominant(None) => f.write_str("dominant_flow == None"),
            Cond::StarvationRisk(p) => write!(f, "starvation_risk[{p}]"),
            Cond::Not(c) => write!(f, "NOT {c}"),
            Cond::And(a, b) => write!(f, "({a} AND {b})"),
            Cond::Or(a, b) => write!(f, "({a} OR {b})"),
        }
    }
}

impl fmt::Display for PhaseExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseExpr::Fixed(p) => write!(f, "{p}"),
            PhaseExpr::ArgMax(feat) => write!(f, "argmax({})", feat.name()),
            PhaseExpr::ArgMin(feat) => write!(f, "argmin({})", feat.name()),
        }
    }
}

impl fmt::Display for PolicyProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            writeln!(f, "IF {} THEN {}", rule.cond, rule.phase)?;
        }
        write!(f, "ELSE {}", self.default)
    }
}

/// Canonical text: one rule per line, binary connectives parenthesized.
pub fn render(program: &PolicyProgram) -> String {
    program.to_string()
}

#[cfg(test)]
mod tests {
    use super::super::{parse_text, NumFeature, Signature};
    use super::*;

    #[test]
    fn default_only_is_one_line() {
        let p = PolicyProgram::max_pressure();
        assert_eq!(render(&p), "ELSE argmax(pressure)");
        let p = PolicyProgram::default_only(PhaseExpr::ArgMin(NumFeature::Queue));
        assert_eq!(render(&p), "ELSE argmin(queue)");
    }

    #[test]
    fn nested_is_fully_parenthesized() {
        let sig = Signature::new(4);
        let p = parse_text(
            "IF NOT congestion == Low OR queue[0] > 1.5 AND wait[1] <= 30 THEN 1 ELSE 0",
            &sig,
        )
        .unwrap();
        assert_eq!(
            render(&p),
            "IF (NOT congestion == Low OR (queue[0] > 1.5 AND wait[1] <= 30)) THEN 1\nELSE 0"
        );
        assert_eq!(parse_text(&render(&p), &sig).unwrap(), p);
    }

    #[test]
    fn fixture_round_trips() {
        let sig = Signature::new(4);
        for text in [
            "IF starvation_risk[1] THEN 1 ELSE argmax(pressure)",
            "IF starvation[2] > 120 AND pressure[2] > 8 THEN 2\nIF max(queue) >= 25 THEN argmax(queue)\nELSE argmax(pressure)",
            "IF dominant_flow == 3 OR imbalance == NS_Dominant THEN argmin(starvation) ELSE 0",
            "IF NOT NOT urgency == Normal THEN 2 ELSE 1",
            "IF -0.25 != sum(wait) THEN 0 ELSE 3",
        ] {
            let p = parse_text(text, &sig).unwrap();
            let r = render(&p);
            assert_eq!(parse_text(&r, &sig).unwrap(), p, "{r}");
            assert_eq!(render(&parse_text(&r, &sig).unwrap()), r);
        }
    }
}
