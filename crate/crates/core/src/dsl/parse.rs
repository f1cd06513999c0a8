use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Aggregate, CmpOp, Cond, NumExpr, NumFeature, PhaseExpr, PolicyProgram, PolicySource, Rule, Signature};
use crate::ssa::{Congestion, Imbalance, Urgency};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    Syntax,
    UnknownFeature,
    UnknownLevel,
    PhaseOutOfRange,
    DepthExceeded,
    TooManyRules,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Syntax => "syntax",
            Self::UnknownFeature => "unknown_feature",
            Self::UnknownLevel => "unknown_level",
            Self::PhaseOutOfRange => "phase_out_of_range",
            Self::DepthExceeded => "depth_exceeded",
            Self::TooManyRules => "too_many_rules",
        }
    }
}

/// Parse or validation failure, 1-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub code: DiagnosticCode,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {} [{}]", self.line, self.column, self.message, self.code.as_str())
    }
}

impl std::error::Error for Diagnostic {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Op(CmpOp),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Num(s) => write!(f, "`{s}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Op(op) => write!(f, "`{}`", op.symbol()),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const KEYWORDS: [&str; 6] = ["IF", "THEN", "ELSE", "AND", "OR", "NOT"];

fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let syntax = |line, col, message: String| Diagnostic {
        line,
        column: col,
        code: DiagnosticCode::Syntax,
        message,
    };
    while i < chars.len() {
        let c = chars[i];
        let (l, k) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if chars.get(i) == Some(&'.') {
                i += 1;
                if !chars.get(i).is_some_and(|d| d.is_ascii_digit()) {
                    return Err(syntax(l, k + i - start, "expected digits after decimal point".into()));
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            Tok::Num(chars[start..i].iter().collect())
        } else {
            let next = chars.get(i + 1).copied();
            let (tok, len) = match (c, next) {
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                ('[', _) => (Tok::LBracket, 1),
                (']', _) => (Tok::RBracket, 1),
                ('>', Some('=')) => (Tok::Op(CmpOp::Ge), 2),
                ('<', Some('=')) => (Tok::Op(CmpOp::Le), 2),
                ('=', Some('=')) => (Tok::Op(CmpOp::Eq), 2),
                ('!', Some('=')) => (Tok::Op(CmpOp::Ne), 2),
                ('>', _) => (Tok::Op(CmpOp::Gt), 1),
                ('<', _) => (Tok::Op(CmpOp::Lt), 1),
                _ => return Err(syntax(l, k, format!("unexpected character `{c}`"))),
            };
            i += len;
            tok
        };
        col += i - start;
        out.push(Token { tok, line: l, col: k });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser<'s> {
    tokens: Vec<Token>,
    pos: usize,
    sig: &'s Signature,
    nesting: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err(t: &Token, code: DiagnosticCode, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            line: t.line,
            column: t.col,
            code,
            message: message.into(),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn expect(&mut self, want: Tok, what: &str) -> PResult<Token> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(Self::err(&t, DiagnosticCode::Syntax, format!("expected {what}, found {}", t.tok)))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> PResult<()> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == kw => Ok(()),
            other => Err(Self::err(&t, DiagnosticCode::Syntax, format!("expected {kw}, found {other}"))),
        }
    }

    fn policy(&mut self) -> PResult<PolicyProgram> {
        let mut rules = Vec::new();
        loop {
            let t = self.peek().clone();
            match &t.tok {
                Tok::Ident(s) if s == "IF" => {
                    if rules.len() == self.sig.limits.max_rules {
                        return Err(Self::err(
                            &t,
                            DiagnosticCode::TooManyRules,
                            format!("more than {} rules", self.sig.limits.max_rules),
                        ));
                    }
                    self.next();
                    let cond = self.bexpr()?;
                    if cond.depth() > self.sig.limits.max_depth {
                        return Err(Self::err(
                            &t,
                            DiagnosticCode::DepthExceeded,
                            format!("condition depth {} exceeds {}", cond.depth(), self.sig.limits.max_depth),
                        ));
                    }
                    self.expect_keyword("THEN")?;
                    let phase = self.pexpr()?;
                    rules.push(Rule { cond, phase });
                }
                Tok::Ident(s) if s == "ELSE" => {
                    self.next();
                    let default = self.pexpr()?;
                    let end = self.next();
                    if end.tok != Tok::Eof {
                        return Err(Self::err(
                            &end,
                            DiagnosticCode::Syntax,
                            format!("expected end of input after default, found {}", end.tok),
                        ));
                    }
                    return Ok(PolicyProgram { rules, default });
                }
                Tok::Eof if !rules.is_empty() => {
                    return Err(Self::err(&t, DiagnosticCode::Syntax, "missing ELSE default"));
                }
                other => {
                    return Err(Self::err(&t, DiagnosticCode::Syntax, format!("expected IF or ELSE, found {other}")));
                }
            }
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.nesting += 1;
        // Parentheses add nesting without adding depth; bound both.
        if self.nesting > 4 * self.sig.limits.max_depth + 16 {
            let t = self.peek().clone();
            return Err(Self::err(&t, DiagnosticCode::DepthExceeded, "expression nested too deeply"));
        }
        Ok(())
    }

    fn bexpr(&mut self) -> PResult<Cond> {
        self.enter()?;
        let mut lhs = self.and_expr()?;
        while self.is_keyword("OR") {
            self.next();
            let rhs = self.and_expr()?;
            lhs = Cond::or(lhs, rhs);
        }
        self.nesting -= 1;
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Cond> {
        let mut lhs = self.unary()?;
        while self.is_keyword("AND") {
            self.next();
            let rhs = self.unary()?;
            lhs = Cond::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Cond> {
        if self.is_keyword("NOT") {
            self.next();
            self.enter()?;
            let inner = self.unary()?;
            self.nesting -= 1;
            return Ok(Cond::not(inner));
        }
        if self.peek().tok == Tok::LParen {
            self.next();
            let inner = self.bexpr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(inner);
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<Cond> {
        let t = self.peek().clone();
        if let Tok::Ident(name) = &t.tok {
            match name.as_str() {
                "congestion" | "urgency" | "imbalance" | "dominant_flow" => {
                    self.require_categorical(&t, name)?;
                    self.next();
                    return self.categorical(name);
                }
                "starvation_risk" => {
                    self.require_categorical(&t, name)?;
                    self.next();
                    self.expect(Tok::LBracket, "`[`")?;
                    let i = self.phase_index()?;
                    self.expect(Tok::RBracket, "`]`")?;
                    return Ok(Cond::StarvationRisk(i));
                }
                _ => {}
            }
        }
        let lhs = self.nexpr()?;
        let op_tok = self.next();
        let Tok::Op(op) = op_tok.tok else {
            return Err(Self::err(
                &op_tok,
                DiagnosticCode::Syntax,
                format!("expected comparison operator, found {}", op_tok.tok),
            ));
        };
        let rhs = self.nexpr()?;
        Ok(Cond::Cmp(lhs, op, rhs))
    }

    fn require_categorical(&self, t: &Token, name: &str) -> PResult<()> {
        if self.sig.categorical {
            Ok(())
        } else {
            Err(Self::err(
                t,
                DiagnosticCode::UnknownFeature,
                format!("categorical feature `{name}` is not available"),
            ))
        }
    }

    fn categorical(&mut self, name: &str) -> PResult<Cond> {
        let op = self.next();
        if op.tok != Tok::Op(CmpOp::Eq) {
            return Err(Self::err(&op, DiagnosticCode::Syntax, format!("expected `==` after {name}, found {}", op.tok)));
        }
        let t = self.peek().clone();
        if name == "dominant_flow" {
            if matches!(t.tok, Tok::Num(_)) {
                return Ok(Cond::Dominant(Some(self.phase_index()?)));
            }
            self.next();
            return match &t.tok {
                Tok::Ident(s) if s == "None" => Ok(Cond::Dominant(None)),
                other => Err(Self::err(
                    &t,
                    DiagnosticCode::UnknownLevel,
                    format!("expected phase index or None for dominant_flow, found {other}"),
                )),
            };
        }
        self.next();
        let level = match &t.tok {
            Tok::Ident(s) => s.as_str(),
            other => {
                return Err(Self::err(&t, DiagnosticCode::Syntax, format!("expected level name, found {other}")));
            }
        };
        let found = match name {
            "congestion" => Congestion::ALL.into_iter().find(|c| c.name() == level).map(Cond::Congestion),
            "urgency" => Urgency::ALL.into_iter().find(|c| c.name() == level).map(Cond::Urgency),
            _ => Imbalance::ALL.into_iter().find(|c| c.name() == level).map(Cond::Imbalance),
        };
        found.ok_or_else(|| {
            let allowed: Vec<&str> = match name {
                "congestion" => Congestion::ALL.iter().map(|c| c.name()).collect(),
                "urgency" => Urgency::ALL.iter().map(|c| c.name()).collect(),
                _ => Imbalance::ALL.iter().map(|c| c.name()).collect(),
            };
            Self::err(
                &t,
                DiagnosticCode::UnknownLevel,
                format!("unknown level `{level}` for {name}; expected one of {}", allowed.join(", ")),
            )
        })
    }

    fn feature(&mut self) -> PResult<NumFeature> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => match NumFeature::from_name(s) {
                Some(f) if self.sig.allows(f) => Ok(f),
                _ => Err(Self::err(&t, DiagnosticCode::UnknownFeature, format!("unknown feature `{s}`"))),
            },
            other => Err(Self::err(&t, DiagnosticCode::Syntax, format!("expected feature name, found {other}"))),
        }
    }

    fn phase_index(&mut self) -> PResult<usize> {
        let t = self.next();
        let Tok::Num(text) = &t.tok else {
            return Err(Self::err(&t, DiagnosticCode::Syntax, format!("expected phase index, found {}", t.tok)));
        };
        if text.contains(['.', '-']) {
            return Err(Self::err(&t, DiagnosticCode::Syntax, format!("phase index must be a non-negative integer, found `{text}`")));
        }
        match text.parse::<usize>() {
            Ok(i) if i < self.sig.phase_count => Ok(i),
            _ => Err(Self::err(
                &t,
                DiagnosticCode::PhaseOutOfRange,
                format!("phase {text} out of range; intersection has {} phases", self.sig.phase_count),
            )),
        }
    }

    fn nexpr(&mut self) -> PResult<NumExpr> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Num(text) => {
                self.next();
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(NumExpr::Lit(v)),
                    _ => Err(Self::err(&t, DiagnosticCode::Syntax, format!("number `{text}` out of range"))),
                }
            }
            Tok::Ident(s) if KEYWORDS.contains(&s.as_str()) => {
                Err(Self::err(&t, DiagnosticCode::Syntax, format!("expected condition, found `{s}`")))
            }
            Tok::Ident(s) => {
                if let Some(agg) = Aggregate::ALL.into_iter().find(|a| a.name() == s) {
                    self.next();
                    self.expect(Tok::LParen, "`(`")?;
                    let f = self.feature()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(NumExpr::Agg(agg, f));
                }
                let f = self.feature()?;
                self.expect(Tok::LBracket, "`[`")?;
                let i = self.phase_index()?;
                self.expect(Tok::RBracket, "`]`")?;
                Ok(NumExpr::Feature(f, i))
            }
            other => Err(Self::err(&t, DiagnosticCode::Syntax, format!("expected number or feature, found {other}"))),
        }
    }

    fn pexpr(&mut self) -> PResult<PhaseExpr> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Num(_) => Ok(PhaseExpr::Fixed(self.phase_index()?)),
            Tok::Ident(s) if s == "argmax" || s == "argmin" => {
                let max = s == "argmax";
                self.next();
                self.expect(Tok::LParen, "`(`")?;
                let f = self.feature()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(if max { PhaseExpr::ArgMax(f) } else { PhaseExpr::ArgMin(f) })
            }
            other => Err(Self::err(
                &t,
                DiagnosticCode::Syntax,
                format!("expected phase index, argmax(..) or argmin(..), found {other}"),
            )),
        }
    }
}

pub fn parse_text(text: &str, signature: &Signature) -> Result<PolicyProgram, Diagnostic> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        sig: signature,
        nesting: 0,
    };
    p.policy()
}

/// Parses and validates a policy against the intersection signature.
pub fn parse(source: &PolicySource, signature: &Signature) -> Result<PolicyProgram, Diagnostic> {
    parse_text(&source.text, signature)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig() -> Signature {
        Signature::new(4)
    }

    fn code(text: &str) -> DiagnosticCode {
        parse_text(text, &sig()).unwrap_err().code
    }

    #[test]
    fn one_rule_and_default() {
        let p = parse_text("IF pressure[2] > 10 AND congestion == Critical THEN 2 ELSE argmax(pressure)", &sig()).unwrap();
        assert_eq!(p.rules.len(), 1);
        assert_eq!(
            p.rules[0].cond,
            Cond::and(
                Cond::Cmp(NumExpr::Feature(NumFeature::Pressure, 2), CmpOp::Gt, NumExpr::Lit(10.0)),
                Cond::Congestion(Congestion::Critical)
            )
        );
        assert_eq!(p.rules[0].phase, PhaseExpr::Fixed(2));
        assert_eq!(p.default, PhaseExpr::ArgMax(NumFeature::Pressure));
    }

    #[test]
    fn empty_source_is_syntax_error_at_origin() {
        let d = parse_text("", &sig()).unwrap_err();
        assert_eq!((d.line, d.column, d.code), (1, 1, DiagnosticCode::Syntax));
        let d = parse_text("   \n# only a comment\n", &sig()).unwrap_err();
        assert_eq!(d.code, DiagnosticCode::Syntax);
    }

    #[test]
    fn phase_out_of_range_is_located() {
        let d = parse_text("IF queue[0] > 1 THEN 7 ELSE 0", &sig()).unwrap_err();
        assert_eq!(d.code, DiagnosticCode::PhaseOutOfRange);
        assert_eq!((d.line, d.column), (1, 22));
        assert_eq!(code("IF pressure[4] > 1 THEN 0 ELSE 0"), DiagnosticCode::PhaseOutOfRange);
        assert_eq!(code("IF starvation_risk[9] THEN 0 ELSE 0"), DiagnosticCode::PhaseOutOfRange);
        assert_eq!(code("IF dominant_flow == 4 THEN 0 ELSE 0"), DiagnosticCode::PhaseOutOfRange);
    }

    #[test]
    fn distinct_codes() {
        assert_eq!(code("IF speed[0] > 1 THEN 0 ELSE 0"), DiagnosticCode::UnknownFeature);
        assert_eq!(code("ELSE argmax(speed)"), DiagnosticCode::UnknownFeature);
        assert_eq!(code("IF congestion == Extreme THEN 0 ELSE 0"), DiagnosticCode::UnknownLevel);
        assert_eq!(code("IF imbalance == NS Dominant THEN 0 ELSE 0"), DiagnosticCode::UnknownLevel);
        assert_eq!(code("IF queue[0] > 1 THEN 0"), DiagnosticCode::Syntax);
        assert_eq!(code("ELSE 0 ELSE 1"), DiagnosticCode::Syntax);
        assert_eq!(code("IF queue[0] = 1 THEN 0 ELSE 0"), DiagnosticCode::Syntax);
        assert_eq!(code("IF queue[1.5] > 1 THEN 0 ELSE 0"), DiagnosticCode::Syntax);
    }

    #[test]
    fn limits() {
        let nested = format!("IF {}queue[0] > 1 THEN 0 ELSE 0", "NOT ".repeat(12));
        assert_eq!(code(&nested), DiagnosticCode::DepthExceeded);
        let ok = format!("IF {}queue[0] > 1 THEN 0 ELSE 0", "NOT ".repeat(11));
        assert!(parse_text(&ok, &sig()).is_ok());
        let parens = format!("IF {}queue[0] > 1{} THEN 0 ELSE 0", "(".repeat(500), ")".repeat(500));
        assert_eq!(code(&parens), DiagnosticCode::DepthExceeded);

        let rules = "IF queue[0] > 1 THEN 0\n".repeat(17) + "ELSE 0";
        let d = parse_text(&rules, &sig()).unwrap_err();
        assert_eq!((d.code, d.line), (DiagnosticCode::TooManyRules, 17));
        let rules = "IF queue[0] > 1 THEN 0\n".repeat(16) + "ELSE 0";
        assert!(parse_text(&rules, &sig()).is_ok());
    }

    #[test]
    fn precedence() {
        let p = parse_text("IF NOT urgency == Critical OR queue[0] > 1 AND queue[1] < 2 THEN 0 ELSE 1", &sig()).unwrap();
        let a = Cond::not(Cond::Urgency(Urgency::Critical));
        let b = Cond::Cmp(NumExpr::Feature(NumFeature::Queue, 0), CmpOp::Gt, NumExpr::Lit(1.0));
        let c = Cond::Cmp(NumExpr::Feature(NumFeature::Queue, 1), CmpOp::Lt, NumExpr::Lit(2.0));
        assert_eq!(p.rules[0].cond, Cond::or(a, Cond::and(b, c)));
    }

    #[test]
    fn comments_and_layout() {
        let text = "# fairness first\nIF starvation_risk[1]   THEN 1 # override\n\nELSE argmin(wait)\n";
        let p = parse_text(text, &sig()).unwrap();
        assert_eq!(p.rules[0].cond, Cond::StarvationRisk(1));
        assert_eq!(p.default, PhaseExpr::ArgMin(NumFeature::Wait));
    }

    #[test]
    fn literals_and_aggregates() {
        let p = parse_text("IF sum(queue) >= -2.5 AND dominant_flow == None AND imbalance == EW_Dominant THEN 3 ELSE 0", &sig()).unwrap();
        let Cond::And(lhs, rhs) = &p.rules[0].cond else { panic!() };
        assert_eq!(**rhs, Cond::Imbalance(Imbalance::EwDominant));
        let Cond::And(x, y) = &**lhs else { panic!() };
        assert_eq!(**x, Cond::Cmp(NumExpr::Agg(Aggregate::Sum, NumFeature::Queue), CmpOp::Ge, NumExpr::Lit(-2.5)));
        assert_eq!(**y, Cond::Dominant(None));
    }

    #[test]
    fn signature_restricts_vocabulary() {
        let s = Signature::new(4).numeric_only();
        let d = parse_text("IF congestion == Low THEN 0 ELSE 0", &s).unwrap_err();
        assert_eq!(d.code, DiagnosticCode::UnknownFeature);
        let mut s = Signature::new(2);
        s.numeric = vec![NumFeature::Pressure];
        assert_eq!(parse_text("ELSE argmax(queue)", &s).unwrap_err().code, DiagnosticCode::UnknownFeature);
        assert!(parse_text("ELSE argmax(pressure)", &s).is_ok());
    }

    #[test]
    fn multiline_position() {
        let d = parse_text("IF queue[0] > 1 THEN 0\nIF wait[0] >> 3 THEN 1\nELSE 0", &sig()).unwrap_err();
        assert_eq!((d.line, d.column, d.code), (2, 13, DiagnosticCode::Syntax));
        assert!(d.to_string().starts_with("2:13: "));
    }
}
