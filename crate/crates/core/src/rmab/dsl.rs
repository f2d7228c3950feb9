//! Reward-expression language over the engagement state and binary features.
//!
//! ```text
//! expr    = or_expr ;
//! or_expr = and_expr , { "or" , and_expr } ;
//! and_expr= sum , { "and" , sum } ;
//! sum     = product , { ( "+" | "-" ) , product } ;
//! product = unary , { "*" , unary } ;
//! unary   = "-" , unary | atom ;
//! atom    = number | "s" | "state" | feature | "(" , expr , ")" ;
//! ```
//!
//! Feature names may contain digits and `-` (`12_30-3pm`), so the lexer
//! tries the longest schema name first at every token start.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::features::{FeatureId, FeatureSet, FEATURE_COUNT, SCHEMA};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    UnexpectedChar(char),
    UnexpectedToken { found: String, expected: &'static str },
    UnexpectedEnd { expected: &'static str },
    UnknownFeature(String),
    ForbiddenToken(String),
    InvalidNumber(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Byte offset into the source text.
    pub offset: usize,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::Empty => write!(f, "empty expression"),
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character {c:?} at byte {}", self.offset),
            ParseErrorKind::UnexpectedToken { found, expected } => {
                write!(f, "expected {expected}, found {found:?} at byte {}", self.offset)
            }
            ParseErrorKind::UnexpectedEnd { expected } => {
                write!(f, "expected {expected}, found end of input at byte {}", self.offset)
            }
            ParseErrorKind::UnknownFeature(name) => write!(f, "unknown feature {name:?} at byte {}", self.offset),
            ParseErrorKind::ForbiddenToken(tok) => {
                write!(f, "{tok:?} is not allowed (use `and` / `or`, no `return`) at byte {}", self.offset)
            }
            ParseErrorKind::InvalidNumber(text) => write!(f, "invalid number {text:?} at byte {}", self.offset),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    And,
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Add | BinaryOp::Sub => 3,
            BinaryOp::Mul => 4,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "or",
            BinaryOp::And => "and",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
        }
    }
}

const NEG_PRECEDENCE: u8 = 5;
const ATOM_PRECEDENCE: u8 = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum RewardExpr {
    State,
    Feature(FeatureId),
    Literal(f64),
    Neg(Box<RewardExpr>),
    Binary {
        op: BinaryOp,
        lhs: Box<RewardExpr>,
        rhs: Box<RewardExpr>,
    },
}

fn truthy(x: f64) -> bool {
    x != 0.0
}

impl RewardExpr {
    pub fn eval(&self, s: u8, feats: FeatureSet) -> f64 {
        match self {
            RewardExpr::State => s as f64,
            RewardExpr::Feature(id) => feats.get(*id) as f64,
            RewardExpr::Literal(v) => *v,
            RewardExpr::Neg(e) => -e.eval(s, feats),
            RewardExpr::Binary { op, lhs, rhs } => {
                let (l, r) = (lhs.eval(s, feats), rhs.eval(s, feats));
                match op {
                    BinaryOp::Or => (truthy(l) || truthy(r)) as u8 as f64,
                    BinaryOp::And => (truthy(l) && truthy(r)) as u8 as f64,
                    BinaryOp::Add => l + r,
                    BinaryOp::Sub => l - r,
                    BinaryOp::Mul => l * r,
                }
            }
        }
    }

    /// Evaluates against a raw 0/1 vector laid out like the schema.
    pub fn eval_vector(&self, s: u8, feats: &[u8]) -> crate::Result<f64> {
        if s > 1 {
            return Err(crate::Error::invalid(format!("state must be 0 or 1, got {s}")));
        }
        if feats.len() != FEATURE_COUNT {
            return Err(crate::Error::invalid(format!(
                "feature vector has {} entries, schema has {FEATURE_COUNT}",
                feats.len()
            )));
        }
        let mut set = FeatureSet::empty();
        for (i, &v) in feats.iter().enumerate() {
            match v {
                0 => {}
                1 => set.insert(FeatureId::from_index(i).expect("index in schema")),
                _ => return Err(crate::Error::invalid(format!("feature {} is {v}, not binary", SCHEMA[i].name))),
            }
        }
        Ok(self.eval(s, set))
    }

    pub fn features_used(&self) -> FeatureSet {
        let mut set = FeatureSet::empty();
        self.visit(&mut |e| {
            if let RewardExpr::Feature(id) = e {
                set.insert(*id);
            }
        });
        set
    }

    fn visit(&self, f: &mut impl FnMut(&RewardExpr)) {
        f(self);
        match self {
            RewardExpr::Neg(e) => e.visit(f),
            RewardExpr::Binary { lhs, rhs, .. } => {
                lhs.visit(f);
                rhs.visit(f);
            }
            _ => {}
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            RewardExpr::Binary { op, .. } => op.precedence(),
            RewardExpr::Neg(_) => NEG_PRECEDENCE,
            RewardExpr::Literal(v) if v.is_sign_negative() => NEG_PRECEDENCE,
            _ => ATOM_PRECEDENCE,
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
        if parens {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Prints with the minimal parentheses that reparse to the same tree.
impl fmt::Display for RewardExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardExpr::State => f.write_str("s"),
            RewardExpr::Feature(id) => f.write_str(id.name()),
            RewardExpr::Literal(v) => write!(f, "{v}"),
            RewardExpr::Neg(e) => {
                f.write_str("-")?;
                e.write_child(f, e.precedence() < NEG_PRECEDENCE)
            }
            RewardExpr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                lhs.write_child(f, lhs.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                rhs.write_child(f, rhs.precedence() <= p)
            }
        }
    }
}

impl std::str::FromStr for RewardExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, ParseError> {
        parse_reward(s)
    }
}

impl Serialize for RewardExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RewardExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_reward(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    State,
    Feature(FeatureId),
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    And,
    Or,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Number(v) => v.to_string(),
            Tok::State => "s".into(),
            Tok::Feature(id) => id.name().into(),
            Tok::Plus => "+".into(),
            Tok::Minus => "-".into(),
            Tok::Star => "*".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::And => "and".into(),
            Tok::Or => "or".into(),
        }
    }
}

fn is_ident_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let err = |kind, offset| ParseError { kind, offset };
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        // longest schema name that ends on a token boundary
        let feature = SCHEMA
            .iter()
            .enumerate()
            .filter(|(_, d)| {
                let end = i + d.name.len();
                bytes[i..].starts_with(d.name.as_bytes()) && bytes.get(end).is_none_or(|&b| !is_ident_char(b))
            })
            .max_by_key(|(_, d)| d.name.len());
        if let Some((idx, d)) = feature {
            out.push((Tok::Feature(FeatureId::from_index(idx).expect("schema index")), i));
            i += d.name.len();
            continue;
        }
        let simple = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push((tok, i));
            i += 1;
            continue;
        }
        match c {
            b'&' | b'|' | b'^' | b'~' => {
                return Err(err(ParseErrorKind::ForbiddenToken((c as char).to_string()), i));
            }
            b'<' | b'>' if bytes.get(i + 1) == Some(&c) => {
                return Err(err(ParseErrorKind::ForbiddenToken(text[i..i + 2].to_string()), i));
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                if i < bytes.len() && is_ident_char(bytes[i]) {
                    let mut end = i;
                    while end < bytes.len() && (is_ident_char(bytes[end]) || bytes[end] == b'-') {
                        end += 1;
                    }
                    return Err(err(ParseErrorKind::UnknownFeature(text[start..end].to_string()), start));
                }
                let lit = &text[start..i];
                match lit.parse::<f64>() {
                    Ok(v) if v.is_finite() => out.push((Tok::Number(v), start)),
                    _ => return Err(err(ParseErrorKind::InvalidNumber(lit.to_string()), start)),
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && is_ident_char(bytes[i]) {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word {
                    "s" | "state" => Tok::State,
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "return" => return Err(err(ParseErrorKind::ForbiddenToken(word.into()), start)),
                    _ => return Err(err(ParseErrorKind::UnknownFeature(word.into()), start)),
                };
                out.push((tok, start));
            }
            _ => {
                let ch = text[i..].chars().next().expect("non-empty remainder");
                return Err(err(ParseErrorKind::UnexpectedChar(ch), i));
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        let kind = match self.peek() {
            Some(t) => ParseErrorKind::UnexpectedToken {
                found: t.describe(),
                expected,
            },
            None => ParseErrorKind::UnexpectedEnd { expected },
        };
        ParseError {
            kind,
            offset: self.offset(),
        }
    }

    fn binary_level(
        &mut self,
        ops: &[(Tok, BinaryOp)],
        next: fn(&mut Self) -> Result<RewardExpr, ParseError>,
    ) -> Result<RewardExpr, ParseError> {
        let mut lhs = next(self)?;
        while let Some(&(_, op)) = ops.iter().find(|(t, _)| Some(t) == self.peek()) {
            self.pos += 1;
            let rhs = next(self)?;
            lhs = RewardExpr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn or_expr(&mut self) -> Result<RewardExpr, ParseError> {
        self.binary_level(&[(Tok::Or, BinaryOp::Or)], Self::and_expr)
    }

    fn and_expr(&mut self) -> Result<RewardExpr, ParseError> {
        self.binary_level(&[(Tok::And, BinaryOp::And)], Self::sum)
    }

    fn sum(&mut self) -> Result<RewardExpr, ParseError> {
        self.binary_level(&[(Tok::Plus, BinaryOp::Add), (Tok::Minus, BinaryOp::Sub)], Self::product)
    }

    fn product(&mut self) -> Result<RewardExpr, ParseError> {
        self.binary_level(&[(Tok::Star, BinaryOp::Mul)], Self::unary)
    }

    fn unary(&mut self) -> Result<RewardExpr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(RewardExpr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<RewardExpr, ParseError> {
        const EXPECTED: &str = "a number, `s`, a feature or `(`";
        let expr = match self.peek() {
            Some(Tok::Number(v)) => RewardExpr::Literal(*v),
            Some(Tok::State) => RewardExpr::State,
            Some(Tok::Feature(id)) => RewardExpr::Feature(*id),
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.or_expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.unexpected("`)`"));
                }
                self.pos += 1;
                return Ok(inner);
            }
            _ => return Err(self.unexpected(EXPECTED)),
        };
        self.pos += 1;
        Ok(expr)
    }
}

pub fn parse_reward(text: &str) -> Result<RewardExpr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError {
            kind: ParseErrorKind::Empty,
            offset: 0,
        });
    }
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.or_expr()?;
    if parser.peek().is_some() {
        return Err(parser.unexpected("an operator or end of input"));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const TASK1_DPO: &str = "s + 3 * (youngest_age or second_youngest_age or oldest_age) + \
        2 * (lowest_education or second_lowest_education or third_lowest_education) + \
        (lowest_income or second_lowest_income or third_lowest_income)";
    pub(crate) const TASK1_PRO: &str = "s + 3 * (youngest_age or second_youngest_age or oldest_age) + \
        2 * (lowest_education or second_lowest_education or third_lowest_education)";
    pub(crate) const TASK2_DPO: &str = "s + 3 * (10_30-12_30pm and NGO_registered) + 2 * (12_30-3pm and NGO_registered)";
    pub(crate) const TASK2_PRO: &str = "s + 3 * (12_30-3pm and NGO_registered)";

    fn feats(names: &[&str]) -> FeatureSet {
        FeatureSet::from_names(names.iter().copied()).unwrap()
    }

    #[test]
    fn state_symbol() {
        let e = parse_reward("s").unwrap();
        assert_eq!(e, RewardExpr::State);
        assert_eq!(e.eval(1, FeatureSet::empty()), 1.0);
        assert_eq!(e.eval(0, feats(&["oldest_age"])), 0.0);
    }

    #[test]
    fn reference_expressions_evaluate() {
        let e = parse_reward(TASK2_PRO).unwrap();
        assert_eq!(e.eval(1, feats(&["12_30-3pm", "NGO_registered"])), 4.0);
        assert_eq!(e.eval(1, feats(&["12_30-3pm"])), 1.0);
        let e = parse_reward(TASK1_PRO).unwrap();
        assert_eq!(e.eval(1, feats(&["youngest_age", "lowest_education"])), 6.0);
        let e = parse_reward(TASK1_DPO).unwrap();
        assert_eq!(e.eval(0, feats(&["oldest_age", "lowest_income", "second_lowest_income"])), 4.0);
    }

    #[test]
    fn slot_names_lex_as_features() {
        let e = parse_reward("10_30-12_30pm-3_30-5_30pm").unwrap();
        let RewardExpr::Binary { op: BinaryOp::Sub, lhs, rhs } = e else { panic!() };
        assert_eq!(*lhs, RewardExpr::Feature(FeatureId::by_name("10_30-12_30pm").unwrap()));
        assert_eq!(*rhs, RewardExpr::Feature(FeatureId::by_name("3_30-5_30pm").unwrap()));
        // a bare number is still a number
        assert_eq!(parse_reward("12 - 3").unwrap().eval(0, FeatureSet::empty()), 9.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let v = |t: &str| parse_reward(t).unwrap().eval(1, FeatureSet::empty());
        assert_eq!(v("1 + 2 * 3"), 7.0);
        assert_eq!(v("10 - 4 - 3"), 3.0);
        assert_eq!(v("-2 * 3"), -6.0);
        assert_eq!(v("0 or 2 and 0"), 0.0);
        assert_eq!(v("1 or 0 and 0"), 1.0);
        assert_eq!(v("2 + 1 and 3"), 1.0);
        assert_eq!(v("2.5 * s"), 2.5);
        assert_eq!(v("1e1"), 10.0);
    }

    #[test]
    fn positioned_errors() {
        let e = parse_reward("s + * 2").unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(matches!(e.kind, ParseErrorKind::UnexpectedToken { .. }));

        let e = parse_reward("s + young").unwrap_err();
        assert_eq!(e, ParseError { kind: ParseErrorKind::UnknownFeature("young".into()), offset: 4 });
        assert!(matches!(parse_reward("return s").unwrap_err().kind, ParseErrorKind::ForbiddenToken(_)));
        assert_eq!(parse_reward("s & oldest_age").unwrap_err().offset, 2);
        assert_eq!(parse_reward("s << 1").unwrap_err().offset, 2);
        assert_eq!(parse_reward("(s + 1").unwrap_err().offset, 6);
        assert_eq!(parse_reward("  ").unwrap_err().kind, ParseErrorKind::Empty);
    }

    #[test]
    fn reference_expressions_round_trip() {
        for text in [TASK1_DPO, TASK1_PRO, TASK2_DPO, TASK2_PRO, "-(s - 1) * -2", "1 - (2 - 3)", "s or (1 or 0)"] {
            let e = parse_reward(text).unwrap();
            let printed = e.to_string();
            assert_eq!(parse_reward(&printed).unwrap(), e, "{printed}");
        }
        assert_eq!(parse_reward(TASK2_PRO).unwrap().to_string(), TASK2_PRO);
    }

    fn arb_expr() -> impl Strategy<Value = RewardExpr> {
        let leaf = prop_oneof![
            Just(RewardExpr::State),
            (0usize..FEATURE_COUNT).prop_map(|i| RewardExpr::Feature(FeatureId::from_index(i).unwrap())),
            (0u32..100).prop_map(|v| RewardExpr::Literal(v as f64 / 4.0)),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| RewardExpr::Neg(Box::new(e))),
                (inner.clone(), inner, 0usize..5).prop_map(|(l, r, op)| RewardExpr::Binary {
                    op: [BinaryOp::Or, BinaryOp::And, BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul][op],
                    lhs: Box::new(l),
                    rhs: Box::new(r),
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            prop_assert_eq!(parse_reward(&printed).unwrap(), e);
        }

        #[test]
        fn unreferenced_features_are_irrelevant(e in arb_expr(), bits in any::<u64>(), flip in 0usize..FEATURE_COUNT, s in 0u8..2) {
            let id = FeatureId::from_index(flip).unwrap();
            prop_assume!(!e.features_used().contains(id));
            let mut set = FeatureSet::empty();
            for f in FeatureId::all() {
                if bits >> f.index() & 1 == 1 { set.insert(f); }
            }
            let a = e.eval(s, set);
            let b = e.eval(s, set.toggled(id));
            prop_assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }
}
