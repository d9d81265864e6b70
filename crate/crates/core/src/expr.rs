//! Factorable expression trees: parsing, interval bounds and evaluation.
use std::fmt;

use thiserror::Error;

use crate::milp::{Cmp, ObjSense};
use crate::Scalar;

/// Slack used when testing that a sampled value lies in a propagated enclosure.
pub const CONTAINMENT_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Interval { lo, hi }
    }

    pub fn point(v: T) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    pub fn add(&self, other: &Self) -> Self {
        Interval::new(self.lo + other.lo, self.hi + other.hi)
    }

    pub fn scale(&self, c: T) -> Self {
        if c >= T::zero() {
            Interval::new(self.lo * c, self.hi * c)
        } else {
            Interval::new(self.hi * c, self.lo * c)
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let products = [
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ];
        let lo = products.iter().copied().fold(products[0], |a, b| a.min_of(b));
        let hi = products.iter().copied().fold(products[0], |a, b| a.max_of(b));
        Interval::new(lo, hi)
    }

    pub fn powi(&self, exponent: u32) -> Self {
        let p = |v: T| num_traits::pow(v, exponent as usize);
        if exponent % 2 == 1 || self.lo >= T::zero() {
            Interval::new(p(self.lo), p(self.hi))
        } else if self.hi <= T::zero() {
            Interval::new(p(self.hi), p(self.lo))
        } else {
            Interval::new(T::zero(), p(self.lo).max_of(p(self.hi)))
        }
    }

    pub fn contains(&self, v: T, slack: T) -> bool {
        v >= self.lo - slack && v <= self.hi + slack
    }

    pub fn is_within(&self, outer: &Self) -> bool {
        self.lo >= outer.lo && self.hi <= outer.hi
    }
}

impl fmt::Display for Interval<f64> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BoxError {
    #[error("box has {lower} lower and {upper} upper entries")]
    Length { lower: usize, upper: usize },
    #[error("variable {index}: bounds [{lo}, {hi}] are not finite and ordered")]
    Invalid { index: usize, lo: f64, hi: f64 },
}

/// Axis-aligned box `x^L <= x <= x^U` with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct VariableBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl VariableBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, BoxError> {
        if lower.len() != upper.len() {
            return Err(BoxError::Length {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        for (index, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(BoxError::Invalid { index, lo, hi });
            }
        }
        Ok(VariableBox { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn interval(&self, index: usize) -> Interval<f64> {
        Interval::new(self.lower[index], self.upper[index])
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.len()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Variable(usize),
    Constant(f64),
    Sum {
        children: Vec<ExprNode>,
        coeffs: Vec<f64>,
    },
    Product(Box<ExprNode>, Box<ExprNode>),
    Power(Box<ExprNode>, u32),
}

/// A node of a factorable expression tree with its cached enclosure.
#[derive(Clone, Debug)]
pub struct ExprNode {
    pub kind: NodeKind,
    bounds: Option<Interval<f64>>,
}

impl PartialEq for ExprNode {
    /// Structural equality; cached bounds are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("point has {got} coordinates, tree needs {needed}")]
    DimensionMismatch { needed: usize, got: usize },
}

impl ExprNode {
    pub fn new(kind: NodeKind) -> Self {
        ExprNode { kind, bounds: None }
    }

    pub fn var(index: usize) -> Self {
        Self::new(NodeKind::Variable(index))
    }

    pub fn constant(value: f64) -> Self {
        Self::new(NodeKind::Constant(value))
    }

    pub fn product(left: ExprNode, right: ExprNode) -> Self {
        Self::new(NodeKind::Product(Box::new(left), Box::new(right)))
    }

    /// `child^exponent`; exponent 1 returns the child itself.
    pub fn power(child: ExprNode, exponent: u32) -> Self {
        assert!(exponent >= 1, "power exponent must be at least 1");
        if exponent == 1 {
            child
        } else {
            Self::new(NodeKind::Power(Box::new(child), exponent))
        }
    }

    pub fn sum(children: Vec<ExprNode>, coeffs: Vec<f64>) -> Self {
        assert_eq!(children.len(), coeffs.len());
        Self::new(NodeKind::Sum { children, coeffs })
    }

    /// Left-deep product of the factors; `None` for an empty list.
    pub fn left_deep_product(factors: impl IntoIterator<Item = ExprNode>) -> Option<Self> {
        factors.into_iter().reduce(ExprNode::product)
    }

    /// Enclosure from the last [`ExprNode::propagate_bounds`] call.
    pub fn bounds(&self) -> Option<Interval<f64>> {
        self.bounds
    }

    /// Annotates every node with an enclosure of its range over `domain`.
    pub fn propagate_bounds(&mut self, domain: &VariableBox) -> Interval<f64> {
        let b = match &mut self.kind {
            NodeKind::Variable(i) => domain.interval(*i),
            NodeKind::Constant(c) => Interval::point(*c),
            NodeKind::Sum { children, coeffs } => children
                .iter_mut()
                .zip(coeffs.iter())
                .map(|(c, &w)| c.propagate_bounds(domain).scale(w))
                .fold(Interval::point(0.0), |acc, b| acc.add(&b)),
            NodeKind::Product(l, r) => {
                let lb = l.propagate_bounds(domain);
                lb.mul(&r.propagate_bounds(domain))
            }
            NodeKind::Power(c, p) => c.propagate_bounds(domain).powi(*p),
        };
        self.bounds = Some(b);
        b
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, EvalError> {
        let needed = self.max_variable().map_or(0, |m| m + 1);
        if point.len() < needed {
            return Err(EvalError::DimensionMismatch {
                needed,
                got: point.len(),
            });
        }
        Ok(self.eval_unchecked(point))
    }

    fn eval_unchecked(&self, point: &[f64]) -> f64 {
        match &self.kind {
            NodeKind::Variable(i) => point[*i],
            NodeKind::Constant(c) => *c,
            NodeKind::Sum { children, coeffs } => children
                .iter()
                .zip(coeffs)
                .map(|(c, w)| w * c.eval_unchecked(point))
                .sum(),
            NodeKind::Product(l, r) => l.eval_unchecked(point) * r.eval_unchecked(point),
            NodeKind::Power(c, p) => c.eval_unchecked(point).powi(*p as i32),
        }
    }

    pub fn max_variable(&self) -> Option<usize> {
        match &self.kind {
            NodeKind::Variable(i) => Some(*i),
            NodeKind::Constant(_) => None,
            NodeKind::Sum { children, .. } => children.iter().filter_map(|c| c.max_variable()).max(),
            NodeKind::Product(l, r) => l.max_variable().max(r.max_variable()),
            NodeKind::Power(c, _) => c.max_variable(),
        }
    }

    /// Node values in pre-order, used by sampling tests.
    pub fn for_each_node<'a>(&'a self, visit: &mut impl FnMut(&'a ExprNode)) {
        visit(self);
        match &self.kind {
            NodeKind::Sum { children, .. } => children.iter().for_each(|c| c.for_each_node(visit)),
            NodeKind::Product(l, r) => {
                l.for_each_node(visit);
                r.for_each_node(visit);
            }
            NodeKind::Power(c, _) => c.for_each_node(visit),
            _ => {}
        }
    }

    /// Text in the model format; parses back to the same tree.
    pub fn to_text(&self, names: &[String]) -> String {
        let mut out = String::new();
        self.write_text(names, &mut out);
        out
    }

    fn write_text(&self, names: &[String], out: &mut String) {
        match &self.kind {
            NodeKind::Variable(i) => out.push_str(&names[*i]),
            NodeKind::Constant(c) => push_number(out, *c),
            NodeKind::Sum { children, coeffs } => {
                for (k, (child, &w)) in children.iter().zip(coeffs).enumerate() {
                    let (negative, magnitude) = match child.kind {
                        NodeKind::Constant(c) => (w * c < 0.0, (w * c).abs()),
                        _ => (w < 0.0, w.abs()),
                    };
                    if k == 0 {
                        if negative {
                            out.push('-');
                        }
                    } else {
                        out.push_str(if negative { " - " } else { " + " });
                    }
                    match child.kind {
                        NodeKind::Constant(_) => push_number(out, magnitude),
                        _ => {
                            if magnitude != 1.0 {
                                push_number(out, magnitude);
                                out.push_str(" * ");
                            }
                            child.write_factor(names, out, false);
                        }
                    }
                }
            }
            NodeKind::Product(l, r) => {
                l.write_factor(names, out, false);
                out.push_str(" * ");
                r.write_factor(names, out, true);
            }
            NodeKind::Power(c, p) => {
                match c.kind {
                    NodeKind::Variable(_) => c.write_text(names, out),
                    _ => {
                        out.push('(');
                        c.write_text(names, out);
                        out.push(')');
                    }
                }
                out.push('^');
                out.push_str(&p.to_string());
            }
        }
    }

    fn write_factor(&self, names: &[String], out: &mut String, right_operand: bool) {
        let wrap = match self.kind {
            NodeKind::Sum { .. } => true,
            NodeKind::Product(..) => right_operand,
            NodeKind::Constant(c) => c < 0.0,
            _ => false,
        };
        if wrap {
            out.push('(');
        }
        self.write_text(names, out);
        if wrap {
            out.push(')');
        }
    }
}

fn push_number(out: &mut String, v: f64) {
    out.push_str(&format!("{v}"));
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownVariable(String),
    BadExponent(String),
    DuplicateVariable(String),
    BadBounds(String),
}

#[derive(Clone, Debug, Error, PartialEq)]
#[error("line {line}, column {col}: {}", describe(.kind))]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

fn describe(kind: &ParseErrorKind) -> String {
    match kind {
        ParseErrorKind::Syntax(m) => m.clone(),
        ParseErrorKind::UnknownVariable(v) => format!("unknown variable `{v}`"),
        ParseErrorKind::BadExponent(e) => format!("exponent `{e}` is not an integer >= 1"),
        ParseErrorKind::DuplicateVariable(v) => format!("variable `{v}` declared twice"),
        ParseErrorKind::BadBounds(v) => format!("bounds of `{v}` are not finite and ordered"),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64, String),
    Sym(&'static str),
    Newline,
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (li, raw) in text.lines().enumerate() {
        let line = li + 1;
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                out.push(Token { tok: Tok::Ident(word), line, col });
                continue;
            }
            if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit: String = chars[start..i].iter().collect();
                let value = lit.parse::<f64>().map_err(|_| ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::Syntax(format!("malformed number `{lit}`")),
                })?;
                out.push(Token { tok: Tok::Number(value, lit), line, col });
                continue;
            }
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let sym = match two.as_str() {
                "<=" => Some("<="),
                ">=" => Some(">="),
                "==" => Some("="),
                _ => None,
            };
            if let Some(s) = sym {
                out.push(Token { tok: Tok::Sym(s), line, col });
                i += 2;
                continue;
            }
            let sym = match c {
                '+' => "+",
                '-' => "-",
                '*' => "*",
                '^' => "^",
                '(' => "(",
                ')' => ")",
                '[' => "[",
                ']' => "]",
                ',' => ",",
                ';' => ";",
                ':' => ":",
                '=' => "=",
                _ => {
                    return Err(ParseError {
                        line,
                        col,
                        kind: ParseErrorKind::Syntax(format!("unexpected character `{c}`")),
                    })
                }
            };
            out.push(Token { tok: Tok::Sym(sym), line, col });
            i += 1;
        }
        out.push(Token { tok: Tok::Newline, line, col: chars.len() + 1 });
    }
    let line = out.last().map_or(1, |t| t.line);
    out.push(Token { tok: Tok::End, line, col: 1 });
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    names: &'a [String],
}

/// A term of a sum before normalization: coefficient and optional node.
type RawTerm = (f64, Option<ExprNode>);

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, kind: ParseErrorKind) -> ParseError {
        let t = self.peek();
        ParseError { line: t.line, col: t.col, kind }
    }

    fn syntax(&self, msg: &str) -> ParseError {
        let found = match &self.peek().tok {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(_, s) => format!("`{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Newline => "end of line".to_string(),
            Tok::End => "end of input".to_string(),
        };
        self.error_here(ParseErrorKind::Syntax(format!("{msg}, found {found}")))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.is_sym(s) {
            self.bump();
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{s}`")))
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek().tok, Tok::Newline) {
            self.bump();
        }
    }

    fn expr(&mut self) -> Result<ExprNode, ParseError> {
        let mut terms: Vec<RawTerm> = Vec::new();
        let mut sign = 1.0;
        if self.is_sym("+") || self.is_sym("-") {
            if self.is_sym("-") {
                sign = -1.0;
            }
            self.bump();
        }
        loop {
            let (c, node) = self.term()?;
            terms.push((sign * c, node));
            if self.is_sym("+") {
                sign = 1.0;
            } else if self.is_sym("-") {
                sign = -1.0;
            } else {
                break;
            }
            self.bump();
        }
        Ok(normalize_sum(terms))
    }

    fn term(&mut self) -> Result<RawTerm, ParseError> {
        let mut coef = 1.0;
        let mut factors = Vec::new();
        loop {
            let f = self.factor()?;
            match f.kind {
                NodeKind::Constant(c) => coef *= c,
                _ => factors.push(f),
            }
            if self.is_sym("*") {
                self.bump();
            } else {
                break;
            }
        }
        Ok((coef, ExprNode::left_deep_product(factors)))
    }

    fn factor(&mut self) -> Result<ExprNode, ParseError> {
        if self.is_sym("-") {
            self.bump();
            let inner = self.factor()?;
            return Ok(match inner.kind {
                NodeKind::Constant(c) => ExprNode::constant(-c),
                _ => scaled_term(-1.0, inner),
            });
        }
        let base = self.primary()?;
        if !self.is_sym("^") {
            return Ok(base);
        }
        self.bump();
        let t = self.peek().clone();
        let exponent = match &t.tok {
            Tok::Number(v, lit) => {
                if v.fract() != 0.0 || *v < 1.0 || *v > u32::MAX as f64 {
                    return Err(self.error_here(ParseErrorKind::BadExponent(lit.clone())));
                }
                *v as u32
            }
            Tok::Sym("-") => {
                return Err(self.error_here(ParseErrorKind::BadExponent("negative".into())))
            }
            _ => return Err(self.syntax("expected an integer exponent")),
        };
        self.bump();
        Ok(match base.kind {
            NodeKind::Constant(c) => ExprNode::constant(c.powi(exponent as i32)),
            _ => ExprNode::power(base, exponent),
        })
    }

    fn primary(&mut self) -> Result<ExprNode, ParseError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Number(v, _) => {
                self.bump();
                Ok(ExprNode::constant(*v))
            }
            Tok::Ident(name) => match self.names.iter().position(|n| n == name) {
                Some(i) => {
                    self.bump();
                    Ok(ExprNode::var(i))
                }
                None => Err(self.error_here(ParseErrorKind::UnknownVariable(name.clone()))),
            },
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            _ => Err(self.syntax("expected a number, variable or `(`")),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let mut sign = 1.0;
        if self.is_sym("-") {
            sign = -1.0;
            self.bump();
        } else if self.is_sym("+") {
            self.bump();
        }
        match self.peek().tok {
            Tok::Number(v, _) => {
                self.bump();
                Ok(sign * v)
            }
            _ => Err(self.syntax("expected a number")),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.syntax("expected a name")),
        }
    }

    fn end_of_statement(&mut self) -> Result<(), ParseError> {
        if self.is_sym(";") {
            self.bump();
        }
        match self.peek().tok {
            Tok::Newline | Tok::End => Ok(()),
            _ => Err(self.syntax("expected end of line")),
        }
    }
}

/// Flattens nested sums and collapses trivial single-term sums.
fn normalize_sum(terms: Vec<RawTerm>) -> ExprNode {
    if terms.len() == 1 {
        match terms.into_iter().next().unwrap() {
            (c, None) => return ExprNode::constant(c),
            (c, Some(n)) if c == 1.0 => return n,
            (c, Some(n)) => return scaled_term(c, n),
        }
    }
    let mut children = Vec::new();
    let mut coeffs = Vec::new();
    for (c, node) in terms {
        match node {
            None => {
                children.push(ExprNode::constant(c));
                coeffs.push(1.0);
            }
            Some(n) => match n.kind {
                NodeKind::Sum { children: ch, coeffs: co } => {
                    for (child, w) in ch.into_iter().zip(co) {
                        match child.kind {
                            NodeKind::Constant(v) => {
                                children.push(ExprNode::constant(c * w * v));
                                coeffs.push(1.0);
                            }
                            _ => {
                                children.push(child);
                                coeffs.push(c * w);
                            }
                        }
                    }
                }
                _ => {
                    children.push(n);
                    coeffs.push(c);
                }
            },
        }
    }
    ExprNode::sum(children, coeffs)
}

fn scaled_term(c: f64, n: ExprNode) -> ExprNode {
    match n.kind {
        NodeKind::Sum { children, coeffs } => normalize_sum(
            children
                .into_iter()
                .zip(coeffs)
                .map(|(child, w)| match child.kind {
                    NodeKind::Constant(v) => (c * w * v, None),
                    _ => (c * w, Some(child)),
                })
                .collect(),
        ),
        NodeKind::Constant(v) => ExprNode::constant(c * v),
        kind => ExprNode::sum(vec![ExprNode::new(kind)], vec![c]),
    }
}

/// Parses one expression over the named variables.
pub fn parse_expression(text: &str, names: &[String]) -> Result<ExprNode, ParseError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
        names,
    };
    p.skip_newlines();
    let e = p.expr()?;
    p.skip_newlines();
    match p.peek().tok {
        Tok::End => Ok(e),
        _ => Err(p.syntax("unexpected trailing input")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConstraint {
    pub name: Option<String>,
    pub expr: ExprNode,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// A polynomial model read from the text format.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyModel {
    pub names: Vec<String>,
    pub domain: VariableBox,
    pub sense: ObjSense,
    pub objective: ExprNode,
    pub constraints: Vec<ModelConstraint>,
}

impl PolyModel {
    pub fn to_text(&self) -> String {
        let decls: Vec<String> = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{n} in [{}, {}]", self.domain.lower()[i], self.domain.upper()[i]))
            .collect();
        let mut out = format!("vars {};\n", decls.join("; "));
        let sense = match self.sense {
            ObjSense::Minimize => "min",
            ObjSense::Maximize => "max",
        };
        out.push_str(&format!("{sense} {}\n", self.objective.to_text(&self.names)));
        for c in &self.constraints {
            if let Some(n) = &c.name {
                out.push_str(&format!("{n}: "));
            }
            let op = match c.cmp {
                Cmp::Le => "<=",
                Cmp::Ge => ">=",
                Cmp::Eq => "=",
            };
            out.push_str(&format!("{} {op} {}\n", c.expr.to_text(&self.names), c.rhs));
        }
        out
    }
}

/// Parses `vars x1 in [l,u]; ...`, then an objective line `min|max expr`, then
/// constraint lines `[name:] expr (<=|>=|=) number`.
pub fn parse_model(text: &str) -> Result<PolyModel, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        names: &[],
    };
    p.skip_newlines();
    match &p.peek().tok {
        Tok::Ident(w) if w == "vars" => {}
        _ => return Err(p.syntax("expected `vars` declaration")),
    }
    p.bump();
    let mut names: Vec<String> = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    loop {
        let at = p.peek().clone();
        let name = p.ident()?;
        if names.contains(&name) {
            return Err(ParseError {
                line: at.line,
                col: at.col,
                kind: ParseErrorKind::DuplicateVariable(name),
            });
        }
        match &p.peek().tok {
            Tok::Ident(w) if w == "in" => {
                p.bump();
            }
            _ => return Err(p.syntax("expected `in`")),
        }
        p.expect_sym("[")?;
        let lo = p.number()?;
        p.expect_sym(",")?;
        let hi = p.number()?;
        p.expect_sym("]")?;
        if !(lo <= hi) {
            return Err(ParseError {
                line: at.line,
                col: at.col,
                kind: ParseErrorKind::BadBounds(name),
            });
        }
        names.push(name);
        lower.push(lo);
        upper.push(hi);
        if p.is_sym(";") {
            p.bump();
        }
        if matches!(p.peek().tok, Tok::Newline | Tok::End) {
            break;
        }
    }
    let domain = VariableBox::new(lower, upper).map_err(|_| ParseError {
        line: 1,
        col: 1,
        kind: ParseErrorKind::BadBounds("vars".into()),
    })?;
    p.names = &names;
    p.skip_newlines();
    let sense = match &p.peek().tok {
        Tok::Ident(w) if w == "min" => ObjSense::Minimize,
        Tok::Ident(w) if w == "max" => ObjSense::Maximize,
        _ => return Err(p.syntax("expected `min` or `max`")),
    };
    p.bump();
    let objective = p.expr()?;
    p.end_of_statement()?;
    let mut constraints = Vec::new();
    loop {
        p.skip_newlines();
        if matches!(p.peek().tok, Tok::End) {
            break;
        }
        let name = match (&p.toks[p.pos].tok, &p.toks[p.pos + 1].tok) {
            (Tok::Ident(n), Tok::Sym(":")) => {
                let n = n.clone();
                p.bump();
                p.bump();
                Some(n)
            }
            _ => None,
        };
        let expr = p.expr()?;
        let cmp = if p.is_sym("<=") {
            Cmp::Le
        } else if p.is_sym(">=") {
            Cmp::Ge
        } else if p.is_sym("=") {
            Cmp::Eq
        } else {
            return Err(p.syntax("expected `<=`, `>=` or `=`"));
        };
        p.bump();
        let rhs = p.number()?;
        p.end_of_statement()?;
        constraints.push(ModelConstraint { name, expr, cmp, rhs });
    }
    Ok(PolyModel {
        names,
        domain,
        sense,
        objective,
        constraints,
    })
}
