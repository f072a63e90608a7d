//! Model formulas (`y ~ 1 + a + b*c + (1 | g)`) and the design matrices they
//! induce on a dataset.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::RRDataset;
use crate::error::{Error, Result};

/// A fixed-effect term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Main(String),
    Interaction(String, String),
}

impl Term {
    fn same_as(&self, other: &Term) -> bool {
        match (self, other) {
            (Term::Main(a), Term::Main(b)) => a == b,
            (Term::Interaction(a, b), Term::Interaction(c, d)) => {
                (a == c && b == d) || (a == d && b == c)
            }
            _ => false,
        }
    }

    pub fn variables(&self) -> Vec<&str> {
        match self {
            Term::Main(a) => vec![a],
            Term::Interaction(a, b) => vec![a, b],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFormula {
    pub response: String,
    pub intercept: bool,
    pub terms: Vec<Term>,
    /// Grouping factor of the random intercept, if any.
    pub random_intercept: Option<String>,
}

impl ModelFormula {
    /// Every data column the formula refers to, response first.
    pub fn variables(&self) -> Vec<String> {
        let mut out = vec![self.response.clone()];
        let mut push = |v: &str| {
            if !out.iter().any(|o| o == v) {
                out.push(v.to_string());
            }
        };
        for t in &self.terms {
            for v in t.variables() {
                push(v);
            }
        }
        if let Some(g) = &self.random_intercept {
            push(g);
        }
        out
    }

    /// Covariates (variables other than the response).
    pub fn covariates(&self) -> Vec<String> {
        self.variables().into_iter().skip(1).collect()
    }

    /// The same formula without its random term.
    pub fn fixed_part(&self) -> ModelFormula {
        ModelFormula {
            random_intercept: None,
            ..self.clone()
        }
    }
}

fn render_ident(name: &str) -> String {
    let plain = name.chars().enumerate().all(|(i, ch)| {
        ch.is_ascii_alphabetic() || ch == '_' || ch == '.' || (i > 0 && ch.is_ascii_digit())
    });
    if plain && !name.is_empty() {
        name.to_string()
    } else {
        format!("`{name}`")
    }
}

impl fmt::Display for ModelFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = vec![if self.intercept {
            "1".to_string()
        } else {
            "-1".to_string()
        }];
        for t in &self.terms {
            parts.push(match t {
                Term::Main(a) => render_ident(a),
                Term::Interaction(a, b) => format!("{}:{}", render_ident(a), render_ident(b)),
            });
        }
        if let Some(g) = &self.random_intercept {
            parts.push(format!("(1 | {})", render_ident(g)));
        }
        write!(
            f,
            "{} ~ {}",
            render_ident(&self.response),
            parts.join(" + ")
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Sym(char),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        if ch.is_ascii_whitespace() {
            i += 1;
        } else if "~+-*:()|".contains(ch) {
            out.push((i, Tok::Sym(ch)));
            i += 1;
        } else if ch == '`' {
            let start = i;
            let end = text[i + 1..].find('`').ok_or(Error::FormulaSyntax {
                offset: start,
                message: "unterminated backtick".into(),
            })?;
            out.push((start, Tok::Ident(text[i + 1..i + 1 + end].to_string())));
            i += end + 2;
        } else if ch.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                i += 1;
            }
            out.push((start, Tok::Number(text[start..i].to_string())));
        } else if ch.is_ascii_alphabetic() || ch == '_' || ch == '.' {
            let start = i;
            while i < bytes.len() {
                let c = bytes[i] as char;
                if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else {
            return Err(Error::FormulaSyntax {
                offset: i,
                message: format!(
                    "unexpected character `{}`",
                    text[i..].chars().next().unwrap_or(ch)
                ),
            });
        }
    }
    Ok(out)
}

enum Parsed {
    Intercept(bool),
    Fixed(Vec<Term>),
    Random(String),
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::FormulaSyntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect_sym(&mut self, sym: char) -> Result<()> {
        match self.peek() {
            Some(Tok::Sym(c)) if *c == sym => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(format!("expected `{sym}`")),
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected a variable name"),
        }
    }

    fn term(&mut self) -> Result<Parsed> {
        match self.peek().cloned() {
            Some(Tok::Number(n)) => {
                self.pos += 1;
                match n.as_str() {
                    "1" => Ok(Parsed::Intercept(true)),
                    "0" => Ok(Parsed::Intercept(false)),
                    _ => {
                        self.pos -= 1;
                        self.err(format!("numeric term `{n}` is not allowed"))
                    }
                }
            }
            Some(Tok::Ident(a)) => {
                self.pos += 1;
                match self.peek() {
                    Some(Tok::Sym(':')) => {
                        self.pos += 1;
                        let b = self.ident()?;
                        Ok(Parsed::Fixed(vec![Term::Interaction(a, b)]))
                    }
                    Some(Tok::Sym('*')) => {
                        self.pos += 1;
                        let b = self.ident()?;
                        Ok(Parsed::Fixed(vec![
                            Term::Main(a.clone()),
                            Term::Main(b.clone()),
                            Term::Interaction(a, b),
                        ]))
                    }
                    _ => Ok(Parsed::Fixed(vec![Term::Main(a)])),
                }
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                match self.next() {
                    Some(Tok::Number(n)) if n == "1" => {}
                    _ => {
                        self.pos -= 1;
                        return self
                            .err("random-effect terms support only an intercept, `(1 | group)`");
                    }
                }
                self.expect_sym('|')?;
                let g = self.ident()?;
                self.expect_sym(')')?;
                Ok(Parsed::Random(g))
            }
            _ => self.err("expected a term"),
        }
    }
}

/// Parses a model formula.
pub fn parse_formula(text: &str) -> Result<ModelFormula> {
    if text.trim().is_empty() {
        return Err(Error::FormulaSyntax {
            offset: 0,
            message: "empty formula".into(),
        });
    }
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
        end: text.len(),
    };
    let response = p.ident()?;
    p.expect_sym('~')?;

    let mut intercept = true;
    let mut terms: Vec<Term> = Vec::new();
    let mut removed: Vec<Term> = Vec::new();
    let mut random: Option<String> = None;
    let mut first = true;
    loop {
        let mut sign = 1;
        match p.peek() {
            Some(Tok::Sym('+')) if !first => p.pos += 1,
            Some(Tok::Sym('-')) => {
                p.pos += 1;
                sign = -1;
            }
            None if !first => break,
            _ if first => {}
            _ => return p.err("expected `+` or `-`"),
        }
        first = false;
        let at = p.offset();
        match p.term()? {
            Parsed::Intercept(on) => {
                intercept = if sign > 0 {
                    on
                } else if on {
                    false
                } else {
                    return Err(Error::FormulaSyntax {
                        offset: at,
                        message: "`- 0` is not supported".into(),
                    });
                };
            }
            Parsed::Fixed(ts) => {
                for t in ts {
                    if sign > 0 {
                        if !terms.iter().any(|o| o.same_as(&t)) {
                            terms.push(t);
                        }
                    } else {
                        removed.push(t);
                    }
                }
            }
            Parsed::Random(g) => {
                if sign < 0 {
                    return Err(Error::FormulaSyntax {
                        offset: at,
                        message: "cannot remove a random term".into(),
                    });
                }
                if random.is_some() {
                    return Err(Error::Formula(
                        "at most one random-effect term is supported".into(),
                    ));
                }
                random = Some(g);
            }
        }
    }
    terms.retain(|t| !removed.iter().any(|r| r.same_as(t)));
    Ok(ModelFormula {
        response,
        intercept,
        terms,
        random_intercept: random,
    })
}

/// How one variable is turned into design columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VariableCoding {
    Numeric,
    /// Treatment coding against `levels[0]`, or one indicator per level when
    /// `full` is set.
    Factor {
        levels: Vec<String>,
        full: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedTerm {
    pub variables: Vec<(String, VariableCoding)>,
}

/// Everything needed to rebuild the fixed-effects matrix on new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEncoding {
    pub intercept: bool,
    pub terms: Vec<EncodedTerm>,
    pub column_names: Vec<String>,
}

/// Consecutive group indices for the random-intercept factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupIndex {
    pub name: String,
    pub labels: Vec<String>,
    pub index: Vec<usize>,
}

impl GroupIndex {
    pub fn from_labels(name: &str, raw: &[String]) -> GroupIndex {
        let mut lookup: HashMap<&str, usize> = HashMap::new();
        let mut labels = Vec::new();
        let index = raw
            .iter()
            .map(|v| {
                *lookup.entry(v.as_str()).or_insert_with(|| {
                    labels.push(v.clone());
                    labels.len() - 1
                })
            })
            .collect();
        GroupIndex {
            name: name.to_string(),
            labels,
            index,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    /// Row indices of each group, in row order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups()];
        for (i, &g) in self.index.iter().enumerate() {
            out[g].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub groups: Option<GroupIndex>,
    pub encoding: DesignEncoding,
}

/// Explicit factor level orders; the first level is the reference.
pub type LevelOrder = HashMap<String, Vec<String>>;

fn factor_levels(name: &str, raw: &[String], order: Option<&Vec<String>>) -> Result<Vec<String>> {
    let mut seen: Vec<String> = Vec::new();
    for v in raw {
        if !seen.contains(v) {
            seen.push(v.clone());
        }
    }
    match order {
        None => Ok(seen),
        Some(order) => {
            if let Some(bad) = seen.iter().find(|v| !order.contains(v)) {
                return Err(Error::Data(format!(
                    "value `{bad}` of `{name}` is not among the declared levels"
                )));
            }
            Ok(order.clone())
        }
    }
}

/// Parses `name=a,b,c` level declarations.
pub fn parse_level_spec(spec: &str) -> Result<(String, Vec<String>)> {
    let (name, levels) = spec.split_once('=').ok_or_else(|| {
        Error::Data(format!(
            "level declaration `{spec}` must look like name=a,b,c"
        ))
    })?;
    let levels: Vec<String> = levels.split(',').map(|s| s.trim().to_string()).collect();
    if name.trim().is_empty() || levels.iter().any(String::is_empty) {
        return Err(Error::Data(format!("malformed level declaration `{spec}`")));
    }
    Ok((name.trim().to_string(), levels))
}

impl DesignEncoding {
    fn infer(formula: &ModelFormula, data: &RRDataset, levels: &LevelOrder) -> Result<Self> {
        let mut full_used = formula.intercept;
        let mut terms = Vec::new();
        let mut column_names = Vec::new();
        if formula.intercept {
            column_names.push("(Intercept)".to_string());
        }
        for term in &formula.terms {
            let mut vars = Vec::new();
            for name in term.variables() {
                let col = data.column(name)?;
                let coding = if col.numeric.is_some() && !levels.contains_key(name) {
                    VariableCoding::Numeric
                } else {
                    let lv = factor_levels(name, &col.raw, levels.get(name))?;
                    if lv.len() < 2 {
                        return Err(Error::Data(format!(
                            "factor `{name}` has a single level and cannot enter the model"
                        )));
                    }
                    let full = !full_used && matches!(term, Term::Main(_));
                    if full {
                        full_used = true;
                    }
                    VariableCoding::Factor { levels: lv, full }
                };
                vars.push((name.to_string(), coding));
            }
            let term = EncodedTerm { variables: vars };
            column_names.extend(term.column_names());
            terms.push(term);
        }
        if column_names.is_empty() {
            return Err(Error::Formula(
                "the model has no fixed-effect columns".into(),
            ));
        }
        Ok(DesignEncoding {
            intercept: formula.intercept,
            terms,
            column_names,
        })
    }

    /// Builds the fixed-effects matrix for `data` under this encoding.
    pub fn encode(&self, data: &RRDataset) -> Result<DMatrix<f64>> {
        let n = data.n_rows();
        let p = self.column_names.len();
        let mut x = DMatrix::<f64>::zeros(n, p);
        let mut j = 0;
        if self.intercept {
            x.column_mut(0).fill(1.0);
            j = 1;
        }
        for term in &self.terms {
            let blocks: Vec<Vec<Vec<f64>>> = term
                .variables
                .iter()
                .map(|(name, coding)| variable_columns(data, name, coding))
                .collect::<Result<_>>()?;
            for col in product_columns(&blocks) {
                x.column_mut(j).copy_from_slice(&col);
                j += 1;
            }
        }
        debug_assert_eq!(j, p);
        Ok(x)
    }
}

impl EncodedTerm {
    fn column_names(&self) -> Vec<String> {
        let per_var: Vec<Vec<String>> = self
            .variables
            .iter()
            .map(|(name, coding)| match coding {
                VariableCoding::Numeric => vec![name.clone()],
                VariableCoding::Factor { levels, full } => levels
                    .iter()
                    .skip(if *full { 0 } else { 1 })
                    .map(|l| format!("{name}{l}"))
                    .collect(),
            })
            .collect();
        let mut out = vec![String::new()];
        for names in per_var.iter() {
            let mut next = Vec::new();
            // earlier variables vary fastest
            for n in names {
                for prefix in &out {
                    next.push(if prefix.is_empty() {
                        n.clone()
                    } else {
                        format!("{prefix}:{n}")
                    });
                }
            }
            out = next;
        }
        out
    }
}

fn variable_columns(
    data: &RRDataset,
    name: &str,
    coding: &VariableCoding,
) -> Result<Vec<Vec<f64>>> {
    let col = data.column(name)?;
    match coding {
        VariableCoding::Numeric => {
            let v = col.numeric.as_ref().ok_or_else(|| {
                Error::Data(format!(
                    "column `{name}` was numeric when the model was built"
                ))
            })?;
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Cell {
                    row: i + 1,
                    column: name.to_string(),
                    message: "missing or non-finite covariate".into(),
                });
            }
            Ok(vec![v.clone()])
        }
        VariableCoding::Factor { levels, full } => {
            let lookup: HashMap<&str, usize> = levels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect();
            let skip = usize::from(!*full);
            let mut cols = vec![vec![0.0; col.len()]; levels.len() - skip];
            for (i, v) in col.raw.iter().enumerate() {
                let k = *lookup.get(v.as_str()).ok_or_else(|| Error::Cell {
                    row: i + 1,
                    column: name.to_string(),
                    message: format!("unknown factor level `{v}`"),
                })?;
                if k >= skip {
                    cols[k - skip][i] = 1.0;
                }
            }
            Ok(cols)
        }
    }
}

fn product_columns(blocks: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![];
    for (b, block) in blocks.iter().enumerate() {
        if b == 0 {
            out = block.clone();
            continue;
        }
        let mut next = Vec::with_capacity(out.len() * block.len());
        for col in block {
            for prev in &out {
                next.push(prev.iter().zip(col).map(|(a, c)| a * c).collect());
            }
        }
        out = next;
    }
    out
}

/// Names of columns that are (numerically) linear combinations of earlier
/// columns.
pub fn aliased_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for j in 0..x.ncols() {
        let original = x.column(j).into_owned();
        let norm = original.norm();
        let mut v = original.clone();
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let rest = v.norm();
        if norm == 0.0 || rest <= 1e-9 * norm {
            aliased.push(names[j].clone());
        } else {
            basis.push(v / rest);
        }
    }
    aliased
}

/// Builds the fixed-effects matrix and the random-intercept group index.
pub fn build_design_matrices(
    formula: &ModelFormula,
    data: &RRDataset,
    levels: &LevelOrder,
) -> Result<DesignMatrices> {
    data.column(&formula.response)?;
    let encoding = DesignEncoding::infer(formula, data, levels)?;
    let x = encoding.encode(data)?;
    let aliased = aliased_columns(&x, &encoding.column_names);
    if !aliased.is_empty() {
        return Err(Error::RankDeficient(aliased));
    }
    let groups = match &formula.random_intercept {
        Some(g) => Some(GroupIndex::from_labels(g, &data.column(g)?.raw)),
        None => None,
    };
    Ok(DesignMatrices {
        column_names: encoding.column_names.clone(),
        x,
        groups,
        encoding,
    })
}
