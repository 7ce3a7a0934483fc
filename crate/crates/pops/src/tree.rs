//! Generative trees: an s-expression language whose internal nodes are
//! trained operators and whose leaves are images, texts, or stored
//! embeddings.
//!
//! A program is a sequence of forms; every form but the last must be
//! `(let NAME expr)` and the last form is the root expression. Operator
//! nodes accept `:seed N` and `:scale X` keyword arguments, and children
//! may be wrapped in `(slot N expr)` to target an explicit condition
//! slot (positional placement otherwise). Sampler seeds for unseeded
//! nodes are derived from the parent seed and child ordinal, so a tree
//! is reproducible from a single root seed while subtrees stay
//! statistically independent.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::clients::{EncoderClient, ImageData};
use crate::datagen::derive_seed;
use crate::embedding::{self, Embedding};
use crate::ops::{OperatorName, OperatorSpec};
use crate::prior::PriorNet;
use crate::schedule::{sample, GuidanceConfig, NoiseSchedule, SampleConfig};
use crate::trainer::load_net;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// `(image "path.png")`: encode an image file.
    Image(String),
    /// `(text "prompt")`: encode a text prompt.
    Text(String),
    /// `(emb "file.pops#3")`: load a stored embedding.
    Emb(String),
    /// Reference to a `let` binding.
    Var(String),
    Apply(ApplyNode),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyNode {
    pub operator: OperatorName,
    /// Children with an optional explicit slot index.
    pub children: Vec<(Option<usize>, Expr)>,
    pub seed: Option<u64>,
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeProgram {
    pub bindings: Vec<(String, Expr)>,
    pub root: Expr,
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Str(String),
    Atom(String),
    Keyword(String),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { chars: src.chars().peekable(), line: 1, col: 1 }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line, col: self.col, msg: msg.into() }
    }

    fn tokens(mut self) -> Result<Vec<Spanned>> {
        let mut out = Vec::new();
        while let Some(&c) = self.chars.peek() {
            let (line, col) = (self.line, self.col);
            match c {
                ' ' | '\t' | '\r' | '\n' => {
                    self.bump();
                }
                ';' => {
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                '(' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Open, line, col });
                }
                ')' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Close, line, col });
                }
                '"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            None => return Err(self.err("unterminated string")),
                            Some('"') => break,
                            Some('\\') => match self.bump() {
                                Some('"') => s.push('"'),
                                Some('\\') => s.push('\\'),
                                Some('n') => s.push('\n'),
                                other => {
                                    return Err(self.err(format!(
                                        "bad escape {:?}",
                                        other.map(String::from).unwrap_or_default()
                                    )))
                                }
                            },
                            Some(c) => s.push(c),
                        }
                    }
                    out.push(Spanned { tok: Tok::Str(s), line, col });
                }
                ':' => {
                    self.bump();
                    let word = self.word();
                    if word.is_empty() {
                        return Err(self.err("empty keyword"));
                    }
                    out.push(Spanned { tok: Tok::Keyword(word), line, col });
                }
                _ => {
                    let word = self.word();
                    if word.is_empty() {
                        return Err(self.err(format!("unexpected character {c:?}")));
                    }
                    out.push(Spanned { tok: Tok::Atom(word), line, col });
                }
            }
        }
        Ok(out)
    }

    fn word(&mut self) -> String {
        let mut s = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_whitespace() || c == '(' || c == ')' || c == '"' || c == ';' {
                break;
            }
            s.push(c);
            self.bump();
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err_at(&self, msg: impl Into<String>) -> Error {
        let (line, col) = self
            .toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1));
        Error::Parse { line, col, msg: msg.into() }
    }

    fn expect_close(&mut self) -> Result<()> {
        match self.next() {
            Some(Spanned { tok: Tok::Close, .. }) => Ok(()),
            _ => Err(self.err_at("expected ')'")),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Spanned { tok: Tok::Atom(name), .. }) => Ok(Expr::Var(name)),
            Some(Spanned { tok: Tok::Open, .. }) => self.parse_form(),
            Some(s) => Err(Error::Parse {
                line: s.line,
                col: s.col,
                msg: format!("unexpected token {:?}", s.tok),
            }),
            None => Err(self.err_at("unexpected end of input")),
        }
    }

    /// Parses a parenthesised form; the '(' is already consumed.
    /// Errors point at the offending token.
    fn parse_form(&mut self) -> Result<Expr> {
        let (head, hline, hcol) = match self.next() {
            Some(Spanned { tok: Tok::Atom(a), line, col }) => (a, line, col),
            Some(s) => {
                return Err(Error::Parse {
                    line: s.line,
                    col: s.col,
                    msg: "expected operator or leaf name".into(),
                })
            }
            None => return Err(self.err_at("unexpected end of input")),
        };
        let head_err = |msg: String| Error::Parse { line: hline, col: hcol, msg };
        match head.as_str() {
            "image" | "text" | "emb" => {
                let arg = match self.next() {
                    Some(Spanned { tok: Tok::Str(s), .. }) => s,
                    Some(s) => {
                        return Err(Error::Parse {
                            line: s.line,
                            col: s.col,
                            msg: format!("({head} ...) takes one string"),
                        })
                    }
                    None => return Err(self.err_at("unexpected end of input")),
                };
                self.expect_close()?;
                Ok(match head.as_str() {
                    "image" => Expr::Image(arg),
                    "text" => Expr::Text(arg),
                    _ => Expr::Emb(arg),
                })
            }
            "slot" => Err(head_err("(slot ...) is only valid as an operator child".into())),
            "let" => Err(head_err("(let ...) is only valid at the top level".into())),
            _ => {
                let operator = OperatorName::parse(&head)
                    .map_err(|_| head_err(format!("unknown operator {head:?}")))?;
                let mut node =
                    ApplyNode { operator, children: Vec::new(), seed: None, scale: None };
                loop {
                    match self.peek() {
                        None => return Err(self.err_at("unexpected end of input")),
                        Some(Spanned { tok: Tok::Close, .. }) => {
                            self.pos += 1;
                            break;
                        }
                        Some(Spanned { tok: Tok::Keyword(k), line, col }) => {
                            let (k, kline, kcol) = (k.clone(), *line, *col);
                            if k != "seed" && k != "scale" {
                                return Err(Error::Parse {
                                    line: kline,
                                    col: kcol,
                                    msg: format!("unknown keyword :{k}"),
                                });
                            }
                            self.pos += 1;
                            let (value, vline, vcol) = match self.next() {
                                Some(Spanned { tok: Tok::Atom(a), line, col }) => (a, line, col),
                                Some(s) => {
                                    return Err(Error::Parse {
                                        line: s.line,
                                        col: s.col,
                                        msg: format!(":{k} needs a value"),
                                    })
                                }
                                None => return Err(self.err_at(format!(":{k} needs a value"))),
                            };
                            let value_err = |msg: String| Error::Parse { line: vline, col: vcol, msg };
                            if k == "seed" {
                                node.seed = Some(
                                    value
                                        .parse()
                                        .map_err(|_| value_err(format!("bad :seed value {value:?}")))?,
                                );
                            } else {
                                node.scale = Some(
                                    value
                                        .parse()
                                        .map_err(|_| value_err(format!("bad :scale value {value:?}")))?,
                                );
                            }
                        }
                        _ => node.children.push(self.parse_child()?),
                    }
                }
                Ok(Expr::Apply(node))
            }
        }
    }

    fn parse_child(&mut self) -> Result<(Option<usize>, Expr)> {
        // A child is either a plain expression or `(slot N expr)`.
        if let (
            Some(Spanned { tok: Tok::Open, .. }),
            Some(Spanned { tok: Tok::Atom(a), .. }),
        ) = (self.toks.get(self.pos), self.toks.get(self.pos + 1))
        {
            if a == "slot" {
                self.pos += 2;
                let idx: usize = match self.next() {
                    Some(Spanned { tok: Tok::Atom(n), line, col }) => n.parse().map_err(|_| {
                        Error::Parse { line, col, msg: format!("bad slot index {n:?}") }
                    })?,
                    Some(s) => {
                        return Err(Error::Parse {
                            line: s.line,
                            col: s.col,
                            msg: "(slot ...) needs an index".into(),
                        })
                    }
                    None => return Err(self.err_at("(slot ...) needs an index")),
                };
                let expr = self.parse_expr()?;
                self.expect_close()?;
                return Ok((Some(idx), expr));
            }
        }
        Ok((None, self.parse_expr()?))
    }

    fn parse_program(&mut self) -> Result<TreeProgram> {
        let mut bindings: Vec<(String, Expr)> = Vec::new();
        let mut root: Option<Expr> = None;
        while self.peek().is_some() {
            if root.is_some() {
                return Err(self.err_at("forms after the root expression"));
            }
            // Lookahead for `(let ...)`.
            let is_let = matches!(
                (self.toks.get(self.pos), self.toks.get(self.pos + 1)),
                (
                    Some(Spanned { tok: Tok::Open, .. }),
                    Some(Spanned { tok: Tok::Atom(a), .. })
                ) if a == "let"
            );
            if is_let {
                self.pos += 2;
                let name = match self.next() {
                    Some(Spanned { tok: Tok::Atom(n), .. }) => n,
                    Some(s) => {
                        return Err(Error::Parse {
                            line: s.line,
                            col: s.col,
                            msg: "(let ...) needs a name".into(),
                        })
                    }
                    None => return Err(self.err_at("(let ...) needs a name")),
                };
                let expr = self.parse_expr()?;
                self.expect_close()?;
                bindings.push((name, expr));
            } else {
                root = Some(self.parse_expr()?);
            }
        }
        let root = root.ok_or_else(|| self.err_at("program has no root expression"))?;
        let program = TreeProgram { bindings, root };
        program.check_bindings()?;
        Ok(program)
    }
}

/// Parses a program; errors carry line and column.
pub fn parse(src: &str) -> Result<TreeProgram> {
    let toks = Lexer::new(src).tokens()?;
    if toks.is_empty() {
        return Err(Error::Parse { line: 1, col: 1, msg: "empty program".into() });
    }
    Parser { toks, pos: 0 }.parse_program()
}

impl TreeProgram {
    /// Every variable must refer to an earlier binding.
    fn check_bindings(&self) -> Result<()> {
        fn walk(expr: &Expr, known: &[String]) -> Result<()> {
            match expr {
                Expr::Var(name) if !known.iter().any(|k| k == name) => {
                    Err(Error::UndefinedBinding(name.clone()))
                }
                Expr::Apply(node) => {
                    for (_, child) in &node.children {
                        walk(child, known)?;
                    }
                    Ok(())
                }
                _ => Ok(()),
            }
        }
        let mut known: Vec<String> = Vec::new();
        for (name, expr) in &self.bindings {
            walk(expr, &known)?;
            known.push(name.clone());
        }
        walk(&self.root, &known)
    }

    /// Canonical text form; `parse(serialize(p)) == p`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (name, expr) in &self.bindings {
            let _ = writeln!(out, "(let {name} {})", expr_to_string(expr));
        }
        let _ = writeln!(out, "{}", expr_to_string(&self.root));
        out
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

fn expr_to_string(expr: &Expr) -> String {
    match expr {
        Expr::Image(p) => format!("(image {})", quote(p)),
        Expr::Text(s) => format!("(text {})", quote(s)),
        Expr::Emb(r) => format!("(emb {})", quote(r)),
        Expr::Var(n) => n.clone(),
        Expr::Apply(node) => {
            let mut out = format!("({}", node.operator.as_str());
            for (slot, child) in &node.children {
                match slot {
                    Some(i) => {
                        let _ = write!(out, " (slot {i} {})", expr_to_string(child));
                    }
                    None => {
                        let _ = write!(out, " {}", expr_to_string(child));
                    }
                }
            }
            if let Some(seed) = node.seed {
                let _ = write!(out, " :seed {seed}");
            }
            if let Some(scale) = node.scale {
                let _ = write!(out, " :scale {scale}");
            }
            out.push(')');
            out
        }
    }
}

impl std::fmt::Display for TreeProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.serialize())
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Trained operator checkpoints addressable by name.
#[derive(Default)]
pub struct OperatorRegistry {
    entries: HashMap<OperatorName, (PriorNet, OperatorSpec, NoiseSchedule)>,
}

impl OperatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, net: PriorNet, spec: OperatorSpec, schedule: NoiseSchedule) {
        self.entries.insert(spec.name, (net, spec, schedule));
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<OperatorName> {
        let (net, spec, schedule) = load_net(path)?;
        let name = spec.name;
        self.insert(net, spec, schedule);
        Ok(name)
    }

    pub fn get(&self, name: OperatorName) -> Result<&(PriorNet, OperatorSpec, NoiseSchedule)> {
        self.entries
            .get(&name)
            .ok_or_else(|| Error::UnknownOperator(format!("no checkpoint loaded for {name}")))
    }
}

pub struct EvalContext<'a> {
    pub registry: &'a OperatorRegistry,
    pub encoder: &'a dyn EncoderClient,
    /// Root of the derived-seed chain for unseeded operator nodes.
    pub base_seed: u64,
    pub steps: usize,
    pub default_scale: f64,
    /// Rescale sampled embeddings to this norm when set.
    pub renorm_to: Option<f64>,
    /// Base directory for `(image ...)` and `(emb ...)` paths.
    pub base_dir: std::path::PathBuf,
}

impl<'a> EvalContext<'a> {
    pub fn new(registry: &'a OperatorRegistry, encoder: &'a dyn EncoderClient) -> Self {
        EvalContext {
            registry,
            encoder,
            base_seed: 0,
            steps: SampleConfig::default().steps,
            default_scale: GuidanceConfig::default().scale,
            renorm_to: None,
            base_dir: std::path::PathBuf::from("."),
        }
    }
}

/// Evaluates a program bottom-up; each binding is computed once and
/// reused wherever referenced.
pub fn evaluate(program: &TreeProgram, ctx: &EvalContext) -> Result<Embedding> {
    let mut env: HashMap<&str, Embedding> = HashMap::new();
    for (i, (name, expr)) in program.bindings.iter().enumerate() {
        let seed = derive_seed(ctx.base_seed, i as u64 + 1);
        let value = eval_expr(expr, ctx, &env, seed)?;
        env.insert(name, value);
    }
    eval_expr(&program.root, ctx, &env, ctx.base_seed)
}

fn eval_expr(
    expr: &Expr,
    ctx: &EvalContext,
    env: &HashMap<&str, Embedding>,
    seed: u64,
) -> Result<Embedding> {
    match expr {
        Expr::Image(path) => {
            let img = ImageData::load_png(&ctx.base_dir.join(path))?;
            ctx.encoder.encode_image(&img)
        }
        Expr::Text(s) => ctx.encoder.encode_text(s),
        Expr::Emb(reference) => {
            let (file, idx) = reference
                .rsplit_once('#')
                .map(|(f, i)| (f, i.parse::<usize>()))
                .unwrap_or((reference.as_str(), Ok(0)));
            let idx = idx.map_err(|_| Error::BadRef(reference.clone()))?;
            let batch = embedding::read_embeddings(&ctx.base_dir.join(file))?;
            batch
                .items()
                .get(idx)
                .cloned()
                .ok_or_else(|| Error::BadRef(reference.clone()))
        }
        Expr::Var(name) => env
            .get(name.as_str())
            .cloned()
            .ok_or_else(|| Error::UndefinedBinding(name.clone())),
        Expr::Apply(node) => {
            let (net, spec, schedule) = ctx.registry.get(node.operator)?;
            let node_seed = node.seed.unwrap_or(seed);
            let entries = spec.slot_map.entries();
            let mut conditions = Vec::with_capacity(node.children.len());
            for (i, (slot, child)) in node.children.iter().enumerate() {
                let child_seed = derive_seed(node_seed, i as u64);
                let value = eval_expr(child, ctx, env, child_seed)?;
                let slot = match slot {
                    Some(s) => {
                        if !spec.slot_map.contains_slot(*s) {
                            return Err(Error::SlotOutOfRange(*s));
                        }
                        *s
                    }
                    None => {
                        entries
                            .get(i)
                            .ok_or_else(|| Error::ArityMismatch {
                                operator: node.operator.to_string(),
                                expected: spec.arity(),
                                got: node.children.len(),
                            })?
                            .slot
                    }
                };
                conditions.push((slot, value));
            }
            if node.children.len() != spec.arity() && !spec.allows_null_conditions {
                return Err(Error::ArityMismatch {
                    operator: node.operator.to_string(),
                    expected: spec.arity(),
                    got: node.children.len(),
                });
            }
            let config = SampleConfig {
                steps: ctx.steps,
                guidance: GuidanceConfig {
                    scale: node.scale.unwrap_or(ctx.default_scale),
                    ..GuidanceConfig::default()
                },
                seed: node_seed,
                renorm_to: ctx.renorm_to,
            };
            sample(net, schedule, &conditions, &config)
        }
    }
}
