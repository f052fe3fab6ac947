//! Canonical s-expression text form.
//!
//! Every serialisable object (expressions, programs, derivations, universes)
//! has exactly one printed form; printing then parsing is the identity. The
//! reader accepts arbitrary whitespace between tokens.

use std::fmt;

use thiserror::Error;

use crate::ast::{AtomicStep, Command, Instr, InstrKind, OrderAnno, Target};
use crate::expr::{Expr, Predicate, QuantRange};
use crate::universe::{StateUniverse, UniverseError, Var};
use crate::value::{Domain, ElemKind, LockVal, NodeRef, SeqVal, Status, ThreadId, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sexp {
    Sym(String),
    List(Vec<Sexp>),
}

impl Sexp {
    pub fn sym(s: impl Into<String>) -> Sexp {
        Sexp::Sym(s.into())
    }

    pub fn list(items: Vec<Sexp>) -> Sexp {
        Sexp::List(items)
    }

    fn as_sym(&self) -> Option<&str> {
        match self {
            Sexp::Sym(s) => Some(s),
            _ => None,
        }
    }

    fn as_list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(items) => Some(items),
            _ => None,
        }
    }
}

fn sy(s: impl Into<String>) -> Sexp {
    Sexp::Sym(s.into())
}

impl fmt::Display for Sexp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexp::Sym(s) => write!(f, "{s}"),
            Sexp::List(items) => {
                write!(f, "(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{item}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("unexpected token '{0}'")]
    UnexpectedToken(String),
    #[error("trailing input after expression")]
    TrailingInput,
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("universe error: {0}")]
    Universe(#[from] UniverseError),
}

fn malformed(what: &'static str, s: &Sexp) -> ParseError {
    ParseError::Malformed { what, detail: s.to_string() }
}

/// Parse one s-expression from text.
pub fn parse(input: &str) -> Result<Sexp, ParseError> {
    let mut toks = tokenize(input);
    let sexp = parse_tokens(&mut toks)?;
    if toks.next().is_some() {
        return Err(ParseError::TrailingInput);
    }
    Ok(sexp)
}

/// Parse a sequence of s-expressions (e.g. a file of derivations).
pub fn parse_many(input: &str) -> Result<Vec<Sexp>, ParseError> {
    let mut toks = tokenize(input).peekable();
    let mut out = Vec::new();
    while toks.peek().is_some() {
        out.push(parse_tokens(&mut toks)?);
    }
    Ok(out)
}

fn tokenize(input: &str) -> impl Iterator<Item = String> + '_ {
    let mut chars = input.chars().peekable();
    std::iter::from_fn(move || {
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() {
                chars.next();
            } else if c == ';' {
                for c in chars.by_ref() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
        let c = *chars.peek()?;
        if c == '(' || c == ')' {
            chars.next();
            return Some(c.to_string());
        }
        let mut sym = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                break;
            }
            sym.push(c);
            chars.next();
        }
        Some(sym)
    })
}

fn parse_tokens(toks: &mut impl Iterator<Item = String>) -> Result<Sexp, ParseError> {
    match toks.next() {
        None => Err(ParseError::UnexpectedEof),
        Some(t) if t == "(" => {
            let mut items = Vec::new();
            loop {
                match parse_tokens_or_close(toks)? {
                    Some(item) => items.push(item),
                    None => return Ok(Sexp::List(items)),
                }
            }
        }
        Some(t) if t == ")" => Err(ParseError::UnexpectedToken(")".into())),
        Some(t) => Ok(Sexp::Sym(t)),
    }
}

fn parse_tokens_or_close(
    toks: &mut impl Iterator<Item = String>,
) -> Result<Option<Sexp>, ParseError> {
    match toks.next() {
        None => Err(ParseError::UnexpectedEof),
        Some(t) if t == ")" => Ok(None),
        Some(t) if t == "(" => {
            let mut items = Vec::new();
            loop {
                match parse_tokens_or_close(toks)? {
                    Some(item) => items.push(item),
                    None => return Ok(Some(Sexp::List(items))),
                }
            }
        }
        Some(t) => Ok(Some(Sexp::Sym(t))),
    }
}

// --- values -----------------------------------------------------------------

pub fn value_to_sexp(v: &Value) -> Sexp {
    match v {
        Value::Bool(b) => Sexp::list(vec![Sexp::sym("bool"), Sexp::sym(b.to_string())]),
        Value::Int(n) => Sexp::list(vec![Sexp::sym("int"), Sexp::sym(n.to_string())]),
        Value::Thread(t) => Sexp::list(vec![Sexp::sym("thread"), Sexp::sym(t.to_string())]),
        Value::Node(n) => Sexp::list(vec![Sexp::sym("node"), Sexp::sym(n.to_string())]),
        Value::Status(s) => Sexp::list(vec![
            Sexp::sym("status"),
            Sexp::sym(s.to_string().to_lowercase()),
        ]),
        Value::Lock(LockVal::Free) => Sexp::list(vec![Sexp::sym("lock"), Sexp::sym("free")]),
        Value::Lock(LockVal::Held(t)) => Sexp::list(vec![
            Sexp::sym("lock"),
            Sexp::sym("held"),
            Sexp::sym(t.to_string()),
        ]),
        Value::Seq(s) => {
            let mut items = vec![
                Sexp::sym("seq"),
                Sexp::sym(match s.kind {
                    ElemKind::Thread => "thread",
                    ElemKind::Node => "node",
                }),
            ];
            for v in s.iter() {
                items.push(Sexp::sym(v.to_string()));
            }
            Sexp::list(items)
        }
    }
}

fn parse_thread(s: &str) -> Option<ThreadId> {
    s.strip_prefix('t').and_then(|r| r.parse().ok()).map(ThreadId)
}

fn parse_node(s: &str) -> Option<NodeRef> {
    if s == "bot" {
        return Some(NodeRef::Uninit);
    }
    s.strip_prefix('n').and_then(|r| r.parse().ok()).map(NodeRef::Node)
}

pub fn value_from_sexp(s: &Sexp) -> Result<Value, ParseError> {
    let items = s.as_list().ok_or_else(|| malformed("value", s))?;
    let head = items
        .first()
        .and_then(|h| h.as_sym())
        .ok_or_else(|| malformed("value", s))?;
    let arg = |i: usize| -> Result<&str, ParseError> {
        items
            .get(i)
            .and_then(|a| a.as_sym())
            .ok_or_else(|| malformed("value", s))
    };
    match head {
        "bool" => match arg(1)? {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(malformed("value", s)),
        },
        "int" => arg(1)?
            .parse()
            .map(Value::Int)
            .map_err(|_| malformed("value", s)),
        "thread" => parse_thread(arg(1)?)
            .map(Value::Thread)
            .ok_or_else(|| malformed("value", s)),
        "node" => parse_node(arg(1)?)
            .map(Value::Node)
            .ok_or_else(|| malformed("value", s)),
        "status" => match arg(1)? {
            "granted" => Ok(Value::Status(Status::Granted)),
            "pending" => Ok(Value::Status(Status::Pending)),
            _ => Err(malformed("value", s)),
        },
        "lock" => match arg(1)? {
            "free" => Ok(Value::Lock(LockVal::Free)),
            "held" => parse_thread(arg(2)?)
                .map(|t| Value::Lock(LockVal::Held(t)))
                .ok_or_else(|| malformed("value", s)),
            _ => Err(malformed("value", s)),
        },
        "seq" => {
            let kind = match arg(1)? {
                "thread" => ElemKind::Thread,
                "node" => ElemKind::Node,
                _ => return Err(malformed("value", s)),
            };
            match kind {
                ElemKind::Thread => {
                    let mut ts = Vec::new();
                    for item in &items[2..] {
                        let sym = item.as_sym().ok_or_else(|| malformed("value", s))?;
                        ts.push(parse_thread(sym).ok_or_else(|| malformed("value", s))?);
                    }
                    Ok(Value::Seq(SeqVal::from_threads(ts)))
                }
                ElemKind::Node => {
                    let mut ns = Vec::new();
                    for item in &items[2..] {
                        let sym = item.as_sym().ok_or_else(|| malformed("value", s))?;
                        ns.push(parse_node(sym).ok_or_else(|| malformed("value", s))?);
                    }
                    Ok(Value::Seq(SeqVal::from_nodes(ns)))
                }
            }
        }
        _ => Err(malformed("value", s)),
    }
}

// --- expressions ------------------------------------------------------------

pub fn expr_to_sexpr(e: &Expr) -> Sexp {
    let unary = |op: &str, a: &Expr| Sexp::list(vec![sy(op), expr_to_sexpr(a)]);
    let binary = |op: &str, a: &Expr, b: &Expr| {
        Sexp::list(vec![sy(op), expr_to_sexpr(a), expr_to_sexpr(b)])
    };
    match e {
        Expr::Const(v) => value_to_sexp(v),
        Expr::Var(v) => Sexp::list(vec![sy("var"), sy(v.name())]),
        Expr::Prime(v) => Sexp::list(vec![sy("pvar"), sy(v.name())]),
        Expr::Bound(k) => Sexp::list(vec![sy("bvar"), sy(k.to_string())]),
        Expr::FamilyAt { family, primed, index } => Sexp::list(vec![
            sy(if *primed { "fam'" } else { "fam" }),
            sy(family.clone()),
            expr_to_sexpr(index),
        ]),
        Expr::StatusOf { ptr, primed } => Sexp::list(vec![
            sy(if *primed { "statusof'" } else { "statusof" }),
            expr_to_sexpr(ptr),
        ]),
        Expr::Not(a) => unary("not", a),
        Expr::And(xs) => {
            let mut items = vec![sy("and")];
            items.extend(xs.iter().map(expr_to_sexpr));
            Sexp::list(items)
        }
        Expr::Or(xs) => {
            let mut items = vec![sy("or")];
            items.extend(xs.iter().map(expr_to_sexpr));
            Sexp::list(items)
        }
        Expr::Implies(a, b) => binary("implies", a, b),
        Expr::Eq(a, b) => binary("eq", a, b),
        Expr::Le(a, b) => binary("le", a, b),
        Expr::Ite(c, t, f) => Sexp::list(vec![
            sy("ite"),
            expr_to_sexpr(c),
            expr_to_sexpr(t),
            expr_to_sexpr(f),
        ]),
        Expr::Forall { over: QuantRange::Thread, body } => unary("forall-thread", body),
        Expr::Forall { over: QuantRange::Node, body } => unary("forall-node", body),
        Expr::Exists { over: QuantRange::Thread, body } => unary("exists-thread", body),
        Expr::Exists { over: QuantRange::Node, body } => unary("exists-node", body),
        Expr::Head(a) => unary("hd", a),
        Expr::Tail(a) => unary("tl", a),
        Expr::Concat(a, b) => binary("concat", a, b),
        Expr::Cons(a, b) => binary("cons", a, b),
        Expr::Mem(a, b) => binary("mem", a, b),
        Expr::IndexOf(a, b) => binary("index-of", a, b),
        Expr::MapFamily { family, primed, seq } => Sexp::list(vec![
            sy(if *primed { "fmap'" } else { "fmap" }),
            sy(family.clone()),
            expr_to_sexpr(seq),
        ]),
        Expr::Distinct(a) => unary("distinct", a),
        Expr::Last(a) => unary("last", a),
        Expr::Butlast(a) => unary("butlast", a),
        Expr::Injective { family, primed } => Sexp::list(vec![
            sy(if *primed { "injective'" } else { "injective" }),
            sy(family.clone()),
        ]),
        Expr::InRange { family, primed, elem } => Sexp::list(vec![
            sy(if *primed { "ran-mem'" } else { "ran-mem" }),
            sy(family.clone()),
            expr_to_sexpr(elem),
        ]),
    }
}

pub fn expr_from_sexp(s: &Sexp) -> Result<Expr, ParseError> {
    let items = s.as_list().ok_or_else(|| malformed("expr", s))?;
    let head = items
        .first()
        .and_then(|h| h.as_sym())
        .ok_or_else(|| malformed("expr", s))?;
    let expect = |n: usize| -> Result<(), ParseError> {
        if items.len() == n {
            Ok(())
        } else {
            Err(malformed("expr", s))
        }
    };
    let sub = |i: usize| expr_from_sexp(&items[i]);
    let sym_at = |i: usize| -> Result<&str, ParseError> {
        items
            .get(i)
            .and_then(|a| a.as_sym())
            .ok_or_else(|| malformed("expr", s))
    };
    Ok(match head {
        "bool" | "int" | "thread" | "node" | "status" | "lock" | "seq" => {
            Expr::Const(value_from_sexp(s)?)
        }
        "var" => {
            expect(2)?;
            Expr::Var(Var::parse(sym_at(1)?))
        }
        "pvar" => {
            expect(2)?;
            Expr::Prime(Var::parse(sym_at(1)?))
        }
        "bvar" => {
            expect(2)?;
            Expr::Bound(sym_at(1)?.parse().map_err(|_| malformed("expr", s))?)
        }
        "fam" | "fam'" => {
            expect(3)?;
            Expr::FamilyAt {
                family: sym_at(1)?.to_string(),
                primed: head.ends_with('\''),
                index: Box::new(sub(2)?),
            }
        }
        "statusof" | "statusof'" => {
            expect(2)?;
            Expr::StatusOf { ptr: Box::new(sub(1)?), primed: head.ends_with('\'') }
        }
        "not" => {
            expect(2)?;
            Expr::Not(Box::new(sub(1)?))
        }
        "and" | "or" => {
            let mut xs = Vec::with_capacity(items.len() - 1);
            for item in &items[1..] {
                xs.push(expr_from_sexp(item)?);
            }
            if head == "and" {
                Expr::And(xs)
            } else {
                Expr::Or(xs)
            }
        }
        "implies" => {
            expect(3)?;
            Expr::Implies(Box::new(sub(1)?), Box::new(sub(2)?))
        }
        "eq" => {
            expect(3)?;
            Expr::Eq(Box::new(sub(1)?), Box::new(sub(2)?))
        }
        "le" => {
            expect(3)?;
            Expr::Le(Box::new(sub(1)?), Box::new(sub(2)?))
        }
        "ite" => {
            expect(4)?;
            Expr::Ite(Box::new(sub(1)?), Box::new(sub(2)?), Box::new(sub(3)?))
        }
        "forall-thread" | "forall-node" | "exists-thread" | "exists-node" => {
            expect(2)?;
            let over = if head.ends_with("thread") {
                QuantRange::Thread
            } else {
                QuantRange::Node
            };
            let body = Box::new(sub(1)?);
            if head.starts_with("forall") {
                Expr::Forall { over, body }
            } else {
                Expr::Exists { over, body }
            }
        }
        "hd" => {
            expect(2)?;
            Expr::Head(Box::new(sub(1)?))
        }
        "tl" => {
            expect(2)?;
            Expr::Tail(Box::new(sub(1)?))
        }
        "concat" => {
            expect(3)?;
            Expr::Concat(Box::new(sub(1)?), Box::new(sub(2)?))
        }
        "cons" => {
            expect(3)?;
            Expr::Cons(Box::new(sub(1)?), Box::new(sub(2)?))
        }
        "mem" => {
            expect(3)?;
            Expr::Mem(Box::new(sub(1)?), Box::new(sub(2)?))
        }
        "index-of" => {
            expect(3)?;
            Expr::IndexOf(Box::new(sub(1)?), Box::new(sub(2)?))
        }
        "fmap" | "fmap'" => {
            expect(3)?;
            Expr::MapFamily {
                family: sym_at(1)?.to_string(),
                primed: head.ends_with('\''),
                seq: Box::new(sub(2)?),
            }
        }
        "distinct" => {
            expect(2)?;
            Expr::Distinct(Box::new(sub(1)?))
        }
        "last" => {
            expect(2)?;
            Expr::Last(Box::new(sub(1)?))
        }
        "butlast" => {
            expect(2)?;
            Expr::Butlast(Box::new(sub(1)?))
        }
        "injective" | "injective'" => {
            expect(2)?;
            Expr::Injective { family: sym_at(1)?.to_string(), primed: head.ends_with('\'') }
        }
        "ran-mem" | "ran-mem'" => {
            expect(3)?;
            Expr::InRange {
                family: sym_at(1)?.to_string(),
                primed: head.ends_with('\''),
                elem: Box::new(sub(2)?),
            }
        }
        _ => return Err(malformed("expr", s)),
    })
}

/// Parse an expression from text.
pub fn parse_expr(input: &str) -> Result<Expr, ParseError> {
    expr_from_sexp(&parse(input)?)
}

// --- commands -----------------------------------------------------------------

fn target_to_sexp(t: &Target) -> Sexp {
    match t {
        Target::Var(v) => Sexp::list(vec![sy("var"), sy(v.name())]),
        Target::StatusCell(ptr) => Sexp::list(vec![sy("deref"), expr_to_sexpr(ptr)]),
    }
}

fn target_from_sexp(s: &Sexp) -> Result<Target, ParseError> {
    let items = s.as_list().ok_or_else(|| malformed("target", s))?;
    match items.first().and_then(|h| h.as_sym()) {
        Some("var") => {
            let name = items
                .get(1)
                .and_then(|a| a.as_sym())
                .ok_or_else(|| malformed("target", s))?;
            Ok(Target::Var(Var::parse(name)))
        }
        Some("deref") => Ok(Target::StatusCell(expr_from_sexp(
            items.get(1).ok_or_else(|| malformed("target", s))?,
        )?)),
        _ => Err(malformed("target", s)),
    }
}

fn instr_attrs(i: &Instr) -> Vec<Sexp> {
    let mut attrs = Vec::new();
    if i.ordering == OrderAnno::Release {
        attrs.push(Sexp::list(vec![sy("release")]));
    }
    if let Some(l) = &i.label {
        attrs.push(Sexp::list(vec![sy("lbl"), sy(l.clone())]));
    }
    attrs
}

fn step_to_sexp(s: &AtomicStep) -> Sexp {
    match s {
        AtomicStep::Set { target, value } => Sexp::list(vec![
            sy("set"),
            target_to_sexp(target),
            expr_to_sexpr(value),
        ]),
        AtomicStep::Exchange(a, b) => {
            Sexp::list(vec![sy("exchange"), target_to_sexp(a), target_to_sexp(b)])
        }
    }
}

fn step_from_sexp(s: &Sexp) -> Result<AtomicStep, ParseError> {
    let items = s.as_list().ok_or_else(|| malformed("atomic step", s))?;
    match items.first().and_then(|h| h.as_sym()) {
        Some("set") if items.len() == 3 => Ok(AtomicStep::Set {
            target: target_from_sexp(&items[1])?,
            value: expr_from_sexp(&items[2])?,
        }),
        Some("exchange") if items.len() == 3 => Ok(AtomicStep::Exchange(
            target_from_sexp(&items[1])?,
            target_from_sexp(&items[2])?,
        )),
        _ => Err(malformed("atomic step", s)),
    }
}

pub fn instr_to_sexp(i: &Instr) -> Sexp {
    let mut items = match &i.kind {
        InstrKind::Assign { target, value } => {
            vec![sy("assign"), target_to_sexp(target), expr_to_sexpr(value)]
        }
        InstrKind::AtomicBlock(steps) => {
            let mut v = vec![sy("atomic")];
            v.extend(steps.iter().map(step_to_sexp));
            v
        }
        InstrKind::Fence => vec![sy("fence")],
        InstrKind::Marker => vec![sy("marker")],
    };
    items.extend(instr_attrs(i));
    Sexp::list(items)
}

/// Split trailing `(release)` / `(lbl name)` attribute lists.
fn split_attrs(items: &[Sexp]) -> (&[Sexp], OrderAnno, Option<String>) {
    let mut end = items.len();
    let mut ordering = OrderAnno::None;
    let mut label = None;
    while end > 0 {
        let Some(fields) = items[end - 1].as_list() else { break };
        match fields.first().and_then(|h| h.as_sym()) {
            Some("release") if fields.len() == 1 => {
                ordering = OrderAnno::Release;
                end -= 1;
            }
            Some("lbl") if fields.len() == 2 => {
                label = fields[1].as_sym().map(str::to_string);
                end -= 1;
            }
            _ => break,
        }
    }
    (&items[..end], ordering, label)
}

pub fn instr_from_sexp(s: &Sexp) -> Result<Instr, ParseError> {
    let items = s.as_list().ok_or_else(|| malformed("instr", s))?;
    let (body, ordering, label) = split_attrs(items);
    let head = body
        .first()
        .and_then(|h| h.as_sym())
        .ok_or_else(|| malformed("instr", s))?;
    let kind = match head {
        "assign" if body.len() == 3 => InstrKind::Assign {
            target: target_from_sexp(&body[1])?,
            value: expr_from_sexp(&body[2])?,
        },
        "atomic" => {
            let mut steps = Vec::new();
            for item in &body[1..] {
                steps.push(step_from_sexp(item)?);
            }
            InstrKind::AtomicBlock(steps)
        }
        "fence" if body.len() == 1 => InstrKind::Fence,
        "marker" if body.len() == 1 => InstrKind::Marker,
        _ => return Err(malformed("instr", s)),
    };
    Ok(Instr { kind, ordering, label })
}

fn pred_from_sexp(s: &Sexp) -> Result<Predicate, ParseError> {
    Predicate::new(expr_from_sexp(s)?).map_err(|_| ParseError::Malformed {
        what: "predicate",
        detail: format!("primed leaf in {s}"),
    })
}

pub fn command_to_sexp(c: &Command) -> Sexp {
    match c {
        Command::Skip => Sexp::list(vec![sy("skip")]),
        Command::Instr(i) => instr_to_sexp(i),
        Command::Seq(a, b) => {
            Sexp::list(vec![sy("seq"), command_to_sexp(a), command_to_sexp(b)])
        }
        Command::PpSeq { model, left, right } => Sexp::list(vec![
            sy("ppseq"),
            sy(model.clone()),
            command_to_sexp(left),
            command_to_sexp(right),
        ]),
        Command::Par(a, b) => {
            Sexp::list(vec![sy("par"), command_to_sexp(a), command_to_sexp(b)])
        }
        Command::ParN(children) => {
            let mut items = vec![sy("parn")];
            for (t, child) in children {
                items.push(Sexp::list(vec![sy(t.to_string()), command_to_sexp(child)]));
            }
            Sexp::list(items)
        }
        Command::While { guard, body, label } => {
            let mut items = vec![
                sy("while"),
                expr_to_sexpr(guard.expr()),
                command_to_sexp(body),
            ];
            if let Some(l) = label {
                items.push(Sexp::list(vec![sy("lbl"), sy(l.clone())]));
            }
            Sexp::list(items)
        }
        Command::Spin { guard, label } => {
            let mut items = vec![sy("spin"), expr_to_sexpr(guard.expr())];
            if let Some(l) = label {
                items.push(Sexp::list(vec![sy("lbl"), sy(l.clone())]));
            }
            Sexp::list(items)
        }
        Command::Assert { pred, label } => Sexp::list(vec![
            sy("assert"),
            expr_to_sexpr(pred.expr()),
            sy(label.clone()),
        ]),
    }
}

pub fn command_from_sexp(s: &Sexp) -> Result<Command, ParseError> {
    let items = s.as_list().ok_or_else(|| malformed("command", s))?;
    let head = items
        .first()
        .and_then(|h| h.as_sym())
        .ok_or_else(|| malformed("command", s))?;
    Ok(match head {
        "skip" => Command::Skip,
        "assign" | "atomic" | "fence" | "marker" => Command::Instr(instr_from_sexp(s)?),
        "seq" if items.len() == 3 => Command::seq(
            command_from_sexp(&items[1])?,
            command_from_sexp(&items[2])?,
        ),
        "ppseq" if items.len() == 4 => {
            let model = items[1].as_sym().ok_or_else(|| malformed("command", s))?;
            Command::ppseq(
                model,
                command_from_sexp(&items[2])?,
                command_from_sexp(&items[3])?,
            )
        }
        "par" if items.len() == 3 => Command::par(
            command_from_sexp(&items[1])?,
            command_from_sexp(&items[2])?,
        ),
        "parn" => {
            let mut children = Vec::new();
            for item in &items[1..] {
                let fields = item.as_list().ok_or_else(|| malformed("command", s))?;
                if fields.len() != 2 {
                    return Err(malformed("command", s));
                }
                let tid = fields[0]
                    .as_sym()
                    .and_then(parse_thread)
                    .ok_or_else(|| malformed("command", s))?;
                children.push((tid, command_from_sexp(&fields[1])?));
            }
            Command::parn(children)
        }
        "while" => {
            let (body_items, _, label) = split_attrs(items);
            if body_items.len() != 3 {
                return Err(malformed("command", s));
            }
            Command::While {
                guard: pred_from_sexp(&body_items[1])?,
                body: std::sync::Arc::new(command_from_sexp(&body_items[2])?),
                label,
            }
        }
        "spin" => {
            let (body_items, _, label) = split_attrs(items);
            if body_items.len() != 2 {
                return Err(malformed("command", s));
            }
            Command::Spin { guard: pred_from_sexp(&body_items[1])?, label }
        }
        "assert" if items.len() == 3 => {
            let label = items[2].as_sym().ok_or_else(|| malformed("command", s))?;
            Command::Assert { pred: pred_from_sexp(&items[1])?, label: label.to_string() }
        }
        _ => return Err(malformed("command", s)),
    })
}

/// Parse a command from text.
pub fn parse_command(input: &str) -> Result<Command, ParseError> {
    command_from_sexp(&parse(input)?)
}

// --- universes ---------------------------------------------------------------

fn domain_to_sexp(d: &Domain) -> Sexp {
    match d {
        Domain::Bool => Sexp::list(vec![sy("bool")]),
        Domain::Thread { .. } => Sexp::list(vec![sy("thread")]),
        Domain::Node { with_uninit: false, .. } => Sexp::list(vec![sy("node")]),
        Domain::Node { with_uninit: true, .. } => Sexp::list(vec![sy("node+bot")]),
        Domain::Status => Sexp::list(vec![sy("status")]),
        Domain::Lock { .. } => Sexp::list(vec![sy("lock")]),
        Domain::Int { lo, hi } => {
            Sexp::list(vec![sy("int"), sy(lo.to_string()), sy(hi.to_string())])
        }
        Domain::ThreadSeq { max_len, .. } => {
            Sexp::list(vec![sy("thread-seq"), sy(max_len.to_string())])
        }
    }
}

fn domain_from_sexp(s: &Sexp, threads: u8, nodes: u8) -> Result<Domain, ParseError> {
    let items = s.as_list().ok_or_else(|| malformed("domain", s))?;
    let head = items
        .first()
        .and_then(|h| h.as_sym())
        .ok_or_else(|| malformed("domain", s))?;
    Ok(match head {
        "bool" => Domain::Bool,
        "thread" => Domain::Thread { count: threads },
        "node" => Domain::node(nodes),
        "node+bot" => Domain::node_or_uninit(nodes),
        "status" => Domain::Status,
        "lock" => Domain::Lock { thread_count: threads },
        "int" => {
            let lo = items
                .get(1)
                .and_then(|a| a.as_sym())
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| malformed("domain", s))?;
            let hi = items
                .get(2)
                .and_then(|a| a.as_sym())
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| malformed("domain", s))?;
            Domain::Int { lo, hi }
        }
        "thread-seq" => {
            let max_len = items
                .get(1)
                .and_then(|a| a.as_sym())
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| malformed("domain", s))?;
            Domain::ThreadSeq { thread_count: threads, max_len }
        }
        _ => return Err(malformed("domain", s)),
    })
}

/// Serialise a universe declaration.
pub fn universe_to_sexp(u: &StateUniverse) -> Sexp {
    let mut items = vec![
        sy("universe"),
        Sexp::list(vec![sy("threads"), sy(u.thread_count().to_string())]),
        Sexp::list(vec![sy("nodes"), sy(u.node_count().to_string())]),
    ];
    let mut seen_families = std::collections::BTreeSet::new();
    let mut status_heap = false;
    for v in u.vars() {
        match v {
            Var::Global(name) => {
                let d = u.domain_of(v).unwrap();
                items.push(Sexp::list(vec![sy("decl"), sy(name.clone()), domain_to_sexp(d)]));
            }
            Var::PerThread(family, _) => {
                if seen_families.insert(family.clone()) {
                    let d = u.domain_of(v).unwrap();
                    items.push(Sexp::list(vec![
                        sy("decl-per-thread"),
                        sy(family.clone()),
                        domain_to_sexp(d),
                    ]));
                }
            }
            Var::NodeStatus(_) => status_heap = true,
        }
    }
    if status_heap {
        items.push(Sexp::list(vec![sy("status-heap")]));
    }
    Sexp::list(items)
}

/// Read a universe declaration.
pub fn universe_from_sexp(s: &Sexp) -> Result<StateUniverse, ParseError> {
    let items = s.as_list().ok_or_else(|| malformed("universe", s))?;
    if items.first().and_then(|h| h.as_sym()) != Some("universe") {
        return Err(malformed("universe", s));
    }
    let mut threads = None;
    let mut nodes = None;
    for item in &items[1..] {
        let fields = item.as_list().ok_or_else(|| malformed("universe", s))?;
        match fields.first().and_then(|h| h.as_sym()) {
            Some("threads") => {
                threads = fields.get(1).and_then(|a| a.as_sym()).and_then(|a| a.parse().ok());
            }
            Some("nodes") => {
                nodes = fields.get(1).and_then(|a| a.as_sym()).and_then(|a| a.parse().ok());
            }
            _ => {}
        }
    }
    let threads = threads.ok_or_else(|| malformed("universe", s))?;
    let nodes = nodes.unwrap_or(0);
    let mut b = StateUniverse::builder(threads, nodes);
    for item in &items[1..] {
        let fields = item.as_list().ok_or_else(|| malformed("universe", s))?;
        match fields.first().and_then(|h| h.as_sym()) {
            Some("threads") | Some("nodes") => {}
            Some("decl") => {
                let name = fields
                    .get(1)
                    .and_then(|a| a.as_sym())
                    .ok_or_else(|| malformed("universe", s))?;
                let d = domain_from_sexp(
                    fields.get(2).ok_or_else(|| malformed("universe", s))?,
                    threads,
                    nodes,
                )?;
                b = b.global(name, d);
            }
            Some("decl-per-thread") => {
                let name = fields
                    .get(1)
                    .and_then(|a| a.as_sym())
                    .ok_or_else(|| malformed("universe", s))?;
                let d = domain_from_sexp(
                    fields.get(2).ok_or_else(|| malformed("universe", s))?,
                    threads,
                    nodes,
                )?;
                b = b.per_thread(name, d);
            }
            Some("status-heap") => {
                b = b.status_heap();
            }
            _ => return Err(malformed("universe", item)),
        }
    }
    Ok(b.build()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_and_comments() {
        let s = parse("(and (eq (var x) (int 5)) ; trailing comment\n (bool true))").unwrap();
        assert_eq!(
            s.to_string(),
            "(and (eq (var x) (int 5)) (bool true))"
        );
    }

    #[test]
    fn expr_round_trip() {
        let e = Expr::var("q")
            .distinct()
            .and(Expr::injective("reserved"))
            .and(Expr::status_of(Expr::var("auxhead")).eq(Expr::status(Status::Granted)))
            .and(Expr::index_of(Expr::pvar("q"), Expr::thread(ThreadId(1))).le(Expr::int(0)));
        let text = expr_to_sexpr(&e).to_string();
        let back = parse_expr(&text).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn value_round_trip() {
        let vals = [
            Value::Bool(false),
            Value::Int(-3),
            Value::Thread(ThreadId(2)),
            Value::Node(NodeRef::Uninit),
            Value::Status(Status::Pending),
            Value::Lock(LockVal::Held(ThreadId(1))),
            Value::Seq(SeqVal::from_threads([ThreadId(1), ThreadId(2)])),
            Value::Seq(SeqVal::empty(ElemKind::Node)),
        ];
        for v in vals {
            let s = value_to_sexp(&v);
            assert_eq!(value_from_sexp(&s).unwrap(), v, "{s}");
        }
    }

    #[test]
    fn universe_round_trip() {
        let u = StateUniverse::builder(2, 3)
            .global("tail", Domain::node(3))
            .global("q", Domain::ThreadSeq { thread_count: 2, max_len: 2 })
            .per_thread("cur", Domain::node(3))
            .per_thread("prev", Domain::node_or_uninit(3))
            .status_heap()
            .build()
            .unwrap();
        let text = universe_to_sexp(&u).to_string();
        let back = universe_from_sexp(&parse(&text).unwrap()).unwrap();
        assert_eq!(universe_to_sexp(&back).to_string(), text);
        assert_eq!(back.var_count(), u.var_count());
    }

    #[test]
    fn parse_errors() {
        assert!(parse("(and (eq").is_err());
        assert!(parse("(a) (b)").is_err());
        assert_eq!(parse_many("(a) (b)").unwrap().len(), 2);
        assert!(parse_expr("(frobnicate 1)").is_err());
    }
}
