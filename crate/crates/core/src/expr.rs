//! The expression language for predicates and relations.
//!
//! Expressions read variables from a pre-state and, when primed, from a
//! post-state. A predicate is a boolean expression over one state (no primed
//! leaves); a relation may read both. Everything is immutable after
//! construction.

use std::fmt;

use crate::sexpr;
use crate::universe::Var;
use crate::value::{ElemKind, NodeRef, SeqVal, Status, ThreadId, Value};

/// Range of a bounded quantifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantRange {
    Thread,
    Node,
}

/// Expression tree. See the module docs for the predicate/relation split.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Const(Value),
    /// Pre-state read.
    Var(Var),
    /// Post-state read.
    Prime(Var),
    /// Quantifier-bound variable (de Bruijn index, 0 = innermost binder).
    Bound(u8),
    /// Per-thread variable selected by a dynamic thread index.
    FamilyAt { family: String, primed: bool, index: Box<Expr> },
    /// Heap dereference: the status cell of the node `ptr` evaluates to.
    StatusOf { ptr: Box<Expr>, primed: bool },
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Implies(Box<Expr>, Box<Expr>),
    Eq(Box<Expr>, Box<Expr>),
    Le(Box<Expr>, Box<Expr>),
    Ite(Box<Expr>, Box<Expr>, Box<Expr>),
    Forall { over: QuantRange, body: Box<Expr> },
    Exists { over: QuantRange, body: Box<Expr> },
    Head(Box<Expr>),
    Tail(Box<Expr>),
    Concat(Box<Expr>, Box<Expr>),
    Cons(Box<Expr>, Box<Expr>),
    /// Membership of an element in a sequence.
    Mem(Box<Expr>, Box<Expr>),
    /// Zero-based index of an element in a sequence; must be guarded by
    /// membership (evaluating it on an absent element is an error).
    IndexOf(Box<Expr>, Box<Expr>),
    /// Map a per-thread family over a thread sequence (`fmap`).
    MapFamily { family: String, primed: bool, seq: Box<Expr> },
    Distinct(Box<Expr>),
    Last(Box<Expr>),
    Butlast(Box<Expr>),
    /// The per-thread family, viewed as a map, is injective.
    Injective { family: String, primed: bool },
    /// The element is in the range of the per-thread family.
    InRange { family: String, primed: bool, elem: Box<Expr> },
}

impl Expr {
    // --- leaf constructors -------------------------------------------------

    pub fn bool(b: bool) -> Expr {
        Expr::Const(Value::Bool(b))
    }

    pub fn tt() -> Expr {
        Expr::bool(true)
    }

    pub fn ff() -> Expr {
        Expr::bool(false)
    }

    pub fn int(n: i64) -> Expr {
        Expr::Const(Value::Int(n))
    }

    pub fn thread(t: ThreadId) -> Expr {
        Expr::Const(Value::Thread(t))
    }

    pub fn node(k: u8) -> Expr {
        Expr::Const(Value::Node(NodeRef::Node(k)))
    }

    pub fn uninit() -> Expr {
        Expr::Const(Value::Node(NodeRef::Uninit))
    }

    pub fn status(s: Status) -> Expr {
        Expr::Const(Value::Status(s))
    }

    pub fn empty_seq(kind: ElemKind) -> Expr {
        Expr::Const(Value::Seq(SeqVal::empty(kind)))
    }

    /// Pre-state read of a variable by canonical name.
    pub fn var(name: &str) -> Expr {
        Expr::Var(Var::parse(name))
    }

    /// Post-state read of a variable by canonical name.
    pub fn pvar(name: &str) -> Expr {
        Expr::Prime(Var::parse(name))
    }

    pub fn read(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn family_at(family: &str, index: Expr) -> Expr {
        Expr::FamilyAt { family: family.to_string(), primed: false, index: Box::new(index) }
    }

    pub fn status_of(ptr: Expr) -> Expr {
        Expr::StatusOf { ptr: Box::new(ptr), primed: false }
    }

    pub fn fmap(family: &str, seq: Expr) -> Expr {
        Expr::MapFamily { family: family.to_string(), primed: false, seq: Box::new(seq) }
    }

    pub fn injective(family: &str) -> Expr {
        Expr::Injective { family: family.to_string(), primed: false }
    }

    pub fn in_range(family: &str, elem: Expr) -> Expr {
        Expr::InRange { family: family.to_string(), primed: false, elem: Box::new(elem) }
    }

    // --- combinators -------------------------------------------------------

    pub fn and(self, rhs: Expr) -> Expr {
        match (self, rhs) {
            (Expr::And(mut xs), Expr::And(ys)) => {
                xs.extend(ys);
                Expr::And(xs)
            }
            (Expr::And(mut xs), y) => {
                xs.push(y);
                Expr::And(xs)
            }
            (x, Expr::And(mut ys)) => {
                ys.insert(0, x);
                Expr::And(ys)
            }
            (x, y) => Expr::And(vec![x, y]),
        }
    }

    pub fn or(self, rhs: Expr) -> Expr {
        match (self, rhs) {
            (Expr::Or(mut xs), Expr::Or(ys)) => {
                xs.extend(ys);
                Expr::Or(xs)
            }
            (Expr::Or(mut xs), y) => {
                xs.push(y);
                Expr::Or(xs)
            }
            (x, Expr::Or(mut ys)) => {
                ys.insert(0, x);
                Expr::Or(ys)
            }
            (x, y) => Expr::Or(vec![x, y]),
        }
    }

    pub fn not(self) -> Expr {
        Expr::Not(Box::new(self))
    }

    pub fn implies(self, rhs: Expr) -> Expr {
        Expr::Implies(Box::new(self), Box::new(rhs))
    }

    /// Boolean equivalence (plain equality on booleans).
    pub fn iff(self, rhs: Expr) -> Expr {
        self.eq(rhs)
    }

    pub fn eq(self, rhs: Expr) -> Expr {
        Expr::Eq(Box::new(self), Box::new(rhs))
    }

    pub fn ne(self, rhs: Expr) -> Expr {
        self.eq(rhs).not()
    }

    pub fn le(self, rhs: Expr) -> Expr {
        Expr::Le(Box::new(self), Box::new(rhs))
    }

    pub fn ite(cond: Expr, then: Expr, els: Expr) -> Expr {
        Expr::Ite(Box::new(cond), Box::new(then), Box::new(els))
    }

    pub fn forall(over: QuantRange, body: Expr) -> Expr {
        Expr::Forall { over, body: Box::new(body) }
    }

    pub fn exists(over: QuantRange, body: Expr) -> Expr {
        Expr::Exists { over, body: Box::new(body) }
    }

    pub fn hd(self) -> Expr {
        Expr::Head(Box::new(self))
    }

    pub fn tl(self) -> Expr {
        Expr::Tail(Box::new(self))
    }

    pub fn concat(self, rhs: Expr) -> Expr {
        Expr::Concat(Box::new(self), Box::new(rhs))
    }

    pub fn cons(head: Expr, tail: Expr) -> Expr {
        Expr::Cons(Box::new(head), Box::new(tail))
    }

    /// Singleton sequence of the given element kind.
    pub fn singleton(elem: Expr, kind: ElemKind) -> Expr {
        Expr::cons(elem, Expr::empty_seq(kind))
    }

    pub fn mem(self, seq: Expr) -> Expr {
        Expr::Mem(Box::new(self), Box::new(seq))
    }

    pub fn index_of(seq: Expr, elem: Expr) -> Expr {
        Expr::IndexOf(Box::new(seq), Box::new(elem))
    }

    pub fn distinct(self) -> Expr {
        Expr::Distinct(Box::new(self))
    }

    pub fn last(self) -> Expr {
        Expr::Last(Box::new(self))
    }

    pub fn butlast(self) -> Expr {
        Expr::Butlast(Box::new(self))
    }

    /// Conjunction of a list (true when empty).
    pub fn conj(mut xs: Vec<Expr>) -> Expr {
        match xs.len() {
            0 => Expr::tt(),
            1 => xs.pop().unwrap(),
            _ => Expr::And(xs),
        }
    }

    /// Disjunction of a list (false when empty).
    pub fn disj(mut xs: Vec<Expr>) -> Expr {
        match xs.len() {
            0 => Expr::ff(),
            1 => xs.pop().unwrap(),
            _ => Expr::Or(xs),
        }
    }

    // --- structural queries and transforms ---------------------------------

    /// True when the expression has no post-state reads.
    pub fn is_prime_free(&self) -> bool {
        let mut free = true;
        self.visit(&mut |e| match e {
            Expr::Prime(_) => free = false,
            Expr::FamilyAt { primed, .. }
            | Expr::StatusOf { primed, .. }
            | Expr::MapFamily { primed, .. }
            | Expr::Injective { primed, .. }
            | Expr::InRange { primed, .. } => {
                if *primed {
                    free = false;
                }
            }
            _ => {}
        });
        free
    }

    /// Visit every node (pre-order).
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Prime(_) | Expr::Bound(_) => {}
            Expr::Injective { .. } => {}
            Expr::FamilyAt { index: e, .. }
            | Expr::StatusOf { ptr: e, .. }
            | Expr::MapFamily { seq: e, .. }
            | Expr::InRange { elem: e, .. }
            | Expr::Not(e)
            | Expr::Head(e)
            | Expr::Tail(e)
            | Expr::Distinct(e)
            | Expr::Last(e)
            | Expr::Butlast(e)
            | Expr::Forall { body: e, .. }
            | Expr::Exists { body: e, .. } => e.visit(f),
            Expr::Implies(a, b)
            | Expr::Eq(a, b)
            | Expr::Le(a, b)
            | Expr::Concat(a, b)
            | Expr::Cons(a, b)
            | Expr::Mem(a, b)
            | Expr::IndexOf(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Ite(a, b, c) => {
                a.visit(f);
                b.visit(f);
                c.visit(f);
            }
            Expr::And(xs) | Expr::Or(xs) => {
                for x in xs {
                    x.visit(f);
                }
            }
        }
    }

    /// Rewrite every leaf read to the post-state (used to thread an invariant
    /// through a relation as `inv => inv'`). Already-primed reads stay primed.
    pub fn primed(&self) -> Expr {
        self.map_reads(true)
    }

    /// Rewrite every leaf read to the pre-state.
    pub fn unprimed(&self) -> Expr {
        self.map_reads(false)
    }

    fn map_reads(&self, to_prime: bool) -> Expr {
        let flag = |_: bool| to_prime;
        let rec = |e: &Expr| e.map_reads(to_prime);
        match self {
            Expr::Const(v) => Expr::Const(v.clone()),
            Expr::Bound(k) => Expr::Bound(*k),
            Expr::Var(v) | Expr::Prime(v) => {
                if to_prime {
                    Expr::Prime(v.clone())
                } else {
                    Expr::Var(v.clone())
                }
            }
            Expr::FamilyAt { family, primed, index } => Expr::FamilyAt {
                family: family.clone(),
                primed: flag(*primed),
                index: Box::new(rec(index)),
            },
            Expr::StatusOf { ptr, primed } => Expr::StatusOf {
                ptr: Box::new(rec(ptr)),
                primed: flag(*primed),
            },
            Expr::MapFamily { family, primed, seq } => Expr::MapFamily {
                family: family.clone(),
                primed: flag(*primed),
                seq: Box::new(rec(seq)),
            },
            Expr::Injective { family, primed } => Expr::Injective {
                family: family.clone(),
                primed: flag(*primed),
            },
            Expr::InRange { family, primed, elem } => Expr::InRange {
                family: family.clone(),
                primed: flag(*primed),
                elem: Box::new(rec(elem)),
            },
            Expr::Not(e) => Expr::Not(Box::new(rec(e))),
            Expr::And(xs) => Expr::And(xs.iter().map(rec).collect()),
            Expr::Or(xs) => Expr::Or(xs.iter().map(rec).collect()),
            Expr::Implies(a, b) => Expr::Implies(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Eq(a, b) => Expr::Eq(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Le(a, b) => Expr::Le(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Ite(a, b, c) => {
                Expr::Ite(Box::new(rec(a)), Box::new(rec(b)), Box::new(rec(c)))
            }
            Expr::Forall { over, body } => {
                Expr::Forall { over: *over, body: Box::new(rec(body)) }
            }
            Expr::Exists { over, body } => {
                Expr::Exists { over: *over, body: Box::new(rec(body)) }
            }
            Expr::Head(e) => Expr::Head(Box::new(rec(e))),
            Expr::Tail(e) => Expr::Tail(Box::new(rec(e))),
            Expr::Concat(a, b) => Expr::Concat(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Cons(a, b) => Expr::Cons(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Mem(a, b) => Expr::Mem(Box::new(rec(a)), Box::new(rec(b))),
            Expr::IndexOf(a, b) => Expr::IndexOf(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Distinct(e) => Expr::Distinct(Box::new(rec(e))),
            Expr::Last(e) => Expr::Last(Box::new(rec(e))),
            Expr::Butlast(e) => Expr::Butlast(Box::new(rec(e))),
        }
    }

    /// Replace every pre-state read of `x` by `e` (syntactic substitution).
    pub fn subst_var(&self, x: &Var, e: &Expr) -> Expr {
        let rec = |inner: &Expr| inner.subst_var(x, e);
        match self {
            Expr::Var(v) if v == x => e.clone(),
            Expr::Const(_) | Expr::Var(_) | Expr::Prime(_) | Expr::Bound(_) => self.clone(),
            Expr::Injective { .. } => self.clone(),
            Expr::FamilyAt { family, primed, index } => Expr::FamilyAt {
                family: family.clone(),
                primed: *primed,
                index: Box::new(rec(index)),
            },
            Expr::StatusOf { ptr, primed } => {
                Expr::StatusOf { ptr: Box::new(rec(ptr)), primed: *primed }
            }
            Expr::MapFamily { family, primed, seq } => Expr::MapFamily {
                family: family.clone(),
                primed: *primed,
                seq: Box::new(rec(seq)),
            },
            Expr::InRange { family, primed, elem } => Expr::InRange {
                family: family.clone(),
                primed: *primed,
                elem: Box::new(rec(elem)),
            },
            Expr::Not(a) => Expr::Not(Box::new(rec(a))),
            Expr::And(xs) => Expr::And(xs.iter().map(rec).collect()),
            Expr::Or(xs) => Expr::Or(xs.iter().map(rec).collect()),
            Expr::Implies(a, b) => Expr::Implies(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Eq(a, b) => Expr::Eq(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Le(a, b) => Expr::Le(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Ite(a, b, c) => {
                Expr::Ite(Box::new(rec(a)), Box::new(rec(b)), Box::new(rec(c)))
            }
            Expr::Forall { over, body } => {
                Expr::Forall { over: *over, body: Box::new(rec(body)) }
            }
            Expr::Exists { over, body } => {
                Expr::Exists { over: *over, body: Box::new(rec(body)) }
            }
            Expr::Head(a) => Expr::Head(Box::new(rec(a))),
            Expr::Tail(a) => Expr::Tail(Box::new(rec(a))),
            Expr::Concat(a, b) => Expr::Concat(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Cons(a, b) => Expr::Cons(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Mem(a, b) => Expr::Mem(Box::new(rec(a)), Box::new(rec(b))),
            Expr::IndexOf(a, b) => Expr::IndexOf(Box::new(rec(a)), Box::new(rec(b))),
            Expr::Distinct(a) => Expr::Distinct(Box::new(rec(a))),
            Expr::Last(a) => Expr::Last(Box::new(rec(a))),
            Expr::Butlast(a) => Expr::Butlast(Box::new(rec(a))),
        }
    }

    /// Top-level conjuncts, with nested conjunctions flattened.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
            match e {
                Expr::And(xs) => {
                    for x in xs {
                        walk(x, out);
                    }
                }
                other => out.push(other),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Top-level disjuncts, with nested disjunctions flattened.
    pub fn disjuncts(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
            match e {
                Expr::Or(xs) => {
                    for x in xs {
                        walk(x, out);
                    }
                }
                other => out.push(other),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Canonical text form (s-expression).
    pub fn canonical(&self) -> String {
        sexpr::expr_to_sexpr(self).to_string()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.canonical())
    }
}

/// Identity on the listed variables: `x' = x` for each.
pub fn id_on(vars: impl IntoIterator<Item = Var>) -> Expr {
    Expr::conj(
        vars.into_iter()
            .map(|v| Expr::Prime(v.clone()).eq(Expr::Var(v)))
            .collect(),
    )
}

/// Identity on the pre/post value of arbitrary expressions.
pub fn id_on_exprs(exprs: impl IntoIterator<Item = Expr>) -> Expr {
    Expr::conj(
        exprs
            .into_iter()
            .map(|e| e.primed().eq(e))
            .collect(),
    )
}

/// A boolean expression over a single state: no primed leaves.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate(Expr);

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("predicate contains a primed leaf")]
pub struct PrimedLeaf;

impl Predicate {
    pub fn new(e: Expr) -> Result<Predicate, PrimedLeaf> {
        if e.is_prime_free() {
            Ok(Predicate(e))
        } else {
            Err(PrimedLeaf)
        }
    }

    pub fn expr(&self) -> &Expr {
        &self.0
    }

    pub fn into_expr(self) -> Expr {
        self.0
    }
}

impl TryFrom<Expr> for Predicate {
    type Error = PrimedLeaf;
    fn try_from(e: Expr) -> Result<Self, Self::Error> {
        Predicate::new(e)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prime_free_detection() {
        let p = Expr::var("x").eq(Expr::int(5));
        assert!(p.is_prime_free());
        let r = Expr::pvar("x").eq(Expr::var("x"));
        assert!(!r.is_prime_free());
        assert!(Predicate::new(r).is_err());
        let deref = Expr::StatusOf { ptr: Box::new(Expr::var("tail")), primed: true };
        assert!(!deref.is_prime_free());
    }

    #[test]
    fn primed_rewrites_all_reads() {
        let p = Expr::status_of(Expr::var("tail")).eq(Expr::status(Status::Granted));
        let p2 = p.primed();
        assert!(!p2.is_prime_free());
        assert!(p2.unprimed() == p);
    }

    #[test]
    fn conjunct_flattening() {
        let e = Expr::var("a").and(Expr::var("b").and(Expr::var("c")));
        assert_eq!(e.conjuncts().len(), 3);
        let d = Expr::var("a").or(Expr::var("b")).or(Expr::var("c"));
        assert_eq!(d.disjuncts().len(), 3);
    }

    #[test]
    fn substitution_replaces_leaves() {
        let p = Expr::var("x").eq(Expr::int(5));
        let q = p.subst_var(&Var::global("x"), &Expr::var("y"));
        assert_eq!(q, Expr::var("y").eq(Expr::int(5)));
    }

    #[test]
    fn id_on_builds_equalities() {
        let e = id_on([Var::global("x"), Var::global("y")]);
        assert_eq!(e.conjuncts().len(), 2);
    }
}
