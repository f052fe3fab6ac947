//! Compilation and evaluation of expressions against a universe.
//!
//! Compilation resolves variable names to slots and typechecks the tree once;
//! evaluation then runs on packed states with no name lookups. Conjunctions,
//! disjunctions and implications short-circuit left to right, which is the
//! guard discipline that keeps partially-defined operators (`index_of`, `hd`,
//! dereference) total in practice.

use std::sync::Arc;

use smallvec::SmallVec;
use thiserror::Error;

use crate::expr::{Expr, QuantRange};
use crate::universe::{Slot, State, StateUniverse, UniverseCore};
use crate::value::{ElemKind, NodeRef, SeqElem, SeqVal, ThreadId, Ty, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("type mismatch in {context}: expected {expected}, found {found}")]
    TypeMismatch { context: String, expected: String, found: String },
    #[error("undeclared variable '{0}'")]
    UndeclaredVariable(String),
    #[error("unknown per-thread family '{0}'")]
    UnknownFamily(String),
    #[error("universe declares no status heap")]
    NoStatusHeap,
    #[error("expression reads the post-state but none was supplied")]
    MissingPostState,
    #[error("index_of applied to an element absent from the sequence")]
    UnguardedIndex,
    #[error("{0} applied to an empty sequence")]
    EmptySequence(&'static str),
    #[error("dereference of the uninitialised node reference")]
    DereferenceUninitialised,
    #[error("quantifier-bound variable out of scope")]
    BoundVarOutOfScope,
}

/// Set of slots, used for read-support tracking.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotSet {
    bits: SmallVec<[u64; 2]>,
}

impl SlotSet {
    pub fn new(n_slots: usize) -> Self {
        let words = n_slots.div_ceil(64);
        let mut bits = SmallVec::new();
        bits.resize(words.max(1), 0);
        SlotSet { bits }
    }

    pub fn insert(&mut self, s: Slot) {
        let w = s / 64;
        if w >= self.bits.len() {
            self.bits.resize(w + 1, 0);
        }
        self.bits[w] |= 1 << (s % 64);
    }

    pub fn contains(&self, s: Slot) -> bool {
        self.bits
            .get(s / 64)
            .map_or(false, |w| w & (1 << (s % 64)) != 0)
    }

    pub fn union_with(&mut self, other: &SlotSet) {
        if self.bits.len() < other.bits.len() {
            self.bits.resize(other.bits.len(), 0);
        }
        for (a, b) in self.bits.iter_mut().zip(other.bits.iter()) {
            *a |= b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Slot> + '_ {
        self.bits.iter().enumerate().flat_map(|(w, &word)| {
            (0..64).filter_map(move |b| {
                if word & (1u64 << b) != 0 {
                    Some(w * 64 + b)
                } else {
                    None
                }
            })
        })
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }
}

/// Slot-resolved expression.
#[derive(Debug, Clone)]
pub(crate) enum CExpr {
    Const(Value),
    Slot(Slot),
    PrimeSlot(Slot),
    Bound(u8),
    FamilyAt { slots: Arc<Vec<Slot>>, primed: bool, index: Box<CExpr> },
    StatusAt { primed: bool, ptr: Box<CExpr> },
    Not(Box<CExpr>),
    And(Vec<CExpr>),
    Or(Vec<CExpr>),
    Implies(Box<CExpr>, Box<CExpr>),
    Eq(Box<CExpr>, Box<CExpr>),
    Le(Box<CExpr>, Box<CExpr>),
    Ite(Box<CExpr>, Box<CExpr>, Box<CExpr>),
    Forall { over: QuantRange, body: Box<CExpr> },
    Exists { over: QuantRange, body: Box<CExpr> },
    Head(Box<CExpr>),
    Tail(Box<CExpr>),
    Concat(Box<CExpr>, Box<CExpr>),
    Cons(Box<CExpr>, Box<CExpr>),
    Mem(Box<CExpr>, Box<CExpr>),
    IndexOf(Box<CExpr>, Box<CExpr>),
    MapFamily { slots: Arc<Vec<Slot>>, primed: bool, kind: ElemKind, seq: Box<CExpr> },
    Distinct(Box<CExpr>),
    Last(Box<CExpr>),
    Butlast(Box<CExpr>),
    Injective { slots: Arc<Vec<Slot>>, primed: bool },
    InRange { slots: Arc<Vec<Slot>>, primed: bool, elem: Box<CExpr> },
}

/// A typechecked expression bound to one universe.
#[derive(Clone)]
pub struct Compiled {
    pub(crate) cx: CExpr,
    pub(crate) core: Arc<UniverseCore>,
    pub ty: Ty,
    pub(crate) reads_pre: SlotSet,
    pub(crate) reads_post: SlotSet,
}

impl Compiled {
    pub fn eval(&self, pre: &State, post: Option<&State>) -> Result<Value, ExprError> {
        self.eval_raw(pre.raw(), post.map(|s| s.raw().as_slice()))
    }

    pub(crate) fn eval_raw(
        &self,
        pre: &[u8],
        post: Option<&[u8]>,
    ) -> Result<Value, ExprError> {
        let mut binds: SmallVec<[Value; 4]> = SmallVec::new();
        eval_cx(&self.cx, &self.core, pre, post, &mut binds)
    }

    pub(crate) fn eval_bool_raw(
        &self,
        pre: &[u8],
        post: Option<&[u8]>,
    ) -> Result<bool, ExprError> {
        match self.eval_raw(pre, post)? {
            Value::Bool(b) => Ok(b),
            other => Err(ExprError::TypeMismatch {
                context: "toplevel".into(),
                expected: "bool".into(),
                found: other.ty().to_string(),
            }),
        }
    }

    pub fn reads_post_state(&self) -> bool {
        !self.reads_post.is_empty()
    }
}

struct CompileCtx<'a> {
    u: &'a StateUniverse,
    binder_stack: Vec<Ty>,
}

/// Compile and typecheck an expression against a universe.
pub fn compile(e: &Expr, u: &StateUniverse) -> Result<Compiled, ExprError> {
    let mut ctx = CompileCtx { u, binder_stack: Vec::new() };
    let (cx, ty) = compile_rec(e, &mut ctx)?;
    let n = u.var_count();
    let mut reads_pre = SlotSet::new(n);
    let mut reads_post = SlotSet::new(n);
    collect_reads(&cx, u, &mut reads_pre, &mut reads_post);
    Ok(Compiled {
        cx,
        core: Arc::clone(&u.core),
        ty,
        reads_pre,
        reads_post,
    })
}

/// Evaluate an expression on a state pair.
///
/// The post-state must be supplied exactly when the expression contains
/// primed reads. Fresh compilation on every call; hot paths should compile
/// once and reuse [`Compiled`].
pub fn eval(e: &Expr, pre: &State, post: Option<&State>) -> Result<Value, ExprError> {
    let c = compile(e, &pre.universe())?;
    if c.reads_post_state() && post.is_none() {
        return Err(ExprError::MissingPostState);
    }
    c.eval(pre, post)
}

fn mismatch(context: &str, expected: impl ToString, found: impl ToString) -> ExprError {
    ExprError::TypeMismatch {
        context: context.to_string(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

fn family_slots(ctx: &CompileCtx, family: &str) -> Result<(Arc<Vec<Slot>>, Ty), ExprError> {
    let slots = ctx
        .u
        .family_slots(family)
        .ok_or_else(|| ExprError::UnknownFamily(family.to_string()))?;
    let ty = ctx.u.ty_of_slot(slots[0]);
    for &s in slots {
        if ctx.u.ty_of_slot(s) != ty {
            return Err(mismatch("family", ty, ctx.u.ty_of_slot(s)));
        }
    }
    Ok((Arc::new(slots.to_vec()), ty))
}

fn seq_elem_ty(t: Ty, context: &str) -> Result<SeqElem, ExprError> {
    match t {
        Ty::Seq(k) => Ok(k),
        other => Err(mismatch(context, "sequence", other)),
    }
}

fn elem_of(k: SeqElem) -> Ty {
    match k {
        SeqElem::Thread => Ty::Thread,
        SeqElem::Node => Ty::Node,
    }
}

fn compile_rec(e: &Expr, ctx: &mut CompileCtx) -> Result<(CExpr, Ty), ExprError> {
    Ok(match e {
        Expr::Const(v) => (CExpr::Const(v.clone()), v.ty()),
        Expr::Var(v) | Expr::Prime(v) => {
            let slot = ctx
                .u
                .slot(v)
                .ok_or_else(|| ExprError::UndeclaredVariable(v.name()))?;
            let ty = ctx.u.ty_of_slot(slot);
            match e {
                Expr::Var(_) => (CExpr::Slot(slot), ty),
                _ => (CExpr::PrimeSlot(slot), ty),
            }
        }
        Expr::Bound(k) => {
            let depth = ctx.binder_stack.len();
            if (*k as usize) >= depth {
                return Err(ExprError::BoundVarOutOfScope);
            }
            let ty = ctx.binder_stack[depth - 1 - *k as usize];
            (CExpr::Bound(*k), ty)
        }
        Expr::FamilyAt { family, primed, index } => {
            let (slots, ty) = family_slots(ctx, family)?;
            let (ix, ixty) = compile_rec(index, ctx)?;
            if ixty != Ty::Thread {
                return Err(mismatch("family index", Ty::Thread, ixty));
            }
            (CExpr::FamilyAt { slots, primed: *primed, index: Box::new(ix) }, ty)
        }
        Expr::StatusOf { ptr, primed } => {
            if !ctx.u.has_status_heap() {
                return Err(ExprError::NoStatusHeap);
            }
            let (p, pty) = compile_rec(ptr, ctx)?;
            if pty != Ty::Node {
                return Err(mismatch("status()", Ty::Node, pty));
            }
            (CExpr::StatusAt { primed: *primed, ptr: Box::new(p) }, Ty::Status)
        }
        Expr::Not(a) => {
            let (ca, ty) = compile_rec(a, ctx)?;
            if ty != Ty::Bool {
                return Err(mismatch("not", Ty::Bool, ty));
            }
            (CExpr::Not(Box::new(ca)), Ty::Bool)
        }
        Expr::And(xs) | Expr::Or(xs) => {
            let mut cs = Vec::with_capacity(xs.len());
            for x in xs {
                let (cx, ty) = compile_rec(x, ctx)?;
                if ty != Ty::Bool {
                    return Err(mismatch("connective", Ty::Bool, ty));
                }
                cs.push(cx);
            }
            let node = if matches!(e, Expr::And(_)) {
                CExpr::And(cs)
            } else {
                CExpr::Or(cs)
            };
            (node, Ty::Bool)
        }
        Expr::Implies(a, b) => {
            let (ca, ta) = compile_rec(a, ctx)?;
            let (cb, tb) = compile_rec(b, ctx)?;
            if ta != Ty::Bool || tb != Ty::Bool {
                return Err(mismatch("implies", Ty::Bool, if ta != Ty::Bool { ta } else { tb }));
            }
            (CExpr::Implies(Box::new(ca), Box::new(cb)), Ty::Bool)
        }
        Expr::Eq(a, b) => {
            let (ca, ta) = compile_rec(a, ctx)?;
            let (cb, tb) = compile_rec(b, ctx)?;
            if ta != tb {
                return Err(mismatch("eq", ta, tb));
            }
            (CExpr::Eq(Box::new(ca), Box::new(cb)), Ty::Bool)
        }
        Expr::Le(a, b) => {
            let (ca, ta) = compile_rec(a, ctx)?;
            let (cb, tb) = compile_rec(b, ctx)?;
            if ta != Ty::Int || tb != Ty::Int {
                return Err(mismatch("le", Ty::Int, if ta != Ty::Int { ta } else { tb }));
            }
            (CExpr::Le(Box::new(ca), Box::new(cb)), Ty::Bool)
        }
        Expr::Ite(c, t, f) => {
            let (cc, tc) = compile_rec(c, ctx)?;
            if tc != Ty::Bool {
                return Err(mismatch("ite condition", Ty::Bool, tc));
            }
            let (ct, tt) = compile_rec(t, ctx)?;
            let (cf, tf) = compile_rec(f, ctx)?;
            if tt != tf {
                return Err(mismatch("ite branches", tt, tf));
            }
            (CExpr::Ite(Box::new(cc), Box::new(ct), Box::new(cf)), tt)
        }
        Expr::Forall { over, body } | Expr::Exists { over, body } => {
            let ty = match over {
                QuantRange::Thread => Ty::Thread,
                QuantRange::Node => Ty::Node,
            };
            ctx.binder_stack.push(ty);
            let (cb, tb) = compile_rec(body, ctx)?;
            ctx.binder_stack.pop();
            if tb != Ty::Bool {
                return Err(mismatch("quantifier body", Ty::Bool, tb));
            }
            let node = if matches!(e, Expr::Forall { .. }) {
                CExpr::Forall { over: *over, body: Box::new(cb) }
            } else {
                CExpr::Exists { over: *over, body: Box::new(cb) }
            };
            (node, Ty::Bool)
        }
        Expr::Head(a) | Expr::Last(a) => {
            let (ca, ta) = compile_rec(a, ctx)?;
            let k = seq_elem_ty(ta, "hd/last")?;
            let node = if matches!(e, Expr::Head(_)) {
                CExpr::Head(Box::new(ca))
            } else {
                CExpr::Last(Box::new(ca))
            };
            (node, elem_of(k))
        }
        Expr::Tail(a) | Expr::Butlast(a) => {
            let (ca, ta) = compile_rec(a, ctx)?;
            let k = seq_elem_ty(ta, "tl/butlast")?;
            let node = if matches!(e, Expr::Tail(_)) {
                CExpr::Tail(Box::new(ca))
            } else {
                CExpr::Butlast(Box::new(ca))
            };
            (node, Ty::Seq(k))
        }
        Expr::Concat(a, b) => {
            let (ca, ta) = compile_rec(a, ctx)?;
            let (cb, tb) = compile_rec(b, ctx)?;
            let ka = seq_elem_ty(ta, "concat")?;
            let kb = seq_elem_ty(tb, "concat")?;
            if ka != kb {
                return Err(mismatch("concat", ta, tb));
            }
            (CExpr::Concat(Box::new(ca), Box::new(cb)), Ty::Seq(ka))
        }
        Expr::Cons(h, t) => {
            let (ch, th) = compile_rec(h, ctx)?;
            let (ct, tt) = compile_rec(t, ctx)?;
            let k = seq_elem_ty(tt, "cons")?;
            if th != elem_of(k) {
                return Err(mismatch("cons", elem_of(k), th));
            }
            (CExpr::Cons(Box::new(ch), Box::new(ct)), Ty::Seq(k))
        }
        Expr::Mem(x, s) => {
            let (cx, tx) = compile_rec(x, ctx)?;
            let (cs, ts) = compile_rec(s, ctx)?;
            let k = seq_elem_ty(ts, "mem")?;
            if tx != elem_of(k) {
                return Err(mismatch("mem", elem_of(k), tx));
            }
            (CExpr::Mem(Box::new(cx), Box::new(cs)), Ty::Bool)
        }
        Expr::IndexOf(s, x) => {
            let (cs, ts) = compile_rec(s, ctx)?;
            let (cx, tx) = compile_rec(x, ctx)?;
            let k = seq_elem_ty(ts, "index_of")?;
            if tx != elem_of(k) {
                return Err(mismatch("index_of", elem_of(k), tx));
            }
            (CExpr::IndexOf(Box::new(cs), Box::new(cx)), Ty::Int)
        }
        Expr::MapFamily { family, primed, seq } => {
            let (slots, fam_ty) = family_slots(ctx, family)?;
            let out_kind = match fam_ty {
                Ty::Thread => ElemKind::Thread,
                Ty::Node => ElemKind::Node,
                other => return Err(mismatch("fmap family", "thread or node", other)),
            };
            let (cs, ts) = compile_rec(seq, ctx)?;
            if seq_elem_ty(ts, "fmap")? != SeqElem::Thread {
                return Err(mismatch("fmap", "seq<thread>", ts));
            }
            (
                CExpr::MapFamily { slots, primed: *primed, kind: out_kind, seq: Box::new(cs) },
                Ty::Seq(match out_kind {
                    ElemKind::Thread => SeqElem::Thread,
                    ElemKind::Node => SeqElem::Node,
                }),
            )
        }
        Expr::Distinct(a) => {
            let (ca, ta) = compile_rec(a, ctx)?;
            seq_elem_ty(ta, "distinct")?;
            (CExpr::Distinct(Box::new(ca)), Ty::Bool)
        }
        Expr::Injective { family, primed } => {
            let (slots, _) = family_slots(ctx, family)?;
            (CExpr::Injective { slots, primed: *primed }, Ty::Bool)
        }
        Expr::InRange { family, primed, elem } => {
            let (slots, fam_ty) = family_slots(ctx, family)?;
            let (ce, te) = compile_rec(elem, ctx)?;
            if te != fam_ty {
                return Err(mismatch("ran-mem", fam_ty, te));
            }
            (CExpr::InRange { slots, primed: *primed, elem: Box::new(ce) }, Ty::Bool)
        }
    })
}

fn collect_reads(cx: &CExpr, u: &StateUniverse, pre: &mut SlotSet, post: &mut SlotSet) {
    match cx {
        CExpr::Const(_) | CExpr::Bound(_) => {}
        CExpr::Slot(s) => pre.insert(*s),
        CExpr::PrimeSlot(s) => post.insert(*s),
        CExpr::FamilyAt { slots, primed, index } => {
            let target = if *primed { &mut *post } else { &mut *pre };
            for &s in slots.iter() {
                target.insert(s);
            }
            collect_reads(index, u, pre, post);
        }
        CExpr::StatusAt { primed, ptr } => {
            let target = if *primed { &mut *post } else { &mut *pre };
            for n in 0..u.node_count() {
                if let Some(s) = u.status_slot(n) {
                    target.insert(s);
                }
            }
            collect_reads(ptr, u, pre, post);
        }
        CExpr::MapFamily { slots, primed, seq, .. } => {
            let target = if *primed { &mut *post } else { &mut *pre };
            for &s in slots.iter() {
                target.insert(s);
            }
            collect_reads(seq, u, pre, post);
        }
        CExpr::Injective { slots, primed } => {
            let target = if *primed { &mut *post } else { &mut *pre };
            for &s in slots.iter() {
                target.insert(s);
            }
        }
        CExpr::InRange { slots, primed, elem } => {
            let target = if *primed { &mut *post } else { &mut *pre };
            for &s in slots.iter() {
                target.insert(s);
            }
            collect_reads(elem, u, pre, post);
        }
        CExpr::Not(a)
        | CExpr::Head(a)
        | CExpr::Tail(a)
        | CExpr::Distinct(a)
        | CExpr::Last(a)
        | CExpr::Butlast(a)
        | CExpr::Forall { body: a, .. }
        | CExpr::Exists { body: a, .. } => collect_reads(a, u, pre, post),
        CExpr::And(xs) | CExpr::Or(xs) => {
            for x in xs {
                collect_reads(x, u, pre, post);
            }
        }
        CExpr::Implies(a, b)
        | CExpr::Eq(a, b)
        | CExpr::Le(a, b)
        | CExpr::Concat(a, b)
        | CExpr::Cons(a, b)
        | CExpr::Mem(a, b)
        | CExpr::IndexOf(a, b) => {
            collect_reads(a, u, pre, post);
            collect_reads(b, u, pre, post);
        }
        CExpr::Ite(a, b, c) => {
            collect_reads(a, u, pre, post);
            collect_reads(b, u, pre, post);
            collect_reads(c, u, pre, post);
        }
    }
}

#[inline]
fn slot_value<'a>(core: &'a UniverseCore, raw: &[u8], slot: Slot) -> &'a Value {
    &core.value_tables[slot][raw[slot] as usize]
}

fn eval_cx(
    cx: &CExpr,
    core: &UniverseCore,
    pre: &[u8],
    post: Option<&[u8]>,
    binds: &mut SmallVec<[Value; 4]>,
) -> Result<Value, ExprError> {
    macro_rules! eval_bool {
        ($e:expr) => {
            match eval_cx($e, core, pre, post, binds)? {
                Value::Bool(b) => b,
                // unreachable after typechecking
                _ => return Err(ExprError::TypeMismatch {
                    context: "bool".into(),
                    expected: "bool".into(),
                    found: "non-bool".into(),
                }),
            }
        };
    }
    Ok(match cx {
        CExpr::Const(v) => v.clone(),
        CExpr::Slot(s) => slot_value(core, pre, *s).clone(),
        CExpr::PrimeSlot(s) => {
            let post = post.ok_or(ExprError::MissingPostState)?;
            slot_value(core, post, *s).clone()
        }
        CExpr::Bound(k) => {
            let depth = binds.len();
            binds
                .get(depth - 1 - *k as usize)
                .cloned()
                .ok_or(ExprError::BoundVarOutOfScope)?
        }
        CExpr::FamilyAt { slots, primed, index } => {
            let ix = eval_cx(index, core, pre, post, binds)?;
            let t = match ix {
                Value::Thread(t) => t,
                _ => return Err(ExprError::BoundVarOutOfScope),
            };
            let slot = slots[(t.0 - 1) as usize];
            let raw = if *primed {
                post.ok_or(ExprError::MissingPostState)?
            } else {
                pre
            };
            slot_value(core, raw, slot).clone()
        }
        CExpr::StatusAt { primed, ptr } => {
            let pv = eval_cx(ptr, core, pre, post, binds)?;
            let node = match pv {
                Value::Node(NodeRef::Node(k)) => k,
                Value::Node(NodeRef::Uninit) => {
                    return Err(ExprError::DereferenceUninitialised)
                }
                _ => return Err(ExprError::DereferenceUninitialised),
            };
            let slot = core.status_slots[node as usize];
            let raw = if *primed {
                post.ok_or(ExprError::MissingPostState)?
            } else {
                pre
            };
            slot_value(core, raw, slot).clone()
        }
        CExpr::Not(a) => Value::Bool(!eval_bool!(a)),
        CExpr::And(xs) => {
            for x in xs {
                if !eval_bool!(x) {
                    return Ok(Value::Bool(false));
                }
            }
            Value::Bool(true)
        }
        CExpr::Or(xs) => {
            for x in xs {
                if eval_bool!(x) {
                    return Ok(Value::Bool(true));
                }
            }
            Value::Bool(false)
        }
        CExpr::Implies(a, b) => {
            if !eval_bool!(a) {
                Value::Bool(true)
            } else {
                Value::Bool(eval_bool!(b))
            }
        }
        CExpr::Eq(a, b) => {
            let va = eval_cx(a, core, pre, post, binds)?;
            let vb = eval_cx(b, core, pre, post, binds)?;
            Value::Bool(va == vb)
        }
        CExpr::Le(a, b) => {
            let va = eval_cx(a, core, pre, post, binds)?;
            let vb = eval_cx(b, core, pre, post, binds)?;
            match (va, vb) {
                (Value::Int(x), Value::Int(y)) => Value::Bool(x <= y),
                _ => {
                    return Err(ExprError::TypeMismatch {
                        context: "le".into(),
                        expected: "int".into(),
                        found: "non-int".into(),
                    })
                }
            }
        }
        CExpr::Ite(c, t, f) => {
            if eval_bool!(c) {
                eval_cx(t, core, pre, post, binds)?
            } else {
                eval_cx(f, core, pre, post, binds)?
            }
        }
        CExpr::Forall { over, body } => {
            for v in quant_values(*over, core) {
                binds.push(v);
                let ok = eval_cx(body, core, pre, post, binds)?;
                binds.pop();
                if ok != Value::Bool(true) {
                    return Ok(Value::Bool(false));
                }
            }
            Value::Bool(true)
        }
        CExpr::Exists { over, body } => {
            for v in quant_values(*over, core) {
                binds.push(v);
                let ok = eval_cx(body, core, pre, post, binds)?;
                binds.pop();
                if ok == Value::Bool(true) {
                    return Ok(Value::Bool(true));
                }
            }
            Value::Bool(false)
        }
        CExpr::Head(a) => {
            let s = eval_seq(a, core, pre, post, binds)?;
            s.head().ok_or(ExprError::EmptySequence("hd"))?
        }
        CExpr::Tail(a) => {
            let s = eval_seq(a, core, pre, post, binds)?;
            Value::Seq(s.tail().ok_or(ExprError::EmptySequence("tl"))?)
        }
        CExpr::Last(a) => {
            let s = eval_seq(a, core, pre, post, binds)?;
            s.last_elem().ok_or(ExprError::EmptySequence("last"))?
        }
        CExpr::Butlast(a) => {
            let s = eval_seq(a, core, pre, post, binds)?;
            Value::Seq(s.butlast().ok_or(ExprError::EmptySequence("butlast"))?)
        }
        CExpr::Concat(a, b) => {
            let sa = eval_seq(a, core, pre, post, binds)?;
            let sb = eval_seq(b, core, pre, post, binds)?;
            Value::Seq(sa.concat(&sb).expect("typechecked concat"))
        }
        CExpr::Cons(h, t) => {
            let vh = eval_cx(h, core, pre, post, binds)?;
            let st = eval_seq(t, core, pre, post, binds)?;
            Value::Seq(st.cons(&vh).expect("typechecked cons"))
        }
        CExpr::Mem(x, s) => {
            let vx = eval_cx(x, core, pre, post, binds)?;
            let vs = eval_seq(s, core, pre, post, binds)?;
            Value::Bool(vs.contains(&vx))
        }
        CExpr::IndexOf(s, x) => {
            let vs = eval_seq(s, core, pre, post, binds)?;
            let vx = eval_cx(x, core, pre, post, binds)?;
            match vs.position_of(&vx) {
                Some(i) => Value::Int(i as i64),
                None => return Err(ExprError::UnguardedIndex),
            }
        }
        CExpr::MapFamily { slots, primed, kind, seq } => {
            let vs = eval_seq(seq, core, pre, post, binds)?;
            let raw = if *primed {
                post.ok_or(ExprError::MissingPostState)?
            } else {
                pre
            };
            let mut out: SmallVec<[Value; 8]> = SmallVec::new();
            for v in vs.iter() {
                let t = match v {
                    Value::Thread(t) => t,
                    _ => return Err(ExprError::BoundVarOutOfScope),
                };
                out.push(slot_value(core, raw, slots[(t.0 - 1) as usize]).clone());
            }
            match kind {
                ElemKind::Thread => Value::Seq(SeqVal::from_threads(out.iter().map(|v| {
                    match v {
                        Value::Thread(t) => *t,
                        _ => unreachable!(),
                    }
                }))),
                ElemKind::Node => Value::Seq(SeqVal::from_nodes(out.iter().map(|v| match v {
                    Value::Node(n) => *n,
                    _ => unreachable!(),
                }))),
            }
        }
        CExpr::Distinct(a) => {
            let s = eval_seq(a, core, pre, post, binds)?;
            Value::Bool(s.is_distinct())
        }
        CExpr::Injective { slots, primed } => {
            let raw = if *primed {
                post.ok_or(ExprError::MissingPostState)?
            } else {
                pre
            };
            let mut seen: SmallVec<[&Value; 8]> = SmallVec::new();
            for &slot in slots.iter() {
                let v = slot_value(core, raw, slot);
                if seen.contains(&v) {
                    return Ok(Value::Bool(false));
                }
                seen.push(v);
            }
            Value::Bool(true)
        }
        CExpr::InRange { slots, primed, elem } => {
            let ve = eval_cx(elem, core, pre, post, binds)?;
            let raw = if *primed {
                post.ok_or(ExprError::MissingPostState)?
            } else {
                pre
            };
            Value::Bool(slots.iter().any(|&s| *slot_value(core, raw, s) == ve))
        }
    })
}

fn eval_seq(
    cx: &CExpr,
    core: &UniverseCore,
    pre: &[u8],
    post: Option<&[u8]>,
    binds: &mut SmallVec<[Value; 4]>,
) -> Result<SeqVal, ExprError> {
    match eval_cx(cx, core, pre, post, binds)? {
        Value::Seq(s) => Ok(s),
        _ => Err(ExprError::TypeMismatch {
            context: "sequence op".into(),
            expected: "sequence".into(),
            found: "non-sequence".into(),
        }),
    }
}

fn quant_values(over: QuantRange, core: &UniverseCore) -> Vec<Value> {
    match over {
        QuantRange::Thread => (1..=core.thread_count)
            .map(|i| Value::Thread(ThreadId(i)))
            .collect(),
        QuantRange::Node => (0..core.node_count)
            .map(|k| Value::Node(NodeRef::Node(k)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::universe::Var;
    use crate::value::{Domain, Status};

    fn u() -> StateUniverse {
        StateUniverse::builder(2, 3)
            .global("x", Domain::Int { lo: 0, hi: 5 })
            .global("tail", Domain::node(3))
            .global("q", Domain::ThreadSeq { thread_count: 2, max_len: 2 })
            .per_thread("cur", Domain::node(3))
            .per_thread("prev", Domain::node_or_uninit(3))
            .status_heap()
            .build()
            .unwrap()
    }

    fn base_state(u: &StateUniverse) -> State {
        u.state_of(&[
            (Var::global("x"), Value::Int(5)),
            (Var::global("tail"), Value::Node(NodeRef::Node(0))),
            (
                Var::global("q"),
                Value::Seq(SeqVal::from_threads([ThreadId(1), ThreadId(2)])),
            ),
            (Var::per_thread("cur", ThreadId(1)), Value::Node(NodeRef::Node(1))),
            (Var::per_thread("cur", ThreadId(2)), Value::Node(NodeRef::Node(2))),
            (Var::per_thread("prev", ThreadId(1)), Value::Node(NodeRef::Node(0))),
            (Var::per_thread("prev", ThreadId(2)), Value::Node(NodeRef::Uninit)),
            (Var::status_cell(0), Value::Status(Status::Granted)),
            (Var::status_cell(1), Value::Status(Status::Pending)),
            (Var::status_cell(2), Value::Status(Status::Pending)),
        ])
        .unwrap()
    }

    #[test]
    fn identity_relation_on_equal_states() {
        let u = u();
        let s = base_state(&u);
        let e = Expr::pvar("x").eq(Expr::var("x"));
        assert_eq!(eval(&e, &s, Some(&s)).unwrap(), Value::Bool(true));
    }

    #[test]
    fn list_head_and_index() {
        let u = u();
        let s = base_state(&u);
        let hd = Expr::var("q").hd();
        assert_eq!(eval(&hd, &s, None).unwrap(), Value::Thread(ThreadId(1)));
        let ix = Expr::index_of(Expr::var("q"), Expr::thread(ThreadId(2)));
        assert_eq!(eval(&ix, &s, None).unwrap(), Value::Int(1));
    }

    #[test]
    fn unguarded_index_is_an_error() {
        let u = u();
        let s = base_state(&u);
        let empty = s
            .with(&Var::global("q"), &Value::Seq(SeqVal::empty(ElemKind::Thread)))
            .unwrap();
        let ix = Expr::index_of(Expr::var("q"), Expr::thread(ThreadId(2)));
        assert_eq!(eval(&ix, &empty, None), Err(ExprError::UnguardedIndex));
    }

    #[test]
    fn missing_post_state_detected() {
        let u = u();
        let s = base_state(&u);
        let e = Expr::pvar("x").eq(Expr::var("x"));
        assert_eq!(eval(&e, &s, None), Err(ExprError::MissingPostState));
    }

    #[test]
    fn dereference_uninitialised_errors() {
        let u = u();
        let s = base_state(&u);
        let e = Expr::status_of(Expr::var("prev_t2"));
        assert_eq!(eval(&e, &s, None), Err(ExprError::DereferenceUninitialised));
    }

    #[test]
    fn short_circuit_guards_partial_ops() {
        let u = u();
        let s = base_state(&u);
        // prev_t2 is uninitialised; the left conjunct is false so the
        // dereference on the right must never run.
        let e = Expr::var("x")
            .eq(Expr::int(0))
            .and(Expr::status_of(Expr::var("prev_t2")).eq(Expr::status(Status::Granted)));
        assert_eq!(eval(&e, &s, None).unwrap(), Value::Bool(false));
    }

    #[test]
    fn fmap_and_structural_invariant_shape() {
        let u = u();
        let s = base_state(&u);
        // cons(tail, []) has node kind; fmap(cur, q) = [n1, n2]
        let lhs = Expr::fmap("cur", Expr::var("q"));
        let v = eval(&lhs, &s, None).unwrap();
        assert_eq!(v.to_string(), "[n1,n2]");
        let rhs = Expr::var("q").tl();
        assert_eq!(eval(&rhs, &s, None).unwrap().to_string(), "[t2]");
    }

    #[test]
    fn quantifiers_and_injectivity() {
        let u = u();
        let s = base_state(&u);
        let inj = Expr::injective("cur");
        assert_eq!(eval(&inj, &s, None).unwrap(), Value::Bool(true));
        let all_in_q = Expr::forall(
            QuantRange::Thread,
            Expr::Bound(0).mem(Expr::var("q")),
        );
        assert_eq!(eval(&all_in_q, &s, None).unwrap(), Value::Bool(true));
        let ran = Expr::in_range("cur", Expr::var("tail"));
        assert_eq!(eval(&ran, &s, None).unwrap(), Value::Bool(false));
    }

    #[test]
    fn type_errors_caught_at_compile() {
        let u = u();
        let bad = Expr::var("x").eq(Expr::var("tail"));
        assert!(matches!(
            compile(&bad, &u),
            Err(ExprError::TypeMismatch { .. })
        ));
        let undeclared = Expr::var("nope").eq(Expr::int(0));
        assert!(matches!(
            compile(&undeclared, &u),
            Err(ExprError::UndeclaredVariable(_))
        ));
    }

    #[test]
    fn eval_is_deterministic() {
        let u = u();
        let s = base_state(&u);
        let e = Expr::var("q").distinct().and(Expr::injective("cur"));
        let a = eval(&e, &s, None).unwrap();
        let b = eval(&e, &s, None).unwrap();
        assert_eq!(a, b);
    }
}
