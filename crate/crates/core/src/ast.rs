//! Concurrent program representation: atomic instructions with footprints and
//! ordering annotations, composed sequentially, in parallel, or by
//! parallelized sequential composition.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::eval::{compile, Compiled, ExprError};
use crate::expr::{Expr, Predicate};
use crate::universe::{RawState, StateUniverse, UniverseCore, Var};
use crate::value::{NodeRef, ThreadId, Ty, Value};

/// Assignment target: a plain variable or a status cell reached through a
/// node-valued expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Target {
    Var(Var),
    StatusCell(Expr),
}

/// One component of an atomic block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AtomicStep {
    Set { target: Target, value: Expr },
    /// Simultaneous exchange of two cells.
    Exchange(Target, Target),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InstrKind {
    Assign { target: Target, value: Expr },
    /// Sequence of updates executed as one step; member right-hand sides read
    /// the partially updated state in order.
    AtomicBlock(Vec<AtomicStep>),
    /// Full fence: orders everything, touches nothing.
    Fence,
    /// Labelled no-op with empty footprint (e.g. the critical-section point).
    Marker,
}

/// Store-ordering annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OrderAnno {
    None,
    /// The instruction is ordered after all program-order-earlier instructions.
    Release,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instr {
    pub kind: InstrKind,
    pub ordering: OrderAnno,
    pub label: Option<String>,
}

impl Instr {
    pub fn assign(target: Target, value: Expr) -> Instr {
        Instr { kind: InstrKind::Assign { target, value }, ordering: OrderAnno::None, label: None }
    }

    pub fn atomic(steps: Vec<AtomicStep>) -> Instr {
        Instr { kind: InstrKind::AtomicBlock(steps), ordering: OrderAnno::None, label: None }
    }

    pub fn fence() -> Instr {
        Instr { kind: InstrKind::Fence, ordering: OrderAnno::None, label: None }
    }

    pub fn marker(label: &str) -> Instr {
        Instr { kind: InstrKind::Marker, ordering: OrderAnno::None, label: Some(label.into()) }
    }

    pub fn with_label(mut self, label: &str) -> Instr {
        self.label = Some(label.into());
        self
    }

    pub fn with_release(mut self) -> Instr {
        self.ordering = OrderAnno::Release;
        self
    }

    pub fn is_fence(&self) -> bool {
        matches!(self.kind, InstrKind::Fence)
    }
}

/// Program tree. Subtrees are shared so that continuations peeled off during
/// exploration are cheap.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Command {
    Skip,
    Instr(Instr),
    Seq(Arc<Command>, Arc<Command>),
    /// Parallelized sequential composition under a named memory model; only
    /// meaningful before the reordering transformation.
    PpSeq { model: String, left: Arc<Command>, right: Arc<Command> },
    Par(Arc<Command>, Arc<Command>),
    ParN(Vec<(ThreadId, Arc<Command>)>),
    While { guard: Predicate, body: Arc<Command>, label: Option<String> },
    /// Busy wait until the guard holds; one guard load per iteration.
    Spin { guard: Predicate, label: Option<String> },
    /// Checkable annotation: evaluated at the point reached, takes no step.
    Assert { pred: Predicate, label: String },
}

impl Command {
    pub fn instr(i: Instr) -> Command {
        Command::Instr(i)
    }

    pub fn seq(a: Command, b: Command) -> Command {
        Command::Seq(Arc::new(a), Arc::new(b))
    }

    /// Right-nested sequence of a non-empty list.
    pub fn seq_all(mut cs: Vec<Command>) -> Command {
        match cs.len() {
            0 => Command::Skip,
            1 => cs.pop().unwrap(),
            _ => {
                let mut it = cs.into_iter().rev();
                let mut acc = it.next().unwrap();
                for c in it {
                    acc = Command::seq(c, acc);
                }
                acc
            }
        }
    }

    pub fn ppseq(model: &str, a: Command, b: Command) -> Command {
        Command::PpSeq { model: model.into(), left: Arc::new(a), right: Arc::new(b) }
    }

    /// Right-nested parallelized sequential chain.
    pub fn ppseq_all(model: &str, mut cs: Vec<Command>) -> Command {
        match cs.len() {
            0 => Command::Skip,
            1 => cs.pop().unwrap(),
            _ => {
                let mut it = cs.into_iter().rev();
                let mut acc = it.next().unwrap();
                for c in it {
                    acc = Command::ppseq(model, c, acc);
                }
                acc
            }
        }
    }

    pub fn par(a: Command, b: Command) -> Command {
        Command::Par(Arc::new(a), Arc::new(b))
    }

    pub fn parn(children: Vec<(ThreadId, Command)>) -> Command {
        Command::ParN(children.into_iter().map(|(t, c)| (t, Arc::new(c))).collect())
    }

    pub fn spin(guard: Predicate, label: &str) -> Command {
        Command::Spin { guard, label: Some(label.into()) }
    }

    pub fn assert_at(pred: Predicate, label: &str) -> Command {
        Command::Assert { pred, label: label.into() }
    }

    pub fn is_skip(&self) -> bool {
        matches!(self, Command::Skip)
    }

    /// Visit every node (pre-order).
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Command)) {
        f(self);
        match self {
            Command::Skip | Command::Instr(_) | Command::Spin { .. } | Command::Assert { .. } => {}
            Command::Seq(a, b) | Command::PpSeq { left: a, right: b, .. } | Command::Par(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Command::ParN(children) => {
                for (_, c) in children {
                    c.visit(f);
                }
            }
            Command::While { body, .. } => body.visit(f),
        }
    }

    /// Canonical s-expression text.
    pub fn canonical(&self) -> String {
        crate::sexpr::command_to_sexp(self).to_string()
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.canonical())
    }
}

// --- footprints ---------------------------------------------------------------

/// Location class for ordering decisions. All status cells form one
/// conservative class: pointer values are dynamic, so any two dereferencing
/// instructions are treated as conflicting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LocClass {
    Var(Var),
    HeapStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Footprint {
    pub reads: BTreeSet<LocClass>,
    pub writes: BTreeSet<LocClass>,
}

impl Footprint {
    pub fn union(mut self, other: Footprint) -> Footprint {
        self.reads.extend(other.reads);
        self.writes.extend(other.writes);
        self
    }

    /// True when the two footprints conflict: either side writes something
    /// the other reads or writes.
    pub fn conflicts(&self, other: &Footprint) -> bool {
        let touches = |w: &BTreeSet<LocClass>, o: &Footprint| {
            w.iter().any(|c| o.reads.contains(c) || o.writes.contains(c))
        };
        touches(&self.writes, other) || touches(&other.writes, self)
    }
}

/// Locations read by an expression. Dynamic accesses (dereference, dynamic
/// family index) widen to the whole class.
pub fn expr_reads(e: &Expr, threads: u8) -> BTreeSet<LocClass> {
    let mut reads = BTreeSet::new();
    e.visit(&mut |node| match node {
        Expr::Var(v) | Expr::Prime(v) => {
            if let Var::NodeStatus(_) = v {
                reads.insert(LocClass::HeapStatus);
            } else {
                reads.insert(LocClass::Var(v.clone()));
            }
        }
        Expr::StatusOf { .. } => {
            reads.insert(LocClass::HeapStatus);
        }
        Expr::FamilyAt { family, index, .. } => {
            // A constant index touches one instance; anything else touches
            // the whole family.
            if let Expr::Const(Value::Thread(t)) = &**index {
                reads.insert(LocClass::Var(Var::per_thread(family, *t)));
            } else {
                for t in 1..=threads {
                    reads.insert(LocClass::Var(Var::per_thread(family, ThreadId(t))));
                }
            }
        }
        Expr::MapFamily { family, .. }
        | Expr::Injective { family, .. }
        | Expr::InRange { family, .. } => {
            for t in 1..=threads {
                reads.insert(LocClass::Var(Var::per_thread(family, ThreadId(t))));
            }
        }
        _ => {}
    });
    reads
}

fn target_footprint(t: &Target, threads: u8) -> Footprint {
    let mut fp = Footprint::default();
    match t {
        Target::Var(v) => {
            fp.writes.insert(LocClass::Var(v.clone()));
        }
        Target::StatusCell(ptr) => {
            fp.reads.extend(expr_reads(ptr, threads));
            fp.writes.insert(LocClass::HeapStatus);
        }
    }
    fp
}

/// Read and write sets of one instruction.
pub fn footprint(i: &Instr, threads: u8) -> Footprint {
    match &i.kind {
        InstrKind::Assign { target, value } => {
            let mut fp = target_footprint(target, threads);
            fp.reads.extend(expr_reads(value, threads));
            fp
        }
        InstrKind::AtomicBlock(steps) => {
            let mut fp = Footprint::default();
            for s in steps {
                match s {
                    AtomicStep::Set { target, value } => {
                        fp = fp.union(target_footprint(target, threads));
                        fp.reads.extend(expr_reads(value, threads));
                    }
                    AtomicStep::Exchange(a, b) => {
                        for t in [a, b] {
                            let tf = target_footprint(t, threads);
                            fp.reads.extend(tf.writes.iter().cloned());
                            fp = fp.union(tf);
                        }
                    }
                }
            }
            fp
        }
        InstrKind::Fence | InstrKind::Marker => Footprint::default(),
    }
}

// --- validation -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Defect {
    pub at: String,
    pub message: String,
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.at, self.message)
    }
}

/// Structural and typing validation of a whole program.
pub fn validate(c: &Command, u: &StateUniverse) -> Result<(), Vec<Defect>> {
    let mut defects = Vec::new();
    let mut ppseq_model: Option<String> = None;
    validate_rec(c, u, "program", &mut defects, &mut ppseq_model);
    if defects.is_empty() {
        Ok(())
    } else {
        Err(defects)
    }
}

fn check_expr(
    e: &Expr,
    want: Option<Ty>,
    u: &StateUniverse,
    at: &str,
    what: &str,
    defects: &mut Vec<Defect>,
) {
    if !e.is_prime_free() {
        defects.push(Defect { at: at.into(), message: format!("{what} reads the post-state") });
        return;
    }
    match compile(e, u) {
        Err(err) => defects.push(Defect { at: at.into(), message: format!("{what}: {err}") }),
        Ok(c) => {
            if let Some(want) = want {
                if c.ty != want {
                    defects.push(Defect {
                        at: at.into(),
                        message: format!("{what}: expected {want}, found {}", c.ty),
                    });
                }
            }
        }
    }
}

fn check_target(t: &Target, u: &StateUniverse, at: &str, defects: &mut Vec<Defect>) -> Option<Ty> {
    match t {
        Target::Var(v) => match u.domain_of(v) {
            None => {
                defects.push(Defect {
                    at: at.into(),
                    message: format!("assignment to undeclared variable '{}'", v.name()),
                });
                None
            }
            Some(d) => Some(d.ty()),
        },
        Target::StatusCell(ptr) => {
            if !u.has_status_heap() {
                defects.push(Defect {
                    at: at.into(),
                    message: "status write but universe declares no status heap".into(),
                });
            }
            check_expr(ptr, Some(Ty::Node), u, at, "status target pointer", defects);
            Some(Ty::Status)
        }
    }
}

fn validate_instr(i: &Instr, u: &StateUniverse, at: &str, defects: &mut Vec<Defect>) {
    let at = i.label.as_deref().unwrap_or(at);
    match &i.kind {
        InstrKind::Assign { target, value } => {
            let want = check_target(target, u, at, defects);
            check_expr(value, want, u, at, "assigned value", defects);
        }
        InstrKind::AtomicBlock(steps) => {
            if steps.is_empty() {
                defects.push(Defect { at: at.into(), message: "empty atomic block".into() });
            }
            for s in steps {
                match s {
                    AtomicStep::Set { target, value } => {
                        let want = check_target(target, u, at, defects);
                        check_expr(value, want, u, at, "assigned value", defects);
                    }
                    AtomicStep::Exchange(a, b) => {
                        let ta = check_target(a, u, at, defects);
                        let tb = check_target(b, u, at, defects);
                        if let (Some(ta), Some(tb)) = (ta, tb) {
                            if ta != tb {
                                defects.push(Defect {
                                    at: at.into(),
                                    message: format!("exchange of mismatched types {ta} and {tb}"),
                                });
                            }
                        }
                    }
                }
            }
        }
        InstrKind::Fence | InstrKind::Marker => {}
    }
}

fn validate_rec(
    c: &Command,
    u: &StateUniverse,
    at: &str,
    defects: &mut Vec<Defect>,
    ppseq_model: &mut Option<String>,
) {
    match c {
        Command::Skip => {}
        Command::Instr(i) => validate_instr(i, u, at, defects),
        Command::Seq(a, b) => {
            validate_rec(a, u, at, defects, ppseq_model);
            validate_rec(b, u, at, defects, ppseq_model);
        }
        Command::PpSeq { model, left, right } => {
            match ppseq_model {
                Some(m) if m != model => defects.push(Defect {
                    at: at.into(),
                    message: format!("inconsistent memory-model tags '{m}' and '{model}'"),
                }),
                Some(_) => {}
                None => *ppseq_model = Some(model.clone()),
            }
            validate_rec(left, u, at, defects, ppseq_model);
            validate_rec(right, u, at, defects, ppseq_model);
        }
        Command::Par(a, b) => {
            validate_rec(a, u, at, defects, ppseq_model);
            validate_rec(b, u, at, defects, ppseq_model);
        }
        Command::ParN(children) => {
            let mut seen = BTreeSet::new();
            for (t, child) in children {
                if !seen.insert(*t) {
                    defects.push(Defect {
                        at: at.into(),
                        message: format!("duplicate thread index {t} in parallel composition"),
                    });
                }
                if t.0 == 0 || t.0 > u.thread_count() {
                    defects.push(Defect {
                        at: at.into(),
                        message: format!("thread index {t} outside 1..={}", u.thread_count()),
                    });
                }
                validate_rec(child, u, at, defects, ppseq_model);
            }
        }
        Command::While { guard, body, label } => {
            check_expr(
                guard.expr(),
                Some(Ty::Bool),
                u,
                label.as_deref().unwrap_or(at),
                "loop guard",
                defects,
            );
            validate_rec(body, u, at, defects, ppseq_model);
        }
        Command::Spin { guard, label } => {
            check_expr(
                guard.expr(),
                Some(Ty::Bool),
                u,
                label.as_deref().unwrap_or(at),
                "spin guard",
                defects,
            );
        }
        Command::Assert { pred, label } => {
            check_expr(pred.expr(), Some(Ty::Bool), u, label, "assertion", defects);
        }
    }
}

// --- compiled instruction execution -----------------------------------------------

pub(crate) enum CTarget {
    Slot(usize),
    Status(Compiled),
}

pub(crate) enum CStep {
    Set { target: CTarget, value: Compiled },
    Exchange(CTarget, CTarget),
}

/// An instruction compiled against a universe, ready to apply to raw states.
pub(crate) struct CompiledInstr {
    pub steps: Vec<CStep>,
}

fn compile_target(t: &Target, u: &StateUniverse) -> Result<CTarget, ExprError> {
    match t {
        Target::Var(v) => u
            .slot(v)
            .map(CTarget::Slot)
            .ok_or_else(|| ExprError::UndeclaredVariable(v.name())),
        Target::StatusCell(ptr) => Ok(CTarget::Status(compile(ptr, u)?)),
    }
}

impl CompiledInstr {
    pub(crate) fn new(i: &Instr, u: &StateUniverse) -> Result<CompiledInstr, ExprError> {
        let mut steps = Vec::new();
        match &i.kind {
            InstrKind::Assign { target, value } => {
                steps.push(CStep::Set {
                    target: compile_target(target, u)?,
                    value: compile(value, u)?,
                });
            }
            InstrKind::AtomicBlock(block) => {
                for s in block {
                    match s {
                        AtomicStep::Set { target, value } => steps.push(CStep::Set {
                            target: compile_target(target, u)?,
                            value: compile(value, u)?,
                        }),
                        AtomicStep::Exchange(a, b) => steps.push(CStep::Exchange(
                            compile_target(a, u)?,
                            compile_target(b, u)?,
                        )),
                    }
                }
            }
            InstrKind::Fence | InstrKind::Marker => {}
        }
        Ok(CompiledInstr { steps })
    }

    /// Execute on a packed state; member updates see earlier members' writes.
    pub(crate) fn apply(
        &self,
        core: &UniverseCore,
        raw: &RawState,
    ) -> Result<RawState, ExprError> {
        let mut cur = raw.clone();
        for step in &self.steps {
            match step {
                CStep::Set { target, value } => {
                    let v = value.eval_raw(&cur, None)?;
                    let slot = resolve_target(target, core, &cur)?;
                    let idx = value_index_in(core, slot, &v)?;
                    cur[slot] = idx;
                }
                CStep::Exchange(a, b) => {
                    let sa = resolve_target(a, core, &cur)?;
                    let sb = resolve_target(b, core, &cur)?;
                    let va = core.value_tables[sa][cur[sa] as usize].clone();
                    let vb = core.value_tables[sb][cur[sb] as usize].clone();
                    cur[sa] = value_index_in(core, sa, &vb)?;
                    cur[sb] = value_index_in(core, sb, &va)?;
                }
            }
        }
        Ok(cur)
    }
}

fn resolve_target(
    t: &CTarget,
    core: &UniverseCore,
    cur: &RawState,
) -> Result<usize, ExprError> {
    match t {
        CTarget::Slot(s) => Ok(*s),
        CTarget::Status(ptr) => match ptr.eval_raw(cur, None)? {
            Value::Node(NodeRef::Node(k)) => Ok(core.status_slots[k as usize]),
            Value::Node(NodeRef::Uninit) => Err(ExprError::DereferenceUninitialised),
            _ => Err(ExprError::DereferenceUninitialised),
        },
    }
}

fn value_index_in(core: &UniverseCore, slot: usize, v: &Value) -> Result<u8, ExprError> {
    core.value_tables[slot]
        .iter()
        .position(|candidate| candidate == v)
        .map(|i| i as u8)
        .ok_or_else(|| ExprError::TypeMismatch {
            context: "assignment".into(),
            expected: "value inside the target's domain".into(),
            found: v.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Domain;

    fn u() -> StateUniverse {
        StateUniverse::builder(2, 3)
            .global("tail", Domain::node(3))
            .global("q", Domain::ThreadSeq { thread_count: 2, max_len: 2 })
            .per_thread("cur", Domain::node(3))
            .per_thread("r", Domain::node_or_uninit(3))
            .per_thread("prev", Domain::node_or_uninit(3))
            .status_heap()
            .build()
            .unwrap()
    }

    fn t(n: u8) -> ThreadId {
        ThreadId(n)
    }

    #[test]
    fn register_load_footprint() {
        // r := cur, for thread 1: reads cur_t1, writes r_t1
        let u = u();
        let i = Instr::assign(Target::Var(Var::per_thread("r", t(1))), Expr::var("cur_t1"));
        let fp = footprint(&i, u.thread_count());
        assert_eq!(
            fp.reads.into_iter().collect::<Vec<_>>(),
            vec![LocClass::Var(Var::per_thread("cur", t(1)))]
        );
        assert_eq!(
            fp.writes.into_iter().collect::<Vec<_>>(),
            vec![LocClass::Var(Var::per_thread("r", t(1)))]
        );
    }

    #[test]
    fn status_store_footprint() {
        // status(r) := pending: reads r_t1, writes the heap-status class
        let u = u();
        let i = Instr::assign(
            Target::StatusCell(Expr::var("r_t1")),
            Expr::status(crate::value::Status::Pending),
        );
        let fp = footprint(&i, u.thread_count());
        assert!(fp.reads.contains(&LocClass::Var(Var::per_thread("r", t(1)))));
        assert!(fp.writes.contains(&LocClass::HeapStatus));
        assert!(!fp.writes.contains(&LocClass::Var(Var::per_thread("r", t(1)))));
    }

    #[test]
    fn fence_has_empty_footprint() {
        let fp = footprint(&Instr::fence(), 2);
        assert!(fp.reads.is_empty() && fp.writes.is_empty());
    }

    #[test]
    fn atomic_block_footprint_is_member_union() {
        // the swap: prev := tail; tail := r; q := q ++ [self]
        let u = u();
        let swap = Instr::atomic(vec![
            AtomicStep::Set {
                target: Target::Var(Var::per_thread("prev", t(1))),
                value: Expr::var("tail"),
            },
            AtomicStep::Set { target: Target::Var(Var::global("tail")), value: Expr::var("r_t1") },
            AtomicStep::Set {
                target: Target::Var(Var::global("q")),
                value: Expr::var("q").concat(Expr::singleton(
                    Expr::thread(t(1)),
                    crate::value::ElemKind::Thread,
                )),
            },
        ]);
        let fp = footprint(&swap, u.thread_count());
        let reads: Vec<_> = fp.reads.iter().cloned().collect();
        assert_eq!(
            reads,
            vec![
                LocClass::Var(Var::global("q")),
                LocClass::Var(Var::global("tail")),
                LocClass::Var(Var::per_thread("r", t(1))),
            ]
        );
        let writes: Vec<_> = fp.writes.iter().cloned().collect();
        assert_eq!(
            writes,
            vec![
                LocClass::Var(Var::global("q")),
                LocClass::Var(Var::global("tail")),
                LocClass::Var(Var::per_thread("prev", t(1))),
            ]
        );
        // members' footprints are contained in the union
        for s in match &swap.kind {
            InstrKind::AtomicBlock(steps) => steps,
            _ => unreachable!(),
        } {
            if let AtomicStep::Set { target, value } = s {
                let member = {
                    let mut f = target_footprint(target, 2);
                    f.reads.extend(expr_reads(value, 2));
                    f
                };
                assert!(member.reads.is_subset(&fp.reads));
                assert!(member.writes.is_subset(&fp.writes));
            }
        }
    }

    #[test]
    fn validate_accepts_and_rejects() {
        let u = u();
        assert!(validate(&Command::Skip, &u).is_ok());
        let bad = Command::instr(Instr::assign(
            Target::Var(Var::global("nope")),
            Expr::int(0),
        ));
        let defects = validate(&bad, &u).unwrap_err();
        assert!(defects[0].message.contains("undeclared"));
        let dup = Command::parn(vec![(t(1), Command::Skip), (t(1), Command::Skip)]);
        assert!(validate(&dup, &u).is_err());
        let mixed = Command::ppseq(
            "arm-like",
            Command::Skip,
            Command::ppseq("other", Command::Skip, Command::Skip),
        );
        assert!(validate(&mixed, &u).is_err());
    }

    #[test]
    fn apply_assign_and_exchange() {
        let u = u();
        let init = u
            .state_of(&[
                (Var::global("tail"), Value::Node(NodeRef::Node(0))),
                (
                    Var::global("q"),
                    Value::Seq(crate::value::SeqVal::empty(crate::value::ElemKind::Thread)),
                ),
                (Var::per_thread("cur", t(1)), Value::Node(NodeRef::Node(1))),
                (Var::per_thread("cur", t(2)), Value::Node(NodeRef::Node(2))),
                (Var::per_thread("r", t(1)), Value::Node(NodeRef::Uninit)),
                (Var::per_thread("r", t(2)), Value::Node(NodeRef::Uninit)),
                (Var::per_thread("prev", t(1)), Value::Node(NodeRef::Uninit)),
                (Var::per_thread("prev", t(2)), Value::Node(NodeRef::Uninit)),
                (Var::status_cell(0), Value::Status(crate::value::Status::Granted)),
                (Var::status_cell(1), Value::Status(crate::value::Status::Pending)),
                (Var::status_cell(2), Value::Status(crate::value::Status::Pending)),
            ])
            .unwrap();
        // sequential member semantics: prev gets the OLD tail
        let swap = Instr::atomic(vec![
            AtomicStep::Set {
                target: Target::Var(Var::per_thread("prev", t(1))),
                value: Expr::var("tail"),
            },
            AtomicStep::Set {
                target: Target::Var(Var::global("tail")),
                value: Expr::var("cur_t1"),
            },
        ]);
        let ci = CompiledInstr::new(&swap, &u).unwrap();
        let out = u.state_from_raw(ci.apply(&u.core, init.raw()).unwrap());
        assert_eq!(out.get(&Var::per_thread("prev", t(1))), Some(Value::Node(NodeRef::Node(0))));
        assert_eq!(out.get(&Var::global("tail")), Some(Value::Node(NodeRef::Node(1))));
        // exchange swaps simultaneously
        let ex = Instr::atomic(vec![AtomicStep::Exchange(
            Target::Var(Var::per_thread("cur", t(1))),
            Target::Var(Var::per_thread("cur", t(2))),
        )]);
        let ci = CompiledInstr::new(&ex, &u).unwrap();
        let out = u.state_from_raw(ci.apply(&u.core, init.raw()).unwrap());
        assert_eq!(out.get(&Var::per_thread("cur", t(1))), Some(Value::Node(NodeRef::Node(2))));
        assert_eq!(out.get(&Var::per_thread("cur", t(2))), Some(Value::Node(NodeRef::Node(1))));
        // dereferencing an uninitialised pointer is an error
        let bad = Instr::assign(
            Target::StatusCell(Expr::var("r_t1")),
            Expr::status(crate::value::Status::Granted),
        );
        let ci = CompiledInstr::new(&bad, &u).unwrap();
        assert_eq!(
            ci.apply(&u.core, init.raw()),
            Err(ExprError::DereferenceUninitialised)
        );
    }
}
