//! Variable declarations, universes, and packed states.
//!
//! A universe declares every variable together with its finite domain. A
//! state is a total, well-typed assignment, stored as one domain index per
//! variable. Variables are ordered lexicographically by canonical name; that
//! order fixes the enumeration order of the whole universe.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;
use thiserror::Error;

use crate::value::{Domain, NodeRef, ThreadId, Ty, Value};

/// Largest admissible domain; states store one byte per variable.
pub const MAX_DOMAIN: usize = 255;

/// A declared variable.
///
/// Per-thread variables are declared once per family and instantiated for
/// every thread identifier. Each node's status cell is its own variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Global(String),
    PerThread(String, ThreadId),
    NodeStatus(u8),
}

impl Var {
    pub fn global(name: impl Into<String>) -> Self {
        Var::Global(name.into())
    }

    pub fn per_thread(family: impl Into<String>, t: ThreadId) -> Self {
        Var::PerThread(family.into(), t)
    }

    pub fn status_cell(node: u8) -> Self {
        Var::NodeStatus(node)
    }

    /// Canonical name, e.g. `q`, `prev_t1`, `status_n0`.
    pub fn name(&self) -> String {
        match self {
            Var::Global(n) => n.clone(),
            Var::PerThread(f, t) => format!("{f}_{t}"),
            Var::NodeStatus(k) => format!("status_n{k}"),
        }
    }

    /// Parse a canonical name back into a variable.
    pub fn parse(name: &str) -> Var {
        if let Some(rest) = name.strip_prefix("status_n") {
            if let Ok(k) = rest.parse::<u8>() {
                return Var::NodeStatus(k);
            }
        }
        if let Some(pos) = name.rfind("_t") {
            if let Ok(t) = name[pos + 2..].parse::<u8>() {
                if t >= 1 && !name[..pos].is_empty() {
                    return Var::PerThread(name[..pos].to_string(), ThreadId(t));
                }
            }
        }
        Var::Global(name.to_string())
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UniverseError {
    #[error("variable '{0}' declared twice")]
    DuplicateVariable(String),
    #[error("variable '{0}' has an empty domain")]
    EmptyDomain(String),
    #[error("variable '{0}' has domain size {1}, maximum is {max}", max = MAX_DOMAIN)]
    DomainTooLarge(String, usize),
    #[error("name '{0}' collides with the canonical per-thread/status naming scheme")]
    ReservedName(String),
    #[error("thread count must be at least 1")]
    NoThreads,
}

/// Compact slot identifier; slots are variables sorted by canonical name.
pub type Slot = usize;

#[derive(Debug)]
pub(crate) struct UniverseCore {
    pub thread_count: u8,
    pub node_count: u8,
    /// Sorted by canonical name.
    pub vars: Vec<Var>,
    pub domains: Vec<Domain>,
    pub value_tables: Vec<Vec<Value>>,
    pub slot_of: HashMap<Var, Slot>,
    /// family name -> slot per thread (index 0 = t1)
    pub families: HashMap<String, Vec<Slot>>,
    /// node index -> status slot (empty when no status heap declared)
    pub status_slots: Vec<Slot>,
}

/// A finite universe of typed variables.
#[derive(Clone)]
pub struct StateUniverse {
    pub(crate) core: Arc<UniverseCore>,
}

impl fmt::Debug for StateUniverse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateUniverse")
            .field("threads", &self.core.thread_count)
            .field("nodes", &self.core.node_count)
            .field("vars", &self.core.vars.len())
            .finish()
    }
}

impl StateUniverse {
    pub fn builder(thread_count: u8, node_count: u8) -> UniverseBuilder {
        UniverseBuilder {
            thread_count,
            node_count,
            decls: Vec::new(),
            status_heap: false,
        }
    }

    pub fn thread_count(&self) -> u8 {
        self.core.thread_count
    }

    pub fn node_count(&self) -> u8 {
        self.core.node_count
    }

    pub fn threads(&self) -> impl Iterator<Item = ThreadId> {
        (1..=self.core.thread_count).map(ThreadId)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> {
        (0..self.core.node_count).map(NodeRef::Node)
    }

    pub fn vars(&self) -> &[Var] {
        &self.core.vars
    }

    pub fn var_count(&self) -> usize {
        self.core.vars.len()
    }

    pub fn slot(&self, v: &Var) -> Option<Slot> {
        self.core.slot_of.get(v).copied()
    }

    pub fn domain(&self, slot: Slot) -> &Domain {
        &self.core.domains[slot]
    }

    pub fn domain_of(&self, v: &Var) -> Option<&Domain> {
        self.slot(v).map(|s| self.domain(s))
    }

    pub fn ty_of_slot(&self, slot: Slot) -> Ty {
        self.core.domains[slot].ty()
    }

    pub fn family_slots(&self, family: &str) -> Option<&[Slot]> {
        self.core.families.get(family).map(|v| v.as_slice())
    }

    pub fn has_status_heap(&self) -> bool {
        !self.core.status_slots.is_empty()
    }

    pub(crate) fn status_slot(&self, node: u8) -> Option<Slot> {
        self.core.status_slots.get(node as usize).copied()
    }

    pub fn values(&self, slot: Slot) -> &[Value] {
        &self.core.value_tables[slot]
    }

    /// Total number of states (product of domain sizes).
    pub fn state_count(&self) -> u128 {
        self.core
            .domains
            .iter()
            .map(|d| d.size() as u128)
            .product()
    }

    /// Decode one packed state.
    pub fn state_from_raw(&self, raw: RawState) -> State {
        debug_assert_eq!(raw.len(), self.var_count());
        State { core: Arc::clone(&self.core), raw }
    }

    /// Build a state from explicit (variable, value) pairs; every declared
    /// variable must be covered exactly once.
    pub fn state_of(&self, assignments: &[(Var, Value)]) -> Result<State, StateBuildError> {
        let mut raw: SmallVec<[u8; 32]> = SmallVec::new();
        raw.resize(self.var_count(), u8::MAX);
        for (v, val) in assignments {
            let slot = self
                .slot(v)
                .ok_or_else(|| StateBuildError::Undeclared(v.name()))?;
            let idx = self.core.value_tables[slot]
                .iter()
                .position(|candidate| candidate == val)
                .ok_or_else(|| StateBuildError::OutOfDomain(v.name(), val.to_string()))?;
            if raw[slot] != u8::MAX {
                return Err(StateBuildError::Duplicate(v.name()));
            }
            raw[slot] = idx as u8;
        }
        for (slot, &b) in raw.iter().enumerate() {
            if b == u8::MAX {
                return Err(StateBuildError::Missing(self.core.vars[slot].name()));
            }
        }
        Ok(State { core: Arc::clone(&self.core), raw })
    }

    pub(crate) fn value_index(&self, slot: Slot, val: &Value) -> Option<u8> {
        self.core.value_tables[slot]
            .iter()
            .position(|candidate| candidate == val)
            .map(|i| i as u8)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateBuildError {
    #[error("undeclared variable '{0}'")]
    Undeclared(String),
    #[error("value {1} outside the domain of '{0}'")]
    OutOfDomain(String, String),
    #[error("variable '{0}' assigned twice")]
    Duplicate(String),
    #[error("variable '{0}' missing from state")]
    Missing(String),
}

/// Declarative builder for a universe.
pub struct UniverseBuilder {
    thread_count: u8,
    node_count: u8,
    decls: Vec<(Var, Domain)>,
    status_heap: bool,
}

impl UniverseBuilder {
    pub fn global(mut self, name: &str, d: Domain) -> Self {
        self.decls.push((Var::global(name), d));
        self
    }

    /// Declare one variable per thread identifier.
    pub fn per_thread(mut self, family: &str, d: Domain) -> Self {
        for t in 1..=self.thread_count {
            self.decls.push((Var::per_thread(family, ThreadId(t)), d.clone()));
        }
        self
    }

    /// Declare a status cell for every node.
    pub fn status_heap(mut self) -> Self {
        self.status_heap = true;
        for k in 0..self.node_count {
            self.decls.push((Var::status_cell(k), Domain::Status));
        }
        self
    }

    pub fn build(self) -> Result<StateUniverse, UniverseError> {
        if self.thread_count == 0 {
            return Err(UniverseError::NoThreads);
        }
        let mut decls = self.decls;
        decls.sort_by(|a, b| a.0.name().cmp(&b.0.name()));
        let mut vars = Vec::with_capacity(decls.len());
        let mut domains = Vec::with_capacity(decls.len());
        let mut slot_of = HashMap::new();
        for (v, d) in decls {
            if let Var::Global(name) = &v {
                // A global whose name decodes as a per-thread or status cell
                // would make canonical names ambiguous.
                if Var::parse(name) != v {
                    return Err(UniverseError::ReservedName(name.clone()));
                }
            }
            if d.size() == 0 {
                return Err(UniverseError::EmptyDomain(v.name()));
            }
            if d.size() > MAX_DOMAIN {
                return Err(UniverseError::DomainTooLarge(v.name(), d.size()));
            }
            if slot_of.insert(v.clone(), vars.len()).is_some() {
                return Err(UniverseError::DuplicateVariable(v.name()));
            }
            vars.push(v);
            domains.push(d);
        }
        let value_tables: Vec<Vec<Value>> = domains.iter().map(|d| d.values()).collect();
        let mut families: HashMap<String, Vec<Slot>> = HashMap::new();
        for (slot, v) in vars.iter().enumerate() {
            if let Var::PerThread(f, t) = v {
                let entry = families.entry(f.clone()).or_insert_with(Vec::new);
                let idx = (t.0 - 1) as usize;
                if entry.len() <= idx {
                    entry.resize(idx + 1, usize::MAX);
                }
                entry[idx] = slot;
            }
        }
        let mut status_slots = Vec::new();
        if self.status_heap {
            for k in 0..self.node_count {
                let slot = slot_of[&Var::status_cell(k)];
                status_slots.push(slot);
            }
        }
        Ok(StateUniverse {
            core: Arc::new(UniverseCore {
                thread_count: self.thread_count,
                node_count: self.node_count,
                vars,
                domains,
                value_tables,
                slot_of,
                families,
                status_slots,
            }),
        })
    }
}

/// Packed state payload: one domain index per slot.
pub type RawState = SmallVec<[u8; 32]>;

/// A total, well-typed assignment of values to every declared variable.
#[derive(Clone)]
pub struct State {
    pub(crate) core: Arc<UniverseCore>,
    pub(crate) raw: RawState,
}

impl State {
    pub fn get(&self, v: &Var) -> Option<Value> {
        let slot = *self.core.slot_of.get(v)?;
        Some(self.core.value_tables[slot][self.raw[slot] as usize].clone())
    }

    pub fn get_slot(&self, slot: Slot) -> &Value {
        &self.core.value_tables[slot][self.raw[slot] as usize]
    }

    pub fn raw(&self) -> &RawState {
        &self.raw
    }

    pub fn universe(&self) -> StateUniverse {
        StateUniverse { core: Arc::clone(&self.core) }
    }

    /// Render as an ordered `name -> value` map (canonical display form).
    pub fn to_map(&self) -> std::collections::BTreeMap<String, String> {
        self.core
            .vars
            .iter()
            .enumerate()
            .map(|(slot, v)| (v.name(), self.get_slot(slot).to_string()))
            .collect()
    }

    /// Copy of this state with one variable re-assigned.
    pub fn with(&self, v: &Var, val: &Value) -> Result<State, StateBuildError> {
        let slot = self
            .core
            .slot_of
            .get(v)
            .copied()
            .ok_or_else(|| StateBuildError::Undeclared(v.name()))?;
        let idx = self.core.value_tables[slot]
            .iter()
            .position(|candidate| candidate == val)
            .ok_or_else(|| StateBuildError::OutOfDomain(v.name(), val.to_string()))?;
        let mut raw = self.raw.clone();
        raw[slot] = idx as u8;
        Ok(State { core: Arc::clone(&self.core), raw })
    }
}

impl PartialEq for State {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.core, &other.core) && self.raw == other.raw
    }
}
impl Eq for State {}

impl std::hash::Hash for State {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.raw.hash(state);
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (k, v)) in self.to_map().into_iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> StateUniverse {
        StateUniverse::builder(2, 3)
            .global("x", Domain::Int { lo: 0, hi: 3 })
            .global("q", Domain::ThreadSeq { thread_count: 2, max_len: 2 })
            .per_thread("cur", Domain::node(3))
            .status_heap()
            .build()
            .unwrap()
    }

    #[test]
    fn slots_are_name_ordered() {
        let u = tiny();
        let names: Vec<String> = u.vars().iter().map(|v| v.name()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(
            names,
            vec!["cur_t1", "cur_t2", "q", "status_n0", "status_n1", "status_n2", "x"]
        );
    }

    #[test]
    fn state_round_trip() {
        let u = tiny();
        let s = u
            .state_of(&[
                (Var::global("x"), Value::Int(2)),
                (Var::global("q"), Value::Seq(crate::value::SeqVal::empty(crate::value::ElemKind::Thread))),
                (Var::per_thread("cur", ThreadId(1)), Value::Node(NodeRef::Node(1))),
                (Var::per_thread("cur", ThreadId(2)), Value::Node(NodeRef::Node(2))),
                (Var::status_cell(0), Value::Status(crate::value::Status::Granted)),
                (Var::status_cell(1), Value::Status(crate::value::Status::Pending)),
                (Var::status_cell(2), Value::Status(crate::value::Status::Pending)),
            ])
            .unwrap();
        assert_eq!(s.get(&Var::global("x")), Some(Value::Int(2)));
        assert_eq!(
            s.get(&Var::per_thread("cur", ThreadId(2))),
            Some(Value::Node(NodeRef::Node(2)))
        );
        let s2 = s.with(&Var::global("x"), &Value::Int(0)).unwrap();
        assert_eq!(s2.get(&Var::global("x")), Some(Value::Int(0)));
        assert_ne!(s, s2);
    }

    #[test]
    fn missing_and_duplicate_assignments_rejected() {
        let u = tiny();
        assert!(matches!(
            u.state_of(&[(Var::global("x"), Value::Int(0))]),
            Err(StateBuildError::Missing(_))
        ));
        assert!(matches!(
            u.state_of(&[(Var::global("y"), Value::Int(0))]),
            Err(StateBuildError::Undeclared(_))
        ));
    }

    #[test]
    fn reserved_global_names_rejected() {
        let r = StateUniverse::builder(1, 1)
            .global("status_n0", Domain::Bool)
            .build();
        assert!(matches!(r, Err(UniverseError::ReservedName(_))));
        let r = StateUniverse::builder(2, 1)
            .global("x_t1", Domain::Bool)
            .build();
        assert!(matches!(r, Err(UniverseError::ReservedName(_))));
    }

    #[test]
    fn var_parse_round_trip() {
        for v in [
            Var::global("tail"),
            Var::per_thread("prev", ThreadId(2)),
            Var::status_cell(1),
        ] {
            assert_eq!(Var::parse(&v.name()), v);
        }
    }

    #[test]
    fn domain_too_large_rejected() {
        let r = StateUniverse::builder(1, 1)
            .global("x", Domain::Int { lo: 0, hi: 400 })
            .build();
        assert!(matches!(r, Err(UniverseError::DomainTooLarge(_, _))));
    }
}
