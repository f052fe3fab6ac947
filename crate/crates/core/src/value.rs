//! Finite-domain values and per-variable domains.
//!
//! Every variable in a universe ranges over a small, explicitly enumerable
//! domain. States store values as indices into the domain's value table, so
//! a value here is the decoded, user-facing form.

use std::fmt;

use smallvec::SmallVec;

/// Thread identifier, 1-based (`t1`, `t2`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ThreadId(pub u8);

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Node reference: a concrete node `n0..nK`, or the uninitialised token.
///
/// The uninitialised token is an ordinary value (comparisons against it are
/// well-defined); only dereferencing it is an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    Node(u8),
    Uninit,
}

impl NodeRef {
    pub fn is_uninit(self) -> bool {
        matches!(self, NodeRef::Uninit)
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Node(k) => write!(f, "n{k}"),
            NodeRef::Uninit => write!(f, "bot"),
        }
    }
}

/// Status flag stored in a node: may the successor proceed?
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Granted,
    Pending,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Granted => write!(f, "Granted"),
            Status::Pending => write!(f, "Pending"),
        }
    }
}

/// Abstract lock status: free, or held by a thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockVal {
    Free,
    Held(ThreadId),
}

impl fmt::Display for LockVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LockVal::Free => write!(f, "Free"),
            LockVal::Held(t) => write!(f, "Held({t})"),
        }
    }
}

/// Element kind carried by a sequence value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElemKind {
    Thread,
    Node,
}

/// Sentinel used to encode [`NodeRef::Uninit`] inside sequence storage.
const SEQ_UNINIT: u8 = u8::MAX;

/// A short sequence of thread ids or node references.
///
/// Elements are stored as raw bytes so that list operations never allocate
/// for the lengths that occur in practice.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeqVal {
    pub kind: ElemKind,
    elems: SmallVec<[u8; 8]>,
}

impl SeqVal {
    pub fn empty(kind: ElemKind) -> Self {
        SeqVal { kind, elems: SmallVec::new() }
    }

    pub fn from_threads(ts: impl IntoIterator<Item = ThreadId>) -> Self {
        SeqVal {
            kind: ElemKind::Thread,
            elems: ts.into_iter().map(|t| t.0).collect(),
        }
    }

    pub fn from_nodes(ns: impl IntoIterator<Item = NodeRef>) -> Self {
        SeqVal {
            kind: ElemKind::Node,
            elems: ns.into_iter().map(encode_node).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<Value> {
        self.elems.get(i).map(|&b| self.decode(b))
    }

    pub fn iter(&self) -> impl Iterator<Item = Value> + '_ {
        self.elems.iter().map(|&b| self.decode(b))
    }

    pub fn position_of(&self, v: &Value) -> Option<usize> {
        let b = self.encode_value(v)?;
        self.elems.iter().position(|&e| e == b)
    }

    pub fn contains(&self, v: &Value) -> bool {
        self.position_of(v).is_some()
    }

    pub fn push_back(&self, v: &Value) -> Option<SeqVal> {
        let b = self.encode_value(v)?;
        let mut elems = self.elems.clone();
        elems.push(b);
        Some(SeqVal { kind: self.kind, elems })
    }

    pub fn head(&self) -> Option<Value> {
        self.get(0)
    }

    pub fn tail(&self) -> Option<SeqVal> {
        if self.elems.is_empty() {
            return None;
        }
        Some(SeqVal {
            kind: self.kind,
            elems: self.elems[1..].iter().copied().collect(),
        })
    }

    pub fn last_elem(&self) -> Option<Value> {
        self.elems.last().map(|&b| self.decode(b))
    }

    pub fn butlast(&self) -> Option<SeqVal> {
        if self.elems.is_empty() {
            return None;
        }
        Some(SeqVal {
            kind: self.kind,
            elems: self.elems[..self.elems.len() - 1].iter().copied().collect(),
        })
    }

    pub fn concat(&self, other: &SeqVal) -> Option<SeqVal> {
        if self.kind != other.kind {
            return None;
        }
        let mut elems = self.elems.clone();
        elems.extend_from_slice(&other.elems);
        Some(SeqVal { kind: self.kind, elems })
    }

    /// Prepend a single element.
    pub fn cons(&self, v: &Value) -> Option<SeqVal> {
        let b = self.encode_value(v)?;
        let mut elems = SmallVec::with_capacity(self.elems.len() + 1);
        elems.push(b);
        elems.extend_from_slice(&self.elems);
        Some(SeqVal { kind: self.kind, elems })
    }

    /// All elements pairwise different.
    pub fn is_distinct(&self) -> bool {
        for (i, a) in self.elems.iter().enumerate() {
            if self.elems[i + 1..].contains(a) {
                return false;
            }
        }
        true
    }

    pub fn raw(&self) -> &[u8] {
        &self.elems
    }

    pub(crate) fn from_raw(kind: ElemKind, elems: &[u8]) -> Self {
        SeqVal { kind, elems: elems.iter().copied().collect() }
    }

    fn decode(&self, b: u8) -> Value {
        match self.kind {
            ElemKind::Thread => Value::Thread(ThreadId(b)),
            ElemKind::Node => Value::Node(decode_node(b)),
        }
    }

    fn encode_value(&self, v: &Value) -> Option<u8> {
        match (self.kind, v) {
            (ElemKind::Thread, Value::Thread(t)) => Some(t.0),
            (ElemKind::Node, Value::Node(n)) => Some(encode_node(*n)),
            _ => None,
        }
    }
}

fn encode_node(n: NodeRef) -> u8 {
    match n {
        NodeRef::Node(k) => k,
        NodeRef::Uninit => SEQ_UNINIT,
    }
}

fn decode_node(b: u8) -> NodeRef {
    if b == SEQ_UNINIT {
        NodeRef::Uninit
    } else {
        NodeRef::Node(b)
    }
}

impl fmt::Display for SeqVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// A finite-domain value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Bool(bool),
    Thread(ThreadId),
    Node(NodeRef),
    Status(Status),
    Lock(LockVal),
    Int(i64),
    Seq(SeqVal),
}

impl Value {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_node(&self) -> Option<NodeRef> {
        match self {
            Value::Node(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_seq(&self) -> Option<&SeqVal> {
        match self {
            Value::Seq(s) => Some(s),
            _ => None,
        }
    }

    pub fn ty(&self) -> Ty {
        match self {
            Value::Bool(_) => Ty::Bool,
            Value::Thread(_) => Ty::Thread,
            Value::Node(_) => Ty::Node,
            Value::Status(_) => Ty::Status,
            Value::Lock(_) => Ty::Lock,
            Value::Int(_) => Ty::Int,
            Value::Seq(s) => Ty::Seq(match s.kind {
                ElemKind::Thread => SeqElem::Thread,
                ElemKind::Node => SeqElem::Node,
            }),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Thread(t) => write!(f, "{t}"),
            Value::Node(n) => write!(f, "{n}"),
            Value::Status(s) => write!(f, "{s}"),
            Value::Lock(l) => write!(f, "{l}"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Seq(s) => write!(f, "{s}"),
        }
    }
}

/// Static type of an expression or value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ty {
    Bool,
    Thread,
    Node,
    Status,
    Lock,
    Int,
    Seq(SeqElem),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeqElem {
    Thread,
    Node,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::Bool => write!(f, "bool"),
            Ty::Thread => write!(f, "thread"),
            Ty::Node => write!(f, "node"),
            Ty::Status => write!(f, "status"),
            Ty::Lock => write!(f, "lock"),
            Ty::Int => write!(f, "int"),
            Ty::Seq(SeqElem::Thread) => write!(f, "seq<thread>"),
            Ty::Seq(SeqElem::Node) => write!(f, "seq<node>"),
        }
    }
}

/// The declared domain of one variable: a finite, non-empty, ordered value set.
///
/// The order of [`Domain::values`] is the canonical enumeration order and is
/// part of the deterministic-output contract.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Domain {
    Bool,
    /// Thread identifiers `t1..tN`.
    Thread { count: u8 },
    /// Concrete nodes `n0..n(count-1)`, optionally extended with the
    /// uninitialised token (ordered last).
    Node { count: u8, with_uninit: bool },
    Status,
    /// `Free`, then `Held(t1)..Held(tN)`.
    Lock { thread_count: u8 },
    /// Integers `lo..=hi`.
    Int { lo: i64, hi: i64 },
    /// All thread sequences of length `<= max_len` (duplicates permitted;
    /// distinctness is a checkable property, not a type constraint), ordered
    /// by length then lexicographically.
    ThreadSeq { thread_count: u8, max_len: u8 },
}

impl Domain {
    pub fn node(count: u8) -> Self {
        Domain::Node { count, with_uninit: false }
    }

    pub fn node_or_uninit(count: u8) -> Self {
        Domain::Node { count, with_uninit: true }
    }

    pub fn size(&self) -> usize {
        match self {
            Domain::Bool => 2,
            Domain::Thread { count } => *count as usize,
            Domain::Node { count, with_uninit } => *count as usize + usize::from(*with_uninit),
            Domain::Status => 2,
            Domain::Lock { thread_count } => 1 + *thread_count as usize,
            Domain::Int { lo, hi } => (hi - lo + 1).max(0) as usize,
            Domain::ThreadSeq { thread_count, max_len } => {
                let n = *thread_count as usize;
                let mut total = 0usize;
                let mut pow = 1usize;
                for _ in 0..=*max_len {
                    total += pow;
                    pow *= n.max(1);
                }
                if n == 0 {
                    1
                } else {
                    total
                }
            }
        }
    }

    /// The element type of every value in this domain.
    pub fn ty(&self) -> Ty {
        match self {
            Domain::Bool => Ty::Bool,
            Domain::Thread { .. } => Ty::Thread,
            Domain::Node { .. } => Ty::Node,
            Domain::Status => Ty::Status,
            Domain::Lock { .. } => Ty::Lock,
            Domain::Int { .. } => Ty::Int,
            Domain::ThreadSeq { .. } => Ty::Seq(SeqElem::Thread),
        }
    }

    /// Materialise the domain in canonical order.
    pub fn values(&self) -> Vec<Value> {
        match self {
            Domain::Bool => vec![Value::Bool(false), Value::Bool(true)],
            Domain::Thread { count } => {
                (1..=*count).map(|i| Value::Thread(ThreadId(i))).collect()
            }
            Domain::Node { count, with_uninit } => {
                let mut vs: Vec<Value> =
                    (0..*count).map(|k| Value::Node(NodeRef::Node(k))).collect();
                if *with_uninit {
                    vs.push(Value::Node(NodeRef::Uninit));
                }
                vs
            }
            Domain::Status => vec![Value::Status(Status::Granted), Value::Status(Status::Pending)],
            Domain::Lock { thread_count } => {
                let mut vs = vec![Value::Lock(LockVal::Free)];
                vs.extend((1..=*thread_count).map(|i| Value::Lock(LockVal::Held(ThreadId(i)))));
                vs
            }
            Domain::Int { lo, hi } => (*lo..=*hi).map(Value::Int).collect(),
            Domain::ThreadSeq { thread_count, max_len } => {
                let mut out = Vec::new();
                let mut frontier: Vec<Vec<u8>> = vec![vec![]];
                out.push(Value::Seq(SeqVal::empty(ElemKind::Thread)));
                for _ in 0..*max_len {
                    let mut next = Vec::new();
                    for prefix in &frontier {
                        for t in 1..=*thread_count {
                            let mut s = prefix.clone();
                            s.push(t);
                            out.push(Value::Seq(SeqVal::from_raw(ElemKind::Thread, &s)));
                            next.push(s);
                        }
                    }
                    frontier = next;
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_sizes_match_value_tables() {
        let domains = [
            Domain::Bool,
            Domain::Thread { count: 3 },
            Domain::node(4),
            Domain::node_or_uninit(4),
            Domain::Status,
            Domain::Lock { thread_count: 2 },
            Domain::Int { lo: -1, hi: 3 },
            Domain::ThreadSeq { thread_count: 2, max_len: 2 },
        ];
        for d in domains {
            assert_eq!(d.size(), d.values().len(), "{d:?}");
        }
    }

    #[test]
    fn thread_seq_domain_enumerates_by_length_then_lex() {
        let d = Domain::ThreadSeq { thread_count: 2, max_len: 2 };
        let vs = d.values();
        assert_eq!(vs.len(), 7);
        let strings: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
        assert_eq!(
            strings,
            vec!["[]", "[t1]", "[t2]", "[t1,t1]", "[t1,t2]", "[t2,t1]", "[t2,t2]"]
        );
    }

    #[test]
    fn seq_ops() {
        let q = SeqVal::from_threads([ThreadId(1), ThreadId(2)]);
        assert_eq!(q.head(), Some(Value::Thread(ThreadId(1))));
        assert_eq!(q.tail().unwrap().to_string(), "[t2]");
        assert_eq!(q.position_of(&Value::Thread(ThreadId(2))), Some(1));
        assert!(q.is_distinct());
        let qq = q.push_back(&Value::Thread(ThreadId(1))).unwrap();
        assert!(!qq.is_distinct());
        assert_eq!(qq.butlast().unwrap(), q);
        assert_eq!(qq.last_elem(), Some(Value::Thread(ThreadId(1))));
        let nodes = SeqVal::from_nodes([NodeRef::Node(0), NodeRef::Uninit]);
        assert_eq!(nodes.to_string(), "[n0,bot]");
        assert_eq!(nodes.get(1), Some(Value::Node(NodeRef::Uninit)));
    }

    #[test]
    fn uninit_orders_last_in_node_domain() {
        let vs = Domain::node_or_uninit(2).values();
        assert_eq!(vs.last(), Some(&Value::Node(NodeRef::Uninit)));
    }
}
