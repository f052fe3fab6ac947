//! Finite-state verification workbench for shared-variable concurrent
//! programs.
//!
//! The crate provides:
//!
//! - a finite-domain state model with an expression language for predicates
//!   (one state) and relations (pre/post state pairs), plus enumeration-based
//!   implication and stability checks ([`universe`], [`expr`], [`check`]);
//! - a program representation with atomic instructions, footprints and
//!   ordering annotations ([`ast`]);
//! - syntactic rely/guarantee inference-rule checking over explicit
//!   derivation trees ([`rg`]);
//! - small-step operational semantics with exhaustive interleaving
//!   exploration and semantic quintuple checking ([`explore`]);
//! - instruction-reordering analysis and the program transformation that
//!   resolves parallelized sequential composition ([`wmm`]);
//! - builders for the CLH queue-lock case study ([`clh`]).

pub mod ast;
pub mod check;
pub mod eval;
pub mod expr;
pub mod sexpr;
pub mod universe;
pub mod value;

pub use ast::{Command, Footprint, Instr, InstrKind, LocClass, OrderAnno, Target};
pub use check::{CheckMode, Checker, Verdict, Witness};
pub use eval::{compile, eval, Compiled, ExprError};
pub use expr::{id_on, id_on_exprs, Expr, Predicate, QuantRange};
pub use universe::{State, StateUniverse, UniverseBuilder, Var};
pub use value::{Domain, ElemKind, LockVal, NodeRef, SeqVal, Status, ThreadId, Value};
