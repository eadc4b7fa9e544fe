//! Tree-based symbolic regression: expression programs, a genetic
//! programming engine with diversely aggregated lexicase selection, and
//! polynomial term extraction for reading evolved classifiers.

mod engine;
mod expr;

pub use engine::{
    dalex_select, evolve, pareto_update, variable_frequency, CappedBest, FunctionSet,
    ParetoEntry, SrConfig, SrDataset, SrRunResult, SrTask, PENALTY,
};
pub use expr::{expand_to_monomials, monomial_name, term_set, Expr, Op, PROTECTED_DIV_EPS};
