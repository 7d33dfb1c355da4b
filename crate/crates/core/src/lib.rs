//! A Markovian π-calculus with delays: parsing, structural congruence,
//! labeled and reduction semantics, state-space exploration into IMCs and
//! CTMCs, strong Markovian bisimulation, and differential checking of the
//! two semantics against each other.

pub mod bisim;
pub mod cli;
pub mod congruence;
pub mod harmony;
pub mod labeled;
pub mod parser;
pub mod reduction;
pub mod statespace;
pub mod syntax;
