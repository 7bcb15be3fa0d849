//! Active sampling for sequential Bayesian estimation of a shared parameter
//! observed through several experiments, each possibly carrying a private
//! nuisance parameter.
//!
//! The crate keeps a grid posterior ([`belief`]), chooses experiments and
//! stopping times ([`rules`], [`optimizer`]), reports the characteristic
//! sample complexities ([`theory`]), and runs seeded Monte Carlo studies
//! ([`runner`], [`report`]) from JSON configurations ([`config`]).

pub mod belief;
pub mod config;
pub mod model;
pub mod optimizer;
pub mod quadrature;
pub mod report;
pub mod rules;
pub mod runner;
pub mod theory;
