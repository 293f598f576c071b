//! Cube-attack research toolkit for reduced-round Trivium.
//!
//! The crate is organised bottom-up:
//!
//! - [`anf`]: multilinear GF(2) polynomials used by every exact computation.
//! - [`degree`]: degree values, vector degrees, and the numeric mapping
//!   operations (max-plus union convolution).
//! - [`trivium`]: the cipher itself, scalar and bitsliced, plus cube sums.
//! - [`symbolic`]: exact symbolic state evolution for small round counts.
//! - [`estimate`]: the round-by-round vector-degree estimator and index-set
//!   selection.
//! - [`trail`]: backward monomial-trail engine, direct superpoly recovery
//!   and valuable-term extraction.
//! - [`varsub`]: variable substitution at a middle round and coefficient
//!   recovery, combining into full superpoly recovery.
//! - [`isoc`]: pruned search for index sets whose cubes have low-degree
//!   superpolys.
//! - [`attack`]: correlation attack pipeline: preprocessing tables, online
//!   simulation, key solving, complexity and significance accounting.
//! - [`fixtures`]: reference index sets and measurement tables used by the
//!   regression suite and the report command.
//!
//! With the default `parallel` feature the heavy loops fan out via rayon;
//! every such entry point has a sequential `*_seq` twin that the feature
//! gates compile unconditionally.

pub mod anf;
pub mod attack;
pub mod degree;
pub mod error;
pub mod estimate;
pub mod isoc;
pub mod symbolic;
pub mod trail;
pub mod trivium;
pub mod varsub;

pub use anf::{Monomial, Poly, Var, VarSpace};
pub use attack::{
    binomial_check, complexity_estimate, online_simulate, preprocess, solve_keys,
    CandidateFamily, CorpusEntry, CostEstimate, EquationSets, FactorTable, SolveOutcome,
};
pub use degree::{numeric_deg, vdeg_map, vdegm, DegreeValue, VectorDegree};
pub use error::{Error, Result};
pub use isoc::{exhaustive_classify, prune_witness, search, search_report, GoodSet, SearchConfig, SearchReport, SearchStats};
pub use trail::{
    build_graph, count_trails_parity, obtain_valuable_terms, superpoly_direct, Pattern, PropGraph,
    TermSet, TrailCount,
};
pub use varsub::{
    coefficient_recovery, expand_z, extract_substitution, feasible_mid_round, recover_superpoly,
    MidRoundFunction, SubstitutionMap,
};
