//! Correlation attack pipeline: factor tables built from a superpoly
//! corpus, a simulated online phase over real cube sums, key
//! reconstruction by back-substitution, and complexity accounting.
//!
//! The pipeline narrows the classic correlation setup to superpolys with a
//! single low-degree factor, `f_I = h * q`. A nonzero cube sum then proves
//! h = 1 outright; only the all-zero guesses h = 0 can be wrong, and their
//! reliability is what the preprocessing tables estimate.

use crate::anf::{Poly, Var, VarSpace};
use crate::error::{Error, Result};
use crate::trivium::{cube_sum, keystream_bits, KEY_BITS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use statrs::distribution::{Binomial, Discrete};
use std::collections::BTreeMap;

/// Conditional-probability threshold splitting the two guessing regimes.
pub const DEFAULT_PROBABILITY_THRESHOLD: f64 = 0.77;

/// Keys sampled when estimating table probabilities.
pub const DEFAULT_SAMPLE_COUNT: u32 = 10_000;

/// Significance level of the proportion hypothesis test.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Initialization rounds of the unreduced cipher.
pub const FULL_INIT_ROUNDS: u32 = 1152;

/// Keystream length used to verify a candidate key.
pub const VERIFY_KEYSTREAM_BITS: usize = 160;

/// Low-degree key polynomials eligible as superpoly factors.
///
/// Equation solving needs each polynomial to expose a pivot bit: a linear
/// term whose remaining terms involve only strictly higher key indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateFamily {
    polys: Vec<Poly>,
}

impl CandidateFamily {
    /// The default family: `k_i + k_{i+25} k_{i+26} + k_{i+27}` for
    /// `0 <= i <= 52`, then `k_53 + k_78 k_79`, then the single bits
    /// `k_54 ..= k_65`. Every key bit a fired equation pins is new, so the
    /// number of recovered bits always equals the number of equations.
    pub fn standard() -> Self {
        let mut polys = Vec::with_capacity(66);
        for i in 0..=52u16 {
            let mut p = Poly::var(Var::k(i));
            p.add_assign(&Poly::from_terms([crate::anf::Monomial::from_vars([
                Var::k(i + 25),
                Var::k(i + 26),
            ])]));
            p.add_assign(&Poly::var(Var::k(i + 27)));
            polys.push(p);
        }
        let mut p53 = Poly::var(Var::k(53));
        p53.add_assign(&Poly::from_terms([crate::anf::Monomial::from_vars([
            Var::k(78),
            Var::k(79),
        ])]));
        polys.push(p53);
        for i in 54..=65u16 {
            polys.push(Poly::var(Var::k(i)));
        }
        CandidateFamily { polys }
    }

    /// A custom family. Every polynomial must be non-constant, of degree
    /// at most two, and over key variables only.
    pub fn new(polys: Vec<Poly>) -> Result<Self> {
        if polys.is_empty() {
            return Err(Error::InvalidArgument("candidate family must not be empty".into()));
        }
        for p in &polys {
            if p.is_zero() || p.is_one() {
                return Err(Error::InvalidArgument("family polynomials must be non-constant".into()));
            }
            if p.degree() > crate::degree::DegreeValue::finite(2) {
                return Err(Error::InvalidArgument("family polynomials must have degree <= 2".into()));
            }
            if p.support().iter().any(|v| v.space() != VarSpace::K) {
                return Err(Error::InvalidArgument("family polynomials must use key variables only".into()));
            }
        }
        Ok(CandidateFamily { polys })
    }

    pub fn polys(&self) -> &[Poly] {
        &self.polys
    }

    pub fn len(&self) -> usize {
        self.polys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polys.is_empty()
    }

    pub fn poly(&self, index: u16) -> Result<&Poly> {
        self.polys
            .get(index as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("no family polynomial {index}")))
    }
}

/// One cube with its recovered superpoly over key variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub cube: Vec<u8>,
    pub superpoly: Poly,
}

/// Table entry for one factor: the cubes it divides and the sampled
/// probabilities.
#[derive(Debug, Clone)]
pub struct FactorEntry {
    /// Corpus indices whose superpoly the factor divides.
    pub isocs: Vec<usize>,
    /// Pr(h = 0 | every listed superpoly vanishes on the key).
    pub pr00: f64,
    /// Pr(some listed superpoly is nonzero on the key), the rate at which
    /// the certain h = 1 case fires.
    pub pr_f1: f64,
    pub samples: u32,
}

/// Preprocessing output: factors routed by reliability.
///
/// Entries in `t` are guessed in both directions; entries in `t1` had
/// pr00 at or below the threshold and only ever produce the certain h = 1
/// equations.
#[derive(Debug, Clone)]
pub struct FactorTable {
    pub family: CandidateFamily,
    pub corpus: Vec<CorpusEntry>,
    pub t: BTreeMap<u16, FactorEntry>,
    pub t1: BTreeMap<u16, FactorEntry>,
    pub threshold: f64,
    pub rounds: u32,
    pub samples: u32,
    pub seed: u64,
    /// Factors whose conditioning event never occurred in the sample.
    /// Kept for transparency; unreachable for divisor-gated entries since
    /// h = 0 already forces every listed superpoly to zero.
    pub dropped: Vec<u16>,
}

/// One derived equation: the family polynomial at `factor` equals `value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Equation {
    pub factor: u16,
    pub value: bool,
}

/// The online phase's harvest. G1 equations are implied by a nonzero cube
/// sum and hold with certainty; only G0 entries can be wrong.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EquationSets {
    pub g0: Vec<Equation>,
    pub g1: Vec<Equation>,
}

impl EquationSets {
    pub fn len(&self) -> usize {
        self.g0.len() + self.g1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g0.is_empty() && self.g1.is_empty()
    }
}

fn validate_corpus(corpus: &[CorpusEntry]) -> Result<()> {
    for entry in corpus {
        crate::trivium::checked_cube(&entry.cube)?;
        if entry.superpoly.support().iter().any(|v| v.space() != VarSpace::K) {
            return Err(Error::InvalidArgument(
                "corpus superpolys must be expanded to key variables".into(),
            ));
        }
    }
    Ok(())
}

fn eval_on_key(p: &Poly, key: u128) -> bool {
    p.evaluate(|v| key >> v.index() & 1 == 1)
}

/// Builds the factor tables for a corpus: gathers, for every family
/// polynomial, the cubes whose superpoly it divides, then estimates the
/// reliability of the all-zero guess by sampling random keys and routes
/// each factor by comparing against `p`.
pub fn preprocess(
    corpus: &[CorpusEntry],
    family: &CandidateFamily,
    rounds: u32,
    p: f64,
    samples: u32,
    seed: u64,
) -> Result<FactorTable> {
    if family.is_empty() {
        return Err(Error::InvalidArgument("candidate family must not be empty".into()));
    }
    if !(0.0..1.0).contains(&p) || p <= 0.0 {
        return Err(Error::InvalidArgument("probability threshold must lie in (0, 1)".into()));
    }
    if samples < 1000 {
        return Err(Error::InvalidArgument("probability estimates need at least 1000 samples".into()));
    }
    validate_corpus(corpus)?;

    // Zero superpolys are divisible by everything but their cube sums carry
    // no information; they never join a table entry.
    let live: Vec<usize> =
        (0..corpus.len()).filter(|&i| !corpus[i].superpoly.is_zero()).collect();

    let mut members: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (fi, h) in family.polys().iter().enumerate() {
        let isocs: Vec<usize> = live
            .iter()
            .copied()
            .filter(|&ci| h.divides(&corpus[ci].superpoly))
            .collect();
        if !isocs.is_empty() {
            members.insert(fi as u16, isocs);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<u128> =
        (0..samples).map(|_| rng.gen::<u128>() & ((1 << KEY_BITS) - 1)).collect();

    // Per factor: (conditioning hits, hits with h = 0).
    let tally_one = |key: &u128| -> Vec<(u64, u64)> {
        let vals: Vec<bool> =
            corpus.iter().map(|e| eval_on_key(&e.superpoly, *key)).collect();
        members
            .iter()
            .map(|(&fi, isocs)| {
                let all_zero = isocs.iter().all(|&ci| !vals[ci]);
                if !all_zero {
                    return (0, 0);
                }
                let h0 = !eval_on_key(&family.polys()[fi as usize], *key);
                (1, u64::from(h0))
            })
            .collect()
    };
    let zero = vec![(0u64, 0u64); members.len()];
    let add = |mut acc: Vec<(u64, u64)>, item: Vec<(u64, u64)>| {
        for (a, b) in acc.iter_mut().zip(item) {
            a.0 += b.0;
            a.1 += b.1;
        }
        acc
    };
    let counts: Vec<(u64, u64)> = {
        #[cfg(feature = "parallel")]
        {
            keys.par_iter().map(tally_one).reduce(|| zero.clone(), add)
        }
        #[cfg(not(feature = "parallel"))]
        {
            keys.iter().map(tally_one).fold(zero.clone(), add)
        }
    };

    let mut t = BTreeMap::new();
    let mut t1 = BTreeMap::new();
    let mut dropped = Vec::new();
    for ((fi, isocs), (cond, cond_h0)) in members.into_iter().zip(counts) {
        if cond == 0 {
            dropped.push(fi);
            continue;
        }
        let entry = FactorEntry {
            isocs,
            pr00: cond_h0 as f64 / cond as f64,
            pr_f1: 1.0 - cond as f64 / samples as f64,
            samples,
        };
        if entry.pr00 > p {
            t.insert(fi, entry);
        } else {
            t1.insert(fi, entry);
        }
    }
    Ok(FactorTable {
        family: family.clone(),
        corpus: corpus.to_vec(),
        t,
        t1,
        threshold: p,
        rounds,
        samples,
        seed,
        dropped,
    })
}

/// Runs the online phase against a simulated victim: sums real keystream
/// over every cube in the tables at `rounds` (normally the round the
/// table was built for) and turns the sums into equations.
///
/// For a both-ways factor, all-zero sums guess h = 0 into G0 and any
/// nonzero sum proves h = 1 into G1; a first-case-only factor yields an
/// equation only on a nonzero sum.
pub fn online_simulate(true_key: u128, table: &FactorTable, rounds: u32) -> Result<EquationSets> {
    let needed: Vec<usize> = {
        let mut ix: Vec<usize> = table
            .t
            .values()
            .chain(table.t1.values())
            .flat_map(|e| e.isocs.iter().copied())
            .collect();
        ix.sort_unstable();
        ix.dedup();
        ix
    };
    let sum_for = |&ci: &usize| -> Result<(usize, bool)> {
        Ok((ci, cube_sum(true_key, 0, &table.corpus[ci].cube, rounds)?))
    };
    let sums: Vec<(usize, bool)> = {
        #[cfg(feature = "parallel")]
        {
            needed.par_iter().map(sum_for).collect::<Result<_>>()?
        }
        #[cfg(not(feature = "parallel"))]
        {
            needed.iter().map(sum_for).collect::<Result<_>>()?
        }
    };
    let value: BTreeMap<usize, bool> = sums.into_iter().collect();

    let mut eqs = EquationSets::default();
    for (&fi, entry) in &table.t {
        let any_nonzero = entry.isocs.iter().any(|ci| value[ci]);
        if any_nonzero {
            eqs.g1.push(Equation { factor: fi, value: true });
        } else {
            eqs.g0.push(Equation { factor: fi, value: false });
        }
    }
    for (&fi, entry) in &table.t1 {
        if entry.isocs.iter().any(|ci| value[ci]) {
            eqs.g1.push(Equation { factor: fi, value: true });
        }
    }
    Ok(eqs)
}

/// Equation counts a key would see, plus how many of its G0 guesses are
/// wrong: the (a, b, e) triple of the complexity formula.
pub fn tally(eqs: &EquationSets, family: &CandidateFamily, true_key: u128) -> Result<(u32, u32, u32)> {
    let a = eqs.g0.len() as u32;
    let b = eqs.g1.len() as u32;
    let mut e = 0;
    for eq in &eqs.g0 {
        let h = family.poly(eq.factor)?;
        if eval_on_key(h, true_key) != eq.value {
            e += 1;
        }
    }
    Ok((a, b, e))
}

/// A solved candidate: the verified key and which G0 equations had to be
/// flipped to reach it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolveOutcome {
    pub key: u128,
    pub flipped: Vec<u16>,
}

struct PlanEquation {
    pivot: u8,
    /// The polynomial minus its pivot term; involves only higher indices.
    rest: Poly,
    value: bool,
}

/// The pivot bit of a family polynomial: a linear term whose other terms
/// involve only strictly higher key indices.
fn pivot_of(p: &Poly) -> Option<u8> {
    'cand: for t in p.terms() {
        if t.vars().len() != 1 {
            continue;
        }
        let v = t.vars()[0];
        for u in p.terms() {
            if u.vars() == t.vars() {
                continue;
            }
            if u.vars().iter().any(|w| w.index() <= v.index()) {
                continue 'cand;
            }
        }
        return Some(v.index() as u8);
    }
    None
}

fn plan(family: &CandidateFamily, eqs: &[Equation]) -> Result<(Vec<PlanEquation>, Vec<u8>)> {
    let mut planned: Vec<PlanEquation> = Vec::with_capacity(eqs.len());
    for eq in eqs {
        let p = family.poly(eq.factor)?;
        let pivot = pivot_of(p).ok_or_else(|| {
            Error::InvalidArgument(format!("family polynomial {} has no pivot bit", eq.factor))
        })?;
        let mut rest = p.clone();
        rest.add_assign(&Poly::var(Var::k(pivot as u16)));
        planned.push(PlanEquation { pivot, rest, value: eq.value });
    }
    planned.sort_by(|x, y| y.pivot.cmp(&x.pivot));
    let mut pinned = [false; KEY_BITS];
    for pe in &planned {
        pinned[pe.pivot as usize] = true;
    }
    let free: Vec<u8> = (0..KEY_BITS as u8).filter(|&i| !pinned[i as usize]).collect();
    Ok((planned, free))
}

/// Reconstructs the key for one assignment of the free bits, descending
/// through the pivots. Two equations pinning the same bit must agree or
/// the branch is dead.
fn reconstruct(planned: &[PlanEquation], free: &[u8], guess: u128) -> Option<u128> {
    let mut key: u128 = 0;
    for (gi, &b) in free.iter().enumerate() {
        if guess >> gi & 1 == 1 {
            key |= 1 << b;
        }
    }
    let mut seen = [false; KEY_BITS];
    for pe in planned {
        let bit = pe.value ^ eval_on_key(&pe.rest, key);
        let pos = pe.pivot as usize;
        if seen[pos] {
            if key >> pos & 1 != u128::from(bit) {
                return None;
            }
        } else {
            seen[pos] = true;
            if bit {
                key |= 1 << pos;
            }
        }
    }
    Some(key)
}

/// Advances `idx` to the next size-`idx.len()` combination of `0..n` in
/// lexicographic order; false once exhausted.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for pos in (0..k).rev() {
        if idx[pos] + (k - pos) < n {
            idx[pos] += 1;
            for later in pos + 1..k {
                idx[later] = idx[later - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn log2_binomial_sum(a: u32, e: u32) -> f64 {
    let mut sum = 0f64;
    let mut term = 1f64;
    for i in 0..=e.min(a) {
        if i > 0 {
            term *= (a - i + 1) as f64 / i as f64;
        }
        sum += term;
    }
    sum.log2()
}

/// Searches for a key satisfying the equations, trying flip sets of G0
/// equations in ascending size and free-bit guesses in ascending order.
///
/// Flipping turns a guessed h = 0 into the certainty h = 1, the only way a
/// G0 entry can be wrong. The candidate space is `sum_{i<=e} C(|G0|, i)`
/// flip sets times `2^free` guesses; the call refuses upfront if that
/// exceeds `candidate_cap`. `Ok(None)` means exhaustion, i.e. more than
/// `e_max` G0 equations are wrong.
pub fn solve_keys(
    family: &CandidateFamily,
    eqs: &EquationSets,
    e_max: u32,
    candidate_cap: u64,
    verify: impl Fn(u128) -> bool + Sync,
) -> Result<Option<SolveOutcome>> {
    let base: Vec<Equation> = eqs.g1.iter().chain(&eqs.g0).copied().collect();
    let (_, free_probe) = plan(family, &base)?;
    let a = eqs.g0.len() as u32;
    let e_max = e_max.min(a);
    if free_probe.len() >= 63
        || (1u64 << free_probe.len()) as f64 * 2f64.powf(log2_binomial_sum(a, e_max))
            > candidate_cap as f64
    {
        return Err(Error::EnumerationBudgetExceeded { budget: candidate_cap });
    }

    for e in 0..=e_max {
        let mut flip_idx: Vec<usize> = (0..e as usize).collect();
        loop {
            let assignment: Vec<Equation> = {
                let mut eqs_now = base.clone();
                for &fpos in &flip_idx {
                    let slot = eqs.g1.len() + fpos;
                    eqs_now[slot].value = true;
                }
                eqs_now
            };
            let (planned, free) = plan(family, &assignment)?;
            let guesses = 1u128 << free.len();
            let hit = {
                #[cfg(feature = "parallel")]
                {
                    (0..guesses as u64).into_par_iter().find_map_first(|g| {
                        reconstruct(&planned, &free, g as u128).filter(|&k| verify(k))
                    })
                }
                #[cfg(not(feature = "parallel"))]
                {
                    (0..guesses as u64)
                        .find_map(|g| reconstruct(&planned, &free, g as u128).filter(|&k| verify(k)))
                }
            };
            if let Some(key) = hit {
                let flipped: Vec<u16> =
                    flip_idx.iter().map(|&fpos| eqs.g0[fpos].factor).collect();
                return Ok(Some(SolveOutcome { key, flipped }));
            }
            if !next_combination(&mut flip_idx, eqs.g0.len()) {
                break;
            }
        }
    }
    Ok(None)
}

/// A verifier closure comparing regenerated keystream against the victim's.
pub fn keystream_verifier(
    expected: &[bool],
    iv: u128,
    init_rounds: u32,
) -> impl Fn(u128) -> bool + Sync + '_ {
    move |key| keystream_bits(key, iv, init_rounds, expected.len()) == expected
}

/// Both cost terms and their sum, as log2 values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    /// Summing every cube once: log2(cube count) + log2(2^cube size).
    pub offline_log2: f64,
    /// Brute force over unpinned bits times the flip sets: (80 - a - b) +
    /// log2(sum_{i<=e} C(a, i)).
    pub online_log2: f64,
    pub total_log2: f64,
}

/// Cost of recovering one key that saw `a` zero-guesses (`e` of them
/// wrong) and `b` certainties, with the offline phase summing
/// `2^cube_count_log2` cubes of `2^cube_size_log2` values each.
pub fn complexity_estimate(
    a: u32,
    b: u32,
    e: u32,
    cube_count_log2: f64,
    cube_size_log2: f64,
) -> CostEstimate {
    let offline = cube_count_log2 + cube_size_log2;
    let online = (80.0 - a as f64 - b as f64) + log2_binomial_sum(a, e.min(a));
    let (hi, lo) = if offline >= online { (offline, online) } else { (online, offline) };
    let total = hi + (1.0 + 2f64.powf(lo - hi)).log2();
    CostEstimate { offline_log2: offline, online_log2: online, total_log2: total }
}

/// Exact two-sided binomial test: the p-value sums the probabilities of
/// all outcomes no more likely than the observation.
pub fn binomial_p_value(successes: u64, trials: u64, p0: f64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if successes > trials {
        return Err(Error::InvalidArgument("successes cannot exceed trials".into()));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::InvalidArgument("null probability must lie in (0, 1)".into()));
    }
    let dist = Binomial::new(p0, trials)
        .map_err(|e| Error::InvalidArgument(format!("binomial distribution: {e}")))?;
    let cutoff = dist.ln_pmf(successes) + (1.0 + 1e-7f64).ln();
    let p: f64 = (0..=trials)
        .filter(|&k| dist.ln_pmf(k) <= cutoff)
        .map(|k| dist.pmf(k))
        .sum();
    Ok(p.min(1.0))
}

/// Accepts the hypothesis that the success probability is `p0` when the
/// two-sided p-value exceeds `alpha`.
pub fn binomial_check(successes: u64, trials: u64, p0: f64, alpha: f64) -> Result<bool> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument("significance level must lie in (0, 1)".into()));
    }
    Ok(binomial_p_value(successes, trials, p0)? > alpha)
}
