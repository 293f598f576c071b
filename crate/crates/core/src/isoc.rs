//! Threshold search over index sets of cube variables.
//!
//! A candidate index set is good when the estimated degree of the output in
//! its variables stays below a threshold. Bad candidates are shrunk to a
//! small bad core; degree bounds are monotone under set inclusion, so every
//! superset of a core is bad too and gets skipped without another estimate.

use crate::degree::DegreeValue;
use crate::error::{Error, Result};
use crate::estimate::{estimate_degree, Mode, MAX_SUB_INDICES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
#[cfg(feature = "parallel")]
use std::sync::Mutex;

/// IV width of the reduced search space used by tests and examples: only
/// the first 20 IV indices participate, the rest stay zero.
pub const TOY_IV_WIDTH: u8 = 20;

/// Full IV width of the cipher.
pub const FULL_IV_WIDTH: u8 = 80;

/// Parameters shared by every estimate of one search run.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Candidate indices range over `0..iv_width`.
    pub iv_width: u8,
    /// Round count the degree estimates are taken at.
    pub rounds: u32,
    /// Estimator boundary mode.
    pub mode: Mode,
    /// Seed for the randomized shrink descent, recorded in results.
    pub seed: u64,
}

impl SearchConfig {
    /// Full-width search with the sound boundary mode.
    pub fn standard(rounds: u32, seed: u64) -> Self {
        SearchConfig { iv_width: FULL_IV_WIDTH, rounds, mode: Mode::Clamped, seed }
    }

    /// Search restricted to the first [`TOY_IV_WIDTH`] IV indices, small
    /// enough to compare against exhaustive classification.
    pub fn toy(rounds: u32, seed: u64) -> Self {
        SearchConfig { iv_width: TOY_IV_WIDTH, rounds, mode: Mode::Clamped, seed }
    }
}

/// One accepted index set with the bound that admitted it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoodIsoc {
    pub indices: Vec<u8>,
    pub estimate: DegreeValue,
    /// Seed of the run that produced this entry.
    pub seed: u64,
}

/// All accepted index sets of a run, in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoodSet {
    pub isocs: Vec<GoodIsoc>,
}

impl GoodSet {
    pub fn len(&self) -> usize {
        self.isocs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.isocs.is_empty()
    }

    pub fn contains(&self, indices: &[u8]) -> bool {
        self.isocs.iter().any(|g| g.indices == indices)
    }

    pub fn iter(&self) -> impl Iterator<Item = &GoodIsoc> {
        self.isocs.iter()
    }

    fn sort(&mut self) {
        self.isocs.sort_by(|a, b| a.indices.cmp(&b.indices));
    }
}

/// Search accounting. `pruned` counts candidates dismissed by a recorded
/// witness, i.e. without spending an estimator call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub enumerated: u64,
    pub estimator_calls: u64,
    pub pruned: u64,
    pub witnesses: usize,
}

impl SearchStats {
    fn merge(&mut self, other: &SearchStats) {
        self.enumerated += other.enumerated;
        self.estimator_calls += other.estimator_calls;
        self.pruned += other.pruned;
    }
}

/// Everything a search run produces: the good sets, the bad cores that did
/// the pruning, and the accounting.
#[derive(Debug, Clone)]
pub struct SearchReport {
    pub good: GoodSet,
    pub witnesses: Vec<Vec<u8>>,
    pub stats: SearchStats,
}

/// Prefix trie over sorted index sets answering "does any stored set lie
/// inside this candidate". Children are kept sorted so a lookup walks the
/// candidate and the child list in step.
#[derive(Debug)]
struct WitnessTrie {
    nodes: Vec<TrieNode>,
}

#[derive(Debug, Default)]
struct TrieNode {
    terminal: bool,
    children: Vec<(u8, u32)>,
}

impl WitnessTrie {
    fn new() -> Self {
        WitnessTrie { nodes: vec![TrieNode::default()] }
    }

    fn insert(&mut self, witness: &[u8]) {
        let mut node = 0usize;
        for &i in witness {
            if self.nodes[node].terminal {
                return;
            }
            node = match self.nodes[node].children.binary_search_by_key(&i, |c| c.0) {
                Ok(pos) => self.nodes[node].children[pos].1 as usize,
                Err(pos) => {
                    let fresh = self.nodes.len() as u32;
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.insert(pos, (i, fresh));
                    fresh as usize
                }
            };
        }
        self.nodes[node].terminal = true;
    }

    /// True when some stored witness is a subset of `candidate`.
    fn covers(&self, candidate: &[u8]) -> bool {
        self.covers_from(0, candidate)
    }

    fn covers_from(&self, node: usize, candidate: &[u8]) -> bool {
        let n = &self.nodes[node];
        if n.terminal {
            return true;
        }
        let mut ci = 0usize;
        for (pos, &cand) in candidate.iter().enumerate() {
            while ci < n.children.len() && n.children[ci].0 < cand {
                ci += 1;
            }
            if ci == n.children.len() {
                return false;
            }
            if n.children[ci].0 == cand
                && self.covers_from(n.children[ci].1 as usize, &candidate[pos + 1..])
            {
                return true;
            }
        }
        false
    }

    fn absorb(&mut self, log: &[Vec<u8>], mark: &mut usize) {
        for w in &log[*mark..] {
            self.insert(w);
        }
        *mark = log.len();
    }
}

fn validate_indices(set: &[u8], width: u8, what: &str) -> Result<()> {
    for w in set.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument(format!(
                "{what} indices must be strictly increasing"
            )));
        }
    }
    if set.iter().any(|&i| i >= width) {
        return Err(Error::InvalidArgument(format!("{what} index out of range 0..{width}")));
    }
    Ok(())
}

fn validate_search(j: &[u8], k: usize, d: i32, a: u32, cfg: &SearchConfig) -> Result<()> {
    if cfg.iv_width == 0 || cfg.iv_width > FULL_IV_WIDTH {
        return Err(Error::InvalidArgument("iv width must be in 1..=80".into()));
    }
    validate_indices(j, cfg.iv_width, "required-subset")?;
    if j.len() > MAX_SUB_INDICES {
        return Err(Error::IndexSetTooLarge { len: j.len(), cap: MAX_SUB_INDICES });
    }
    if k == 0 || k < j.len() || k > cfg.iv_width as usize {
        return Err(Error::InvalidArgument(format!(
            "size {k} must satisfy |J| <= size <= iv width"
        )));
    }
    if d <= j.len() as i32 {
        return Err(Error::InvalidArgument(format!(
            "threshold {d} must exceed the required subset size {}",
            j.len()
        )));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("shrink attempt count must be at least 1".into()));
    }
    Ok(())
}

fn shrink_seed(seed: u64, candidate: &[u8]) -> u64 {
    candidate.iter().fold(seed, |h, &i| h.wrapping_mul(131).wrapping_add(i as u64 + 1))
}

/// Shrinks a bad candidate to a small bad core by randomized descent.
///
/// Repeatedly drops one random non-required index as long as the estimate
/// stays at or above the threshold; a level ends after `a` consecutive
/// drops that fell below. The result `K` satisfies `J ⊆ K ⊆ I` with
/// estimate(K) ≥ d, and monotonicity extends that bound to every superset
/// of `K`.
pub fn prune_witness(i: &[u8], j: &[u8], d: i32, a: u32, cfg: &SearchConfig) -> Result<Vec<u8>> {
    validate_indices(i, cfg.iv_width, "candidate")?;
    validate_indices(j, cfg.iv_width, "required-subset")?;
    if !is_subset(j, i) {
        return Err(Error::InvalidArgument("required subset must lie inside the candidate".into()));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("shrink attempt count must be at least 1".into()));
    }
    let start = estimate_degree(i, j, cfg.rounds, cfg.mode)?;
    if start < DegreeValue::finite(d) {
        return Err(Error::InvalidArgument(
            "witness shrinking needs a candidate at or above the threshold".into(),
        ));
    }
    let mut calls = 0u64;
    shrink(i, j, d, a, cfg, &mut calls)
}

fn shrink(
    i: &[u8],
    j: &[u8],
    d: i32,
    a: u32,
    cfg: &SearchConfig,
    calls: &mut u64,
) -> Result<Vec<u8>> {
    let threshold = DegreeValue::finite(d);
    let mut rng = ChaCha8Rng::seed_from_u64(shrink_seed(cfg.seed, i));
    let mut cur = i.to_vec();
    'level: loop {
        let droppable: Vec<usize> = (0..cur.len()).filter(|&p| !j.contains(&cur[p])).collect();
        if droppable.is_empty() {
            return Ok(cur);
        }
        for _ in 0..a {
            let p = droppable[rng.gen_range(0..droppable.len())];
            let mut cand = cur.clone();
            cand.remove(p);
            let est = estimate_degree(&cand, j, cfg.rounds, cfg.mode)?;
            *calls += 1;
            if est >= threshold {
                cur = cand;
                continue 'level;
            }
        }
        return Ok(cur);
    }
}

fn is_subset(small: &[u8], big: &[u8]) -> bool {
    small.iter().all(|i| big.contains(i))
}

struct ShardOut {
    good: Vec<GoodIsoc>,
    witnesses: Vec<Vec<u8>>,
    stats: SearchStats,
}

impl ShardOut {
    fn new() -> Self {
        ShardOut { good: Vec::new(), witnesses: Vec::new(), stats: SearchStats::default() }
    }
}

/// Handles one candidate: witness check, estimate, accept or shrink.
/// `absorb` pulls witnesses broadcast by other shards right before the
/// expensive step; `publish` hands a fresh witness back out. Exclusion is
/// an optimization only, so broadcast timing never changes the good set.
fn process_candidate(
    cand: &[u8],
    j: &[u8],
    d: i32,
    a: u32,
    cfg: &SearchConfig,
    trie: &mut WitnessTrie,
    absorb: &mut dyn FnMut(&mut WitnessTrie),
    publish: &mut dyn FnMut(&[u8]),
    out: &mut ShardOut,
) -> Result<()> {
    out.stats.enumerated += 1;
    if trie.covers(cand) {
        out.stats.pruned += 1;
        return Ok(());
    }
    absorb(trie);
    if trie.covers(cand) {
        out.stats.pruned += 1;
        return Ok(());
    }
    let est = estimate_degree(cand, j, cfg.rounds, cfg.mode)?;
    out.stats.estimator_calls += 1;
    if est < DegreeValue::finite(d) {
        out.good.push(GoodIsoc { indices: cand.to_vec(), estimate: est, seed: cfg.seed });
    } else {
        let w = shrink(cand, j, d, a, cfg, &mut out.stats.estimator_calls)?;
        trie.insert(&w);
        publish(&w);
        out.witnesses.push(w);
    }
    Ok(())
}

/// Visits every size-`picks` combination of `pool` in lexicographic order,
/// assembled together with the fixed part into a sorted candidate.
fn for_each_combination(
    fixed: &[u8],
    pool: &[u8],
    picks: usize,
    mut visit: impl FnMut(&[u8]) -> Result<()>,
) -> Result<()> {
    if picks > pool.len() {
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..picks).collect();
    let mut cand: Vec<u8> = Vec::with_capacity(fixed.len() + picks);
    loop {
        cand.clear();
        cand.extend_from_slice(fixed);
        cand.extend(idx.iter().map(|&p| pool[p]));
        cand.sort_unstable();
        visit(&cand)?;
        let mut pos = picks;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            if idx[pos] + (picks - pos) < pool.len() {
                idx[pos] += 1;
                for later in pos + 1..picks {
                    idx[later] = idx[later - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Scans the shard of candidates whose smallest non-required index is
/// `free[lead]`.
#[allow(clippy::too_many_arguments)]
fn scan_shard(
    lead: usize,
    free: &[u8],
    picks: usize,
    j: &[u8],
    d: i32,
    a: u32,
    cfg: &SearchConfig,
    trie: &mut WitnessTrie,
    absorb: &mut dyn FnMut(&mut WitnessTrie),
    publish: &mut dyn FnMut(&[u8]),
) -> Result<ShardOut> {
    let mut out = ShardOut::new();
    let mut fixed = j.to_vec();
    fixed.push(free[lead]);
    fixed.sort_unstable();
    for_each_combination(&fixed, &free[lead + 1..], picks - 1, |cand| {
        process_candidate(cand, j, d, a, cfg, trie, absorb, publish, &mut out)
    })?;
    Ok(out)
}

fn finish(mut good: GoodSet, mut witnesses: Vec<Vec<u8>>, stats: SearchStats) -> SearchReport {
    good.sort();
    witnesses.sort();
    witnesses.dedup();
    let stats = SearchStats { witnesses: witnesses.len(), ..stats };
    SearchReport { good, witnesses, stats }
}

fn lone_candidate(j: &[u8], d: i32, a: u32, cfg: &SearchConfig) -> Result<SearchReport> {
    let mut out = ShardOut::new();
    let mut trie = WitnessTrie::new();
    process_candidate(j, j, d, a, cfg, &mut trie, &mut |_| {}, &mut |_| {}, &mut out)?;
    Ok(finish(GoodSet { isocs: out.good }, out.witnesses, out.stats))
}

/// Searches all size-`k` supersets of `j` inside `0..cfg.iv_width` and
/// returns the ones whose estimated degree stays below `d`, shrinking each
/// failure to a witness that silently excludes its supersets.
///
/// Shards split by leading non-required index run in parallel and broadcast
/// witnesses to each other best-effort; the good set does not depend on
/// broadcast timing, only the call count does.
pub fn search_report(
    j: &[u8],
    k: usize,
    d: i32,
    a: u32,
    cfg: &SearchConfig,
) -> Result<SearchReport> {
    #[cfg(feature = "parallel")]
    {
        validate_search(j, k, d, a, cfg)?;
        let free: Vec<u8> = (0..cfg.iv_width).filter(|i| !j.contains(i)).collect();
        let picks = k - j.len();
        if picks == 0 {
            return lone_candidate(j, d, a, cfg);
        }
        if free.len() < picks {
            return Ok(finish(GoodSet::default(), Vec::new(), SearchStats::default()));
        }
        let log: Mutex<Vec<Vec<u8>>> = Mutex::new(Vec::new());
        let outs: Vec<ShardOut> = (0..=free.len() - picks)
            .into_par_iter()
            .map(|lead| {
                let mut trie = WitnessTrie::new();
                let mut mark = 0usize;
                scan_shard(
                    lead,
                    &free,
                    picks,
                    j,
                    d,
                    a,
                    cfg,
                    &mut trie,
                    &mut |t| t.absorb(&log.lock().unwrap(), &mut mark),
                    &mut |w| log.lock().unwrap().push(w.to_vec()),
                )
            })
            .collect::<Result<_>>()?;
        let mut good = GoodSet::default();
        let mut witnesses = Vec::new();
        let mut stats = SearchStats::default();
        for out in outs {
            good.isocs.extend(out.good);
            witnesses.extend(out.witnesses);
            stats.merge(&out.stats);
        }
        Ok(finish(good, witnesses, stats))
    }
    #[cfg(not(feature = "parallel"))]
    {
        search_report_seq(j, k, d, a, cfg)
    }
}

/// Sequential variant: one witness trie, shards scanned in lexicographic
/// order, so the enumeration order and the call count are reproducible.
pub fn search_report_seq(
    j: &[u8],
    k: usize,
    d: i32,
    a: u32,
    cfg: &SearchConfig,
) -> Result<SearchReport> {
    validate_search(j, k, d, a, cfg)?;
    let free: Vec<u8> = (0..cfg.iv_width).filter(|i| !j.contains(i)).collect();
    let picks = k - j.len();
    if picks == 0 {
        return lone_candidate(j, d, a, cfg);
    }
    if free.len() < picks {
        return Ok(finish(GoodSet::default(), Vec::new(), SearchStats::default()));
    }
    let mut trie = WitnessTrie::new();
    let mut good = GoodSet::default();
    let mut witnesses = Vec::new();
    let mut stats = SearchStats::default();
    for lead in 0..=free.len() - picks {
        let out = scan_shard(
            lead,
            &free,
            picks,
            j,
            d,
            a,
            cfg,
            &mut trie,
            &mut |_| {},
            &mut |_| {},
        )?;
        good.isocs.extend(out.good);
        witnesses.extend(out.witnesses);
        stats.merge(&out.stats);
    }
    Ok(finish(good, witnesses, stats))
}

/// [`search_report`] reduced to the accepted sets.
pub fn search(j: &[u8], k: usize, d: i32, a: u32, cfg: &SearchConfig) -> Result<GoodSet> {
    Ok(search_report(j, k, d, a, cfg)?.good)
}

/// Classifies every candidate by a direct estimate, no pruning. The
/// reference the search is measured against.
pub fn exhaustive_classify(
    j: &[u8],
    k: usize,
    d: i32,
    a: u32,
    cfg: &SearchConfig,
) -> Result<(GoodSet, SearchStats)> {
    validate_search(j, k, d, a, cfg)?;
    let free: Vec<u8> = (0..cfg.iv_width).filter(|i| !j.contains(i)).collect();
    let picks = k - j.len();
    let mut candidates: Vec<Vec<u8>> = Vec::new();
    for_each_combination(j, &free, picks, |cand| {
        candidates.push(cand.to_vec());
        Ok(())
    })?;
    let classify = |cand: &Vec<u8>| -> Result<Option<GoodIsoc>> {
        let est = estimate_degree(cand, j, cfg.rounds, cfg.mode)?;
        Ok((est < DegreeValue::finite(d)).then(|| GoodIsoc {
            indices: cand.clone(),
            estimate: est,
            seed: cfg.seed,
        }))
    };
    let classified: Vec<Option<GoodIsoc>> = {
        #[cfg(feature = "parallel")]
        {
            candidates.par_iter().map(classify).collect::<Result<_>>()?
        }
        #[cfg(not(feature = "parallel"))]
        {
            candidates.iter().map(classify).collect::<Result<_>>()?
        }
    };
    let mut good = GoodSet { isocs: classified.into_iter().flatten().collect() };
    good.sort();
    let n = candidates.len() as u64;
    let stats = SearchStats { enumerated: n, estimator_calls: n, pruned: 0, witnesses: 0 };
    Ok((good, stats))
}
