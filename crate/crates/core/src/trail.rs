//! Monomial-trail engine over the cipher's layered round graph.
//!
//! A [`Pattern`] is a set of state cells at one round and stands for the
//! product of those cells. Expanding a pattern one round backwards lists the
//! previous-round monomials it can arise from; a trail is a chain of such
//! expansions down to a source layer. A monomial is present in the composed
//! ANF exactly when it terminates an odd number of trails, which is the fact
//! everything here counts.
//!
//! Cell flags prune the graph. A cell known to be constant zero kills every
//! term it appears in and a constant one drops out of its term, so trails
//! never pass through constant cells. Flags are seeded exactly from the
//! round-0 loading, sharpened by exact symbolic expansion for as long as a
//! term budget lasts, and propagated by constant algebra beyond that.

use std::fmt;
use std::rc::Rc;

use rustc_hash::{FxHashMap, FxHashSet};
use smallvec::SmallVec;

use crate::anf::{Monomial, Poly, Var};
use crate::error::{Error, Result};
use crate::symbolic::{CellValue, SymbolicState};
use crate::trivium::{checked_cube, IV_BITS, KEY_BITS, OUT_TAPS, STATE_BITS};

/// Default cap on visited expansion nodes for trail searches.
pub const DEFAULT_NODE_BUDGET: u64 = 1_000_000_000;

/// Default term budget for the symbolic pass that sharpens cell flags.
pub const DEFAULT_SHARPEN_BUDGET: usize = 1 << 18;

const PATTERN_WORDS: usize = 5;

/// Feedback positions after the shift, and the previous-round cells feeding
/// them: one quadratic term and three linear taps each.
const FB_CELLS: [usize; 3] = [0, 93, 177];
const FB_TERMS: [[&[usize]; 4]; 3] = [
    [&[285, 286], &[242], &[287], &[68]],
    [&[90, 91], &[65], &[92], &[170]],
    [&[174, 175], &[161], &[176], &[263]],
];

fn fb_index(cell: usize) -> Option<usize> {
    FB_CELLS.iter().position(|&c| c == cell)
}

/// Set of state cells at a fixed round, representing their product.
///
/// The empty pattern is the constant-one monomial. Patterns order as the
/// 320-bit integer value of their cell mask, used wherever a deterministic
/// traversal or listing is required.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Debug)]
pub struct Pattern([u64; PATTERN_WORDS]);

impl PartialOrd for Pattern {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pattern {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.iter().rev().cmp(other.0.iter().rev())
    }
}

impl Pattern {
    pub const EMPTY: Pattern = Pattern([0; PATTERN_WORDS]);

    pub fn singleton(cell: usize) -> Self {
        let mut p = Pattern::EMPTY;
        p.set(cell);
        p
    }

    pub fn from_cells(cells: impl IntoIterator<Item = usize>) -> Self {
        let mut p = Pattern::EMPTY;
        for c in cells {
            p.set(c);
        }
        p
    }

    pub fn set(&mut self, cell: usize) {
        assert!(cell < STATE_BITS);
        self.0[cell / 64] |= 1 << (cell % 64);
    }

    pub fn test(&self, cell: usize) -> bool {
        cell < STATE_BITS && self.0[cell / 64] >> (cell % 64) & 1 == 1
    }

    pub fn or(&self, other: &Pattern) -> Pattern {
        let mut w = self.0;
        for (a, b) in w.iter_mut().zip(other.0.iter()) {
            *a |= b;
        }
        Pattern(w)
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    pub fn weight(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }

    /// Cells in ascending order.
    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    None
                } else {
                    let b = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }

    /// Key-bit mask of the cells in the key region, meaningful at round 0.
    pub fn k_mask(&self) -> u128 {
        self.cells().filter(|&c| c < KEY_BITS).fold(0, |m, c| m | 1 << c)
    }

    /// IV-bit mask of the cells in the IV region, meaningful at round 0.
    pub fn x_mask(&self) -> u128 {
        self.cells()
            .filter(|&c| (93..93 + IV_BITS).contains(&c))
            .fold(0, |m, c| m | 1 << (c - 93))
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "{{}}");
        }
        write!(f, "{{")?;
        for (i, c) in self.cells().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "}}")
    }
}

/// Exact constant knowledge about one state cell at one round.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Flag {
    Zero,
    One,
    Free,
}

fn and_flag(a: Flag, b: Flag) -> Flag {
    match (a, b) {
        (Flag::Zero, _) | (_, Flag::Zero) => Flag::Zero,
        (Flag::One, Flag::One) => Flag::One,
        _ => Flag::Free,
    }
}

fn xor_flags(flags: impl IntoIterator<Item = Flag>) -> Flag {
    let mut ones = 0u32;
    for f in flags {
        match f {
            Flag::Free => return Flag::Free,
            Flag::One => ones ^= 1,
            Flag::Zero => {}
        }
    }
    if ones == 1 {
        Flag::One
    } else {
        Flag::Zero
    }
}

/// Per-round, per-cell constant flags for a cube-restricted initialisation.
pub struct FlagGrid {
    rows: Vec<[Flag; STATE_BITS]>,
    sharpened_to: u32,
}

impl FlagGrid {
    /// Flags for rounds `0..=rounds` with non-cube IV bits fixed to
    /// `iv_base`. Rows are exact symbolic classifications while
    /// `sharpen_budget` terms last, constant-algebra propagation afterwards.
    pub fn build(cube: &[u8], iv_base: u128, rounds: u32, sharpen_budget: usize) -> Result<FlagGrid> {
        checked_cube(cube)?;
        let mut rows = Vec::with_capacity(rounds as usize + 1);
        rows.push(loading_row(cube, iv_base));
        let mut sym = SymbolicState::new_cube(cube, iv_base);
        sym.budget = sharpen_budget;
        let mut sym_alive = sharpen_budget > 0;
        let mut sharpened_to = 0;
        for t in 1..=rounds {
            if sym_alive {
                match sym.step() {
                    Ok(()) => {
                        rows.push(classify_row(&sym));
                        sharpened_to = t;
                        continue;
                    }
                    Err(Error::TermBudgetExceeded { .. }) => sym_alive = false,
                    Err(e) => return Err(e),
                }
            }
            let next = algebra_row(rows.last().unwrap());
            rows.push(next);
        }
        Ok(FlagGrid { rows, sharpened_to })
    }

    pub fn rounds(&self) -> u32 {
        self.rows.len() as u32 - 1
    }

    /// Last round whose row came from exact symbolic classification.
    pub fn sharpened_to(&self) -> u32 {
        self.sharpened_to
    }

    pub fn flag(&self, round: u32, cell: usize) -> Flag {
        self.rows[round as usize][cell]
    }

    fn row(&self, round: u32) -> &[Flag; STATE_BITS] {
        &self.rows[round as usize]
    }
}

fn loading_row(cube: &[u8], iv_base: u128) -> [Flag; STATE_BITS] {
    let mut row = [Flag::Zero; STATE_BITS];
    for cell in row.iter_mut().take(KEY_BITS) {
        *cell = Flag::Free;
    }
    for j in 0..IV_BITS {
        row[93 + j] = if cube.contains(&(j as u8)) {
            Flag::Free
        } else if iv_base >> j & 1 == 1 {
            Flag::One
        } else {
            Flag::Zero
        };
    }
    for cell in row.iter_mut().skip(285) {
        *cell = Flag::One;
    }
    row
}

fn classify_row(sym: &SymbolicState) -> [Flag; STATE_BITS] {
    let mut row = [Flag::Zero; STATE_BITS];
    for (cell, value) in row.iter_mut().zip(sym.cell_values()) {
        *cell = match value {
            CellValue::Zero => Flag::Zero,
            CellValue::One => Flag::One,
            CellValue::Poly => Flag::Free,
        };
    }
    row
}

fn algebra_row(prev: &[Flag; STATE_BITS]) -> [Flag; STATE_BITS] {
    let mut row = [Flag::Free; STATE_BITS];
    for i in 0..STATE_BITS {
        if fb_index(i).is_none() {
            row[i] = prev[i - 1];
        }
    }
    for (fi, &cell) in FB_CELLS.iter().enumerate() {
        let terms = FB_TERMS[fi]
            .iter()
            .map(|vars| vars.iter().fold(Flag::One, |acc, &v| and_flag(acc, prev[v])));
        row[cell] = xor_flags(terms);
    }
    row
}

/// Budget over visited expansion nodes, shared across the passes of a search.
pub struct Budget {
    cap: u64,
    used: u64,
}

impl Budget {
    pub fn new(cap: u64) -> Self {
        Budget { cap, used: 0 }
    }

    pub fn charge(&mut self, n: u64) -> Result<()> {
        self.used = self.used.saturating_add(n);
        if self.used > self.cap {
            Err(Error::EnumerationBudgetExceeded { budget: self.cap })
        } else {
            Ok(())
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }
}

/// Layered backward-expansion graph between two rounds of one cube setup.
///
/// The graph is implicit: nodes are `(round, Pattern)` pairs and edges are
/// generated on demand by expanding a pattern one round down, under the
/// grid's cell flags. The sink side is round `r_end` (where the output bit
/// lives), the source side round `r_start`.
pub struct PropGraph {
    r_start: u32,
    r_end: u32,
    cube_mask: u128,
    flags: FlagGrid,
}

/// Builds the expansion graph for `cube` spanning rounds `r_start..=r_end`,
/// with non-cube IV bits zero and default flag sharpening.
pub fn build_graph(cube: &[u8], r_start: u32, r_end: u32) -> Result<PropGraph> {
    build_graph_with(cube, 0, r_start, r_end, DEFAULT_SHARPEN_BUDGET)
}

/// [`build_graph`] with an explicit IV base and flag-sharpening budget.
pub fn build_graph_with(
    cube: &[u8],
    iv_base: u128,
    r_start: u32,
    r_end: u32,
    sharpen_budget: usize,
) -> Result<PropGraph> {
    if r_start > r_end {
        return Err(Error::InvalidArgument(format!(
            "source round {r_start} past sink round {r_end}"
        )));
    }
    let flags = FlagGrid::build(cube, iv_base, r_end, sharpen_budget)?;
    let cube_mask = cube.iter().fold(0u128, |m, &j| m | 1 << j);
    Ok(PropGraph { r_start, r_end, cube_mask, flags })
}

impl PropGraph {
    pub fn r_start(&self) -> u32 {
        self.r_start
    }

    pub fn r_end(&self) -> u32 {
        self.r_end
    }

    pub fn cube_mask(&self) -> u128 {
        self.cube_mask
    }

    pub fn flags(&self) -> &FlagGrid {
        &self.flags
    }

    /// Sink patterns of the output bit at `r_end`: one singleton per free
    /// output tap, with constant-one taps toggling the empty pattern and
    /// constant-zero taps dropped. GF(2)-collapsed and sorted.
    pub fn output_patterns(&self) -> Vec<Pattern> {
        let row = self.flags.row(self.r_end);
        let mut acc: FxHashSet<Pattern> = FxHashSet::default();
        for &tap in OUT_TAPS.iter() {
            let pat = match row[tap] {
                Flag::Zero => continue,
                Flag::One => Pattern::EMPTY,
                Flag::Free => Pattern::singleton(tap),
            };
            if !acc.remove(&pat) {
                acc.insert(pat);
            }
        }
        let mut out: Vec<Pattern> = acc.into_iter().collect();
        out.sort_unstable();
        out
    }

    /// One-round-down expansions of `pat` at layer `round`, GF(2)-collapsed
    /// (children arising an even number of times cancel). Sorted.
    pub fn children_toggled(&self, round: u32, pat: &Pattern, budget: &mut Budget) -> Result<Vec<Pattern>> {
        debug_assert!(round > self.r_start && round <= self.r_end);
        let prev = self.flags.row(round - 1);
        let Some((base, lists)) = expand_lists(pat, prev) else {
            budget.charge(1)?;
            return Ok(Vec::new());
        };
        let combos: u64 = lists.iter().map(|l| l.len() as u64).product();
        budget.charge(combos.max(1))?;
        let mut acc: FxHashSet<Pattern> = FxHashSet::default();
        cartesian(base, &lists, &mut |p| {
            if !acc.remove(&p) {
                acc.insert(p);
            }
        });
        let mut out: Vec<Pattern> = acc.into_iter().collect();
        out.sort_unstable();
        Ok(out)
    }

    /// One-round-down expansions with multiplicities (no cancellation).
    pub fn children_counted(
        &self,
        round: u32,
        pat: &Pattern,
        budget: &mut Budget,
    ) -> Result<Vec<(Pattern, u128)>> {
        debug_assert!(round > self.r_start && round <= self.r_end);
        let prev = self.flags.row(round - 1);
        let Some((base, lists)) = expand_lists(pat, prev) else {
            budget.charge(1)?;
            return Ok(Vec::new());
        };
        let combos: u64 = lists.iter().map(|l| l.len() as u64).product();
        budget.charge(combos.max(1))?;
        let mut acc: FxHashMap<Pattern, u128> = FxHashMap::default();
        cartesian(base, &lists, &mut |p| {
            *acc.entry(p).or_insert(0) += 1;
        });
        let mut out: Vec<(Pattern, u128)> = acc.into_iter().collect();
        out.sort_unstable_by_key(|&(p, _)| p);
        Ok(out)
    }
}

type TermLists = SmallVec<[SmallVec<[Pattern; 4]>; 3]>;

/// Splits a pattern into the OR-base contributed by shifted cells and the
/// per-feedback-cell term choices, applying the previous round's flags.
/// `None` when some cell is constant zero under the flags.
fn expand_lists(pat: &Pattern, prev: &[Flag; STATE_BITS]) -> Option<(Pattern, TermLists)> {
    let mut base = Pattern::EMPTY;
    let mut lists: TermLists = SmallVec::new();
    for cell in pat.cells() {
        if let Some(fi) = fb_index(cell) {
            let mut options: SmallVec<[Pattern; 4]> = SmallVec::new();
            'term: for vars in FB_TERMS[fi].iter() {
                let mut term = Pattern::EMPTY;
                for &v in vars.iter() {
                    match prev[v] {
                        Flag::Zero => continue 'term,
                        Flag::One => {}
                        Flag::Free => term.set(v),
                    }
                }
                options.push(term);
            }
            if options.is_empty() {
                return None;
            }
            lists.push(options);
        } else {
            match prev[cell - 1] {
                Flag::Zero => return None,
                Flag::One => {}
                Flag::Free => base.set(cell - 1),
            }
        }
    }
    Some((base, lists))
}

fn cartesian(acc: Pattern, lists: &[SmallVec<[Pattern; 4]>], visit: &mut impl FnMut(Pattern)) {
    match lists.split_first() {
        None => visit(acc),
        Some((first, rest)) => {
            for p in first.iter() {
                cartesian(acc.or(p), rest, visit);
            }
        }
    }
}

/// Result of a trail count between two fixed patterns.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TrailCount {
    /// Number of trails mod 2; equals monomial presence in the composed ANF.
    pub parity: bool,
    /// Full trail count, absent if it overflowed the counter.
    pub count: Option<u128>,
}

/// Counts trails from `sink` at the graph's end round down to `source` at
/// its start round: exact parity plus the full count when representable.
pub fn count_trails_parity(
    g: &PropGraph,
    source: &Pattern,
    sink: &Pattern,
    node_budget: u64,
) -> Result<TrailCount> {
    let mut budget = Budget::new(node_budget);
    let mut pmemo: FxHashMap<(u32, Pattern), bool> = FxHashMap::default();
    let parity = parity_dfs(g, g.r_end, sink, source, &mut pmemo, &mut budget)?;
    let mut cmemo: FxHashMap<(u32, Pattern), Option<u128>> = FxHashMap::default();
    let count = count_dfs(g, g.r_end, sink, source, &mut cmemo, &mut budget)?;
    Ok(TrailCount { parity, count })
}

fn parity_dfs(
    g: &PropGraph,
    t: u32,
    pat: &Pattern,
    source: &Pattern,
    memo: &mut FxHashMap<(u32, Pattern), bool>,
    budget: &mut Budget,
) -> Result<bool> {
    if t == g.r_start() {
        return Ok(pat == source);
    }
    if let Some(&p) = memo.get(&(t, *pat)) {
        return Ok(p);
    }
    let mut parity = false;
    for child in g.children_toggled(t, pat, budget)? {
        parity ^= parity_dfs(g, t - 1, &child, source, memo, budget)?;
    }
    memo.insert((t, *pat), parity);
    Ok(parity)
}

fn count_dfs(
    g: &PropGraph,
    t: u32,
    pat: &Pattern,
    source: &Pattern,
    memo: &mut FxHashMap<(u32, Pattern), Option<u128>>,
    budget: &mut Budget,
) -> Result<Option<u128>> {
    if t == g.r_start() {
        return Ok(Some(u128::from(pat == source)));
    }
    if let Some(c) = memo.get(&(t, *pat)) {
        return Ok(*c);
    }
    let mut total: Option<u128> = Some(0);
    for (child, mult) in g.children_counted(t, pat, budget)? {
        let below = count_dfs(g, t - 1, &child, source, memo, budget)?;
        total = total
            .zip(below)
            .and_then(|(acc, b)| b.checked_mul(mult).and_then(|m| acc.checked_add(m)));
    }
    memo.insert((t, *pat), total);
    Ok(total)
}

/// Middle-round terms of the output: deduplicated, sorted patterns.
pub type TermSet = Vec<Pattern>;

/// Exact superpoly of `cube` after `rounds` rounds, over key variables,
/// with non-cube IV bits zero. Default budgets.
pub fn superpoly_direct(cube: &[u8], rounds: u32) -> Result<Poly> {
    superpoly_direct_budgeted(cube, rounds, DEFAULT_NODE_BUDGET, DEFAULT_SHARPEN_BUDGET)
}

/// [`superpoly_direct`] with explicit node and flag-sharpening budgets.
pub fn superpoly_direct_budgeted(
    cube: &[u8],
    rounds: u32,
    node_budget: u64,
    sharpen_budget: usize,
) -> Result<Poly> {
    let g = build_graph_with(cube, 0, 0, rounds, sharpen_budget)?;
    let mut budget = Budget::new(node_budget);
    let survivors = sweep_toggle(&g, rounds, 0, &mut budget)?;
    let mut masks: Vec<u128> =
        survivors.iter().filter_map(|p| base_k_mask(p, g.cube_mask())).collect();
    masks.sort_unstable();
    Ok(Poly::from_terms(masks.into_iter().map(k_monomial)))
}

/// GF(2)-collapsed backward sweep of the output patterns from `from_round`
/// down to `to_round`, keeping only two adjacent layers in memory. The result
/// holds the odd-parity patterns at the target layer.
fn sweep_toggle(
    g: &PropGraph,
    from_round: u32,
    to_round: u32,
    budget: &mut Budget,
) -> Result<FxHashSet<Pattern>> {
    let mut cur: FxHashSet<Pattern> = FxHashSet::default();
    for pat in g.output_patterns() {
        if !cur.remove(&pat) {
            cur.insert(pat);
        }
    }
    for t in ((to_round + 1)..=from_round).rev() {
        let mut next: FxHashSet<Pattern> =
            FxHashSet::with_capacity_and_hasher(cur.len(), Default::default());
        for pat in cur.iter() {
            for child in g.children_toggled(t, pat, budget)? {
                if !next.remove(&child) {
                    next.insert(child);
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Superpoly contribution of a single pattern sitting at `round` in a graph
/// whose source layer is round 0: the key polynomial whose monomials have an
/// odd number of trails from the pattern to the cube monomial.
pub fn superpoly_of_pattern(
    g: &PropGraph,
    round: u32,
    pat: &Pattern,
    node_budget: u64,
) -> Result<Poly> {
    if g.r_start() != 0 || round > g.r_end() {
        return Err(Error::InvalidArgument(
            "pattern superpolys need a graph rooted at round 0".into(),
        ));
    }
    let mut budget = Budget::new(node_budget);
    let mut memo: FxHashMap<(u32, Pattern), Rc<Vec<u128>>> = FxHashMap::default();
    let ks = kset_dfs(g, round, pat, &mut memo, &mut budget)?;
    Ok(Poly::from_terms(ks.iter().copied().map(k_monomial)))
}

fn kset_dfs(
    g: &PropGraph,
    t: u32,
    pat: &Pattern,
    memo: &mut FxHashMap<(u32, Pattern), Rc<Vec<u128>>>,
    budget: &mut Budget,
) -> Result<Rc<Vec<u128>>> {
    if t == 0 {
        let ks = match base_k_mask(pat, g.cube_mask()) {
            Some(k) => vec![k],
            None => Vec::new(),
        };
        return Ok(Rc::new(ks));
    }
    if let Some(v) = memo.get(&(t, *pat)) {
        return Ok(v.clone());
    }
    budget.charge(1)?;
    let mut acc: FxHashSet<u128> = FxHashSet::default();
    for child in g.children_toggled(t, pat, budget)? {
        let below = kset_dfs(g, t - 1, &child, memo, budget)?;
        for &w in below.iter() {
            if !acc.remove(&w) {
                acc.insert(w);
            }
        }
    }
    let mut v: Vec<u128> = acc.into_iter().collect();
    v.sort_unstable();
    let rc = Rc::new(v);
    memo.insert((t, *pat), rc.clone());
    Ok(rc)
}

/// Round-0 classification of a pattern: its key mask if the IV part equals
/// the cube monomial exactly, `None` if it misses it or touches a cell that
/// is constant at loading.
fn base_k_mask(pat: &Pattern, cube_mask: u128) -> Option<u128> {
    let mut k = 0u128;
    let mut x = 0u128;
    for c in pat.cells() {
        if c < KEY_BITS {
            k |= 1 << c;
        } else if (93..93 + IV_BITS).contains(&c) {
            x |= 1 << (c - 93);
        } else if c < 285 {
            return None;
        }
    }
    (x == cube_mask).then_some(k)
}

fn k_monomial(mask: u128) -> Monomial {
    Monomial::from_vars((0..KEY_BITS).filter(|&i| mask >> i & 1 == 1).map(|i| Var::k(i as u16)))
}

/// Middle-round terms of the output at `r_m` that both feed the output with
/// odd trail parity and are reachable from the cube monomial times some key
/// monomial. Default budgets.
pub fn obtain_valuable_terms(cube: &[u8], r_m: u32, rounds: u32) -> Result<TermSet> {
    obtain_valuable_terms_budgeted(cube, r_m, rounds, DEFAULT_NODE_BUDGET, DEFAULT_SHARPEN_BUDGET)
}

/// [`obtain_valuable_terms`] with explicit budgets.
pub fn obtain_valuable_terms_budgeted(
    cube: &[u8],
    r_m: u32,
    rounds: u32,
    node_budget: u64,
    sharpen_budget: usize,
) -> Result<TermSet> {
    if r_m == 0 || r_m >= rounds {
        return Err(Error::InvalidArgument(format!(
            "middle round {r_m} must lie strictly between 0 and {rounds}"
        )));
    }
    let g = build_graph_with(cube, 0, 0, rounds, sharpen_budget)?;
    let mut budget = Budget::new(node_budget);

    // Parity sweep from the sink layer down to the middle round settles every
    // pattern's parity exactly once per layer via the toggle collapse. The
    // survivors are then screened for reachability: each cell of a term
    // descends independently and base x-parts combine by union, so a term can
    // reach the cube monomial only if its cells' reachable x-parts jointly
    // cover it. The per-cell families come from one bottom-up pass shared by
    // every term, which keeps the screen at layer width instead of cone size.
    let swept = sweep_toggle(&g, rounds, r_m, &mut budget)?;
    let mut candidates: Vec<Pattern> = swept.into_iter().collect();
    candidates.sort_unstable();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let fams = reach_families(&g, r_m, &mut budget)?;
    let full = (1u128 << g.cube_mask().count_ones()) - 1;
    let mut out = Vec::new();
    for pat in candidates {
        let mut fs: Vec<&[u128]> = pat.cells().map(|c| fams[c].as_slice()).collect();
        fs.sort_unstable_by_key(|f| f.len());
        if cover_exists(&fs, full, &mut budget)? {
            out.push(pat);
        }
    }
    Ok(out)
}

/// Per-cell antichains of reachable cube x-parts at `round`.
///
/// Entry `c` lists the maximal subsets of the cube monomial, as masks over
/// cube ordinals, that terminate some trail from cell `c` alongside an
/// arbitrary key part. An empty list means no trail from the cell survives
/// the flags. Keeping only maximal masks is lossless for cover queries since
/// every mask is a subset of the cube and larger picks only help.
fn reach_families(g: &PropGraph, round: u32, budget: &mut Budget) -> Result<Vec<Rc<Vec<u128>>>> {
    debug_assert_eq!(g.r_start(), 0);
    debug_assert!(round <= g.r_end());
    let mut ordinal = [0u32; IV_BITS];
    let mut k = 0u32;
    for i in 0..IV_BITS {
        if g.cube_mask() >> i & 1 == 1 {
            ordinal[i] = k;
            k += 1;
        }
    }
    let dead: Rc<Vec<u128>> = Rc::new(Vec::new());
    let unit: Rc<Vec<u128>> = Rc::new(vec![0]);
    let mut cur: Vec<Rc<Vec<u128>>> = (0..STATE_BITS)
        .map(|c| match g.flags().flag(0, c) {
            Flag::Zero => dead.clone(),
            Flag::One => unit.clone(),
            Flag::Free if c < KEY_BITS => unit.clone(),
            Flag::Free => {
                debug_assert!((93..93 + IV_BITS).contains(&c));
                Rc::new(vec![1u128 << ordinal[c - 93]])
            }
        })
        .collect();
    for t in 1..=round {
        let prev_row = g.flags().row(t - 1);
        let mut next: Vec<Rc<Vec<u128>>> = Vec::with_capacity(STATE_BITS);
        for c in 0..STATE_BITS {
            let fam = match g.flags().flag(t, c) {
                Flag::Zero => dead.clone(),
                Flag::One => unit.clone(),
                Flag::Free => match fb_index(c) {
                    None => cur[c - 1].clone(),
                    Some(fi) => {
                        let mut acc: Vec<u128> = Vec::new();
                        'term: for vars in FB_TERMS[fi].iter() {
                            let mut factors: SmallVec<[&Vec<u128>; 2]> = SmallVec::new();
                            for &v in vars.iter() {
                                match prev_row[v] {
                                    Flag::Zero => continue 'term,
                                    Flag::One => {}
                                    Flag::Free => factors.push(&cur[v]),
                                }
                            }
                            match factors.as_slice() {
                                [] => antichain_insert(&mut acc, 0),
                                [a] => {
                                    budget.charge(a.len() as u64)?;
                                    for &m in a.iter() {
                                        antichain_insert(&mut acc, m);
                                    }
                                }
                                [a, b] => {
                                    budget.charge(a.len() as u64 * b.len() as u64)?;
                                    for &ma in a.iter() {
                                        for &mb in b.iter() {
                                            antichain_insert(&mut acc, ma | mb);
                                        }
                                    }
                                }
                                _ => unreachable!("feedback terms have at most two cells"),
                            }
                        }
                        acc.sort_unstable();
                        Rc::new(acc)
                    }
                },
            };
            next.push(fam);
        }
        cur = next;
    }
    Ok(cur)
}

/// Inserts `m` keeping only masks maximal under inclusion.
fn antichain_insert(acc: &mut Vec<u128>, m: u128) {
    if acc.iter().any(|&a| a & m == m) {
        return;
    }
    acc.retain(|&a| a & m != a);
    acc.push(m);
}

/// Whether one mask per family can be chosen so their union equals `full`.
/// Families must all be nonempty to succeed: each stands for a cell that has
/// to complete its own trail.
fn cover_exists(fams: &[&[u128]], full: u128, budget: &mut Budget) -> Result<bool> {
    let n = fams.len();
    let mut suffix = vec![0u128; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] | fams[i].iter().fold(0, |a, &m| a | m);
    }
    fn rec(
        fams: &[&[u128]],
        suffix: &[u128],
        i: usize,
        acc: u128,
        full: u128,
        budget: &mut Budget,
    ) -> Result<bool> {
        if acc | suffix[i] != full {
            return Ok(false);
        }
        if i == fams.len() {
            return Ok(true);
        }
        budget.charge(1)?;
        for &m in fams[i] {
            if rec(fams, suffix, i + 1, acc | m, full, budget)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
    rec(fams, &suffix, 0, 0, full, budget)
}

/// Layer widths of the collapsed backward sweep, sampled every `stride`
/// rounds. Diagnostic helper for sizing searches.
pub fn sweep_widths(cube: &[u8], rounds: u32, stride: u32) -> Result<Vec<(u32, usize)>> {
    let g = build_graph_with(cube, 0, 0, rounds, DEFAULT_SHARPEN_BUDGET)?;
    let mut budget = Budget::new(u64::MAX);
    let mut cur: FxHashSet<Pattern> = FxHashSet::default();
    for pat in g.output_patterns() {
        if !cur.remove(&pat) {
            cur.insert(pat);
        }
    }
    let mut out = vec![(rounds, cur.len())];
    for t in (1..=rounds).rev() {
        let mut next: FxHashSet<Pattern> =
            FxHashSet::with_capacity_and_hasher(cur.len(), Default::default());
        for pat in cur.iter() {
            for child in g.children_toggled(t, pat, &mut budget)? {
                if !next.remove(&child) {
                    next.insert(child);
                }
            }
        }
        cur = next;
        if (t - 1) % stride == 0 {
            out.push((t - 1, cur.len()));
        }
    }
    Ok(out)
}
