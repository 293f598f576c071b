//! Round-by-round vector-degree estimation for the cipher output.
//!
//! Degrees are counted over the cube variables `x_I` only: key bits are
//! degree-0 constants and non-cube IV bits are fixed to zero, matching how
//! cube sums are taken.  A sub-index-set `J` of the cube splits each bound
//! into `2^|J|` coordinates, which is what lets products of state cells
//! sharing cube variables be bounded without counting those variables
//! twice.
//!
//! Every state cell carries four rows: the bound for the cell itself, for
//! the quadratic part and the linear part it was written from, and for the
//! cell that sat just below the feedback position when it was written.
//! A feedback bound then improves on the plain product of the two tap
//! cells by expanding one factor a register-length back in time, once the
//! register has been cycled through at least once.

use crate::degree::{ConvScratch, DegreeValue, VectorDegree};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Largest supported sub-index-set.
pub const MAX_SUB_INDICES: usize = 13;

/// How a final scalar bound is read off the output's vector degree.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    /// Entries clamped to `|I| - |J|` before adding coordinate weights.
    Clamped,
    /// The all-ones coordinate plus `|J|` alone.
    TopEntry,
    /// Plain maximum of entry plus coordinate weight.
    Unclamped,
}

impl Mode {
    pub fn from_number(n: u8) -> Result<Mode> {
        match n {
            1 => Ok(Mode::Clamped),
            2 => Ok(Mode::TopEntry),
            3 => Ok(Mode::Unclamped),
            _ => Err(Error::InvalidArgument(format!("mode must be 1, 2 or 3, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Mode::Clamped => 1,
            Mode::TopEntry => 2,
            Mode::Unclamped => 3,
        }
    }
}

const LIN_TAPS: [[usize; 3]; 3] = [[65, 92, 170], [161, 176, 263], [242, 287, 68]];
const WRITE_POS: [usize; 3] = [92, 176, 287];
const REG_LEN: [u32; 3] = [93, 84, 111];
const OUT_TAPS: [usize; 6] = [65, 92, 161, 176, 242, 287];

struct Estimator {
    v: Vec<VectorDegree>,
    v_lin: Vec<VectorDegree>,
    v_mul: Vec<VectorDegree>,
    v_sib: Vec<VectorDegree>,
    off: usize,
    round: u32,
    clamp: i32,
    scratch: ConvScratch,
}

impl Estimator {
    fn new(cube: &[u8], sub: &[u8]) -> Result<Self> {
        validate_cube(cube)?;
        if sub.len() > MAX_SUB_INDICES {
            return Err(Error::IndexSetTooLarge { len: sub.len(), cap: MAX_SUB_INDICES });
        }
        for s in sub {
            if !cube.contains(s) {
                return Err(Error::InvalidArgument(format!(
                    "sub-index {s} is not a cube member"
                )));
            }
        }
        let bits = sub.len();
        let blank = VectorDegree::new(bits)?;
        let mut v = vec![blank.clone(); 288];
        for cell in v.iter_mut().take(80) {
            cell.set_entry(0, DegreeValue::Finite(0));
        }
        for (j, cell) in (0..80).zip(v[93..173].iter_mut()) {
            let j = j as u8;
            if let Some(rank) = sub.iter().position(|&s| s == j) {
                cell.set_entry(1 << rank, DegreeValue::Finite(0));
            } else if cube.contains(&j) {
                cell.set_entry(0, DegreeValue::Finite(1));
            }
        }
        for cell in v[285..288].iter_mut() {
            cell.set_entry(0, DegreeValue::Finite(0));
        }
        Ok(Estimator {
            v,
            v_lin: vec![blank.clone(); 288],
            v_mul: vec![blank.clone(); 288],
            v_sib: vec![blank; 288],
            off: 0,
            round: 0,
            clamp: (cube.len() - sub.len()) as i32,
            scratch: ConvScratch::new(),
        })
    }

    fn slot(&self, i: usize) -> usize {
        let idx = i + self.off;
        if idx >= 288 {
            idx - 288
        } else {
            idx
        }
    }

    /// Feedback-product bound for one register at the next round.
    fn mul_bound(&mut self, reg: usize) -> VectorDegree {
        let n = WRITE_POS[reg];
        let a = self.slot(n - 1);
        let b = self.slot(n - 2);
        let c = self.slot(n - 3);
        if self.round + 1 < REG_LEN[reg] {
            return self.scratch.convolve(&self.v[a], &self.v[b]);
        }
        let v1 = self.scratch.convolve(&self.v_mul[a], &self.v_sib[c]);
        let v2 = self.scratch.convolve(&self.v_sib[a], &self.v_mul[b]);
        let sib_ab = self.scratch.convolve(&self.v_sib[a], &self.v_sib[b]);
        let v3 = self.scratch.convolve(&sib_ab, &self.v_sib[c]);
        let refined = v1.min_with(&v2).min_with(&v3);
        let v5 = self.scratch.convolve(&self.v_mul[a], &self.v_lin[b]);
        let v6 = self.scratch.convolve(&self.v_lin[a], &self.v[b]);
        refined.max_with(&v5).max_with(&v6)
    }

    fn step(&mut self) {
        for reg in 0..3 {
            let mul = self.mul_bound(reg);
            let [l0, l1, l2] = LIN_TAPS[reg];
            let lin =
                self.v[self.slot(l0)].max_with(&self.v[self.slot(l1)]).max_with(&self.v[self.slot(l2)]);
            let n = WRITE_POS[reg];
            let sib = self.v[self.slot(n - 1)].clone();
            let w = self.slot(n);
            self.v[w] = mul.max_with(&lin);
            self.v_mul[w] = mul;
            self.v_lin[w] = lin;
            self.v_sib[w] = sib;
        }
        self.off = if self.off == 0 { 287 } else { self.off - 1 };
        self.round += 1;
    }

    fn output_bound(&self, mode: Mode) -> DegreeValue {
        let mut row = self.v[self.slot(OUT_TAPS[0])].clone();
        for &t in &OUT_TAPS[1..] {
            row = row.max_with(&self.v[self.slot(t)]);
        }
        match mode {
            Mode::Clamped => row.degree_clamped(self.clamp),
            Mode::TopEntry => row.top_entry_degree(),
            Mode::Unclamped => row.degree(),
        }
    }
}

fn validate_cube(cube: &[u8]) -> Result<()> {
    if cube.is_empty() {
        return Err(Error::InvalidArgument("cube must not be empty".into()));
    }
    for w in cube.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument("cube indices must be strictly increasing".into()));
        }
    }
    if cube.iter().any(|&i| i >= 80) {
        return Err(Error::InvalidArgument("cube index out of IV range".into()));
    }
    Ok(())
}

/// Degree bounds of the output at every round `0..=rounds`.
///
/// `sub` must be a subset of `cube`, both strictly increasing.
pub fn degree_series(cube: &[u8], sub: &[u8], rounds: u32, mode: Mode) -> Result<Vec<DegreeValue>> {
    let mut est = Estimator::new(cube, sub)?;
    let mut series = Vec::with_capacity(rounds as usize + 1);
    series.push(est.output_bound(mode));
    for _ in 0..rounds {
        est.step();
        series.push(est.output_bound(mode));
    }
    Ok(series)
}

/// Degree bound of the output after `rounds` rounds.
pub fn estimate_degree(cube: &[u8], sub: &[u8], rounds: u32, mode: Mode) -> Result<DegreeValue> {
    let mut est = Estimator::new(cube, sub)?;
    for _ in 0..rounds {
        est.step();
    }
    Ok(est.output_bound(mode))
}

/// Picks a sub-index set of at most `cap` cube members.
///
/// Adjacent cube members come first (both halves of every `i, i+1` pair),
/// trimmed at random past the cap; any remaining room is filled with the
/// members whose lone-variable degree estimates at `rounds` are largest,
/// ties broken at random.
pub fn choose_sub_indices(
    cube: &[u8],
    rounds: u32,
    cap: usize,
    rng: &mut impl Rng,
) -> Result<Vec<u8>> {
    validate_cube(cube)?;
    let cap = cap.min(MAX_SUB_INDICES).min(cube.len());
    let mut adjacent: Vec<u8> = Vec::new();
    for w in cube.windows(2) {
        if w[1] == w[0] + 1 {
            for &m in w {
                if !adjacent.contains(&m) {
                    adjacent.push(m);
                }
            }
        }
    }
    let mut chosen = adjacent;
    if chosen.len() > cap {
        chosen.shuffle(rng);
        chosen.truncate(cap);
    } else if chosen.len() < cap {
        let mut rest: Vec<(u8, DegreeValue, u64)> = Vec::new();
        for &m in cube {
            if chosen.contains(&m) {
                continue;
            }
            let score = estimate_degree(&[m], &[], rounds, Mode::Unclamped)?;
            rest.push((m, score, rng.gen()));
        }
        rest.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        for (m, _, _) in rest.into_iter().take(cap - chosen.len()) {
            chosen.push(m);
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Result of repeated estimation with freshly drawn sub-index sets.
pub struct RepeatEstimate {
    /// Entrywise minimum of the per-repeat series; index = round.
    pub series: Vec<DegreeValue>,
    /// The sub-index set attaining the smallest final bound.
    pub best_sub: Vec<u8>,
}

/// Runs `repeats` independent estimates, each with its own seeded choice
/// of sub-index set, and keeps the tightest bound per round.
pub fn estimate_with_repeats(
    cube: &[u8],
    cap: usize,
    rounds: u32,
    mode: Mode,
    repeats: u32,
    seed: u64,
) -> Result<RepeatEstimate> {
    let one = |rep: u32| -> Result<(Vec<DegreeValue>, Vec<u8>)> {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (rep as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let sub = choose_sub_indices(cube, rounds, cap, &mut rng)?;
        let series = degree_series(cube, &sub, rounds, mode)?;
        Ok((series, sub))
    };
    let runs: Vec<(Vec<DegreeValue>, Vec<u8>)> = {
        #[cfg(feature = "parallel")]
        {
            (0..repeats.max(1)).into_par_iter().map(one).collect::<Result<_>>()?
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..repeats.max(1)).map(one).collect::<Result<_>>()?
        }
    };
    let mut series = runs[0].0.clone();
    let mut best_sub = runs[0].1.clone();
    let mut best_final = *series.last().unwrap();
    for (s, sub) in &runs[1..] {
        let fin = *s.last().unwrap();
        if fin < best_final {
            best_final = fin;
            best_sub = sub.clone();
        }
        for (dst, &src) in series.iter_mut().zip(s) {
            *dst = (*dst).min(src);
        }
    }
    Ok(RepeatEstimate { series, best_sub })
}

/// Largest round whose bound certifies a zero cube sum, i.e. is below the
/// cube size.
pub fn max_zero_sum_round(series: &[DegreeValue], cube_len: usize) -> Option<u32> {
    let need = DegreeValue::Finite(cube_len as i32);
    series.iter().rposition(|&b| b < need).map(|r| r as u32)
}
