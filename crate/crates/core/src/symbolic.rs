//! Exact symbolic Trivium state: every cell as a GF(2) polynomial in the
//! key bits `k0..k79` and IV bits `x0..x79`.
//!
//! Feasible for moderate round counts only; the per-cell term budget turns
//! runaway growth into an error instead of an OOM.  Cube-restricted states
//! fix the non-cube IV bits to constants, which is what keeps middle-round
//! cells small enough for coefficient work.

use crate::anf::{Poly, Var};
use crate::degree::DegreeValue;
use crate::error::{Error, Result};
use rustc_hash::{FxHashMap, FxHashSet};

/// A monomial in the x and k variables, one bit per variable.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct XkTerm {
    pub x: u128,
    pub k: u128,
}

impl XkTerm {
    pub const ONE: XkTerm = XkTerm { x: 0, k: 0 };

    pub fn x_var(j: usize) -> Self {
        debug_assert!(j < 80);
        XkTerm { x: 1 << j, k: 0 }
    }

    pub fn k_var(i: usize) -> Self {
        debug_assert!(i < 80);
        XkTerm { x: 0, k: 1 << i }
    }

    /// Product of two multilinear monomials.
    pub fn mul(self, other: XkTerm) -> XkTerm {
        XkTerm { x: self.x | other.x, k: self.k | other.k }
    }

    pub fn degree(self) -> u32 {
        self.x.count_ones() + self.k.count_ones()
    }
}

/// How a symbolic cell looks from the outside.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CellValue {
    Zero,
    One,
    Poly,
}

/// A GF(2) polynomial over the x and k variables.
#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct XkPoly {
    terms: FxHashSet<XkTerm>,
}

impl XkPoly {
    pub fn zero() -> Self {
        XkPoly::default()
    }

    pub fn one() -> Self {
        let mut p = XkPoly::default();
        p.toggle(XkTerm::ONE);
        p
    }

    pub fn constant(b: bool) -> Self {
        if b {
            XkPoly::one()
        } else {
            XkPoly::zero()
        }
    }

    pub fn x_var(j: usize) -> Self {
        let mut p = XkPoly::default();
        p.toggle(XkTerm::x_var(j));
        p
    }

    pub fn k_var(i: usize) -> Self {
        let mut p = XkPoly::default();
        p.toggle(XkTerm::k_var(i));
        p
    }

    pub fn from_terms(terms: impl IntoIterator<Item = XkTerm>) -> Self {
        let mut p = XkPoly::default();
        for t in terms {
            p.toggle(t);
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1 && self.terms.contains(&XkTerm::ONE)
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = &XkTerm> {
        self.terms.iter()
    }

    pub fn contains(&self, t: &XkTerm) -> bool {
        self.terms.contains(t)
    }

    pub fn classify(&self) -> CellValue {
        if self.is_zero() {
            CellValue::Zero
        } else if self.is_one() {
            CellValue::One
        } else {
            CellValue::Poly
        }
    }

    /// XOR-toggles one term in or out.
    pub fn toggle(&mut self, t: XkTerm) {
        if !self.terms.remove(&t) {
            self.terms.insert(t);
        }
    }

    pub fn xor_with(&mut self, other: &XkPoly) {
        for &t in &other.terms {
            self.toggle(t);
        }
    }

    /// Product with a hard cap on the result's term count.
    pub fn mul_budget(&self, other: &XkPoly, budget: usize) -> Result<XkPoly> {
        let (small, large) =
            if self.term_count() <= other.term_count() { (self, other) } else { (other, self) };
        let mut out = XkPoly::default();
        for &a in &small.terms {
            for &b in &large.terms {
                out.toggle(a.mul(b));
            }
            if out.term_count() > budget {
                return Err(Error::TermBudgetExceeded { budget });
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, key: u128, iv: u128) -> bool {
        let mut acc = false;
        for t in &self.terms {
            acc ^= (t.x & !iv) == 0 && (t.k & !key) == 0;
        }
        acc
    }

    /// Largest x-weight among the terms; `NEG_INF` for the zero polynomial.
    pub fn degree_x(&self) -> DegreeValue {
        self.terms
            .iter()
            .map(|t| DegreeValue::Finite(t.x.count_ones() as i32))
            .max()
            .unwrap_or(DegreeValue::NegInf)
    }

    pub fn degree(&self) -> DegreeValue {
        self.terms
            .iter()
            .map(|t| DegreeValue::Finite(t.degree() as i32))
            .max()
            .unwrap_or(DegreeValue::NegInf)
    }

    /// Groups terms by x-part: the coefficient polynomial in k of each
    /// x-monomial, as a set of k-masks.
    pub fn coefficients_by_x(&self) -> FxHashMap<u128, FxHashSet<u128>> {
        let mut map: FxHashMap<u128, FxHashSet<u128>> = FxHashMap::default();
        for t in &self.terms {
            let entry = map.entry(t.x).or_default();
            if !entry.remove(&t.k) {
                entry.insert(t.k);
            }
        }
        map.retain(|_, v| !v.is_empty());
        map
    }

    /// Converts to the general polynomial type, x and k spaces preserved.
    pub fn to_poly(&self) -> Poly {
        let mut vars = Vec::new();
        let monomials = self.terms.iter().map(|t| {
            vars.clear();
            for j in 0..80 {
                if t.x >> j & 1 == 1 {
                    vars.push(Var::x(j as u16));
                }
            }
            for i in 0..80 {
                if t.k >> i & 1 == 1 {
                    vars.push(Var::k(i as u16));
                }
            }
            crate::anf::Monomial::from_vars(vars.clone())
        });
        Poly::from_terms(monomials)
    }

    fn sorted_terms(&self) -> Vec<XkTerm> {
        let mut v: Vec<XkTerm> = self.terms.iter().copied().collect();
        v.sort_unstable();
        v
    }
}

impl std::fmt::Display for XkPoly {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for t in self.sorted_terms() {
            if !first {
                write!(f, "+")?;
            }
            first = false;
            if t.x == 0 && t.k == 0 {
                write!(f, "1")?;
                continue;
            }
            for j in 0..80 {
                if t.x >> j & 1 == 1 {
                    write!(f, "x{j}")?;
                }
            }
            for i in 0..80 {
                if t.k >> i & 1 == 1 {
                    write!(f, "k{i}")?;
                }
            }
        }
        Ok(())
    }
}

pub const DEFAULT_TERM_BUDGET: usize = 1 << 24;

/// Symbolic state of the cipher after some number of rounds.
#[derive(Clone)]
pub struct SymbolicState {
    cells: Vec<XkPoly>,
    off: usize,
    round: u32,
    pub budget: usize,
}

impl SymbolicState {
    /// Fully symbolic loading: all 80 key and 80 IV bits free.
    pub fn new_full() -> Self {
        SymbolicState::with_iv(|_| None)
    }

    /// Loading with each IV bit either free (cube member) or a constant.
    ///
    /// `iv_bit(j)` returns `None` to keep `x_j` symbolic, or its value.
    fn with_iv(iv_bit: impl Fn(usize) -> Option<bool>) -> Self {
        let mut cells = vec![XkPoly::zero(); 288];
        for (i, c) in cells.iter_mut().enumerate().take(80) {
            *c = XkPoly::k_var(i);
        }
        for j in 0..80 {
            cells[93 + j] = match iv_bit(j) {
                None => XkPoly::x_var(j),
                Some(b) => XkPoly::constant(b),
            };
        }
        for c in &mut cells[285..288] {
            *c = XkPoly::one();
        }
        SymbolicState { cells, off: 0, round: 0, budget: DEFAULT_TERM_BUDGET }
    }

    /// Cube-restricted loading: cube bits stay symbolic, the rest are
    /// constants taken from `iv_base` (cube positions of it are ignored).
    pub fn new_cube(cube: &[u8], iv_base: u128) -> Self {
        let mask: u128 = cube.iter().fold(0, |m, &j| m | 1 << j);
        SymbolicState::with_iv(|j| {
            if mask >> j & 1 == 1 {
                None
            } else {
                Some(iv_base >> j & 1 == 1)
            }
        })
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    fn slot(&self, i: usize) -> usize {
        let idx = i + self.off;
        if idx >= 288 {
            idx - 288
        } else {
            idx
        }
    }

    pub fn cell(&self, i: usize) -> &XkPoly {
        &self.cells[self.slot(i)]
    }

    pub fn step(&mut self) -> Result<()> {
        let quad1 = self.cell(90).mul_budget(self.cell(91), self.budget)?;
        let quad2 = self.cell(174).mul_budget(self.cell(175), self.budget)?;
        let quad3 = self.cell(285).mul_budget(self.cell(286), self.budget)?;
        let mut t1 = quad1;
        t1.xor_with(self.cell(65));
        t1.xor_with(self.cell(92));
        t1.xor_with(self.cell(170));
        let mut t2 = quad2;
        t2.xor_with(self.cell(161));
        t2.xor_with(self.cell(176));
        t2.xor_with(self.cell(263));
        let mut t3 = quad3;
        t3.xor_with(self.cell(242));
        t3.xor_with(self.cell(287));
        t3.xor_with(self.cell(68));
        for t in [&t1, &t2, &t3] {
            if t.term_count() > self.budget {
                return Err(Error::TermBudgetExceeded { budget: self.budget });
            }
        }
        let (a, b, c) = (self.slot(92), self.slot(176), self.slot(287));
        self.cells[a] = t1;
        self.cells[b] = t2;
        self.cells[c] = t3;
        self.off = if self.off == 0 { 287 } else { self.off - 1 };
        self.round += 1;
        Ok(())
    }

    pub fn run_to(&mut self, round: u32) -> Result<()> {
        assert!(round >= self.round);
        while self.round < round {
            self.step()?;
        }
        Ok(())
    }

    /// The output polynomial at the current round.
    pub fn output(&self) -> XkPoly {
        let mut z = XkPoly::zero();
        for t in [65, 92, 161, 176, 242, 287] {
            z.xor_with(self.cell(t));
        }
        z
    }

    /// Zero/one/free classification of every logical cell.
    pub fn cell_values(&self) -> Vec<CellValue> {
        (0..288).map(|i| self.cell(i).classify()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trivium;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loaded_output_is_the_known_affine_form() {
        let st = SymbolicState::new_full();
        let z = st.output();
        let want = XkPoly::from_terms([XkTerm::k_var(65), XkTerm::x_var(68), XkTerm::ONE]);
        assert_eq!(z, want);
    }

    #[test]
    fn cells_after_one_round() {
        let mut st = SymbolicState::new_full();
        st.step().unwrap();
        assert_eq!(st.cell(0), &XkPoly::k_var(68));
        assert_eq!(
            st.cell(93),
            &XkPoly::from_terms([XkTerm::k_var(65), XkTerm::x_var(77)])
        );
        assert_eq!(st.cell(177), &XkPoly::x_var(68));
        assert_eq!(st.cell(1), &XkPoly::k_var(0));
        assert_eq!(st.cell(94), &XkPoly::x_var(0));
    }

    #[test]
    fn symbolic_output_evaluates_like_the_cipher() {
        let mut st = SymbolicState::new_full();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for round in [0u32, 1, 17, 50, 120, 200, 250] {
            st.run_to(round).unwrap();
            let z = st.output();
            for _ in 0..150 {
                let key = rng.gen::<u128>() & ((1 << 80) - 1);
                let iv = rng.gen::<u128>() & ((1 << 80) - 1);
                assert_eq!(
                    z.evaluate(key, iv),
                    trivium::keystream_bit(key, iv, round),
                    "round {round}"
                );
            }
        }
    }

    #[test]
    fn cube_restricted_state_matches_full_restriction() {
        let cube = [5u8, 30, 66];
        let iv_base = 0xdead_beef_cafe_u128 & ((1 << 80) - 1);
        let mut st = SymbolicState::new_cube(&cube, iv_base);
        st.run_to(150).unwrap();
        let z = st.output();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let key = rng.gen::<u128>() & ((1 << 80) - 1);
            for m in 0u32..8 {
                let mut iv = iv_base;
                for (b, &pos) in cube.iter().enumerate() {
                    iv &= !(1u128 << pos);
                    if m >> b & 1 == 1 {
                        iv |= 1 << pos;
                    }
                }
                assert_eq!(z.evaluate(key, iv), trivium::keystream_bit(key, iv, 150));
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let mut st = SymbolicState::new_full();
        st.budget = 50;
        let err = st.run_to(400).unwrap_err();
        assert!(matches!(err, Error::TermBudgetExceeded { budget: 50 }));
    }

    #[test]
    fn coefficients_by_x_group_and_cancel() {
        // x0k0 + x0k1 + x1 + k2 + 1
        let p = XkPoly::from_terms([
            XkTerm { x: 1, k: 1 },
            XkTerm { x: 1, k: 2 },
            XkTerm { x: 2, k: 0 },
            XkTerm { x: 0, k: 4 },
            XkTerm::ONE,
        ]);
        let groups = p.coefficients_by_x();
        assert_eq!(groups[&1], FxHashSet::from_iter([1u128, 2]));
        assert_eq!(groups[&2], FxHashSet::from_iter([0u128]));
        assert_eq!(groups[&0], FxHashSet::from_iter([4u128, 0]));
    }

    #[test]
    fn display_and_to_poly_agree() {
        let p = XkPoly::from_terms([XkTerm { x: 1 << 3, k: 1 << 7 }, XkTerm::ONE]);
        assert_eq!(p.to_string(), "1+x3k7");
        assert_eq!(p.to_poly().to_string(), "1+x3k7");
    }

    #[test]
    fn degree_x_of_restricted_output() {
        let mut st = SymbolicState::new_cube(&[68], 0);
        let z = st.output();
        assert_eq!(z.degree_x(), DegreeValue::Finite(1));
        st.run_to(1).unwrap();
        assert!(st.cell(177).degree_x() == DegreeValue::Finite(1));
    }
}
