//! Multilinear polynomials over GF(2) in algebraic normal form.
//!
//! Three variable spaces are supported: `x` (public/IV bits), `k` (key bits)
//! and `z` (fresh substitution variables).  A polynomial is a set of
//! monomials combined by XOR; a monomial is a product of distinct variables.
//! Squares collapse (`v*v = v`), so every polynomial stays multilinear.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashSet;
use smallvec::SmallVec;

use crate::degree::{DegreeValue, VectorDegree};
use crate::error::{Error, Result};

/// Which space a variable lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarSpace {
    X,
    K,
    Z,
}

impl VarSpace {
    pub fn letter(self) -> char {
        match self {
            VarSpace::X => 'x',
            VarSpace::K => 'k',
            VarSpace::Z => 'z',
        }
    }

    /// Largest valid index plus one for the space.
    pub fn cap(self) -> u16 {
        match self {
            VarSpace::X | VarSpace::K => 80,
            VarSpace::Z => 1 << SPACE_SHIFT,
        }
    }
}

/// A single Boolean variable, packed into 16 bits.
///
/// The packing keeps the natural ordering: all `x` variables sort before all
/// `k` variables, which sort before all `z` variables, each by index.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(u16);

const SPACE_SHIFT: u16 = 14;

impl Var {
    pub fn new(space: VarSpace, index: u16) -> Self {
        assert!(
            index < space.cap(),
            "index {index} out of range for {}",
            space.letter()
        );
        let tag = match space {
            VarSpace::X => 0u16,
            VarSpace::K => 1,
            VarSpace::Z => 2,
        };
        Var((tag << SPACE_SHIFT) | index)
    }

    pub fn x(index: u16) -> Self {
        Var::new(VarSpace::X, index)
    }

    pub fn k(index: u16) -> Self {
        Var::new(VarSpace::K, index)
    }

    pub fn z(index: u16) -> Self {
        Var::new(VarSpace::Z, index)
    }

    pub fn space(self) -> VarSpace {
        match self.0 >> SPACE_SHIFT {
            0 => VarSpace::X,
            1 => VarSpace::K,
            _ => VarSpace::Z,
        }
    }

    pub fn index(self) -> u16 {
        self.0 & ((1 << SPACE_SHIFT) - 1)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.space().letter(), self.index())
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A product of distinct variables; the empty product is the constant 1.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial(SmallVec<[Var; 6]>);

impl Monomial {
    /// The constant monomial 1.
    pub fn one() -> Self {
        Monomial(SmallVec::new())
    }

    pub fn var(v: Var) -> Self {
        let mut s = SmallVec::new();
        s.push(v);
        Monomial(s)
    }

    /// Builds a monomial from arbitrary factors, sorting and deduplicating.
    pub fn from_vars(vars: impl IntoIterator<Item = Var>) -> Self {
        let mut s: SmallVec<[Var; 6]> = vars.into_iter().collect();
        s.sort_unstable();
        s.dedup();
        Monomial(s)
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn degree_in(&self, space: VarSpace) -> usize {
        self.0.iter().filter(|v| v.space() == space).count()
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    pub fn contains(&self, v: Var) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    /// Product of two monomials; shared factors collapse.
    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out: SmallVec<[Var; 6]> = SmallVec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => {
                    out.push(self.0[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(other.0[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(self.0[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    /// Evaluates the monomial at a point.
    pub fn evaluate(&self, point: impl Fn(Var) -> bool) -> bool {
        self.0.iter().all(|&v| point(v))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for v in &self.0 {
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A polynomial in algebraic normal form: the XOR of a set of monomials.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Poly {
    terms: FxHashSet<Monomial>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn one() -> Self {
        let mut p = Poly::default();
        p.toggle(Monomial::one());
        p
    }

    pub fn constant(bit: bool) -> Self {
        if bit {
            Poly::one()
        } else {
            Poly::zero()
        }
    }

    pub fn var(v: Var) -> Self {
        let mut p = Poly::default();
        p.toggle(Monomial::var(v));
        p
    }

    /// XORs the given monomials together (duplicates cancel in pairs).
    pub fn from_terms(terms: impl IntoIterator<Item = Monomial>) -> Self {
        let mut p = Poly::default();
        for t in terms {
            p.toggle(t);
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1 && self.terms.contains(&Monomial::one())
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = &Monomial> {
        self.terms.iter()
    }

    /// Terms in canonical (lexicographic) order, for display and hashing.
    pub fn sorted_terms(&self) -> Vec<&Monomial> {
        let mut v: Vec<&Monomial> = self.terms.iter().collect();
        v.sort();
        v
    }

    /// XOR-toggle: inserts the monomial, or removes it if already present.
    pub fn toggle(&mut self, m: Monomial) {
        if !self.terms.remove(&m) {
            self.terms.insert(m);
        }
    }

    pub fn contains_term(&self, m: &Monomial) -> bool {
        self.terms.contains(m)
    }

    pub fn add_assign(&mut self, other: &Poly) {
        for t in &other.terms {
            self.toggle(t.clone());
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let (big, small) = if self.terms.len() >= other.terms.len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut out = big.clone();
        out.add_assign(small);
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for a in &self.terms {
            for b in &other.terms {
                out.toggle(a.mul(b));
            }
        }
        out
    }

    /// Substitutes `gs[i]` for every variable of index `i`, by position.
    ///
    /// The space tag of the composed polynomial's variables is ignored; only
    /// the index selects the substitute.
    pub fn compose(&self, gs: &[Poly]) -> Result<Poly> {
        let mut out = Poly::default();
        for t in &self.terms {
            let mut prod = Poly::one();
            for &v in t.vars() {
                let i = v.index();
                let g = gs
                    .get(i as usize)
                    .ok_or(Error::ComposeArity { index: i, provided: gs.len() })?;
                prod = prod.mul(g);
            }
            out.add_assign(&prod);
        }
        Ok(out)
    }

    /// Fixes a subset of variables to constants; unmapped variables stay free.
    pub fn restrict(&self, assign: impl Fn(Var) -> Option<bool>) -> Poly {
        let mut out = Poly::default();
        'term: for t in &self.terms {
            let mut kept: SmallVec<[Var; 6]> = SmallVec::new();
            for &v in t.vars() {
                match assign(v) {
                    Some(false) => continue 'term,
                    Some(true) => {}
                    None => kept.push(v),
                }
            }
            out.toggle(Monomial(kept));
        }
        out
    }

    pub fn evaluate(&self, point: impl Fn(Var) -> bool) -> bool {
        let mut acc = false;
        for t in &self.terms {
            acc ^= t.evaluate(&point);
        }
        acc
    }

    /// All variables occurring in the polynomial.
    pub fn support(&self) -> BTreeSet<Var> {
        let mut s = BTreeSet::new();
        for t in &self.terms {
            s.extend(t.vars().iter().copied());
        }
        s
    }

    /// Total degree; the zero polynomial has degree `NEG_INF`.
    pub fn degree(&self) -> DegreeValue {
        self.terms
            .iter()
            .map(|t| DegreeValue::finite(t.degree() as i32))
            .max()
            .unwrap_or(DegreeValue::NEG_INF)
    }

    /// Degree counting only variables of one space.
    pub fn degree_in(&self, space: VarSpace) -> DegreeValue {
        self.terms
            .iter()
            .map(|t| DegreeValue::finite(t.degree_in(space) as i32))
            .max()
            .unwrap_or(DegreeValue::NEG_INF)
    }

    /// Vector degree with respect to the ordered index set `j`.
    ///
    /// Entry `u` (a bitmask over positions of `j`, low bit first element)
    /// holds the degree of the coefficient of that `j`-projection, counted
    /// over all remaining variables; absent coefficients get `NEG_INF`.
    pub fn vector_degree(&self, j: &[Var]) -> Result<VectorDegree> {
        let mut j_sorted: Vec<Var> = j.to_vec();
        j_sorted.sort_unstable();
        j_sorted.dedup();
        if j_sorted.len() != j.len() {
            return Err(Error::InvalidArgument("index set has repeats".into()));
        }
        let mut vd = VectorDegree::new(j_sorted.len())?;
        for t in &self.terms {
            let mut mask = 0usize;
            let mut rest = 0i32;
            for &v in t.vars() {
                match j_sorted.binary_search(&v) {
                    Ok(pos) => mask |= 1 << pos,
                    Err(_) => rest += 1,
                }
            }
            let e = vd.entry(mask).max(DegreeValue::finite(rest));
            vd.set_entry(mask, e);
        }
        Ok(vd)
    }

    /// Boolean-function divisibility: `h` divides `f` iff `h*f = f`,
    /// equivalently `f` vanishes wherever `h` does.
    pub fn divides(&self, f: &Poly) -> bool {
        assert!(!self.is_zero(), "zero polynomial divides nothing");
        self.mul(f) == *f
    }

    /// Some `q` with `self * q = f`, when divisibility holds.
    ///
    /// The witness is not reduced; `f` itself always works because
    /// multiplication by an idempotent factor is idempotent.
    pub fn quotient_witness(&self, f: &Poly) -> Option<Poly> {
        if self.divides(f) {
            Some(f.clone())
        } else {
            None
        }
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.sorted_terms().iter().enumerate() {
            if i > 0 {
                write!(f, "+")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

fn parse_term(s: &str) -> Result<Monomial> {
    let s = s.trim();
    if s == "1" {
        return Ok(Monomial::one());
    }
    let bytes = s.as_bytes();
    let mut vars: SmallVec<[Var; 6]> = SmallVec::new();
    let mut i = 0;
    while i < bytes.len() {
        let space = match bytes[i] {
            b'x' => VarSpace::X,
            b'k' => VarSpace::K,
            b'z' => VarSpace::Z,
            c => return Err(Error::Parse(format!("unexpected character '{}' in term '{s}'", c as char))),
        };
        i += 1;
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(Error::Parse(format!("missing index after '{}' in term '{s}'", space.letter())));
        }
        let idx: u16 = s[start..i]
            .parse()
            .map_err(|_| Error::Parse(format!("bad index in term '{s}'")))?;
        if idx >= space.cap() {
            return Err(Error::Parse(format!(
                "index {idx} out of range for {} in term '{s}'",
                space.letter()
            )));
        }
        vars.push(Var::new(space, idx));
    }
    vars.sort_unstable();
    let before = vars.len();
    vars.dedup();
    if vars.len() != before {
        return Err(Error::Parse(format!("repeated variable in term '{s}'")));
    }
    Ok(Monomial(vars))
}

impl FromStr for Poly {
    type Err = Error;

    /// Parses the line format: terms separated by `+`, variables written as
    /// `x12`, `k7` or `z3`, the constant term as `1`, the zero polynomial
    /// as `0`.  Whitespace around terms is ignored.
    fn from_str(s: &str) -> Result<Poly> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Parse("empty polynomial text".into()));
        }
        if s == "0" {
            return Ok(Poly::zero());
        }
        let mut p = Poly::default();
        for part in s.split('+') {
            p.toggle(parse_term(part)?);
        }
        Ok(p)
    }
}
