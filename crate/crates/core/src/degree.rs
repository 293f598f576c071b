//! Degree values, vector degrees and the numeric mapping operations.
//!
//! A vector degree for an ordered index set `J` has `2^|J|` entries.  Entry
//! `u` (a bitmask over positions of `J`, low bit = first element) bounds the
//! degree of the coefficient of that `J`-projection, counted over all other
//! variables.  Absent coefficients carry the explicit `NEG_INF` sentinel;
//! it absorbs addition and compares below every finite value.

use crate::anf::Poly;
use crate::error::{Error, Result};
use std::fmt;

/// A degree bound: either finite or negative infinity (zero polynomial).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum DegreeValue {
    NegInf,
    Finite(i32),
}

impl DegreeValue {
    pub const NEG_INF: DegreeValue = DegreeValue::NegInf;

    pub fn finite(v: i32) -> Self {
        DegreeValue::Finite(v)
    }

    pub fn is_finite(self) -> bool {
        matches!(self, DegreeValue::Finite(_))
    }

    pub fn as_finite(self) -> Option<i32> {
        match self {
            DegreeValue::Finite(v) => Some(v),
            DegreeValue::NegInf => None,
        }
    }

    /// Addition with `NEG_INF` absorbing.
    pub fn plus(self, other: DegreeValue) -> DegreeValue {
        match (self, other) {
            (DegreeValue::Finite(a), DegreeValue::Finite(b)) => DegreeValue::Finite(a + b),
            _ => DegreeValue::NegInf,
        }
    }

    pub fn plus_i32(self, w: i32) -> DegreeValue {
        match self {
            DegreeValue::Finite(a) => DegreeValue::Finite(a + w),
            DegreeValue::NegInf => DegreeValue::NegInf,
        }
    }

    /// Clamps a finite value to `cap`; `NEG_INF` stays put.
    pub fn min_cap(self, cap: i32) -> DegreeValue {
        match self {
            DegreeValue::Finite(a) => DegreeValue::Finite(a.min(cap)),
            DegreeValue::NegInf => DegreeValue::NegInf,
        }
    }
}

impl fmt::Display for DegreeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegreeValue::Finite(v) => write!(f, "{v}"),
            DegreeValue::NegInf => write!(f, "-inf"),
        }
    }
}

impl std::str::FromStr for DegreeValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "-inf" {
            return Ok(DegreeValue::NegInf);
        }
        s.parse::<i32>()
            .map(DegreeValue::Finite)
            .map_err(|_| Error::Parse(format!("bad degree value '{s}'")))
    }
}

/// At most this many index-set positions are supported (`2^16` entries).
pub const MAX_INDEX_BITS: usize = 16;

/// A vector of degree bounds indexed by subsets of an ordered index set.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VectorDegree {
    bits: usize,
    entries: Vec<DegreeValue>,
}

impl VectorDegree {
    /// All-`NEG_INF` vector for an index set of `bits` positions.
    pub fn new(bits: usize) -> Result<Self> {
        if bits > MAX_INDEX_BITS {
            return Err(Error::IndexSetTooLarge { len: bits, cap: MAX_INDEX_BITS });
        }
        Ok(VectorDegree { bits, entries: vec![DegreeValue::NegInf; 1 << bits] })
    }

    pub fn from_entries(entries: Vec<DegreeValue>) -> Result<Self> {
        let bits = entries.len().trailing_zeros() as usize;
        if entries.len() != 1 << bits {
            return Err(Error::InvalidArgument(format!(
                "entry count {} is not a power of two",
                entries.len()
            )));
        }
        if bits > MAX_INDEX_BITS {
            return Err(Error::IndexSetTooLarge { len: bits, cap: MAX_INDEX_BITS });
        }
        Ok(VectorDegree { bits, entries })
    }

    /// Vector degree of a constant: entry 0 is `deg`, the rest `NEG_INF`.
    pub fn of_constant(bits: usize, deg: DegreeValue) -> Result<Self> {
        let mut v = VectorDegree::new(bits)?;
        v.set_entry(0, deg);
        Ok(v)
    }

    pub fn index_bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entry(&self, j: usize) -> DegreeValue {
        self.entries[j]
    }

    pub fn set_entry(&mut self, j: usize, v: DegreeValue) {
        self.entries[j] = v;
    }

    pub fn entries(&self) -> &[DegreeValue] {
        &self.entries
    }

    /// Entrywise maximum (vector degree of an XOR).
    pub fn max_with(&self, other: &VectorDegree) -> VectorDegree {
        assert_eq!(self.bits, other.bits);
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| a.max(b))
            .collect();
        VectorDegree { bits: self.bits, entries }
    }

    /// Entrywise minimum (tighter of two bounds on the same function).
    pub fn min_with(&self, other: &VectorDegree) -> VectorDegree {
        assert_eq!(self.bits, other.bits);
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| a.min(b))
            .collect();
        VectorDegree { bits: self.bits, entries }
    }

    /// True when every entry of `self` is at least the matching entry of
    /// `other`.
    pub fn dominates(&self, other: &VectorDegree) -> bool {
        assert_eq!(self.bits, other.bits);
        self.entries.iter().zip(&other.entries).all(|(&a, &b)| a >= b)
    }

    /// Total-degree bound: `max_j entry[j] + wt(j)`.
    pub fn degree(&self) -> DegreeValue {
        self.entries
            .iter()
            .enumerate()
            .map(|(j, &e)| e.plus_i32(j.count_ones() as i32))
            .max()
            .unwrap_or(DegreeValue::NegInf)
    }

    /// Total-degree bound with each entry first clamped to `cap`.
    pub fn degree_clamped(&self, cap: i32) -> DegreeValue {
        self.entries
            .iter()
            .enumerate()
            .map(|(j, &e)| e.min_cap(cap).plus_i32(j.count_ones() as i32))
            .max()
            .unwrap_or(DegreeValue::NegInf)
    }

    /// Degree bound read off the all-ones coordinate alone.
    pub fn top_entry_degree(&self) -> DegreeValue {
        self.entries[self.entries.len() - 1].plus_i32(self.bits as i32)
    }

    /// Folds away the high positions, keeping the low `keep` ones.
    ///
    /// Output entry `j` is `max over j' of entry[j'·2^keep + j] + wt(j')`,
    /// the vector degree that a subset index set must dominate.
    pub fn fold_high_bits(&self, keep: usize) -> VectorDegree {
        assert!(keep <= self.bits);
        let mut out = VectorDegree::new(keep).unwrap();
        for (j, &e) in self.entries.iter().enumerate() {
            let low = j & ((1 << keep) - 1);
            let hi_wt = (j >> keep).count_ones() as i32;
            let cand = e.plus_i32(hi_wt);
            if cand > out.entry(low) {
                out.set_entry(low, cand);
            }
        }
        out
    }
}

/// Numeric-mapping degree bound of `f` given per-index degree bounds `d`.
///
/// Variables are matched to `d` by index alone, as in `Poly::compose`.
pub fn numeric_deg(f: &Poly, d: &[DegreeValue]) -> Result<DegreeValue> {
    let mut best = DegreeValue::NegInf;
    for t in f.terms() {
        let mut sum = DegreeValue::Finite(0);
        for &v in t.vars() {
            let i = v.index() as usize;
            let row = d
                .get(i)
                .ok_or(Error::InvalidArgument(format!("no degree bound for index {i}")))?;
            sum = sum.plus(*row);
        }
        best = best.max(sum);
    }
    Ok(best)
}

/// Reusable workspace for the dense convolution pass.
///
/// The cover table has `sum over j of 2^wt(j) = 3^bits` slots; reusing the
/// allocation matters inside the round-by-round estimator.
#[derive(Default)]
pub struct ConvScratch {
    bits: usize,
    off: Vec<u32>,
    sup: Vec<DegreeValue>,
}

impl ConvScratch {
    pub fn new() -> Self {
        ConvScratch::default()
    }

    fn prepare(&mut self, bits: usize) {
        if self.bits != bits || self.off.is_empty() {
            self.bits = bits;
            let n = 1usize << bits;
            self.off = vec![0u32; n];
            let mut total = 0u32;
            for (j, o) in self.off.iter_mut().enumerate() {
                *o = total;
                total += 1u32 << j.count_ones();
            }
            self.sup = vec![DegreeValue::NegInf; total as usize];
        }
    }

    /// Exact max-plus convolution over subset union.
    pub fn convolve(&mut self, a: &VectorDegree, b: &VectorDegree) -> VectorDegree {
        assert_eq!(a.index_bits(), b.index_bits());
        let bits = a.index_bits();
        let entries = conv_entries(a.entries(), b.entries(), bits, self);
        VectorDegree { bits, entries }
    }
}

/// Exact max-plus convolution over subset union of two entry slices.
///
/// `out[j] = max over j1 | j2 = j of a[j1] + b[j2]`.  Runs the sparse pair
/// loop when few entries are finite, otherwise an `O(3^bits * bits)`
/// cover-table pass.
fn conv_entries(
    a: &[DegreeValue],
    b: &[DegreeValue],
    bits: usize,
    scratch: &mut ConvScratch,
) -> Vec<DegreeValue> {
    let n = 1usize << bits;
    let nnz_a = a.iter().filter(|e| e.is_finite()).count();
    let nnz_b = b.iter().filter(|e| e.is_finite()).count();
    let mut out = vec![DegreeValue::NegInf; n];
    if nnz_a == 0 || nnz_b == 0 {
        return out;
    }
    let dense_cost = pow3(bits).saturating_mul(2 * bits.max(1));
    if nnz_a.saturating_mul(nnz_b) <= dense_cost {
        let fa: Vec<(usize, DegreeValue)> =
            a.iter().enumerate().filter(|(_, e)| e.is_finite()).map(|(j, &e)| (j, e)).collect();
        let fb: Vec<(usize, DegreeValue)> =
            b.iter().enumerate().filter(|(_, e)| e.is_finite()).map(|(j, &e)| (j, e)).collect();
        for &(j1, e1) in &fa {
            for &(j2, e2) in &fb {
                let j = j1 | j2;
                let cand = e1.plus(e2);
                if cand > out[j] {
                    out[j] = cand;
                }
            }
        }
        return out;
    }
    scratch.prepare(bits);
    conv_dense(a, b, bits, &mut out, scratch);
    out
}

fn pow3(bits: usize) -> usize {
    let mut p = 1usize;
    for _ in 0..bits {
        p *= 3;
    }
    p
}

/// Packs `r`'s bits into consecutive positions selected by the set bits of
/// `j`; requires `r` to be a submask of `j`.
fn compress(r: usize, j: usize) -> usize {
    let mut c = 0usize;
    let mut bit = 0;
    let mut m = j;
    while m != 0 {
        let low = m & m.wrapping_neg();
        if r & low != 0 {
            c |= 1 << bit;
        }
        bit += 1;
        m ^= low;
    }
    c
}

fn conv_dense(
    a: &[DegreeValue],
    b: &[DegreeValue],
    bits: usize,
    out: &mut [DegreeValue],
    scratch: &mut ConvScratch,
) {
    let n = 1usize << bits;
    let off = &scratch.off;
    // sup[off[j] + rank] = max over r <= m <= j of a[m], rank = compress(r, j)
    let sup = &mut scratch.sup;
    for j in 0..n {
        let base = off[j] as usize;
        let size = 1usize << j.count_ones();
        sup[base + size - 1] = a[j];
        if size == 1 {
            continue;
        }
        let mut r = (j - 1) & j;
        let mut rank = size - 2;
        loop {
            let missing = j & !r;
            let t = missing & missing.wrapping_neg();
            let with_t = sup[base + compress(r | t, j)];
            let without_j = sup[off[j ^ t] as usize + compress(r, j ^ t)];
            sup[base + rank] = with_t.max(without_j);
            if r == 0 {
                break;
            }
            r = (r - 1) & j;
            rank -= 1;
        }
    }
    // out[j] = max over j2 <= j of b[j2] + sup(j, j \ j2)
    for (j, slot) in out.iter_mut().enumerate() {
        let base = off[j] as usize;
        let size = 1usize << j.count_ones();
        let mut s = j;
        let mut c = size - 1;
        loop {
            if let DegreeValue::Finite(_) = b[s] {
                let cand = b[s].plus(sup[base + ((size - 1) ^ c)]);
                if cand > *slot {
                    *slot = cand;
                }
            }
            if s == 0 {
                break;
            }
            s = (s - 1) & j;
            c -= 1;
        }
    }
}

/// Vector degree bound of a product of functions with the given vector
/// degrees (an associative max-plus union convolution).
///
/// The empty product is the constant 1: entry 0 becomes 0.
pub fn vdegm(rows: &[&VectorDegree]) -> Result<VectorDegree> {
    vdegm_with(rows, &mut ConvScratch::new())
}

pub fn vdegm_with(rows: &[&VectorDegree], scratch: &mut ConvScratch) -> Result<VectorDegree> {
    let bits = rows.first().map(|r| r.index_bits()).unwrap_or(0);
    for r in rows {
        if r.index_bits() != bits {
            return Err(Error::InvalidArgument("mixed index-set widths".into()));
        }
    }
    let mut acc = VectorDegree::of_constant(bits, DegreeValue::Finite(0))?;
    for r in rows {
        let entries = conv_entries(acc.entries(), r.entries(), bits, scratch);
        acc = VectorDegree { bits, entries };
    }
    Ok(acc)
}

pub fn vdegm_pair(a: &VectorDegree, b: &VectorDegree) -> VectorDegree {
    ConvScratch::new().convolve(a, b)
}

/// Vector numeric mapping: bounds the vector degree of `f` composed with
/// functions whose vector degrees are `rows` (matched by variable index).
pub fn vdeg_map(f: &Poly, rows: &[&VectorDegree]) -> Result<VectorDegree> {
    let bits = rows.first().map(|r| r.index_bits()).unwrap_or(0);
    for r in rows {
        if r.index_bits() != bits {
            return Err(Error::InvalidArgument("mixed index-set widths".into()));
        }
    }
    let mut out = VectorDegree::new(bits)?;
    let mut scratch = ConvScratch::new();
    for t in f.terms() {
        let factor_rows: Vec<&VectorDegree> = t
            .vars()
            .iter()
            .map(|v| {
                rows.get(v.index() as usize).copied().ok_or(Error::InvalidArgument(format!(
                    "no vector degree for index {}",
                    v.index()
                )))
            })
            .collect::<Result<_>>()?;
        let term_row = vdegm_with(&factor_rows, &mut scratch)?;
        out = out.max_with(&term_row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fin(v: i32) -> DegreeValue {
        DegreeValue::Finite(v)
    }

    fn vd(entries: &[DegreeValue]) -> VectorDegree {
        VectorDegree::from_entries(entries.to_vec()).unwrap()
    }

    const NI: DegreeValue = DegreeValue::NegInf;

    /// Exhaustive reference convolution, quadratic in the entry count.
    fn conv_reference(a: &VectorDegree, b: &VectorDegree) -> VectorDegree {
        let bits = a.index_bits();
        let mut out = VectorDegree::new(bits).unwrap();
        for j1 in 0..a.len() {
            for j2 in 0..b.len() {
                let j = j1 | j2;
                let cand = a.entry(j1).plus(b.entry(j2));
                if cand > out.entry(j) {
                    out.set_entry(j, cand);
                }
            }
        }
        out
    }

    #[test]
    fn neg_inf_is_absorbing_and_minimal() {
        assert_eq!(NI.plus(fin(5)), NI);
        assert_eq!(NI.plus_i32(3), NI);
        assert!(NI < fin(i32::MIN));
        assert_eq!(NI.min_cap(0), NI);
        assert_eq!(fin(7).min_cap(3), fin(3));
    }

    #[test]
    fn degree_value_text_roundtrip() {
        for v in [NI, fin(-2), fin(0), fin(80)] {
            let s = v.to_string();
            assert_eq!(s.parse::<DegreeValue>().unwrap(), v);
        }
    }

    #[test]
    fn numeric_deg_of_product() {
        let f: Poly = "x0x1".parse().unwrap();
        let d = [fin(2), fin(2)];
        assert_eq!(numeric_deg(&f, &d).unwrap(), fin(4));
        assert_eq!(numeric_deg(&Poly::zero(), &d).unwrap(), NI);
        assert_eq!(numeric_deg(&Poly::one(), &d).unwrap(), fin(0));
    }

    #[test]
    fn vdegm_matches_reference_on_dense_and_sparse_rows() {
        let a = vd(&[fin(1), NI, fin(0), fin(2)]);
        let b = vd(&[fin(0), fin(1), NI, NI]);
        let got = vdegm_pair(&a, &b);
        let want = conv_reference(&a, &b);
        assert_eq!(got, want);
    }

    #[test]
    fn dense_conv_matches_reference_randomised() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for bits in 0..=6 {
            for _ in 0..40 {
                let n = 1 << bits;
                let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                    let entries: Vec<DegreeValue> = (0..n)
                        .map(|_| {
                            if rng.gen_bool(0.3) {
                                NI
                            } else {
                                fin(rng.gen_range(0..6))
                            }
                        })
                        .collect();
                    VectorDegree::from_entries(entries).unwrap()
                };
                let a = mk(&mut rng);
                let b = mk(&mut rng);
                let want = conv_reference(&a, &b);
                let mut dense = vec![NI; n];
                let mut scratch = ConvScratch::new();
                scratch.prepare(bits);
                super::conv_dense(a.entries(), b.entries(), bits, &mut dense, &mut scratch);
                assert_eq!(dense, want.entries());
                assert_eq!(vdegm_pair(&a, &b), want);
                assert_eq!(scratch.convolve(&a, &b), want);
            }
        }
    }

    #[test]
    fn vdegm_is_associative() {
        let a = vd(&[fin(1), fin(0)]);
        let b = vd(&[NI, fin(2)]);
        let c = vd(&[fin(0), fin(1)]);
        let left = vdegm_pair(&vdegm_pair(&a, &b), &c);
        let right = vdegm_pair(&a, &vdegm_pair(&b, &c));
        assert_eq!(left, right);
        assert_eq!(vdegm(&[&a, &b, &c]).unwrap(), left);
    }

    #[test]
    fn vdeg_map_product_of_two() {
        // f = y0*y1 with rows ((2,0),(1,1)) maps to (3,3)
        let f: Poly = "x0x1".parse().unwrap();
        let rows = [vd(&[fin(2), fin(0)]), vd(&[fin(1), fin(1)])];
        let got = vdeg_map(&f, &[&rows[0], &rows[1]]).unwrap();
        assert_eq!(got, vd(&[fin(3), fin(3)]));
        assert_eq!(got.degree(), fin(4));
    }

    #[test]
    fn vdeg_map_two_bit_index_set() {
        let f: Poly = "x0x1".parse().unwrap();
        let rows = [vd(&[NI, fin(1), fin(0), NI]), vd(&[fin(1), NI, NI, fin(0)])];
        let got = vdeg_map(&f, &[&rows[0], &rows[1]]).unwrap();
        assert_eq!(got, vd(&[NI, fin(2), fin(1), fin(1)]));
        assert_eq!(got.degree(), fin(3));
    }

    #[test]
    fn fold_high_bits_dominates_projection() {
        let v = vd(&[fin(0), fin(1), NI, fin(2)]);
        let folded = v.fold_high_bits(1);
        // entry j = max(entry[j], entry[2+j] + 1)
        assert_eq!(folded, vd(&[fin(0), fin(3)]));
    }

    #[test]
    fn clamped_and_top_entry_degrees() {
        let v = vd(&[fin(4), fin(3), fin(1), fin(0)]);
        assert_eq!(v.degree(), fin(4));
        assert_eq!(v.degree_clamped(2), fin(3));
        assert_eq!(v.top_entry_degree(), fin(2));
    }
}
