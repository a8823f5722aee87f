//! Sparse multivariate polynomials over complex coefficients with per-variable
//! degree caps.
//!
//! Exponent vectors are packed 8 bits per variable into a `u128`, so a
//! polynomial has at most 16 variables and caps of at most 127. Terms are kept
//! sorted by packed key, which makes every operation deterministic.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{C64, ONE, ZERO};

pub const MAX_VARS: usize = 16;
pub const MAX_CAP: u8 = 127;
/// Products whose full coefficient box has at most this many cells are
/// accumulated in a dense array.
pub const DENSE_LIMIT: u128 = 1 << 20;
/// Allocation guard on Π(cap + 1).
pub const TERM_LIMIT: u128 = 1 << 32;

const FIELD: u32 = 8;
const MASK: u128 = 0xff;

pub fn pack(exps: &[u8]) -> u128 {
    exps.iter().enumerate().fold(0u128, |k, (i, &e)| k | ((e as u128) << (FIELD * i as u32)))
}

pub fn unpack(key: u128, nvars: usize) -> Vec<u8> {
    (0..nvars).map(|i| ((key >> (FIELD * i as u32)) & MASK) as u8).collect()
}

#[inline]
fn field(key: u128, i: usize) -> u8 {
    ((key >> (FIELD * i as u32)) & MASK) as u8
}

/// Extraction weight applied to each surviving monomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    /// Π d_s! over matched pairs (deg_A(s) = deg_B(s) = d_s).
    Factorial,
    /// Π (e − 1)!! over even degrees of group A; odd degrees contribute zero.
    /// Group B must be empty.
    DoubleFactorialEven,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoly {
    nvars: usize,
    caps: Vec<u8>,
    terms: Vec<(u128, C64)>,
}

impl SparsePoly {
    pub fn zero(caps: &[u8]) -> Result<Self> {
        if caps.len() > MAX_VARS {
            return Err(Error::TooLarge { what: "variable count", size: caps.len(), limit: MAX_VARS });
        }
        if let Some(&c) = caps.iter().find(|&&c| c > MAX_CAP) {
            return Err(Error::TooLarge { what: "degree cap", size: c as usize, limit: MAX_CAP as usize });
        }
        let needed = box_size(caps);
        if needed > TERM_LIMIT {
            return Err(Error::CapOverflow { needed, limit: TERM_LIMIT });
        }
        Ok(Self { nvars: caps.len(), caps: caps.to_vec(), terms: Vec::new() })
    }

    pub fn constant(caps: &[u8], value: C64) -> Result<Self> {
        let mut p = Self::zero(caps)?;
        if value != ZERO {
            p.terms.push((0, value));
        }
        Ok(p)
    }

    pub fn one(caps: &[u8]) -> Result<Self> {
        Self::constant(caps, ONE)
    }

    /// c + Σ_i coeffs[i] x_i.
    pub fn linear(caps: &[u8], coeffs: &[C64], constant: C64) -> Result<Self> {
        let mut p = Self::zero(caps)?;
        if coeffs.len() != p.nvars {
            return Err(Error::DimensionMismatch { expected: p.nvars, got: coeffs.len() });
        }
        if constant != ZERO {
            p.terms.push((0, constant));
        }
        for (i, &a) in coeffs.iter().enumerate() {
            if a != ZERO && p.caps[i] >= 1 {
                p.terms.push((1u128 << (FIELD * i as u32), a));
            }
        }
        p.terms.sort_by_key(|t| t.0);
        Ok(p)
    }

    /// Builds a polynomial from (exponents, coefficient) pairs, summing
    /// duplicates and dropping terms outside the caps.
    pub fn from_terms(caps: &[u8], terms: &[(Vec<u8>, C64)]) -> Result<Self> {
        let mut p = Self::zero(caps)?;
        let mut acc: HashMap<u128, C64> = HashMap::new();
        let mut order = Vec::new();
        for (e, v) in terms {
            if e.len() != p.nvars {
                return Err(Error::DimensionMismatch { expected: p.nvars, got: e.len() });
            }
            if e.iter().zip(caps).any(|(a, c)| a > c) {
                continue;
            }
            let k = pack(e);
            let slot = acc.entry(k).or_insert_with(|| {
                order.push(k);
                ZERO
            });
            *slot += v;
        }
        order.sort_unstable();
        p.terms = order.into_iter().map(|k| (k, acc[&k])).filter(|t| t.1 != ZERO).collect();
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn caps(&self) -> &[u8] {
        &self.caps
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (Vec<u8>, C64)> + '_ {
        self.terms.iter().map(move |&(k, v)| (unpack(k, self.nvars), v))
    }

    pub fn coeff(&self, exps: &[u8]) -> C64 {
        let k = pack(exps);
        match self.terms.binary_search_by_key(&k, |t| t.0) {
            Ok(i) => self.terms[i].1,
            Err(_) => ZERO,
        }
    }

    pub fn max_coeff_magnitude(&self) -> f64 {
        self.terms.iter().map(|t| t.1.norm()).fold(0.0, f64::max)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.nvars != other.nvars || self.caps != other.caps {
            return Err(Error::CapMismatch);
        }
        Ok(())
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        if s == ZERO {
            out.terms.clear();
        } else {
            for t in out.terms.iter_mut() {
                t.1 *= s;
            }
            out.terms.retain(|t| t.1 != ZERO);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() || j < other.terms.len() {
            let next = match (self.terms.get(i), other.terms.get(j)) {
                (Some(a), Some(b)) if a.0 == b.0 => {
                    i += 1;
                    j += 1;
                    (a.0, a.1 + b.1)
                }
                (Some(a), Some(b)) if a.0 < b.0 => {
                    i += 1;
                    *a
                }
                (Some(_), Some(b)) => {
                    j += 1;
                    *b
                }
                (Some(a), None) => {
                    i += 1;
                    *a
                }
                (None, Some(b)) => {
                    j += 1;
                    *b
                }
                (None, None) => unreachable!(),
            };
            if next.1 != ZERO {
                out.push(next);
            }
        }
        Ok(Self { nvars: self.nvars, caps: self.caps.clone(), terms: out })
    }

    /// Product with every term beyond the caps dropped.
    pub fn mul_truncated(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let n = self.nvars;
        let caps = &self.caps;
        let fits = |k: u128| (0..n).all(|v| field(k, v) <= caps[v]);
        let total = box_size(caps);
        let mut terms = Vec::new();
        if total <= DENSE_LIMIT {
            let strides = strides(caps);
            let index = |k: u128| (0..n).map(|v| field(k, v) as usize * strides[v]).sum::<usize>();
            let mut dense = vec![ZERO; total as usize];
            let mut touched = vec![false; total as usize];
            let rhs: Vec<(u128, usize, C64)> = other.terms.iter().map(|&(k, v)| (k, index(k), v)).collect();
            for &(ka, va) in &self.terms {
                let ia = index(ka);
                for &(kb, ib, vb) in &rhs {
                    let k = ka + kb;
                    if fits(k) {
                        dense[ia + ib] += va * vb;
                        touched[ia + ib] = true;
                    }
                }
            }
            for (idx, (&v, &t)) in dense.iter().zip(&touched).enumerate() {
                if t && v != ZERO {
                    let mut rem = idx;
                    let mut key = 0u128;
                    for var in (0..n).rev() {
                        let e = rem / strides[var];
                        rem %= strides[var];
                        key |= (e as u128) << (FIELD * var as u32);
                    }
                    terms.push((key, v));
                }
            }
        } else {
            let mut acc: HashMap<u128, C64> = HashMap::new();
            for &(ka, va) in &self.terms {
                for &(kb, vb) in &other.terms {
                    let k = ka + kb;
                    if fits(k) {
                        *acc.entry(k).or_insert(ZERO) += va * vb;
                    }
                }
            }
            terms = acc.into_iter().filter(|t| t.1 != ZERO).collect();
            terms.sort_unstable_by_key(|t| t.0);
        }
        Ok(Self { nvars: n, caps: caps.clone(), terms })
    }

    pub fn pow_truncated(&self, k: u32) -> Result<Self> {
        let mut out = Self::one(&self.caps)?;
        for _ in 0..k {
            out = out.mul_truncated(self)?;
        }
        Ok(out)
    }

    pub fn evaluate(&self, point: &[C64]) -> Result<C64> {
        if point.len() != self.nvars {
            return Err(Error::DimensionMismatch { expected: self.nvars, got: point.len() });
        }
        let mut sum = ZERO;
        for &(k, v) in &self.terms {
            let mut m = v;
            for (i, x) in point.iter().enumerate() {
                let e = field(k, i);
                if e > 0 {
                    m *= x.powu(e as u32);
                }
            }
            sum += m;
        }
        Ok(sum)
    }

    /// Weighted sum of the coefficients of monomials selected by the grouping.
    ///
    /// With `Weight::Factorial`, groups A and B pair variables one to one;
    /// only monomials with equal degree on each pair survive, and variables
    /// outside both groups must have degree zero. With
    /// `Weight::DoubleFactorialEven`, group B is empty and only monomials with
    /// even degree in every group-A variable survive.
    pub fn extract_matched_degree_sum(&self, group_a: &[usize], group_b: &[usize], weight: Weight) -> Result<C64> {
        let n = self.nvars;
        let mut seen = vec![false; n];
        for &v in group_a.iter().chain(group_b) {
            if v >= n {
                return Err(Error::BadGrouping(format!("variable {v} out of range")));
            }
            if seen[v] {
                return Err(Error::BadGrouping(format!("variable {v} listed twice")));
            }
            seen[v] = true;
        }
        let others: Vec<usize> = (0..n).filter(|&v| !seen[v]).collect();
        match weight {
            Weight::Factorial => {
                if group_a.len() != group_b.len() {
                    return Err(Error::BadGrouping("groups differ in length".into()));
                }
                let maxdeg = self.caps.iter().copied().max().unwrap_or(0) as usize;
                let fact = factorials(maxdeg);
                let mut sum = ZERO;
                'terms: for &(k, v) in &self.terms {
                    for &o in &others {
                        if field(k, o) != 0 {
                            continue 'terms;
                        }
                    }
                    let mut w = 1.0;
                    for (&a, &b) in group_a.iter().zip(group_b) {
                        let da = field(k, a);
                        if da != field(k, b) {
                            continue 'terms;
                        }
                        w *= fact[da as usize];
                    }
                    sum += v * w;
                }
                Ok(sum)
            }
            Weight::DoubleFactorialEven => {
                if !group_b.is_empty() {
                    return Err(Error::BadGrouping("double-factorial weight takes a single group".into()));
                }
                let maxdeg = self.caps.iter().copied().max().unwrap_or(0) as usize;
                let dfact = odd_double_factorials(maxdeg);
                let mut sum = ZERO;
                'terms2: for &(k, v) in &self.terms {
                    for &o in &others {
                        if field(k, o) != 0 {
                            continue 'terms2;
                        }
                    }
                    let mut w = 1.0;
                    for &a in group_a {
                        let e = field(k, a);
                        if e % 2 == 1 {
                            continue 'terms2;
                        }
                        w *= dfact[e as usize];
                    }
                    sum += v * w;
                }
                Ok(sum)
            }
        }
    }
}

pub fn box_size(caps: &[u8]) -> u128 {
    caps.iter().map(|&c| c as u128 + 1).product()
}

fn strides(caps: &[u8]) -> Vec<usize> {
    let mut s = Vec::with_capacity(caps.len());
    let mut acc = 1usize;
    for &c in caps {
        s.push(acc);
        acc *= c as usize + 1;
    }
    s
}

pub fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

/// d[e] = (e − 1)!! for even e (with (−1)!! = 1); odd entries are zero.
pub fn odd_double_factorials(n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n + 1];
    d[0] = 1.0;
    let mut e = 2;
    while e <= n {
        d[e] = d[e - 2] * (e - 1) as f64;
        e += 2;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_with_cap_two() {
        let p = SparsePoly::linear(&[2], &[ONE], ONE).unwrap();
        let q = p.mul_truncated(&p).unwrap();
        assert_eq!(q.coeff(&[0]), ONE);
        assert_eq!(q.coeff(&[1]), c(2.0, 0.0));
        assert_eq!(q.coeff(&[2]), ONE);
        assert_eq!(q.term_count(), 3);
    }

    #[test]
    fn square_with_cap_one_truncates() {
        let p = SparsePoly::linear(&[1], &[ONE], ONE).unwrap();
        let q = p.mul_truncated(&p).unwrap();
        assert_eq!(q.term_count(), 2);
        assert_eq!(q.coeff(&[1]), c(2.0, 0.0));
    }

    #[test]
    fn mixed_coefficient_of_squared_product() {
        let caps = [4, 4];
        let x = SparsePoly::linear(&caps, &[ONE, ZERO], ONE).unwrap();
        let y = SparsePoly::linear(&caps, &[ZERO, ONE], ONE).unwrap();
        let xy = x.mul_truncated(&y).unwrap();
        let sq = xy.mul_truncated(&xy).unwrap();
        assert_eq!(sq.coeff(&[1, 1]), c(4.0, 0.0));
    }

    #[test]
    fn cap_mismatch_is_an_error() {
        let p = SparsePoly::one(&[2]).unwrap();
        let q = SparsePoly::one(&[3]).unwrap();
        assert_eq!(p.mul_truncated(&q).unwrap_err(), Error::CapMismatch);
    }

    #[test]
    fn factorial_extraction_examples() {
        let caps = [3, 3];
        let p = SparsePoly::from_terms(&caps, &[(vec![1, 1], ONE)]).unwrap();
        assert_eq!(p.extract_matched_degree_sum(&[0], &[1], Weight::Factorial).unwrap(), ONE);
        let coeff = c(0.5, -1.5);
        let p = SparsePoly::from_terms(&caps, &[(vec![2, 2], coeff), (vec![2, 1], ONE)]).unwrap();
        assert_eq!(p.extract_matched_degree_sum(&[0], &[1], Weight::Factorial).unwrap(), coeff * 2.0);
    }

    #[test]
    fn bad_groupings() {
        let p = SparsePoly::one(&[2, 2, 2]).unwrap();
        assert!(matches!(
            p.extract_matched_degree_sum(&[0, 1], &[2], Weight::Factorial),
            Err(Error::BadGrouping(_))
        ));
        assert!(matches!(
            p.extract_matched_degree_sum(&[0], &[0], Weight::Factorial),
            Err(Error::BadGrouping(_))
        ));
        assert!(matches!(
            p.extract_matched_degree_sum(&[0], &[1], Weight::DoubleFactorialEven),
            Err(Error::BadGrouping(_))
        ));
    }

    #[test]
    fn double_factorial_weights() {
        let d = odd_double_factorials(8);
        assert_eq!(d, vec![1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0, 0.0, 105.0]);
        let p = SparsePoly::from_terms(&[4, 4], &[(vec![4, 2], ONE), (vec![1, 0], ONE), (vec![0, 0], ONE)]).unwrap();
        let v = p.extract_matched_degree_sum(&[0, 1], &[], Weight::DoubleFactorialEven).unwrap();
        assert_eq!(v, c(4.0, 0.0));
    }

    fn random_linear(caps: &[u8], rng: &mut ChaCha8Rng) -> SparsePoly {
        let coeffs: Vec<C64> = (0..caps.len()).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        SparsePoly::linear(caps, &coeffs, c(rng.random_range(-1.0..1.0), 0.3)).unwrap()
    }

    #[test]
    fn truncation_commutes_with_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let caps = [2, 3, 1];
        let big = [12, 12, 12];
        let fs: Vec<SparsePoly> = (0..5).map(|_| random_linear(&caps, &mut rng)).collect();
        let mut fwd = SparsePoly::one(&caps).unwrap();
        for f in &fs {
            fwd = fwd.mul_truncated(f).unwrap();
        }
        let mut rev = SparsePoly::one(&caps).unwrap();
        for f in fs.iter().rev() {
            rev = rev.mul_truncated(f).unwrap();
        }
        let mut full = SparsePoly::one(&big).unwrap();
        for f in &fs {
            let g = SparsePoly::from_terms(&big, &f.terms().collect::<Vec<_>>()).unwrap();
            full = full.mul_truncated(&g).unwrap();
        }
        for (e, v) in fwd.terms() {
            assert!((v - rev.coeff(&e)).norm() < 1e-12);
            assert!((v - full.coeff(&e)).norm() < 1e-12);
        }
        assert_eq!(fwd.term_count(), rev.term_count());
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dense_caps = [4, 4, 4];
        let sparse_caps = [127, 127, 127, 127];
        let a = random_linear(&dense_caps, &mut rng);
        let b = random_linear(&dense_caps, &mut rng);
        let d = a.mul_truncated(&b).unwrap().pow_truncated(2).unwrap();
        let lift = |p: &SparsePoly| {
            let t: Vec<(Vec<u8>, C64)> = p.terms().map(|(mut e, v)| {
                e.push(0);
                (e, v)
            }).collect();
            SparsePoly::from_terms(&sparse_caps, &t).unwrap()
        };
        let s = lift(&a).mul_truncated(&lift(&b)).unwrap().pow_truncated(2).unwrap();
        assert_eq!(d.term_count(), s.term_count());
        for (e, v) in d.terms() {
            let mut e2 = e.clone();
            e2.push(0);
            assert!((v - s.coeff(&e2)).norm() < 1e-12);
        }
    }

    #[test]
    fn evaluation_matches_product_of_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let caps = [6, 6];
        let fs: Vec<SparsePoly> = (0..4).map(|_| random_linear(&caps, &mut rng)).collect();
        let mut p = SparsePoly::one(&caps).unwrap();
        for f in &fs {
            p = p.mul_truncated(f).unwrap();
        }
        let pt = [c(0.3, -0.8), c(1.2, 0.1)];
        let direct: C64 = fs.iter().map(|f| f.evaluate(&pt).unwrap()).product();
        let v = p.evaluate(&pt).unwrap();
        assert!((v - direct).norm() <= 1e-12 * direct.norm().max(1.0));
        assert!(p.term_count() as u128 <= box_size(&caps));
    }

    #[test]
    fn guards() {
        assert!(matches!(SparsePoly::zero(&[1; 17]), Err(Error::TooLarge { .. })));
        assert!(matches!(SparsePoly::zero(&[200]), Err(Error::TooLarge { .. })));
        assert!(matches!(SparsePoly::zero(&[127; 16]), Err(Error::CapOverflow { .. })));
    }
}
