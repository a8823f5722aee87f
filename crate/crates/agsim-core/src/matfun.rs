//! Permanents, hafnians and loop hafnians: exact enumeration oracles and the
//! low-rank polynomial algorithms.

use crate::error::{Error, Result};
use crate::linalg::{self, check_square, ComplexMatrix, ComplexVector, C64, ONE, ZERO};
use crate::poly::{box_size, SparsePoly, Weight};

pub const RYSER_LIMIT: usize = 24;
pub const ENUM_LIMIT: usize = 12;
pub const LOWRANK_RANK_LIMIT: usize = 8;
/// Guard on the coefficient box of the low-rank permanent polynomial.
pub const LOWRANK_BOX_LIMIT: u128 = 1 << 28;

/// Ryser's formula with Gray-code subset updates, O(2ⁿ n).
pub fn permanent_ryser(a: &ComplexMatrix) -> Result<C64> {
    let n = check_square(a)?;
    if n > RYSER_LIMIT {
        return Err(Error::TooLarge { what: "permanent dimension", size: n, limit: RYSER_LIMIT });
    }
    if n == 0 {
        return Ok(ONE);
    }
    let mut row_sums = vec![ZERO; n];
    let mut total = ZERO;
    let mut gray: u64 = 0;
    for k in 1u64..(1u64 << n) {
        let next = k ^ (k >> 1);
        let changed = (gray ^ next).trailing_zeros() as usize;
        let added = next & (1 << changed) != 0;
        for (i, s) in row_sums.iter_mut().enumerate() {
            if added {
                *s += a[(i, changed)];
            } else {
                *s -= a[(i, changed)];
            }
        }
        gray = next;
        let prod: C64 = row_sums.iter().product();
        if next.count_ones() % 2 == 1 {
            total -= prod;
        } else {
            total += prod;
        }
    }
    if n % 2 == 1 {
        total = -total;
    }
    Ok(total)
}

/// Sum over all permutations. Test oracle only.
pub fn permanent_enum(a: &ComplexMatrix) -> Result<C64> {
    let n = check_square(a)?;
    if n > ENUM_LIMIT {
        return Err(Error::TooLarge { what: "permanent enumeration", size: n, limit: ENUM_LIMIT });
    }
    fn rec(a: &ComplexMatrix, row: usize, used: &mut [bool], acc: C64, out: &mut C64) {
        let n = a.nrows();
        if row == n {
            *out += acc;
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                rec(a, row + 1, used, acc * a[(row, j)], out);
                used[j] = false;
            }
        }
    }
    let mut out = ZERO;
    rec(a, 0, &mut vec![false; n], ONE, &mut out);
    Ok(out)
}

/// Per(I + Σ_s u_s v_sᵀ) through the matched-degree polynomial
/// Π_i (1 + p_i q_i), p_i = Σ_s x_s u_s[i], q_i = Σ_s y_s v_s[i].
pub fn permanent_lowrank_plus_identity(u: &[ComplexVector], v: &[ComplexVector]) -> Result<C64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let rank = u.len();
    if rank == 0 {
        return Ok(ONE);
    }
    let n = u[0].len();
    for x in u.iter().chain(v) {
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
    }
    if n > crate::poly::MAX_CAP as usize || 2 * rank > crate::poly::MAX_VARS {
        return Err(Error::RankTooLarge { rank, limit: crate::poly::MAX_VARS / 2 });
    }
    let caps = vec![n as u8; 2 * rank];
    let needed = box_size(&caps);
    if needed > LOWRANK_BOX_LIMIT {
        return Err(Error::RankTooLarge { rank, limit: max_rank_for(n) });
    }
    let mut f = SparsePoly::one(&caps)?;
    for i in 0..n {
        let mut pc = vec![ZERO; 2 * rank];
        let mut qc = vec![ZERO; 2 * rank];
        for s in 0..rank {
            pc[s] = u[s][i];
            qc[rank + s] = v[s][i];
        }
        let p = SparsePoly::linear(&caps, &pc, ZERO)?;
        let q = SparsePoly::linear(&caps, &qc, ZERO)?;
        let factor = p.mul_truncated(&q)?.add(&SparsePoly::one(&caps)?)?;
        f = f.mul_truncated(&factor)?;
    }
    let ga: Vec<usize> = (0..rank).collect();
    let gb: Vec<usize> = (rank..2 * rank).collect();
    f.extract_matched_degree_sum(&ga, &gb, Weight::Factorial)
}

fn max_rank_for(n: usize) -> usize {
    let mut r = 0;
    while box_size(&vec![n as u8; 2 * (r + 1)]) <= LOWRANK_BOX_LIMIT {
        r += 1;
    }
    r
}

fn matchings(a: &ComplexMatrix, loops: bool) -> C64 {
    fn rec(a: &ComplexMatrix, used: &mut [bool], loops: bool) -> C64 {
        let n = a.nrows();
        let Some(i) = used.iter().position(|u| !u) else {
            return ONE;
        };
        used[i] = true;
        let mut total = ZERO;
        if loops {
            let d = a[(i, i)];
            if d != ZERO {
                total += d * rec(a, used, loops);
            }
        }
        for j in (i + 1)..n {
            if !used[j] {
                let e = a[(i, j)];
                if e != ZERO {
                    used[j] = true;
                    total += e * rec(a, used, loops);
                    used[j] = false;
                }
            }
        }
        used[i] = false;
        total
    }
    rec(a, &mut vec![false; a.nrows()], loops)
}

/// Loop hafnian by matching enumeration. Reads the upper triangle and diagonal.
pub fn loop_hafnian_enum(a: &ComplexMatrix) -> Result<C64> {
    let n = check_square(a)?;
    if n > ENUM_LIMIT {
        return Err(Error::TooLarge { what: "loop hafnian enumeration", size: n, limit: ENUM_LIMIT });
    }
    Ok(matchings(a, true))
}

/// Hafnian by perfect-matching enumeration. Reads the upper triangle.
pub fn hafnian_enum(a: &ComplexMatrix) -> Result<C64> {
    let n = check_square(a)?;
    if n % 2 == 1 {
        return Err(Error::OddSize(n));
    }
    if n > ENUM_LIMIT {
        return Err(Error::TooLarge { what: "hafnian enumeration", size: n, limit: ENUM_LIMIT });
    }
    Ok(matchings(a, false))
}

/// Symmetric matrix G Gᵀ whose diagonal is replaced by `diag`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankSymmetric {
    pub g: ComplexMatrix,
    pub diag: ComplexVector,
}

impl LowRankSymmetric {
    pub fn new(g: ComplexMatrix, diag: ComplexVector) -> Result<Self> {
        if diag.len() != g.nrows() {
            return Err(Error::DimensionMismatch { expected: g.nrows(), got: diag.len() });
        }
        Ok(Self { g, diag })
    }

    /// Factors the off-diagonal structure of a symmetric matrix. The
    /// diagonal of `sigma` is factored too; `diag` replaces it afterwards.
    pub fn from_symmetric(sigma: &ComplexMatrix, diag: ComplexVector) -> Result<Self> {
        let g = linalg::symmetric_factor(sigma, 1e-10)?;
        Self::new(g, diag)
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn rank(&self) -> usize {
        self.g.ncols()
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        let mut m = &self.g * self.g.transpose();
        for i in 0..self.n() {
            m[(i, i)] = self.diag[i];
        }
        m
    }
}

/// lhaf via E_y[Π_i (Σ_j G_ij y_j + μ_i)] with even-degree extraction.
pub fn loop_hafnian_lowrank(s: &LowRankSymmetric) -> Result<C64> {
    loop_hafnian_lowrank_with_limit(s, LOWRANK_RANK_LIMIT)
}

pub fn loop_hafnian_lowrank_with_limit(s: &LowRankSymmetric, rank_limit: usize) -> Result<C64> {
    let n = s.n();
    let r = s.rank();
    if r > rank_limit || r > crate::poly::MAX_VARS {
        return Err(Error::RankTooLarge { rank: r, limit: rank_limit });
    }
    if n > crate::poly::MAX_CAP as usize {
        return Err(Error::TooLarge { what: "loop hafnian dimension", size: n, limit: crate::poly::MAX_CAP as usize });
    }
    let caps = vec![n as u8; r];
    let mut f = SparsePoly::one(&caps)?;
    for i in 0..n {
        let coeffs: Vec<C64> = (0..r).map(|j| s.g[(i, j)]).collect();
        f = f.mul_truncated(&SparsePoly::linear(&caps, &coeffs, s.diag[i])?)?;
    }
    let group: Vec<usize> = (0..r).collect();
    f.extract_matched_degree_sum(&group, &[], Weight::DoubleFactorialEven)
}
