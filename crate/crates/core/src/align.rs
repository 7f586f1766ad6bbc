//! Global texture alignment: assembles the stacked pose-correction system
//! from weighted cross-fragment match pairs and solves the ridge-regularized
//! least squares for all per-fragment correction vectors at once.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::features::MatchPair;
use crate::sparse::{CholeskyError, CscMatrix, SparseCholesky};
use crate::{Mat4, Point3, Real};

/// Small-motion parameters per fragment: [alpha, beta, gamma, tx, ty, tz].
pub type CorrectionVector = SVector<Real, 6>;

/// The 3x6 constraint block of one matched 3D point.
///
/// Multiplying by a correction vector gives the first-order displacement of
/// the point under that correction: rotation part cross the point, plus the
/// translation.
pub fn build_a_k(p: Point3) -> SMatrix<Real, 3, 6> {
    let (x, y, z) = (p.x, p.y, p.z);
    SMatrix::<Real, 3, 6>::from_row_slice(&[
        0.0, z, -y, 1.0, 0.0, 0.0, //
        -z, 0.0, x, 0.0, 1.0, 0.0, //
        y, -x, 0.0, 0.0, 0.0, 1.0,
    ])
}

/// The homogeneous linearized correction transform of one fragment.
pub fn correction_matrix(w: &CorrectionVector) -> Mat4 {
    let (a, b, g) = (w[0], w[1], w[2]);
    Mat4::from_row_slice(&[
        1.0, -g, b, w[3], //
        g, 1.0, -a, w[4], //
        -b, a, 1.0, w[5], //
        0.0, 0.0, 0.0, 1.0,
    ])
}

/// Stacked sparse system `A Omega = b` over all match pairs; rows come in
/// blocks of 3 per match, columns in blocks of 6 per fragment.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub n_rows: usize,
    pub n_cols: usize,
    pub triplets: Vec<(u32, u32, Real)>,
    pub rhs: Vec<Real>,
    /// fragment id of each 6-column block
    pub fragment_ids: Vec<u32>,
    /// column block index per match endpoint, one (i, j) per match
    pub match_blocks: Vec<(u32, u32)>,
    /// the weights used, one per match
    pub weights: Vec<Real>,
}

impl SparseSystem {
    pub fn block_of(&self, fragment: u32) -> Option<usize> {
        self.fragment_ids.iter().position(|&f| f == fragment)
    }

    /// Residual vector `A x - b`.
    pub fn residual(&self, x: &[Real]) -> Vec<Real> {
        let mut r: Vec<Real> = self.rhs.iter().map(|v| -v).collect();
        for &(row, col, v) in &self.triplets {
            r[row as usize] += v * x[col as usize];
        }
        r
    }
}

/// Builds the system: match k between fragments i and j contributes rows
/// `3k..3k+3` holding `+mu_k A(P_i)` in i's columns and `-mu_k A(P_j)` in
/// j's columns, with `mu_k (P_j - P_i)` on the right-hand side.
///
/// `fragment_ids` fixes the column-block order and must cover every fragment
/// referenced by a match; fragments without matches still get a block (the
/// regularizer pins their correction to zero).
pub fn assemble_system(matches: &[MatchPair], fragment_ids: &[u32]) -> Result<SparseSystem> {
    let block_of: BTreeMap<u32, u32> = fragment_ids
        .iter()
        .enumerate()
        .map(|(b, &f)| (f, b as u32))
        .collect();

    let n_rows = 3 * matches.len();
    let n_cols = 6 * fragment_ids.len();
    let mut triplets = Vec::with_capacity(matches.len() * 24);
    let mut rhs = vec![0.0; n_rows];
    let mut match_blocks = Vec::with_capacity(matches.len());
    let mut weights = Vec::with_capacity(matches.len());

    for (k, m) in matches.iter().enumerate() {
        let bi = *block_of
            .get(&m.fragments.0)
            .ok_or(Error::UnknownFragment {
                fragment: m.fragments.0 as usize,
            })?;
        let bj = *block_of
            .get(&m.fragments.1)
            .ok_or(Error::UnknownFragment {
                fragment: m.fragments.1 as usize,
            })?;
        let ai = build_a_k(m.p_i);
        let aj = build_a_k(m.p_j);
        let row0 = (3 * k) as u32;
        for r in 0..3u32 {
            for c in 0..6u32 {
                let vi = m.weight * ai[(r as usize, c as usize)];
                if vi != 0.0 {
                    triplets.push((row0 + r, 6 * bi + c, vi));
                }
                let vj = -m.weight * aj[(r as usize, c as usize)];
                if vj != 0.0 {
                    triplets.push((row0 + r, 6 * bj + c, vj));
                }
            }
            rhs[(row0 + r) as usize] = m.weight * (m.p_j[r as usize] - m.p_i[r as usize]);
        }
        match_blocks.push((bi, bj));
        weights.push(m.weight);
    }

    Ok(SparseSystem {
        n_rows,
        n_cols,
        triplets,
        rhs,
        fragment_ids: fragment_ids.to_vec(),
        match_blocks,
        weights,
    })
}

/// Per-fragment corrections and solve diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    /// one correction per column block, in `fragment_ids` order
    pub corrections: Vec<CorrectionVector>,
    pub fragment_ids: Vec<u32>,
    block_of: HashMap<u32, usize>,
    /// `|A Omega - b|` at the solution
    pub residual_norm: Real,
    pub lambda2: Real,
}

impl Solution {
    pub fn zero(fragment_ids: &[u32]) -> Self {
        Solution {
            corrections: vec![CorrectionVector::zeros(); fragment_ids.len()],
            fragment_ids: fragment_ids.to_vec(),
            block_of: fragment_ids
                .iter()
                .enumerate()
                .map(|(b, &f)| (f, b))
                .collect(),
            residual_norm: 0.0,
            lambda2: 0.0,
        }
    }

    pub fn correction(&self, fragment: u32) -> CorrectionVector {
        match self.block_of.get(&fragment) {
            Some(&b) => self.corrections[b],
            None => CorrectionVector::zeros(),
        }
    }

    /// Flat solution vector in column order.
    pub fn flat(&self) -> Vec<Real> {
        let mut v = Vec::with_capacity(6 * self.corrections.len());
        for w in &self.corrections {
            v.extend_from_slice(w.as_slice());
        }
        v
    }
}

/// Minimizes `|A Omega - b|^2 + lambda2 |Omega|^2` through the normal
/// equations and a sparse Cholesky factorization.
///
/// `lambda2 = 0` is accepted only when `A^T A` is positive definite; the
/// usual failure is the 6-dimensional global-motion gauge, reported as
/// [`Error::GaugeDeficient`].
pub fn solve_corrections(sys: &SparseSystem, lambda2: Real) -> Result<Solution> {
    let n = sys.n_cols;
    if n == 0 {
        return Ok(Solution::zero(&sys.fragment_ids));
    }

    // accumulate A^T A (lower triangle) and A^T b row by row
    let mut normal: HashMap<(u32, u32), Real> = HashMap::new();
    let mut atb = vec![0.0 as Real; n];
    let mut row_entries: Vec<(u32, Real)> = Vec::with_capacity(12);
    let mut row_start = 0usize;
    let n_rows = sys.n_rows;
    for row in 0..n_rows as u32 {
        row_entries.clear();
        let mut k = row_start;
        while k < sys.triplets.len() && sys.triplets[k].0 == row {
            row_entries.push((sys.triplets[k].1, sys.triplets[k].2));
            k += 1;
        }
        row_start = k;
        let b_r = sys.rhs[row as usize];
        for &(ca, va) in &row_entries {
            atb[ca as usize] += va * b_r;
            for &(cb, vb) in &row_entries {
                if cb <= ca {
                    *normal.entry((ca, cb)).or_insert(0.0) += va * vb;
                }
            }
        }
    }

    let mut triplets: Vec<(u32, u32, Real)> = normal
        .into_iter()
        .map(|((r, c), v)| (r, c, v))
        .collect();
    for d in 0..n as u32 {
        triplets.push((d, d, lambda2));
    }
    triplets.sort_by_key(|&(r, c, _)| (c, r));
    let a_lower = CscMatrix::from_triplets(n, n, &triplets);

    let chol = match SparseCholesky::factor(&a_lower) {
        Ok(c) => c,
        Err(CholeskyError::NotPositiveDefinite { .. }) if lambda2 <= 0.0 => {
            return Err(Error::GaugeDeficient {
                fragments: sys.fragment_ids.len(),
                null_dim: 6,
            });
        }
        Err(CholeskyError::NotPositiveDefinite { column, pivot }) => {
            return Err(Error::Config(format!(
                "normal equations unexpectedly not positive definite at column {column} (pivot {pivot:.3e})"
            )));
        }
    };
    let mut x = chol.solve(&atb);

    // Corrected semi-normal refinement: the normal equations square the
    // conditioning, so polish the solution against the original stacked
    // problem. The residual goes through A itself, and the existing factor
    // solves for the update.
    for _ in 0..2 {
        let r = sys.residual(&x); // A x - b
        let mut g = vec![0.0 as Real; n]; // A^T (b - A x) - lambda x
        for &(row, col, v) in &sys.triplets {
            g[col as usize] -= v * r[row as usize];
        }
        for (gi, xi) in g.iter_mut().zip(&x) {
            *gi -= lambda2 * xi;
        }
        let dx = chol.solve(&g);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }

    let residual = sys.residual(&x);
    let residual_norm = residual.iter().map(|v| v * v).sum::<Real>().sqrt();

    let corrections: Vec<CorrectionVector> = (0..sys.fragment_ids.len())
        .map(|b| CorrectionVector::from_column_slice(&x[6 * b..6 * b + 6]))
        .collect();
    Ok(Solution {
        corrections,
        fragment_ids: sys.fragment_ids.clone(),
        block_of: sys
            .fragment_ids
            .iter()
            .enumerate()
            .map(|(b, &f)| (f, b))
            .collect(),
        residual_norm,
        lambda2,
    })
}

/// Scale-free default ridge weight.
pub fn default_lambda2(sys: &SparseSystem) -> Real {
    if sys.weights.is_empty() || sys.fragment_ids.is_empty() {
        return 1e-3;
    }
    let mean_w2 =
        sys.weights.iter().map(|w| w * w).sum::<Real>() / sys.weights.len() as Real;
    1e-3 * mean_w2 * sys.weights.len() as Real / sys.n_cols as Real
}

/// Applies fragment `frag`'s correction to a point:
/// `p + A(p) * omega`, identical to the homogeneous product with the
/// correction matrix.
pub fn corrected_point(p: Point3, frag: u32, sol: &Solution) -> Point3 {
    let w = sol.correction(frag);
    p + build_a_k(p) * w
}

/// One round of Huber reweighting: matches with residual norm above `delta`
/// have their weight scaled down, then the system is re-solved.
pub fn solve_with_huber(
    matches: &[MatchPair],
    fragment_ids: &[u32],
    lambda2: Real,
    delta: Real,
) -> Result<Solution> {
    let sys = assemble_system(matches, fragment_ids)?;
    let sol = solve_corrections(&sys, lambda2)?;
    let res = sys.residual(&sol.flat());
    let mut reweighted = matches.to_vec();
    for (k, m) in reweighted.iter_mut().enumerate() {
        let r = (res[3 * k] * res[3 * k] + res[3 * k + 1] * res[3 * k + 1]
            + res[3 * k + 2] * res[3 * k + 2])
            .sqrt();
        if r > delta {
            m.weight *= (delta / r).sqrt();
        }
    }
    let sys2 = assemble_system(&reweighted, fragment_ids)?;
    solve_corrections(&sys2, lambda2)
}
