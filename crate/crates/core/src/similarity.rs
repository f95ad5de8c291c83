//! Similarity matrices, graph Laplacians and spectral utilities.
//!
//! The similarity of two observed variables is the geometric mean of the absolute
//! determinants of the two conditional transition matrices between them. It is
//! multiplicative along tree paths, which is what makes the partition and merge
//! steps work.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::genmodel::Alignment;
use crate::linalg::{self, LinalgError};

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("matrix is not square or does not match {labels} labels")]
    Shape { labels: usize },
    #[error("matrix is not symmetric (entry ({0}, {1}))")]
    Asymmetric(usize, usize),
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("similarity graph is disconnected (lambda2 = {lambda2:e}, scale {scale:e})")]
    Disconnected { lambda2: f64, scale: f64 },
    #[error("empty input")]
    Empty,
    #[error("CSV error: {0}")]
    Csv(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, SimilarityError>;

/// Symmetric matrix of pairwise similarities with ordered labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    labels: Vec<String>,
    data: DMatrix<f64>,
    clamp_events: usize,
}

impl SimilarityMatrix {
    /// Validates shape and symmetry (to 1e-12) and clamps entries into `[0, 1]`.
    pub fn from_parts(labels: Vec<String>, mut data: DMatrix<f64>) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return Err(SimilarityError::Empty);
        }
        if data.shape() != (m, m) {
            return Err(SimilarityError::Shape { labels: m });
        }
        for i in 0..m {
            for j in 0..m {
                let x = data[(i, j)];
                if !x.is_finite() {
                    return Err(SimilarityError::NonFinite(i, j));
                }
                if (x - data[(j, i)]).abs() > 1e-12 {
                    return Err(SimilarityError::Asymmetric(i, j));
                }
            }
        }
        let mut clamp_events = 0;
        for i in 0..m {
            for j in 0..m {
                let x = data[(i, j)];
                if !(0.0..=1.0).contains(&x) {
                    data[(i, j)] = x.clamp(0.0, 1.0);
                    clamp_events += 1;
                }
            }
        }
        Ok(Self {
            labels,
            data,
            clamp_events,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    /// Number of entries that were clamped into `[0, 1]`.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// The block with the given rows and columns.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.data[(rows[i], cols[j])])
    }

    /// The principal submatrix on `indices`, keeping their labels.
    pub fn restrict(&self, indices: &[usize]) -> SimilarityMatrix {
        SimilarityMatrix {
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            data: self.block(indices, indices),
            clamp_events: 0,
        }
    }

    /// Writes a CSV with a header row of labels and a label in the first column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| SimilarityError::Csv(e.to_string());
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        wr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut row = vec![self.labels[i].clone()];
            row.extend((0..self.len()).map(|j| format!("{}", self.data[(i, j)])));
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| SimilarityError::Csv(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let csv_err = |e: csv::Error| SimilarityError::Csv(e.to_string());
        let header = rd.headers().map_err(csv_err)?.clone();
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let m = labels.len();
        let mut data = DMatrix::zeros(m, m);
        let mut rows = 0;
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if i >= m || rec.len() != m + 1 || rec[0] != labels[i] {
                return Err(SimilarityError::Csv(format!(
                    "row {} does not match header",
                    i + 1
                )));
            }
            for j in 0..m {
                data[(i, j)] = rec[j + 1]
                    .trim()
                    .parse()
                    .map_err(|_| SimilarityError::Csv(format!("bad number at ({i}, {j})")))?;
            }
            rows += 1;
        }
        if rows != m {
            return Err(SimilarityError::Csv(format!(
                "expected {m} rows, found {rows}"
            )));
        }
        Self::from_parts(labels, data)
    }
}

/// Determinant of a small row-major matrix by partial-pivot elimination.
fn det_small(a: &mut [f64], l: usize) -> f64 {
    let mut det = 1.0;
    for c in 0..l {
        let p = (c..l)
            .max_by(|&x, &y| a[x * l + c].abs().total_cmp(&a[y * l + c].abs()))
            .unwrap();
        let piv = a[p * l + c];
        if piv == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..l {
                a.swap(p * l + k, c * l + k);
            }
            det = -det;
        }
        det *= piv;
        for r in c + 1..l {
            let f = a[r * l + c] / piv;
            if f != 0.0 {
                for k in c..l {
                    a[r * l + k] -= f * a[c * l + k];
                }
            }
        }
    }
    det
}

/// Similarity from a joint count matrix `j[a * l + b] = #(x_i = a, x_j = b)`.
///
/// Columns of either conditional with no observations are replaced by the
/// uniform distribution before taking determinants.
pub(crate) fn similarity_from_counts(j: &[f64], l: usize) -> f64 {
    let row_sums: Vec<f64> = (0..l).map(|a| (0..l).map(|b| j[a * l + b]).sum()).collect();
    let col_sums: Vec<f64> = (0..l).map(|b| (0..l).map(|a| j[a * l + b]).sum()).collect();
    if row_sums.iter().chain(&col_sums).all(|&s| s > 0.0) {
        // Column scaling only rescales the determinant.
        let mut a = j.to_vec();
        let d = det_small(&mut a, l).abs();
        let log_norm: f64 = row_sums.iter().chain(&col_sums).map(|s| s.ln()).sum();
        return (d.ln() - 0.5 * log_norm).exp().min(1.0);
    }
    let uniform = 1.0 / l as f64;
    // P(x_i | x_j): columns indexed by the state of x_j.
    let mut p1 = vec![0.0; l * l];
    let mut p2 = vec![0.0; l * l];
    for b in 0..l {
        for a in 0..l {
            p1[a * l + b] = if col_sums[b] > 0.0 {
                j[a * l + b] / col_sums[b]
            } else {
                uniform
            };
        }
    }
    for a in 0..l {
        for b in 0..l {
            p2[b * l + a] = if row_sums[a] > 0.0 {
                j[a * l + b] / row_sums[a]
            } else {
                uniform
            };
        }
    }
    (det_small(&mut p1, l).abs() * det_small(&mut p2, l).abs()).sqrt()
}

/// Per-row, per-state bitsets over alignment columns.
struct StateBits {
    words: usize,
    l: usize,
    bits: Vec<u64>,
}

impl StateBits {
    fn new(x: &Alignment) -> Self {
        let n = x.columns();
        let l = x.alphabet();
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; x.rows() * l * words];
        for i in 0..x.rows() {
            for (c, &s) in x.row(i).iter().enumerate() {
                bits[(i * l + s as usize) * words + c / 64] |= 1u64 << (c % 64);
            }
        }
        Self { words, l, bits }
    }

    fn state(&self, i: usize, a: usize) -> &[u64] {
        let start = (i * self.l + a) * self.words;
        &self.bits[start..start + self.words]
    }

    fn count(&self, i: usize, a: usize) -> u32 {
        self.state(i, a).iter().map(|w| w.count_ones()).sum()
    }

    fn joint(&self, i: usize, a: usize, j: usize, b: usize) -> u32 {
        self.state(i, a)
            .iter()
            .zip(self.state(j, b))
            .map(|(x, y)| (x & y).count_ones())
            .sum()
    }
}

/// Estimates pairwise similarities from an alignment.
pub fn estimate_similarity(x: &Alignment) -> Result<SimilarityMatrix> {
    let m = x.rows();
    if m == 0 || x.columns() == 0 {
        return Err(SimilarityError::Empty);
    }
    let l = x.alphabet();
    let bits = StateBits::new(x);
    let counts: Vec<Vec<u32>> = (0..m)
        .map(|i| (0..l).map(|a| bits.count(i, a)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut joint = vec![0.0; l * l];
            let mut out = vec![0.0; m];
            for (j, o) in out.iter_mut().enumerate().skip(i + 1) {
                // The last row and column follow from the marginal counts.
                for a in 0..l - 1 {
                    let mut acc = 0u32;
                    for b in 0..l - 1 {
                        let c = bits.joint(i, a, j, b);
                        joint[a * l + b] = c as f64;
                        acc += c;
                    }
                    joint[a * l + l - 1] = (counts[i][a] - acc) as f64;
                }
                for b in 0..l {
                    let col: f64 = (0..l - 1).map(|a| joint[a * l + b]).sum();
                    joint[(l - 1) * l + b] = counts[j][b] as f64 - col;
                }
                *o = similarity_from_counts(&joint, l);
            }
            out
        })
        .collect();
    let mut data = DMatrix::identity(m, m);
    let mut clamp_events = 0;
    for i in 0..m {
        for j in i + 1..m {
            let mut s = rows[i][j];
            if !(0.0..=1.0).contains(&s) || s.is_nan() {
                clamp_events += 1;
                s = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
            }
            data[(i, j)] = s;
            data[(j, i)] = s;
        }
    }
    let mut sm = SimilarityMatrix::from_parts(x.labels().to_vec(), data)?;
    sm.clamp_events = clamp_events;
    Ok(sm)
}

/// Graph Laplacian `L = D - W` with `D_ii = sum_j W_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianMatrix(DMatrix<f64>);

impl LaplacianMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    /// Largest diagonal entry; bounds the spectral norm within a factor of two.
    pub fn scale(&self) -> f64 {
        (0..self.len()).map(|i| self.0[(i, i)]).fold(0.0, f64::max)
    }

    /// Wraps a matrix without checks; meant for Laplacians built elsewhere.
    pub fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }
}

/// Laplacian of a weighted graph given by a symmetric weight matrix.
/// Diagonal weights cancel between `D` and `W`.
pub fn laplacian_of(w: &DMatrix<f64>) -> LaplacianMatrix {
    let m = w.nrows();
    let mut l = -w.clone();
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        l[(i, i)] = off;
    }
    LaplacianMatrix(l)
}

pub fn laplacian(s: &SimilarityMatrix) -> LaplacianMatrix {
    laplacian_of(&s.data)
}

/// Size up to which the Fiedler vector comes from a dense eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 256;

#[derive(Clone, Debug)]
pub struct Fiedler {
    /// Unit eigenvector of the second-smallest eigenvalue, sign-normalised.
    pub vector: DVector<f64>,
    pub lambda2: f64,
}

/// Fiedler vector and algebraic connectivity of a Laplacian.
pub fn fiedler_vector(l: &LaplacianMatrix) -> Result<Fiedler> {
    let m = l.len();
    if m < 2 {
        return Err(SimilarityError::Empty);
    }
    let scale = l.scale();
    let (mut v, lambda2) = if m <= DENSE_EIGEN_LIMIT {
        let (vals, vecs) = linalg::sym_eigen_sorted(&l.0);
        (vecs.column(1).into_owned(), vals[1])
    } else {
        let shift = 2.0 * scale;
        let ones = DVector::from_element(m, 1.0 / (m as f64).sqrt());
        let mat = &l.0;
        let res = linalg::lanczos_largest(
            m,
            |x| x * shift - mat * x,
            1,
            &[ones],
            shift,
            1e-11,
            m.min(1500),
        )?;
        let v = res.vectors.into_iter().next().unwrap();
        let lambda = v.dot(&(mat * &v));
        (v, lambda)
    };
    if lambda2 <= 1e-10 * scale {
        return Err(SimilarityError::Disconnected { lambda2, scale });
    }
    linalg::canonical_sign(&mut v);
    Ok(Fiedler { vector: v, lambda2 })
}

/// Leading singular triplet `(u, sigma1, v)` with `M v = sigma1 u`; `u` follows the
/// sign convention of [`linalg::canonical_sign`].
pub fn leading_singular_triplet(m: &DMatrix<f64>) -> Result<(DVector<f64>, f64, DVector<f64>)> {
    if m.is_empty() {
        return Err(SimilarityError::Empty);
    }
    if m.iter().all(|&x| x == 0.0) {
        return Err(LinalgError::ZeroMatrix.into());
    }
    let top = linalg::top_singular(m, 1)?;
    let mut u = top.left[0].clone();
    let mut v = top.right[0].clone();
    if linalg::canonical_sign(&mut u) {
        v.neg_mut();
    }
    Ok((u, top.values[0], v))
}

/// Second-largest singular value (zero for matrices with a single row or column).
pub fn second_singular_value(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Err(SimilarityError::Empty);
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return Ok(0.0);
    }
    if m.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    Ok(linalg::top_singular(m, 2)?.values[1].max(0.0))
}
