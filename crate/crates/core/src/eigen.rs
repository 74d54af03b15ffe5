//! Dominant eigenpairs of the Gram matrix `C = XᵀX` by power iteration with
//! deflation.
//!
//! Both pairing devices must run the same arithmetic, so the iteration starts
//! from a fixed vector (all ones, normalized) rather than a random one.
//! Extracted vectors are sign-normalized so that their largest-magnitude
//! component is positive; two devices holding `v` and `-v` then agree.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::ObservationMatrix;

/// Default convergence threshold on the change between successive iterates.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Dense symmetric `m × m` matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix<T = f64> {
    m: usize,
    entries: Vec<T>,
}

impl<T: Scalar> CovarianceMatrix<T> {
    /// Build from row-major entries; rejects non-square or asymmetric input.
    pub fn from_entries(m: usize, entries: Vec<T>) -> Result<Self> {
        if m == 0 || entries.len() != m * m {
            return Err(Error::Dimension {
                expected: m * m,
                actual: entries.len(),
            });
        }
        let scale = entries.iter().fold(T::zero(), |a, v| a.max(v.abs()));
        let tol = T::of(1e-9) * scale.max(T::min_positive_value());
        for i in 0..m {
            for j in (i + 1)..m {
                if (entries[i * m + j] - entries[j * m + i]).abs() > tol {
                    return Err(Error::Format(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { m, entries })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let m = rows.len();
        let mut entries = Vec::with_capacity(m * m);
        for row in rows {
            if row.len() != m {
                return Err(Error::Dimension {
                    expected: m,
                    actual: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::from_entries(m, entries)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.m + j]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn trace(&self) -> T {
        (0..self.m).fold(T::zero(), |a, i| a + self.get(i, i))
    }

    pub fn frobenius_norm(&self) -> T {
        self.entries.iter().fold(T::zero(), |a, &v| a + v * v).sqrt()
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        self.entries
            .chunks_exact(self.m)
            .map(|row| dot(row, v))
            .collect()
    }

    /// `vᵀ C v`.
    pub fn rayleigh(&self, v: &[T]) -> T {
        dot(v, &self.mul_vec(v))
    }
}

/// Ordered dominant eigenpairs.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis<T = f64> {
    pairs: Vec<EigenPair<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair<T = f64> {
    pub value: T,
    pub vector: Vec<T>,
    /// False when power iteration hit its iteration cap before settling.
    pub converged: bool,
}

impl<T: Scalar> EigenBasis<T> {
    pub fn pairs(&self) -> &[EigenPair<T>] {
        &self.pairs
    }

    pub fn k(&self) -> usize {
        self.pairs.len()
    }

    pub fn dim(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.vector.len())
    }

    pub fn values(&self) -> Vec<T> {
        self.pairs.iter().map(|p| p.value).collect()
    }

    /// Components of every eigenvector, concatenated in dominance order.
    pub fn concatenated(&self) -> Vec<T> {
        self.pairs.iter().flat_map(|p| p.vector.iter().copied()).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.pairs.iter().all(|p| p.converged)
    }

    /// Basis from explicit pairs; vectors are sign-corrected and the pairs
    /// sorted by descending eigenvalue.
    pub fn from_pairs(pairs: Vec<(T, Vec<T>)>) -> Result<Self> {
        let dim = pairs.first().map_or(0, |p| p.1.len());
        if dim == 0 {
            return Err(Error::EmptyInput("eigenbasis needs at least one pair".into()));
        }
        let mut out = Vec::with_capacity(pairs.len());
        for (value, mut vector) in pairs {
            if vector.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: vector.len(),
                });
            }
            normalize(&mut vector);
            correct_sign(&mut vector);
            out.push(EigenPair {
                value,
                vector,
                converged: true,
            });
        }
        sort_descending(&mut out);
        Ok(Self { pairs: out })
    }
}

/// Result of one power-iteration run.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerResult<T = f64> {
    pub value: T,
    pub vector: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let n = norm(v);
    if n > T::zero() {
        for x in v.iter_mut() {
            *x = *x / n;
        }
    }
}

/// Flip `v` so its largest-magnitude component is positive (first index wins
/// ties).
pub fn correct_sign<T: Scalar>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < T::zero()) {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

fn sort_descending<T: Scalar>(pairs: &mut [EigenPair<T>]) {
    pairs.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap_or(std::cmp::Ordering::Equal));
}

/// Raw Gram matrix `XᵀX` (no mean-centering).
pub fn covariance<T: Scalar>(x: &ObservationMatrix<T>) -> CovarianceMatrix<T> {
    let m = x.n_bins();
    let mut entries = vec![T::zero(); m * m];
    for row in x.rows() {
        for i in 0..m {
            let ri = row[i];
            if ri == T::zero() {
                continue;
            }
            for j in i..m {
                entries[i * m + j] = entries[i * m + j] + ri * row[j];
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            entries[i * m + j] = entries[j * m + i];
        }
    }
    CovarianceMatrix { m, entries }
}

/// Dominant eigenpair by `v <- Cv / |Cv|` from the normalized all-ones
/// vector, stopping once successive iterates differ by less than `tol`.
/// Running out of iterations is reported through `converged`, not an error.
pub fn power_method<T: Scalar>(c: &CovarianceMatrix<T>, tol: T, max_iter: usize) -> Result<PowerResult<T>> {
    let m = c.dim();
    let scale = c.trace().abs().max(c.frobenius_norm());
    if scale == T::zero() || !scale.is_finite() {
        return Err(Error::Degenerate("power method on a zero matrix".into()));
    }
    let mut v = vec![T::one() / T::of_usize(m).sqrt(); m];
    let mut cv = c.mul_vec(&v);
    if norm(&cv) < T::of(1e-14) * scale {
        // start vector orthogonal to the dominant direction
        v[0] = v[0] + T::of(1e-6);
        normalize(&mut v);
        cv = c.mul_vec(&v);
        if norm(&cv) < T::of(1e-14) * scale {
            return Err(Error::Degenerate("start vector lies in the null space".into()));
        }
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let n = norm(&cv);
        if n == T::zero() {
            return Err(Error::Degenerate("iterate collapsed to zero".into()));
        }
        let next: Vec<T> = cv.iter().map(|&x| x / n).collect();
        let change = next
            .iter()
            .zip(&v)
            .fold(T::zero(), |a, (&p, &q)| a + (p - q) * (p - q))
            .sqrt();
        v = next;
        if change < tol {
            converged = true;
            break;
        }
        cv = c.mul_vec(&v);
    }
    if !converged {
        log::warn!("power method stopped after {max_iter} iterations without reaching tol");
    }
    Ok(PowerResult {
        value: c.rayleigh(&v),
        vector: v,
        iterations,
        converged,
    })
}

/// `C - λ v vᵀ`.
pub fn deflate<T: Scalar>(c: &CovarianceMatrix<T>, value: T, v: &[T]) -> CovarianceMatrix<T> {
    let m = c.dim();
    let mut entries = c.entries.clone();
    for i in 0..m {
        for j in 0..m {
            entries[i * m + j] = entries[i * m + j] - value * v[i] * v[j];
        }
    }
    // keep exact symmetry
    for i in 0..m {
        for j in 0..i {
            let avg = (entries[i * m + j] + entries[j * m + i]) / T::of(2.0);
            entries[i * m + j] = avg;
            entries[j * m + i] = avg;
        }
    }
    CovarianceMatrix { m, entries }
}

/// Top `k` eigenpairs by repeated power iteration and deflation, each vector
/// sign-corrected, sorted by descending eigenvalue.
pub fn extract_basis<T: Scalar>(
    c: &CovarianceMatrix<T>,
    k: usize,
    tol: T,
    max_iter: usize,
) -> Result<EigenBasis<T>> {
    let m = c.dim();
    if k == 0 || k > m {
        return Err(Error::Config(format!("cannot extract {k} eigenvectors from a {m}x{m} matrix")));
    }
    let scale = c.trace().abs().max(c.frobenius_norm());
    if scale == T::zero() {
        return Err(Error::Degenerate("covariance matrix is zero".into()));
    }
    let mut work = c.clone();
    let mut pairs: Vec<EigenPair<T>> = Vec::with_capacity(k);
    for _ in 0..k {
        let pair = if work.frobenius_norm() <= T::of(1e-12) * scale {
            // remaining spectrum is numerically zero
            EigenPair {
                value: T::zero(),
                vector: orthogonal_complement_vector(&pairs, m),
                converged: true,
            }
        } else {
            let r = power_method(&work, tol, max_iter)?;
            EigenPair {
                value: r.value,
                vector: r.vector,
                converged: r.converged,
            }
        };
        work = deflate(&work, pair.value, &pair.vector);
        pairs.push(pair);
    }
    for p in &mut pairs {
        correct_sign(&mut p.vector);
    }
    sort_descending(&mut pairs);
    Ok(EigenBasis { pairs })
}

/// Extract with the default tolerance and iteration cap.
pub fn extract_basis_default<T: Scalar>(c: &CovarianceMatrix<T>, k: usize) -> Result<EigenBasis<T>> {
    extract_basis(c, k, T::of(DEFAULT_TOL), DEFAULT_MAX_ITER)
}

fn orthogonal_complement_vector<T: Scalar>(found: &[EigenPair<T>], m: usize) -> Vec<T> {
    for axis in 0..m {
        let mut v = vec![T::zero(); m];
        v[axis] = T::one();
        for p in found {
            let proj = dot(&v, &p.vector);
            for (x, &u) in v.iter_mut().zip(&p.vector) {
                *x = *x - proj * u;
            }
        }
        if norm(&v) > T::of(1e-6) {
            normalize(&mut v);
            return v;
        }
    }
    vec![T::zero(); m]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(values: &[f64]) -> CovarianceMatrix<f64> {
        let m = values.len();
        let mut e = vec![0.0; m * m];
        for (i, v) in values.iter().enumerate() {
            e[i * m + i] = *v;
        }
        CovarianceMatrix::from_entries(m, e).unwrap()
    }

    #[test]
    fn covariance_examples() {
        let x = ObservationMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(covariance(&x).entries(), &[1.0, 0.0, 0.0, 1.0]);
        let x = ObservationMatrix::from_rows(vec![vec![2.0, 3.0]]).unwrap();
        assert_eq!(covariance(&x).entries(), &[4.0, 6.0, 6.0, 9.0]);
    }

    #[test]
    fn power_method_on_diagonal() {
        let r = power_method(&diag(&[3.0, 1.0]), 1e-10, 1000).unwrap();
        assert!(r.converged);
        assert!((r.value - 3.0).abs() < 1e-9);
        assert!((r.vector[0].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn power_method_on_rank_one() {
        let v = [0.6, 0.0, -0.8];
        let e: Vec<f64> = (0..9).map(|i| v[i / 3] * v[i % 3]).collect();
        let c = CovarianceMatrix::from_entries(3, e).unwrap();
        let r = power_method(&c, 1e-12, 1000).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9);
        let d: f64 = r.vector.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((d.abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn power_method_rejects_zero_matrix() {
        assert!(matches!(power_method(&diag(&[0.0, 0.0]), 1e-10, 10), Err(Error::Degenerate(_))));
    }

    #[test]
    fn start_vector_orthogonal_to_dominant_is_perturbed() {
        // dominant eigenvector (1,-1)/sqrt2 is orthogonal to the all-ones start
        let c = CovarianceMatrix::from_entries(2, vec![1.0f64, -1.0, -1.0, 1.0]).unwrap();
        let r = power_method(&c, 1e-12, 1000).unwrap();
        assert!((r.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn iteration_cap_is_a_warning_not_an_error() {
        let r = power_method(&diag(&[1.0, 0.999_999]), 1e-14, 5).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 5);
    }

    #[test]
    fn deflation_examples() {
        let d = deflate(&diag(&[3.0, 1.0]), 3.0, &[1.0, 0.0]);
        assert_eq!(d.entries(), &[0.0, 0.0, 0.0, 1.0]);

        let u = [0.6, 0.8];
        let e: Vec<f64> = (0..4).map(|i| 2.0 * u[i / 2] * u[i % 2]).collect();
        let c = CovarianceMatrix::from_entries(2, e).unwrap();
        assert!(deflate(&c, 2.0, &u).frobenius_norm() < 1e-9);
    }

    #[test]
    fn basis_of_diagonal() {
        let b = extract_basis(&diag(&[4.0, 2.0, 1.0]), 2, 1e-10, 1000).unwrap();
        assert_eq!(b.k(), 2);
        assert!((b.pairs()[0].value - 4.0).abs() < 1e-9);
        assert!((b.pairs()[1].value - 2.0).abs() < 1e-9);
        assert!((b.pairs()[0].vector[0] - 1.0).abs() < 1e-9);
        assert!((b.pairs()[1].vector[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sign_rule_makes_largest_entry_positive() {
        let mut v = vec![-0.9, 0.1, 0.3];
        correct_sign(&mut v);
        assert_eq!(v, vec![0.9, -0.1, -0.3]);
        let b = EigenBasis::from_pairs(vec![(1.0, vec![-0.9, 0.1, 0.3])]).unwrap();
        assert!(b.pairs()[0].vector[0] > 0.0);
    }

    #[test]
    fn k_larger_than_dim_is_config_error() {
        assert!(matches!(extract_basis(&diag(&[1.0, 2.0]), 3, 1e-10, 100), Err(Error::Config(_))));
    }

    #[test]
    fn rank_deficient_full_extraction_fills_zero_pairs() {
        let b = extract_basis(&diag(&[3.0, 0.0, 0.0]), 3, 1e-10, 1000).unwrap();
        assert_eq!(b.values(), vec![3.0, 0.0, 0.0]);
        for (i, p) in b.pairs().iter().enumerate() {
            for q in &b.pairs()[i + 1..] {
                let d: f64 = p.vector.iter().zip(&q.vector).map(|(a, b)| a * b).sum();
                assert!(d.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        assert!(CovarianceMatrix::from_entries(2, vec![1.0, 2.0, 0.0, 1.0]).is_err());
    }
}
