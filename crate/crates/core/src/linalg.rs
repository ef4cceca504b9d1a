//! Dense linear-algebra helpers shared by the realization stages.

use nalgebra::{Complex, DMatrix, DVector};

/// Relative singular-value cutoff for pseudo-inverses.
pub const PINV_RTOL: f64 = 1e-10;
/// Relative singular-value cutoff for numerical rank decisions.
pub const RANK_RTOL: f64 = 1e-8;

/// Thin SVD, singular values sorted descending, each left singular vector
/// normalized so that its first entry above `1e-12` in magnitude is positive.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub vt: DMatrix<f64>,
}

/// nalgebra's bidiagonal SVD can stop early and return inaccurate factors at
/// its default tolerance. Tighter tolerances and the transposed problem are
/// tried in turn and the most accurate reconstruction is kept.
fn raw_svd(m: &DMatrix<f64>) -> Factors {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, Factors)> = None;
    for (eps, transpose) in [(1e-18, false), (1e-18, true), (f64::EPSILON, false), (f64::EPSILON, true)] {
        let src = if transpose { m.transpose() } else { m.clone() };
        let Some(d) = src.try_svd(true, true, eps, SVD_MAX_ITER) else {
            continue;
        };
        let (u, vt) = (d.u.expect("u requested"), d.v_t.expect("v_t requested"));
        let (u, vt) = if transpose { (vt.transpose(), u.transpose()) } else { (u, vt) };
        let err = (&u * DMatrix::from_diagonal(&d.singular_values) * &vt - m).norm() / scale;
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, (u, vt, d.singular_values)));
        }
        if err <= 1e-13 {
            break;
        }
    }
    best.map(|(_, f)| f).unwrap_or_else(|| {
        let d = m.clone().svd(true, true);
        (d.u.expect("u requested"), d.v_t.expect("v_t requested"), d.singular_values)
    })
}

/// `(U, Vᵀ, s)` as returned by nalgebra, unsorted.
type Factors = (DMatrix<f64>, DMatrix<f64>, DVector<f64>);

const SVD_MAX_ITER: usize = 10_000;

pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (u0, vt0, s0) = raw_svd(m);
    let r = s0.len();

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| s0[b].total_cmp(&s0[a]).then(a.cmp(&b)));

    let mut u = DMatrix::zeros(u0.nrows(), r);
    let mut vt = DMatrix::zeros(r, vt0.ncols());
    let mut s = DVector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = s0[src];
        let flip = u0
            .column(src)
            .iter()
            .find(|x| x.abs() > 1e-12)
            .is_some_and(|x| *x < 0.0);
        let sign = if flip { -1.0 } else { 1.0 };
        u.set_column(dst, &(u0.column(src) * sign));
        vt.set_row(dst, &(vt0.row(src) * sign));
    }
    Svd { u, s, vt }
}

impl Svd {
    /// Number of singular values above `rtol * sigma_max`.
    pub fn rank(&self, rtol: f64) -> usize {
        let smax = self.s.iter().copied().fold(0.0, f64::max);
        if smax == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&x| x > rtol * smax).count()
    }

    pub fn sigma_max(&self) -> f64 {
        self.s.iter().copied().fold(0.0, f64::max)
    }
}

/// Moore-Penrose pseudo-inverse with relative cutoff [`PINV_RTOL`].
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    pinv_rtol(m, PINV_RTOL)
}

pub fn pinv_rtol(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let d = svd(m);
    let cut = rtol * d.sigma_max();
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for i in 0..d.s.len() {
        if d.s[i] > cut && d.s[i] > 0.0 {
            out += d.vt.row(i).transpose() * d.u.column(i).transpose() / d.s[i];
        }
    }
    out
}

/// 2-norm condition number; infinite for singular input.
pub fn cond(m: &DMatrix<f64>) -> f64 {
    let s = svd(m).s;
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenvalues of a square matrix, sorted by (real, imaginary) part.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = a.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    ev
}

/// Sum of eigenvalue magnitudes; invariant under similarity.
pub fn spectral_abs_sum(a: &DMatrix<f64>) -> f64 {
    a.clone().complex_eigenvalues().iter().map(|z| z.norm()).sum()
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest distance between matched eigenvalue lists (greedy nearest matching).
pub fn eigen_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("equal lengths");
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

pub fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// `[c; cA; ...; cA^(q-1)]`.
pub fn observability(c: &DMatrix<f64>, a: &DMatrix<f64>, q: usize) -> DMatrix<f64> {
    let mut rows = Vec::with_capacity(q);
    let mut cur = c.clone();
    for _ in 0..q {
        let next = &cur * a;
        rows.push(cur);
        cur = next;
    }
    vstack(&rows)
}

/// `[b, Ab, ..., A^(r-1) b]`.
pub fn controllability(a: &DMatrix<f64>, b: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let mut cols = Vec::with_capacity(r);
    let mut cur = b.clone();
    for _ in 0..r {
        let next = a * &cur;
        cols.push(cur);
        cur = next;
    }
    hstack(&cols)
}

pub fn mat_pow(a: &DMatrix<f64>, e: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..e {
        out = &out * a;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.2, 0.0, 1.5, -0.7, 3.0, 0.1, 0.9])
    }

    #[test]
    fn svd_sorted_and_reconstructs() {
        let m = sample();
        let d = svd(&m);
        for i in 1..d.s.len() {
            assert!(d.s[i - 1] >= d.s[i]);
        }
        let back = &d.u * DMatrix::from_diagonal(&d.s) * &d.vt;
        assert!((back - m).norm() < 1e-12);
    }

    #[test]
    fn wide_hankel_reconstructs() {
        use crate::hankel::build_default;
        use crate::model::{generate_markov, random_sls, random_switching, Band, SegmentPolicy, SlsConstraints, SlsModel};
        use crate::rng::{stream, Purpose};
        // A 7x12 Hankel matrix on which decomposing the wide side directly
        // gave a reconstruction error of about 0.3 at nalgebra's default tolerance.
        let c = SlsConstraints {
            separation: 0.1,
            hankel_ratio: 0.01,
            max_draws: 100_000,
            ..Default::default()
        };
        let states = random_sls(3, 2, 1, 3, &c, &mut stream(5, 0, Purpose::Model)).unwrap();
        let policy = SegmentPolicy::Uniform { min: 8, max: 30 };
        let sw = random_switching(200, 3, policy, &mut stream(5, 0, Purpose::Switching)).unwrap();
        let seq = generate_markov(&SlsModel::new(states, sw).unwrap(), Band::pipeline(3));
        let h = build_default(&seq, 37).unwrap().data;
        let d = svd(&h);
        let back = &d.u * DMatrix::from_diagonal(&d.s) * &d.vt;
        assert!((back - &h).norm() < 1e-12 * h.norm());
        assert_eq!(d.rank(RANK_RTOL), 3);
    }

    #[test]
    fn svd_sign_convention() {
        let d = svd(&(-sample()));
        for c in d.u.column_iter() {
            let first = c.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn pinv_moore_penrose_identities() {
        let m = sample();
        let p = pinv(&m);
        assert!((&m * &p * &m - &m).norm() < 1e-12);
        assert!((&p * &m * &p - &p).norm() < 1e-12);
        assert!((&p * &m - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn pinv_drops_tiny_directions() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-14]));
        let p = pinv(&m);
        assert_eq!(p[(1, 1)], 0.0);
        assert_eq!(p[(0, 0)], 1.0);
    }

    #[test]
    fn rank_counts_relative() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0, 1e-9]));
        assert_eq!(svd(&m).rank(RANK_RTOL), 2);
    }

    #[test]
    fn spectral_sum_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_abs_sum(&a) - 1.0).abs() < 1e-14);
        assert!((spectral_radius(&a) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn krylov_blocks() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.25]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let r = controllability(&a, &b, 3);
        assert_eq!(r.ncols(), 3);
        assert!((r.column(2) - (&a * &a * &b).column(0)).norm() < 1e-15);
        let c = b.transpose();
        let o = observability(&c, &a, 3);
        assert!((o.row(2) - (&c * mat_pow(&a, 2)).row(0)).norm() < 1e-15);
    }
}
