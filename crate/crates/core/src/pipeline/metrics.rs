//! Evaluation metrics against a known ground truth.

use nalgebra::{DMatrix, DVector};

use crate::cluster::feature_m;
use crate::error::{Error, Result};
use crate::hankel::{build_default, window};
use crate::linalg::pinv;
use crate::model::{generate_markov, Band, DiscreteState, MarkovSequence, SlsModel, SwitchingSequence};

/// Variance accounted for, per output channel, in percent.
pub fn vaf(y_true: &[DVector<f64>], y_pred: &[DVector<f64>]) -> Result<Vec<f64>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!("{} true samples, {} predicted", y_true.len(), y_pred.len())));
    }
    let Some(first) = y_true.first() else {
        return Err(Error::Dimension("empty output sequence".into()));
    };
    let p = first.len();
    if y_true.iter().chain(y_pred).any(|y| y.len() != p) {
        return Err(Error::Dimension("output channel counts differ".into()));
    }
    (0..p)
        .map(|c| {
            let truth: Vec<f64> = y_true.iter().map(|y| y[c]).collect();
            let resid: Vec<f64> = y_true.iter().zip(y_pred).map(|(y, yh)| y[c] - yh[c]).collect();
            let vt = variance(&truth);
            if !(vt > 0.0) {
                return Err(Error::Infeasible(format!("output channel {} has zero variance", c + 1)));
            }
            Ok((1.0 - variance(&resid) / vt) * 100.0)
        })
        .collect()
}

fn variance(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64
}

/// Percentage of indices where `phi_hat` equals `phi`.
pub fn fit_phi(phi: &[usize], phi_hat: &[usize]) -> Result<f64> {
    if phi.len() != phi_hat.len() || phi.is_empty() {
        return Err(Error::Dimension(format!("spans of {} and {} labels", phi.len(), phi_hat.len())));
    }
    let wrong = phi.iter().zip(phi_hat).filter(|(a, b)| a != b).count();
    Ok((1.0 - wrong as f64 / phi.len() as f64) * 100.0)
}

/// Injective map from estimated labels to true labels minimizing the total
/// feature distance `Σ |M(A_true) − M(Â)|`, over all assignments.
/// `map[j−1]` is the true label of estimated label `j`, `None` when there are
/// more estimated than true labels and `j` is left over.
pub fn match_labels(truth: &[DiscreteState], est: &[DiscreteState]) -> Vec<Option<usize>> {
    let ft: Vec<f64> = truth.iter().map(|s| feature_m(&s.a)).collect();
    let fe: Vec<f64> = est.iter().map(|s| feature_m(&s.a)).collect();
    let size = ft.len().max(fe.len());
    let mut perm: Vec<usize> = (0..size).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        // perm[j] is the true slot of estimated slot j; slots past the end are dummies.
        let cost: f64 = (0..fe.len())
            .filter(|&j| perm[j] < ft.len())
            .map(|j| (fe[j] - ft[perm[j]]).abs())
            .sum();
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, perm.clone()));
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let perm = best.map(|b| b.1).unwrap_or_default();
    (0..fe.len())
        .map(|j| (perm[j] < ft.len()).then_some(perm[j] + 1))
        .collect()
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// `T` minimizing `Σ_j ‖Ǎ_j T − T A_j‖² + ‖T B_j − B̌_j‖² + ‖Č_j T − C_j‖²`,
/// so that `est_j.similar(T)` is expressed in the basis of `truth_j`.
pub fn gauge_alignment(truth: &[DiscreteState], est: &[DiscreteState]) -> Result<DMatrix<f64>> {
    let n = truth.first().ok_or_else(|| Error::Dimension("no submodels".into()))?.order();
    let nn = n * n;
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    let eye = DMatrix::<f64>::identity(n, n);
    for (t, e) in truth.iter().zip(est) {
        let (m, p) = (t.inputs(), t.outputs());
        // vec(Ǎ T) − vec(T A) = (I ⊗ Ǎ − Aᵀ ⊗ I) vec T
        let a_op = eye.kronecker(&e.a) - t.a.transpose().kronecker(&eye);
        rows.push((a_op, DVector::zeros(nn)));
        // vec(T B) = (Bᵀ ⊗ I) vec T
        rows.push((t.b.transpose().kronecker(&eye), DVector::from_column_slice(e.b.as_slice())));
        // vec(Č T) = (I ⊗ Č) vec T
        rows.push((eye.kronecker(&e.c), DVector::from_column_slice(t.c.as_slice())));
        debug_assert_eq!(e.b.len(), n * m);
        debug_assert_eq!(t.c.len(), p * n);
    }
    let total: usize = rows.iter().map(|r| r.0.nrows()).sum();
    let mut lhs = DMatrix::zeros(total, nn);
    let mut rhs = DVector::zeros(total);
    let mut at = 0;
    for (l, r) in rows {
        lhs.view_mut((at, 0), (l.nrows(), nn)).copy_from(&l);
        rhs.rows_mut(at, r.len()).copy_from(&r);
        at += l.nrows();
    }
    let x = pinv(&lhs) * rhs;
    Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
}

/// `Σ_j ‖M_j − M̂_j‖_F / ‖M_j‖_F` with `M = [[A, B], [C, D]]`.
///
/// `est` is first matched to `truth` by [`match_labels`] and brought into the
/// basis of `truth` by [`gauge_alignment`].
pub fn delta_p(truth: &[DiscreteState], est: &[DiscreteState]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::Dimension(format!("{} true submodels, {} estimated", truth.len(), est.len())));
    }
    let map = match_labels(truth, est);
    let mut ordered: Vec<Option<DiscreteState>> = vec![None; truth.len()];
    for (j, t) in map.iter().enumerate() {
        let t = t.expect("equal cardinality");
        ordered[t - 1] = Some(est[j].clone());
    }
    let ordered: Vec<DiscreteState> = ordered.into_iter().map(|s| s.expect("bijection")).collect();
    let g = gauge_alignment(truth, &ordered)?;
    let mut total = 0.0;
    for (t, e) in truth.iter().zip(&ordered) {
        let e = e.similar(&g).ok_or_else(|| Error::IllConditioned {
            context: "gauge alignment".into(),
            cond: f64::INFINITY,
        })?;
        total += (t.stacked() - e.stacked()).norm() / t.stacked().norm();
    }
    Ok(total)
}

/// `ε_H(k) = ‖H(k) − Ĥ(k)‖_F` for every `k` of the window, with `Ĥ` built from
/// the switched model `(states, phi_hat)`.
pub fn hankel_mismatch(
    markov_true: &MarkovSequence,
    states: &[DiscreteState],
    phi_hat: &[usize],
) -> Result<Vec<f64>> {
    let n = markov_true.order();
    let (lo, hi) = window(markov_true.n_steps(), n)?;
    if phi_hat.len() != markov_true.n_steps() {
        return Err(Error::Dimension(format!(
            "phi_hat covers {} steps, Markov parameters {}",
            phi_hat.len(),
            markov_true.n_steps()
        )));
    }
    let model = SlsModel::new(states.to_vec(), SwitchingSequence::new(phi_hat.to_vec())?)?;
    let rebuilt = generate_markov(&model, Band::pipeline(n));
    (lo..=hi)
        .map(|k| Ok((build_default(markov_true, k)?.data - build_default(&rebuilt, k)?.data).norm()))
        .collect()
}

/// Root mean square of a series.
pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}
