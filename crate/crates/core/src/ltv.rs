//! SVD-based time-varying realization from Markov parameters.
//!
//! At anchor `k` the rank-`n` factors of `H(k)` and `H(k+1)` give
//! `Ô(k)`, `Ô(k+1)` and `R̂(k)`; the quadruple is
//! `Â(k) = (J↓Ô(k+1))† J↑Ô(k)`, `Ĉ(k)` = first block row of `Ô(k)`,
//! `B̂(k)` = first block column of `R̂(k)`, `D̂(k) = h(k, k)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hankel::{build_default, window, HankelMatrix, ObsCtrlPair};
use crate::linalg::{pinv, svd, RANK_RTOL};
use crate::model::{DiscreteState, MarkovSequence};

/// Rank-`n` balanced factors of `H_{2n+1,2n}(k)`, rejecting rank deficiency.
pub fn factors(markov: &MarkovSequence, k: usize) -> Result<ObsCtrlPair> {
    let h = build_default(markov, k)?;
    factors_of(&h, markov.order())
}

pub(crate) fn factors_of(h: &HankelMatrix, n: usize) -> Result<ObsCtrlPair> {
    let d = svd(&h.data);
    let smax = d.sigma_max();
    let sn = if d.s.len() >= n { d.s[n - 1] } else { 0.0 };
    let tol = RANK_RTOL * smax;
    if !(sn > tol) {
        return Err(Error::RankDeficient {
            anchor: h.k,
            sigma_n: sn,
            tol,
        });
    }
    Ok(ObsCtrlPair::from_hankel(h, n))
}

fn check_anchor(markov: &MarkovSequence, k: usize) -> Result<()> {
    let (lo, hi) = window(markov.n_steps(), markov.order())?;
    if k < lo || k > hi {
        return Err(Error::IndexOutOfRange { index: k, lo, hi });
    }
    Ok(())
}

/// `P̂(k)` for `k ∈ [k', k'']`.
pub fn realize_at(markov: &MarkovSequence, k: usize) -> Result<DiscreteState> {
    check_anchor(markov, k)?;
    let (n, p, m) = (markov.order(), markov.outputs(), markov.inputs());
    let fk = factors(markov, k)?;
    let fk1 = factors(markov, k + 1)?;
    let rows = fk.o.nrows();
    let up = fk.o.rows(p, rows - p).into_owned();
    let down = fk1.o.rows(0, rows - p).into_owned();
    let a = pinv(&down) * up;
    let c = fk.o.rows(0, p).into_owned();
    let b = fk1.r.columns(0, m).into_owned();
    let d = markov.block(k, k)?;
    debug_assert_eq!(a.shape(), (n, n));
    Ok(DiscreteState { a, b, c, d })
}

/// `Â(k)` from the controllability side: `R̂(k) J← (R̂(k−1) J→)†`, where
/// `J←` drops the first block column and `J→` the last. Used only to
/// cross-check [`realize_at`].
pub fn a_from_controllability(markov: &MarkovSequence, k: usize) -> Result<DMatrix<f64>> {
    check_anchor(markov, k)?;
    let m = markov.inputs();
    let rk = factors(markov, k + 1)?.r;
    let rkm1 = factors(markov, k)?.r;
    let cols = rk.ncols();
    let shifted = rk.columns(m, cols - m).into_owned();
    let prev = rkm1.columns(0, cols - m).into_owned();
    Ok(shifted * pinv(&prev))
}

/// Quadruples `P̂(k)` at a set of anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtvRealization {
    pub window: (usize, usize),
    pub order: usize,
    /// Sorted, distinct anchors.
    pub anchors: Vec<usize>,
    /// `quads[i]` is `P̂(anchors[i])`.
    pub quads: Vec<DiscreteState>,
}

impl LtvRealization {
    pub fn get(&self, k: usize) -> Option<&DiscreteState> {
        self.anchors.binary_search(&k).ok().map(|i| &self.quads[i])
    }

    fn need(&self, k: usize) -> Result<&DiscreteState> {
        self.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            lo: self.window.0,
            hi: self.window.1,
        })
    }

    /// Adds anchors not yet realized.
    pub fn extend(&mut self, markov: &MarkovSequence, anchors: &[usize], exec: Execution) -> Result<()> {
        let missing: Vec<usize> = anchors.iter().copied().filter(|k| self.get(*k).is_none()).collect();
        let extra = realize_range(markov, &missing, exec)?;
        let mut all: Vec<(usize, DiscreteState)> = self
            .anchors
            .drain(..)
            .zip(self.quads.drain(..))
            .chain(extra.anchors.into_iter().zip(extra.quads))
            .collect();
        all.sort_by_key(|(k, _)| *k);
        for (k, q) in all {
            self.anchors.push(k);
            self.quads.push(q);
        }
        Ok(())
    }
}

/// Realizes every anchor in `anchors` independently.
pub fn realize_range(markov: &MarkovSequence, anchors: &[usize], exec: Execution) -> Result<LtvRealization> {
    let win = window(markov.n_steps(), markov.order())?;
    let mut ks: Vec<usize> = anchors.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let quads = exec
        .map(&ks, |&k| realize_at(markov, k))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(LtvRealization {
        window: win,
        order: markov.order(),
        anchors: ks,
        quads,
    })
}

/// Every anchor of `[k', k'']`.
pub fn realize_window(markov: &MarkovSequence, exec: Execution) -> Result<LtvRealization> {
    let (lo, hi) = window(markov.n_steps(), markov.order())?;
    let anchors: Vec<usize> = (lo..=hi).collect();
    realize_range(markov, &anchors, exec)
}

/// `Ĉ(k)Â(k−1)···Â(ℓ+1)B̂(ℓ)`, `Ĉ(k)B̂(k−1)` or `D̂(k)`.
pub fn reconstruct_markov(real: &LtvRealization, k: usize, l: usize) -> Result<DMatrix<f64>> {
    if l > k {
        return Err(Error::IndexOutOfRange { index: l, lo: 1, hi: k });
    }
    if k == l {
        return Ok(real.need(k)?.d.clone());
    }
    let mut g = real.need(l)?.b.clone();
    for j in (l + 1)..k {
        g = &real.need(j)?.a * g;
    }
    Ok(&real.need(k)?.c * g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigen_distance, eigenvalues};
    use crate::model::{generate_markov, paper_example_states, Band, SlsModel, SwitchingSequence};

    fn paper(runs: &[(usize, usize)]) -> (SlsModel, MarkovSequence) {
        let m = SlsModel::new(paper_example_states(), SwitchingSequence::from_segments(runs).unwrap()).unwrap();
        let seq = generate_markov(&m, Band::pipeline(3));
        (m, seq)
    }

    #[test]
    fn scalar_lti_recovers_pole() {
        let s = DiscreteState::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
        )
        .unwrap();
        let m = SlsModel::new(vec![s], SwitchingSequence::constant(1, 30).unwrap()).unwrap();
        let seq = generate_markov(&m, Band::pipeline(1));
        for k in 3..=26 {
            let q = realize_at(&seq, k).unwrap();
            assert!((q.a[(0, 0)] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_spectra_match_active_state() {
        let (m, seq) = paper(&[(1, 60), (2, 60), (3, 60)]);
        let states = paper_example_states();
        for k in [20, 30, 80, 140] {
            let j = m.switching.label(k);
            let q = realize_at(&seq, k).unwrap();
            let d = eigen_distance(&eigenvalues(&q.a), &eigenvalues(&states[j - 1].a));
            assert!(d < 1e-8, "k = {k}: {d}");
        }
    }

    #[test]
    fn reconstruction_matches_across_switches() {
        let (m, seq) = paper(&[(1, 45), (2, 15), (3, 20), (1, 50)]);
        let real = realize_window(&seq, Execution::Parallel).unwrap();
        let (lo, hi) = real.window;
        let full = generate_markov(&m, Band::Full);
        let scale = seq.stored_pairs().map(|(k, l)| seq.block(k, l).unwrap().norm()).fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for k in lo..=hi {
            for l in k.saturating_sub(12).max(lo)..=k {
                let e = (reconstruct_markov(&real, k, l).unwrap() - full.block(k, l).unwrap()).norm();
                worst = worst.max(e);
            }
        }
        assert!(worst <= 1e-7 * scale, "{worst}");
        assert_eq!(real.get(lo).unwrap().d, seq.block(lo, lo).unwrap());
    }

    #[test]
    fn controllability_side_agrees() {
        let (_, seq) = paper(&[(1, 45), (2, 15), (3, 40)]);
        for k in [10, 44, 50, 58, 70] {
            let a = realize_at(&seq, k).unwrap().a;
            let b = a_from_controllability(&seq, k).unwrap();
            assert!((a - b).norm() < 1e-8, "k = {k}");
        }
    }

    #[test]
    fn range_is_pure_and_window_checked() {
        let (_, seq) = paper(&[(1, 50), (2, 50)]);
        let sparse = realize_range(&seq, &[7, 14, 21, 28], Execution::Sequential).unwrap();
        for k in [7, 14, 21, 28] {
            assert_eq!(sparse.get(k).unwrap(), &realize_at(&seq, k).unwrap());
        }
        assert!(matches!(realize_at(&seq, 6), Err(Error::IndexOutOfRange { lo: 7, hi: 88, .. })));
        let single = realize_range(&seq, &[7], Execution::Parallel).unwrap();
        assert_eq!(single.anchors, vec![7]);
        assert!(reconstruct_markov(&single, 9, 7).is_err());
    }

    #[test]
    fn rank_deficiency_reported() {
        let mut states = paper_example_states();
        states[0].b = DMatrix::zeros(3, 2);
        let m = SlsModel::new(states, SwitchingSequence::constant(1, 60).unwrap()).unwrap();
        let seq = generate_markov(&m, Band::pipeline(3));
        assert!(matches!(realize_at(&seq, 20), Err(Error::RankDeficient { .. })));
    }
}
