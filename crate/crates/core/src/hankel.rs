//! Time-indexed block Hankel matrices built from Markov parameters.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::model::{state_transition, MarkovSequence, SlsModel};
use crate::rng::SlsRng;

/// The anchor window `[k', k''] = [2n+1, N−4n]` for `H_{2n+1,2n}`.
///
/// Rejects `N < 6n+2`, for which no anchor admits both `H(k)` and `H(k+1)`.
pub fn window(n_steps: usize, n: usize) -> Result<(usize, usize)> {
    let required = 6 * n + 2;
    if n == 0 || n_steps < required {
        return Err(Error::TooShort {
            n_steps,
            order: n,
            required,
        });
    }
    Ok((2 * n + 1, n_steps - 4 * n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    pub k: usize,
    pub q: usize,
    pub r: usize,
    /// Block `(s, t)` (1-based) is `h(k+s−1, k−t)`.
    pub data: DMatrix<f64>,
}

fn check_anchor(n_steps: usize, q: usize, r: usize, k: usize) -> Result<()> {
    if k <= r || k + q - 1 > n_steps {
        return Err(Error::IndexOutOfRange {
            index: k,
            lo: r + 1,
            hi: (n_steps + 1).saturating_sub(q),
        });
    }
    Ok(())
}

/// `H_{q,r}(k)`; requires `k > r` and `k+q−1 ≤ N`.
pub fn build(markov: &MarkovSequence, q: usize, r: usize, k: usize) -> Result<HankelMatrix> {
    check_anchor(markov.n_steps(), q, r, k)?;
    let (p, m) = (markov.outputs(), markov.inputs());
    let mut data = DMatrix::zeros(q * p, r * m);
    for s in 1..=q {
        for t in 1..=r {
            let blk = markov.block_slice(k + s - 1, k - t)?;
            for i in 0..p {
                for j in 0..m {
                    data[((s - 1) * p + i, (t - 1) * m + j)] = blk[i * m + j];
                }
            }
        }
    }
    Ok(HankelMatrix { k, q, r, data })
}

/// `H_{2n+1,2n}(k)` for the sequence's order `n`.
pub fn build_default(markov: &MarkovSequence, k: usize) -> Result<HankelMatrix> {
    let n = markov.order();
    build(markov, 2 * n + 1, 2 * n, k)
}

/// `H(k+1)` from `H(k)`: the shared `(q−1)×(r−1)` block grid is shifted and
/// only the `q+r−1` new blocks (first block column and last block row) are read.
pub fn advance(h: &HankelMatrix, markov: &MarkovSequence) -> Result<HankelMatrix> {
    let (q, r, k) = (h.q, h.r, h.k + 1);
    check_anchor(markov.n_steps(), q, r, k)?;
    let (p, m) = (markov.outputs(), markov.inputs());
    let mut data = DMatrix::zeros(q * p, r * m);
    if q > 1 && r > 1 {
        data.view_mut((0, m), ((q - 1) * p, (r - 1) * m))
            .copy_from(&h.data.view((p, 0), ((q - 1) * p, (r - 1) * m)));
    }
    let mut put = |s: usize, t: usize, blk: &[f64]| {
        for i in 0..p {
            for j in 0..m {
                data[((s - 1) * p + i, (t - 1) * m + j)] = blk[i * m + j];
            }
        }
    };
    for s in 1..=q {
        put(s, 1, markov.block_slice(k + s - 1, k - 1)?);
    }
    for t in 2..=r {
        put(q, t, markov.block_slice(k + q - 1, k - t)?);
    }
    Ok(HankelMatrix { k, q, r, data })
}

/// Extended observability `O_q(k)` and controllability `R_r(k−1)` factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsCtrlPair {
    pub o: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl ObsCtrlPair {
    /// True factors from a model: `O_q(k)` stacks `C(k+s−1)Φ(k+s−1,k)`,
    /// `R_r(k−1)` concatenates `Φ(k,k−t+1)B(k−t)`.
    pub fn from_model(model: &SlsModel, q: usize, r: usize, k: usize) -> Result<Self> {
        check_anchor(model.n_steps(), q, r, k)?;
        let mut rows = Vec::with_capacity(q);
        for s in 1..=q {
            rows.push(&model.at(k + s - 1).c * state_transition(model, k + s - 1, k)?);
        }
        let mut cols = Vec::with_capacity(r);
        for t in 1..=r {
            cols.push(state_transition(model, k, k - t + 1)? * &model.at(k - t).b);
        }
        Ok(ObsCtrlPair {
            o: crate::linalg::vstack(&rows),
            r: crate::linalg::hstack(&cols),
        })
    }

    /// Balanced rank-`n` factors `UΣ^½`, `Σ^½Vᵀ` of a Hankel matrix.
    pub fn from_hankel(h: &HankelMatrix, n: usize) -> Self {
        let d = svd(&h.data);
        let sq = d.s.rows(0, n).map(f64::sqrt);
        let o = d.u.columns(0, n) * DMatrix::from_diagonal(&sq);
        let r = DMatrix::from_diagonal(&sq) * d.vt.rows(0, n);
        ObsCtrlPair { o, r }
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.o * &self.r
    }
}

/// `(G_o, G_c) = (OᵀO, RRᵀ)`.
pub fn gramians(o: &DMatrix<f64>, r: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (o.transpose() * o, r * r.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Each block perturbed by a draw uniform on the Frobenius ball of radius ε.
    Amplitude(f64),
    /// I.i.d. Gaussian entries at the given signal-to-noise ratio in dB,
    /// with signal power averaged over all stored entries.
    SnrDb(f64),
}

/// Adds noise to every stored block.
///
/// `noise_bound` becomes ε in amplitude mode and the RMS block perturbation
/// norm `σ√(pm)` in SNR mode.
pub fn add_noise(markov: &MarkovSequence, mode: NoiseMode, rng: &mut SlsRng) -> MarkovSequence {
    let mut out = markov.clone();
    let pm = markov.outputs() * markov.inputs();
    let offsets = markov.stored_offsets();
    match mode {
        NoiseMode::Amplitude(eps) => {
            if eps == 0.0 {
                return out;
            }
            let raw = out.raw_mut();
            let mut dir = vec![0.0; pm];
            for &o in &offsets {
                let norm = loop {
                    for d in dir.iter_mut() {
                        *d = rng.sample(StandardNormal);
                    }
                    let nn = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if nn > 0.0 {
                        break nn;
                    }
                };
                let u: f64 = rng.random();
                let radius = eps * u.powf(1.0 / pm as f64);
                for (i, d) in dir.iter().enumerate() {
                    raw[o + i] += radius * d / norm;
                }
            }
            out.noise_bound = eps;
        }
        NoiseMode::SnrDb(snr) => {
            let count = (offsets.len() * pm) as f64;
            let power: f64 = offsets
                .iter()
                .flat_map(|&o| markov.raw()[o..o + pm].iter())
                .map(|x| x * x)
                .sum::<f64>()
                / count;
            let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
            let raw = out.raw_mut();
            for &o in &offsets {
                for x in &mut raw[o..o + pm] {
                    *x += sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
            out.noise_bound = sigma * (pm as f64).sqrt();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_markov, paper_example_states, Band, DiscreteState, SwitchingSequence};
    use crate::rng::{stream, Purpose};

    fn scalar_seq(n_steps: usize) -> MarkovSequence {
        let s = DiscreteState::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
        )
        .unwrap();
        let m = SlsModel::new(vec![s], SwitchingSequence::constant(1, n_steps).unwrap()).unwrap();
        generate_markov(&m, Band::Full)
    }

    fn paper_model() -> SlsModel {
        let sw = SwitchingSequence::from_segments(&[(1, 40), (2, 30), (3, 40)]).unwrap();
        SlsModel::new(paper_example_states(), sw).unwrap()
    }

    #[test]
    fn scalar_layout() {
        let h = build(&scalar_seq(10), 3, 2, 4).unwrap();
        let expect = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.5, 0.25, 0.25, 0.125]);
        assert_eq!(h.data, expect);
    }

    #[test]
    fn anchor_bounds() {
        let seq = scalar_seq(10);
        match build(&seq, 3, 2, 2) {
            Err(Error::IndexOutOfRange { lo, .. }) => assert_eq!(lo, 3),
            other => panic!("{other:?}"),
        }
        assert!(build(&seq, 3, 2, 9).is_err());
        assert!(build(&seq, 3, 2, 8).is_ok());
    }

    #[test]
    fn window_sizing() {
        assert_eq!(window(100, 3).unwrap(), (7, 88));
        match window(19, 3) {
            Err(Error::TooShort { required, .. }) => assert_eq!(required, 20),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn advance_matches_build_across_switch() {
        let model = paper_model();
        let seq = generate_markov(&model, Band::Lags(13));
        let mut h = build_default(&seq, 7).unwrap();
        for k in 8..=98 {
            h = advance(&h, &seq).unwrap();
            assert_eq!(h, build_default(&seq, k).unwrap());
        }
    }

    #[test]
    fn factorization_reproduces_hankel_and_rank_is_n() {
        let model = paper_model();
        let seq = generate_markov(&model, Band::Lags(13));
        for k in [10, 38, 41, 55, 70, 90] {
            let h = build_default(&seq, k).unwrap();
            let pair = ObsCtrlPair::from_model(&model, 7, 6, k).unwrap();
            assert!((pair.product() - &h.data).norm() <= 1e-12 * h.data.norm());
            assert_eq!(svd(&h.data).rank(1e-8), 3);
            let est = ObsCtrlPair::from_hankel(&h, 3);
            assert!((est.product() - &h.data).norm() <= 1e-8 * h.data.norm());
        }
    }

    #[test]
    fn gramians_psd() {
        let model = paper_model();
        let pair = ObsCtrlPair::from_model(&model, 7, 6, 20).unwrap();
        let (go, gc) = gramians(&pair.o, &pair.r);
        assert!(go.clone().symmetric_eigenvalues().min() > 0.0);
        assert!(gc.clone().symmetric_eigenvalues().min() > 0.0);
        let q = DMatrix::<f64>::identity(5, 2);
        assert_eq!(gramians(&q, &q.transpose()).0, DMatrix::identity(2, 2));
        let def = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 0.0, 0.0]);
        assert!(gramians(&def, &def.transpose()).0.symmetric_eigenvalues().min().abs() < 1e-12);
    }

    #[test]
    fn noise_modes() {
        let model = paper_model();
        let seq = generate_markov(&model, Band::Lags(13));
        let same = add_noise(&seq, NoiseMode::Amplitude(0.0), &mut stream(1, 0, Purpose::Noise));
        assert_eq!(same, seq);

        let eps = 1e-3;
        let noisy = add_noise(&seq, NoiseMode::Amplitude(eps), &mut stream(1, 0, Purpose::Noise));
        let mut worst: f64 = 0.0;
        for (k, l) in seq.stored_pairs() {
            worst = worst.max((noisy.block(k, l).unwrap() - seq.block(k, l).unwrap()).norm());
        }
        assert!(worst <= eps && worst > 0.5 * eps);
        assert_eq!(noisy.noise_bound, eps);

        let snr = add_noise(&seq, NoiseMode::SnrDb(40.0), &mut stream(1, 0, Purpose::Noise));
        let (mut ps, mut pn) = (0.0, 0.0);
        for (k, l) in seq.stored_pairs() {
            ps += seq.block(k, l).unwrap().norm_squared();
            pn += (snr.block(k, l).unwrap() - seq.block(k, l).unwrap()).norm_squared();
        }
        let measured = 10.0 * (ps / pn).log10();
        assert!((measured - 40.0).abs() < 0.5, "{measured}");
    }
}
