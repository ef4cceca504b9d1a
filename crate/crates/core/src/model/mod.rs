//! Switched linear systems, switching sequences, and doubly-indexed Markov
//! parameters.
//!
//! Time indices are 1-based throughout the crate: the first sample is `k = 1`
//! and the last is `k = N`.

mod assumptions;
mod preset;
mod random;

pub use assumptions::{
    backward_detectability, check_assumptions, forward_detectability, Assumption,
    AssumptionEntry, AssumptionReport, Tolerances,
};
pub use preset::{paper_example_states, paper_multisine};
pub use random::{random_sls, random_switching, SegmentPolicy, SlsConstraints};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One LTI submodel `(A, B, C, D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteState {
    #[serde(with = "crate::serde_mat")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub c: DMatrix<f64>,
    #[serde(with = "crate::serde_mat")]
    pub d: DMatrix<f64>,
}

impl DiscreteState {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let s = DiscreteState { a, b, c, d };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let ok = self.a.ncols() == n
            && self.b.nrows() == n
            && self.c.ncols() == n
            && self.d.nrows() == self.c.nrows()
            && self.d.ncols() == self.b.ncols();
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.nrows(),
                self.b.ncols(),
                self.c.nrows(),
                self.c.ncols(),
                self.d.nrows(),
                self.d.ncols()
            )))
        }
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `[[A, B], [C, D]]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, m, p) = (self.order(), self.inputs(), self.outputs());
        let mut s = DMatrix::zeros(n + p, n + m);
        s.view_mut((0, 0), (n, n)).copy_from(&self.a);
        s.view_mut((0, n), (n, m)).copy_from(&self.b);
        s.view_mut((n, 0), (p, n)).copy_from(&self.c);
        s.view_mut((n, n), (p, m)).copy_from(&self.d);
        s
    }

    /// `(T⁻¹AT, T⁻¹B, CT, D)`. Returns `None` for singular `t`.
    pub fn similar(&self, t: &DMatrix<f64>) -> Option<Self> {
        let ti = t.clone().try_inverse()?;
        Some(DiscreteState {
            a: &ti * &self.a * t,
            b: &ti * &self.b,
            c: &self.c * t,
            d: self.d.clone(),
        })
    }

    /// `q × r` block Hankel matrix with blocks `C A^(s+t) B`, `s < q`, `t < r`.
    pub fn hankel(&self, q: usize, r: usize) -> DMatrix<f64> {
        let (p, m) = (self.outputs(), self.inputs());
        let mut h = DMatrix::zeros(q * p, r * m);
        for s in 0..q {
            for t in 0..r {
                h.view_mut((s * p, t * m), (p, m)).copy_from(&self.impulse(s + t + 1));
            }
        }
        h
    }

    /// Smallest and largest singular values of [`hankel`](Self::hankel) at
    /// the pipeline sizing `(2n+1, 2n)`; the smallest is the `n`-th.
    pub fn hankel_extremes(&self) -> (f64, f64) {
        let n = self.order();
        let d = crate::linalg::svd(&self.hankel(2 * n + 1, 2 * n));
        (d.s[n - 1], d.sigma_max())
    }

    /// LTI impulse response block: `D` at lag 0, `C A^(lag-1) B` otherwise.
    pub fn impulse(&self, lag: usize) -> DMatrix<f64> {
        if lag == 0 {
            self.d.clone()
        } else {
            &self.c * crate::linalg::mat_pow(&self.a, lag - 1) * &self.b
        }
    }
}

/// A constant stretch `[start, end]` (inclusive) of a switching sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Labels `phi[k-1] = φ(k)` for `k = 1..=N`; labels start at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchingSequence {
    phi: Vec<usize>,
}

impl SwitchingSequence {
    pub fn new(phi: Vec<usize>) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::Infeasible("empty switching sequence".into()));
        }
        if phi.contains(&0) {
            return Err(Error::Format("labels start at 1".into()));
        }
        Ok(SwitchingSequence { phi })
    }

    pub fn constant(label: usize, n_steps: usize) -> Result<Self> {
        Self::new(vec![label; n_steps])
    }

    /// Concatenate `(label, length)` runs; adjacent labels must differ.
    pub fn from_segments(runs: &[(usize, usize)]) -> Result<Self> {
        let mut phi = Vec::new();
        for (i, &(label, len)) in runs.iter().enumerate() {
            if len == 0 {
                return Err(Error::Infeasible(format!("segment {i} has zero length")));
            }
            if i > 0 && runs[i - 1].0 == label {
                return Err(Error::Infeasible(format!("segments {} and {i} share label {label}", i - 1)));
            }
            phi.extend(std::iter::repeat_n(label, len));
        }
        Self::new(phi)
    }

    pub fn n_steps(&self) -> usize {
        self.phi.len()
    }

    /// φ(k), 1-based `k`.
    pub fn label(&self, k: usize) -> usize {
        self.phi[k - 1]
    }

    pub fn labels(&self) -> &[usize] {
        &self.phi
    }

    pub fn max_label(&self) -> usize {
        self.phi.iter().copied().max().unwrap_or(0)
    }

    /// Switch instants `k_i` (φ(k) ≠ φ(k−1)), increasing.
    pub fn switches(&self) -> Vec<usize> {
        (2..=self.phi.len())
            .filter(|&k| self.phi[k - 1] != self.phi[k - 2])
            .collect()
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut start = 1;
        for k in 2..=self.phi.len() + 1 {
            if k == self.phi.len() + 1 || self.phi[k - 1] != self.phi[k - 2] {
                out.push(Segment {
                    start,
                    end: k - 1,
                    label: self.phi[start - 1],
                });
                start = k;
            }
        }
        out
    }

    /// `δ_0 = k_1 − 1`, interior `δ_i = k_{i+1} − k_i`, last `δ_{i*} = N − k_{i*}`.
    ///
    /// Note the last value is one less than the segment length.
    pub fn dwell_times(&self) -> Vec<usize> {
        let sw = self.switches();
        let n = self.phi.len();
        if sw.is_empty() {
            return vec![n];
        }
        let mut d = vec![sw[0] - 1];
        for w in sw.windows(2) {
            d.push(w[1] - w[0]);
        }
        d.push(n - sw[sw.len() - 1]);
        d
    }

    /// Minimum over interior dwell times, `None` with fewer than two switches.
    pub fn min_interior_dwell(&self) -> Option<usize> {
        let d = self.dwell_times();
        if d.len() < 3 {
            None
        } else {
            d[1..d.len() - 1].iter().copied().min()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlsModel {
    pub states: Vec<DiscreteState>,
    pub switching: SwitchingSequence,
}

impl SlsModel {
    pub fn new(states: Vec<DiscreteState>, switching: SwitchingSequence) -> Result<Self> {
        let m = SlsModel { states, switching };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .states
            .first()
            .ok_or_else(|| Error::Infeasible("model has no discrete states".into()))?;
        for s in &self.states {
            s.validate()?;
            if (s.order(), s.inputs(), s.outputs()) != (first.order(), first.inputs(), first.outputs()) {
                return Err(Error::Dimension("discrete states differ in (n, m, p)".into()));
            }
        }
        if self.switching.max_label() > self.states.len() {
            return Err(Error::Format(format!(
                "label {} refers to a missing state (sigma = {})",
                self.switching.max_label(),
                self.states.len()
            )));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.states[0].order()
    }
    pub fn inputs(&self) -> usize {
        self.states[0].inputs()
    }
    pub fn outputs(&self) -> usize {
        self.states[0].outputs()
    }
    pub fn n_steps(&self) -> usize {
        self.switching.n_steps()
    }
    pub fn sigma(&self) -> usize {
        self.states.len()
    }

    /// The quadruple active at time `k`.
    pub fn at(&self, k: usize) -> &DiscreteState {
        &self.states[self.switching.label(k) - 1]
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.n_steps() {
            Err(Error::IndexOutOfRange {
                index: k,
                lo: 1,
                hi: self.n_steps(),
            })
        } else {
            Ok(())
        }
    }
}

/// `Φ(k, ℓ) = A(k−1)···A(ℓ)`, identity for `k = ℓ`.
pub fn state_transition(model: &SlsModel, k: usize, l: usize) -> Result<DMatrix<f64>> {
    model.check_index(k)?;
    model.check_index(l)?;
    if l > k {
        return Err(Error::IndexOutOfRange { index: l, lo: 1, hi: k });
    }
    let mut phi = DMatrix::identity(model.order(), model.order());
    for j in l..k {
        phi = &model.at(j).a * phi;
    }
    Ok(phi)
}

/// `h(k, ℓ)`: `C(k)Φ(k, ℓ+1)B(ℓ)` for `k > ℓ`, `D(k)` for `k = ℓ`.
pub fn markov(model: &SlsModel, k: usize, l: usize) -> Result<DMatrix<f64>> {
    model.check_index(k)?;
    model.check_index(l)?;
    if l > k {
        return Err(Error::IndexOutOfRange { index: l, lo: 1, hi: k });
    }
    if k == l {
        return Ok(model.at(k).d.clone());
    }
    Ok(&model.at(k).c * state_transition(model, k, l + 1)? * &model.at(l).b)
}

/// Which lags `k − ℓ` a [`MarkovSequence`] stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Band {
    /// Every `ℓ ≤ k`. O(N²) storage.
    Full,
    /// Lags `0..=L`.
    Lags(usize),
}

impl Band {
    /// Band needed by the realization pipeline for order `n`.
    pub fn pipeline(order: usize) -> Band {
        Band::Lags(4 * order + 1)
    }
}

/// Doubly-indexed Markov parameters `h(k, ℓ)`, `1 ≤ ℓ ≤ k ≤ N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSequence {
    n_steps: usize,
    order: usize,
    p: usize,
    m: usize,
    band: Band,
    data: Vec<f64>,
    /// Bound on the per-block additive perturbation; 0 for exact data.
    pub noise_bound: f64,
}

impl MarkovSequence {
    pub fn zeros(n_steps: usize, order: usize, p: usize, m: usize, band: Band) -> Self {
        let blocks = match band {
            Band::Full => n_steps * (n_steps + 1) / 2,
            Band::Lags(l) => n_steps * (l + 1),
        };
        MarkovSequence {
            n_steps,
            order,
            p,
            m,
            band,
            data: vec![0.0; blocks * p * m],
            noise_bound: 0.0,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn outputs(&self) -> usize {
        self.p
    }
    pub fn inputs(&self) -> usize {
        self.m
    }
    pub fn band(&self) -> Band {
        self.band
    }

    /// Largest lag available at any `k`.
    pub fn max_lag(&self) -> usize {
        match self.band {
            Band::Full => self.n_steps.saturating_sub(1),
            Band::Lags(l) => l,
        }
    }

    /// Whether `(k, ℓ)` with `ℓ ≤ k` is stored.
    pub fn stores(&self, k: usize, l: usize) -> bool {
        l >= 1 && l <= k && k <= self.n_steps && k - l <= self.max_lag()
    }

    fn offset(&self, k: usize, lag: usize) -> usize {
        let block = match self.band {
            Band::Full => (k - 1) * k / 2 + lag,
            Band::Lags(l) => (k - 1) * (l + 1) + lag,
        };
        block * self.p * self.m
    }

    fn locate(&self, k: usize, l: usize) -> Result<Option<usize>> {
        for idx in [k, l] {
            if idx == 0 || idx > self.n_steps {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    lo: 1,
                    hi: self.n_steps,
                });
            }
        }
        if l > k {
            return Ok(None);
        }
        let lag = k - l;
        if lag > self.max_lag() {
            return Err(Error::LagOutOfBand {
                k,
                l,
                lag,
                band: self.max_lag(),
            });
        }
        Ok(Some(self.offset(k, lag)))
    }

    /// `h(k, ℓ)`; a zero block for `ℓ > k`.
    pub fn block(&self, k: usize, l: usize) -> Result<DMatrix<f64>> {
        Ok(match self.locate(k, l)? {
            None => DMatrix::zeros(self.p, self.m),
            Some(o) => DMatrix::from_row_slice(self.p, self.m, &self.data[o..o + self.p * self.m]),
        })
    }

    /// Row-major entries of a stored block.
    pub fn block_slice(&self, k: usize, l: usize) -> Result<&[f64]> {
        match self.locate(k, l)? {
            None => Err(Error::IndexOutOfRange { index: l, lo: 1, hi: k }),
            Some(o) => Ok(&self.data[o..o + self.p * self.m]),
        }
    }

    pub fn set_block(&mut self, k: usize, l: usize, h: &DMatrix<f64>) -> Result<()> {
        if h.shape() != (self.p, self.m) {
            return Err(Error::Dimension(format!(
                "block is {}x{}, expected {}x{}",
                h.nrows(),
                h.ncols(),
                self.p,
                self.m
            )));
        }
        let o = self
            .locate(k, l)?
            .ok_or(Error::IndexOutOfRange { index: l, lo: 1, hi: k })?;
        for i in 0..self.p {
            for j in 0..self.m {
                self.data[o + i * self.m + j] = h[(i, j)];
            }
        }
        Ok(())
    }

    /// All stored `(k, ℓ)` pairs in `k`-major, then ascending-`ℓ` order.
    pub fn stored_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let max_lag = self.max_lag();
        (1..=self.n_steps).flat_map(move |k| {
            let lo = if k > max_lag { k - max_lag } else { 1 };
            (lo..=k).map(move |l| (k, l))
        })
    }

    pub(crate) fn stored_offsets(&self) -> Vec<usize> {
        self.stored_pairs().map(|(k, l)| self.offset(k, k - l)).collect()
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Markov parameters of `model` over `[1, N]`, stored within `band`.
pub fn generate_markov(model: &SlsModel, band: Band) -> MarkovSequence {
    let (n_steps, n) = (model.n_steps(), model.order());
    let mut seq = MarkovSequence::zeros(n_steps, n, model.outputs(), model.inputs(), band);
    let max_lag = seq.max_lag();
    for l in 1..=n_steps {
        seq.set_block(l, l, &model.at(l).d).expect("in band");
        // g = Φ(k, ℓ+1) B(ℓ), advanced one step per k.
        let mut g = model.at(l).b.clone();
        let last = n_steps.min(l + max_lag);
        for k in (l + 1)..=last {
            let h = &model.at(k).c * &g;
            seq.set_block(k, l, &h).expect("in band");
            g = &model.at(k).a * g;
        }
    }
    seq
}

/// Runs the state recursion with the quadruple `state_at(k)` at each `k`,
/// starting from `x0` at time `start`. `inputs[i]` is `u(start + i)`.
pub fn run_recursion<'a, F>(
    state_at: F,
    x0: &DVector<f64>,
    start: usize,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>>
where
    F: Fn(usize) -> &'a DiscreteState,
{
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(inputs.len());
    for (i, u) in inputs.iter().enumerate() {
        let s = state_at(start + i);
        if x.len() != s.order() || u.len() != s.inputs() {
            return Err(Error::Dimension(format!(
                "x has {} entries and u has {}, state expects n = {}, m = {}",
                x.len(),
                u.len(),
                s.order(),
                s.inputs()
            )));
        }
        out.push(&s.c * &x + &s.d * u);
        x = &s.a * &x + &s.b * u;
    }
    Ok(out)
}

/// Output `y(k)` for `k = start, …, start + inputs.len() − 1` with `x(start) = x0`.
pub fn simulate(
    model: &SlsModel,
    x0: &DVector<f64>,
    start: usize,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    model.check_index(start)?;
    if !inputs.is_empty() {
        model.check_index(start + inputs.len() - 1)?;
    }
    run_recursion(|k| model.at(k), x0, start, inputs)
}
