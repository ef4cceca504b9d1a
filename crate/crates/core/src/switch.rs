//! Switch detection.
//!
//! Three detectors label the window `[k', k'']`:
//!
//! * [`detect_markov`] grows each clustered interval by testing whether the
//!   Markov parameters just outside it still match the interval's submodel;
//! * [`detect_correction`] handles the remaining stationary runs with the
//!   forward/backward correction operators, whose feature departs from `n`
//!   once a switch enters the Hankel window;
//! * [`detect_short`] fills gaps that contain no stationary point by testing
//!   short Hankel blocks against each submodel's Hankel signature.
//!
//! [`detect_all`] runs them in that order and merges the fragments.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cluster::{feature_m, ClusterResult, Interval, StationarySet};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hankel::{build, window};
use crate::linalg::{controllability, mat_pow, observability, pinv};
use crate::ltv::{factors, realize_at, LtvRealization};
use crate::model::{DiscreteState, MarkovSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    /// Labels taken straight from a clustered stationary interval.
    Interval,
    MarkovMatch,
    Correction,
    Signature,
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::Interval => "interval",
            Detector::MarkovMatch => "markov_match",
            Detector::Correction => "correction",
            Detector::Signature => "signature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectedSwitch {
    pub k: usize,
    pub detector: Detector,
    pub direction: Direction,
    /// Forward: `k − 1 − β`; backward: `α − k`, for the interval `[α, β]`
    /// the search started from. Zero for signature detections.
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

/// Output of one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub detector: Detector,
    pub assignments: Vec<(Assignment, Detector)>,
    pub switches: Vec<DetectedSwitch>,
    pub diagnostics: Vec<String>,
}

impl Fragment {
    fn new(detector: Detector) -> Self {
        Fragment {
            detector,
            assignments: Vec::new(),
            switches: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    fn assign(&mut self, start: usize, end: usize, label: usize, by: Detector) {
        if start <= end {
            self.assignments.push((Assignment { start, end, label }, by));
        }
    }

    fn absorb(&mut self, other: Fragment) {
        self.assignments.extend(other.assignments);
        self.switches.extend(other.switches);
        self.diagnostics.extend(other.diagnostics);
    }
}

/// Merged label sequence over the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEstimate {
    pub window: (usize, usize),
    /// `phi_hat[k − window.0]`; `None` where no detector assigned a label.
    pub phi_hat: Vec<Option<usize>>,
    pub provenance: Vec<Option<Detector>>,
    /// Label changes of `phi_hat` between assigned neighbours, with the
    /// detection that produced them when one exists.
    pub switches: Vec<DetectedSwitch>,
    /// Every raw detection, including duplicates from both directions.
    pub detections: Vec<DetectedSwitch>,
    pub diagnostics: Vec<String>,
}

impl SwitchEstimate {
    pub fn label(&self, k: usize) -> Option<usize> {
        if k < self.window.0 || k > self.window.1 {
            None
        } else {
            self.phi_hat[k - self.window.0]
        }
    }

    pub fn unassigned(&self) -> Vec<usize> {
        (self.window.0..=self.window.1).filter(|&k| self.label(k).is_none()).collect()
    }

    /// Maximal unassigned runs `[a, b]`.
    pub fn gaps(&self) -> Vec<Interval> {
        let mut out = Vec::new();
        let mut start = None;
        for k in self.window.0..=self.window.1 + 1 {
            let free = k <= self.window.1 && self.label(k).is_none();
            match (free, start) {
                (true, None) => start = Some(k),
                (false, Some(a)) => {
                    out.push(Interval { alpha: a, beta: k - 1 });
                    start = None;
                }
                _ => {}
            }
        }
        out
    }

    /// `φ̂` over `[1, N]`, extended constantly outside the window and filled
    /// inside it by the nearest assigned label to the left (to the right
    /// before the first assignment).
    pub fn extended(&self, n_steps: usize) -> Option<Vec<usize>> {
        let first = self.phi_hat.iter().flatten().next().copied()?;
        let mut out = Vec::with_capacity(n_steps);
        let mut cur = first;
        for k in 1..=n_steps {
            if let Some(l) = self.label(k) {
                cur = l;
            }
            out.push(cur);
        }
        Some(out)
    }
}

/// `V̂(k) = Ô†(k) Ô(k+1)`.
pub fn forward_correction(markov: &MarkovSequence, k: usize) -> Result<DMatrix<f64>> {
    let o = factors(markov, k)?.o;
    let o1 = factors(markov, k + 1)?.o;
    Ok(pinv(&o) * o1)
}

/// `Ŵ(k) = R̂(k−1) R̂†(k)`, with `R̂(k−1)` from `H(k)` and `R̂(k)` from `H(k+1)`.
pub fn backward_correction(markov: &MarkovSequence, k: usize) -> Result<DMatrix<f64>> {
    let r0 = factors(markov, k)?.r;
    let r1 = factors(markov, k + 1)?.r;
    Ok(r0 * pinv(&r1))
}

pub(crate) fn deviation(v: &DMatrix<f64>) -> f64 {
    (feature_m(v) - v.nrows() as f64).abs()
}

/// Tolerances used by the detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectTolerances {
    /// Threshold on `|M(V̂) − n|` and `|M(Ŵ) − n|`.
    pub correction: f64,
    /// Threshold on `‖Č − Ĉ‖ + ‖Ď − D̂‖` (and the backward analogue),
    /// relative to `max(1, ‖[Ĉ D̂]‖)` of the submodel being matched.
    pub matching: f64,
    /// Minimum relative gap between the two best signature distances.
    pub signature_margin: f64,
    /// Conflicts and ambiguities are errors rather than diagnostics.
    pub strict: bool,
    /// Extra steps allowed beyond the exact-data step bounds.
    pub slack: usize,
    /// Runs shorter than this are ignored by the correction detector.
    pub min_run_span: usize,
}

impl Default for DetectTolerances {
    fn default() -> Self {
        DetectTolerances {
            correction: 1e-6,
            matching: 1e-6,
            signature_margin: 1e-8,
            strict: true,
            slack: 0,
            min_run_span: 0,
        }
    }
}

fn scale_of(q: &DiscreteState) -> f64 {
    (q.c.norm_squared() + q.d.norm_squared()).sqrt().max(1.0)
}

fn scale_of_b(q: &DiscreteState) -> f64 {
    (q.b.norm_squared() + q.d.norm_squared()).sqrt().max(1.0)
}

/// Forward Markov match at `ℓ` against `rep`: returns `(Č, Ď, distance)`,
/// where `Č = H_{1,2n}(ℓ) R̂†` with `R̂` the `2n`-step controllability matrix
/// of `rep` and the distance is relative to `max(1, ‖[Ĉ D̂]‖)`.
pub fn match_forward_stat(
    markov: &MarkovSequence,
    rep: &DiscreteState,
    l: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let n = markov.order();
    let h = build(markov, 1, 2 * n, l)?;
    let r = controllability(&rep.a, &rep.b, 2 * n);
    let c = h.data * pinv(&r);
    let d = markov.block(l, l)?;
    let dist = ((&c - &rep.c).norm() + (&d - &rep.d).norm()) / scale_of(rep);
    Ok((c, d, dist))
}

/// Backward Markov match at `ℓ`: `B̌ = Ô† H_{2n,1}(ℓ+1)` with `Ô` the
/// `2n`-step observability matrix of `rep`.
pub fn match_backward_stat(
    markov: &MarkovSequence,
    rep: &DiscreteState,
    l: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let n = markov.order();
    let h = build(markov, 2 * n, 1, l + 1)?;
    let o = observability(&rep.c, &rep.a, 2 * n);
    let b = pinv(&o) * h.data;
    let d = markov.block(l, l)?;
    let dist = ((&b - &rep.b).norm() + (&d - &rep.d).norm()) / scale_of_b(rep);
    Ok((b, d, dist))
}

/// `(Č, Ď, same-state flag)` for the label's representative.
pub fn match_forward(
    markov: &MarkovSequence,
    clusters: &ClusterResult,
    label: usize,
    l: usize,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, bool)> {
    let (c, d, dist) = match_forward_stat(markov, &clusters.representatives[label - 1], l)?;
    Ok((c, d, dist < tol))
}

/// `(B̌, Ď, same-state flag)` for the label's representative.
pub fn match_backward(
    markov: &MarkovSequence,
    clusters: &ClusterResult,
    label: usize,
    l: usize,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, bool)> {
    let (b, d, dist) = match_backward_stat(markov, &clusters.representatives[label - 1], l)?;
    Ok((b, d, dist < tol))
}

/// `(n+1)×n` block Hankel matrix with blocks `Ĉ Â^{s+t−2} B̂`.
pub fn hankel_signature(quad: &DiscreteState) -> DMatrix<f64> {
    let n = quad.order();
    let (p, m) = (quad.outputs(), quad.inputs());
    let mut out = DMatrix::zeros((n + 1) * p, n * m);
    for s in 0..=n {
        for t in 0..n {
            let blk = &quad.c * mat_pow(&quad.a, s + t) * &quad.b;
            out.view_mut((s * p, t * m), (p, m)).copy_from(&blk);
        }
    }
    out
}

/// Label whose signature is nearest `H_{n+1,n}(anchor)`.
fn signature_label(
    markov: &MarkovSequence,
    signatures: &[DMatrix<f64>],
    anchor: usize,
    tol: &DetectTolerances,
    frag: &mut Fragment,
) -> Result<usize> {
    let n = markov.order();
    let h = build(markov, n + 1, n, anchor)?.data;
    let mut dist: Vec<(f64, usize)> = signatures
        .iter()
        .enumerate()
        .map(|(j, s)| ((&h - s).norm(), j + 1))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if dist.len() > 1 {
        let (best, second) = (dist[0].0, dist[1].0);
        if second - best <= tol.signature_margin * (1.0 + second) {
            let e = Error::AmbiguousSubmodel { k: anchor, best, second };
            if tol.strict {
                return Err(e);
            }
            frag.diagnostics.push(e.to_string());
        }
    }
    Ok(dist[0].1)
}

fn scan_forward_match(
    markov: &MarkovSequence,
    rep: &DiscreteState,
    from: usize,
    to: usize,
    tol: f64,
) -> Result<Option<usize>> {
    for l in from..=to {
        let (_, _, dist) = match_forward_stat(markov, rep, l)?;
        if dist >= tol {
            return Ok(Some(l));
        }
    }
    Ok(None)
}

fn scan_backward_match(
    markov: &MarkovSequence,
    rep: &DiscreteState,
    from: usize,
    to: usize,
    tol: f64,
) -> Result<Option<usize>> {
    let mut l = from;
    while l >= to {
        let (_, _, dist) = match_backward_stat(markov, rep, l)?;
        if dist >= tol {
            return Ok(Some(l));
        }
        if l == 0 {
            break;
        }
        l -= 1;
    }
    Ok(None)
}

/// Markov-matching detector on every clustered interval.
///
/// Forward: tests `ℓ = β+1, β+2, …` and declares a switch at the first
/// mismatch (at most `2n+2` tests, plus slack). Backward: tests
/// `ℓ = α−1, α−2, …` and declares a switch at `ℓ+1` on the first mismatch
/// (at most `2n+1` tests, plus slack).
pub fn detect_markov(
    markov: &MarkovSequence,
    clusters: &ClusterResult,
    tol: &DetectTolerances,
    exec: Execution,
) -> Result<Fragment> {
    let n = markov.order();
    let (lo, hi) = window(markov.n_steps(), n)?;
    let items: Vec<(Interval, usize)> = clusters
        .intervals
        .iter()
        .copied()
        .zip(clusters.assignments.iter().copied())
        .collect();
    let frags = exec.map(&items, |&(iv, label)| -> Result<Fragment> {
        let rep = &clusters.representatives[label - 1];
        let mut f = Fragment::new(Detector::MarkovMatch);
        f.assign(iv.alpha, iv.beta, label, Detector::Interval);

        if iv.beta < hi {
            let last = hi.min(iv.beta + 2 * n + 2 + tol.slack);
            match scan_forward_match(markov, rep, iv.beta + 1, last, tol.matching)? {
                Some(k) => {
                    f.assign(iv.beta + 1, k - 1, label, Detector::MarkovMatch);
                    f.switches.push(DetectedSwitch {
                        k,
                        detector: Detector::MarkovMatch,
                        direction: Direction::Forward,
                        steps: k - 1 - iv.beta,
                    });
                }
                None if last == hi => f.assign(iv.beta + 1, hi, label, Detector::MarkovMatch),
                None => {
                    f.assign(iv.beta + 1, last, label, Detector::MarkovMatch);
                    f.diagnostics.push(
                        Error::NoDetection {
                            start: iv.beta,
                            bound: last - iv.beta,
                            direction: "markov forward",
                        }
                        .to_string(),
                    );
                }
            }
        }
        if iv.alpha > lo {
            let last = lo.max(iv.alpha.saturating_sub(2 * n + 1 + tol.slack));
            match scan_backward_match(markov, rep, iv.alpha - 1, last, tol.matching)? {
                Some(l) => {
                    f.assign(l + 1, iv.alpha - 1, label, Detector::MarkovMatch);
                    f.switches.push(DetectedSwitch {
                        k: l + 1,
                        detector: Detector::MarkovMatch,
                        direction: Direction::Backward,
                        steps: iv.alpha - (l + 1),
                    });
                }
                None if last == lo => f.assign(lo, iv.alpha - 1, label, Detector::MarkovMatch),
                None => {
                    f.assign(last, iv.alpha - 1, label, Detector::MarkovMatch);
                    f.diagnostics.push(
                        Error::NoDetection {
                            start: iv.alpha,
                            bound: iv.alpha - last,
                            direction: "markov backward",
                        }
                        .to_string(),
                    );
                }
            }
        }
        Ok(f)
    });
    let mut out = Fragment::new(Detector::MarkovMatch);
    for f in frags {
        out.absorb(f?);
    }
    Ok(out)
}

/// Correction-operator detector on the stationary runs listed in `runs`.
///
/// Each run is labelled by the cluster whose representative feature is
/// nearest `M(Â(γ))`. The forward scan starts at `max(β−2n, α)` and fires at
/// the first `k` with `|M(V̂(k)) − n| ≥ tol`, declaring a switch at
/// `k + 2n + 1`; the backward scan starts at `min(α+2n−1, β)` and fires on
/// `|M(Ŵ(k)) − n| ≥ tol`, declaring a switch at `k − 2n + 1`.
pub fn detect_correction(
    markov: &MarkovSequence,
    real: &LtvRealization,
    runs: &[Interval],
    clusters: &ClusterResult,
    tol: &DetectTolerances,
    exec: Execution,
) -> Result<Fragment> {
    let n = markov.order();
    let (lo, hi) = window(markov.n_steps(), n)?;
    let frags = exec.map(runs, |&iv| -> Result<Fragment> {
        let mut f = Fragment::new(Detector::Correction);
        let g = iv.gamma();
        let quad = match real.get(g) {
            Some(q) => q.clone(),
            None => realize_at(markov, g)?,
        };
        let label = clusters.nearest_label(feature_m(&quad.a));

        let mut end = iv.beta;
        if iv.beta < hi {
            let start = iv.beta.saturating_sub(2 * n).max(iv.alpha);
            let last = hi.min(iv.beta + 1 + tol.slack);
            let mut fired = None;
            for k in start..=last {
                if deviation(&forward_correction(markov, k)?) >= tol.correction {
                    fired = Some(k);
                    break;
                }
            }
            match fired {
                Some(k) => {
                    let sw = k + 2 * n + 1;
                    end = sw - 1;
                    f.switches.push(DetectedSwitch {
                        k: sw,
                        detector: Detector::Correction,
                        direction: Direction::Forward,
                        steps: (sw - 1).saturating_sub(iv.beta),
                    });
                }
                None if last == hi => end = hi,
                None => f.diagnostics.push(
                    Error::NoDetection {
                        start: iv.beta,
                        bound: last - iv.beta,
                        direction: "correction forward",
                    }
                    .to_string(),
                ),
            }
        } else {
            end = hi;
        }

        let mut begin = iv.alpha;
        if iv.alpha > lo {
            let start = (iv.alpha + 2 * n - 1).min(iv.beta);
            let last = lo.max(iv.alpha.saturating_sub(1 + tol.slack));
            let mut fired = None;
            let mut k = start;
            while k >= last {
                if deviation(&backward_correction(markov, k)?) >= tol.correction {
                    fired = Some(k);
                    break;
                }
                k -= 1;
            }
            match fired {
                Some(k) if k + 1 >= 2 * n => {
                    let sw = (k + 1 - 2 * n).max(lo);
                    begin = sw;
                    f.switches.push(DetectedSwitch {
                        k: sw,
                        detector: Detector::Correction,
                        direction: Direction::Backward,
                        steps: iv.alpha.saturating_sub(sw),
                    });
                }
                None if last == lo => begin = lo,
                _ => f.diagnostics.push(
                    Error::NoDetection {
                        start: iv.alpha,
                        bound: iv.alpha - last,
                        direction: "correction backward",
                    }
                    .to_string(),
                ),
            }
        } else {
            begin = lo;
        }
        f.assign(begin, end, label, Detector::Correction);
        Ok(f)
    });
    let mut out = Fragment::new(Detector::Correction);
    for f in frags {
        out.absorb(f?);
    }
    Ok(out)
}

/// Which end of a gap is a known switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnownBoundary {
    /// The gap starts at a switch (or at `k'`).
    Start,
    /// The gap is followed by a switch (or ends at `k''`).
    End,
}

/// Signature detector on a fully unassigned gap `[a, b]`.
///
/// Forward mode: from the known switch `a`, the label of the segment is the
/// signature nearest `H_{n+1,n}(a+n)`; the label is assigned on `[a, a+2n]`
/// and extended by forward Markov matching until the next switch, which
/// restarts the procedure. Backward mode mirrors this from `b+1`.
pub fn detect_short(
    markov: &MarkovSequence,
    clusters: &ClusterResult,
    gap: Interval,
    boundary: KnownBoundary,
    tol: &DetectTolerances,
) -> Result<Fragment> {
    let n = markov.order();
    let signatures: Vec<DMatrix<f64>> = clusters.representatives.iter().map(hankel_signature).collect();
    let mut f = Fragment::new(Detector::Signature);
    let (a, b) = (gap.alpha, gap.beta);
    match boundary {
        KnownBoundary::Start => {
            let mut cur = a;
            while cur <= b {
                let label = signature_label(markov, &signatures, cur + n, tol, &mut f)?;
                let rep = &clusters.representatives[label - 1];
                f.assign(cur, (cur + 2 * n).min(b), label, Detector::Signature);
                let from = cur + 2 * n + 1;
                if from > b {
                    break;
                }
                match scan_forward_match(markov, rep, from, b, tol.matching)? {
                    Some(k) => {
                        f.assign(from, k - 1, label, Detector::Signature);
                        f.switches.push(DetectedSwitch {
                            k,
                            detector: Detector::Signature,
                            direction: Direction::Forward,
                            steps: 0,
                        });
                        cur = k;
                    }
                    None => {
                        f.assign(from, b, label, Detector::Signature);
                        break;
                    }
                }
            }
        }
        KnownBoundary::End => {
            let mut end = b + 1;
            while end > a {
                if end < 2 * n + 2 {
                    break;
                }
                let label = signature_label(markov, &signatures, end - n - 1, tol, &mut f)?;
                let rep = &clusters.representatives[label - 1];
                let start0 = end.saturating_sub(2 * n).max(a);
                f.assign(start0, end - 1, label, Detector::Signature);
                if end < a + 2 * n + 1 {
                    break;
                }
                let from = end - 2 * n - 1;
                match scan_backward_match(markov, rep, from, a, tol.matching)? {
                    Some(l) => {
                        f.assign(l + 1, from, label, Detector::Signature);
                        f.switches.push(DetectedSwitch {
                            k: l + 1,
                            detector: Detector::Signature,
                            direction: Direction::Backward,
                            steps: 0,
                        });
                        end = l + 1;
                    }
                    None => {
                        f.assign(a, from, label, Detector::Signature);
                        break;
                    }
                }
            }
        }
    }
    Ok(f)
}

/// Merges fragments in the given priority order.
///
/// With `tol.strict`, an index labelled differently by two fragments is an
/// error; otherwise the earlier fragment wins and a diagnostic is recorded.
pub fn assemble_phi(
    window: (usize, usize),
    fragments: &[Fragment],
    strict: bool,
) -> Result<SwitchEstimate> {
    let (lo, hi) = window;
    let len = hi + 1 - lo;
    let mut phi: Vec<Option<usize>> = vec![None; len];
    let mut prov: Vec<Option<Detector>> = vec![None; len];
    let mut diagnostics = Vec::new();
    let mut detections = Vec::new();
    for frag in fragments {
        for (asg, by) in &frag.assignments {
            for k in asg.start.max(lo)..=asg.end.min(hi) {
                let i = k - lo;
                match phi[i] {
                    None => {
                        phi[i] = Some(asg.label);
                        prov[i] = Some(*by);
                    }
                    Some(l) if l != asg.label => {
                        let e = Error::Conflict {
                            k,
                            existing: l,
                            existing_source: prov[i].map_or("?", Detector::name),
                            incoming: asg.label,
                            incoming_source: by.name(),
                        };
                        if strict {
                            return Err(e);
                        }
                        diagnostics.push(e.to_string());
                    }
                    _ => {}
                }
            }
        }
        detections.extend(frag.switches.iter().copied());
        diagnostics.extend(frag.diagnostics.iter().cloned());
    }
    let mut switches = Vec::new();
    let mut prev: Option<usize> = None;
    for k in lo..=hi {
        let Some(l) = phi[k - lo] else { continue };
        if let Some(p) = prev {
            if p != l {
                let found = detections
                    .iter()
                    .filter(|d| d.k == k)
                    .min_by_key(|d| (d.direction == Direction::Backward) as u8)
                    .copied();
                switches.push(found.unwrap_or(DetectedSwitch {
                    k,
                    detector: prov[k - lo].unwrap_or(Detector::Interval),
                    direction: Direction::Forward,
                    steps: 0,
                }));
            }
        }
        prev = Some(l);
    }
    Ok(SwitchEstimate {
        window,
        phi_hat: phi,
        provenance: prov,
        switches,
        detections,
        diagnostics,
    })
}

/// Which detectors [`detect_all`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub markov_match: bool,
    pub correction: bool,
    pub signature: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            markov_match: true,
            correction: true,
            signature: true,
        }
    }
}

/// Runs the enabled detectors in order and merges their fragments.
pub fn detect_all(
    markov: &MarkovSequence,
    real: &LtvRealization,
    ss: &StationarySet,
    clusters: &ClusterResult,
    tol: &DetectTolerances,
    stages: Stages,
    exec: Execution,
) -> Result<SwitchEstimate> {
    let win = window(markov.n_steps(), markov.order())?;
    let mut frags = Vec::new();
    if stages.markov_match {
        frags.push(detect_markov(markov, clusters, tol, exec)?);
    } else {
        let mut f = Fragment::new(Detector::Interval);
        for (iv, &l) in clusters.intervals.iter().zip(&clusters.assignments) {
            f.assign(iv.alpha, iv.beta, l, Detector::Interval);
        }
        frags.push(f);
    }
    let mut est = assemble_phi(win, &frags, tol.strict)?;

    if stages.correction {
        let runs: Vec<Interval> = ss
            .runs
            .iter()
            .copied()
            .filter(|r| r.span() >= tol.min_run_span)
            .filter(|r| (r.alpha..=r.beta).all(|k| est.label(k).is_none()))
            .collect();
        if !runs.is_empty() {
            frags.push(detect_correction(markov, real, &runs, clusters, tol, exec)?);
            est = assemble_phi(win, &frags, tol.strict)?;
        }
    }

    if stages.signature {
        let gaps = est.gaps();
        if gaps.len() == 1 && gaps[0] == (Interval { alpha: win.0, beta: win.1 }) {
            return Err(Error::NoBoundarySwitch);
        }
        let mut sig = Fragment::new(Detector::Signature);
        for gap in gaps {
            let boundary = if gap.alpha > win.0 {
                KnownBoundary::Start
            } else {
                KnownBoundary::End
            };
            sig.absorb(detect_short(markov, clusters, gap, boundary, tol)?);
        }
        frags.push(sig);
        est = assemble_phi(win, &frags, tol.strict)?;
    }
    Ok(est)
}
