//! Numerical checks of the structural assumptions the realization relies on.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{DiscreteState, SlsModel, SwitchingSequence};
use crate::linalg::{
    controllability, eigenvalues, mat_pow, observability, spectral_abs_sum, spectral_radius, svd,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assumption {
    /// Every submodel is stable with McMillan degree n.
    StableMinimal,
    /// Interior dwell times are at least n.
    MinDwell,
    /// Submodels have pairwise distinct eigenvalue features.
    FeatureSeparation,
    /// Every submodel is visited inside the Hankel window and the
    /// stationary stretches hold more than 5n points.
    StateVisitation,
    /// The correction operators change their feature at every switch.
    CorrectionDetectable,
    /// `[C D]` and `[B; D]` differ across every switch.
    MatchDetectable,
    /// No submodel has an eigenvalue at the origin.
    NoPolesAtZero,
}

impl Assumption {
    pub const ALL: [Assumption; 7] = [
        Assumption::StableMinimal,
        Assumption::MinDwell,
        Assumption::FeatureSeparation,
        Assumption::StateVisitation,
        Assumption::CorrectionDetectable,
        Assumption::MatchDetectable,
        Assumption::NoPolesAtZero,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rank_rtol: f64,
    /// Minimum |M(A_j) − M(A_l)| between distinct submodels.
    pub feature_gap: f64,
    /// Minimum |M(·) − n| for the correction-operator conditions.
    pub detect_gap: f64,
    /// Minimum Frobenius distance between `[C D]` (and `[B; D]`) stacks.
    pub distinct: f64,
    /// Minimum eigenvalue magnitude.
    pub pole_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_rtol: 1e-8,
            feature_gap: 1e-6,
            detect_gap: 1e-6,
            distinct: 1e-9,
            pole_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionEntry {
    pub assumption: Assumption,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub entries: Vec<AssumptionEntry>,
}

impl AssumptionReport {
    pub fn passed(&self, a: Assumption) -> bool {
        self.entries.iter().filter(|e| e.assumption == a).all(|e| e.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

/// `|M(I + G_o⁻¹ (A^2n)ᵀ Cᵀ (C' − C) A^2n) − n|` for a switch from `pre` to `post`.
pub fn forward_detectability(pre: &DiscreteState, post: &DiscreteState) -> f64 {
    let n = pre.order();
    let o = observability(&pre.c, &pre.a, 2 * n + 1);
    let go = o.transpose() * &o;
    let Some(go_inv) = go.try_inverse() else {
        return 0.0;
    };
    let a2n = mat_pow(&pre.a, 2 * n);
    let x = DMatrix::identity(n, n) + go_inv * a2n.transpose() * pre.c.transpose() * (&post.c - &pre.c) * &a2n;
    (spectral_abs_sum(&x) - n as f64).abs()
}

/// `|M(I + A^(2n−1) (B' − B) Bᵀ (A^(2n−1))ᵀ G_c⁻¹) − n|` for a switch from
/// `pre` (with input matrix `B'`) into `post` (with `A`, `B`).
pub fn backward_detectability(pre: &DiscreteState, post: &DiscreteState) -> f64 {
    let n = post.order();
    let r = controllability(&post.a, &post.b, 2 * n);
    let gc = &r * r.transpose();
    let Some(gc_inv) = gc.try_inverse() else {
        return 0.0;
    };
    let a = mat_pow(&post.a, 2 * n - 1);
    let x = DMatrix::identity(n, n) + &a * (&pre.b - &post.b) * post.b.transpose() * a.transpose() * gc_inv;
    (spectral_abs_sum(&x) - n as f64).abs()
}

fn stable_minimal(states: &[DiscreteState], tol: &Tolerances) -> AssumptionEntry {
    let mut bad = Vec::new();
    for (j, s) in states.iter().enumerate() {
        let n = s.order();
        let rho = spectral_radius(&s.a);
        let ro = svd(&observability(&s.c, &s.a, n)).rank(tol.rank_rtol);
        let rc = svd(&controllability(&s.a, &s.b, n)).rank(tol.rank_rtol);
        if rho >= 1.0 || ro < n || rc < n {
            bad.push(format!("state {}: rho = {rho:.4}, obs rank {ro}, ctrl rank {rc}", j + 1));
        }
    }
    entry(Assumption::StableMinimal, bad, "all states stable and minimal")
}

fn feature_separation(states: &[DiscreteState], tol: &Tolerances) -> AssumptionEntry {
    let feats: Vec<f64> = states.iter().map(|s| spectral_abs_sum(&s.a)).collect();
    let mut bad = Vec::new();
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            let gap = (feats[i] - feats[j]).abs();
            if gap <= tol.feature_gap {
                bad.push(format!("states {} and {}: |dM| = {gap:.3e}", i + 1, j + 1));
            }
        }
    }
    entry(Assumption::FeatureSeparation, bad, "features pairwise separated")
}

fn no_poles_at_zero(states: &[DiscreteState], tol: &Tolerances) -> AssumptionEntry {
    let mut bad = Vec::new();
    for (j, s) in states.iter().enumerate() {
        let min = eigenvalues(&s.a).iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        if min <= tol.pole_floor {
            bad.push(format!("state {}: min |lambda| = {min:.3e}", j + 1));
        }
    }
    entry(Assumption::NoPolesAtZero, bad, "no eigenvalue at the origin")
}

fn pair_checks(
    states: &[DiscreteState],
    pairs: &[(usize, usize, Option<usize>)],
    which: Assumption,
    tol: &Tolerances,
) -> AssumptionEntry {
    let mut bad = Vec::new();
    for &(pre, post, at) in pairs {
        let (sp, sq) = (&states[pre - 1], &states[post - 1]);
        let place = at.map_or(String::new(), |k| format!(" at k = {k}"));
        match which {
            Assumption::CorrectionDetectable => {
                let f = forward_detectability(sp, sq);
                let b = backward_detectability(sp, sq);
                if f <= tol.detect_gap || b <= tol.detect_gap {
                    bad.push(format!("{pre} -> {post}{place}: forward {f:.3e}, backward {b:.3e}"));
                }
            }
            Assumption::MatchDetectable => {
                let cd = crate::linalg::hstack(&[sp.c.clone(), sp.d.clone()])
                    - crate::linalg::hstack(&[sq.c.clone(), sq.d.clone()]);
                let bd = crate::linalg::vstack(&[sp.b.clone(), sp.d.clone()])
                    - crate::linalg::vstack(&[sq.b.clone(), sq.d.clone()]);
                if cd.norm() <= tol.distinct || bd.norm() <= tol.distinct {
                    bad.push(format!(
                        "{pre} -> {post}{place}: |d[C D]| = {:.3e}, |d[B; D]| = {:.3e}",
                        cd.norm(),
                        bd.norm()
                    ));
                }
            }
            _ => unreachable!("pair check for {which:?}"),
        }
    }
    entry(which, bad, "every switch detectable")
}

fn min_dwell(sw: &SwitchingSequence, n: usize) -> AssumptionEntry {
    match sw.min_interior_dwell() {
        Some(d) if d < n => entry(
            Assumption::MinDwell,
            vec![format!("minimum interior dwell {d} < n = {n}")],
            "",
        ),
        Some(d) => entry(Assumption::MinDwell, vec![], &format!("minimum interior dwell {d}")),
        None => entry(Assumption::MinDwell, vec![], "fewer than two switches"),
    }
}

/// Guaranteed stationary-stretch length implied by the dwell times.
pub(crate) fn stationary_support(sw: &SwitchingSequence, n: usize) -> i64 {
    let d: Vec<i64> = sw.dwell_times().iter().map(|&x| x as i64).collect();
    let n = n as i64;
    if d.len() == 1 {
        return d[0] - 6 * n - 1;
    }
    let mut ns = (d[0] - 6 * n - 1).min(d[d.len() - 1] - 8 * n);
    if d.len() > 2 {
        let interior = d[1..d.len() - 1].iter().copied().min().expect("nonempty");
        ns = ns.min(interior - 4 * n - 1);
    }
    ns
}

fn state_visitation(sw: &SwitchingSequence, sigma: usize, n: usize) -> AssumptionEntry {
    let mut bad = Vec::new();
    let lo = 2 * n + 1;
    let hi = sw.n_steps().saturating_sub(4 * n);
    if hi < lo {
        bad.push(format!("window empty for N = {}", sw.n_steps()));
    } else {
        let mut seen = vec![false; sigma];
        for k in lo..=hi {
            seen[sw.label(k) - 1] = true;
        }
        for (j, s) in seen.iter().enumerate() {
            if !s {
                bad.push(format!("state {} not visited in [{lo}, {hi}]", j + 1));
            }
        }
    }
    let ns = stationary_support(sw, n);
    if ns <= 5 * n as i64 {
        bad.push(format!("stationary support {ns} <= 5n = {}", 5 * n));
    }
    entry(Assumption::StateVisitation, bad, &format!("stationary support {ns}"))
}

fn entry(a: Assumption, bad: Vec<String>, ok: &str) -> AssumptionEntry {
    AssumptionEntry {
        assumption: a,
        passed: bad.is_empty(),
        detail: if bad.is_empty() { ok.to_string() } else { bad.join("; ") },
    }
}

/// Evaluates the selected assumptions on `model`. Switch-dependent checks use
/// the switches of `model.switching`.
pub fn check_assumptions(model: &SlsModel, which: &[Assumption], tol: &Tolerances) -> AssumptionReport {
    let sw = &model.switching;
    let pairs: Vec<(usize, usize, Option<usize>)> = sw
        .switches()
        .into_iter()
        .map(|k| (sw.label(k - 1), sw.label(k), Some(k)))
        .collect();
    evaluate(&model.states, Some(sw), &pairs, which, tol)
}

/// Switch-free variant used when sampling submodels: pairwise conditions are
/// evaluated over every ordered pair of distinct states.
pub(crate) fn check_states(states: &[DiscreteState], which: &[Assumption], tol: &Tolerances) -> AssumptionReport {
    let sigma = states.len();
    let mut pairs = Vec::new();
    for i in 1..=sigma {
        for j in 1..=sigma {
            if i != j {
                pairs.push((i, j, None));
            }
        }
    }
    evaluate(states, None, &pairs, which, tol)
}

fn evaluate(
    states: &[DiscreteState],
    sw: Option<&SwitchingSequence>,
    pairs: &[(usize, usize, Option<usize>)],
    which: &[Assumption],
    tol: &Tolerances,
) -> AssumptionReport {
    let n = states.first().map_or(0, DiscreteState::order);
    let entries = which
        .iter()
        .map(|&a| match a {
            Assumption::StableMinimal => stable_minimal(states, tol),
            Assumption::FeatureSeparation => feature_separation(states, tol),
            Assumption::NoPolesAtZero => no_poles_at_zero(states, tol),
            Assumption::CorrectionDetectable | Assumption::MatchDetectable => pair_checks(states, pairs, a, tol),
            Assumption::MinDwell => match sw {
                Some(sw) => min_dwell(sw, n),
                None => entry(a, vec![], "no switching sequence"),
            },
            Assumption::StateVisitation => match sw {
                Some(sw) => state_visitation(sw, states.len(), n),
                None => entry(a, vec![], "no switching sequence"),
            },
        })
        .collect();
    AssumptionReport { entries }
}
