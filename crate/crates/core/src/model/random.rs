//! Random submodels and switching sequences for Monte Carlo studies.

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::assumptions::check_states;
use super::{Assumption, DiscreteState, SwitchingSequence, Tolerances};
use crate::error::{Error, Result};
use crate::linalg::spectral_radius;
use crate::rng::SlsRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlsConstraints {
    /// Spectral radii are capped at `1 − stability_margin`.
    pub stability_margin: f64,
    /// Minimum pairwise gap between eigenvalue features.
    pub separation: f64,
    /// Minimum |M(·) − n| for the correction-operator conditions.
    pub detect_gap: f64,
    /// Minimum eigenvalue magnitude.
    pub pole_floor: f64,
    /// Minimum ratio of the `n`-th to the largest singular value of each
    /// submodel's Hankel matrix; rejects nearly unobservable or
    /// uncontrollable draws.
    pub hankel_ratio: f64,
    /// Submodel draws allowed before giving up.
    pub max_draws: usize,
}

impl Default for SlsConstraints {
    fn default() -> Self {
        SlsConstraints {
            stability_margin: 0.05,
            separation: 0.05,
            detect_gap: 1e-3,
            pole_floor: 0.05,
            hankel_ratio: 0.0,
            max_draws: 10_000,
        }
    }
}

fn gaussian(rng: &mut SlsRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Samples `sigma` submodels with standard-normal entries, rescaling each `A`
/// whose spectral radius exceeds `1 − margin`. A new draw is rejected unless it
/// is stable, minimal, pole-free, and pairwise separated and detectable
/// against the states already accepted.
pub fn random_sls(
    n: usize,
    m: usize,
    p: usize,
    sigma: usize,
    constraints: &SlsConstraints,
    rng: &mut SlsRng,
) -> Result<Vec<DiscreteState>> {
    if sigma == 0 || n == 0 || m == 0 || p == 0 {
        return Err(Error::Infeasible("n, m, p and sigma must be positive".into()));
    }
    if !(constraints.stability_margin > 0.0 && constraints.stability_margin < 1.0) {
        return Err(Error::Infeasible("stability margin must lie in (0, 1)".into()));
    }
    let tol = Tolerances {
        feature_gap: constraints.separation,
        detect_gap: constraints.detect_gap,
        pole_floor: constraints.pole_floor,
        ..Tolerances::default()
    };
    let single = [Assumption::StableMinimal, Assumption::NoPolesAtZero];
    let pairwise = [
        Assumption::FeatureSeparation,
        Assumption::CorrectionDetectable,
        Assumption::MatchDetectable,
    ];
    let mut states: Vec<DiscreteState> = Vec::with_capacity(sigma);
    let mut last_failure = String::from("none");
    // Consecutive pairwise rejections; an accepted state that nothing pairs
    // with would otherwise stall the search.
    let mut stalled = 0usize;
    for _ in 0..constraints.max_draws {
        if stalled >= RESTART_AFTER {
            states.clear();
            stalled = 0;
        }
        let mut a = gaussian(rng, n, n);
        let rho = spectral_radius(&a);
        let cap = 1.0 - constraints.stability_margin;
        if rho > cap {
            a *= cap / rho;
        }
        let cand = DiscreteState {
            a,
            b: gaussian(rng, n, m),
            c: gaussian(rng, p, n),
            d: gaussian(rng, p, m),
        };
        let r = check_states(std::slice::from_ref(&cand), &single, &tol);
        if let Some(f) = r.failures().next() {
            last_failure = format!("{:?}: {}", f.assumption, f.detail);
            continue;
        }
        let (lo, hi) = cand.hankel_extremes();
        if lo < constraints.hankel_ratio * hi {
            last_failure = format!("Hankel singular value ratio {:.3e}", lo / hi);
            continue;
        }
        states.push(cand);
        let r = check_states(&states, &pairwise, &tol);
        if let Some(f) = r.failures().next() {
            last_failure = format!("{:?}: {}", f.assumption, f.detail);
            states.pop();
            stalled += 1;
            continue;
        }
        stalled = 0;
        if states.len() == sigma {
            return Ok(states);
        }
    }
    Err(Error::BudgetExhausted {
        budget: constraints.max_draws,
        reason: format!("last rejection {last_failure}"),
    })
}

const RESTART_AFTER: usize = 500;

/// How segment lengths are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SegmentPolicy {
    /// Lengths uniform in `[min, max]`; the final segment absorbs the remainder
    /// and never falls below `min`.
    Uniform { min: usize, max: usize },
    /// Mixture of medium-to-long (`≥ 6n+1`), short (`4n+2..=6n`) and very short
    /// (`2n+1..=4n+1`) segments. Every label appears in at least one segment of
    /// length `≥ (4+ν)n+2`, and the first and last segments are at least
    /// `(8+ν)n+2` long, so stationary stretches exist for every state.
    Mixed { order: usize, nu: usize },
}

fn draw_labels(rng: &mut SlsRng, count: usize, sigma: usize) -> Vec<usize> {
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let choices: Vec<usize> = (1..=sigma).filter(|&j| i == 0 || j != labels[i - 1]).collect();
        labels.push(*choices.choose(rng).expect("sigma >= 2"));
    }
    labels
}

fn uniform_lengths(rng: &mut SlsRng, n_steps: usize, min: usize, max: usize) -> Vec<usize> {
    let mut lens = Vec::new();
    let mut total = 0;
    while total < n_steps {
        let l = rng.random_range(min..=max);
        lens.push(l);
        total += l;
    }
    let over = total - n_steps;
    let last = lens.len() - 1;
    lens[last] -= over;
    if lens[last] < min && lens.len() > 1 {
        let tail = lens.pop().expect("nonempty");
        let prev = lens.len() - 1;
        lens[prev] += tail;
    }
    lens
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Long,
    Medium,
    Short,
    VeryShort,
}

fn mixed_lengths(rng: &mut SlsRng, n_steps: usize, n: usize, nu: usize) -> Option<Vec<(usize, Class)>> {
    let long = ((4 + nu) * n + 2, (4 + nu) * n + 2 + 6 * n);
    let edge = (8 + nu) * n + 2;
    let medium = (6 * n + 1, (4 + nu) * n + 1);
    let short = (4 * n + 2, 6 * n);
    let very_short = (2 * n + 1, 4 * n + 1);
    let mut segs = vec![(rng.random_range(edge..=edge + 4 * n), Class::Long)];
    let mut total = segs[0].0;
    while total + edge < n_steps {
        let between = rng.random_range(1..=3);
        for _ in 0..between {
            let (range, class) = match rng.random_range(0..3) {
                0 => (medium, Class::Medium),
                1 => (short, Class::Short),
                _ => (very_short, Class::VeryShort),
            };
            let l = rng.random_range(range.0..=range.1);
            segs.push((l, class));
            total += l;
        }
        let l = rng.random_range(long.0..=long.1);
        segs.push((l, Class::Long));
        total += l;
    }
    while total + edge > n_steps {
        let (l, _) = segs.pop()?;
        total -= l;
        segs.last()?;
    }
    segs.push((n_steps - total, Class::Long));
    Some(segs)
}

/// Random switching sequence over `[1, n_steps]` with labels `1..=sigma`.
///
/// Adjacent segments always differ and every label occurs (for `Mixed`, every
/// label occurs in a long segment). Draws are repeated up to 1000 times until
/// these constraints hold.
pub fn random_switching(
    n_steps: usize,
    sigma: usize,
    policy: SegmentPolicy,
    rng: &mut SlsRng,
) -> Result<SwitchingSequence> {
    if sigma == 0 {
        return Err(Error::Infeasible("sigma must be positive".into()));
    }
    if sigma == 1 {
        return SwitchingSequence::constant(1, n_steps);
    }
    match policy {
        SegmentPolicy::Uniform { min, max } => {
            if min == 0 || max < min {
                return Err(Error::Infeasible(format!("bad dwell range [{min}, {max}]")));
            }
            if sigma * min > n_steps {
                return Err(Error::Infeasible(format!(
                    "{sigma} segments of length >= {min} cannot fit in N = {n_steps}"
                )));
            }
            for _ in 0..1000 {
                let lens = uniform_lengths(rng, n_steps, min, max);
                let labels = draw_labels(rng, lens.len(), sigma);
                if (1..=sigma).all(|j| labels.contains(&j)) {
                    let runs: Vec<(usize, usize)> = labels.into_iter().zip(lens).collect();
                    return SwitchingSequence::from_segments(&runs);
                }
            }
        }
        SegmentPolicy::Mixed { order, nu } => {
            let need = 2 * ((8 + nu) * order + 2) + (sigma.saturating_sub(2)) * ((4 + nu) * order + 2);
            if need > n_steps {
                return Err(Error::Infeasible(format!(
                    "mixed sequence with sigma = {sigma} needs N >= {need}"
                )));
            }
            for _ in 0..1000 {
                let Some(segs) = mixed_lengths(rng, n_steps, order, nu) else {
                    continue;
                };
                let labels = draw_labels(rng, segs.len(), sigma);
                let classes: Vec<Class> = segs.iter().map(|s| s.1).collect();
                let long_labels: Vec<usize> = labels
                    .iter()
                    .zip(&classes)
                    .filter(|(_, c)| **c == Class::Long)
                    .map(|(l, _)| *l)
                    .collect();
                let all_classes = [Class::Short, Class::VeryShort].iter().all(|c| classes.contains(c));
                if all_classes && (1..=sigma).all(|j| long_labels.contains(&j)) {
                    let runs: Vec<(usize, usize)> = labels.into_iter().zip(segs.iter().map(|s| s.0)).collect();
                    return SwitchingSequence::from_segments(&runs);
                }
            }
        }
    }
    Err(Error::Infeasible(format!(
        "no switching sequence met the constraints for N = {n_steps}, sigma = {sigma}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_assumptions, SlsModel};
    use crate::rng::{stream, Purpose};

    #[test]
    fn random_sls_is_deterministic_and_passes_checks() {
        let c = SlsConstraints::default();
        let a = random_sls(2, 1, 1, 3, &c, &mut stream(11, 0, Purpose::Model)).unwrap();
        let b = random_sls(2, 1, 1, 3, &c, &mut stream(11, 0, Purpose::Model)).unwrap();
        assert_eq!(a, b);
        let sw = random_switching(300, 3, SegmentPolicy::Uniform { min: 25, max: 50 }, &mut stream(11, 0, Purpose::Switching)).unwrap();
        let model = SlsModel::new(a, sw).unwrap();
        let r = check_assumptions(
            &model,
            &[
                Assumption::StableMinimal,
                Assumption::FeatureSeparation,
                Assumption::CorrectionDetectable,
                Assumption::MatchDetectable,
                Assumption::NoPolesAtZero,
            ],
            &Tolerances::default(),
        );
        assert!(r.all_passed(), "{r:?}");
    }

    #[test]
    fn single_state_draw() {
        let s = random_sls(3, 2, 2, 1, &SlsConstraints::default(), &mut stream(2, 0, Purpose::Model)).unwrap();
        assert_eq!(s.len(), 1);
        assert!(spectral_radius(&s[0].a) <= 0.95 + 1e-12);
    }

    #[test]
    fn impossible_separation_exhausts_budget() {
        let c = SlsConstraints {
            separation: 100.0,
            max_draws: 50,
            ..SlsConstraints::default()
        };
        let e = random_sls(2, 1, 1, 2, &c, &mut stream(3, 0, Purpose::Model)).unwrap_err();
        assert!(matches!(e, Error::BudgetExhausted { .. }));
        assert!(e.to_string().contains("FeatureSeparation"));
    }

    #[test]
    fn uniform_floor_respected() {
        let n = 3;
        let sw = random_switching(1000, 3, SegmentPolicy::Uniform { min: 6 * n + 1, max: 12 * n }, &mut stream(5, 0, Purpose::Switching)).unwrap();
        assert_eq!(sw.n_steps(), 1000);
        assert!(sw.segments().iter().all(|s| s.len() > 6 * n));
        assert_eq!(sw.max_label(), 3);
        let one = random_switching(50, 1, SegmentPolicy::Uniform { min: 5, max: 9 }, &mut stream(5, 0, Purpose::Switching)).unwrap();
        assert!(one.switches().is_empty());
        assert!(random_switching(50, 3, SegmentPolicy::Uniform { min: 20, max: 30 }, &mut stream(5, 0, Purpose::Switching)).is_err());
    }

    #[test]
    fn mixed_contains_every_class() {
        let n = 3;
        let sw = random_switching(1000, 3, SegmentPolicy::Mixed { order: n, nu: 6 }, &mut stream(8, 0, Purpose::Switching)).unwrap();
        let lens: Vec<usize> = sw.segments().iter().map(|s| s.len()).collect();
        assert!(lens.iter().any(|&l| l > 6 * n));
        assert!(lens.iter().any(|&l| (4 * n + 2..=6 * n).contains(&l)));
        assert!(lens.iter().any(|&l| (2 * n + 1..4 * n + 2).contains(&l)));
        assert!(lens.iter().all(|&l| l > 2 * n));
    }
}
