//! Alignment of the recovered submodels to a common state basis.
//!
//! Each representative `P̂_j` lives in its own basis `x̂ = T_j x`. Markov
//! parameters straddling a switch from `j1` to `j2` determine the change of
//! basis `T_{j2} T_{j1}⁻¹`; composing these along a spanning tree of the
//! switch graph rooted at label 1 gives `Π_j = T_j T_1⁻¹`, and
//! `Π_j⁻¹ P̂_j Π_j` puts every submodel in the basis of label 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cond, controllability, observability, pinv};
use crate::model::{run_recursion, DiscreteState, MarkovSequence};

/// Default bound on `cond(Â_{j2})` above which a switch is not used.
pub const COND_MAX: f64 = 1e8;

/// Residuals below this are treated as exact when rejecting outliers.
const RESIDUAL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisOptions {
    pub cond_max: f64,
    /// Average the estimates of every occurrence of an edge (reversed
    /// occurrences inverted) instead of keeping only the first.
    pub average_repeats: bool,
    /// Block rows `ξ` and columns `η` of cross-switch Markov parameters used
    /// per switch, as a multiple of `n` (at least 1). Larger grids need
    /// longer dwell on both sides and lags up to `2·grid·n` in the band.
    pub grid_multiple: usize,
    /// When averaging, occurrences whose residual exceeds this multiple of
    /// the smallest residual of the same pair are dropped.
    pub outlier_factor: Option<f64>,
}

impl Default for BasisOptions {
    fn default() -> Self {
        BasisOptions {
            cond_max: COND_MAX,
            average_repeats: false,
            grid_multiple: 1,
            outlier_factor: None,
        }
    }
}

/// Change of basis `T_to T_from⁻¹` estimated at switch `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEdge {
    pub k: usize,
    pub from: usize,
    pub to: usize,
    #[serde(with = "crate::serde_mat")]
    pub transform: DMatrix<f64>,
    /// `cond(Â_to)`.
    pub cond: f64,
    /// Relative misfit of the cross-switch Markov parameters under the
    /// estimated transform.
    pub residual: f64,
}

/// `T_{j2} T_{j1}⁻¹` from the Markov parameters around a switch at `k` from
/// `j1 = from` to `j2 = to`.
///
/// With `Z_η = [h(k+1, k−η); …; h(k+n, k−η)]`, `X_η = Ô_n(j2)† Z_η` and
/// `Y = [X_1 … X_n] Ĉ_n(j1)†` (`Ĉ_n` the `n`-step controllability matrix),
/// the result is `Â_{j2}⁻¹ Y`. `grid` (at least `n`) replaces `n` as the
/// number of block rows and columns. Needs `φ = j1` on `[k−grid, k−1]` and
/// `φ = j2` on `[k, k+grid]`.
pub fn cross_transform(
    markov: &MarkovSequence,
    reps: &[DiscreteState],
    k: usize,
    from: usize,
    to: usize,
    cond_max: f64,
    grid: usize,
) -> Result<SwitchEdge> {
    let n = markov.order();
    let g = grid.max(n);
    if k <= g || k + g > markov.n_steps() {
        return Err(Error::IndexOutOfRange {
            index: k,
            lo: g + 1,
            hi: markov.n_steps().saturating_sub(g),
        });
    }
    let (p1, p2) = (&reps[from - 1], &reps[to - 1]);
    let c2 = cond(&p2.a);
    if !(c2 <= cond_max) {
        return Err(Error::IllConditioned {
            context: format!("A of label {to} at switch {k}"),
            cond: c2,
        });
    }
    let (p, m) = (markov.outputs(), markov.inputs());
    let obs = observability(&p2.c, &p2.a, g);
    let ctrl = controllability(&p1.a, &p1.b, g);
    // Block (s, η) holds h(k+s, k−η).
    let mut z = DMatrix::zeros(g * p, g * m);
    for s in 1..=g {
        for eta in 1..=g {
            z.view_mut(((s - 1) * p, (eta - 1) * m), (p, m))
                .copy_from(&markov.block(k + s, k - eta)?);
        }
    }
    let y = pinv(&obs) * &z * pinv(&ctrl);
    let a_inv = p2
        .a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned {
            context: format!("A of label {to} at switch {k}"),
            cond: f64::INFINITY,
        })?;
    // The column h(k+s, k) is not used in the estimate; it checks that the
    // switch is not late, which the projection misfit alone cannot see.
    let mut z0 = DMatrix::zeros(g * p, m);
    for s in 1..=g {
        z0.view_mut(((s - 1) * p, 0), (p, m)).copy_from(&markov.block(k + s, k)?);
    }
    let misfit = (&z - &obs * &y * &ctrl).norm_squared() + (&z0 - &obs * &p2.b).norm_squared();
    let scale = z.norm_squared() + z0.norm_squared();
    let residual = if scale > 0.0 { (misfit / scale).sqrt() } else { 0.0 };
    Ok(SwitchEdge {
        k,
        from,
        to,
        transform: a_inv * y,
        cond: c2,
        residual,
    })
}

/// One edge per switch of `phi` (1-based labels over `[1, N]`) whose
/// neighbourhood is long enough, in time order. Switches that cannot be used
/// are reported as diagnostics.
pub fn switch_edges(
    markov: &MarkovSequence,
    reps: &[DiscreteState],
    phi: &[usize],
    opts: &BasisOptions,
) -> (Vec<SwitchEdge>, Vec<String>) {
    let n = markov.order() * opts.grid_multiple.max(1);
    let mut edges = Vec::new();
    let mut diagnostics = Vec::new();
    for k in 2..=phi.len() {
        let (from, to) = (phi[k - 2], phi[k - 1]);
        if from == to {
            continue;
        }
        let before_ok = k > n && phi[k - 1 - n..k - 1].iter().all(|&l| l == from);
        let after_ok = k + n <= phi.len() && phi[k - 1..k + n].iter().all(|&l| l == to);
        if !(before_ok && after_ok) {
            diagnostics.push(format!("switch at {k} ({from} -> {to}): neighbouring segments shorter than {}", n + 1));
            continue;
        }
        match cross_transform(markov, reps, k, from, to, opts.cond_max, n) {
            Ok(edge) => edges.push(edge),
            Err(e) => diagnostics.push(format!("switch at {k} ({from} -> {to}): {e}")),
        }
    }
    (edges, diagnostics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisTransforms {
    /// `pi[j−1] = Π_j = T_j T_1⁻¹`; `pi[0]` is the identity.
    #[serde(with = "crate::serde_mat::vec")]
    pub pi: Vec<DMatrix<f64>>,
    /// Tree edges used, in the order they were added.
    pub path: Vec<SwitchEdge>,
    pub diagnostics: Vec<String>,
}

/// Propagation of `Π` from label 1 over `edges`.
///
/// Each label pair gets one estimate (the first occurrence, or the average
/// of the retained occurrences with `average_repeats`). The tree grows from
/// label 1 by always taking the pair with the smallest residual among those
/// leaving the solved set; residuals below a floor tie and fall back to
/// order of first occurrence. A reversed edge contributes its inverse.
pub fn solve_transforms(sigma: usize, order: usize, edges: &[SwitchEdge], opts: &BasisOptions) -> Result<BasisTransforms> {
    struct Pair {
        labels: (usize, usize),
        /// `T_b T_a⁻¹` with `a < b`.
        sum: DMatrix<f64>,
        count: usize,
        residual: f64,
        first: SwitchEdge,
    }
    let mut diagnostics = Vec::new();
    let mut pairs: Vec<Pair> = Vec::new();
    let best = |a: usize, b: usize| {
        edges
            .iter()
            .filter(|e| (e.from.min(e.to), e.from.max(e.to)) == (a, b))
            .map(|e| e.residual)
            .fold(f64::INFINITY, f64::min)
    };
    for e in edges {
        let (a, b) = (e.from.min(e.to), e.from.max(e.to));
        let m = if e.from == a {
            Some(e.transform.clone())
        } else {
            e.transform.clone().try_inverse()
        };
        let Some(m) = m else {
            diagnostics.push(format!("switch at {}: singular transform", e.k));
            continue;
        };
        let outlier = opts.outlier_factor.is_some_and(|f| e.residual > f * best(a, b).max(RESIDUAL_FLOOR));
        if opts.average_repeats && outlier {
            diagnostics.push(format!(
                "switch at {}: residual {:.3e} rejected as an outlier",
                e.k, e.residual
            ));
            continue;
        }
        match pairs.iter_mut().find(|p| p.labels == (a, b)) {
            Some(p) if opts.average_repeats => {
                p.sum += m;
                p.count += 1;
                p.residual += e.residual;
            }
            Some(_) => {}
            None => pairs.push(Pair {
                labels: (a, b),
                sum: m,
                count: 1,
                residual: e.residual,
                first: e.clone(),
            }),
        }
    }
    for p in pairs.iter_mut() {
        p.sum /= p.count as f64;
        p.residual /= p.count as f64;
    }

    if sigma == 0 {
        return Ok(BasisTransforms {
            pi: Vec::new(),
            path: Vec::new(),
            diagnostics,
        });
    }
    let mut pi: Vec<Option<DMatrix<f64>>> = vec![None; sigma];
    pi[0] = Some(DMatrix::identity(order, order));
    let mut path = Vec::new();
    loop {
        let solved = |l: usize| l <= sigma && pi[l - 1].is_some();
        let next = pairs
            .iter()
            .filter(|p| p.labels.1 <= sigma && solved(p.labels.0) != solved(p.labels.1))
            .min_by(|x, y| x.residual.max(RESIDUAL_FLOOR).total_cmp(&y.residual.max(RESIDUAL_FLOOR)));
        let Some(p) = next else { break };
        let (a, b) = p.labels;
        let (u, v, step) = if solved(a) {
            (a, b, Some(p.sum.clone()))
        } else {
            (b, a, p.sum.clone().try_inverse())
        };
        let Some(step) = step else {
            diagnostics.push(format!("labels {a} and {b}: singular averaged transform"));
            pairs.retain(|q| q.labels != (a, b));
            continue;
        };
        let pu = pi[u - 1].clone().expect("solved");
        pi[v - 1] = Some(step * pu);
        path.push(p.first.clone());
    }
    let missing: Vec<usize> = (1..=sigma).filter(|&j| pi[j - 1].is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::Unreachable(missing));
    }
    Ok(BasisTransforms {
        pi: pi.into_iter().map(|p| p.expect("checked")).collect(),
        path,
        diagnostics,
    })
}

/// `Π_j⁻¹ P̂_j Π_j` for every label.
pub fn apply_transforms(reps: &[DiscreteState], pi: &[DMatrix<f64>]) -> Result<Vec<DiscreteState>> {
    if reps.len() != pi.len() {
        return Err(Error::Dimension(format!("{} submodels, {} transforms", reps.len(), pi.len())));
    }
    reps.iter()
        .zip(pi)
        .enumerate()
        .map(|(j, (q, t))| {
            q.similar(t).ok_or_else(|| Error::IllConditioned {
                context: format!("transform of label {}", j + 1),
                cond: f64::INFINITY,
            })
        })
        .collect()
}

/// Edges, transforms and aligned submodels in one call.
pub fn align(
    markov: &MarkovSequence,
    reps: &[DiscreteState],
    phi: &[usize],
    opts: &BasisOptions,
) -> Result<(BasisTransforms, Vec<DiscreteState>)> {
    let (edges, diag) = switch_edges(markov, reps, phi, opts);
    let mut bt = solve_transforms(reps.len(), markov.order(), &edges, opts)?;
    bt.diagnostics.splice(0..0, diag);
    let aligned = apply_transforms(reps, &bt.pi)?;
    Ok((bt, aligned))
}

/// Output of the switched model `(states, phi)` from `x(1) = x0`, with
/// `inputs[k−1] = u(k)`.
pub fn predict_output(
    states: &[DiscreteState],
    phi: &[usize],
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    if inputs.len() > phi.len() {
        return Err(Error::Dimension(format!("{} inputs for {} labels", inputs.len(), phi.len())));
    }
    if let Some(&bad) = phi.iter().find(|&&l| l == 0 || l > states.len()) {
        return Err(Error::Format(format!("label {bad} outside 1..={}", states.len())));
    }
    run_recursion(|k| &states[phi[k - 1] - 1], x0, 1, inputs)
}
