//! End-to-end estimation: realization, clustering, switch detection and
//! basis alignment, followed by metrics when the ground truth is known.

pub mod metrics;
mod montecarlo;

pub use metrics::{delta_p, fit_phi, gauge_alignment, hankel_mismatch, match_labels, rms, vaf};
pub use montecarlo::{draw_model, monte_carlo, MonteCarloConfig, MonteCarloRecord, MonteCarloResult, MonteCarloRow};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{align, predict_output, BasisOptions, BasisTransforms};
use crate::cluster::{
    auto_epsilon, cluster_states, diff_norms, feature_m, hankel_scale, recluster, stationary_from_norms,
    ClusterParams, ClusterResult, Interval, StationarySet,
};
use crate::error::Error;
use crate::exec::Execution;
use crate::hankel::window;
use crate::ltv::{realize_at, realize_range, LtvRealization};
use crate::model::{simulate, DiscreteState, MarkovSequence, SlsModel};
use crate::switch::{
    backward_correction, deviation, detect_all, forward_correction, match_backward_stat, match_forward_stat,
    DetectTolerances, Stages, SwitchEstimate,
};

/// How `ε_Z` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Absolute(f64),
    /// Multiple of the largest `‖H(k)‖_F`.
    Relative(f64),
    /// [`auto_epsilon`] with the given relative floor and quantile factor.
    Auto { rel: f64, factor: f64 },
}

/// Settings used only on noisy data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisySettings {
    /// Clusters whose longest interval is shorter are merged away
    /// (`None`: `ν n`).
    pub min_support: Option<usize>,
    /// Merge down to this many clusters when known.
    pub target_sigma: Option<usize>,
    /// Detection tolerances are this multiple of the median statistic over
    /// stationary indices.
    pub calibration_factor: f64,
    /// DBSCAN radius is this multiple of the median within-interval feature
    /// deviation (never below the configured radius).
    pub radius_factor: f64,
    /// Stationary samples per interval used for calibration.
    pub samples_per_interval: usize,
}

impl Default for NoisySettings {
    fn default() -> Self {
        NoisySettings {
            min_support: None,
            target_sigma: None,
            calibration_factor: 10.0,
            radius_factor: 4.0,
            samples_per_interval: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub epsilon_z: Threshold,
    pub nu: usize,
    pub cluster: ClusterParams,
    pub tolerances: DetectTolerances,
    pub stages: Stages,
    pub basis: BasisOptions,
    /// Calibrate thresholds on the data and merge spurious clusters.
    pub noisy: Option<NoisySettings>,
    pub exec: Execution,
    /// Recorded in the report; the pipeline itself draws no random numbers.
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            epsilon_z: Threshold::Relative(1e-4),
            nu: 6,
            cluster: ClusterParams::default(),
            tolerances: DetectTolerances::default(),
            stages: Stages::default(),
            basis: BasisOptions::default(),
            noisy: None,
            exec: Execution::Parallel,
            seed: None,
        }
    }
}

impl PipelineConfig {
    /// Exact-data settings with an absolute `ε_Z = 10⁻⁴`.
    pub fn paper() -> Self {
        PipelineConfig {
            epsilon_z: Threshold::Absolute(1e-4),
            ..Default::default()
        }
    }

    /// Settings for Markov parameters corrupted by noise.
    pub fn noisy(target_sigma: Option<usize>) -> Self {
        PipelineConfig {
            epsilon_z: Threshold::Auto { rel: 1e-4, factor: 1.5 },
            tolerances: DetectTolerances {
                strict: false,
                slack: 2,
                ..Default::default()
            },
            basis: BasisOptions {
                average_repeats: true,
                grid_multiple: 2,
                outlier_factor: Some(3.0),
                ..Default::default()
            },
            noisy: Some(NoisySettings {
                target_sigma,
                ..Default::default()
            }),
            ..Default::default()
        }
    }
}

/// Ground truth for evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub model: &'a SlsModel,
    /// Exact Markov parameters for `ε_H`; generated from `model` when absent.
    pub markov: Option<&'a MarkovSequence>,
    /// Input for the output-prediction check, from zero initial state.
    pub inputs: Option<&'a [DVector<f64>]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Per output channel, percent.
    pub vaf: Option<Vec<f64>>,
    /// Same prediction with the unaligned representatives.
    pub vaf_unaligned: Option<Vec<f64>>,
    /// Over the window, after label matching.
    pub fit_phi: Option<f64>,
    pub delta_p: Option<f64>,
    /// `ε_H(k)` over the window.
    pub hankel_mismatch: Option<Vec<f64>>,
    pub hankel_mismatch_rms: Option<f64>,
    /// True label of each estimated label.
    pub label_map: Option<Vec<Option<usize>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Realize,
    Stationary,
    Cluster,
    Detect,
    Align,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Realize => "realize",
            Stage::Stationary => "stationary",
            Stage::Cluster => "cluster",
            Stage::Detect => "detect",
            Stage::Align => "align",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub config: PipelineConfig,
    pub n_steps: usize,
    pub order: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub window: (usize, usize),
    /// Thresholds actually used.
    pub epsilon_z: Option<f64>,
    pub radius: Option<f64>,
    pub tolerances: Option<DetectTolerances>,
    pub stationary: Option<StationarySet>,
    pub clusters: Option<ClusterResult>,
    pub switching: Option<SwitchEstimate>,
    /// `φ̂` over `[1, N]`.
    pub phi_hat: Option<Vec<usize>>,
    pub transforms: Option<BasisTransforms>,
    /// Submodels in the common basis.
    pub submodels: Option<Vec<DiscreteState>>,
    pub metrics: Metrics,
    /// Stages completed, in order.
    pub stages: Vec<Stage>,
    pub diagnostics: Vec<String>,
}

/// A stage failure with everything computed before it.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub error: Error,
    pub partial: Box<EstimationReport>,
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage failed: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs the whole pipeline. With `truth`, also computes metrics.
pub fn meta_run(
    markov: &MarkovSequence,
    config: &PipelineConfig,
    truth: Option<Truth<'_>>,
) -> std::result::Result<EstimationReport, PipelineError> {
    meta_run_until(markov, config, truth, Stage::Evaluate)
}

/// [`meta_run`] stopped after stage `last`; later fields stay empty.
pub fn meta_run_until(
    markov: &MarkovSequence,
    config: &PipelineConfig,
    truth: Option<Truth<'_>>,
    last: Stage,
) -> std::result::Result<EstimationReport, PipelineError> {
    let n = markov.order();
    let mut report = EstimationReport {
        config: config.clone(),
        n_steps: markov.n_steps(),
        order: n,
        inputs: markov.inputs(),
        outputs: markov.outputs(),
        window: (0, 0),
        epsilon_z: None,
        radius: None,
        tolerances: None,
        stationary: None,
        clusters: None,
        switching: None,
        phi_hat: None,
        transforms: None,
        submodels: None,
        metrics: Metrics::default(),
        stages: Vec::new(),
        diagnostics: Vec::new(),
    };
    macro_rules! stage {
        ($stage:expr, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    return Err(PipelineError {
                        stage: $stage,
                        error,
                        partial: Box::new(report),
                    })
                }
            }
        };
    }

    let win = stage!(Stage::Stationary, window(markov.n_steps(), n));
    report.window = win;

    // Stationary set.
    let norms = stage!(Stage::Stationary, diff_norms(markov, config.exec));
    let eps = match config.epsilon_z {
        Threshold::Absolute(e) => e,
        Threshold::Relative(r) => r * stage!(Stage::Stationary, hankel_scale(markov)),
        Threshold::Auto { rel, factor } => auto_epsilon(&norms, stage!(Stage::Stationary, hankel_scale(markov)), rel, factor),
    };
    report.epsilon_z = Some(eps);
    if !(eps > 0.0) {
        stage!(Stage::Stationary, Err(Error::Infeasible("epsilon_z must be positive".into())));
    }
    let ss = stage!(Stage::Stationary, stationary_from_norms(norms, win, n, eps, config.nu));
    report.stationary = Some(ss.clone());
    report.stages.push(Stage::Stationary);
    if last == Stage::Stationary {
        return Ok(report);
    }

    // Realization at the midpoint of every stationary run.
    let anchors: Vec<usize> = ss.runs.iter().map(Interval::gamma).collect();
    let real = stage!(Stage::Realize, realize_range(markov, &anchors, config.exec));
    report.stages.push(Stage::Realize);
    if last == Stage::Realize {
        return Ok(report);
    }

    // Discrete states.
    let mut params = config.cluster;
    if let Some(noisy) = &config.noisy {
        params.radius = stage!(Stage::Cluster, calibrated_radius(markov, &ss, &real, params.radius, noisy, config.exec));
    }
    report.radius = Some(params.radius);
    let mut clusters = stage!(Stage::Cluster, cluster_states(&real, &ss, &params));
    if let Some(noisy) = &config.noisy {
        let support = noisy.min_support.unwrap_or(config.nu * n);
        let before = clusters.sigma_hat;
        clusters = stage!(Stage::Cluster, recluster(&clusters, &real, support, noisy.target_sigma));
        if clusters.sigma_hat != before {
            report
                .diagnostics
                .push(format!("re-clustering merged {before} clusters into {}", clusters.sigma_hat));
        }
    }
    report.clusters = Some(clusters.clone());
    report.stages.push(Stage::Cluster);
    if last == Stage::Cluster {
        return Ok(report);
    }

    // Switches.
    let mut tol = config.tolerances;
    if let Some(noisy) = &config.noisy {
        tol = stage!(Stage::Detect, calibrated_tolerances(markov, &clusters, tol, noisy, config.exec));
        tol.min_run_span = tol.min_run_span.max(n);
    }
    report.tolerances = Some(tol);
    let est = stage!(Stage::Detect, detect_all(markov, &real, &ss, &clusters, &tol, config.stages, config.exec));
    report.diagnostics.extend(est.diagnostics.iter().cloned());
    let phi = stage!(
        Stage::Detect,
        est.extended(markov.n_steps()).ok_or(Error::NoBoundarySwitch)
    );
    report.switching = Some(est);
    report.phi_hat = Some(phi.clone());
    report.stages.push(Stage::Detect);
    if last == Stage::Detect {
        return Ok(report);
    }

    // Common basis.
    let (bt, aligned) = stage!(Stage::Align, align(markov, &clusters.representatives, &phi, &config.basis));
    report.diagnostics.extend(bt.diagnostics.iter().cloned());
    report.transforms = Some(bt);
    report.submodels = Some(aligned.clone());
    report.stages.push(Stage::Align);
    if last == Stage::Align {
        return Ok(report);
    }

    if let Some(truth) = truth {
        let m = stage!(Stage::Evaluate, evaluate(markov, &clusters, &aligned, &phi, win, truth));
        report.metrics = m;
        report.stages.push(Stage::Evaluate);
    }
    Ok(report)
}

fn evaluate(
    markov: &MarkovSequence,
    clusters: &ClusterResult,
    aligned: &[DiscreteState],
    phi: &[usize],
    win: (usize, usize),
    truth: Truth<'_>,
) -> crate::Result<Metrics> {
    let model = truth.model;
    if model.n_steps() != markov.n_steps() {
        return Err(Error::Dimension(format!(
            "truth spans {} steps, Markov parameters {}",
            model.n_steps(),
            markov.n_steps()
        )));
    }
    let mut out = Metrics::default();
    let map = match_labels(&model.states, aligned);
    let mapped: Vec<usize> = phi[win.0 - 1..win.1]
        .iter()
        .map(|&l| map[l - 1].unwrap_or(0))
        .collect();
    out.fit_phi = Some(fit_phi(&model.switching.labels()[win.0 - 1..win.1], &mapped)?);
    if aligned.len() == model.sigma() {
        out.delta_p = Some(delta_p(&model.states, aligned)?);
    }
    out.label_map = Some(map);

    let generated;
    let exact = match truth.markov {
        Some(m) => m,
        None => {
            generated = crate::model::generate_markov(model, markov.band());
            &generated
        }
    };
    let eh = hankel_mismatch(exact, aligned, phi)?;
    out.hankel_mismatch_rms = Some(rms(&eh));
    out.hankel_mismatch = Some(eh);

    if let Some(u) = truth.inputs {
        let x0 = DVector::zeros(model.order());
        let y = simulate(model, &x0, 1, u)?;
        let yh = predict_output(aligned, phi, &x0, u)?;
        out.vaf = Some(vaf(&y, &yh)?);
        let yu = predict_output(&clusters.representatives, phi, &x0, u)?;
        out.vaf_unaligned = Some(vaf(&y, &yu)?);
    }
    Ok(out)
}

/// Evenly spaced indices of `[α, β]`, at most `count` of them.
fn samples(iv: &Interval, count: usize) -> Vec<usize> {
    let count = count.max(1).min(iv.span() + 1);
    if count == 1 {
        return vec![iv.gamma()];
    }
    (0..count).map(|i| iv.alpha + i * iv.span() / (count - 1)).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    }
}

/// `max(base, factor · median |M(Â(k)) − median_interval|)` over samples of
/// the long intervals.
fn calibrated_radius(
    markov: &MarkovSequence,
    ss: &StationarySet,
    real: &LtvRealization,
    base: f64,
    noisy: &NoisySettings,
    exec: Execution,
) -> crate::Result<f64> {
    let per: Vec<crate::Result<Vec<f64>>> = exec.map(&ss.intervals, |iv| {
        let feats = samples(iv, noisy.samples_per_interval)
            .into_iter()
            .map(|k| match real.get(k) {
                Some(q) => Ok(feature_m(&q.a)),
                None => realize_at(markov, k).map(|q| feature_m(&q.a)),
            })
            .collect::<crate::Result<Vec<f64>>>()?;
        let mid = median(feats.clone());
        Ok(feats.into_iter().map(|f| (f - mid).abs()).collect())
    });
    let mut devs = Vec::new();
    for p in per {
        devs.extend(p?);
    }
    Ok(base.max(noisy.radius_factor * median(devs)))
}

/// Tolerances set to `factor` times the median detector statistic over
/// stationary indices of the clustered intervals.
fn calibrated_tolerances(
    markov: &MarkovSequence,
    clusters: &ClusterResult,
    base: DetectTolerances,
    noisy: &NoisySettings,
    exec: Execution,
) -> crate::Result<DetectTolerances> {
    let items: Vec<(Interval, usize)> = clusters
        .intervals
        .iter()
        .copied()
        .zip(clusters.assignments.iter().copied())
        .collect();
    let stats: Vec<crate::Result<(Vec<f64>, Vec<f64>)>> = exec.map(&items, |&(iv, label)| {
        let rep = &clusters.representatives[label - 1];
        let mut corr = Vec::new();
        let mut matched = Vec::new();
        for k in samples(&iv, noisy.samples_per_interval) {
            corr.push(deviation(&forward_correction(markov, k)?));
            corr.push(deviation(&backward_correction(markov, k)?));
            matched.push(match_forward_stat(markov, rep, k)?.2);
            matched.push(match_backward_stat(markov, rep, k)?.2);
        }
        Ok((corr, matched))
    });
    let (mut corr, mut matched) = (Vec::new(), Vec::new());
    for s in stats {
        let (c, m) = s?;
        corr.extend(c);
        matched.extend(m);
    }
    Ok(DetectTolerances {
        correction: base.correction.max(noisy.calibration_factor * median(corr)),
        matching: base.matching.max(noisy.calibration_factor * median(matched)),
        ..base
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_markov, paper_example_states, paper_multisine, Band, SwitchingSequence};

    fn paper_model(runs: &[(usize, usize)]) -> (SlsModel, MarkovSequence) {
        let m = SlsModel::new(paper_example_states(), SwitchingSequence::from_segments(runs).unwrap()).unwrap();
        let seq = generate_markov(&m, Band::pipeline(3));
        (m, seq)
    }

    #[test]
    fn exact_end_to_end() {
        let (m, seq) = paper_model(&[(1, 70), (2, 16), (3, 9), (1, 45), (3, 40), (2, 8), (1, 20), (2, 60)]);
        let u = paper_multisine(m.n_steps(), 2);
        let truth = Truth {
            model: &m,
            markov: Some(&seq),
            inputs: Some(&u),
        };
        let r = meta_run(&seq, &PipelineConfig::paper(), Some(truth)).unwrap();
        assert_eq!(r.clusters.as_ref().unwrap().sigma_hat, 3);
        assert_eq!(r.metrics.fit_phi, Some(100.0));
        assert!(r.metrics.delta_p.unwrap() < 1e-7);
        assert!(r.metrics.hankel_mismatch.as_ref().unwrap().iter().all(|&e| e <= 1e-7));
        assert!(r.metrics.vaf.as_ref().unwrap().iter().all(|&v| v > 99.999));
        assert_eq!(r.stages.last(), Some(&Stage::Evaluate));
    }

    #[test]
    fn single_state_report() {
        let (m, seq) = paper_model(&[(2, 80)]);
        let r = meta_run(&seq, &PipelineConfig::default(), Some(Truth { model: &m, markov: None, inputs: None })).unwrap();
        assert_eq!(r.clusters.unwrap().sigma_hat, 1);
        assert!(r.phi_hat.unwrap().iter().all(|&l| l == 1));
        assert_eq!(r.transforms.unwrap().pi.len(), 1);
        assert_eq!(r.metrics.fit_phi, Some(100.0));
    }

    #[test]
    fn failure_keeps_partial_results() {
        let (_, seq) = paper_model(&[(1, 60), (2, 60)]);
        let cfg = PipelineConfig {
            nu: 100,
            ..PipelineConfig::paper()
        };
        let e = meta_run(&seq, &cfg, None).unwrap_err();
        assert_eq!(e.stage, Stage::Stationary);
        assert!(matches!(e.error, Error::NoLongIntervals { .. }));
        assert!(e.partial.epsilon_z.is_some());
        assert!(e.to_string().starts_with("stationary stage failed"));
    }

    #[test]
    fn stops_after_requested_stage() {
        let (_, seq) = paper_model(&[(1, 60), (3, 60)]);
        let r = meta_run_until(&seq, &PipelineConfig::paper(), None, Stage::Cluster).unwrap();
        assert_eq!(r.stages, vec![Stage::Stationary, Stage::Realize, Stage::Cluster]);
        assert_eq!(r.clusters.unwrap().sigma_hat, 2);
        assert!(r.switching.is_none() && r.submodels.is_none());
    }

    #[test]
    fn report_round_trips_through_json() {
        let (m, seq) = paper_model(&[(1, 60), (3, 60)]);
        let r = meta_run(&seq, &PipelineConfig::default(), Some(Truth { model: &m, markov: None, inputs: None })).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        let back: EstimationReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn deterministic_across_execution_modes() {
        let (_, seq) = paper_model(&[(1, 60), (2, 30), (3, 60)]);
        let a = meta_run(&seq, &PipelineConfig::default(), None).unwrap();
        let b = meta_run(
            &seq,
            &PipelineConfig {
                exec: Execution::Sequential,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        assert_eq!(a.phi_hat, b.phi_hat);
        assert_eq!(a.submodels, b.submodels);
    }
}
