use std::fmt;
use std::fs::{self, File};
use std::path::Path;

use slsr::cluster::ClusterResult;
use slsr::hankel::{add_noise, window, NoiseMode};
use slsr::io;
use slsr::ltv::realize_window;
use slsr::model::{
    generate_markov, paper_example_states, paper_multisine, random_sls, random_switching, Band, MarkovSequence,
    SegmentPolicy, SlsConstraints, SlsModel, SwitchingSequence,
};
use slsr::pipeline::{
    meta_run_until, monte_carlo, EstimationReport, MonteCarloConfig, PipelineConfig, Stage, Threshold, Truth,
};
use slsr::rng::{stream, Purpose};
use slsr::switch::Stages;
use slsr::Execution;

use crate::{Cli, Command, ModelPreset, MonteCarloArgs, PipelinePreset, SimulateArgs, StageArgs};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FORMAT: u8 = 2;
pub const EXIT_STAGE: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Invalid arguments or infeasible dimensions.
    Usage(String),
    /// Unreadable or malformed files.
    Format(String),
    /// A numerical stage failed; the message names the stage.
    Stage(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Format(_) => EXIT_FORMAT,
            CliError::Stage(_) => EXIT_STAGE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(s) | CliError::Format(s) | CliError::Stage(s) => f.write_str(s),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn file_error(path: &Path) -> impl FnOnce(slsr::Error) -> CliError + '_ {
    move |e| CliError::Format(format!("{}: {e}", path.display()))
}

fn create(dir: &Path, name: &str) -> Result<File> {
    let path = dir.join(name);
    File::create(&path).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

fn save_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    io::save_json(value, &path).map_err(file_error(&path))
}

fn written(dir: &Path, name: &str) -> Result<()> {
    println!("wrote {}", dir.join(name).display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let dir = cli.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| CliError::Format(format!("{}: {e}", dir.display())))?;
    match &cli.command {
        Command::Simulate(a) => simulate(a, dir),
        Command::Realize(a) => realize(&load_markov(&a.markov)?, exec(a.sequential), dir),
        Command::Cluster(a) => staged(a, Stage::Cluster, dir),
        Command::Detect(a) => staged(a, Stage::Detect, dir),
        Command::Align(a) => staged(a, Stage::Align, dir),
        Command::Meta(a) => staged(a, Stage::Evaluate, dir),
        Command::Montecarlo(a) => montecarlo(a, dir),
    }
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn load_markov(path: &Path) -> Result<MarkovSequence> {
    io::load_markov(path).map_err(file_error(path))
}

fn parse_segments(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|part| {
            let (l, n) = part
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("segment {part:?}: expected label:length")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("segment {part:?}: {s:?} is not a positive integer")))
            };
            Ok((parse(l)?, parse(n)?))
        })
        .collect()
}

fn parse_band(text: Option<&str>, order: usize) -> Result<Band> {
    match text {
        None => Ok(Band::pipeline(order)),
        Some("full") => Ok(Band::Full),
        Some(s) => s
            .parse()
            .map(Band::Lags)
            .map_err(|_| CliError::Usage(format!("band {s:?}: expected a lag count or \"full\""))),
    }
}

fn simulate(a: &SimulateArgs, dir: &Path) -> Result<()> {
    let usage = |e: slsr::Error| CliError::Usage(e.to_string());
    let loaded: Option<SlsModel> = match &a.model {
        Some(p) => Some(io::load_json(p).map_err(file_error(p))?),
        None => None,
    };
    let states = match (&loaded, a.preset) {
        (Some(m), _) => m.states.clone(),
        (None, Some(ModelPreset::Paper)) => paper_example_states(),
        (None, None) => random_sls(
            a.order,
            a.inputs,
            a.outputs,
            a.sigma,
            &SlsConstraints::default(),
            &mut stream(a.seed, 0, Purpose::Model),
        )
        .map_err(usage)?,
    };
    let order = states[0].order();
    let switching = if let Some(text) = &a.segments {
        SwitchingSequence::from_segments(&parse_segments(text)?).map_err(usage)?
    } else if let Some(m) = &loaded {
        m.switching.clone()
    } else {
        window(a.n_steps, order).map_err(usage)?;
        random_switching(
            a.n_steps,
            states.len(),
            SegmentPolicy::Uniform {
                min: a.min_dwell,
                max: a.max_dwell,
            },
            &mut stream(a.seed, 0, Purpose::Switching),
        )
        .map_err(usage)?
    };
    window(switching.n_steps(), order).map_err(usage)?;
    let model = SlsModel::new(states, switching).map_err(usage)?;
    let band = parse_band(a.band.as_deref(), order)?;
    let mut markov = generate_markov(&model, band);
    let mut rng = stream(a.seed, 0, Purpose::Noise);
    if let Some(snr) = a.snr_db {
        markov = add_noise(&markov, NoiseMode::SnrDb(snr), &mut rng);
    } else if let Some(eps) = a.noise_eps {
        if !(eps >= 0.0) {
            return Err(CliError::Usage("noise-eps must be non-negative".into()));
        }
        markov = add_noise(&markov, NoiseMode::Amplitude(eps), &mut rng);
    }
    save_json(dir, "model.json", &model)?;
    written(dir, "model.json")?;
    io::write_markov(&markov, create(dir, "markov.csv")?).map_err(file_error(&dir.join("markov.csv")))?;
    written(dir, "markov.csv")
}

fn realize(markov: &MarkovSequence, exec: Execution, dir: &Path) -> Result<()> {
    let real = realize_window(markov, exec).map_err(|e| CliError::Stage(format!("realize stage failed: {e}")))?;
    save_json(dir, "realization.json", &real)?;
    written(dir, "realization.json")?;
    io::write_eigen_csv(&real, create(dir, "eigen.csv")?).map_err(file_error(&dir.join("eigen.csv")))?;
    written(dir, "eigen.csv")
}

fn parse_detectors(names: &[String]) -> Result<Stages> {
    let mut s = Stages {
        markov_match: false,
        correction: false,
        signature: false,
    };
    for n in names {
        match n.trim() {
            "markov" => s.markov_match = true,
            "correction" => s.correction = true,
            "signature" => s.signature = true,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown detector {other:?}; expected markov, correction or signature"
                )))
            }
        }
    }
    Ok(s)
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{name} must be positive")))
    }
}

fn pipeline_config(a: &StageArgs) -> Result<PipelineConfig> {
    let mut c = match a.preset {
        PipelinePreset::Paper => PipelineConfig::paper(),
        PipelinePreset::Default => PipelineConfig::default(),
        PipelinePreset::Noisy => PipelineConfig::noisy(a.target_sigma),
    };
    if let Some(e) = a.epsilon_z {
        c.epsilon_z = Threshold::Absolute(positive("epsilon-z", e)?);
    }
    if let Some(r) = a.epsilon_rel {
        c.epsilon_z = Threshold::Relative(positive("epsilon-rel", r)?);
    }
    if let Some(nu) = a.nu {
        c.nu = nu;
    }
    if let Some(r) = a.radius {
        c.cluster.radius = positive("radius", r)?;
    }
    if let Some(p) = a.min_points {
        if p == 0 {
            return Err(CliError::Usage("min-points must be positive".into()));
        }
        c.cluster.min_points = p;
    }
    if let Some(d) = &a.detectors {
        c.stages = parse_detectors(d)?;
    }
    if let (Some(t), Some(noisy)) = (a.target_sigma, c.noisy.as_mut()) {
        noisy.target_sigma = Some(t);
    }
    c.exec = exec(a.input.sequential);
    Ok(c)
}

fn staged(a: &StageArgs, last: Stage, dir: &Path) -> Result<()> {
    let config = pipeline_config(a)?;
    let markov = load_markov(&a.input.markov)?;
    let model: Option<SlsModel> = match &a.model {
        Some(p) => Some(io::load_json(p).map_err(file_error(p))?),
        None => None,
    };
    let inputs = match (&model, a.multisine) {
        (Some(m), true) => Some(paper_multisine(m.n_steps(), m.inputs())),
        _ => None,
    };
    let truth = model.as_ref().map(|m| Truth {
        model: m,
        markov: None,
        inputs: inputs.as_deref(),
    });
    let (report, failure) = match meta_run_until(&markov, &config, truth, last) {
        Ok(r) => (r, None),
        Err(e) => {
            let msg = e.to_string();
            (*e.partial, Some(msg))
        }
    };
    write_artifacts(&report, model.as_ref(), dir)?;
    if let Some(msg) = failure {
        return Err(CliError::Stage(msg));
    }
    summarize(&report);
    Ok(())
}

fn write_artifacts(r: &EstimationReport, model: Option<&SlsModel>, dir: &Path) -> Result<()> {
    save_json(dir, "report.json", r)?;
    written(dir, "report.json")?;
    let csv_err = |name: &str| {
        let path = dir.join(name);
        move |e: slsr::Error| CliError::Format(format!("{}: {e}", path.display()))
    };
    if let Some(ss) = &r.stationary {
        io::write_stationary_csv(ss, create(dir, "stationary.csv")?).map_err(csv_err("stationary.csv"))?;
        written(dir, "stationary.csv")?;
    }
    if let Some(c) = &r.clusters {
        io::write_clusters_csv(c, create(dir, "clusters.csv")?).map_err(csv_err("clusters.csv"))?;
        written(dir, "clusters.csv")?;
    }
    if let Some(phi) = &r.phi_hat {
        let truth = model.filter(|m| m.n_steps() == phi.len()).map(|m| m.switching.labels());
        io::write_phi_csv(truth, phi, r.switching.as_ref(), create(dir, "phi_hat.csv")?)
            .map_err(csv_err("phi_hat.csv"))?;
        written(dir, "phi_hat.csv")?;
    }
    if let Some(s) = &r.submodels {
        save_json(dir, "submodels.json", s)?;
        written(dir, "submodels.json")?;
    }
    if let Some(eh) = &r.metrics.hankel_mismatch {
        io::write_mismatch_csv(r.window.0, eh, create(dir, "mismatch.csv")?).map_err(csv_err("mismatch.csv"))?;
        written(dir, "mismatch.csv")?;
    }
    Ok(())
}

fn summarize(r: &EstimationReport) {
    if let Some(c) = &r.clusters {
        println!("sigma_hat = {}", c.sigma_hat);
        print_features(c);
    }
    if let Some(s) = &r.switching {
        println!("switches = {:?}", s.switches.iter().map(|d| d.k).collect::<Vec<_>>());
    }
    let m = &r.metrics;
    if let Some(f) = m.fit_phi {
        println!("fit_phi = {f:.4}");
    }
    if let Some(d) = m.delta_p {
        println!("delta_p = {d:.6e}");
    }
    if let Some(e) = m.hankel_mismatch_rms {
        println!("rms_mismatch = {e:.6e}");
    }
    if let Some(v) = &m.vaf {
        println!("vaf = {v:?}");
    }
    for d in &r.diagnostics {
        println!("note: {d}");
    }
}

fn print_features(c: &ClusterResult) {
    for l in 1..=c.sigma_hat {
        println!("  label {l}: feature {:.6}", c.rep_feature(l));
    }
}

fn montecarlo(a: &MonteCarloArgs, dir: &Path) -> Result<()> {
    let mut cfg = MonteCarloConfig::desk_scale(a.seed);
    cfg.runs = a.runs;
    cfg.snr_db = a.snr.clone();
    cfg.order = a.order;
    cfg.sigma = a.sigma;
    cfg.n_steps = a.n_steps;
    cfg.pipeline = PipelineConfig::noisy(Some(a.sigma));
    cfg.exec = exec(a.sequential);
    window(cfg.n_steps, cfg.order).map_err(|e| CliError::Usage(e.to_string()))?;
    let result = monte_carlo(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    save_json(dir, "montecarlo.json", &result)?;
    written(dir, "montecarlo.json")?;
    io::write_table_csv(&result, create(dir, "table.csv")?).map_err(file_error(&dir.join("table.csv")))?;
    written(dir, "table.csv")?;
    io::write_records_csv(&result, create(dir, "records.csv")?).map_err(file_error(&dir.join("records.csv")))?;
    written(dir, "records.csv")?;
    println!("{:>8} {:>12} {:>10} {:>12} {:>6}", "SNR(dB)", "delta_p", "FIT_phi", "rms_mismatch", "failed");
    let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    for row in &result.rows {
        println!(
            "{:>8} {:>12} {:>10} {:>12} {:>6}",
            row.snr_db,
            show(row.delta_p),
            show(row.fit_phi),
            show(row.rms_hankel_mismatch),
            row.failed
        );
    }
    Ok(())
}
