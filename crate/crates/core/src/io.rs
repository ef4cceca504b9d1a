//! File formats.
//!
//! A Markov file is one line of JSON header
//! `{"N", "p", "m", "n", "band", "noise_bound"}` (`band` is the largest
//! stored lag or `"full"`) followed by CSV rows `k,l,h_11,…,h_pm` with the
//! block entries in row-major order, one row per stored `(k, ℓ)`. Models
//! and reports are JSON; the remaining artifacts are headed CSV tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterResult, StationarySet};
use crate::error::{Error, Result};
use crate::linalg::eigenvalues;
use crate::ltv::LtvRealization;
use crate::model::{Band, MarkovSequence};
use crate::pipeline::MonteCarloResult;
use crate::switch::SwitchEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum BandField {
    Lags(usize),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MarkovHeader {
    #[serde(rename = "N")]
    n_steps: usize,
    p: usize,
    m: usize,
    n: usize,
    band: BandField,
    noise_bound: f64,
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

pub fn write_markov<W: Write>(seq: &MarkovSequence, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let header = MarkovHeader {
        n_steps: seq.n_steps(),
        p: seq.outputs(),
        m: seq.inputs(),
        n: seq.order(),
        band: match seq.band() {
            Band::Full => BandField::Named("full".into()),
            Band::Lags(l) => BandField::Lags(l),
        },
        noise_bound: seq.noise_bound,
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let mut row = Vec::with_capacity(2 + seq.outputs() * seq.inputs());
    for (k, l) in seq.stored_pairs() {
        row.clear();
        row.push(k.to_string());
        row.push(l.to_string());
        row.extend(seq.block_slice(k, l)?.iter().map(f64::to_string));
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a Markov file; every stored `(k, ℓ)` of the declared band must
/// appear exactly once.
pub fn read_markov<R: Read>(r: R) -> Result<MarkovSequence> {
    let mut r = BufReader::new(r);
    let mut first = String::new();
    r.read_line(&mut first)?;
    let header: MarkovHeader =
        serde_json::from_str(first.trim()).map_err(|e| Error::Format(format!("line 1: header: {e}")))?;
    let band = match &header.band {
        BandField::Lags(l) => Band::Lags(*l),
        BandField::Named(s) if s == "full" => Band::Full,
        BandField::Named(s) => return Err(Error::Format(format!("line 1: band: expected a lag count or \"full\", got {s:?}"))),
    };
    if header.p == 0 || header.m == 0 || header.n == 0 || header.n_steps == 0 {
        return Err(Error::Format("line 1: N, p, m and n must be positive".into()));
    }
    if !(header.noise_bound >= 0.0) {
        return Err(Error::Format("line 1: noise_bound must be non-negative".into()));
    }
    let mut seq = MarkovSequence::zeros(header.n_steps, header.n, header.p, header.m, band);
    seq.noise_bound = header.noise_bound;
    let (p, m) = (header.p, header.m);
    let mut seen = vec![false; seq.stored_pairs().count()];
    let index: std::collections::HashMap<(usize, usize), usize> =
        seq.stored_pairs().enumerate().map(|(i, kl)| (kl, i)).collect();
    let mut rows = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r);
    let mut record = csv::StringRecord::new();
    let mut line = 1;
    let mut block = DMatrix::zeros(p, m);
    while rows.read_record(&mut record).map_err(csv_error)? {
        line += 1;
        if record.len() != 2 + p * m {
            return Err(Error::Format(format!(
                "line {line}: expected {} fields, found {}",
                2 + p * m,
                record.len()
            )));
        }
        let int = |i: usize, name: &str| -> Result<usize> {
            record[i]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {line}: field {name}: not an index: {:?}", &record[i])))
        };
        let (k, l) = (int(0, "k")?, int(1, "l")?);
        let Some(&slot) = index.get(&(k, l)) else {
            return Err(Error::Format(format!("line {line}: ({k}, {l}) is outside the declared band")));
        };
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::Format(format!("line {line}: duplicate block ({k}, {l})")));
        }
        for i in 0..p {
            for j in 0..m {
                let f = 2 + i * m + j;
                block[(i, j)] = record[f].trim().parse().map_err(|_| {
                    Error::Format(format!("line {line}: field {}: not a number: {:?}", f + 1, &record[f]))
                })?;
            }
        }
        seq.set_block(k, l, &block)?;
    }
    if let Some(missing) = seq.stored_pairs().zip(&seen).find(|(_, s)| !**s).map(|(kl, _)| kl) {
        return Err(Error::Format(format!(
            "missing block ({}, {}); {} of {} blocks present",
            missing.0,
            missing.1,
            seen.iter().filter(|s| **s).count(),
            seen.len()
        )));
    }
    Ok(seq)
}

pub fn save_markov(seq: &MarkovSequence, path: &Path) -> Result<()> {
    write_markov(seq, File::create(path)?)
}

pub fn load_markov(path: &Path) -> Result<MarkovSequence> {
    read_markov(File::open(path)?)
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn table<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_error)?;
    Ok(out)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `k, norm, member` over the window.
pub fn write_stationary_csv<W: Write>(ss: &StationarySet, w: W) -> Result<()> {
    let mut out = table(w, &["k", "norm", "member"])?;
    for (i, norm) in ss.diff_norms.iter().enumerate() {
        let k = ss.window.0 + i;
        out.write_record([k.to_string(), norm.to_string(), u8::from(ss.is_member(k)).to_string()])
            .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// One row per long interval: `interval, alpha, beta, gamma, feature, label`.
pub fn write_clusters_csv<W: Write>(c: &ClusterResult, w: W) -> Result<()> {
    let mut out = table(w, &["interval", "alpha", "beta", "gamma", "feature", "label"])?;
    for (i, ((iv, f), l)) in c.intervals.iter().zip(&c.features).zip(&c.assignments).enumerate() {
        out.write_record([
            (i + 1).to_string(),
            iv.alpha.to_string(),
            iv.beta.to_string(),
            iv.gamma().to_string(),
            f.to_string(),
            l.to_string(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// `k, phi, phi_hat, provenance` over `[1, N]`. `phi` is blank without a
/// truth; provenance is blank outside the window or where the label was
/// filled in.
pub fn write_phi_csv<W: Write>(phi: Option<&[usize]>, phi_hat: &[usize], est: Option<&SwitchEstimate>, w: W) -> Result<()> {
    let mut out = table(w, &["k", "phi", "phi_hat", "provenance"])?;
    for (i, l) in phi_hat.iter().enumerate() {
        let k = i + 1;
        let source = est
            .and_then(|e| {
                (k >= e.window.0 && k <= e.window.1)
                    .then(|| e.provenance[k - e.window.0])
                    .flatten()
            })
            .map(|d| d.name());
        out.write_record([
            k.to_string(),
            opt(phi.map(|p| p[i])),
            l.to_string(),
            source.unwrap_or("").to_string(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// `k, feature, re_1, im_1, …` for every realized anchor, eigenvalues sorted
/// by real then imaginary part.
pub fn write_eigen_csv<W: Write>(real: &LtvRealization, w: W) -> Result<()> {
    let n = real.order;
    let mut header = vec!["k".to_string(), "feature".to_string()];
    for i in 1..=n {
        header.push(format!("re_{i}"));
        header.push(format!("im_{i}"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&header).map_err(csv_error)?;
    for (k, q) in real.anchors.iter().zip(&real.quads) {
        let ev = eigenvalues(&q.a);
        let mut row = vec![k.to_string(), crate::cluster::feature_m(&q.a).to_string()];
        for z in ev {
            row.push(z.re.to_string());
            row.push(z.im.to_string());
        }
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// `k, mismatch` for a series starting at `first`.
pub fn write_mismatch_csv<W: Write>(first: usize, series: &[f64], w: W) -> Result<()> {
    let mut out = table(w, &["k", "mismatch"])?;
    for (i, e) in series.iter().enumerate() {
        out.write_record([(first + i).to_string(), e.to_string()])
            .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-level averages: `snr_db, delta_p, fit_phi, rms_mismatch, completed,
/// failed, delta_p_missing`.
pub fn write_table_csv<W: Write>(result: &MonteCarloResult, w: W) -> Result<()> {
    let mut out = table(
        w,
        &["snr_db", "delta_p", "fit_phi", "rms_mismatch", "completed", "failed", "delta_p_missing"],
    )?;
    for r in &result.rows {
        out.write_record([
            r.snr_db.to_string(),
            opt(r.delta_p),
            opt(r.fit_phi),
            opt(r.rms_hankel_mismatch),
            r.completed.to_string(),
            r.failed.to_string(),
            r.delta_p_missing.to_string(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// One row per run and level.
pub fn write_records_csv<W: Write>(result: &MonteCarloResult, w: W) -> Result<()> {
    let mut out = table(
        w,
        &["run", "snr_db", "sigma_hat", "fit_phi", "delta_p", "rms_mismatch", "error"],
    )?;
    for r in &result.records {
        out.write_record([
            r.run.to_string(),
            r.snr_db.to_string(),
            opt(r.sigma_hat),
            opt(r.fit_phi),
            opt(r.delta_p),
            opt(r.rms_hankel_mismatch),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::{add_noise, NoiseMode};
    use crate::model::{generate_markov, paper_example_states, SlsModel, SwitchingSequence};
    use crate::rng::{stream, Purpose};

    fn sample(band: Band) -> MarkovSequence {
        let m = SlsModel::new(
            paper_example_states(),
            SwitchingSequence::from_segments(&[(1, 20), (2, 15)]).unwrap(),
        )
        .unwrap();
        let exact = generate_markov(&m, band);
        add_noise(&exact, NoiseMode::Amplitude(1e-3), &mut stream(3, 0, Purpose::Noise))
    }

    fn round_trip(seq: &MarkovSequence) -> MarkovSequence {
        let mut buf = Vec::new();
        write_markov(seq, &mut buf).unwrap();
        read_markov(buf.as_slice()).unwrap()
    }

    #[test]
    fn markov_round_trip_is_exact() {
        for band in [Band::Lags(13), Band::Full] {
            let seq = sample(band);
            assert_eq!(round_trip(&seq), seq);
        }
    }

    #[test]
    fn header_and_rows() {
        let seq = sample(Band::Lags(3));
        let mut buf = Vec::new();
        write_markov(&seq, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(header["N"], 35);
        assert_eq!(header["band"], 3);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 2 + 2 * 2);
        assert_eq!(&first[..2], ["1", "1"]);
    }

    fn corrupt(f: impl Fn(&mut Vec<String>)) -> Error {
        let mut buf = Vec::new();
        write_markov(&sample(Band::Lags(3)), &mut buf).unwrap();
        let mut lines: Vec<String> = String::from_utf8(buf).unwrap().lines().map(String::from).collect();
        f(&mut lines);
        read_markov(lines.join("\n").as_bytes()).unwrap_err()
    }

    #[test]
    fn format_errors_name_the_line() {
        let e = corrupt(|l| l[3] = l[3].replacen(',', ",x", 2));
        assert!(matches!(&e, Error::Format(s) if s.starts_with("line 4")), "{e}");
        let e = corrupt(|l| {
            l.remove(5);
        });
        assert!(matches!(&e, Error::Format(s) if s.contains("missing block")), "{e}");
        let e = corrupt(|l| {
            let d = l[2].clone();
            l.push(d);
        });
        assert!(matches!(&e, Error::Format(s) if s.contains("duplicate")), "{e}");
        let e = corrupt(|l| l[0] = l[0].replace("\"band\":3", "\"band\":\"wide\""));
        assert!(matches!(&e, Error::Format(s) if s.contains("band")), "{e}");
        let e = corrupt(|l| l[1].push_str(",1"));
        assert!(matches!(&e, Error::Format(s) if s.contains("expected 6 fields")), "{e}");
    }
}
