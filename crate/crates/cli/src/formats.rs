// SPDX-License-Identifier: Apache-2.0

//! On-disk formats. Column schemas are listed in the README.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use pqrc_core::dynamics::{EnsembleResult, StabilityResult};
use pqrc_core::learn::dataset::{Dataset, Split, CLASS_NAMES};
use pqrc_core::learn::{ClassificationMetrics, EpochMetrics, RegressionMetrics};
use pqrc_core::model::ReservoirSpec;
use pqrc_core::observables::OccupationSeries;
use pqrc_core::oracle::WignerGrid;
use pqrc_core::sampler::{PhasePoint, PhaseSampleSet, StateSpec};
use pqrc_core::C64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SAMPLES_MAGIC: &str = "PQRC-SAMPLES v1";

/// Shortest representation that parses back to the same bits.
pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_reservoir(path: &Path, spec: &ReservoirSpec) -> CliResult<()> {
    write_json(path, spec)
}

/// Read and validate a reservoir spec file.
pub fn read_reservoir(path: &Path) -> CliResult<ReservoirSpec> {
    let spec: ReservoirSpec = read_json(path)?;
    spec.validate()?;
    Ok(spec)
}

/// Provenance stored in the header line of a sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleHeader {
    pub state: StateSpec,
    pub count: usize,
    pub seed: u64,
}

/// One text header line `PQRC-SAMPLES v1 <json>`, then `count` records of
/// four little-endian f64: `Re a, Im a, Re a~, Im a~`.
pub fn write_samples(path: &Path, header: &SampleHeader, samples: &PhaseSampleSet) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let json = serde_json::to_string(header).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    writeln!(w, "{SAMPLES_MAGIC} {json}")?;
    for p in &samples.pairs {
        for v in [p.alpha.re, p.alpha.im, p.alpha_tilde.re, p.alpha_tilde.im] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> CliResult<(SampleHeader, PhaseSampleSet)> {
    let bad = |m: &str| CliError::Config(format!("{}: {m}", path.display()));
    let mut r = BufReader::new(File::open(path).map_err(|e| bad(&e.to_string()))?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let json = line.strip_prefix(SAMPLES_MAGIC).map(str::trim).ok_or_else(|| bad("not a sample file"))?;
    let header: SampleHeader = serde_json::from_str(json).map_err(|e| bad(&e.to_string()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != header.count * 32 {
        return Err(bad("sample count does not match the file length"));
    }
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8 bytes"));
    let pairs = body
        .chunks_exact(32)
        .map(|c| PhasePoint {
            alpha: C64::new(f(&c[0..8]), f(&c[8..16])),
            alpha_tilde: C64::new(f(&c[16..24]), f(&c[24..32])),
        })
        .collect();
    Ok((header, PhaseSampleSet::new(pairs)?))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new().flexible(true).from_path(path)?)
}

/// `time, n_0.., se_0..` per record, then a `divergence_fraction, value` footer.
pub fn write_occupation(path: &Path, series: &OccupationSeries) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let m = series.n_modes();
    let mut head = vec!["time".to_string()];
    head.extend((0..m).map(|j| format!("n_{j}")));
    head.extend((0..m).map(|j| format!("se_{j}")));
    w.write_record(&head)?;
    for (k, t) in series.times.iter().enumerate() {
        let mut row = vec![num(*t)];
        row.extend(series.mean_n[k].iter().map(|v| num(*v)));
        row.extend(series.se_n[k].iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.write_record(["divergence_fraction", &num(series.divergence_fraction)])?;
    w.flush()?;
    Ok(())
}

/// Parse an occupation CSV back into a series.
pub fn read_occupation(path: &Path, injection_start: f64) -> CliResult<OccupationSeries> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let m = (r.headers()?.len().saturating_sub(1)) / 2;
    let mut s =
        OccupationSeries { times: vec![], injection_start, mean_n: vec![], se_n: vec![], divergence_fraction: 0.0 };
    let parse = |x: &str| x.parse::<f64>().map_err(|e| bad(format!("bad number '{x}': {e}")));
    for rec in r.records() {
        let rec = rec?;
        if &rec[0] == "divergence_fraction" {
            s.divergence_fraction = parse(&rec[1])?;
            continue;
        }
        let v = rec.iter().map(parse).collect::<CliResult<Vec<f64>>>()?;
        if v.len() != 2 * m + 1 {
            return Err(bad("ragged occupation row".into()));
        }
        s.times.push(v[0]);
        s.mean_n.push(v[1..=m].to_vec());
        s.se_n.push(v[m + 1..].to_vec());
    }
    s.validate()?;
    Ok(s)
}

/// `time, then per mode: ppm_n_j, ppm_se_j, oracle_n_j, z_j`.
pub fn write_oracle_compare(
    path: &Path,
    ppm: &EnsembleResult,
    oracle: &OccupationSeries,
    z: &[Vec<f64>],
) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let m = oracle.n_modes();
    let mut head = vec!["time".to_string()];
    for j in 0..m {
        head.extend([format!("ppm_n_{j}"), format!("ppm_se_{j}"), format!("oracle_n_{j}"), format!("z_{j}")]);
    }
    w.write_record(&head)?;
    for (k, t) in oracle.times.iter().enumerate() {
        let mut row = vec![num(*t)];
        for j in 0..m {
            row.extend([
                num(ppm.series.mean_n[k][j]),
                num(ppm.series.se_n[k][j]),
                num(oracle.mean_n[k][j]),
                num(z[k][j]),
            ]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Matrix layout: header `q\p, p_0..`, then one row per `q` value.
pub fn write_wigner(path: &Path, grid: &WignerGrid) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut head = vec!["q\\p".to_string()];
    head.extend(grid.p.iter().map(|v| num(*v)));
    w.write_record(&head)?;
    for (q, row) in grid.q.iter().zip(&grid.values) {
        let mut rec = vec![num(*q)];
        rec.extend(row.iter().map(|v| num(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stability(path: &Path, results: &[StabilityResult]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["drive", "kerr", "loss", "detuning", "trajectories", "convergent", "fraction"])?;
    for r in results {
        let p = r.point;
        w.write_record([
            num(p.drive),
            num(p.kerr),
            num(p.loss),
            num(p.detuning),
            r.trajectories.to_string(),
            r.convergent.to_string(),
            num(r.fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn state_columns(s: &StateSpec) -> [String; 4] {
    match *s {
        StateSpec::Coherent { beta } => ["coherent".into(), num(beta.re), num(beta.im), String::new()],
        StateSpec::Thermal { nbar } => ["thermal".into(), num(nbar), String::new(), String::new()],
        StateSpec::SqueezedVacuum { r, theta } => ["squeezed_vacuum".into(), num(r), num(theta), String::new()],
        StateSpec::Cat { beta, phase } => ["cat".into(), num(beta.re), num(beta.im), num(phase)],
    }
}

/// One row per state: `index, split, class, kind, p0, p1, p2,
/// divergence_fraction, flagged, sample_seed, noise_seed, f_0.., fse_0..`.
/// The `p` columns are `(Re beta, Im beta, phase)` for cats, `(Re beta, Im beta)`
/// for coherent states, `(r, theta)` for squeezed and `(nbar)` for thermal.
pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let m = data.records.first().map_or(0, |r| r.features.len());
    let mut head: Vec<String> = [
        "index",
        "split",
        "class",
        "kind",
        "p0",
        "p1",
        "p2",
        "divergence_fraction",
        "flagged",
        "sample_seed",
        "noise_seed",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    head.extend((0..m).map(|j| format!("f_{j}")));
    head.extend((0..m).map(|j| format!("fse_{j}")));
    w.write_record(&head)?;
    for r in &data.records {
        let mut row = vec![
            r.index.to_string(),
            match r.split {
                Split::Train => "train".into(),
                Split::Test => "test".into(),
            },
            r.class.to_string(),
        ];
        row.extend(state_columns(&r.state));
        row.extend([
            num(r.divergence_fraction),
            r.flagged.to_string(),
            r.sample_seed.to_string(),
            r.noise_seed.to_string(),
        ]);
        row.extend(r.features.iter().chain(&r.feature_se).map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `epoch, train_loss, test_loss, train_acc, test_acc`.
pub fn write_curve(path: &Path, curve: &[EpochMetrics]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "train_loss", "test_loss", "train_acc", "test_acc"])?;
    for e in curve {
        w.write_record([e.epoch.to_string(), num(e.train_loss), num(e.test_loss), num(e.train_acc), num(e.test_acc)])?;
    }
    w.flush()?;
    Ok(())
}

/// Row-normalized confusion matrix, rows are true classes.
pub fn write_confusion(path: &Path, metrics: &ClassificationMetrics) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let k = metrics.confusion.len();
    let mut head = vec!["true\\predicted".to_string()];
    head.extend(CLASS_NAMES.iter().take(k).map(|s| s.to_string()));
    head.push("count".into());
    w.write_record(&head)?;
    for (c, row) in metrics.confusion.iter().enumerate() {
        let mut rec = vec![CLASS_NAMES.get(c).map_or_else(|| c.to_string(), |s| s.to_string())];
        rec.extend(row.iter().map(|v| num(*v)));
        rec.push(metrics.counts[c].iter().sum::<usize>().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per test state: `index, r, theta, zeta_re, zeta_im, pred_re, pred_im, sq_error`.
pub fn write_regression_table(path: &Path, data: &Dataset, split: Split, metrics: &RegressionMetrics) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["index", "r", "theta", "zeta_re", "zeta_im", "pred_re", "pred_im", "sq_error"])?;
    let recs = data.records.iter().filter(|r| r.split == split);
    for ((rec, p), e) in recs.zip(&metrics.predictions).zip(&metrics.squared_errors) {
        let (r, theta) = match rec.state {
            StateSpec::SqueezedVacuum { r, theta } => (r, theta),
            _ => return Err(CliError::Config("regression table needs squeezed states".into())),
        };
        let z = C64::from_polar(r, 2.0 * theta);
        w.write_record([
            rec.index.to_string(),
            num(r),
            num(theta),
            num(z.re),
            num(z.im),
            num(p.re),
            num(p.im),
            num(*e),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write a plain CSV table from a header and string rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pqrc_core::sampler::sample_squeezed_vacuum;

    #[test]
    fn samples_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let s = sample_squeezed_vacuum(0.5, 0.2, 50, 3).unwrap();
        let h = SampleHeader { state: StateSpec::SqueezedVacuum { r: 0.5, theta: 0.2 }, count: 50, seed: u64::MAX };
        write_samples(&path, &h, &s).unwrap();
        let (h2, s2) = read_samples(&path).unwrap();
        assert_eq!(h, h2);
        assert_eq!(s, s2);
    }

    #[test]
    fn occupation_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.csv");
        let s = OccupationSeries {
            times: vec![0.0, 0.1, 0.2],
            injection_start: 0.1,
            mean_n: vec![vec![0.1, 1.0 / 3.0], vec![2.5e-17, 7.0], vec![1.0, 2.0]],
            se_n: vec![vec![0.0, 0.01], vec![0.02, 0.03], vec![f64::NAN, 0.0]],
            divergence_fraction: 0.125,
        };
        write_occupation(&path, &s).unwrap();
        let back = read_occupation(&path, 0.1).unwrap();
        assert_eq!(back.mean_n, s.mean_n);
        assert_eq!(back.times, s.times);
        assert!(back.se_n[2][0].is_nan());
        assert_eq!(back.divergence_fraction, 0.125);
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
