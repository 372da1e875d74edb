//! Line-delimited JSON files for datasets, fitted parameters, predictions and
//! reports.
//!
//! Every file starts with a header line carrying `format` and `version`,
//! followed by one JSON object per line. Floats are written with 17
//! significant digits, so reading a file back reproduces every value bit for
//! bit.
//!
//! | file        | header fields          | body lines                                   |
//! |-------------|------------------------|----------------------------------------------|
//! | dataset     | `k`, `m`               | `{"p0": [k], "z": [[k] × m], "label": y}`    |
//! | params      | `method`, `k`, `m`     | values line, optional training line          |
//! | predictions | `method`, `k`          | `{"p": [k], "label": y}` (label optional)     |
//! | report      | `method`, `n`, `bins`  | metrics line, then one line per bin          |
//!
//! In a dataset record, row `i` of `z` is the mean logit vector of
//! augmentation type `i`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::atta::{AttaParams, MattaParams, VattaParams};
use crate::baselines::{BinningMethod, BinningParams, TemperatureParams};
use crate::error::{Error, Result};
use crate::metrics::{CalibrationReport, ReliabilityBin, ReliabilityTable};
use crate::simplex::{Dataset, LogitMatrix, ProbVector, Sample};

pub const FORMAT_VERSION: u32 = 1;

pub const DATASET_FORMAT: &str = "ttacal-dataset";
pub const PARAMS_FORMAT: &str = "ttacal-params";
pub const PREDICTIONS_FORMAT: &str = "ttacal-predictions";
pub const REPORT_FORMAT: &str = "ttacal-report";

/// Writes floats as `d.dddddddddddddddde±x`.
struct RoundTripFormatter;

impl serde_json::ser::Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if !value.is_finite() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("cannot serialize non-finite value {value}"),
            ));
        }
        write!(writer, "{value:.16e}")
    }

    // serde_json turns NaN and infinities into `null` before `write_f64` sees
    // them. None of these formats contain a null, so treat one as an error.
    fn write_null<W: ?Sized + Write>(&mut self, _writer: &mut W) -> io::Result<()> {
        Err(io::Error::new(io::ErrorKind::InvalidData, "cannot serialize a non-finite value"))
    }
}

fn write_line<W: Write, T: Serialize + ?Sized>(out: &mut W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut *out, RoundTripFormatter);
    value.serialize(&mut ser).map_err(io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Numbered, non-blank lines of a text file.
struct LineReader<R> {
    inner: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> LineReader<R> {
    fn new(input: R) -> Self {
        LineReader {
            inner: input.lines(),
            line: 0,
        }
    }

    fn next_raw(&mut self) -> Result<Option<String>> {
        for text in self.inner.by_ref() {
            self.line += 1;
            let text = text?;
            if !text.trim().is_empty() {
                return Ok(Some(text));
            }
        }
        Ok(None)
    }

    fn next<T: DeserializeOwned>(&mut self) -> Result<Option<T>> {
        match self.next_raw()? {
            None => Ok(None),
            Some(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| Error::parse(self.line, e.to_string())),
        }
    }

    fn expect<T: DeserializeOwned>(&mut self, what: &str) -> Result<T> {
        self.next()?
            .ok_or_else(|| Error::parse(self.line + 1, format!("missing {what}")))
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::parse(self.line, message)
    }
}

#[derive(Debug, Deserialize)]
struct FormatTag {
    format: String,
    version: u32,
}

fn check_format(reader: &LineReader<impl BufRead>, tag: &FormatTag, expected: &str) -> Result<()> {
    if tag.format != expected {
        return Err(reader.fail(format!("expected a {expected} file, found {}", tag.format)));
    }
    if tag.version != FORMAT_VERSION {
        return Err(reader.fail(format!("unsupported {expected} version {}", tag.version)));
    }
    Ok(())
}

fn read_header<H: DeserializeOwned>(reader: &mut LineReader<impl BufRead>, expected: &str) -> Result<H> {
    let raw = reader
        .next_raw()?
        .ok_or_else(|| Error::parse(1, format!("empty file, expected a {expected} header")))?;
    let tag: FormatTag = serde_json::from_str(&raw).map_err(|e| reader.fail(e.to_string()))?;
    check_format(reader, &tag, expected)?;
    serde_json::from_str(&raw).map_err(|e| reader.fail(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    k: usize,
    m: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRecord {
    p0: Vec<f64>,
    z: Vec<Vec<f64>>,
    label: usize,
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    write_line(
        &mut out,
        &DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: FORMAT_VERSION,
            k: dataset.classes(),
            m: dataset.types(),
        },
    )?;
    for s in dataset.samples() {
        let record = DatasetRecord {
            p0: s.p0().values().to_vec(),
            z: s.z().columns().map(<[f64]>::to_vec).collect(),
            label: s.label(),
        };
        write_line(&mut out, &record)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut reader = LineReader::new(input);
    let header: DatasetHeader = read_header(&mut reader, DATASET_FORMAT)?;
    let mut samples = Vec::new();
    while let Some(record) = reader.next::<DatasetRecord>()? {
        if record.p0.len() != header.k {
            return Err(reader.fail(format!("p0 has {} entries, header says k = {}", record.p0.len(), header.k)));
        }
        if record.z.len() != header.m || record.z.iter().any(|row| row.len() != header.k) {
            return Err(reader.fail(format!("z must be {} rows of {} logits", header.m, header.k)));
        }
        let sample = ProbVector::from_stored(record.p0)
            .and_then(|p0| Sample::new(p0, LogitMatrix::from_columns(record.z)?, record.label))
            .map_err(|e| reader.fail(e.to_string()))?;
        samples.push(sample);
    }
    Dataset::new(header.k, header.m, samples)
}

/// Fitted parameters of any calibrator.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodParams {
    Atta(AttaParams),
    Temperature(TemperatureParams),
    Binning(BinningParams),
}

impl MethodParams {
    pub fn tag(&self) -> &'static str {
        match self {
            MethodParams::Atta(p) => p.variant().tag(),
            MethodParams::Temperature(_) => "temperature",
            MethodParams::Binning(p) => p.method().tag(),
        }
    }

    /// Number of fitted values.
    pub fn value_count(&self) -> usize {
        match self {
            MethodParams::Atta(p) => p.value_count(),
            MethodParams::Temperature(_) => 1,
            MethodParams::Binning(p) => p.edges().len() + p.values().len(),
        }
    }
}

/// A params file: parameters, the data shape they were fitted on, and the
/// optional training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsFile {
    pub k: usize,
    pub m: usize,
    pub params: MethodParams,
    pub training: Option<TrainingTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub loss_history: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsHeader {
    format: String,
    version: u32,
    method: String,
    k: usize,
    m: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AttaValues {
    /// Matrix variant: `k` rows of `m`; vector variant: one row of `m`.
    weights: Vec<Vec<f64>>,
    omega_star: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TemperatureValues {
    temperature: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BinningValues {
    edges: Vec<f64>,
    values: Vec<f64>,
}

pub fn write_params<W: Write>(file: &ParamsFile, mut out: W) -> Result<()> {
    write_line(
        &mut out,
        &ParamsHeader {
            format: PARAMS_FORMAT.into(),
            version: FORMAT_VERSION,
            method: file.params.tag().into(),
            k: file.k,
            m: file.m,
        },
    )?;
    match &file.params {
        MethodParams::Atta(AttaParams::Matrix(p)) => write_line(
            &mut out,
            &AttaValues {
                weights: p.weights().chunks(p.types()).map(<[f64]>::to_vec).collect(),
                omega_star: p.omega_star(),
            },
        )?,
        MethodParams::Atta(AttaParams::Vector(p)) => write_line(
            &mut out,
            &AttaValues {
                weights: vec![p.weights().to_vec()],
                omega_star: p.omega_star(),
            },
        )?,
        MethodParams::Temperature(p) => write_line(
            &mut out,
            &TemperatureValues {
                temperature: p.temperature(),
            },
        )?,
        MethodParams::Binning(p) => write_line(
            &mut out,
            &BinningValues {
                edges: p.edges().to_vec(),
                values: p.values().to_vec(),
            },
        )?,
    }
    if let Some(trace) = &file.training {
        write_line(&mut out, trace)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_params<R: BufRead>(input: R) -> Result<ParamsFile> {
    let mut reader = LineReader::new(input);
    let header: ParamsHeader = read_header(&mut reader, PARAMS_FORMAT)?;
    let (k, m) = (header.k, header.m);
    let params = match header.method.as_str() {
        "matta" | "vatta" => {
            let values: AttaValues = reader.expect("weights")?;
            let built = if header.method == "matta" {
                if values.weights.len() != k || values.weights.iter().any(|r| r.len() != m) {
                    return Err(reader.fail(format!("matta weights must be {k} rows of {m}")));
                }
                let flat = values.weights.into_iter().flatten().collect();
                MattaParams::new(k, m, flat, values.omega_star).map(AttaParams::Matrix)
            } else {
                match <[Vec<f64>; 1]>::try_from(values.weights) {
                    Ok([row]) if row.len() == m => VattaParams::new(row, values.omega_star).map(AttaParams::Vector),
                    _ => return Err(reader.fail(format!("vatta weights must be one row of {m}"))),
                }
            };
            MethodParams::Atta(built.map_err(|e| reader.fail(e.to_string()))?)
        }
        "temperature" => {
            let values: TemperatureValues = reader.expect("temperature")?;
            MethodParams::Temperature(TemperatureParams::new(values.temperature).map_err(|e| reader.fail(e.to_string()))?)
        }
        "histogram" | "isotonic" => {
            let method = if header.method == "histogram" {
                BinningMethod::Histogram
            } else {
                BinningMethod::Isotonic
            };
            let values: BinningValues = reader.expect("bins")?;
            MethodParams::Binning(
                BinningParams::new(method, values.edges, values.values).map_err(|e| reader.fail(e.to_string()))?,
            )
        }
        other => return Err(reader.fail(format!("unknown method {other}"))),
    };
    let training = reader.next::<TrainingTrace>()?;
    if reader.next_raw()?.is_some() {
        return Err(reader.fail("unexpected trailing line"));
    }
    Ok(ParamsFile { k, m, params, training })
}

/// Calibrated probabilities, with labels when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub method: String,
    pub k: usize,
    pub probs: Vec<ProbVector>,
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionsHeader {
    format: String,
    version: u32,
    method: String,
    k: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    p: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

pub fn write_predictions<W: Write>(preds: &Predictions, mut out: W) -> Result<()> {
    if let Some(labels) = &preds.labels {
        if labels.len() != preds.probs.len() {
            return Err(Error::invalid("labels and predictions differ in length"));
        }
    }
    write_line(
        &mut out,
        &PredictionsHeader {
            format: PREDICTIONS_FORMAT.into(),
            version: FORMAT_VERSION,
            method: preds.method.clone(),
            k: preds.k,
        },
    )?;
    for (j, p) in preds.probs.iter().enumerate() {
        write_line(
            &mut out,
            &PredictionRecord {
                p: p.values().to_vec(),
                label: preds.labels.as_ref().map(|l| l[j]),
            },
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions<R: BufRead>(input: R) -> Result<Predictions> {
    let mut reader = LineReader::new(input);
    let header: PredictionsHeader = read_header(&mut reader, PREDICTIONS_FORMAT)?;
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let mut labeled = None;
    while let Some(record) = reader.next::<PredictionRecord>()? {
        if record.p.len() != header.k {
            return Err(reader.fail(format!("prediction has {} entries, header says k = {}", record.p.len(), header.k)));
        }
        match (labeled, record.label) {
            (None, l) => labeled = Some(l.is_some()),
            (Some(true), None) | (Some(false), Some(_)) => {
                return Err(reader.fail("labels must be given for all records or none"))
            }
            _ => {}
        }
        if let Some(y) = record.label {
            if y >= header.k {
                return Err(reader.fail(format!("label {y} outside 0..{}", header.k)));
            }
            labels.push(y);
        }
        probs.push(ProbVector::from_stored(record.p).map_err(|e| reader.fail(e.to_string()))?);
    }
    Ok(Predictions {
        method: header.method,
        k: header.k,
        probs,
        labels: if labeled == Some(false) { None } else { Some(labels) },
    })
}

/// An evaluated report together with what it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFile {
    pub method: String,
    pub samples: usize,
    pub report: CalibrationReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportHeader {
    format: String,
    version: u32,
    method: String,
    n: usize,
    bins: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportMetrics {
    brier: f64,
    mc_brier: f64,
    ece: f64,
    nll: f64,
    accuracy: f64,
}

pub fn write_report<W: Write>(file: &ReportFile, mut out: W) -> Result<()> {
    let r = &file.report;
    write_line(
        &mut out,
        &ReportHeader {
            format: REPORT_FORMAT.into(),
            version: FORMAT_VERSION,
            method: file.method.clone(),
            n: file.samples,
            bins: r.reliability.bin_count(),
        },
    )?;
    write_line(
        &mut out,
        &ReportMetrics {
            brier: r.brier,
            mc_brier: r.mc_brier,
            ece: r.ece,
            nll: r.nll,
            accuracy: r.accuracy,
        },
    )?;
    for bin in &r.reliability.bins {
        write_line(&mut out, bin)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_report<R: BufRead>(input: R) -> Result<ReportFile> {
    let mut reader = LineReader::new(input);
    let header: ReportHeader = read_header(&mut reader, REPORT_FORMAT)?;
    let metrics: ReportMetrics = reader.expect("metrics")?;
    let mut bins = Vec::with_capacity(header.bins);
    while let Some(bin) = reader.next::<ReliabilityBin>()? {
        bins.push(bin);
    }
    if bins.len() != header.bins {
        return Err(reader.fail(format!("expected {} bins, found {}", header.bins, bins.len())));
    }
    Ok(ReportFile {
        method: header.method,
        samples: header.n,
        report: CalibrationReport {
            brier: metrics.brier,
            mc_brier: metrics.mc_brier,
            ece: metrics.ece,
            nll: metrics.nll,
            accuracy: metrics.accuracy,
            reliability: ReliabilityTable { bins },
        },
    })
}

/// Reads the `format` field of a file's header line.
pub fn detect_format<R: BufRead>(input: R) -> Result<String> {
    let mut reader = LineReader::new(input);
    let raw = reader.next_raw()?.ok_or_else(|| Error::parse(1, "empty file"))?;
    let tag: FormatTag = serde_json::from_str(&raw).map_err(|e| reader.fail(e.to_string()))?;
    Ok(tag.format)
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(open(path)?)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_dataset(dataset, create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate;
    use crate::synth::{generate, SynthSpec};
    use proptest::prelude::*;

    fn round_trip_dataset(ds: &Dataset) -> Dataset {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).unwrap();
        read_dataset(buf.as_slice()).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let data = generate(&SynthSpec { samples: 200, classes: 5, ..SynthSpec::default() }).unwrap();
        let back = round_trip_dataset(&data.dataset);
        assert_eq!(back, data.dataset);
        for (a, b) in back.samples().iter().zip(data.dataset.samples()) {
            for (x, y) in a.p0().values().iter().zip(b.p0().values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn dataset_layout() {
        let p0 = ProbVector::new(vec![0.25, 0.75]).unwrap();
        let z = LogitMatrix::from_columns(vec![vec![1.0, -2.0], vec![0.5, 3.0], vec![0.0, 0.1]]).unwrap();
        let ds = Dataset::new(2, 3, vec![Sample::new(p0, z, 1).unwrap()]).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"format":"ttacal-dataset","version":1,"k":2,"m":3}"#);
        assert!(lines[1].starts_with(r#"{"p0":[2.5000000000000000e-1,7.5000000000000000e-1],"z":[[1.0000000000000000e0,-2.0000000000000000e0],"#));
        assert!(lines[1].ends_with(r#""label":1}"#));
    }

    #[test]
    fn dataset_errors_name_the_line() {
        let text = "{\"format\":\"ttacal-dataset\",\"version\":1,\"k\":2,\"m\":1}\n\
                    {\"p0\":[0.5,0.5],\"z\":[[1,2]],\"label\":0}\n\
                    {\"p0\":[0.5,0.5],\"z\":[[1,2]],\"label\":5}\n";
        match read_dataset(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_version = "{\"format\":\"ttacal-dataset\",\"version\":9,\"k\":2,\"m\":1}\n";
        assert!(matches!(read_dataset(bad_version.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let wrong_kind = "{\"format\":\"ttacal-report\",\"version\":1,\"k\":2,\"m\":1}\n";
        assert!(read_dataset(wrong_kind.as_bytes()).is_err());
        assert!(read_dataset("".as_bytes()).is_err());
        let wrong_shape = "{\"format\":\"ttacal-dataset\",\"version\":1,\"k\":2,\"m\":2}\n\
                           {\"p0\":[0.5,0.5],\"z\":[[1,2]],\"label\":0}\n";
        assert!(matches!(read_dataset(wrong_shape.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn stored_probabilities_are_renormalized_within_tolerance() {
        let text = "{\"format\":\"ttacal-dataset\",\"version\":1,\"k\":2,\"m\":1}\n\
                    {\"p0\":[0.5,0.5000001],\"z\":[[1,2]],\"label\":0}\n";
        let ds = read_dataset(text.as_bytes()).unwrap();
        let sum: f64 = ds.samples()[0].p0().values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        let far = text.replace("0.5000001", "0.6");
        assert!(read_dataset(far.as_bytes()).is_err());
    }

    fn round_trip_params(file: &ParamsFile) -> ParamsFile {
        let mut buf = Vec::new();
        write_params(file, &mut buf).unwrap();
        read_params(buf.as_slice()).unwrap()
    }

    #[test]
    fn params_round_trip_every_method() {
        let cases = vec![
            MethodParams::Atta(AttaParams::Matrix(
                MattaParams::new(3, 2, vec![0.1, -1.0 / 3.0, 2.5, 1e-17, 7.0, -0.0], 0.37).unwrap(),
            )),
            MethodParams::Atta(AttaParams::Vector(VattaParams::new(vec![1.0 / 7.0, 2.0], 1.0).unwrap())),
            MethodParams::Temperature(TemperatureParams::new(std::f64::consts::PI).unwrap()),
            MethodParams::Binning(
                BinningParams::new(BinningMethod::Histogram, vec![0.0, 0.5, 1.0], vec![0.2, 0.9]).unwrap(),
            ),
            MethodParams::Binning(
                BinningParams::new(BinningMethod::Isotonic, vec![0.0, 0.31, 1.0], vec![0.1, 0.8]).unwrap(),
            ),
        ];
        for params in cases {
            for training in [
                None,
                Some(TrainingTrace {
                    loss_history: vec![1.0 / 3.0, 0.25, 0.2],
                    best_epoch: 2,
                }),
            ] {
                let file = ParamsFile { k: 3, m: 2, params: params.clone(), training };
                assert_eq!(round_trip_params(&file), file);
            }
        }
    }

    #[test]
    fn params_shape_is_checked() {
        let text = "{\"format\":\"ttacal-params\",\"version\":1,\"method\":\"matta\",\"k\":2,\"m\":2}\n\
                    {\"weights\":[[1,1]],\"omega_star\":0.5}\n";
        assert!(read_params(text.as_bytes()).is_err());
        let text = "{\"format\":\"ttacal-params\",\"version\":1,\"method\":\"vanilla\",\"k\":2,\"m\":2}\n";
        assert!(read_params(text.as_bytes()).is_err());
        let text = "{\"format\":\"ttacal-params\",\"version\":1,\"method\":\"temperature\",\"k\":2,\"m\":2}\n\
                    {\"temperature\":-1}\n";
        assert!(read_params(text.as_bytes()).is_err());
    }

    #[test]
    fn predictions_round_trip_with_and_without_labels() {
        let probs = vec![
            ProbVector::new(vec![0.1, 0.9]).unwrap(),
            ProbVector::new(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap(),
        ];
        for labels in [None, Some(vec![1, 0])] {
            let preds = Predictions {
                method: "vanilla".into(),
                k: 2,
                probs: probs.clone(),
                labels,
            };
            let mut buf = Vec::new();
            write_predictions(&preds, &mut buf).unwrap();
            assert_eq!(read_predictions(buf.as_slice()).unwrap(), preds);
        }
        let mixed = "{\"format\":\"ttacal-predictions\",\"version\":1,\"method\":\"x\",\"k\":2}\n\
                     {\"p\":[0.5,0.5],\"label\":0}\n{\"p\":[0.5,0.5]}\n";
        assert!(read_predictions(mixed.as_bytes()).is_err());
    }

    #[test]
    fn report_round_trip_is_bit_exact() {
        let data = generate(&SynthSpec { samples: 300, ..SynthSpec::default() }).unwrap();
        let report = evaluate(&data.dataset.vanilla(), &data.dataset.labels(), 15).unwrap();
        let file = ReportFile {
            method: "vanilla".into(),
            samples: 300,
            report,
        };
        let mut buf = Vec::new();
        write_report(&file, &mut buf).unwrap();
        let back = read_report(buf.as_slice()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.report.ece.to_bits(), file.report.ece.to_bits());
        assert_eq!(detect_format(buf.as_slice()).unwrap(), REPORT_FORMAT);
    }

    #[test]
    fn non_finite_values_are_refused() {
        let file = ParamsFile {
            k: 2,
            m: 1,
            params: MethodParams::Temperature(TemperatureParams::new(1.0).unwrap()),
            training: Some(TrainingTrace {
                loss_history: vec![f64::INFINITY],
                best_epoch: 0,
            }),
        };
        assert!(write_params(&file, Vec::new()).is_err());
    }

    proptest! {
        #[test]
        fn any_finite_float_round_trips(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
            let mut buf = Vec::new();
            write_line(&mut buf, &vec![v]).unwrap();
            let back: Vec<f64> = serde_json::from_slice(&buf).unwrap();
            prop_assert_eq!(back[0].to_bits(), v.to_bits());
        }
    }
}
