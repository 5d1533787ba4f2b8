//! Synthetic domain-shift datasets and their CSV files.
//!
//! Each family draws source and target samples from the same class-conditional
//! generator; the target domain is then rotated about the origin and translated.
//! The target samples are split in half into a training pool (unlabeled for
//! training, labels reachable only through the oracle) and a held-out test set.
//!
//! CSV schema: header `feat_0,…,feat_{k−1},label,domain` with
//! `domain ∈ {source, target_train, target_test}`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    TargetTrain,
    TargetTest,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::TargetTrain => "target_train",
            Domain::TargetTest => "target_test",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target_train" => Ok(Domain::TargetTrain),
            "target_test" => Ok(Domain::TargetTest),
            other => Err(Error::parse("domain", format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: Domain,
}

/// Samples of all three domains, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub classes: usize,
    pub samples: Vec<LabeledSample>,
}

/// Per-domain view with features and labels separated.
///
/// `target_train_y` is what the oracle answers with; nothing else in training reads it.
#[derive(Debug, Clone)]
pub struct Splits {
    pub classes: usize,
    pub source_x: Vec<Vec<f64>>,
    pub source_y: Vec<usize>,
    pub target_train_x: Vec<Vec<f64>>,
    pub target_train_y: Vec<usize>,
    pub target_test_x: Vec<Vec<f64>>,
    pub target_test_y: Vec<usize>,
}

impl DomainDataset {
    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn domain(&self, domain: Domain) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter().filter(move |s| s.domain == domain)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.feature_dim();
        for (i, s) in self.samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::contract(format!("sample {i} has {} features, expected {dim}", s.features.len())));
            }
            if s.label >= self.classes {
                return Err(Error::contract(format!("sample {i} has label {} >= {}", s.label, self.classes)));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("sample {i} features"), None));
            }
        }
        Ok(())
    }

    /// Splits by domain and checks that the three index sets are disjoint and
    /// that every domain is present.
    pub fn splits(&self) -> Result<Splits> {
        self.validate()?;
        let idx = |d: Domain| -> Vec<usize> {
            self.samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.domain == d)
                .map(|(i, _)| i)
                .collect()
        };
        let (src, tr, te) = (idx(Domain::Source), idx(Domain::TargetTrain), idx(Domain::TargetTest));
        let mut seen = HashSet::new();
        for &i in src.iter().chain(&tr).chain(&te) {
            if !seen.insert(i) {
                return Err(Error::contract("domain index sets overlap"));
            }
        }
        if src.is_empty() || tr.is_empty() || te.is_empty() {
            return Err(Error::contract("dataset must contain source, target_train and target_test samples"));
        }
        let xs = |ix: &[usize]| ix.iter().map(|&i| self.samples[i].features.clone()).collect();
        let ys = |ix: &[usize]| ix.iter().map(|&i| self.samples[i].label).collect();
        Ok(Splits {
            classes: self.classes,
            source_x: xs(&src),
            source_y: ys(&src),
            target_train_x: xs(&tr),
            target_train_y: ys(&tr),
            target_test_x: xs(&te),
            target_test_y: ys(&te),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    TwoMoonsShift,
    GaussianBlobsShift,
    SpiralShift,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons_shift" => Ok(Family::TwoMoonsShift),
            "gaussian_blobs_shift" => Ok(Family::GaussianBlobsShift),
            "spiral_shift" => Ok(Family::SpiralShift),
            other => Err(Error::contract(format!("unknown dataset family `{other}`"))),
        }
    }
}

/// Parameters of a synthetic source/target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub family: Family,
    pub n_source: usize,
    pub n_target: usize,
    /// Rotation of the target domain about the origin, radians.
    pub rotation: f64,
    /// Translation applied to the target domain after rotation.
    #[serde(default)]
    pub translation: Vec<f64>,
    /// Gaussian noise (moons, spirals) or cluster standard deviation (blobs).
    pub noise: f64,
    pub classes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two moons, rotation 0.6 rad, σ = 0.1, 1000/1000 samples.
    pub fn two_moons() -> Self {
        SyntheticSpec {
            family: Family::TwoMoonsShift,
            n_source: 1000,
            n_target: 1000,
            rotation: 0.6,
            translation: vec![0.0, 0.0],
            noise: 0.1,
            classes: 2,
            seed: 0,
        }
    }

    /// Four Gaussian blobs on a circle. The target is rotated by 0.75 rad, just
    /// short of the 45° at which every blob straddles two source classes.
    pub fn blobs() -> Self {
        SyntheticSpec {
            family: Family::GaussianBlobsShift,
            n_source: 1000,
            n_target: 1000,
            rotation: 0.75,
            translation: vec![0.0, 0.0],
            noise: 0.6,
            classes: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_source == 0 || self.n_target < 2 {
            return Err(Error::contract("need at least one source and two target samples"));
        }
        if self.classes < 2 {
            return Err(Error::contract("need at least two classes"));
        }
        if self.family == Family::TwoMoonsShift && self.classes != 2 {
            return Err(Error::contract("two_moons_shift has exactly two classes"));
        }
        if !(self.noise >= 0.0) || !self.rotation.is_finite() {
            return Err(Error::contract("noise must be >= 0 and rotation finite"));
        }
        if !self.translation.is_empty() && self.translation.len() != 2 {
            return Err(Error::contract("translation must have two components"));
        }
        Ok(())
    }
}

fn draw<R: Rng>(spec: &SyntheticSpec, n: usize, rng: &mut R) -> Vec<(Vec<f64>, usize)> {
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite std");
    let c = spec.classes;
    (0..n)
        .map(|i| {
            let label = i % c;
            let (x, y) = match spec.family {
                Family::TwoMoonsShift => {
                    let t = rng.gen_range(0.0..PI);
                    // centered so the pair is point-symmetric about the origin
                    if label == 0 {
                        (t.cos() - 0.5, t.sin() - 0.25)
                    } else {
                        (0.5 - t.cos(), 0.25 - t.sin())
                    }
                }
                Family::GaussianBlobsShift => {
                    let a = 2.0 * PI * label as f64 / c as f64;
                    (2.0 * a.cos(), 2.0 * a.sin())
                }
                Family::SpiralShift => {
                    let t: f64 = rng.gen_range(0.25..1.0);
                    let a = 2.0 * PI * label as f64 / c as f64 + 1.5 * PI * t;
                    (2.0 * t * a.cos(), 2.0 * t * a.sin())
                }
            };
            (vec![x + noise.sample(rng), y + noise.sample(rng)], label)
        })
        .collect()
}

/// Deterministic dataset from `spec`.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut source = draw(spec, spec.n_source, &mut rng);
    source.shuffle(&mut rng);
    let mut target = draw(spec, spec.n_target, &mut rng);
    target.shuffle(&mut rng);
    let (sin, cos) = spec.rotation.sin_cos();
    let (tx, ty) = match spec.translation.as_slice() {
        [a, b] => (*a, *b),
        _ => (0.0, 0.0),
    };
    let n_train = spec.n_target / 2;
    let mut samples = Vec::with_capacity(spec.n_source + spec.n_target);
    samples.extend(source.into_iter().map(|(features, label)| LabeledSample {
        features,
        label,
        domain: Domain::Source,
    }));
    samples.extend(target.into_iter().enumerate().map(|(i, (f, label))| LabeledSample {
        features: vec![cos * f[0] - sin * f[1] + tx, sin * f[0] + cos * f[1] + ty],
        label,
        domain: if i < n_train { Domain::TargetTrain } else { Domain::TargetTest },
    }));
    Ok(DomainDataset {
        classes: spec.classes,
        samples,
    })
}

pub fn write_csv<'a>(w: impl Write, dim: usize, samples: impl IntoIterator<Item = &'a LabeledSample>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..dim).map(|k| format!("feat_{k}")).collect();
    header.push("label".into());
    header.push("domain".into());
    out.write_record(&header)?;
    for s in samples {
        let mut rec: Vec<String> = s.features.iter().map(|v| format!("{v:?}")).collect();
        rec.push(s.label.to_string());
        rec.push(s.domain.name().to_string());
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Parses a dataset CSV. `classes` is inferred as `max label + 1` unless given.
pub fn read_csv(r: impl std::io::Read, source: &str, classes: Option<usize>) -> Result<DomainDataset> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    let n = header.len();
    if n < 3 || &header[n - 2] != "label" || &header[n - 1] != "domain" {
        return Err(Error::parse(source, "header must be feat_0..feat_{k-1},label,domain"));
    }
    for (k, h) in header.iter().take(n - 2).enumerate() {
        if h != format!("feat_{k}") {
            return Err(Error::parse(source, format!("unexpected column `{h}`")));
        }
    }
    let mut samples = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = format!("{source}:{}", i + 2);
        let features = rec
            .iter()
            .take(n - 2)
            .map(|v| v.parse::<f64>().map_err(|_| Error::parse(&line, format!("bad feature `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        let label = rec[n - 2]
            .parse::<usize>()
            .map_err(|_| Error::parse(&line, format!("bad label `{}`", &rec[n - 2])))?;
        let domain = rec[n - 1].parse().map_err(|_| Error::parse(&line, "bad domain"))?;
        samples.push(LabeledSample { features, label, domain });
    }
    let inferred = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let ds = DomainDataset {
        classes: classes.unwrap_or(inferred).max(inferred),
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

pub const SPLIT_FILES: [(Domain, &str); 3] = [
    (Domain::Source, "source.csv"),
    (Domain::TargetTrain, "target_train.csv"),
    (Domain::TargetTest, "target_test.csv"),
];

/// Writes `source.csv`, `target_train.csv` and `target_test.csv` into `dir`.
pub fn write_dataset_dir(dir: &Path, ds: &DomainDataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (domain, name) in SPLIT_FILES {
        let path = dir.join(name);
        let mut buf = Vec::new();
        write_csv(&mut buf, ds.feature_dim(), ds.domain(domain))?;
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_dataset_dir(dir: &Path, classes: Option<usize>) -> Result<DomainDataset> {
    let mut samples = Vec::new();
    let mut max_classes = classes.unwrap_or(0);
    for (domain, name) in SPLIT_FILES {
        let path = dir.join(name);
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let part = read_csv(file, &path.display().to_string(), classes)?;
        if part.samples.iter().any(|s| s.domain != domain) {
            return Err(Error::parse(path.display().to_string(), format!("file may only hold `{domain}` rows")));
        }
        max_classes = max_classes.max(part.classes);
        samples.extend(part.samples);
    }
    let ds = DomainDataset {
        classes: max_classes,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_bytes() {
        let spec = SyntheticSpec::two_moons();
        let mut a = Vec::new();
        let mut b = Vec::new();
        let da = generate_dataset(&spec).unwrap();
        let db = generate_dataset(&spec).unwrap();
        write_csv(&mut a, 2, &da.samples).unwrap();
        write_csv(&mut b, 2, &db.samples).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn target_split_is_half() {
        let ds = generate_dataset(&SyntheticSpec::blobs()).unwrap();
        let s = ds.splits().unwrap();
        assert_eq!(s.source_x.len(), 1000);
        assert_eq!(s.target_train_x.len(), 500);
        assert_eq!(s.target_test_x.len(), 500);
    }

    #[test]
    fn moons_need_two_classes() {
        let spec = SyntheticSpec {
            classes: 3,
            ..SyntheticSpec::two_moons()
        };
        assert!(generate_dataset(&spec).is_err());
        assert!("checkerboard".parse::<Family>().is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let spec = SyntheticSpec {
            family: Family::SpiralShift,
            classes: 3,
            n_source: 40,
            n_target: 30,
            ..SyntheticSpec::two_moons()
        };
        let ds = generate_dataset(&spec).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, 2, &ds.samples).unwrap();
        let back = read_csv(buf.as_slice(), "mem", Some(3)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "feat_0,feat_1,label,domain\n0.1,0.2,0,source\n0.1,oops,1,source\n";
        match read_csv(text.as_bytes(), "mem", None) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "mem:3"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
