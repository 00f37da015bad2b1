//! Samples, datasets, synthetic generators and dataset file formats.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: usize) -> Self {
        Self { x, y }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Per-coordinate bounds of the feature domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub dim: usize,
    pub num_classes: usize,
    pub domain: DomainBox,
}

impl Dataset {
    /// Builds a dataset and checks every sample against `dim`, the label
    /// range and the domain box.
    pub fn new(
        samples: Vec<Sample>,
        dim: usize,
        num_classes: usize,
        domain: DomainBox,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        if dim == 0 || num_classes == 0 {
            return Err(Error::Config("dim and num_classes must be positive".into()));
        }
        if domain.dim() != dim || domain.hi.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: domain.dim(),
            });
        }
        for (i, s) in samples.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.dim(),
                });
            }
            if s.y >= num_classes {
                return Err(Error::Format(format!(
                    "sample {i}: label {} out of range for {num_classes} classes",
                    s.y
                )));
            }
            if !domain.contains(&s.x) {
                return Err(Error::Format(format!("sample {i} lies outside the domain box")));
            }
        }
        Ok(Self {
            samples,
            dim,
            num_classes,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.y] += 1;
        }
        counts
    }

    /// Writes `f0,...,f{dim-1},label` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        wr.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            row.push(s.y.to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    /// Reads the CSV format written by [`Dataset::write_csv`]. The number of
    /// classes is inferred as `max label + 1` unless given. Without a domain,
    /// the unit box is used when it holds every point, else the bounding box.
    pub fn read_csv<R: Read>(
        r: R,
        num_classes: Option<usize>,
        domain: Option<DomainBox>,
    ) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let dim = header.len().saturating_sub(1);
        if dim == 0 || &header[dim] != "label" {
            return Err(Error::Format("expected header f0,...,f{dim-1},label".into()));
        }
        for (j, h) in header.iter().take(dim).enumerate() {
            if h != format!("f{j}") {
                return Err(Error::Format(format!("unexpected column `{h}` at {j}")));
            }
        }
        let mut samples = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let x = rec
                .iter()
                .take(dim)
                .map(|v| {
                    f64::from_str(v.trim())
                        .map_err(|e| Error::Format(format!("bad feature `{v}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let y = rec[dim]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("bad label `{}`: {e}", &rec[dim])))?;
            samples.push(Sample::new(x, y));
        }
        let k = num_classes.unwrap_or_else(|| samples.iter().map(|s| s.y + 1).max().unwrap_or(0));
        let domain = domain.unwrap_or_else(|| fitted_domain(&samples, dim));
        Self::new(samples, dim, k, domain)
    }

    pub fn load_csv(
        path: impl AsRef<Path>,
        num_classes: Option<usize>,
        domain: Option<DomainBox>,
    ) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path)?), num_classes, domain)
    }

    /// Reads an IDX image/label pair (MNIST layout). Pixels are rescaled to
    /// `[0, 1]`; `limit` keeps only the first samples.
    pub fn read_idx(
        images: impl AsRef<Path>,
        labels: impl AsRef<Path>,
        limit: Option<usize>,
    ) -> Result<Self> {
        let mut img = Vec::new();
        File::open(images)?.read_to_end(&mut img)?;
        let mut lab = Vec::new();
        File::open(labels)?.read_to_end(&mut lab)?;
        Self::from_idx_bytes(&img, &lab, limit)
    }

    pub fn from_idx_bytes(images: &[u8], labels: &[u8], limit: Option<usize>) -> Result<Self> {
        let be = |b: &[u8], at: usize| -> Result<usize> {
            b.get(at..at + 4)
                .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]) as usize)
                .ok_or_else(|| Error::Format("truncated IDX header".into()))
        };
        if be(images, 0)? != 0x0803 {
            return Err(Error::Format("bad IDX image magic".into()));
        }
        if be(labels, 0)? != 0x0801 {
            return Err(Error::Format("bad IDX label magic".into()));
        }
        let n_img = be(images, 4)?;
        let rows = be(images, 8)?;
        let cols = be(images, 12)?;
        let n_lab = be(labels, 4)?;
        if n_img != n_lab {
            return Err(Error::LengthMismatch {
                left: n_img,
                right: n_lab,
            });
        }
        let dim = rows * cols;
        let n = limit.map_or(n_img, |l| l.min(n_img));
        if images.len() < 16 + n * dim || labels.len() < 8 + n {
            return Err(Error::Format("truncated IDX payload".into()));
        }
        let samples: Vec<Sample> = (0..n)
            .map(|i| {
                let px = &images[16 + i * dim..16 + (i + 1) * dim];
                Sample::new(
                    px.iter().map(|&b| b as f64 / 255.0).collect(),
                    labels[8 + i] as usize,
                )
            })
            .collect();
        let k = samples.iter().map(|s| s.y + 1).max().unwrap_or(1).max(2);
        Self::new(samples, dim, k, DomainBox::unit(dim))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    TwoMoons,
    GaussBlobs,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" | "moons" => Ok(Self::TwoMoons),
            "gauss_blobs" | "blobs" => Ok(Self::GaussBlobs),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

impl std::fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TwoMoons => "two_moons",
            Self::GaussBlobs => "gauss_blobs",
        })
    }
}

/// Class centers of the blob generator, in unit-box coordinates.
pub const BLOB_CENTERS: [[f64; 2]; 2] = [[0.3, 0.3], [0.7, 0.7]];

/// Parameters of a synthetic two-dimensional dataset. Blobs live in
/// `[0, 1]^2`; moons keep their usual coordinates inside [`moons_domain`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub noise: f64,
    /// Fraction of labels flipped to another class after generation.
    pub label_noise: f64,
    pub seed: u64,
}

/// Box holding the moons (arcs span `[-1, 2] x [-0.5, 1]`) with room for noise.
pub fn moons_domain() -> DomainBox {
    DomainBox {
        lo: vec![-1.5, -1.0],
        hi: vec![2.5, 1.5],
    }
}

pub fn make_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    make_synthetic_spec(&SyntheticSpec {
        kind,
        n,
        noise,
        label_noise: 0.0,
        seed,
    })
}

pub fn make_synthetic_spec(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n < 2 {
        return Err(Error::param("n", "need at least two samples"));
    }
    if !(spec.noise >= 0.0) || !(0.0..=1.0).contains(&spec.label_noise) {
        return Err(Error::param("noise", "noise must be >= 0 and label_noise in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let domain = match spec.kind {
        SyntheticKind::TwoMoons => moons_domain(),
        SyntheticKind::GaussBlobs => DomainBox::unit(2),
    };
    let n0 = spec.n.div_ceil(2);
    let n1 = spec.n - n0;
    let mut samples = Vec::with_capacity(spec.n);

    match spec.kind {
        SyntheticKind::TwoMoons => {
            let arc = |count: usize, i: usize| {
                if count <= 1 {
                    0.0
                } else {
                    std::f64::consts::PI * i as f64 / (count - 1) as f64
                }
            };
            let mut raw = Vec::with_capacity(spec.n);
            for i in 0..n0 {
                let t = arc(n0, i);
                raw.push(([t.cos(), t.sin()], 0));
            }
            for i in 0..n1 {
                let t = arc(n1, i);
                raw.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
            }
            for (p, y) in raw {
                let mut x: Vec<f64> = p.iter().map(|c| c + spec.noise * gauss.sample(&mut rng)).collect();
                domain.clip(&mut x);
                samples.push(Sample::new(x, y));
            }
        }
        SyntheticKind::GaussBlobs => {
            for (y, count) in [(0usize, n0), (1, n1)] {
                for _ in 0..count {
                    let mut x: Vec<f64> = BLOB_CENTERS[y]
                        .iter()
                        .map(|c| c + spec.noise * gauss.sample(&mut rng))
                        .collect();
                    domain.clip(&mut x);
                    samples.push(Sample::new(x, y));
                }
            }
        }
    }

    if spec.label_noise > 0.0 {
        let flips = (spec.label_noise * spec.n as f64).round() as usize;
        let mut idx: Vec<usize> = (0..spec.n).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(flips) {
            samples[i].y = 1 - samples[i].y;
        }
    }
    samples.shuffle(&mut rng);
    Dataset::new(samples, 2, 2, domain)
}

fn fitted_domain(samples: &[Sample], dim: usize) -> DomainBox {
    let unit = DomainBox::unit(dim);
    if samples.iter().all(|s| s.x.len() != dim || unit.contains(&s.x)) {
        return unit;
    }
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for s in samples.iter().filter(|s| s.x.len() == dim) {
        for j in 0..dim {
            lo[j] = lo[j].min(s.x[j]);
            hi[j] = hi[j].max(s.x[j]);
        }
    }
    DomainBox { lo, hi }
}

/// Splits a dataset into two parts after a seeded shuffle.
pub fn split(data: &Dataset, first: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if first == 0 || first >= data.len() {
        return Err(Error::param("split", "both parts must be nonempty"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |ids: &[usize]| ids.iter().map(|&i| data.samples[i].clone()).collect();
    let a = Dataset::new(pick(&idx[..first]), data.dim, data.num_classes, data.domain.clone())?;
    let b = Dataset::new(pick(&idx[first..]), data.dim, data.num_classes, data.domain.clone())?;
    Ok((a, b))
}

/// Uniform random points in the unit box, used by tests and examples.
pub fn uniform_points(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}
