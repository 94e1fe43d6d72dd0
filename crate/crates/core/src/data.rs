//! Synthetic spike datasets, rate coding, and the `SPK1` file format.
//!
//! `SPK1` layout (all integers little-endian `u32`):
//!
//! ```text
//! "SPK1" | samples | T | channels | classes | labels[samples] | spike bits
//! ```
//!
//! Spike bits are the `[samples x T x channels]` array in row-major order,
//! packed eight per byte, least significant bit first, zero-padded.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numeric::{Real, RngState, Tensor};

pub const MAGIC: &[u8; 4] = b"SPK1";
/// Fraction of active bits in each class template.
pub const TEMPLATE_DENSITY: f64 = 0.3;
pub const DEFAULT_JITTER: f64 = 0.1;

const HEADER_LEN: usize = 4 + 4 * 4;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetMeta {
    pub task: String,
    pub seed: Option<u64>,
}

/// Binary spike inputs with integer labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeDataset {
    samples: usize,
    timesteps: usize,
    channels: usize,
    classes: usize,
    /// `[samples x T x channels]`, values 0 or 1.
    spikes: Vec<u8>,
    labels: Vec<u32>,
    pub meta: DatasetMeta,
}

impl SpikeDataset {
    pub fn new(
        timesteps: usize,
        channels: usize,
        classes: usize,
        spikes: Vec<u8>,
        labels: Vec<u32>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let samples = labels.len();
        if spikes.len() != samples * timesteps * channels {
            return Err(Error::dims(
                "spikes vs [samples, T, channels]",
                &[spikes.len()],
                &[samples, timesteps, channels],
            ));
        }
        if spikes.iter().any(|&s| s > 1) {
            return Err(Error::Data("spike values must be 0 or 1".into()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y as usize >= classes) {
            return Err(Error::Data(format!("label {y} out of range for {classes} classes")));
        }
        Ok(Self {
            samples,
            timesteps,
            channels,
            classes,
            spikes,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn spikes(&self) -> &[u8] {
        &self.spikes
    }

    pub fn spike(&self, sample: usize, t: usize, channel: usize) -> u8 {
        self.spikes[(sample * self.timesteps + t) * self.channels + channel]
    }

    fn sample_slice(&self, sample: usize) -> &[u8] {
        let n = self.timesteps * self.channels;
        &self.spikes[sample * n..(sample + 1) * n]
    }

    /// Network input `[T x batch x channels]` for the given samples.
    pub fn batch_input<F: Real>(&self, indices: &[usize]) -> Tensor<F> {
        let (t_len, c) = (self.timesteps, self.channels);
        let b_len = indices.len();
        let mut data = vec![F::zero(); t_len * b_len * c];
        for (b, &s) in indices.iter().enumerate() {
            for t in 0..t_len {
                for ch in 0..c {
                    if self.spike(s, t, ch) == 1 {
                        data[(t * b_len + b) * c + ch] = F::one();
                    }
                }
            }
        }
        Tensor::from_parts(vec![t_len, b_len, c], data)
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i] as usize).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut spikes = Vec::with_capacity(indices.len() * self.timesteps * self.channels);
        for &i in indices {
            spikes.extend_from_slice(self.sample_slice(i));
        }
        Self {
            samples: indices.len(),
            timesteps: self.timesteps,
            channels: self.channels,
            classes: self.classes,
            spikes,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Seeded shuffle, then the first `round(fraction * len)` samples go to
    /// the first part.
    pub fn split(&self, fraction: f64, rng: &mut RngState) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.samples).collect();
        rng.shuffle(&mut idx);
        let cut = ((self.samples as f64) * fraction).round() as usize;
        let cut = cut.min(self.samples);
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }

    /// Equality of everything stored in an `SPK1` file (metadata excluded).
    pub fn same_content(&self, other: &Self) -> bool {
        self.timesteps == other.timesteps
            && self.channels == other.channels
            && self.classes == other.classes
            && self.labels == other.labels
            && self.spikes == other.spikes
    }
}

/// Class-template task: every class owns a random binary `T x channels`
/// template with density 0.3; each sample is its class template with every bit
/// flipped independently with probability `jitter_prob`. Samples are ordered
/// class by class.
pub fn gen_temporal_patterns(
    n_classes: usize,
    channels: usize,
    timesteps: usize,
    samples_per_class: usize,
    jitter_prob: f64,
    seed: u64,
) -> Result<SpikeDataset> {
    for (name, v) in [
        ("n_classes", n_classes),
        ("channels", channels),
        ("timesteps", timesteps),
        ("samples_per_class", samples_per_class),
    ] {
        if v == 0 {
            return Err(Error::param(name, "must be >= 1"));
        }
    }
    if !(0.0..=1.0).contains(&jitter_prob) {
        return Err(Error::param("jitter_prob", format!("out of [0,1]: {jitter_prob}")));
    }
    let root = RngState::new(seed);
    let mut template_rng = root.split(0);
    let mut jitter_rng = root.split(1);
    let width = timesteps * channels;
    let templates: Vec<Vec<u8>> = (0..n_classes)
        .map(|_| {
            (0..width)
                .map(|_| u8::from(template_rng.uniform_scalar::<f64>() < TEMPLATE_DENSITY))
                .collect()
        })
        .collect();
    let mut spikes = Vec::with_capacity(n_classes * samples_per_class * width);
    let mut labels = Vec::with_capacity(n_classes * samples_per_class);
    for (class, template) in templates.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &bit in template {
                let flip = jitter_rng.uniform_scalar::<f64>() < jitter_prob;
                spikes.push(if flip { 1 - bit } else { bit });
            }
            labels.push(class as u32);
        }
    }
    SpikeDataset::new(
        timesteps,
        channels,
        n_classes,
        spikes,
        labels,
        DatasetMeta {
            task: "temporal_patterns".into(),
            seed: Some(seed),
        },
    )
}

/// Rate coding: spike at `(s, t, c)` iff a fresh uniform draw is below
/// `values[s, c]`. Output is `[samples x T x channels]`.
pub fn poisson_encode<F: Real>(values: &Tensor<F>, timesteps: usize, seed: u64) -> Result<Tensor<F>> {
    let (samples, channels) = match *values.shape() {
        [s, c] => (s, c),
        _ => return Err(Error::dims("poisson_encode values [samples, channels]", values.shape(), &[0, 0])),
    };
    if let Some(bad) = values.data().iter().find(|&&v| !(v >= F::zero() && v <= F::one())) {
        return Err(Error::Data(format!("rate {bad} outside [0, 1]")));
    }
    let mut rng = RngState::new(seed);
    let mut out = Vec::with_capacity(samples * timesteps * channels);
    for s in 0..samples {
        let row = &values.data()[s * channels..(s + 1) * channels];
        for _ in 0..timesteps {
            for &v in row {
                let u: F = rng.uniform_scalar();
                out.push(if u < v { F::one() } else { F::zero() });
            }
        }
    }
    Tensor::new(vec![samples, timesteps, channels], out)
}

pub fn encode_spk1(ds: &SpikeDataset) -> Result<Vec<u8>> {
    let to_u32 = |v: usize, name: &'static str| {
        u32::try_from(v).map_err(|_| Error::param(name, format!("{v} does not fit in u32")))
    };
    let bits = ds.spikes.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * ds.samples + bits.div_ceil(8));
    out.extend_from_slice(MAGIC);
    for (v, name) in [
        (ds.samples, "samples"),
        (ds.timesteps, "timesteps"),
        (ds.channels, "channels"),
        (ds.classes, "classes"),
    ] {
        out.extend_from_slice(&to_u32(v, name)?.to_le_bytes());
    }
    for &y in &ds.labels {
        out.extend_from_slice(&y.to_le_bytes());
    }
    for chunk in ds.spikes.chunks(8) {
        let byte = chunk
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &s)| acc | (s << i));
        out.push(byte);
    }
    Ok(out)
}

pub fn decode_spk1(bytes: &[u8]) -> Result<SpikeDataset> {
    let truncated = |offset: usize, what: &str| Error::Format {
        offset: offset as u64,
        reason: format!("truncated while reading {what}"),
    };
    if bytes.len() < 4 {
        return Err(truncated(bytes.len(), "magic"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {:?}", &bytes[..4]),
        });
    }
    let read_u32 = |offset: usize, what: &str| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| truncated(bytes.len(), what))
    };
    let samples = read_u32(4, "sample count")? as usize;
    let timesteps = read_u32(8, "timestep count")? as usize;
    let channels = read_u32(12, "channel count")? as usize;
    let classes = read_u32(16, "class count")? as usize;

    let labels_end = samples
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format { offset: 4, reason: "sample count overflows".into() })?;
    let bits = samples
        .checked_mul(timesteps)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Format { offset: 4, reason: "dimensions overflow".into() })?;
    let total = labels_end + bits.div_ceil(8);
    if bytes.len() < labels_end {
        return Err(truncated(bytes.len(), "labels"));
    }
    if bytes.len() < total {
        return Err(truncated(bytes.len(), "spike bits"));
    }
    if bytes.len() > total {
        return Err(Error::Format {
            offset: total as u64,
            reason: format!("{} trailing bytes", bytes.len() - total),
        });
    }
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let offset = HEADER_LEN + 4 * i;
        let y = read_u32(offset, "labels")?;
        if y as usize >= classes {
            return Err(Error::Format {
                offset: offset as u64,
                reason: format!("label {y} out of range for {classes} classes"),
            });
        }
        labels.push(y);
    }
    let packed = &bytes[labels_end..];
    let spikes = (0..bits).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect();
    SpikeDataset::new(timesteps, channels, classes, spikes, labels, DatasetMeta::default())
}

pub fn save_dataset(path: &Path, ds: &SpikeDataset) -> Result<()> {
    write_atomic(path, &encode_spk1(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<SpikeDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut ds = decode_spk1(&bytes)?;
    ds.meta.task = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ds)
}

/// Builds a dataset from spike events given as CSV rows `sample,t,channel`
/// (header required). Unlisted positions are silent.
pub fn import_csv(
    text: &str,
    labels: Vec<u32>,
    timesteps: usize,
    channels: usize,
    classes: usize,
) -> Result<SpikeDataset> {
    let samples = labels.len();
    let mut spikes = vec![0u8; samples * timesteps * channels];
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("csv header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["sample", "t", "channel"] {
        return Err(Error::Data(format!(
            "expected header sample,t,channel, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("csv row {}: {e}", row + 2)))?;
        let field = |k: usize, bound: usize| -> Result<usize> {
            let v: usize = record[k]
                .parse()
                .map_err(|_| Error::Data(format!("csv row {}: bad integer {:?}", row + 2, &record[k])))?;
            if v >= bound {
                return Err(Error::Data(format!(
                    "csv row {}: {} = {v} out of range (< {bound})",
                    row + 2,
                    &headers[k]
                )));
            }
            Ok(v)
        };
        let (s, t, c) = (field(0, samples)?, field(1, timesteps)?, field(2, channels)?);
        spikes[(s * timesteps + t) * channels + c] = 1;
    }
    SpikeDataset::new(
        timesteps,
        channels,
        classes,
        spikes,
        labels,
        DatasetMeta {
            task: "csv".into(),
            seed: None,
        },
    )
}
