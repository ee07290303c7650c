//! Datasets: an on-disk bundle format, a synthetic multimodal signal
//! generator, and per-window standardization.
//!
//! A bundle is a directory holding `manifest.json` plus, for each split,
//! `{split}_signals.bin` (float64, `[num x C x L]`) and `{split}_labels.bin`
//! (int32, `[num]`). Every blob starts with the 16-byte magic
//! `FAMAE-TENSOR\0\0\0\0`, then the rank and each extent as little-endian
//! `u64`, then the row-major little-endian payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::fft::irdft_rows;
use crate::numerics::{Rng, TensorF};

pub const BLOB_MAGIC: &[u8; 16] = b"FAMAE-TENSOR\0\0\0\0";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 60,
            val: 20,
            test: 500,
        }
    }
}

impl SplitSizes {
    pub fn get(&self, split: &str) -> usize {
        match split {
            "train" => self.train,
            "val" => self.val,
            "test" => self.test,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub sampling_rate_hz: f64,
    pub length: usize,
    pub channels: Vec<String>,
    pub splits: SplitSizes,
    pub n_classes: usize,
    /// Keys this version does not know about, kept for round trips.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// One split: signals `[num x C x L]` and labels `[num]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub signals: TensorF,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.signals.shape()[1]
    }

    pub fn length(&self) -> usize {
        self.signals.shape()[2]
    }

    /// Samples of channel `c` of example `i`.
    pub fn channel(&self, i: usize, c: usize) -> &[f64] {
        let (ch, l) = (self.n_channels(), self.length());
        let off = (i * ch + c) * l;
        &self.signals.data()[off..off + l]
    }

    /// Keep the listed channels, in the given order.
    pub fn select_channels(&self, idx: &[usize]) -> Split {
        let (n, l) = (self.len(), self.length());
        let mut data = Vec::with_capacity(n * idx.len() * l);
        for i in 0..n {
            for &c in idx {
                data.extend_from_slice(self.channel(i, c));
            }
        }
        Split {
            signals: TensorF::new(vec![n, idx.len(), l], data).expect("consistent shape"),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub manifest: Manifest,
    pub splits: BTreeMap<String, Split>,
}

impl DatasetBundle {
    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits
            .get(name)
            .ok_or_else(|| Error::Manifest(format!("missing split `{name}`")))
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.manifest
            .channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    /// New bundle restricted to the named channels, in that order.
    pub fn select_channels<S: AsRef<str>>(&self, names: &[S]) -> Result<DatasetBundle> {
        if names.is_empty() {
            return Err(Error::EmptySubset);
        }
        let idx = names
            .iter()
            .map(|n| self.channel_index(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = self.manifest.clone();
        manifest.channels = names.iter().map(|n| n.as_ref().to_string()).collect();
        let splits = self
            .splits
            .iter()
            .map(|(k, s)| (k.clone(), s.select_channels(&idx)))
            .collect();
        Ok(DatasetBundle { manifest, splits })
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        for name in SPLITS {
            let s = self.split(name)?;
            let want = [m.splits.get(name), m.channels.len(), m.length];
            if s.signals.shape() != want {
                return Err(Error::SizeMismatch {
                    split: name.into(),
                    what: format!("signals shape {:?}, manifest implies {:?}", s.signals.shape(), want),
                });
            }
            if s.labels.len() != want[0] {
                return Err(Error::SizeMismatch {
                    split: name.into(),
                    what: format!("{} labels, manifest implies {}", s.labels.len(), want[0]),
                });
            }
            if let Some(&bad) = s.labels.iter().find(|&&y| y >= m.n_classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    n_classes: m.n_classes,
                });
            }
        }
        Ok(())
    }
}

fn blob_bytes(extents: &[usize], payload: impl Iterator<Item = [u8; 8]>, elem: usize) -> Vec<u8> {
    let n: usize = extents.iter().product();
    let mut out = Vec::with_capacity(16 + 8 * (1 + extents.len()) + n * elem);
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&(extents.len() as u64).to_le_bytes());
    for &e in extents {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for b in payload {
        out.extend_from_slice(&b[..elem]);
    }
    out
}

/// Encode a float64 tensor in the blob format.
pub fn encode_f64_blob(t: &TensorF) -> Vec<u8> {
    blob_bytes(t.shape(), t.data().iter().map(|v| v.to_le_bytes()), 8)
}

fn encode_i32_blob(v: &[usize]) -> Vec<u8> {
    blob_bytes(
        &[v.len()],
        v.iter().map(|&x| {
            let mut b = [0u8; 8];
            b[..4].copy_from_slice(&(x as i32).to_le_bytes());
            b
        }),
        4,
    )
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, usize)> {
    let err = |reason: &str| Error::Blob {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 24 || &bytes[..16] != BLOB_MAGIC {
        return Err(err("bad magic"));
    }
    let rank = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let head = 24 + 8 * rank;
    if rank > 16 || bytes.len() < head {
        return Err(err("truncated header"));
    }
    let extents = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[24 + 8 * i..32 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    Ok((extents, head))
}

/// Decode a float64 blob; `split` names the owner in size errors.
pub fn decode_f64_blob(bytes: &[u8], path: &Path, split: &str) -> Result<TensorF> {
    let (extents, head) = parse_header(bytes, path)?;
    let n: usize = extents.iter().product();
    if bytes.len() != head + 8 * n {
        return Err(Error::SizeMismatch {
            split: split.into(),
            what: format!("{} holds {} payload bytes, header implies {}", path.display(), bytes.len() - head, 8 * n),
        });
    }
    let data = bytes[head..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TensorF::new(extents, data)
}

fn decode_i32_blob(bytes: &[u8], path: &Path, split: &str) -> Result<Vec<usize>> {
    let (extents, head) = parse_header(bytes, path)?;
    let n: usize = extents.iter().product();
    if extents.len() != 1 || bytes.len() != head + 4 * n {
        return Err(Error::SizeMismatch {
            split: split.into(),
            what: format!("{} label blob does not hold {n} int32 values", path.display()),
        });
    }
    bytes[head..]
        .chunks_exact(4)
        .map(|c| {
            let v = i32::from_le_bytes(c.try_into().unwrap());
            usize::try_from(v).map_err(|_| Error::Blob {
                path: path.to_path_buf(),
                reason: format!("negative label {v}"),
            })
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn save_f64_blob(path: &Path, t: &TensorF) -> Result<()> {
    write_file(path, &encode_f64_blob(t))
}

pub fn load_f64_blob(path: &Path) -> Result<TensorF> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    decode_f64_blob(&fs::read(path)?, path, "-")
}

pub fn signals_file(split: &str) -> String {
    format!("{split}_signals.bin")
}

pub fn labels_file(split: &str) -> String {
    format!("{split}_labels.bin")
}

pub fn save_dataset(b: &DatasetBundle, dir: &Path) -> Result<()> {
    b.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = serde_json::to_string_pretty(&b.manifest)?;
    write_file(&dir.join("manifest.json"), manifest.as_bytes())?;
    for name in SPLITS {
        let s = b.split(name)?;
        write_file(&dir.join(signals_file(name)), &encode_f64_blob(&s.signals))?;
        write_file(&dir.join(labels_file(name)), &encode_i32_blob(&s.labels))?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let mpath = dir.join("manifest.json");
    if !mpath.exists() {
        return Err(Error::Missing(mpath));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&mpath)?)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    let mut splits = BTreeMap::new();
    for name in SPLITS {
        let sp = dir.join(signals_file(name));
        let lp = dir.join(labels_file(name));
        for p in [&sp, &lp] {
            if !p.exists() {
                return Err(Error::Missing(p.clone()));
            }
        }
        let signals = decode_f64_blob(&fs::read(&sp)?, &sp, name)?;
        let labels = decode_i32_blob(&fs::read(&lp)?, &lp, name)?;
        splits.insert(name.to_string(), Split { signals, labels });
    }
    let b = DatasetBundle { manifest, splits };
    b.validate()?;
    Ok(b)
}

/// Standardize one window in place: mean 0, std 1 (std floored).
pub fn standardize_window(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    x.iter_mut().for_each(|v| *v = (*v - mean) / std);
}

/// Per sample, per channel standardization of a `[num x C x L]` tensor.
pub fn standardize(signals: &TensorF) -> TensorF {
    let l = *signals.shape().last().unwrap_or(&1);
    let mut out = signals.clone();
    if l > 0 {
        out.data_mut().chunks_mut(l).for_each(standardize_window);
    }
    out
}

/// One synthetic channel. `bands[y]` lists the oscillation centers (Hz)
/// used for class `y`; an empty `bands` makes a pure-noise channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthChannel {
    pub name: String,
    #[serde(default)]
    pub bands: Vec<Vec<f64>>,
    #[serde(default = "default_band_width")]
    pub band_width_hz: f64,
    /// Signal-to-noise power ratio; `null` means noiseless.
    #[serde(default)]
    pub snr: Option<f64>,
    /// Copy another (earlier) channel sample for sample.
    #[serde(default)]
    pub duplicate_of: Option<String>,
}

fn default_band_width() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub name: String,
    pub n_classes: usize,
    pub length: usize,
    pub sampling_rate_hz: f64,
    /// Exponent `α` of the `1/f^α` noise power spectrum.
    pub noise_exponent: f64,
    /// Every channel encodes the sample's class; otherwise only the first
    /// informative channel does and the rest follow independent classes.
    pub shared_latent: bool,
    pub channels: Vec<SynthChannel>,
    pub sizes: SplitSizes,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            n_classes: 3,
            length: 300,
            sampling_rate_hz: 100.0,
            noise_exponent: 1.0,
            shared_latent: true,
            channels: vec![
                SynthChannel {
                    name: "eeg".into(),
                    bands: vec![vec![4.0], vec![10.0], vec![20.0]],
                    band_width_hz: 1.0,
                    snr: Some(2.0),
                    duplicate_of: None,
                },
                SynthChannel {
                    name: "eog".into(),
                    bands: vec![vec![2.0], vec![6.0], vec![14.0]],
                    band_width_hz: 1.0,
                    snr: Some(2.0),
                    duplicate_of: None,
                },
            ],
            sizes: SplitSizes {
                train: 200,
                val: 50,
                test: 200,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Config("synth.n_classes must be at least 1".into()));
        }
        if self.length == 0 || self.sampling_rate_hz <= 0.0 {
            return Err(Error::Config("synth.length and synth.sampling_rate_hz must be positive".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::Config("synth.channels must not be empty".into()));
        }
        let nyquist = self.sampling_rate_hz / 2.0;
        for (i, ch) in self.channels.iter().enumerate() {
            if let Some(src) = &ch.duplicate_of {
                if !self.channels[..i].iter().any(|c| &c.name == src) {
                    return Err(Error::Config(format!(
                        "channel `{}` duplicates `{src}`, which is not an earlier channel",
                        ch.name
                    )));
                }
                continue;
            }
            if !ch.bands.is_empty() && ch.bands.len() != self.n_classes {
                return Err(Error::Config(format!(
                    "channel `{}` lists bands for {} classes, expected {}",
                    ch.name,
                    ch.bands.len(),
                    self.n_classes
                )));
            }
            for &f in ch.bands.iter().flatten() {
                let top = f + ch.band_width_hz / 2.0;
                if f <= 0.0 || top >= nyquist {
                    return Err(Error::BandAboveNyquist {
                        channel: ch.name.clone(),
                        band_hz: f,
                        nyquist_hz: nyquist,
                    });
                }
            }
            if matches!(ch.snr, Some(s) if s <= 0.0) {
                return Err(Error::Config(format!("channel `{}` needs snr > 0", ch.name)));
            }
        }
        Ok(())
    }
}

/// `1/f^α` noise of unit RMS.
fn colored_noise(len: usize, alpha: f64, rng: &mut Rng) -> Vec<f64> {
    let nf = len / 2 + 1;
    let mut re = vec![0.0; nf];
    let mut im = vec![0.0; nf];
    for k in 1..nf {
        let amp = (k as f64).powf(-alpha / 2.0);
        re[k] = amp * rng.normal();
        im[k] = amp * rng.normal();
    }
    let mut x = irdft_rows(&re, &im, len, 1);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

fn oscillation(cfg: &SynthConfig, ch: &SynthChannel, class: usize, rng: &mut Rng) -> Vec<f64> {
    let mut x = vec![0.0; cfg.length];
    for &center in &ch.bands[class] {
        let f = center + rng.uniform_range(-0.5, 0.5) * ch.band_width_hz;
        let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
        let amp = rng.uniform_range(0.8, 1.2);
        let w = std::f64::consts::TAU * f / cfg.sampling_rate_hz;
        for (t, v) in x.iter_mut().enumerate() {
            *v += amp * (w * t as f64 + phase).sin();
        }
    }
    x
}

fn synth_split(cfg: &SynthConfig, n: usize, rng: &mut Rng) -> Split {
    let c = cfg.channels.len();
    let l = cfg.length;
    // balanced labels in random order
    let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.n_classes).collect();
    rng.shuffle(&mut labels);
    let mut data = vec![0.0; n * c * l];
    for (i, &y) in labels.iter().enumerate() {
        let mut first_informative = true;
        for (ci, ch) in cfg.channels.iter().enumerate() {
            let off = (i * c + ci) * l;
            if let Some(src) = &ch.duplicate_of {
                let si = cfg.channels.iter().position(|x| &x.name == src).unwrap();
                let soff = (i * c + si) * l;
                data.copy_within(soff..soff + l, off);
                continue;
            }
            let mut x = if ch.bands.is_empty() {
                vec![0.0; l]
            } else {
                let class = if cfg.shared_latent || first_informative {
                    y
                } else {
                    rng.below(cfg.n_classes)
                };
                first_informative = false;
                oscillation(cfg, ch, class, rng)
            };
            let noise_rms = if ch.bands.is_empty() {
                Some(1.0)
            } else {
                ch.snr.map(|snr| {
                    let p = x.iter().map(|v| v * v).sum::<f64>() / l as f64;
                    (p / snr).sqrt()
                })
            };
            if let Some(s) = noise_rms {
                let noise = colored_noise(l, cfg.noise_exponent, rng);
                x.iter_mut().zip(noise).for_each(|(v, e)| *v += s * e);
            }
            data[off..off + l].copy_from_slice(&x);
        }
    }
    Split {
        signals: TensorF::new(vec![n, c, l], data).expect("consistent shape"),
        labels,
    }
}

/// Generate a labelled multichannel dataset whose classes are told apart by
/// their oscillation frequencies.
pub fn synth_generate(cfg: &SynthConfig, rng: &Rng) -> Result<DatasetBundle> {
    cfg.validate()?;
    let mut splits = BTreeMap::new();
    for name in SPLITS {
        let mut r = rng.substream(name);
        splits.insert(name.to_string(), synth_split(cfg, cfg.sizes.get(name), &mut r));
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        sampling_rate_hz: cfg.sampling_rate_hz,
        length: cfg.length,
        channels: cfg.channels.iter().map(|c| c.name.clone()).collect(),
        splits: cfg.sizes,
        n_classes: cfg.n_classes,
        extra: serde_json::Map::new(),
    };
    Ok(DatasetBundle { manifest, splits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_constant_and_idempotent() {
        let t = TensorF::new(vec![1, 1, 4], vec![3.0; 4]).unwrap();
        assert_eq!(standardize(&t).data(), &[0.0; 4]);
        let mut rng = Rng::new(0);
        let t = TensorF::new(vec![2, 3, 50], (0..300).map(|_| 5.0 + 3.0 * rng.normal()).collect()).unwrap();
        let s1 = standardize(&t);
        let s2 = standardize(&s1);
        for (a, b) in s1.data().iter().zip(s2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nyquist_violation_names_channel() {
        let mut cfg = SynthConfig::default();
        cfg.channels[1].bands[2] = vec![49.8];
        match cfg.validate() {
            Err(Error::BandAboveNyquist { channel, .. }) => assert_eq!(channel, "eog"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = SynthConfig {
            sizes: SplitSizes { train: 6, val: 3, test: 3 },
            ..SynthConfig::default()
        };
        let a = synth_generate(&cfg, &Rng::new(7)).unwrap();
        let b = synth_generate(&cfg, &Rng::new(7)).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&cfg, &Rng::new(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn duplicate_channel_is_exact_copy() {
        let mut cfg = SynthConfig {
            sizes: SplitSizes { train: 4, val: 1, test: 1 },
            ..SynthConfig::default()
        };
        cfg.channels.push(SynthChannel {
            name: "eeg2".into(),
            bands: vec![],
            band_width_hz: 1.0,
            snr: None,
            duplicate_of: Some("eeg".into()),
        });
        let b = synth_generate(&cfg, &Rng::new(1)).unwrap();
        let s = b.split("train").unwrap();
        for i in 0..s.len() {
            assert_eq!(s.channel(i, 0), s.channel(i, 2));
        }
    }
}
