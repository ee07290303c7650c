use std::fs;

use famae::data::*;
use famae::numerics::{rdft, Rng, TensorF};
use famae::Error;
use proptest::prelude::*;

fn tiny() -> SynthConfig {
    SynthConfig {
        sizes: SplitSizes { train: 12, val: 6, test: 6 },
        ..SynthConfig::default()
    }
}

fn spectrum_power(x: &[f64]) -> Vec<f64> {
    let z = rdft(&TensorF::from_vec(x.to_vec()), 0).unwrap();
    z.data().iter().map(|v| v.norm_sqr()).collect()
}

fn bin_of(hz: f64, cfg: &SynthConfig) -> f64 {
    hz * cfg.length as f64 / cfg.sampling_rate_hz
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let b = synth_generate(&tiny(), &Rng::new(3)).unwrap();
    let (d1, d2) = (dir.path().join("a"), dir.path().join("b"));
    save_dataset(&b, &d1).unwrap();
    let back = load_dataset(&d1).unwrap();
    assert_eq!(back, b);
    save_dataset(&back, &d2).unwrap();
    let mut files: Vec<_> = fs::read_dir(&d1).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files.len(), 7);
    for f in files {
        assert_eq!(fs::read(d1.join(&f)).unwrap(), fs::read(d2.join(&f)).unwrap(), "{f:?}");
    }
}

#[test]
fn truncated_blob_names_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let b = synth_generate(&tiny(), &Rng::new(3)).unwrap();
    save_dataset(&b, dir.path()).unwrap();
    let p = dir.path().join(signals_file("val"));
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::SizeMismatch { split, .. }) => assert_eq!(split, "val"),
        other => panic!("unexpected {other:?}"),
    }
    fs::remove_file(&p).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Missing(_))));
}

#[test]
fn unknown_manifest_keys_survive_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = synth_generate(&tiny(), &Rng::new(3)).unwrap();
    save_dataset(&b, dir.path()).unwrap();
    let mp = dir.path().join("manifest.json");
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&mp).unwrap()).unwrap();
    v["montage"] = serde_json::json!({"ref": "Cz", "version": 2});
    v["notes"] = "recorded later".into();
    fs::write(&mp, serde_json::to_vec(&v).unwrap()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest.extra["notes"], "recorded later");
    let out = tempfile::tempdir().unwrap();
    save_dataset(&back, out.path()).unwrap();
    let again: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(again["montage"], v["montage"]);
    assert_eq!(again["notes"], v["notes"]);
}

#[test]
fn blob_layout_is_magic_rank_extents_payload() {
    let t = TensorF::new(vec![2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let bytes = encode_f64_blob(&t);
    assert_eq!(&bytes[..16], BLOB_MAGIC);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
    assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(bytes[40..48].try_into().unwrap()), 3);
    assert_eq!(f64::from_le_bytes(bytes[48..56].try_into().unwrap()), 1.0);
    assert_eq!(bytes.len(), 48 + 6 * 8);
    let p = std::path::Path::new("x.bin");
    assert_eq!(decode_f64_blob(&bytes, p, "train").unwrap(), t);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_f64_blob(&bad, p, "train"), Err(Error::Blob { .. })));
}

#[test]
fn noiseless_peak_lies_in_class_band() {
    let cfg = SynthConfig {
        channels: SynthConfig::default().channels.into_iter().map(|c| SynthChannel { snr: None, ..c }).collect(),
        ..tiny()
    };
    let b = synth_generate(&cfg, &Rng::new(5)).unwrap();
    for split in SPLITS {
        let s = b.split(split).unwrap();
        for i in 0..s.len() {
            for (c, ch) in cfg.channels.iter().enumerate() {
                let p = spectrum_power(s.channel(i, c));
                let peak = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap() as f64;
                let centre = bin_of(ch.bands[s.labels[i]][0], &cfg);
                let half = bin_of(ch.band_width_hz, &cfg) / 2.0 + 1.0;
                assert!((peak - centre).abs() <= half, "{split} #{i} {}: peak bin {peak}, band {centre}", ch.name);
            }
        }
    }
}

/// Mean energy within ±band_width/2 of each class band, per channel.
fn band_features(x: &[f64], ch: &SynthChannel, cfg: &SynthConfig) -> Vec<f64> {
    let p = spectrum_power(x);
    ch.bands
        .iter()
        .map(|b| {
            let lo = bin_of(b[0] - ch.band_width_hz, cfg).floor().max(0.0) as usize;
            let hi = (bin_of(b[0] + ch.band_width_hz, cfg).ceil() as usize).min(p.len() - 1);
            p[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Nearest-class-mean on log band energies, fit on train, scored on test.
fn band_energy_accuracy(b: &DatasetBundle, c: usize, cfg: &SynthConfig) -> f64 {
    let ch = &cfg.channels[c];
    let feats = |split: &str| {
        let s = b.split(split).unwrap();
        (0..s.len())
            .map(|i| (band_features(s.channel(i, c), ch, cfg).iter().map(|v| v.ln()).collect::<Vec<_>>(), s.labels[i]))
            .collect::<Vec<_>>()
    };
    let train = feats("train");
    let k = cfg.n_classes;
    let dim = train[0].0.len();
    let mut means = vec![vec![0.0; dim]; k];
    let mut counts = vec![0.0; k];
    for (f, y) in &train {
        counts[*y] += 1.0;
        for j in 0..dim {
            means[*y][j] += f[j];
        }
    }
    for y in 0..k {
        means[y].iter_mut().for_each(|v| *v /= counts[y]);
    }
    let test = feats("test");
    let correct = test
        .iter()
        .filter(|(f, y)| {
            let d = |m: &Vec<f64>| m.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (0..k).min_by(|&a, &b| d(&means[a]).total_cmp(&d(&means[b]))).unwrap() == *y
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn band_energy_oracle_separates_informative_channel_only() {
    let cfg = SynthConfig {
        n_classes: 2,
        channels: vec![
            SynthChannel {
                name: "a".into(),
                bands: vec![vec![10.0], vec![10.0]],
                band_width_hz: 1.0,
                snr: Some(2.0),
                duplicate_of: None,
            },
            SynthChannel {
                name: "b".into(),
                bands: vec![vec![5.0], vec![20.0]],
                band_width_hz: 1.0,
                snr: Some(2.0),
                duplicate_of: None,
            },
        ],
        sizes: SplitSizes { train: 200, val: 10, test: 400 },
        ..SynthConfig::default()
    };
    let b = synth_generate(&cfg, &Rng::new(9)).unwrap();
    let acc_a = band_energy_accuracy(&b, 0, &cfg);
    let acc_b = band_energy_accuracy(&b, 1, &cfg);
    // 99.9% binomial interval around chance for n = 400
    let ci = 3.3 * (0.25f64 / 400.0).sqrt();
    assert!((acc_a - 0.5).abs() < ci, "channel a: {acc_a}");
    assert!(acc_b > 0.95, "channel b: {acc_b}");
}

#[test]
fn clean_bands_dominate_out_of_band_energy() {
    let cfg = SynthConfig {
        channels: SynthConfig::default().channels.into_iter().map(|c| SynthChannel { snr: Some(10.0), ..c }).collect(),
        sizes: SplitSizes { train: 60, val: 3, test: 3 },
        ..SynthConfig::default()
    };
    let b = synth_generate(&cfg, &Rng::new(2)).unwrap();
    let s = b.split("train").unwrap();
    for (c, ch) in cfg.channels.iter().enumerate() {
        for y in 0..cfg.n_classes {
            let (mut inb, mut outb, mut n) = (0.0, 0.0, 0.0);
            for i in (0..s.len()).filter(|&i| s.labels[i] == y) {
                let p = spectrum_power(s.channel(i, c));
                let centre = bin_of(ch.bands[y][0], &cfg);
                let w = bin_of(ch.band_width_hz, &cfg);
                let (mut e_in, mut k_in, mut e_out, mut k_out) = (0.0, 0.0, 0.0, 0.0);
                for (k, &v) in p.iter().enumerate().skip(1) {
                    if (k as f64 - centre).abs() <= w {
                        e_in += v;
                        k_in += 1.0;
                    } else {
                        e_out += v;
                        k_out += 1.0;
                    }
                }
                inb += e_in / k_in;
                outb += e_out / k_out;
                n += 1.0;
            }
            let ratio = (inb / n) / (outb / n);
            assert!(ratio > 3.0, "{} class {y}: {ratio}", ch.name);
        }
    }
}

#[test]
fn classes_are_balanced() {
    let cfg = SynthConfig {
        sizes: SplitSizes { train: 300, val: 200, test: 301 },
        ..SynthConfig::default()
    };
    let b = synth_generate(&cfg, &Rng::new(4)).unwrap();
    for split in SPLITS {
        let s = b.split(split).unwrap();
        let expect = s.len() as f64 / cfg.n_classes as f64;
        for y in 0..cfg.n_classes {
            let n = s.labels.iter().filter(|&&l| l == y).count() as f64;
            assert!((n - expect).abs() <= 0.1 * expect, "{split} class {y}: {n}");
        }
    }
}

#[test]
fn channel_subsets_and_unknown_names() {
    let b = synth_generate(&tiny(), &Rng::new(1)).unwrap();
    let v = b.select_channels(&["eog"]).unwrap();
    assert_eq!(v.manifest.channels, vec!["eog"]);
    assert_eq!(v.split("test").unwrap().channel(2, 0), b.split("test").unwrap().channel(2, 1));
    assert!(matches!(b.select_channels(&["emg"]), Err(Error::UnknownChannel(_))));
    assert!(b.select_channels::<&str>(&[]).is_err());
}

#[test]
fn standardized_windows_already_standard_stay_put() {
    let mut rng = Rng::new(6);
    let t = TensorF::new(vec![3, 2, 40], (0..240).map(|_| rng.normal()).collect()).unwrap();
    let s = standardize(&t);
    let again = standardize(&s);
    assert!(s.data().iter().zip(again.data()).all(|(a, b)| (a - b).abs() < 1e-12));
}

proptest! {
    #[test]
    fn standardized_moments(len in 2usize..200, shift in -50.0f64..50.0, scale in 0.01f64..100.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut x: Vec<f64> = (0..len).map(|_| shift + scale * rng.normal()).collect();
        standardize_window(&mut x);
        let n = len as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }
}
