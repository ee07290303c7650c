//! Config-driven runs: the commands behind the `famae` binary.
//!
//! Each command writes `config.json` (the resolved configuration),
//! its results, and `runlog.json` (wall-clock time and parameter count)
//! into the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{load_dataset, save_dataset, synth_generate, DatasetBundle, SynthConfig};
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::harness::{
    config_hash, count_params, dropout_rows, export_attention, finetune, modality_substitution, save_attention,
    transfer_run, write_json, write_results_csv, AblationToggles, FinetuneConfig, ResultRow,
};
use crate::numerics::Rng;
use crate::pretrainer::{pretrain, FamaeModel, PretrainConfig};
use crate::presets;

/// Reference total parameter count of the full-size model.
pub const REFERENCE_PARAMS: usize = 243_000;

/// Where a dataset comes from: a bundle on disk or a synthetic recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

impl DataSource {
    pub fn synth(cfg: SynthConfig) -> Self {
        Self {
            path: None,
            synth: Some(cfg),
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        match (&self.path, &self.synth) {
            (Some(_), Some(_)) => Err(Error::Config(format!("data.{what}: set either `path` or `synth`, not both"))),
            (None, None) => Err(Error::Config(format!("data.{what}: one of `path` or `synth` is required"))),
            (None, Some(s)) => s.validate(),
            (Some(_), None) => Ok(()),
        }
    }

    pub fn resolve(&self, rng: &Rng) -> Result<DatasetBundle> {
        match (&self.path, &self.synth) {
            (Some(p), None) => load_dataset(p),
            (None, Some(s)) => synth_generate(s, &rng.substream(&s.name)),
            _ => Err(Error::Config("data source must set exactly one of `path` or `synth`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub pretrain: DataSource,
    pub target: DataSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            pretrain: DataSource::synth(presets::pretrain_corpus()),
            target: DataSource::synth(presets::transfer_target()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub fa: Vec<bool>,
    pub fm: Vec<bool>,
    /// Second-encoder settings to sweep; `null` picks by channel count.
    pub keep_enc2: Vec<Option<bool>>,
    /// Seeds to repeat every cell with; empty means the run seed only.
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            fa: vec![true, false],
            fm: vec![true, false],
            keep_enc2: vec![None],
            seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MismatchMode {
    Substitution,
    #[default]
    Dropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MismatchConfig {
    pub mode: MismatchMode,
    /// Channels of the baseline run; empty means all target channels.
    pub base: Vec<String>,
    /// Substitution rows as `[from, to]` pairs.
    pub substitutions: Vec<(String, String)>,
    /// Dropout rows; empty means drop trailing channels one at a time
    /// until a single channel is left.
    pub subsets: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttnConfig {
    pub split: String,
    pub max_samples: usize,
}

impl Default for AttnConfig {
    fn default() -> Self {
        Self {
            split: "test".into(),
            max_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub data: DataConfig,
    pub ablate: AblateConfig,
    pub mismatch: MismatchConfig,
    pub attn: AttnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            data: DataConfig::default(),
            ablate: AblateConfig::default(),
            mismatch: MismatchConfig::default(),
            attn: AttnConfig::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale defaults: small model, short schedules.
    pub fn desk() -> Self {
        Self {
            model: presets::desk_model(),
            pretrain: presets::desk_pretrain(),
            finetune: presets::desk_finetune(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.data.pretrain.validate("pretrain")?;
        self.data.target.validate("target")?;
        if self.ablate.fa.is_empty() || self.ablate.fm.is_empty() || self.ablate.keep_enc2.is_empty() {
            return Err(Error::Config("ablate.fa, ablate.fm and ablate.keep_enc2 must be nonempty".into()));
        }
        if self.attn.max_samples == 0 {
            return Err(Error::Config("attn.max_samples must be at least 1".into()));
        }
        Ok(())
    }

    /// Parse, apply `section.key=value` overrides, and validate.
    pub fn from_json(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut v: Value = match text {
            Some(t) => serde_json::from_str(t).map_err(|e| Error::Config(e.to_string()))?,
            None => json!({}),
        };
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_json(Some(&fs::read_to_string(path)?), overrides)
    }
}

/// Set `a.b.c=value` inside a JSON object; `value` is parsed as JSON and
/// falls back to a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("override key `{key}` has an empty segment")));
        }
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = json!({});
                cur.as_object_mut().unwrap()
            }
            _ => return Err(Error::Config(format!("override `{key}`: `{part}` is not inside an object"))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct RunLog {
    command: String,
    seed: u64,
    wall_clock_secs: f64,
    n_params: usize,
    note: String,
}

fn param_note(cfg: &ModelConfig, n: usize) -> String {
    let delta = (n as f64 - REFERENCE_PARAMS as f64) / REFERENCE_PARAMS as f64 * 100.0;
    format!(
        "{n} parameters ({delta:+.1}% vs {REFERENCE_PARAMS}); second encoder and decoder each {} layer(s), {} heads, width {}",
        cfg.aux_depth, cfg.aux_heads, cfg.width
    )
}

fn start(cfg: &RunConfig, out: &Path) -> Result<Instant> {
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)?;
    Ok(Instant::now())
}

fn finish(out: &Path, command: &str, cfg: &RunConfig, t0: Instant, n_params: usize, model: &ModelConfig) -> Result<()> {
    write_json(
        &out.join("runlog.json"),
        &RunLog {
            command: command.into(),
            seed: cfg.seed,
            wall_clock_secs: t0.elapsed().as_secs_f64(),
            n_params,
            note: param_note(model, n_params),
        },
    )
}

/// Config hash of a run. The output location is not part of a run's
/// identity, so it is left out.
pub fn run_hash(cfg: &RunConfig) -> Result<String> {
    config_hash(&RunConfig {
        output_dir: PathBuf::new(),
        ..cfg.clone()
    })
}

/// Which configured dataset a command acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataRole {
    Pretrain,
    Target,
}

fn data_rng(cfg: &RunConfig) -> Rng {
    Rng::new(cfg.seed).substream("data")
}

pub fn dataset(cfg: &RunConfig, role: DataRole) -> Result<DatasetBundle> {
    let src = match role {
        DataRole::Pretrain => &cfg.data.pretrain,
        DataRole::Target => &cfg.data.target,
    };
    src.resolve(&data_rng(cfg))
}

/// Write a dataset bundle to `out` and return its manifest summary.
pub fn cmd_synth(cfg: &RunConfig, role: DataRole, out: &Path) -> Result<String> {
    let src = match role {
        DataRole::Pretrain => &cfg.data.pretrain,
        DataRole::Target => &cfg.data.target,
    };
    if src.synth.is_none() {
        return Err(Error::Config("synth needs a `synth` data source".into()));
    }
    let b = dataset(cfg, role)?;
    save_dataset(&b, out)?;
    let m = &b.manifest;
    Ok(format!(
        "{}: {} classes, channels [{}], length {} at {} Hz, splits train {} / val {} / test {}",
        m.name,
        m.n_classes,
        m.channels.join(", "),
        m.length,
        m.sampling_rate_hz,
        m.splits.train,
        m.splits.val,
        m.splits.test
    ))
}

/// Pretrain, writing `checkpoint.bin` and `losses.csv`.
pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let t0 = start(cfg, out)?;
    let data = dataset(cfg, DataRole::Pretrain)?;
    let rng = Rng::new(cfg.seed);
    let res = pretrain(&data, &cfg.model, &cfg.pretrain, &rng)?;
    let channels = if cfg.pretrain.channels.is_empty() {
        data.manifest.channels.clone()
    } else {
        cfg.pretrain.channels.clone()
    };
    let ck = out.join("checkpoint.bin");
    save_checkpoint(
        &ck,
        &cfg.model,
        cfg.pretrain.epochs,
        cfg.seed,
        json!({ "kind": "pretrained", "channels": channels }),
        &res.model.store,
    )?;
    let mut w = csv::Writer::from_path(out.join("losses.csv"))?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in res.losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    finish(out, "pretrain", cfg, t0, count_params(&res.model), &cfg.model)?;
    Ok(ck)
}

/// Rebuild a model from a checkpoint written by this crate. The
/// architecture comes from the checkpoint header.
pub fn load_model(path: &Path) -> Result<FamaeModel> {
    let ck = load_checkpoint(path)?;
    let mut model = FamaeModel::new(&ck.header.config, &Rng::new(ck.header.seed))?;
    let copied = model.store.load_matching(&ck.store)?;
    if copied != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint provides {copied} of {} model parameters",
            model.store.len()
        )));
    }
    Ok(model)
}

fn pretrained(checkpoint: Option<&Path>) -> Result<Option<FamaeModel>> {
    checkpoint.map(load_model).transpose()
}

fn model_cfg_for(cfg: &RunConfig, model: Option<&FamaeModel>) -> ModelConfig {
    model.map(|m| m.cfg.clone()).unwrap_or_else(|| cfg.model.clone())
}

/// Fine-tune (from `checkpoint`, or from scratch) and evaluate.
pub fn cmd_finetune(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<Vec<ResultRow>> {
    let t0 = start(cfg, out)?;
    let pre = pretrained(checkpoint)?;
    let model_cfg = model_cfg_for(cfg, pre.as_ref());
    let target = dataset(cfg, DataRole::Target)?;
    let rng = Rng::new(cfg.seed);
    let res = finetune(pre.as_ref(), &target, &model_cfg, &cfg.finetune, &rng.substream("finetune"))?;
    let hash = run_hash(cfg)?;
    let variant = if pre.is_some() { "pretrained" } else { "scratch" };
    let rows = vec![ResultRow::new("finetune", variant, &hash, cfg.seed, res.test)];
    write_results_csv(&out.join("results.csv"), &rows)?;
    write_json(
        &out.join("results.json"),
        &json!({ "config": cfg, "test": res.test, "val": res.val, "finetune_losses": res.losses }),
    )?;
    let clf = &res.classifier;
    save_checkpoint(
        &out.join("classifier.bin"),
        &clf.model.cfg,
        cfg.finetune.epochs,
        cfg.seed,
        json!({
            "kind": "classifier",
            "channels": clf.channels,
            "n_classes": clf.head.n_classes,
            "keep_enc2": clf.keep_enc2,
        }),
        &clf.model.store,
    )?;
    finish(out, "finetune", cfg, t0, count_params(&clf.model), &model_cfg)?;
    Ok(rows)
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Pretrain and fine-tune every toggle combination for every seed.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<ResultRow>> {
    let t0 = start(cfg, out)?;
    let pre_data = dataset(cfg, DataRole::Pretrain)?;
    let target = dataset(cfg, DataRole::Target)?;
    let seeds = if cfg.ablate.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        cfg.ablate.seeds.clone()
    };
    let hash = run_hash(cfg)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut n_params = 0;
    for &seed in &seeds {
        for &fa_on in &cfg.ablate.fa {
            for &fm_on in &cfg.ablate.fm {
                for &keep_enc2 in &cfg.ablate.keep_enc2 {
                    let toggles = AblationToggles { fa_on, fm_on, keep_enc2 };
                    let run = transfer_run(
                        Some(&pre_data),
                        &target,
                        &cfg.model,
                        &cfg.pretrain,
                        &cfg.finetune,
                        toggles,
                        &Rng::new(seed),
                    )?;
                    let mut variant = format!("fa={},fm={}", on_off(fa_on), on_off(fm_on));
                    if let Some(k) = keep_enc2 {
                        variant.push_str(&format!(",enc2={}", if k { "keep" } else { "drop" }));
                    }
                    n_params = n_params.max(run.n_params);
                    curves.push(json!({
                        "variant": variant,
                        "seed": seed,
                        "pretrain_losses": run.pretrain_losses,
                        "finetune_losses": run.finetune.losses,
                    }));
                    rows.push(ResultRow::new("ablate", &variant, &hash, seed, run.finetune.test));
                }
            }
        }
    }
    write_results_csv(&out.join("results.csv"), &rows)?;
    write_json(&out.join("results.json"), &json!({ "config": cfg, "rows": rows, "curves": curves }))?;
    finish(out, "ablate", cfg, t0, n_params, &cfg.model)?;
    Ok(rows)
}

/// Default dropout schedule: remove trailing channels one at a time.
pub fn default_dropout_schedule(channels: &[String]) -> Vec<Vec<String>> {
    (1..channels.len()).rev().map(|k| channels[..k].to_vec()).collect()
}

/// Modality substitution or dropout experiment.
pub fn cmd_mismatch(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<Vec<ResultRow>> {
    let t0 = start(cfg, out)?;
    let pre = pretrained(checkpoint)?;
    let model_cfg = model_cfg_for(cfg, pre.as_ref());
    let target = dataset(cfg, DataRole::Target)?;
    let rng = Rng::new(cfg.seed).substream("finetune");
    let base = if cfg.mismatch.base.is_empty() {
        target.manifest.channels.clone()
    } else {
        cfg.mismatch.base.clone()
    };
    let (mode, table, n_params) = match cfg.mismatch.mode {
        MismatchMode::Substitution => {
            let t = modality_substitution(
                pre.as_ref(),
                &target,
                &model_cfg,
                &cfg.finetune,
                &base,
                &cfg.mismatch.substitutions,
                &rng,
            )?;
            let n = FamaeModel::new(&model_cfg, &rng).map(|m| count_params(&m))?;
            ("substitution", t, n)
        }
        MismatchMode::Dropout => {
            let subsets = if cfg.mismatch.subsets.is_empty() {
                default_dropout_schedule(&base)
            } else {
                cfg.mismatch.subsets.clone()
            };
            let ft = FinetuneConfig {
                channels: base.clone(),
                ..cfg.finetune.clone()
            };
            let res = finetune(pre.as_ref(), &target, &model_cfg, &ft, &rng)?;
            let t = dropout_rows(&res.classifier, &target, &base, &subsets)?;
            ("dropout", t, count_params(&res.classifier.model))
        }
    };
    let hash = run_hash(cfg)?;
    let rows: Vec<ResultRow> = table
        .iter()
        .map(|r| ResultRow {
            delta_accuracy: Some(r.delta_accuracy),
            ..ResultRow::new(mode, &r.label, &hash, cfg.seed, r.metrics)
        })
        .collect();
    write_results_csv(&out.join("results.csv"), &rows)?;
    write_json(&out.join("results.json"), &json!({ "config": cfg, "rows": table }))?;
    finish(out, "mismatch", cfg, t0, n_params, &model_cfg)?;
    Ok(rows)
}

/// Export the channel-level attention of a checkpoint's second encoder.
pub fn cmd_attn(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Vec<f64>> {
    let t0 = start(cfg, out)?;
    let model = load_model(checkpoint)?;
    let target = dataset(cfg, DataRole::Target)?;
    let exp = export_attention(&model, &target, &cfg.attn.split, cfg.attn.max_samples)?;
    save_attention(out, &exp, &target.manifest.channels)?;
    finish(out, "attn", cfg, t0, count_params(&model), &model.cfg)?;
    Ok(exp.matrix.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = RunConfig::from_json(None, &["model.depth=3".into(), "seed=11".into()]).unwrap();
        assert_eq!(cfg.model.depth, 3);
        assert_eq!(cfg.seed, 11);
        match RunConfig::from_json(Some(r#"{"model": {"dpeth": 3}}"#), &[]) {
            Err(Error::Config(m)) => assert!(m.contains("dpeth"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(RunConfig::from_json(None, &["pretrain.bogus=1".into()]).is_err());
        assert!(RunConfig::from_json(None, &["noequals".into()]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::desk();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(Some(&text), &[]).unwrap(), cfg);
    }

    #[test]
    fn dropout_schedule_shrinks_to_one() {
        let ch: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let s = default_dropout_schedule(&ch);
        assert_eq!(s.len(), 3);
        assert_eq!(s[2], vec!["a".to_string()]);
    }
}
