//! Training runs, inference and model evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{resize_nearest, resize_to, PairedDataset};
use crate::error::{GlfcError, Result};
use crate::io::{parse_kv, KvMap, Volume};
use crate::losses::{hu_to_norm, mcl_loss, norm_to_hu, LossKind};
use crate::metrics::{evaluate_pair, MetricConfig, MetricsReport};
use crate::model::{Meunet, MeunetConfig, Variant};
use crate::optim::{AdamConfig, AdamState};
use crate::real::Real;
use crate::tensor::Tensor;

/// Size preset for the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 256×256 slices, 64/128/256 channels, 1024 tokens.
    Paper,
    /// 64×64 slices for CPU runs.
    Desk,
    /// 32×32 slices, 16 tokens.
    Miniature,
}

impl Preset {
    pub fn config(self, variant: Variant) -> MeunetConfig {
        match self {
            Preset::Paper => MeunetConfig::paper(variant),
            Preset::Desk => MeunetConfig::desk(variant),
            Preset::Miniature => MeunetConfig::miniature(variant),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
            Preset::Miniature => "miniature",
        }
    }
}

impl FromStr for Preset {
    type Err = GlfcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            "miniature" => Ok(Preset::Miniature),
            _ => Err(GlfcError::config(format!(
                "unknown preset `{s}` (expected paper, desk or miniature)"
            ))),
        }
    }
}

/// Everything that defines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: Variant,
    pub preset: Preset,
    pub loss: LossKind,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub data: PathBuf,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: Variant::Meunet,
            preset: Preset::Paper,
            loss: LossKind::Mcl,
            lr: 0.02,
            batch: 4,
            epochs: 100,
            max_steps: None,
            seed: 0,
            data: PathBuf::from("data"),
            out: PathBuf::from("model.gckpt"),
            threads: None,
        }
    }
}

fn parse_num<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| GlfcError::config(format!("`{key}` has an invalid value `{v}`")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(GlfcError::config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(GlfcError::config("batch must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(GlfcError::config("epochs must be >= 1"));
        }
        if self.max_steps == Some(0) {
            return Err(GlfcError::config("steps must be >= 1"));
        }
        if self.threads == Some(0) {
            return Err(GlfcError::config("threads must be >= 1"));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> MeunetConfig {
        self.preset.config(self.arch)
    }

    /// Overrides fields from `key=value` pairs. Unknown keys are an error.
    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        for (k, v) in kv {
            match k.as_str() {
                "arch" => self.arch = v.parse()?,
                "preset" => self.preset = v.parse()?,
                "loss" => self.loss = v.parse()?,
                "lr" => self.lr = parse_num(k, v)?,
                "batch" => self.batch = parse_num(k, v)?,
                "epochs" => self.epochs = parse_num(k, v)?,
                "steps" => self.max_steps = Some(parse_num(k, v)?),
                "seed" => self.seed = parse_num(k, v)?,
                "data" => self.data = PathBuf::from(v),
                "out" => self.out = PathBuf::from(v),
                "threads" => self.threads = Some(parse_num(k, v)?),
                _ => return Err(GlfcError::config(format!("unknown config key `{k}`"))),
            }
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_kv(&parse_kv(text)?)?;
        Ok(c)
    }
}

/// Losses of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// `[total, glob, soft, bone]` for mcl, `[glob]` for glob.
    pub losses: Vec<f64>,
}

impl StepRecord {
    pub fn total(&self) -> f64 {
        self.losses[0]
    }

    /// One log line, e.g. `step=3 epoch=1 total=… glob=… soft=… bone=…`.
    pub fn log_line(&self, loss: LossKind) -> String {
        let mut s = format!("step={} epoch={}", self.step, self.epoch);
        let names: &[&str] = match loss {
            LossKind::Glob => &["glob"],
            LossKind::Mcl => &["total", "glob", "soft", "bone"],
        };
        for (n, v) in names.iter().zip(&self.losses) {
            // f32 shortest round-trip form keeps logs bit-comparable
            let _ = write!(s, " {n}={}", *v as f32);
        }
        s
    }
}

/// Trained model and its per-step losses.
pub struct TrainOutcome {
    pub model: Meunet<f32>,
    pub history: Vec<StepRecord>,
}

impl TrainOutcome {
    pub fn log_text(&self, loss: LossKind) -> String {
        let mut s = String::new();
        for r in &self.history {
            s.push_str(&r.log_line(loss));
            s.push('\n');
        }
        s
    }
}

/// Trains a freshly initialized model on `ds`. `on_step` sees every record
/// as it is produced.
pub fn train(cfg: &RunConfig, ds: &PairedDataset, mut on_step: impl FnMut(&StepRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mcfg = cfg.model_config();
    if ds.is_empty() {
        return Err(GlfcError::Dataset("dataset has no slices".into()));
    }
    if ds.size != mcfg.input_size {
        return Err(GlfcError::Dataset(format!(
            "dataset slices are {0}×{0} but the model expects {1}×{1}",
            ds.size, mcfg.input_size
        )));
    }
    let mut model = Meunet::<f32>::new(mcfg, cfg.seed)?;
    let sizes: Vec<usize> = (0..model.params().len()).map(|i| model.params().values(i).len()).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        sizes,
    );
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut history = Vec::new();
    let mut step = 0;
    'epochs: for epoch in 1..=cfg.epochs {
        for idx in ds.epoch_batches(cfg.batch, &mut shuffle) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            step += 1;
            let (x, y) = ds.batch_tensors::<f32>(&idx)?;
            let leaves = model.leaves(true);
            let pred = model.forward_with(&leaves, &x)?;
            let (objective, losses) = match cfg.loss {
                LossKind::Glob => {
                    let l = pred.l1_mean(&y)?;
                    let v = l.item().as_f64();
                    (l, vec![v])
                }
                LossKind::Mcl => {
                    let l = mcl_loss(&pred, &y)?;
                    let v = l.values().to_vec();
                    (l.total, v)
                }
            };
            if losses.iter().any(|v| !v.is_finite()) {
                return Err(GlfcError::contract(format!("loss diverged at step {step}: {losses:?}")));
            }
            objective.backward()?;
            let grads: Vec<Option<Vec<f32>>> = leaves.iter().map(Tensor::grad).collect();
            let grad_refs: Vec<Option<&[f32]>> = grads.iter().map(|g| g.as_deref()).collect();
            adam.step(&mut model.params_mut().buffers_mut(), &grad_refs)?;
            let rec = StepRecord { step, epoch, losses };
            on_step(&rec);
            history.push(rec);
        }
    }
    Ok(TrainOutcome { model, history })
}

/// Runs the model over a normalized `[n,1,S,S]` batch.
fn forward_slices<T: Real>(model: &Meunet<T>, slices: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let s = model.config().input_size;
    let mut out = Vec::with_capacity(slices.len());
    for chunk in slices.chunks(4) {
        let data: Vec<T> = chunk.iter().flatten().map(|&v| T::from_real(v as f64)).collect();
        let y = model.forward(&Tensor::new(&[chunk.len(), 1, s, s], data)?)?;
        out.extend(
            y.data()
                .chunks(s * s)
                .map(|c| c.iter().map(|v| v.as_f64() as f32).collect()),
        );
    }
    Ok(out)
}

/// CBCT → sCT for every slice of an HU volume. Output has the input dims.
pub fn infer_volume<T: Real>(model: &Meunet<T>, cbct: &Volume) -> Result<Volume> {
    cbct.validate()?;
    let s = model.config().input_size;
    let (w, h) = (cbct.width(), cbct.height());
    let inputs: Vec<Vec<f32>> = (0..cbct.slice_count())
        .map(|z| {
            resize_nearest(cbct.slice(z), w, h, s)
                .iter()
                .map(|&v| hu_to_norm(v as f64) as f32)
                .collect()
        })
        .collect();
    let outputs = forward_slices(model, &inputs)?;
    let voxels = outputs
        .iter()
        .flat_map(|o| {
            let hu: Vec<f32> = o.iter().map(|&v| norm_to_hu(v as f64) as f32).collect();
            resize_to(&hu, s, s, w, h)
        })
        .collect();
    Ok(Volume {
        dims: cbct.dims.clone(),
        spacing: cbct.spacing,
        voxels,
    })
}

/// Scores of the model output and of the raw CBCT against the CT, over all
/// slices of `ds`.
pub struct DatasetEvaluation {
    pub sct: MetricsReport,
    pub cbct: MetricsReport,
}

pub fn evaluate_model<T: Real>(model: &Meunet<T>, ds: &PairedDataset, cfg: &MetricConfig) -> Result<DatasetEvaluation> {
    let inputs: Vec<Vec<f32>> = ds.slices.iter().map(|p| p.cbct.clone()).collect();
    let outputs = forward_slices(model, &inputs)?;
    let reference = ds.stacked_hu(|p| &p.ct);
    let pred = Volume {
        dims: reference.dims.clone(),
        spacing: [1.0; 3],
        voxels: outputs
            .iter()
            .flatten()
            .map(|&v| norm_to_hu(v as f64) as f32)
            .collect(),
    };
    Ok(DatasetEvaluation {
        sct: evaluate_pair(&pred, &reference, cfg)?,
        cbct: evaluate_pair(&ds.stacked_hu(|p| &p.cbct), &reference, cfg)?,
    })
}

/// Arms of the architecture / loss comparison.
pub const COMPARISON_ARMS: [(Variant, LossKind); 3] = [
    (Variant::UnetD2, LossKind::Glob),
    (Variant::Meunet, LossKind::Glob),
    (Variant::Meunet, LossKind::Mcl),
];

/// Trains every arm under the budget of `base` and scores it on `ds`.
/// The first row is the untreated CBCT.
pub fn compare(base: &RunConfig, ds: &PairedDataset, metric: &MetricConfig) -> Result<Vec<(String, MetricsReport)>> {
    let mut rows = Vec::new();
    for (arch, loss) in COMPARISON_ARMS {
        let cfg = RunConfig {
            arch,
            loss,
            ..base.clone()
        };
        let outcome = train(&cfg, ds, |_| {})?;
        let eval = evaluate_model(&outcome.model, ds, metric)?;
        if rows.is_empty() {
            rows.push(("CBCT".to_string(), eval.cbct));
        }
        rows.push((format!("{arch}+{}", loss.name()), eval.sct));
    }
    Ok(rows)
}

/// Log path used when none is given: `<ckpt>.log`.
pub fn default_log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}
