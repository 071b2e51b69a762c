//! Experiment configuration: a TOML document merged over a named profile.
//!
//! Resolution order is profile defaults, then the user document, then command
//! line overrides. Unknown keys anywhere are an error. The resolved config
//! serializes back to a document that resolves to itself.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mltp_core::data::{AugmentSpec, Standardize, SynthKind};
use mltp_core::meta::{AlphaMode, Variant};
use mltp_core::nn::{Activation, InitScheme, LayerSpec, MaskSelector};
use mltp_core::{NetworkSpec, OptimizerSpec, Precision};

use crate::CliError;

const DEFAULT_PROFILE: &str = r#"
profile = "default"
epochs = 150
batch_size = 128
seeds = [0, 1, 2]
precision = 32
deterministic = false
out = "runs/default"

[network]
preset = "mlp"
hidden = [64, 64]
activation = "relu"
width_div = 1
layers = []

[init]
scheme = "xavier"

[data]
sampler = "split"
standardize = { mode = "none" }

[data.source]
kind = "synth"
synth = "spirals"
n_train = 2000
n_test = 1000
classes = 2
noise = 0.2
seed = 0

[objective]
variant = "mltp_full"
eta = 1.0
beta = 0.0
mask = "default"

[alpha]
mean = 0.001
std = 0.001
mode = "learnable"

[optimizer]
kind = "adam"
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
base_lr = 0.001
schedule = [{ epoch = 50, factor = 0.1 }, { epoch = 100, factor = 0.1 }]

[gradcheck]
cap = 500
batch = 8
step = 1e-3
tolerance = 1e-4

[taylor]
scales = [1e-2, 5e-3, 2.5e-3]
batch = 16
"#;

const LARGE_PROFILE: &str = r#"
profile = "large"
epochs = 90
batch_size = 128
out = "runs/large"

[init]
scheme = "kaiming"

[objective]
eta = 0.5
beta = 1e-5

[alpha]
mean = 0.01
std = 0.01

[optimizer]
kind = "sgd_momentum"
mu = 0.9
base_lr = 0.05
schedule = [{ epoch = 30, factor = 0.1 }, { epoch = 60, factor = 0.1 }]
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Default,
    Large,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub precision: Precision,
    pub deterministic: bool,
    pub out: PathBuf,
    pub network: NetworkConfig,
    pub init: InitScheme,
    pub data: DataConfig,
    pub objective: ObjectiveSection,
    pub alpha: AlphaConfig,
    pub optimizer: OptimizerSpec,
    pub gradcheck: GradcheckConfig,
    pub taylor: TaylorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Mlp,
    Cnet1,
    Cnet2,
    Cnet3,
    Cnet4,
    /// Layers listed explicitly under `layers`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub preset: Preset,
    /// Hidden widths of the `mlp` preset.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Divides every conv/fc width of the `cnet` presets.
    pub width_div: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Each batch is split in halves.
    Split,
    /// Two consecutive batches of the shuffled order form one pair.
    TwoBatches,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub sampler: Sampler,
    pub standardize: Standardize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentSpec>,
    pub source: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth {
        synth: SynthKind,
        n_train: usize,
        n_test: usize,
        classes: usize,
        noise: f64,
        seed: u64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        features: usize,
        classes: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskConfig {
    /// `"default"`, `"all"`, `"conv_only"` or `"fc_only"`.
    Named(String),
    /// Explicit layer positions.
    Layers(Vec<usize>),
}

impl MaskConfig {
    /// `None` means the variant's own mask.
    pub fn selector(&self) -> Result<Option<MaskSelector>, CliError> {
        Ok(match self {
            MaskConfig::Named(s) => match s.as_str() {
                "default" => None,
                "all" => Some(MaskSelector::All),
                "conv_only" => Some(MaskSelector::ConvOnly),
                "fc_only" => Some(MaskSelector::FcOnly),
                other => return Err(CliError::Config(format!("objective.mask: unknown selector {other:?}"))),
            },
            MaskConfig::Layers(l) => Some(MaskSelector::Explicit(l.clone())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub variant: Variant,
    pub eta: f64,
    pub beta: f64,
    pub mask: MaskConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaConfig {
    pub mean: f64,
    pub std: f64,
    pub mode: AlphaMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Largest network (in parameters) the check will run on.
    pub cap: usize,
    pub batch: usize,
    pub step: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaylorConfig {
    pub scales: Vec<f64>,
    pub batch: usize,
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
    pub precision: Option<Precision>,
}

/// Keys whose value selects the shape of the rest of a table.
const DISCRIMINANTS: [&str; 3] = ["kind", "mode", "scheme"];

/// Recursively merges `over` into `base`. A table whose discriminant differs
/// from the base replaces it wholesale, so fields of the old variant do not
/// leak into the new one.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            let switched = DISCRIMINANTS
                .iter()
                .any(|k| matches!((b.get(*k), o.get(*k)), (Some(x), Some(y)) if x != y));
            if switched {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, o) => *slot = o,
    }
}

fn parse_doc(text: &str, what: &str) -> Result<toml::Value, CliError> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| CliError::Config(format!("{what}: {e}")))
}

fn profile_doc(profile: Profile) -> Result<toml::Value, CliError> {
    let mut doc = parse_doc(DEFAULT_PROFILE, "built-in profile")?;
    if profile == Profile::Large {
        merge(&mut doc, parse_doc(LARGE_PROFILE, "built-in profile")?);
    }
    Ok(doc)
}

impl ExperimentConfig {
    /// Resolves a user document (possibly empty) over its profile.
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let user = parse_doc(text, "config")?;
        let profile = match user.get("profile") {
            None => Profile::Default,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| CliError::Config(format!("profile: {e}")))?,
        };
        let mut doc = profile_doc(profile)?;
        merge(&mut doc, user);
        let cfg: ExperimentConfig = doc.try_into().map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Profile defaults only.
    pub fn default_profile() -> Self {
        Self::from_toml_str("").expect("built-in profile is valid")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if o.deterministic {
            self.deterministic = true;
        }
        if let Some(p) = o.precision {
            self.precision = p;
        }
        self.validate()
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(self.objective.eta >= 0.0) || !(self.objective.beta >= 0.0) {
            return bad("objective.eta and objective.beta must be >= 0".into());
        }
        if !(self.alpha.std >= 0.0) || !self.alpha.mean.is_finite() {
            return bad("alpha.std must be >= 0 and alpha.mean finite".into());
        }
        self.objective.mask.selector()?;
        self.optimizer.validate().map_err(|e| CliError::Config(format!("optimizer: {e}")))?;
        if self.network.width_div == 0 {
            return bad("network.width_div must be positive".into());
        }
        if self.network.preset != Preset::Custom && !self.network.layers.is_empty() {
            return bad("network.layers is only used with preset = \"custom\"".into());
        }
        if self.gradcheck.step <= 0.0 || self.gradcheck.batch < 2 || self.taylor.batch < 2 {
            return bad("gradcheck.step must be > 0 and batch sizes at least 2".into());
        }
        if let DataSource::Synth { n_train, n_test, classes, .. } = self.data.source {
            if classes == 0 || n_train < classes || n_test < classes {
                return bad("data.source: every class needs at least one train and one test sample".into());
            }
        }
        Ok(())
    }

    /// Builds the network for samples of shape `input` and `classes` classes.
    pub fn network_spec(&self, input: &[usize], classes: usize) -> Result<NetworkSpec, CliError> {
        let n = &self.network;
        let cnet = |which: u8| -> Result<NetworkSpec, CliError> {
            let [c, h, w] = *input else {
                return Err(CliError::Config(format!("cnet presets need image input, data has shape {input:?}")));
            };
            let mut spec = NetworkSpec::cnet(which, [c, h, w], classes, n.width_div)?;
            spec.activation = n.activation;
            Ok(spec)
        };
        let spec = match n.preset {
            Preset::Mlp => {
                let d = input.iter().product();
                let mut spec = NetworkSpec::mlp("mlp", d, &n.hidden, classes, n.activation);
                spec.input = input.to_vec();
                spec
            }
            Preset::Cnet1 => cnet(1)?,
            Preset::Cnet2 => cnet(2)?,
            Preset::Cnet3 => cnet(3)?,
            Preset::Cnet4 => cnet(4)?,
            Preset::Custom => NetworkSpec {
                name: "custom".into(),
                input: input.to_vec(),
                classes,
                activation: n.activation,
                layers: n.layers.clone(),
            },
        };
        spec.validate().map_err(|e| CliError::Config(format!("network: {e}")))?;
        Ok(spec)
    }
}
