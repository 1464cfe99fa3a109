use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use neuroedge_core::convert::ConvertConfig;
use neuroedge_core::imaging::EDGE_THETA;
use neuroedge_core::map::{ChipConfig, MapOptions, PartitionPolicy};
use neuroedge_core::model::ModelSpec;
use neuroedge_core::nas::{SearchConfig, ThroughputModel};
use neuroedge_core::sim::{Decode, SimConfig};
use neuroedge_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "neuroedge", version, about = "Train, convert, map, simulate and compare spiking expression classifiers")]
pub struct Cli {
    /// Run configuration (TOML or JSON, e.g. a previous run.json). Its values
    /// override flags; the subcommand may be omitted when it names one.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Synth,
    Train,
    Convert,
    Map,
    Simulate,
    Calibrate,
    Search,
    Report,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic expression corpus as a PGM directory tree
    Synth(SynthArgs),
    /// Train a conventional classifier
    Train(TrainArgs),
    /// Convert a trained classifier into a spiking one and fine-tune it
    Convert(ConvertArgs),
    /// Tile a spiking model onto neuromorphic cores
    Map(MapArgs),
    /// Run the spiking model over the test split
    Simulate(SimulateArgs),
    /// Fit the per-event energy of the energy model to a measured power
    Calibrate(CalibrateArgs),
    /// Hardware-aware architecture search
    Search(SearchArgs),
    /// Comparative table of device profiles
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Parent of the timestamped run directory
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Image tree laid out as <dir>/<class>/<file>
    #[arg(long, value_name = "DIR", conflicts_with = "synthetic")]
    pub dataset: Option<PathBuf>,
    /// Use the synthetic corpus with this many images per class
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    /// Seed of the synthetic corpus
    #[arg(long, default_value_t = 7)]
    pub synthetic_seed: u64,
    /// Feed edge maps instead of grayscale
    #[arg(long)]
    pub edge: bool,
    /// Edge threshold on the normalised gradient magnitude
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Named architecture (pi, jetson-l, jetson-h, pi-ncs2, pi-tpu, coral-dev, loihi)
    #[arg(long, default_value = "loihi")]
    pub preset: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Conventional model (.smod)
    #[arg(long)]
    pub model: PathBuf,
    /// Fine-tuning epochs; 0 skips fine-tuning and needs no dataset
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Simulation timestep in seconds
    #[arg(long)]
    pub dt: Option<f64>,
    /// Spikes per second per unit of drive
    #[arg(long)]
    pub gain: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ChipArgs {
    #[arg(long)]
    pub cores_per_chip: Option<usize>,
    #[arg(long)]
    pub neurons_per_core: Option<usize>,
    #[arg(long, value_enum)]
    pub policy: Option<Policy>,
    /// Let several blocks share a core
    #[arg(long)]
    pub pack: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Policy {
    MinBlocks,
    ChannelFirst,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Spiking model (.smod)
    #[arg(long, conflicts_with = "preset")]
    pub model: Option<PathBuf>,
    /// Map an untrained conversion of a named architecture instead
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub chip: ChipArgs,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Exposure time per image
    #[arg(long)]
    pub window_ms: Option<f64>,
    /// Trailing decode window; omit for the default
    #[arg(long)]
    pub decode_ms: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Spiking model (.smod)
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Test image whose probability trace and raster are written
    #[arg(long)]
    pub trace_sample: Option<usize>,
    /// Energy model (TOML) for a power estimate
    #[arg(long)]
    pub energy: Option<PathBuf>,
    #[command(flatten)]
    pub chip: ChipArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Measured inference power (total minus idle)
    #[arg(long)]
    pub dynamic_power_w: f64,
    /// Measured total power; idle power is the difference
    #[arg(long)]
    pub total_power_w: Option<f64>,
    /// Starting energy model whose neuron-update term is kept
    #[arg(long)]
    pub energy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_enum, default_value = "surrogate")]
    pub evaluator: EvaluatorKind,
    /// Continue the trials recorded in this ledger
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Accuracy points per millisecond of latency
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Training epochs per trial with the training evaluator
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Device profiles (TOML)
    #[arg(long)]
    pub devices: PathBuf,
    #[arg(long)]
    pub fps_min: Option<f64>,
    #[arg(long)]
    pub fps_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    #[default]
    Surrogate,
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic { per_class: usize, seed: u64 },
    Dir { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTarget {
    pub dynamic_power_w: f64,
    #[serde(default)]
    pub total_power_w: Option<f64>,
}

/// Fully resolved settings of one run, echoed to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: Option<DatasetSource>,
    #[serde(default)]
    pub edge: bool,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub spec: Option<ModelSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub convert: ConvertConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub trace_sample: usize,
    #[serde(default)]
    pub chip: ChipConfig,
    #[serde(default)]
    pub mapping: MapOptions,
    #[serde(default)]
    pub energy_model: Option<PathBuf>,
    #[serde(default)]
    pub calibration: Option<CalibrationTarget>,
    #[serde(default)]
    pub devices: Option<PathBuf>,
    #[serde(default = "default_fps_min")]
    pub fps_min: f64,
    #[serde(default = "default_fps_max")]
    pub fps_max: f64,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub evaluator: EvaluatorKind,
    #[serde(default)]
    pub throughput: ThroughputModel,
    #[serde(default)]
    pub resume: Option<PathBuf>,
    #[serde(default = "default_synth_per_class")]
    pub synth_per_class: usize,
}

fn default_theta() -> f64 {
    EDGE_THETA
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_fps_min() -> f64 {
    20.0
}
fn default_fps_max() -> f64 {
    30.0
}
fn default_synth_per_class() -> usize {
    100
}

impl RunConfig {
    pub fn new(command: CommandKind, out: PathBuf, seed: u64) -> Self {
        let mut c: RunConfig = serde_json::from_value(serde_json::json!({ "command": command, "out": out, "seed": seed }))
            .expect("every other field has a default");
        c.train.seed = seed;
        c.convert.finetune.seed = seed;
        c.search.seed = seed;
        c
    }

    fn data(&mut self, d: &DataArgs) {
        if let Some(path) = &d.dataset {
            self.dataset = Some(DatasetSource::Dir { path: path.clone() });
        }
        if let Some(per_class) = d.synthetic {
            self.dataset = Some(DatasetSource::Synthetic {
                per_class,
                seed: d.synthetic_seed,
            });
        }
        self.edge = d.edge;
        set(&mut self.theta, d.theta);
        set(&mut self.test_fraction, d.test_fraction);
    }

    fn chip(&mut self, c: &ChipArgs) {
        set(&mut self.chip.cores_per_chip, c.cores_per_chip);
        set(&mut self.chip.neurons_per_core, c.neurons_per_core);
        if let Some(p) = c.policy {
            self.mapping.policy = match p {
                Policy::MinBlocks => PartitionPolicy::MinBlocks,
                Policy::ChannelFirst => PartitionPolicy::ChannelFirst,
            };
        }
        self.mapping.pack_dense = c.pack;
    }

    fn sim(&mut self, s: &SimArgs) {
        set(&mut self.sim.window_ms, s.window_ms);
        if let Some(ms) = s.decode_ms {
            self.sim.decode = Decode::Trailing { ms };
        }
    }

    /// Settings implied by the command-line flags alone.
    pub fn from_command(cmd: &Command) -> CliResult<Self> {
        let base = |kind, c: &CommonArgs| RunConfig::new(kind, c.out.clone(), c.seed);
        let c = match cmd {
            Command::Synth(a) => {
                let mut c = base(CommandKind::Synth, &a.common);
                c.synth_per_class = a.per_class;
                c
            }
            Command::Train(a) => {
                let mut c = base(CommandKind::Train, &a.common);
                c.data(&a.data);
                c.spec = Some(ModelSpec::preset(&a.preset).ok_or_else(|| CliError::Usage(format!("unknown preset '{}'", a.preset)))?);
                set(&mut c.train.epochs, a.epochs);
                set(&mut c.train.batch, a.batch);
                set(&mut c.train.lr, a.lr);
                c
            }
            Command::Convert(a) => {
                let mut c = base(CommandKind::Convert, &a.common);
                c.data(&a.data);
                c.model = Some(a.model.clone());
                set(&mut c.convert.finetune.epochs, a.epochs);
                set(&mut c.convert.activation.dt, a.dt);
                set(&mut c.convert.activation.gain, a.gain);
                c
            }
            Command::Map(a) => {
                let mut c = base(CommandKind::Map, &a.common);
                c.model = a.model.clone();
                if let Some(p) = &a.preset {
                    c.spec = Some(ModelSpec::preset(p).ok_or_else(|| CliError::Usage(format!("unknown preset '{p}'")))?);
                }
                c.chip(&a.chip);
                c
            }
            Command::Simulate(a) => {
                let mut c = base(CommandKind::Simulate, &a.common);
                c.data(&a.data);
                c.model = Some(a.model.clone());
                c.sim(&a.sim);
                set(&mut c.trace_sample, a.trace_sample);
                c.energy_model = a.energy.clone();
                c.chip(&a.chip);
                c
            }
            Command::Calibrate(a) => {
                let mut c = base(CommandKind::Calibrate, &a.common);
                c.data(&a.data);
                c.model = Some(a.model.clone());
                c.sim(&a.sim);
                c.calibration = Some(CalibrationTarget {
                    dynamic_power_w: a.dynamic_power_w,
                    total_power_w: a.total_power_w,
                });
                c.energy_model = a.energy.clone();
                c
            }
            Command::Search(a) => {
                let mut c = base(CommandKind::Search, &a.common);
                c.data(&a.data);
                set(&mut c.search.budget, a.budget);
                set(&mut c.search.lambda, a.lambda);
                set(&mut c.train.epochs, a.epochs);
                c.evaluator = a.evaluator;
                c.resume = a.resume.clone();
                c
            }
            Command::Report(a) => {
                let mut c = base(CommandKind::Report, &a.common);
                c.devices = Some(a.devices.clone());
                set(&mut c.fps_min, a.fps_min);
                set(&mut c.fps_max, a.fps_max);
                c
            }
        };
        Ok(c)
    }

    /// Resolves flags and an optional config file; file values win.
    pub fn resolve(cli: &Cli) -> CliResult<Self> {
        let flags = cli.command.as_ref().map(Self::from_command).transpose()?;
        let Some(path) = &cli.config else {
            return flags.ok_or_else(|| CliError::Usage("a subcommand or --config is required".into()));
        };
        let file = read_config_value(path)?;
        let mut merged = match flags {
            Some(f) => serde_json::to_value(f)?,
            None => {
                let kind = file
                    .get("command")
                    .cloned()
                    .ok_or_else(|| CliError::Usage(format!("{}: no subcommand given and no 'command' key", path.display())))?;
                let kind: CommandKind = serde_json::from_value(kind).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                let out = file.get("out").and_then(Value::as_str).unwrap_or("runs");
                serde_json::to_value(RunConfig::new(kind, out.into(), 0))?
            }
        };
        merge(&mut merged, file);
        serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn read_config_value(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str::<Value>(&text).map_err(|e| e.to_string())
    };
    let v = parsed.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::Usage(format!("{}: expected a table of settings", path.display())));
    }
    Ok(v)
}

/// Overlays `top` onto `base`, recursing into objects present in both.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
