use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use neuroedge_core::convert::{self, ConvertConfig};
use neuroedge_core::cost::{self, Activity, DeviceProfile, DeviceSet, NeuroEnergyModel, Source};
use neuroedge_core::imaging::{encode_pgm, ingest, make_synthetic_dataset, split_stratified, write_manifest, Dataset, SplitConfig};
use neuroedge_core::map::{map_network, CoreMap, MapOptions, PartitionPolicy};
use neuroedge_core::model::{instantiate, mac_count, smod, Flavor, LayerGraph, ModelSpec};
use neuroedge_core::nas::{self, SearchLedger, Stage, Status, TrainingEvaluator};
use neuroedge_core::sim::{evaluate, probe_raster, run_inference, Network, ProbeConfig, SimConfig};
use neuroedge_core::train::{self, History, TrainConfig};
use serde::Serialize;

use crate::config::{CommandKind, DatasetSource, EvaluatorKind, RunConfig};
use crate::error::{CliError, CliResult};

/// Runs one resolved command, writing `run.json` and every output into a
/// fresh `<out>/<timestamp>/` directory, which is returned.
pub fn execute(config: &RunConfig) -> CliResult<PathBuf> {
    let dir = run_dir(&config.out)?;
    write_json(&dir.join("run.json"), config)?;
    log::info!("{:?} run in {}", config.command, dir.display());
    match config.command {
        CommandKind::Synth => cmd_synth(config, &dir)?,
        CommandKind::Train => cmd_train(config, &dir)?,
        CommandKind::Convert => cmd_convert(config, &dir)?,
        CommandKind::Map => cmd_map(config, &dir)?,
        CommandKind::Simulate => cmd_simulate(config, &dir)?,
        CommandKind::Calibrate => cmd_calibrate(config, &dir)?,
        CommandKind::Search => cmd_search(config, &dir)?,
        CommandKind::Report => cmd_report(config, &dir)?,
    }
    Ok(dir)
}

fn run_dir(out: &Path) -> CliResult<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let mut n = 0;
    loop {
        let name = if n == 0 { stamp.clone() } else { format!("{stamp}-{n}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(CliError::Data(format!("{}: {e}", dir.display()))),
        }
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::Usage(format!("{what} is required")))
}

/// Train and test splits of the configured corpus, edge-detected on request.
pub fn load_data(config: &RunConfig) -> CliResult<(Dataset, Dataset)> {
    let split = SplitConfig {
        test_fraction: config.test_fraction,
        seed: config.seed,
    };
    let (train, test) = match need(&config.dataset, "a dataset (--dataset or --synthetic)")? {
        DatasetSource::Synthetic { per_class, seed } => split_stratified(make_synthetic_dataset(*per_class, *seed).samples, &split)?,
        DatasetSource::Dir { path } => {
            let (train, test, report) = ingest(path, &split)?;
            if !report.skipped.is_empty() {
                log::warn!("skipped {} unreadable files", report.skipped.len());
            }
            (train, test)
        }
    };
    log::info!("{} training and {} test images", train.len(), test.len());
    if config.edge {
        Ok((train.edge_detected(config.theta), test.edge_detected(config.theta)))
    } else {
        Ok((train, test))
    }
}

fn load_model(config: &RunConfig, flavor: Flavor) -> CliResult<LayerGraph> {
    let path = need(&config.model, "--model")?;
    let g = smod::load(path)?;
    if g.flavor() != flavor {
        let want = match flavor {
            Flavor::Ann => "a conventional model; convert takes the output of train",
            Flavor::Snn => "a spiking model; run convert first",
        };
        return Err(CliError::Usage(format!("{}: expected {want}", path.display())));
    }
    Ok(g)
}

fn write_history(path: &Path, history: &History) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_synth(config: &RunConfig, dir: &Path) -> CliResult<()> {
    let seed = match &config.dataset {
        Some(DatasetSource::Synthetic { seed, .. }) => *seed,
        _ => config.seed,
    };
    let ds = make_synthetic_dataset(config.synth_per_class, seed);
    let root = dir.join("corpus");
    for s in &ds.samples {
        let rel = s.source_id.trim_start_matches("synthetic/");
        let path = root.join(format!("{rel}.pgm"));
        fs::create_dir_all(path.parent().expect("class directory"))?;
        fs::write(&path, encode_pgm(&s.pixels))?;
    }
    write_manifest(create(&dir.join("manifest.csv"))?, &[&ds])?;
    println!("{} images under {}", ds.len(), root.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics {
    spec: ModelSpec,
    params: usize,
    macs: usize,
    train_samples: usize,
    test_samples: usize,
    final_train_accuracy: f64,
    test_accuracy: f64,
}

fn cmd_train(config: &RunConfig, dir: &Path) -> CliResult<()> {
    let spec = need(&config.spec, "a model spec")?;
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let (train_set, test_set) = load_data(config)?;
    write_manifest(create(&dir.join("manifest.csv"))?, &[&train_set, &test_set])?;
    let g = instantiate(spec, config.seed)?;
    let (g, history) = train::train(&g, &train_set.examples(), &config.train)?;
    let test_accuracy = if test_set.is_empty() { f64::NAN } else { train::accuracy(&g, &test_set.examples())? };
    smod::save(&g, dir.join("model.smod"))?;
    write_history(&dir.join("history.csv"), &history)?;
    let m = TrainMetrics {
        spec: spec.clone(),
        params: g.trainable_param_count(),
        macs: mac_count(spec),
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        final_train_accuracy: history.last().map_or(f64::NAN, |h| h.accuracy),
        test_accuracy,
    };
    write_json(&dir.join("metrics.json"), &m)?;
    println!("test accuracy {:.4} after {} epochs", test_accuracy, history.len());
    Ok(())
}

#[derive(Serialize)]
struct ConvertMetrics {
    layers: usize,
    trainable_params: usize,
    /// Rate-mode accuracy on the test split, when a dataset was given.
    test_accuracy: Option<f64>,
}

/// Converts `ann`, fine-tuning on the training split when epochs > 0.
pub fn convert_graph(ann: &LayerGraph, config: &RunConfig, convert_config: &ConvertConfig) -> CliResult<(LayerGraph, History, Option<Dataset>)> {
    let (data, test) = if convert_config.finetune.epochs > 0 || config.dataset.is_some() {
        let (train_set, test_set) = load_data(config)?;
        (train_set.examples(), Some(test_set))
    } else {
        (Vec::new(), None)
    };
    let (snn, history) = convert::convert(ann, &data, convert_config)?;
    snn.check_deployable()?;
    Ok((snn, history, test))
}

fn cmd_convert(config: &RunConfig, dir: &Path) -> CliResult<()> {
    let ann = load_model(config, Flavor::Ann)?;
    let (snn, history, test) = convert_graph(&ann, config, &config.convert)?;
    smod::save(&snn, dir.join("snn.smod"))?;
    fs::write(dir.join("architecture.txt"), format!("{snn}\n"))?;
    write_history(&dir.join("history.csv"), &history)?;
    let test_accuracy = match &test {
        Some(t) if !t.is_empty() => Some(train::accuracy(&snn, &t.examples())?),
        _ => None,
    };
    write_json(
        &dir.join("metrics.json"),
        &ConvertMetrics {
            layers: snn.layers().len(),
            trainable_params: snn.trainable_param_count(),
            test_accuracy,
        },
    )?;
    print!("{snn}\n");
    Ok(())
}

fn spiking_model(config: &RunConfig) -> CliResult<LayerGraph> {
    match (&config.model, &config.spec) {
        (Some(_), _) => load_model(config, Flavor::Snn),
        (None, Some(spec)) => {
            spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let ann = instantiate(spec, config.seed)?;
            let cfg = ConvertConfig {
                finetune: TrainConfig { epochs: 0, ..config.convert.finetune },
                ..config.convert
            };
            Ok(convert::convert(&ann, &[], &cfg)?.0)
        }
        (None, None) => Err(CliError::Usage("--model or --preset is required".into())),
    }
}

#[derive(Serialize)]
struct MapSummary {
    policy: String,
    pack_dense: bool,
    on_chip_layers: usize,
    total_neurons: usize,
    cores_used: usize,
    chips_used: usize,
    fits_single_chip: bool,
    mean_fill: f64,
    /// Core counts of the same network under every policy and packing mode.
    alternatives: Vec<MapAlternative>,
}

#[derive(Serialize)]
struct MapAlternative {
    policy: String,
    pack_dense: bool,
    cores_used: usize,
}

fn write_map(map: &CoreMap, alternatives: Vec<MapAlternative>, dir: &Path) -> CliResult<MapSummary> {
    fs::write(dir.join("core_map.json"), map.to_json()?)?;
    map.write_utilization_csv(create(&dir.join("utilization.csv"))?)?;
    map.write_layer_csv(create(&dir.join("layers.csv"))?)?;
    let summary = MapSummary {
        policy: map.policy.to_string(),
        pack_dense: map.pack_dense,
        on_chip_layers: map.layers.len(),
        total_neurons: map.total_neurons(),
        cores_used: map.cores_used,
        chips_used: map.chips_used,
        fits_single_chip: map.fits_single_chip(),
        mean_fill: map.utilization().mean_fill,
        alternatives,
    };
    write_json(&dir.join("map.json"), &summary)?;
    Ok(summary)
}

fn cmd_map(config: &RunConfig, dir: &Path) -> CliResult<()> {
    let snn = spiking_model(config)?;
    let map = map_network(&snn, config.chip, config.mapping)?;
    let mut alternatives = Vec::new();
    for policy in [PartitionPolicy::MinBlocks, PartitionPolicy::ChannelFirst] {
        for pack_dense in [false, true] {
            let alt = map_network(&snn, config.chip, MapOptions { policy, pack_dense })?;
            alternatives.push(MapAlternative { policy: policy.to_string(), pack_dense, cores_used: alt.cores_used });
        }
    }
    let s = write_map(&map, alternatives, dir)?;
    println!(
        "{} neurons on {} cores of {} chip(s): {}",
        s.total_neurons,
        s.cores_used,
        s.chips_used,
        if s.fits_single_chip { "fits a single chip" } else { "needs more than one chip" }
    );
    for a in &s.alternatives {
        println!("  {:<14} {:<9} {} cores", a.policy, if a.pack_dense { "packed" } else { "one/core" }, a.cores_used);
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    evaluation: neuroedge_core::sim::Evaluation,
    window_ms: f64,
    steps: usize,
    realtime: cost::RealtimeVerdict,
    energy: Option<cost::EnergyEstimate>,
}

/// Frames per second when each frame is held for the decision window.
pub fn realtime_verdict(window_ms: f64, power_w: f64, fps_min: f64, fps_max: f64) -> CliResult<cost::RealtimeVerdict> {
    let p = DeviceProfile {
        name: "snn".into(),
        accuracy_pct: None,
        latency_ms: window_ms,
        power_w,
        energy_mj: None,
        fps: None,
        source: Source::Simulated,
    };
    Ok(cost::realtime_check(&p, fps_min, fps_max)?)
}

fn cmd_simulate(config: &RunConfig, dir: &Path) -> CliResult<()> {
    let snn = load_model(config, Flavor::Snn)?;
    let net = Network::compile(&snn)?;
    let (_, test_set) = load_data(config)?;
    let sample = test_set
        .samples
        .get(config.trace_sample)
        .ok_or_else(|| CliError::Usage(format!("trace sample {} outside the {} test images", config.trace_sample, test_set.len())))?;
    let traced = SimConfig {
        probes: Some(config.sim.probes.clone().unwrap_or_else(|| ProbeConfig {
            seed: config.seed,
            ..ProbeConfig::default()
        })),
        ..config.sim.clone()
    };
    let r = run_inference(&net, &sample.pixels.to_tensor(), &traced)?;
    r.write_probability_csv(create(&dir.join("probabilities.csv"))?)?;
    if let Some(trace) = &r.probe {
        probe_raster(trace).write_csv(create(&dir.join("raster.csv"))?)?;
    }
    let evaluation = evaluate(&net, &test_set.examples(), &config.sim)?;
    let steps = r.steps();
    let energy = match &config.energy_model {
        Some(path) => {
            let model = NeuroEnergyModel::load(path)?;
            let map = map_network(&snn, config.chip, config.mapping)?;
            Some(cost::estimate_snn_energy(&Activity::from_evaluation(&evaluation, steps), &model, Some(&map))?)
        }
        None => None,
    };
    let realtime = realtime_verdict(config.sim.window_ms, energy.map_or(0.0, |e| e.total_power_w), config.fps_min, config.fps_max)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("spikes.csv"))?);
    w.write_record(["population", "mean_spikes"])?;
    for (i, s) in evaluation.mean_spike_counts.iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()])?;
    }
    w.flush()?;
    println!(
        "accuracy {:.4} ({} undecided), {:.0} hidden spikes per image, {:.1} FPS ({})",
        evaluation.accuracy,
        evaluation.undecided,
        evaluation.mean_hidden_spikes,
        realtime.fps,
        if realtime.pass { "real-time" } else { "below real-time" }
    );
    if let Some(e) = &energy {
        println!("dynamic power {:.3} mW, total {:.3} mW", e.dynamic_power_w * 1e3, e.total_power_w * 1e3);
    }
    write_json(
        &dir.join("simulation.json"),
        &SimulateSummary {
            evaluation,
            window_ms: config.sim.window_ms,
            steps,
            realtime,
            energy,
        },
    )?;
    Ok(())
}

fn cmd_calibrate(config: &RunConfig, dir: &Path) -> CliResult<()> {
    let target = need(&config.calibration, "a calibration target (--dynamic-power-w)")?;
    let snn = load_model(config, Flavor::Snn)?;
    let net = Network::compile(&snn)?;
    let (_, test_set) = load_data(config)?;
    let evaluation = evaluate(&net, &test_set.examples(), &config.sim)?;
    let steps = (config.sim.window_ms * 1e-3 / net.dt() + 1e-9).floor() as usize;
    let base = match &config.energy_model {
        Some(path) => NeuroEnergyModel::load(path)?,
        None => NeuroEnergyModel {
            e_synop_j: 0.0,
            e_neuron_update_j: 0.0,
            p_static_w: 0.0,
            dt: net.dt(),
        },
    };
    let activity = Activity::from_evaluation(&evaluation, steps);
    let model = cost::calibrate(&activity, target.dynamic_power_w, target.total_power_w, &base)?;
    fs::write(dir.join("energy.toml"), model.to_toml())?;
    write_json(&dir.join("activity.json"), &activity)?;
    println!("{:.4e} J per synaptic event, {:.4} W idle", model.e_synop_j, model.p_static_w);
    Ok(())
}

#[derive(Serialize)]
struct SearchSummary {
    trials: usize,
    failed: usize,
    best_per_stage: Vec<nas::StageBest>,
}

fn cmd_search(config: &RunConfig, dir: &Path) -> CliResult<()> {
    let path = dir.join("ledger.jsonl");
    if let Some(prev) = &config.resume {
        fs::copy(prev, &path).map_err(|e| CliError::Data(format!("{}: {e}", prev.display())))?;
    }
    let mut ledger = SearchLedger::open(&path)?;
    let resumed = ledger.trials.len();
    match config.evaluator {
        EvaluatorKind::Surrogate => nas::search(&config.search, &mut nas::AnalyticSurrogate, &mut ledger)?,
        EvaluatorKind::Training => {
            let (train_set, test_set) = load_data(config)?;
            let mut ev = TrainingEvaluator {
                train: train_set.examples(),
                test: test_set.examples(),
                config: config.train,
                cost: config.throughput,
            };
            nas::search(&config.search, &mut ev, &mut ledger)?
        }
    }
    let mut w = csv::Writer::from_writer(create(&dir.join("trials.csv"))?);
    w.write_record(["index", "stage", "blocks", "kernels", "fc1", "fc2", "accuracy", "latency_ms", "power_w", "pdp_mj", "objective", "error"])?;
    let mut failed = 0;
    for t in &ledger.trials {
        let kernels = t.spec.kernels.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let mut row = vec![t.index.to_string(), t.stage.to_string(), t.spec.blocks.to_string(), kernels, t.spec.fc[0].to_string(), t.spec.fc[1].to_string()];
        match &t.status {
            Status::Done { metrics, objective } => {
                row.extend([metrics.accuracy, metrics.latency_ms, metrics.power_w, metrics.pdp_mj, *objective].map(|v| v.to_string()));
                row.push(String::new());
            }
            Status::Failed { error } => {
                failed += 1;
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(error.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    let summary = SearchSummary {
        trials: ledger.trials.len(),
        failed,
        best_per_stage: ledger.best_per_stage(),
    };
    write_json(&dir.join("best.json"), &summary)?;
    println!("{} trials ({} resumed, {} failed)", summary.trials, resumed, failed);
    for b in &summary.best_per_stage {
        println!("  {:<12} trial {:>3}  kernels {:?} fc {:?}  objective {:.4}", b.stage.to_string(), b.index, b.spec.kernels, b.spec.fc, b.objective);
    }
    if let Some((t, o)) = ledger.best_under(Stage::AccPdp, config.search.lambda) {
        println!("overall: trial {} kernels {:?} fc {:?}, acc/pdp objective {o:.4}", t.index, t.spec.kernels, t.spec.fc);
    }
    Ok(())
}

fn cmd_report(config: &RunConfig, dir: &Path) -> CliResult<()> {
    let path = need(&config.devices, "--devices")?;
    let set = DeviceSet::load(path)?;
    let report = cost::comparative_report(&set, config.fps_min, config.fps_max)?;
    let text = report.to_text();
    fs::write(dir.join("report.txt"), &text)?;
    report.write_csv(create(&dir.join("table.csv"))?)?;
    report.write_claims_csv(create(&dir.join("claims.csv"))?)?;
    write_json(&dir.join("report.json"), &report)?;
    print!("{text}");
    if !report.all_consistent(0.01) {
        return Err(CliError::Invariant(format!("{}: derived columns or ratio claims disagree with the printed values", path.display())));
    }
    Ok(())
}
