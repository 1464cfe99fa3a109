//! Device profiles, per-inference cost arithmetic and an activity-based
//! energy model for the simulated neuromorphic chip.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::CoreMap;
use crate::sim::{Evaluation, InferenceResult};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("device '{device}': {detail}")]
    Metric { device: String, detail: String },
    #[error("unknown device '{0}'")]
    UnknownDevice(String),
    #[error("need at least two device profiles, found {0}")]
    TooFewProfiles(usize),
    #[error("invalid energy model: {0}")]
    Model(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("{path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Copied from published measurements.
    #[default]
    Published,
    /// Produced by this toolkit's simulator.
    Simulated,
}

/// One device and its measured (or simulated) inference figures. `energy_mj`
/// and `fps` hold printed values when known; [`derive_metrics`] computes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    #[serde(skip)]
    pub name: String,
    #[serde(default)]
    pub accuracy_pct: Option<f64>,
    pub latency_ms: f64,
    pub power_w: f64,
    #[serde(default)]
    pub energy_mj: Option<f64>,
    #[serde(default)]
    pub fps: Option<f64>,
    #[serde(default)]
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Derived {
    pub energy_mj: f64,
    pub fps: f64,
    /// Power-delay product; the same quantity as the energy.
    pub pdp_mj: f64,
}

pub fn derive_metrics(p: &DeviceProfile) -> Result<Derived, CostError> {
    let bad = |detail: String| CostError::Metric { device: p.name.clone(), detail };
    if !(p.latency_ms > 0.0) || !p.latency_ms.is_finite() {
        return Err(bad(format!("latency must be positive, got {} ms", p.latency_ms)));
    }
    if !(p.power_w >= 0.0) || !p.power_w.is_finite() {
        return Err(bad(format!("power must be non-negative, got {} W", p.power_w)));
    }
    let energy_mj = p.power_w * p.latency_ms;
    Ok(Derived {
        energy_mj,
        fps: 1000.0 / p.latency_ms,
        pdp_mj: energy_mj,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RealtimeVerdict {
    pub fps: f64,
    pub fps_min: f64,
    pub fps_max: f64,
    pub pass: bool,
    /// `fps - fps_min`; negative on failure.
    pub margin: f64,
}

/// Passes when the device sustains at least `fps_min` frames per second.
pub fn realtime_check(p: &DeviceProfile, fps_min: f64, fps_max: f64) -> Result<RealtimeVerdict, CostError> {
    let fps = derive_metrics(p)?.fps;
    Ok(RealtimeVerdict {
        fps,
        fps_min,
        fps_max,
        pass: fps >= fps_min,
        margin: fps - fps_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Power,
    Energy,
    Latency,
}

impl Metric {
    fn of(self, d: &DeviceProfile, derived: &Derived) -> f64 {
        match self {
            Metric::Power => d.power_w,
            Metric::Energy => derived.energy_mj,
            Metric::Latency => d.latency_ms,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Metric::Power => "power",
            Metric::Energy => "energy",
            Metric::Latency => "latency",
        }
    }
}

/// A published ratio `metric(numerator) / metric(denominator)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioClaim {
    pub metric: Metric,
    pub numerator: String,
    pub denominator: String,
    pub printed: f64,
}

/// Whether `value` prints as `printed` when rounded or truncated to the
/// number of decimals `printed` is written with.
pub fn matches_printed(value: f64, printed: f64) -> bool {
    let s = printed.to_string();
    let decimals = s.split_once('.').map_or(0, |(_, f)| f.len()) as i32;
    let unit = 10f64.powi(-decimals);
    let eps = 1e-9 * unit;
    value >= printed - 0.5 * unit - eps && value < printed + unit - eps
}

/// Device profiles file: a `[devices.<name>]` table per device, plus
/// optional published ratios to check.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFile {
    #[serde(default)]
    pub devices: toml::Table,
    #[serde(default)]
    pub claims: Vec<RatioClaim>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSet {
    pub profiles: Vec<DeviceProfile>,
    pub claims: Vec<RatioClaim>,
}

impl DeviceSet {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CostError> {
        let toml_err = |source| CostError::Toml { path: origin.to_string(), source };
        let file: DeviceFile = toml::from_str(text).map_err(toml_err)?;
        let mut profiles = Vec::with_capacity(file.devices.len());
        for (name, value) in file.devices {
            let mut p: DeviceProfile = value.try_into().map_err(toml_err)?;
            p.name = name;
            derive_metrics(&p)?;
            profiles.push(p);
        }
        Ok(Self {
            profiles,
            claims: file.claims,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get(&self, name: &str) -> Result<&DeviceProfile, CostError> {
        self.profiles
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| CostError::UnknownDevice(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub name: String,
    pub source: Source,
    pub accuracy_pct: Option<f64>,
    pub latency_ms: f64,
    pub power_w: f64,
    pub derived: Derived,
    pub printed_energy_mj: Option<f64>,
    pub printed_fps: Option<f64>,
    /// Largest relative gap between a derived column and its printed value.
    pub max_rel_error: f64,
    pub realtime: RealtimeVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimCheck {
    pub claim: RatioClaim,
    pub value: f64,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparativeReport {
    pub rows: Vec<ProfileRow>,
    /// `ratios[metric][a][b] = metric(a) / metric(b)`, indexed like `rows`.
    pub ratios: BTreeMap<Metric, Vec<Vec<f64>>>,
    pub claims: Vec<ClaimCheck>,
}

fn rel(derived: f64, printed: Option<f64>) -> f64 {
    printed.map_or(0.0, |p| ((derived - p) / p).abs())
}

pub fn comparative_report(set: &DeviceSet, fps_min: f64, fps_max: f64) -> Result<ComparativeReport, CostError> {
    if set.profiles.len() < 2 {
        return Err(CostError::TooFewProfiles(set.profiles.len()));
    }
    let mut rows = Vec::with_capacity(set.profiles.len());
    for p in &set.profiles {
        let derived = derive_metrics(p)?;
        rows.push(ProfileRow {
            name: p.name.clone(),
            source: p.source,
            accuracy_pct: p.accuracy_pct,
            latency_ms: p.latency_ms,
            power_w: p.power_w,
            derived,
            printed_energy_mj: p.energy_mj,
            printed_fps: p.fps,
            max_rel_error: rel(derived.energy_mj, p.energy_mj).max(rel(derived.fps, p.fps)),
            realtime: realtime_check(p, fps_min, fps_max)?,
        });
    }
    let mut ratios = BTreeMap::new();
    for m in [Metric::Power, Metric::Energy, Metric::Latency] {
        let vals: Vec<f64> = set.profiles.iter().zip(&rows).map(|(p, r)| m.of(p, &r.derived)).collect();
        let table = vals.iter().map(|a| vals.iter().map(|b| a / b).collect()).collect();
        ratios.insert(m, table);
    }
    let mut claims = Vec::with_capacity(set.claims.len());
    for c in &set.claims {
        let a = set.get(&c.numerator)?;
        let b = set.get(&c.denominator)?;
        let value = c.metric.of(a, &derive_metrics(a)?) / c.metric.of(b, &derive_metrics(b)?);
        claims.push(ClaimCheck {
            claim: c.clone(),
            value,
            matches: matches_printed(value, c.printed),
        });
    }
    Ok(ComparativeReport { rows, ratios, claims })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

impl ComparativeReport {
    pub fn all_consistent(&self, tolerance: f64) -> bool {
        self.rows.iter().all(|r| r.max_rel_error <= tolerance) && self.claims.iter().all(|c| c.matches)
    }

    /// Aligned plain-text table followed by the ratio checks.
    pub fn to_text(&self) -> String {
        let header = [
            "device", "source", "acc %", "latency ms", "dyn power W", "energy mJ", "printed mJ", "fps", "printed fps", "rel err", "real-time",
        ];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            cells.push(vec![
                r.name.clone(),
                format!("{:?}", r.source).to_lowercase(),
                opt(r.accuracy_pct),
                r.latency_ms.to_string(),
                r.power_w.to_string(),
                format!("{:.4}", r.derived.energy_mj),
                opt(r.printed_energy_mj),
                format!("{:.1}", r.derived.fps),
                opt(r.printed_fps),
                format!("{:.2}%", r.max_rel_error * 100.0),
                if r.realtime.pass { "yes" } else { "no" }.into(),
            ]);
        }
        let widths: Vec<usize> = (0..header.len()).map(|j| cells.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        let _ = writeln!(out, "power is dynamic power (total minus idle); energy = power x latency");
        if !self.claims.is_empty() {
            out.push('\n');
            for c in &self.claims {
                let _ = writeln!(
                    out,
                    "{} {} / {}: {:.3}x (printed {}x) {}",
                    c.claim.metric.name(),
                    c.claim.numerator,
                    c.claim.denominator,
                    c.value,
                    c.claim.printed,
                    if c.matches { "ok" } else { "MISMATCH" }
                );
            }
        }
        out
    }

    /// Profile rows, header
    /// `device,source,accuracy_pct,latency_ms,power_w,energy_mj,fps,pdp_mj,printed_energy_mj,printed_fps,max_rel_error,realtime`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CostError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "device", "source", "accuracy_pct", "latency_ms", "power_w", "energy_mj", "fps", "pdp_mj", "printed_energy_mj", "printed_fps",
            "max_rel_error", "realtime",
        ])?;
        let o = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                format!("{:?}", r.source).to_lowercase(),
                o(r.accuracy_pct),
                r.latency_ms.to_string(),
                r.power_w.to_string(),
                r.derived.energy_mj.to_string(),
                r.derived.fps.to_string(),
                r.derived.pdp_mj.to_string(),
                o(r.printed_energy_mj),
                o(r.printed_fps),
                r.max_rel_error.to_string(),
                r.realtime.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Header `metric,numerator,denominator,value,printed,matches`.
    pub fn write_claims_csv<W: Write>(&self, out: W) -> Result<(), CostError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "numerator", "denominator", "value", "printed", "matches"])?;
        for c in &self.claims {
            w.write_record([
                c.claim.metric.name().to_string(),
                c.claim.numerator.clone(),
                c.claim.denominator.clone(),
                c.value.to_string(),
                c.claim.printed.to_string(),
                c.matches.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Energy per unit of network activity on the neuromorphic chip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuroEnergyModel {
    /// Joules per delivered synaptic event.
    pub e_synop_j: f64,
    /// Joules per neuron per timestep.
    #[serde(default)]
    pub e_neuron_update_j: f64,
    /// Idle power of one chip, watts.
    pub p_static_w: f64,
    /// Timestep, seconds.
    pub dt: f64,
}

impl NeuroEnergyModel {
    pub fn validate(&self) -> Result<(), CostError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.e_synop_j) || !ok(self.e_neuron_update_j) || !ok(self.p_static_w) || !(self.dt > 0.0) {
            return Err(CostError::Model(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path)?;
        let m: Self = toml::from_str(&text).map_err(|source| CostError::Toml {
            path: path.display().to_string(),
            source,
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain numbers serialize")
    }
}

/// Activity of one inference (or the mean over many).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub synaptic_events: f64,
    pub neuron_updates: f64,
    pub steps: f64,
}

impl From<&InferenceResult> for Activity {
    fn from(r: &InferenceResult) -> Self {
        Self {
            synaptic_events: r.synaptic_events as f64,
            neuron_updates: r.neuron_updates as f64,
            steps: r.steps() as f64,
        }
    }
}

impl Activity {
    pub fn from_evaluation(e: &Evaluation, steps: usize) -> Self {
        Self {
            synaptic_events: e.mean_synaptic_events,
            neuron_updates: e.mean_neuron_updates,
            steps: steps as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyEstimate {
    pub dynamic_energy_mj: f64,
    pub dynamic_power_w: f64,
    pub static_power_w: f64,
    pub total_power_w: f64,
    pub total_energy_mj: f64,
}

/// Dynamic energy is `events·e_synop + updates·e_neuron_update`; power is
/// that over the simulated window. Static power is charged per chip in use.
pub fn estimate_snn_energy(activity: &Activity, model: &NeuroEnergyModel, map: Option<&CoreMap>) -> Result<EnergyEstimate, CostError> {
    model.validate()?;
    if !(activity.steps > 0.0) {
        return Err(CostError::Model("activity covers no timesteps".into()));
    }
    let window_s = activity.steps * model.dt;
    let dynamic_j = activity.synaptic_events * model.e_synop_j + activity.neuron_updates * model.e_neuron_update_j;
    let chips = map.map_or(1, |m| m.chips_used.max(1)) as f64;
    let dynamic_power_w = dynamic_j / window_s;
    let static_power_w = model.p_static_w * chips;
    let total_power_w = dynamic_power_w + static_power_w;
    Ok(EnergyEstimate {
        dynamic_energy_mj: dynamic_j * 1e3,
        dynamic_power_w,
        static_power_w,
        total_power_w,
        total_energy_mj: total_power_w * window_s * 1e3,
    })
}

/// Solves for the per-event energy that makes `activity` dissipate
/// `dynamic_power_w`, keeping the model's neuron-update term.
pub fn calibrate(activity: &Activity, dynamic_power_w: f64, total_power_w: Option<f64>, base: &NeuroEnergyModel) -> Result<NeuroEnergyModel, CostError> {
    base.validate()?;
    if !(activity.synaptic_events > 0.0) || !(activity.steps > 0.0) {
        return Err(CostError::Calibration("activity has no synaptic events".into()));
    }
    let window_s = activity.steps * base.dt;
    let update_j = activity.neuron_updates * base.e_neuron_update_j;
    let e_synop_j = (dynamic_power_w * window_s - update_j) / activity.synaptic_events;
    if !(e_synop_j >= 0.0) {
        return Err(CostError::Calibration(format!(
            "neuron updates alone exceed {dynamic_power_w} W; lower e_neuron_update_j"
        )));
    }
    let p_static_w = match total_power_w {
        Some(t) if t < dynamic_power_w => {
            return Err(CostError::Calibration(format!("total power {t} W below dynamic power {dynamic_power_w} W")))
        }
        Some(t) => t - dynamic_power_w,
        None => base.p_static_w,
    };
    Ok(NeuroEnergyModel {
        e_synop_j,
        p_static_w,
        ..*base
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(name: &str, latency_ms: f64, power_w: f64) -> DeviceProfile {
        DeviceProfile {
            name: name.into(),
            accuracy_pct: None,
            latency_ms,
            power_w,
            energy_mj: None,
            fps: None,
            source: Source::Published,
        }
    }

    #[test]
    fn unit_device() {
        let d = derive_metrics(&profile("u", 1.0, 1.0)).unwrap();
        assert_eq!((d.energy_mj, d.fps, d.pdp_mj), (1.0, 1000.0, 1.0));
    }

    #[test]
    fn pi_and_loihi_rows() {
        let pi = derive_metrics(&profile("Pi", 2.88, 1.56)).unwrap();
        assert!((pi.energy_mj - 4.4928).abs() < 1e-12);
        assert_eq!(pi.fps.round(), 347.0);
        let loihi = derive_metrics(&profile("Loihi", 35.0, 0.0012)).unwrap();
        assert!((loihi.energy_mj - 0.042).abs() < 1e-12);
        assert!((loihi.fps - 28.571).abs() < 1e-3);
    }

    #[test]
    fn non_positive_latency_is_rejected() {
        assert!(matches!(derive_metrics(&profile("x", 0.0, 1.0)), Err(CostError::Metric { .. })));
        assert!(derive_metrics(&profile("x", -1.0, 1.0)).is_err());
    }

    #[test]
    fn realtime_boundary() {
        assert!(realtime_check(&profile("Loihi", 35.0, 0.0012), 20.0, 30.0).unwrap().pass);
        let slow = realtime_check(&profile("slow", 1000.0 / 19.9, 1.0), 20.0, 30.0).unwrap();
        assert!(!slow.pass && slow.margin < 0.0);
        let coral = realtime_check(&profile("Coral", 0.39, 0.52), 20.0, 30.0).unwrap();
        assert!(coral.pass && coral.margin > 2500.0);
    }

    #[test]
    fn printed_rounding_rule() {
        assert!(matches_printed(1733.33, 1733.0));
        assert!(matches_printed(4.833, 4.8));
        // 89.74 prints as 89 only when truncated.
        assert!(matches_printed(89.74, 89.0));
        assert!(matches_printed(88.6, 89.0));
        assert!(!matches_printed(90.0, 89.0));
        assert!(!matches_printed(4.75, 4.9));
    }

    #[test]
    fn device_file_round_trip() {
        let text = r#"
[devices.A]
latency_ms = 2.0
power_w = 1.0
energy_mj = 2.0

[devices.B]
latency_ms = 4.0
power_w = 0.25
source = "simulated"

[[claims]]
metric = "power"
numerator = "A"
denominator = "B"
printed = 4
"#;
        let set = DeviceSet::parse(text, "inline").unwrap();
        assert_eq!(set.profiles[0].name, "A");
        assert_eq!(set.profiles[1].source, Source::Simulated);
        let r = comparative_report(&set, 20.0, 30.0).unwrap();
        assert!(r.all_consistent(0.01));
        assert_eq!(r.ratios[&Metric::Latency][1][0], 2.0);
        assert!(r.to_text().contains("ok"));
    }

    #[test]
    fn unknown_keys_and_short_sets_are_rejected() {
        assert!(DeviceSet::parse("[devices.A]\nlatency_ms = 1.0\npower_w = 1.0\nvolts = 5\n", "x").is_err());
        let one = DeviceSet::parse("[devices.A]\nlatency_ms = 1.0\npower_w = 1.0\n", "x").unwrap();
        assert!(matches!(comparative_report(&one, 20.0, 30.0), Err(CostError::TooFewProfiles(1))));
        let empty = DeviceSet::parse("", "x").unwrap();
        assert!(comparative_report(&empty, 20.0, 30.0).is_err());
    }

    #[test]
    fn shipped_fixture_reproduces_published_columns() {
        let set = DeviceSet::parse(include_str!("../../../fixtures/devices.toml"), "devices.toml").unwrap();
        assert_eq!(set.profiles.len(), 7);
        let r = comparative_report(&set, 20.0, 30.0).unwrap();
        for row in &r.rows {
            assert!(row.max_rel_error <= 0.01, "{}: {}", row.name, row.max_rel_error);
            assert!(row.realtime.pass);
        }
        assert_eq!(r.claims.len(), 6);
        for c in &r.claims {
            assert!(c.matches, "{:?} {}", c.claim, c.value);
        }
        // Independent arithmetic for two of the ratios.
        assert!((r.claims[0].value - 2.08 / 0.0012).abs() < 1e-9);
        assert!((r.claims[5].value - 35.0 / 0.39).abs() < 1e-9);
    }

    fn model() -> NeuroEnergyModel {
        NeuroEnergyModel { e_synop_j: 1e-11, e_neuron_update_j: 0.0, p_static_w: 0.024, dt: 1e-3 }
    }

    #[test]
    fn silence_costs_only_neuron_updates() {
        let quiet = Activity { synaptic_events: 0.0, neuron_updates: 1000.0, steps: 50.0 };
        assert_eq!(estimate_snn_energy(&quiet, &model(), None).unwrap().dynamic_power_w, 0.0);
        let m = NeuroEnergyModel { e_neuron_update_j: 1e-12, ..model() };
        let e = estimate_snn_energy(&quiet, &m, None).unwrap();
        assert!((e.dynamic_energy_mj - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn calibration_reproduces_target_power() {
        let gray = Activity { synaptic_events: 1.2e7, neuron_updates: 5e6, steps: 50.0 };
        let m = calibrate(&gray, 2.3e-3, Some(26.3e-3), &model()).unwrap();
        let e = estimate_snn_energy(&gray, &m, None).unwrap();
        assert!((e.dynamic_power_w - 2.3e-3).abs() < 1e-12);
        assert!((e.static_power_w - 24.0e-3).abs() < 1e-12);
        assert!((e.total_power_w - 26.3e-3).abs() < 1e-12);
        assert!(calibrate(&Activity { synaptic_events: 0.0, ..gray }, 1e-3, None, &model()).is_err());
    }

    proptest! {
        #[test]
        fn ratios_are_antisymmetric(l in 0.1f64..100.0, p in 0.001f64..5.0, l2 in 0.1f64..100.0, p2 in 0.001f64..5.0) {
            let set = DeviceSet { profiles: vec![profile("a", l, p), profile("b", l2, p2)], claims: vec![] };
            let r = comparative_report(&set, 20.0, 30.0).unwrap();
            for t in r.ratios.values() {
                prop_assert!((t[0][1] * t[1][0] - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn energy_is_linear_and_monotone(ev in 0.0f64..1e8, up in 0.0f64..1e7, extra in 0.0f64..1e6) {
            let m = NeuroEnergyModel { e_neuron_update_j: 1e-13, ..model() };
            let a = Activity { synaptic_events: ev, neuron_updates: up, steps: 50.0 };
            let b = Activity { synaptic_events: ev + extra, neuron_updates: up + extra, ..a };
            let ea = estimate_snn_energy(&a, &m, None).unwrap();
            prop_assert!(estimate_snn_energy(&b, &m, None).unwrap().dynamic_energy_mj >= ea.dynamic_energy_mj);
            let only_syn = NeuroEnergyModel { e_neuron_update_j: 0.0, ..m };
            let single = estimate_snn_energy(&a, &only_syn, None).unwrap().dynamic_energy_mj;
            let double = estimate_snn_energy(&Activity { synaptic_events: 2.0 * ev, ..a }, &only_syn, None).unwrap().dynamic_energy_mj;
            prop_assert!((double - 2.0 * single).abs() <= 1e-12 * double.max(1e-30));
        }
    }
}
