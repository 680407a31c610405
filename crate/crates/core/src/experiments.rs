// SPDX-License-Identifier: Apache-2.0

//! Scenario files, run reports and the built-in experiments.
//!
//! A scenario is one JSON document. Every field has a default, unknown fields
//! are rejected and the fully defaulted config is echoed into the report
//! together with its SHA-256 hash.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{self, OverloadModel};
use crate::cost::{relative_billing, PricingRule};
use crate::engine::Time;
use crate::error::{Error, Result};
use crate::guard::{ControllerConfig, MetricKind, ModeTransition};
use crate::policy::{Jitter, PolicyKind, RetryPolicySpec};
use crate::services::{
    simulate, AutoscalerKind, AutoscalerSpec, BurstSpec, RateChange, SampleRow, ServiceModel, ServiceNodeSpec,
    TandemMetrics, TandemSpec, TrafficProfile,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    Summary,
    Timeseries,
    Capacity,
    Transitions,
    Costs,
}

/// A named policy under test; variants of one scenario share every random
/// stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub policy: RetryPolicySpec,
    #[serde(default)]
    pub controller: Option<ControllerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub horizon: Time,
    pub warmup: Time,
    pub seeds: Vec<u64>,
    pub sample_period: f64,
    pub traffic: TrafficProfile,
    pub service_model: ServiceModel,
    pub services: Vec<ServiceNodeSpec>,
    pub upstream: String,
    pub downstream: String,
    /// Used when `variants` is empty.
    pub policy: RetryPolicySpec,
    pub controller: Option<ControllerConfig>,
    pub variants: Vec<Variant>,
    pub request_timeout: Option<f64>,
    /// Variant that relative billing is normalized to.
    pub baseline: Option<String>,
    pub outputs: Vec<OutputKind>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            horizon: 600.0,
            warmup: 0.0,
            seeds: vec![1],
            sample_period: 1.0,
            traffic: TrafficProfile::constant(50.0),
            service_model: ServiceModel::Mm1m,
            services: vec![ServiceNodeSpec::named("A"), ServiceNodeSpec::named("B")],
            upstream: "A".into(),
            downstream: "B".into(),
            policy: RetryPolicySpec::default(),
            controller: None,
            variants: Vec::new(),
            request_timeout: None,
            baseline: None,
            outputs: vec![
                OutputKind::Summary,
                OutputKind::Timeseries,
                OutputKind::Capacity,
                OutputKind::Transitions,
                OutputKind::Costs,
            ],
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON of the defaulted config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be > 0, got {}", self.horizon));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut names = BTreeSet::new();
        for s in &self.services {
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate service `{}`", s.name));
            }
        }
        for role in [&self.upstream, &self.downstream] {
            if !names.contains(role.as_str()) {
                return bad(format!("service `{role}` is referenced but not defined"));
            }
        }
        if self.upstream == self.downstream {
            return bad("upstream and downstream must differ".into());
        }
        let variants = self.effective_variants();
        let mut vnames = BTreeSet::new();
        for v in &variants {
            if !vnames.insert(v.name.as_str()) {
                return bad(format!("duplicate variant `{}`", v.name));
            }
        }
        if let Some(b) = &self.baseline {
            if !vnames.contains(b.as_str()) {
                return bad(format!("baseline `{b}` is not a variant"));
            }
        }
        for v in &variants {
            self.tandem(v, self.seeds[0]).validate()?;
        }
        Ok(())
    }

    pub fn effective_variants(&self) -> Vec<Variant> {
        if !self.variants.is_empty() {
            return self.variants.clone();
        }
        let name = if self.controller.is_some() { "retryguard" } else { self.policy.kind.as_str() };
        vec![Variant { name: name.into(), policy: self.policy.clone(), controller: self.controller.clone() }]
    }

    fn service(&self, name: &str) -> ServiceNodeSpec {
        self.services.iter().find(|s| s.name == name).cloned().unwrap_or_else(|| ServiceNodeSpec::named(name))
    }

    pub fn tandem(&self, variant: &Variant, seed: u64) -> TandemSpec {
        TandemSpec {
            horizon: self.horizon,
            warmup: self.warmup,
            seed,
            sample_period: self.sample_period,
            traffic: self.traffic.clone(),
            service_model: self.service_model,
            upstream: self.service(&self.upstream),
            downstream: self.service(&self.downstream),
            policy: variant.policy.clone(),
            controller: variant.controller.clone(),
            request_timeout: self.request_timeout,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantReport {
    pub name: String,
    pub policy: PolicyKind,
    pub guarded: bool,
    pub metrics: TandemMetrics,
    pub upstream_cost: f64,
    pub downstream_cost: f64,
    pub total_cost: f64,
    pub relative_billing_pct: Option<f64>,
    pub final_capacity: f64,
    pub capacity_trajectory: Vec<(Time, f64)>,
    pub transitions: Vec<ModeTransition>,
    #[serde(skip)]
    pub series: Vec<SampleRow>,
    #[serde(skip)]
    pub upstream_spend: Vec<(Time, f64)>,
    #[serde(skip)]
    pub downstream_spend: Vec<(Time, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
    pub baseline: Option<String>,
    pub variants: Vec<VariantReport>,
}

impl RunReport {
    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }
}

/// Maps `f` over `items` on `jobs` threads (0 = all cores, 1 = inline).
/// Results keep the input order.
pub fn par_map<T, R, F>(jobs: usize, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    if jobs == 1 {
        return items.into_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
    pool.install(|| items.into_par_iter().map(f).collect())
}

fn run_variant(config: &ScenarioConfig, variant: &Variant, seed: u64) -> Result<VariantReport> {
    let run = simulate(&config.tandem(variant, seed))?;
    let upstream_cost = run.upstream_ledger.accrued;
    let downstream_cost = run.downstream_ledger.accrued;
    Ok(VariantReport {
        name: variant.name.clone(),
        policy: variant.policy.kind,
        guarded: variant.controller.is_some(),
        upstream_cost,
        downstream_cost,
        total_cost: upstream_cost + downstream_cost,
        relative_billing_pct: None,
        final_capacity: run.capacity_trajectory.last().map_or(f64::NAN, |c| c.1),
        capacity_trajectory: run.capacity_trajectory,
        transitions: run.transitions,
        upstream_spend: run.upstream_ledger.series(),
        downstream_spend: run.downstream_ledger.series(),
        series: run.series,
        metrics: run.metrics,
    })
}

/// Runs every variant for every seed; one report per seed.
pub fn run_scenario(config: &ScenarioConfig, jobs: usize) -> Result<Vec<RunReport>> {
    config.validate()?;
    let variants = config.effective_variants();
    let tasks: Vec<(u64, Variant)> =
        config.seeds.iter().flat_map(|&s| variants.iter().map(move |v| (s, v.clone()))).collect();
    let results = par_map(jobs, tasks, |(seed, v)| run_variant(config, &v, seed));
    let mut results = results.into_iter();
    let hash = config.hash();
    let mut reports = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let mut vs = Vec::with_capacity(variants.len());
        for _ in &variants {
            vs.push(results.next().expect("one result per task")?);
        }
        if let Some(baseline) = &config.baseline {
            let totals: Vec<(String, f64)> = vs.iter().map(|v| (v.name.clone(), v.total_cost)).collect();
            for (v, (_, pct)) in vs.iter_mut().zip(relative_billing(&totals, baseline)?) {
                v.relative_billing_pct = Some(pct);
            }
        }
        reports.push(RunReport {
            scenario: config.name.clone(),
            seed,
            config_hash: hash.clone(),
            tool_version: TOOL_VERSION.into(),
            baseline: config.baseline.clone(),
            variants: vs,
        });
    }
    Ok(reports)
}

/// A CSV-ready table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "table {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Column-aligned plain text.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

/// Everything a run or built-in emits.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub tables: Vec<Table>,
    pub summary: String,
    pub checks: Vec<Check>,
    pub provenance: serde_json::Value,
}

impl Artifact {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Writes `<table>.csv`, `summary.txt` and `provenance.json`; returns the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name));
            std::fs::write(&path, t.to_csv())?;
            written.push(path);
        }
        let path = dir.join("summary.txt");
        std::fs::write(&path, self.summary_text())?;
        written.push(path);
        let path = dir.join("provenance.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.provenance)? + "\n")?;
        written.push(path);
        Ok(written)
    }

    pub fn summary_text(&self) -> String {
        let mut out = self.summary.clone();
        if !self.checks.is_empty() {
            out.push_str("\nchecks:\n");
            for c in &self.checks {
                let _ = writeln!(out, "  [{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
        }
        out
    }
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.6}")
    }
}

const SUMMARY_HEADER: &[&str] = &[
    "variant",
    "seed",
    "fresh",
    "succeeded",
    "failed",
    "in_system",
    "retries",
    "retries_per_request",
    "rejection_rate",
    "mean_latency",
    "goodput",
    "upstream_cost",
    "downstream_cost",
    "total_cost",
    "relative_billing_pct",
    "final_capacity",
    "mode_transitions",
];

fn summary_row(seed: u64, v: &VariantReport) -> Vec<String> {
    let m = &v.metrics;
    vec![
        v.name.clone(),
        seed.to_string(),
        m.fresh.to_string(),
        m.succeeded.to_string(),
        m.failed.to_string(),
        m.in_system.to_string(),
        m.retries.to_string(),
        num(m.retries_per_request()),
        num(m.rejection_rate()),
        num(m.mean_latency()),
        num(m.goodput()),
        num(v.upstream_cost),
        num(v.downstream_cost),
        num(v.total_cost),
        v.relative_billing_pct.map_or_else(String::new, num),
        num(v.final_capacity),
        v.transitions.len().to_string(),
    ]
}

/// Tables for the requested report kinds, rows ordered by seed then variant.
pub fn report_tables(reports: &[RunReport], outputs: &[OutputKind]) -> Vec<Table> {
    let wanted: BTreeSet<OutputKind> = outputs.iter().copied().collect();
    let mut tables = Vec::new();
    if wanted.contains(&OutputKind::Summary) {
        let mut t = Table::new("summary", SUMMARY_HEADER);
        for r in reports {
            for v in &r.variants {
                t.push(summary_row(r.seed, v));
            }
        }
        tables.push(t);
    }
    if wanted.contains(&OutputKind::Timeseries) {
        let mut t = Table::new(
            "timeseries",
            &[
                "variant",
                "seed",
                "time",
                "fresh",
                "burst",
                "attempts",
                "retries",
                "rejections",
                "succeeded",
                "failed",
                "capacity",
                "upstream_held",
                "retries_on",
                "upstream_spend",
                "downstream_spend",
            ],
        );
        for r in reports {
            for v in &r.variants {
                for s in &v.series {
                    t.push(vec![
                        v.name.clone(),
                        r.seed.to_string(),
                        num(s.time),
                        s.fresh.to_string(),
                        s.burst.to_string(),
                        s.attempts.to_string(),
                        s.retries.to_string(),
                        s.rejections.to_string(),
                        s.succeeded.to_string(),
                        s.failed.to_string(),
                        num(s.capacity),
                        s.upstream_held.to_string(),
                        u8::from(s.retries_on).to_string(),
                        num(s.upstream_spend),
                        num(s.downstream_spend),
                    ]);
                }
            }
        }
        tables.push(t);
    }
    if wanted.contains(&OutputKind::Capacity) {
        let mut t = Table::new("capacity", &["variant", "seed", "time", "capacity"]);
        for r in reports {
            for v in &r.variants {
                for &(time, c) in &v.capacity_trajectory {
                    t.push(vec![v.name.clone(), r.seed.to_string(), num(time), num(c)]);
                }
            }
        }
        tables.push(t);
    }
    if wanted.contains(&OutputKind::Transitions) {
        let mut t = Table::new("transitions", &["variant", "seed", "time", "mode", "probe"]);
        for r in reports {
            for v in &r.variants {
                for tr in &v.transitions {
                    t.push(vec![
                        v.name.clone(),
                        r.seed.to_string(),
                        num(tr.time),
                        tr.mode.as_str().into(),
                        u8::from(tr.probe).to_string(),
                    ]);
                }
            }
        }
        tables.push(t);
    }
    if wanted.contains(&OutputKind::Costs) {
        let mut t = Table::new("costs", &["variant", "seed", "service", "time", "spend_rate"]);
        for r in reports {
            for v in &r.variants {
                for (service, series) in [("upstream", &v.upstream_spend), ("downstream", &v.downstream_spend)] {
                    for &(time, rate) in series.iter() {
                        t.push(vec![v.name.clone(), r.seed.to_string(), service.into(), num(time), num(rate)]);
                    }
                }
            }
        }
        tables.push(t);
    }
    tables
}

fn provenance(config: &ScenarioConfig) -> serde_json::Value {
    serde_json::json!({
        "scenario": config.name,
        "seeds": config.seeds,
        "config_hash": config.hash(),
        "tool_version": TOOL_VERSION,
        "config": config,
    })
}

fn summary_text(reports: &[RunReport]) -> String {
    let mut t = Table::new(
        "overview",
        &["variant", "seed", "retries/req", "reject_rate", "latency", "goodput", "billing%", "final_cap"],
    );
    for r in reports {
        for v in &r.variants {
            let m = &v.metrics;
            t.push(vec![
                v.name.clone(),
                r.seed.to_string(),
                format!("{:.4}", m.retries_per_request()),
                format!("{:.4}", m.rejection_rate()),
                format!("{:.4}", m.mean_latency()),
                format!("{:.2}", m.goodput()),
                v.relative_billing_pct.map_or_else(|| "-".into(), |p| format!("{p:.1}")),
                format!("{:.1}", v.final_capacity),
            ]);
        }
    }
    let head = reports.first().map_or_else(String::new, |r| {
        format!("scenario {} (config {}, stormsim {})\n", r.scenario, &r.config_hash[..12], r.tool_version)
    });
    head + &t.to_text()
}

/// Runs a scenario file and packages the report.
pub fn run_config(config: &ScenarioConfig, jobs: usize) -> Result<(Vec<RunReport>, Artifact)> {
    let reports = run_scenario(config, jobs)?;
    let mut checks = Vec::new();
    for r in &reports {
        for v in &r.variants {
            let m = &v.metrics;
            let limit =
                config.effective_variants().iter().find(|x| x.name == v.name).map_or(0, |x| x.policy.retry_limit());
            checks.push(Check::new(
                &format!("{} seed {}: request conservation", v.name, r.seed),
                m.conserved,
                format!(
                    "fresh {} = succeeded {} + failed {} + in-system {}",
                    m.fresh, m.succeeded, m.failed, m.in_system
                ),
            ));
            checks.push(Check::new(
                &format!("{} seed {}: attempt cap", v.name, r.seed),
                m.max_attempts_seen <= limit + 1,
                format!("max attempts {} <= {}", m.max_attempts_seen, limit + 1),
            ));
        }
    }
    let artifact = Artifact {
        tables: report_tables(&reports, &config.outputs),
        summary: summary_text(&reports),
        checks,
        provenance: provenance(config),
    };
    Ok((reports, artifact))
}

/// `key=value` parameters for built-ins. Unused keys are an error.
#[derive(Debug, Clone, Default)]
pub struct Params {
    values: BTreeMap<String, String>,
}

impl Params {
    pub fn parse<S: AsRef<str>>(pairs: &[S]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for p in pairs {
            let p = p.as_ref();
            let (k, v) = p.split_once('=').ok_or_else(|| Error::Config(format!("parameter `{p}` is not key=value")))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn set(mut self, key: &str, value: impl ToString) -> Self {
        self.values.insert(key.into(), value.to_string());
        self
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown parameter `{k}`; expected one of {allowed:?}"))),
            None => Ok(()),
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`"))),
        }
    }

    fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("bad value `{x}` in `{key}`"))))
                .collect(),
        }
    }

    fn service_model(&self, default: ServiceModel) -> Result<ServiceModel> {
        match self.values.get("service_model") {
            None => Ok(default),
            Some(v) => serde_json::from_value(serde_json::Value::String(v.clone()))
                .map_err(|_| Error::Config(format!("unknown service model `{v}`"))),
        }
    }

    fn metric(&self, key: &str, default: MetricKind) -> Result<MetricKind> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => serde_json::from_value(serde_json::Value::String(v.clone()))
                .map_err(|_| Error::Config(format!("unknown metric `{v}`"))),
        }
    }
}

pub const BUILTINS: &[&str] =
    &["storm-comparison", "critical-transition", "cost-heatmap", "burst-ddos", "over-scaling"];

/// Scenario config behind a scenario-based built-in.
pub fn builtin_config(name: &str, params: &Params) -> Result<ScenarioConfig> {
    match name {
        "storm-comparison" => storm_config(params),
        "burst-ddos" => ddos_config(params, true),
        "over-scaling" => overscaling_config(params),
        _ => Err(Error::Config(format!("built-in `{name}` has no scenario config"))),
    }
}

pub fn run_builtin(name: &str, params: &Params, jobs: usize) -> Result<Artifact> {
    match name {
        "storm-comparison" => builtin_storm_comparison(params, jobs),
        "critical-transition" => builtin_critical_transition(params, jobs),
        "cost-heatmap" => builtin_cost_heatmap(params),
        "burst-ddos" => builtin_burst_ddos(params, jobs),
        "over-scaling" => builtin_over_scaling(params, jobs),
        _ => Err(Error::Config(format!("unknown built-in `{name}`; expected one of {BUILTINS:?}"))),
    }
}

const STORM_KEYS: &[&str] = &[
    "seed",
    "horizon",
    "base_rate",
    "step_rate",
    "step_time",
    "decision_delay",
    "retry_base_delay",
    "metric",
    "threshold",
    "service_model",
    "service_time",
];

/// Legacy with the SDK-style attempt ladder: 4 retries, no jitter.
fn legacy(base: f64) -> RetryPolicySpec {
    RetryPolicySpec {
        jitter: Some(Jitter::None),
        ..RetryPolicySpec::of_kind(PolicyKind::Legacy).with_max_attempts(4).with_base_delay(base)
    }
}

fn standard(base: f64) -> RetryPolicySpec {
    RetryPolicySpec::of_kind(PolicyKind::Standard).with_max_attempts(2).with_base_delay(base)
}

fn adaptive(base: f64) -> RetryPolicySpec {
    RetryPolicySpec::of_kind(PolicyKind::Adaptive).with_max_attempts(2).with_base_delay(base)
}

fn target_tracking(min: f64, delay: f64) -> AutoscalerSpec {
    AutoscalerSpec {
        kind: AutoscalerKind::TargetTracking,
        target_utilization: 0.9,
        decision_delay: delay,
        measurement_window: 60.0,
        scale_down_hold: 900.0,
        min_capacity: min,
        max_capacity: 100_000.0,
        ..AutoscalerSpec::default()
    }
}

/// Step-load storm: downstream capacity 100, fresh rate 60 → 150 at t=300,
/// target tracking that takes about 20 minutes to react.
pub fn storm_config(params: &Params) -> Result<ScenarioConfig> {
    params.check_keys(STORM_KEYS)?;
    let base = params.parsed("retry_base_delay", 0.05)?;
    let controller = ControllerConfig {
        metric: params.metric("metric", MetricKind::RejectionRate)?,
        threshold: params.parsed("threshold", 0.2)?,
        ..ControllerConfig::default()
    };
    let step_time = params.parsed("step_time", 300.0)?;
    let config = ScenarioConfig {
        name: "storm-comparison".into(),
        horizon: params.parsed("horizon", 2100.0)?,
        seeds: vec![params.parsed("seed", 1u64)?],
        traffic: TrafficProfile {
            base_rate: params.parsed("base_rate", 60.0)?,
            changes: vec![RateChange { time: step_time, rate: params.parsed("step_rate", 150.0)? }],
            bursts: Vec::new(),
        },
        service_model: params.service_model(ServiceModel::CapacitySlot)?,
        services: vec![
            ServiceNodeSpec {
                pricing: Some(PricingRule::invocation_duration(0.001, 1.0)),
                ..ServiceNodeSpec::named("A")
            },
            ServiceNodeSpec {
                capacity: 100.0,
                buffer_size: 20,
                service_time: params.parsed("service_time", 0.01)?,
                scaler: Some(target_tracking(100.0, params.parsed("decision_delay", 1080.0)?)),
                pricing: Some(PricingRule::provisioned_capacity(0.01)),
                ..ServiceNodeSpec::named("B")
            },
        ],
        variants: vec![
            Variant { name: "none".into(), policy: RetryPolicySpec::of_kind(PolicyKind::None), controller: None },
            Variant { name: "legacy".into(), policy: legacy(base), controller: None },
            Variant { name: "standard".into(), policy: standard(base), controller: None },
            Variant { name: "adaptive".into(), policy: adaptive(base), controller: None },
            Variant { name: "retryguard".into(), policy: legacy(base), controller: Some(controller) },
        ],
        baseline: Some("retryguard".into()),
        ..ScenarioConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn builtin_storm_comparison(params: &Params, jobs: usize) -> Result<Artifact> {
    let config = storm_config(params)?;
    let (reports, mut artifact) = run_config(&config, jobs)?;
    let r = &reports[0];
    let get = |n: &str| r.variant(n).expect("storm variant");
    let (none, legacy, standard, adaptive, guard) =
        (get("none"), get("legacy"), get("standard"), get("adaptive"), get("retryguard"));
    let rpr = |v: &VariantReport| v.metrics.retries_per_request();
    let bill = |v: &VariantReport| v.relative_billing_pct.unwrap_or(f64::NAN);
    let mut billing =
        Table::new("billing", &["variant", "upstream_cost", "downstream_cost", "total_cost", "relative_billing_pct"]);
    for v in &r.variants {
        billing.push(vec![
            v.name.clone(),
            num(v.upstream_cost),
            num(v.downstream_cost),
            num(v.total_cost),
            num(bill(v)),
        ]);
    }
    artifact.tables.push(billing);
    let max_dev = r
        .variants
        .iter()
        .map(|v| (v.metrics.rejection_rate() - none.metrics.rejection_rate()).abs())
        .fold(0.0, f64::max);
    artifact.checks = vec![
        Check::new(
            "retries-per-request ordering",
            rpr(legacy) > rpr(standard)
                && rpr(standard) > rpr(adaptive)
                && rpr(adaptive) > rpr(guard)
                && rpr(guard) <= 0.1 * rpr(legacy),
            format!(
                "legacy {:.3} > standard {:.3} > adaptive {:.3} > retryguard {:.3} (<= 10% of legacy)",
                rpr(legacy),
                rpr(standard),
                rpr(adaptive),
                rpr(guard)
            ),
        ),
        Check::new(
            "rejection rates near no-retry baseline",
            max_dev <= 0.02,
            format!("max |rate - none| = {:.2} pp", 100.0 * max_dev),
        ),
        Check::new(
            "billing ordering",
            bill(legacy) > bill(standard)
                && bill(standard) > bill(adaptive)
                && bill(adaptive) > bill(guard)
                && bill(legacy) >= 3.0 * bill(guard),
            format!(
                "legacy {:.0}% > standard {:.0}% > adaptive {:.0}% > retryguard {:.0}%",
                bill(legacy),
                bill(standard),
                bill(adaptive),
                bill(guard)
            ),
        ),
    ];
    Ok(artifact)
}

/// Thresholds strictly inside the normalized-retry band spanned by loads
/// 0.95 and 1.1.
pub fn threshold_band(k: u32, m: u32) -> Result<(f64, f64)> {
    let curve = analytics::normalized_retry_curve(&[0.95, 1.1], k, m)?;
    Ok((curve[0].value(), curve[1].value()))
}

/// Controller transition log of the storm scenario's guarded variant with a
/// normalized-retry metric at `threshold`.
pub fn storm_switching_trace(params: &Params, threshold: f64) -> Result<Vec<ModeTransition>> {
    let params = params.clone().set("metric", "retries-per-request").set("threshold", threshold);
    let config = storm_config(&params)?;
    let guard = config.variants.iter().find(|v| v.name == "retryguard").expect("guarded variant");
    Ok(simulate(&config.tandem(guard, config.seeds[0]))?.transitions)
}

const CRITICAL_KEYS: &[&str] = &["k", "m", "rho", "seed", "seeds", "arrivals", "overload_horizon"];
const DEFAULT_RHO_GRID: &[f64] = &[0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0, 1.05, 1.1, 1.2, 1.3, 1.5, 1.75, 2.0];

/// Simulated normalized retry rate at one load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSample {
    pub rho: f64,
    pub analytic: f64,
    pub simulated: f64,
    pub stderr: f64,
    pub batches: usize,
}

/// Mean and standard error of per-batch ratios, pooled over batches.
fn batch_ratio(batches: &[(f64, f64)]) -> (f64, f64) {
    let num: f64 = batches.iter().map(|b| b.0).sum();
    let den: f64 = batches.iter().map(|b| b.1).sum();
    let estimate = if den > 0.0 { num / den } else { 0.0 };
    let ratios: Vec<f64> = batches.iter().filter(|b| b.1 > 0.0).map(|b| b.0 / b.1).collect();
    let n = ratios.len() as f64;
    if n < 2.0 {
        return (estimate, f64::NAN);
    }
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (estimate, (var / n).sqrt())
}

/// Below capacity: `k` times the rejection fraction of a retry-free M/M/1/m
/// run (system capacity `m`, unit service rate). Above: steady-state retries
/// per fresh request with `k - 1` jittered retries against service rate 100.
pub fn simulate_curve_point(
    rho: f64,
    k: u32,
    m: u32,
    seeds: &[u64],
    arrivals: f64,
    overload_horizon: f64,
) -> Result<CurveSample> {
    if k == 0 || m == 0 {
        return Err(Error::Config("critical transition needs k >= 1 and m >= 1".into()));
    }
    let analytic = analytics::normalized_retry_curve(&[rho], k, m)?[0].value();
    const BATCHES: f64 = 50.0;
    let mut batches = Vec::new();
    for &seed in seeds {
        let mut spec = TandemSpec {
            seed,
            service_model: ServiceModel::Mm1m,
            downstream: ServiceNodeSpec { buffer_size: m - 1, ..ServiceNodeSpec::named("B") },
            ..TandemSpec::default()
        };
        if rho <= 1.0 {
            spec.downstream.capacity = 1.0;
            spec.traffic = TrafficProfile::constant(rho);
            spec.horizon = arrivals / rho;
            spec.sample_period = spec.horizon / BATCHES;
            spec.policy = RetryPolicySpec::of_kind(PolicyKind::None);
            let run = simulate(&spec)?;
            batches.extend(run.series.iter().map(|s| (f64::from(k) * s.rejections as f64, s.attempts as f64)));
        } else {
            spec.downstream.capacity = 100.0;
            spec.traffic = TrafficProfile::constant(100.0 * rho);
            spec.warmup = 0.2 * overload_horizon;
            spec.horizon = overload_horizon + spec.warmup;
            spec.sample_period = spec.horizon / (BATCHES * 1.2);
            spec.policy = RetryPolicySpec::of_kind(PolicyKind::Standard).with_max_attempts(k - 1).with_base_delay(1.0);
            let run = simulate(&spec)?;
            batches.extend(
                run.series.iter().filter(|s| s.time > spec.warmup + 1e-9).map(|s| (s.retries as f64, s.fresh as f64)),
            );
        }
    }
    let (simulated, stderr) = batch_ratio(&batches);
    Ok(CurveSample { rho, analytic, simulated, stderr, batches: batches.len() })
}

fn builtin_critical_transition(params: &Params, jobs: usize) -> Result<Artifact> {
    params.check_keys(CRITICAL_KEYS)?;
    let k: u32 = params.parsed("k", 5)?;
    let m: u32 = params.parsed("m", 20)?;
    let grid = params.list("rho", DEFAULT_RHO_GRID)?;
    let seed: u64 = params.parsed("seed", 1)?;
    let n_seeds: u64 = params.parsed("seeds", 1)?;
    let arrivals: f64 = params.parsed("arrivals", 1e6)?;
    let overload_horizon: f64 = params.parsed("overload_horizon", 1000.0)?;
    if !(grid.iter().any(|&r| r < 1.0) && grid.iter().any(|&r| r > 1.0)) {
        return Err(Error::Config("rho grid must straddle 1".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds.max(1)).map(|i| seed + i).collect();
    let curve = analytics::normalized_retry_curve(&grid, k, m)?;
    let samples =
        par_map(jobs, grid.clone(), |rho| simulate_curve_point(rho, k, m, &seeds, arrivals, overload_horizon));
    let mut table = Table::new(
        "critical_transition",
        &["rho", "regime", "analytic", "analytic_stable", "analytic_overload", "simulated", "stderr", "z"],
    );
    for (point, sample) in curve.iter().zip(samples) {
        let s = sample?;
        let regime = if point.rho < 1.0 {
            "stable"
        } else if point.rho > 1.0 {
            "overload"
        } else {
            "critical"
        };
        let z = if s.stderr > 0.0 { (s.simulated - s.analytic) / s.stderr } else { f64::NAN };
        table.push(vec![
            num(point.rho),
            regime.into(),
            num(point.value()),
            point.stable.map_or_else(String::new, num),
            point.overload.map_or_else(String::new, num),
            num(s.simulated),
            num(s.stderr),
            num(z),
        ]);
    }
    let (lo, hi) = threshold_band(k, m)?;
    let steepness = hi / lo;
    let summary = format!(
        "critical transition k={k} m={m}\nvalue(0.95)={lo:.6} value(1.1)={hi:.6}\n\
         steepness value(1.1)/value(0.9)={:.3}\nrobust threshold band ({lo:.6}, {hi:.6})\n\n{}",
        hi / analytics::normalized_retry_curve(&[0.9], k, m)?[0].value(),
        table.to_text()
    );
    let steep = hi / analytics::normalized_retry_curve(&[0.9], k, m)?[0].value();
    let checks = vec![Check::new(
        "steepness around rho=1",
        steep >= 5.0,
        format!("ratio {steep:.3}, band ratio {steepness:.3}"),
    )];
    Ok(Artifact {
        tables: vec![table],
        summary,
        checks,
        provenance: serde_json::json!({
            "builtin": "critical-transition", "k": k, "m": m, "rho": grid, "seeds": seeds,
            "arrivals": arrivals, "overload_horizon": overload_horizon, "tool_version": TOOL_VERSION,
        }),
    })
}

const HEATMAP_KEYS: &[&str] = &["rho", "k_max"];
const DEFAULT_HEATMAP_RHO: &[f64] = &[1.05, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5, 4.0];

fn builtin_cost_heatmap(params: &Params) -> Result<Artifact> {
    params.check_keys(HEATMAP_KEYS)?;
    let grid = params.list("rho", DEFAULT_HEATMAP_RHO)?;
    let k_max: u32 = params.parsed("k_max", 6)?;
    if k_max == 0 {
        return Err(Error::Config("k_max must be >= 1".into()));
    }
    let mut table = Table::new("cost_heatmap", &["rho", "k", "p_tilde", "expected_delay"]);
    let mut monotone = true;
    for &rho in &grid {
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=k_max {
            let model = OverloadModel::new(rho, 1.0, k)?;
            let p = analytics::overload_rejection_prob(&model)?;
            let delay = analytics::expected_backoff_delay(p, k)?;
            monotone &= delay >= prev;
            prev = delay;
            table.push(vec![num(rho), k.to_string(), num(p), num(delay)]);
        }
    }
    let mut wide = Table::new("cost_heatmap_matrix", &[]);
    wide.header = std::iter::once("rho".to_string()).chain((1..=k_max).map(|k| format!("k{k}"))).collect();
    for (i, &rho) in grid.iter().enumerate() {
        let row = std::iter::once(num(rho))
            .chain((0..k_max as usize).map(|j| table.rows[i * k_max as usize + j][3].clone()))
            .collect();
        wide.push(row);
    }
    let summary = format!("expected backoff delay E[T] in base units\n\n{}", wide.to_text());
    Ok(Artifact {
        tables: vec![table, wide],
        summary,
        checks: vec![Check::new("E[T] non-decreasing in k", monotone, format!("{} rows", grid.len()))],
        provenance: serde_json::json!({ "builtin": "cost-heatmap", "rho": grid, "k_max": k_max, "tool_version": TOOL_VERSION }),
    })
}

const DDOS_KEYS: &[&str] = &[
    "seed",
    "burst_start",
    "burst_duration",
    "burst_rate",
    "base_rate",
    "capacity",
    "horizon",
    "tick_period",
    "interval",
];

/// Short attack burst against a downstream at load 0.9 with no time to scale.
pub fn ddos_config(params: &Params, with_burst: bool) -> Result<ScenarioConfig> {
    params.check_keys(DDOS_KEYS)?;
    let capacity: f64 = params.parsed("capacity", 100.0)?;
    let controller = ControllerConfig {
        tick_period: params.parsed("tick_period", 1.0)?,
        interval: params.parsed("interval", 5)?,
        ..ControllerConfig::default()
    };
    let legacy = RetryPolicySpec {
        jitter: Some(Jitter::None),
        ..RetryPolicySpec::of_kind(PolicyKind::Legacy).with_max_attempts(5).with_base_delay(2.0)
    };
    let burst = BurstSpec {
        start: params.parsed("burst_start", 300.0)?,
        duration: params.parsed("burst_duration", 10.0)?,
        extra_rate: params.parsed("burst_rate", 3.0 * capacity)?,
        ..BurstSpec::default()
    };
    let config = ScenarioConfig {
        name: if with_burst { "burst-ddos" } else { "burst-ddos-quiet" }.into(),
        horizon: params.parsed("horizon", 600.0)?,
        seeds: vec![params.parsed("seed", 1u64)?],
        traffic: TrafficProfile {
            base_rate: params.parsed("base_rate", 0.9 * capacity)?,
            changes: Vec::new(),
            bursts: if with_burst { vec![burst] } else { Vec::new() },
        },
        service_model: ServiceModel::Mm1m,
        services: vec![
            ServiceNodeSpec {
                pricing: Some(PricingRule::invocation_duration(0.001, 1.0)),
                ..ServiceNodeSpec::named("A")
            },
            ServiceNodeSpec {
                capacity,
                buffer_size: 20,
                pricing: Some(PricingRule::provisioned_capacity(0.01)),
                ..ServiceNodeSpec::named("B")
            },
        ],
        variants: vec![
            Variant { name: "none".into(), policy: RetryPolicySpec::of_kind(PolicyKind::None), controller: None },
            Variant { name: "legacy".into(), policy: legacy.clone(), controller: None },
            Variant { name: "standard".into(), policy: standard(2.0).with_max_attempts(5), controller: None },
            Variant { name: "retryguard".into(), policy: legacy, controller: Some(controller) },
        ],
        baseline: Some("none".into()),
        ..ScenarioConfig::default()
    };
    config.validate()?;
    Ok(config)
}

/// Seconds from `start` until the centered 5 s mean of downstream attempts
/// last exceeds 1.25 times its mean over the 200 s before `start`.
pub fn storm_duration(series: &[SampleRow], start: Time, period: f64) -> f64 {
    let rate = |s: &SampleRow| s.attempts as f64 / period;
    let pre: Vec<f64> = series.iter().filter(|s| s.time <= start && s.time > start - 200.0).map(rate).collect();
    if pre.is_empty() {
        return 0.0;
    }
    let threshold = 1.25 * pre.iter().sum::<f64>() / pre.len() as f64;
    let half = (2.5 / period).floor() as usize;
    let mut end = start;
    for i in 0..series.len() {
        if series[i].time <= start {
            continue;
        }
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(series.len() - 1);
        let smooth = series[lo..=hi].iter().map(rate).sum::<f64>() / (hi - lo + 1) as f64;
        if smooth > threshold {
            end = series[i].time;
        }
    }
    end - start
}

#[derive(Debug, Clone, Serialize)]
pub struct DdosRow {
    pub variant: String,
    pub storm_duration: f64,
    pub excess_cost: f64,
    pub burst_cost: f64,
    pub collateral_cost: f64,
    pub collateral_failures: i64,
    pub burst_requests: u64,
}

pub fn ddos_rows(params: &Params, jobs: usize) -> Result<(Vec<RunReport>, Vec<DdosRow>, f64)> {
    let loud = ddos_config(params, true)?;
    let quiet = ddos_config(params, false)?;
    let burst = loud.traffic.bursts[0];
    let mut both = par_map(jobs.clamp(1, 2), vec![loud.clone(), quiet], |c| run_scenario(&c, jobs));
    let quiet_reports = both.pop().expect("quiet")?;
    let loud_reports = both.pop().expect("loud")?;
    let upstream_price = loud.services[0].pricing.clone().expect("upstream pricing");
    let mut rows = Vec::new();
    for (v, q) in loud_reports[0].variants.iter().zip(&quiet_reports[0].variants) {
        let burst_cost = v.metrics.burst_fresh as f64 * upstream_price.price_per_invocation
            + v.metrics.burst_held_sum * upstream_price.price_per_second_held;
        let excess = v.total_cost - q.total_cost;
        let legit_failed = |r: &VariantReport| r.metrics.failed as i64 - r.metrics.burst_failed as i64;
        rows.push(DdosRow {
            variant: v.name.clone(),
            storm_duration: storm_duration(&v.series, burst.start, loud.sample_period),
            excess_cost: excess,
            burst_cost,
            collateral_cost: excess - burst_cost,
            collateral_failures: legit_failed(v) - legit_failed(q),
            burst_requests: v.metrics.burst_fresh,
        });
    }
    Ok((loud_reports, rows, burst.duration))
}

fn builtin_burst_ddos(params: &Params, jobs: usize) -> Result<Artifact> {
    let config = ddos_config(params, true)?;
    let (reports, rows, burst_duration) = ddos_rows(params, jobs)?;
    let mut table = Table::new(
        "burst_ddos",
        &[
            "variant",
            "burst_duration",
            "storm_duration",
            "storm_over_burst",
            "excess_cost",
            "burst_cost",
            "collateral_cost",
            "collateral_failures",
            "burst_requests",
        ],
    );
    for r in &rows {
        table.push(vec![
            r.variant.clone(),
            num(burst_duration),
            num(r.storm_duration),
            num(r.storm_duration / burst_duration),
            num(r.excess_cost),
            num(r.burst_cost),
            num(r.collateral_cost),
            r.collateral_failures.to_string(),
            r.burst_requests.to_string(),
        ]);
    }
    let find = |n: &str| rows.iter().find(|r| r.variant == n).expect("ddos variant");
    let (none, legacy, guard) = (find("none"), find("legacy"), find("retryguard"));
    let checks = vec![
        Check::new(
            "legacy storm outlasts burst 5x",
            legacy.storm_duration >= 5.0 * burst_duration,
            format!("{:.0}s vs burst {:.0}s", legacy.storm_duration, burst_duration),
        ),
        Check::new(
            "retryguard storm within 2x of no-retry",
            guard.storm_duration <= 2.0 * none.storm_duration,
            format!("{:.0}s vs {:.0}s", guard.storm_duration, none.storm_duration),
        ),
    ];
    let mut tables = vec![table];
    tables.extend(report_tables(&reports, &[OutputKind::Summary, OutputKind::Timeseries, OutputKind::Transitions]));
    Ok(Artifact {
        summary: format!("burst DDoS amplification\n\n{}", tables[0].to_text()),
        tables,
        checks,
        provenance: provenance(&config),
    })
}

const OVERSCALING_KEYS: &[&str] = &["seed", "horizon", "base_rate", "step_rate", "decision_delay", "budget_ratio"];

/// Target tracking at 90% while a budget policy adds up to `budget_ratio`
/// retries per fresh request to the measured load.
pub fn overscaling_config(params: &Params) -> Result<ScenarioConfig> {
    params.check_keys(OVERSCALING_KEYS)?;
    let base_rate: f64 = params.parsed("base_rate", 128.0)?;
    let initial = base_rate / 0.9;
    let budget = RetryPolicySpec {
        budget_ratio: params.parsed("budget_ratio", 0.2)?,
        ..RetryPolicySpec::of_kind(PolicyKind::Budget).with_max_attempts(3).with_base_delay(0.05)
    };
    let budget = RetryPolicySpec { jitter: Some(Jitter::Full), ..budget };
    let config = ScenarioConfig {
        name: "over-scaling".into(),
        horizon: params.parsed("horizon", 2100.0)?,
        seeds: vec![params.parsed("seed", 1u64)?],
        traffic: TrafficProfile {
            base_rate,
            changes: vec![RateChange { time: 300.0, rate: params.parsed("step_rate", 383.0)? }],
            bursts: Vec::new(),
        },
        service_model: ServiceModel::Mm1m,
        services: vec![
            ServiceNodeSpec {
                pricing: Some(PricingRule::invocation_duration(0.001, 1.0)),
                ..ServiceNodeSpec::named("A")
            },
            ServiceNodeSpec {
                capacity: initial,
                buffer_size: 20,
                scaler: Some(target_tracking(initial, params.parsed("decision_delay", 1080.0)?)),
                pricing: Some(PricingRule::provisioned_capacity(0.01)),
                ..ServiceNodeSpec::named("B")
            },
        ],
        variants: vec![
            Variant { name: "none".into(), policy: RetryPolicySpec::of_kind(PolicyKind::None), controller: None },
            Variant { name: "budget".into(), policy: budget.clone(), controller: None },
            Variant { name: "retryguard".into(), policy: budget, controller: Some(ControllerConfig::default()) },
        ],
        baseline: Some("none".into()),
        ..ScenarioConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn builtin_over_scaling(params: &Params, jobs: usize) -> Result<Artifact> {
    let config = overscaling_config(params)?;
    let (reports, mut artifact) = run_config(&config, jobs)?;
    let r = &reports[0];
    let none = r.variant("none").expect("none").final_capacity;
    let mut table = Table::new("over_scaling", &["variant", "converged_capacity", "excess_over_none_pct"]);
    for v in &r.variants {
        table.push(vec![v.name.clone(), num(v.final_capacity), num(100.0 * (v.final_capacity / none - 1.0))]);
    }
    let excess = |n: &str| 100.0 * (r.variant(n).expect("variant").final_capacity / none - 1.0);
    artifact.checks = vec![
        Check::new(
            "retries over-scale by 15-25%",
            (15.0..=25.0).contains(&excess("budget")),
            format!("{:.1}%", excess("budget")),
        ),
        Check::new("retryguard excess below 5%", excess("retryguard") < 5.0, format!("{:.1}%", excess("retryguard"))),
    ];
    artifact.summary = format!("{}\n{}", table.to_text(), artifact.summary);
    artifact.tables.insert(0, table);
    Ok(artifact)
}

/// Sets a dotted path such as `traffic.base_rate` or `services.1.capacity`.
fn set_path(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| serde_json::json!({}))
            }
            serde_json::Value::Array(items) => {
                let idx: usize =
                    part.parse().map_err(|_| Error::Config(format!("`{part}` in `{path}` is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("index {idx} out of range {len} in `{path}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("cannot descend into `{part}` of `{path}`"))),
        };
    }
    Ok(())
}

/// One grid axis: a dotted config path and its values.
#[derive(Debug, Clone)]
pub struct GridAxis {
    pub path: String,
    pub values: Vec<serde_json::Value>,
}

impl GridAxis {
    /// Parses `path=v1,v2,...`; values are JSON literals, or strings if not.
    pub fn parse(spec: &str) -> Result<Self> {
        let (path, values) =
            spec.split_once('=').ok_or_else(|| Error::Config(format!("grid `{spec}` is not path=v1,v2,...")))?;
        let values = values
            .split(',')
            .map(|v| serde_json::from_str(v.trim()).unwrap_or_else(|_| serde_json::Value::String(v.trim().into())))
            .collect::<Vec<_>>();
        if values.is_empty() || path.trim().is_empty() {
            return Err(Error::Config(format!("grid `{spec}` is empty")));
        }
        Ok(Self { path: path.trim().into(), values })
    }
}

/// Runs the cartesian product of `axes` over `base`; one summary block per cell.
pub fn sweep(base: &ScenarioConfig, axes: &[GridAxis], jobs: usize) -> Result<Artifact> {
    let mut cells: Vec<Vec<serde_json::Value>> = vec![Vec::new()];
    for axis in axes {
        cells = cells
            .into_iter()
            .flat_map(|c| axis.values.iter().map(move |v| [c.clone(), vec![v.clone()]].concat()))
            .collect();
    }
    let base_json = serde_json::to_value(base)?;
    let configs = cells
        .iter()
        .map(|cell| {
            let mut json = base_json.clone();
            for (axis, v) in axes.iter().zip(cell) {
                set_path(&mut json, &axis.path, v.clone())?;
            }
            let config: ScenarioConfig = serde_json::from_value(json)?;
            config.validate()?;
            Ok(config)
        })
        .collect::<Result<Vec<_>>>()?;
    let results = par_map(jobs, configs.clone(), |c| run_scenario(&c, 1));
    let header: Vec<&str> = std::iter::once("cell")
        .chain(axes.iter().map(|a| a.path.as_str()))
        .chain(SUMMARY_HEADER.iter().copied())
        .collect();
    let mut table = Table::new("sweep", &header);
    for (i, (cell, reports)) in cells.iter().zip(results).enumerate() {
        for r in reports? {
            for v in &r.variants {
                let mut row = vec![i.to_string()];
                row.extend(cell.iter().map(|v| match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                }));
                row.extend(summary_row(r.seed, v));
                table.push(row);
            }
        }
    }
    Ok(Artifact {
        summary: format!("sweep over {} cells\n\n{}", cells.len(), table.to_text()),
        tables: vec![table],
        checks: Vec::new(),
        provenance: serde_json::json!({
            "base_config_hash": base.hash(),
            "axes": axes.iter().map(|a| serde_json::json!({"path": a.path, "values": a.values})).collect::<Vec<_>>(),
            "cell_hashes": configs.iter().map(ScenarioConfig::hash).collect::<Vec<_>>(),
            "tool_version": TOOL_VERSION,
        }),
    })
}
