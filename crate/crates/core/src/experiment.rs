//! Experiment plans: a matrix of simulator cells, each repeated with
//! consecutive seeds and summarised with t-based confidence intervals,
//! plus the attack scenario report.
//!
//! A plan is a small INI file. `[cell-defaults]` selects the matrix and
//! may set simulator parameters for every cell; `[override ...]` sections
//! set parameters only for cells matching their selector:
//!
//! ```text
//! [cell-defaults]
//! schemes = none, BANZKP, BAN_GZKP
//! strategies = all
//! postures = walk, sleep
//! rates = 1, 5, 10
//! repetitions = 200
//! base_seed = 1
//! duration_s = 60
//!
//! [override strategy=FloodToSink]
//! ttl = 5
//! ```

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ini::Ini;
use rayon::prelude::*;
use thiserror::Error;

use crate::adversary::{run_scenario, AdversaryError, Scenario, ScenarioTopology, Verdict};
use crate::handshake::Scheme;
use crate::stats::{StatsError, Summary, DEFAULT_ALPHA};
use crate::wban_sim::{
    run_with_trace, seconds, AuthMode, CryptoModel, LinkTrace, Posture, RunMetrics, SimConfig, SimError, Strategy,
    NODE_COUNT, NS_PER_MS,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("no trace for posture {posture} at {}", path.display())]
    MissingTrace { posture: Posture, path: PathBuf },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Sim(SimError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<SimError> for ExperimentError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::MissingTrace { posture, path } => ExperimentError::MissingTrace { posture, path },
            SimError::Config(m) => ExperimentError::InvalidPlan(m),
            other => ExperimentError::Sim(other),
        }
    }
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::InvalidPlan(msg.into())
}

/// Simulator parameters a plan may set. Unset fields keep the simulator
/// defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellParams {
    pub ttl: Option<u8>,
    pub beacon_interval_ms: Option<u64>,
    pub req_retry_timeout_ms: Option<u64>,
    pub rep_window_ms: Option<u64>,
    pub max_retransmissions: Option<u32>,
    pub flood_suppression: Option<u32>,
    pub auth_timeout_ms: Option<u64>,
    pub drain_s: Option<f64>,
    pub data_bytes: Option<usize>,
    pub queue_capacity: Option<usize>,
    pub prewarm: Option<bool>,
    pub crypto: Option<CryptoModel>,
}

impl CellParams {
    /// Keys understood in plan sections besides the matrix keys.
    pub const KEYS: [&'static str; 12] = [
        "ttl",
        "beacon_interval_ms",
        "req_retry_timeout_ms",
        "rep_window_ms",
        "max_retransmissions",
        "flood_suppression",
        "auth_timeout_ms",
        "drain_s",
        "data_bytes",
        "queue_capacity",
        "prewarm",
        "crypto",
    ];

    fn set(&mut self, key: &str, value: &str) -> Result<(), ExperimentError> {
        match key {
            "ttl" => self.ttl = Some(parse(key, value)?),
            "beacon_interval_ms" => self.beacon_interval_ms = Some(parse(key, value)?),
            "req_retry_timeout_ms" => self.req_retry_timeout_ms = Some(parse(key, value)?),
            "rep_window_ms" => self.rep_window_ms = Some(parse(key, value)?),
            "max_retransmissions" => self.max_retransmissions = Some(parse(key, value)?),
            "flood_suppression" => self.flood_suppression = Some(parse(key, value)?),
            "auth_timeout_ms" => self.auth_timeout_ms = Some(parse(key, value)?),
            "drain_s" => self.drain_s = Some(parse(key, value)?),
            "data_bytes" => self.data_bytes = Some(parse(key, value)?),
            "queue_capacity" => self.queue_capacity = Some(parse(key, value)?),
            "prewarm" => self.prewarm = Some(parse(key, value)?),
            "crypto" => {
                self.crypto = Some(match value.to_ascii_lowercase().as_str() {
                    "modeled" => CryptoModel::Modeled,
                    "exact" => CryptoModel::Exact,
                    _ => return Err(invalid(format!("crypto must be modeled or exact, not {value}"))),
                })
            }
            _ => return Err(invalid(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Fields set in `other` win.
    fn merged(&self, other: &CellParams) -> CellParams {
        CellParams {
            ttl: other.ttl.or(self.ttl),
            beacon_interval_ms: other.beacon_interval_ms.or(self.beacon_interval_ms),
            req_retry_timeout_ms: other.req_retry_timeout_ms.or(self.req_retry_timeout_ms),
            rep_window_ms: other.rep_window_ms.or(self.rep_window_ms),
            max_retransmissions: other.max_retransmissions.or(self.max_retransmissions),
            flood_suppression: other.flood_suppression.or(self.flood_suppression),
            auth_timeout_ms: other.auth_timeout_ms.or(self.auth_timeout_ms),
            drain_s: other.drain_s.or(self.drain_s),
            data_bytes: other.data_bytes.or(self.data_bytes),
            queue_capacity: other.queue_capacity.or(self.queue_capacity),
            prewarm: other.prewarm.or(self.prewarm),
            crypto: other.crypto.or(self.crypto),
        }
    }

    fn apply(&self, cfg: &mut SimConfig) {
        let s = &mut cfg.strategy;
        if let Some(v) = self.ttl {
            s.ttl = v;
        }
        if let Some(v) = self.beacon_interval_ms {
            s.beacon_interval = v * NS_PER_MS;
        }
        if let Some(v) = self.req_retry_timeout_ms {
            s.req_retry_timeout = v * NS_PER_MS;
        }
        if let Some(v) = self.rep_window_ms {
            s.rep_window = v * NS_PER_MS;
        }
        if let Some(v) = self.max_retransmissions {
            s.max_retransmissions = v;
        }
        if let Some(v) = self.flood_suppression {
            s.flood_suppression = v;
        }
        if let Some(v) = self.auth_timeout_ms {
            cfg.auth_timeout = v * NS_PER_MS;
        }
        if let Some(v) = self.drain_s {
            cfg.drain = seconds(v);
        }
        if let Some(v) = self.data_bytes {
            cfg.data_bytes = v;
        }
        if let Some(v) = self.queue_capacity {
            cfg.mac.queue_capacity = v;
        }
        if let Some(v) = self.prewarm {
            cfg.prewarm = v;
        }
        if let Some(v) = self.crypto {
            cfg.crypto = v;
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ExperimentError> {
    value.trim().parse().map_err(|_| invalid(format!("bad value {value:?} for {key}")))
}

/// Which cells an override section applies to; empty fields match all.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Selector {
    pub scheme: Option<AuthMode>,
    pub strategy: Option<Strategy>,
    pub posture: Option<Posture>,
    pub rate_pps: Option<f64>,
}

impl Selector {
    fn parse(spec: &str) -> Result<Self, ExperimentError> {
        let mut sel = Selector::default();
        for part in spec.split_whitespace() {
            let (k, v) =
                part.split_once('=').ok_or_else(|| invalid(format!("override selector {part:?} is not key=value")))?;
            match k {
                "scheme" => sel.scheme = Some(v.parse().map_err(invalid)?),
                "strategy" => sel.strategy = Some(v.parse().map_err(invalid)?),
                "posture" => sel.posture = Some(v.parse().map_err(invalid)?),
                "rate" | "rate_pps" => sel.rate_pps = Some(parse(k, v)?),
                _ => return Err(invalid(format!("unknown selector key {k}"))),
            }
        }
        Ok(sel)
    }

    pub fn matches(&self, cell: &Cell) -> bool {
        self.scheme.is_none_or(|s| s == cell.scheme)
            && self.strategy.is_none_or(|s| s == cell.strategy)
            && self.posture.is_none_or(|p| p == cell.posture)
            && self.rate_pps.is_none_or(|r| r == cell.rate_pps)
    }
}

/// A matrix of simulator cells and how often to repeat each.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub schemes: Vec<AuthMode>,
    pub strategies: Vec<Strategy>,
    pub postures: Vec<Posture>,
    pub rates_pps: Vec<f64>,
    pub repetitions: usize,
    /// Run `i` of every cell uses seed `base_seed + i`.
    pub base_seed: u64,
    pub duration_s: f64,
    pub defaults: CellParams,
    /// Applied in file order after the defaults.
    pub overrides: Vec<(Selector, CellParams)>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            schemes: AuthMode::ALL.to_vec(),
            strategies: Strategy::ALL.to_vec(),
            postures: Posture::ALL.to_vec(),
            rates_pps: vec![1.0, 5.0, 10.0],
            repetitions: 200,
            base_seed: 1,
            duration_s: 60.0,
            defaults: CellParams::default(),
            overrides: Vec::new(),
        }
    }
}

/// Section holding the matrix keys.
pub const DEFAULTS_SECTION: &str = "cell-defaults";

fn parse_list<T>(
    key: &str,
    value: &str,
    all: &[T],
    one: impl Fn(&str) -> Result<T, String>,
) -> Result<Vec<T>, ExperimentError>
where
    T: Clone + PartialEq,
{
    if value.trim().eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v = one(item).map_err(|e| invalid(format!("{key}: {e}")))?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

impl ExperimentPlan {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let ini = Ini::load_from_str(text).map_err(|e| invalid(e.to_string()))?;
        let mut plan = ExperimentPlan::default();
        let mut seen_defaults = false;
        for (section, props) in ini.iter() {
            match section.map(str::trim) {
                None => {
                    if let Some((k, _)) = props.iter().next() {
                        return Err(invalid(format!("key {k} appears before any section")));
                    }
                }
                Some(DEFAULTS_SECTION) => {
                    if seen_defaults {
                        return Err(invalid(format!("more than one [{DEFAULTS_SECTION}] section")));
                    }
                    seen_defaults = true;
                    for (k, v) in props.iter() {
                        plan.set_default(k.trim(), v)?;
                    }
                }
                Some(name) => {
                    let spec =
                        name.strip_prefix("override").ok_or_else(|| invalid(format!("unknown section [{name}]")))?;
                    let sel = Selector::parse(spec)?;
                    let mut params = CellParams::default();
                    for (k, v) in props.iter() {
                        params.set(k.trim(), v)?;
                    }
                    plan.overrides.push((sel, params));
                }
            }
        }
        if !seen_defaults {
            return Err(invalid(format!("missing [{DEFAULTS_SECTION}] section")));
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set_default(&mut self, key: &str, value: &str) -> Result<(), ExperimentError> {
        match key {
            "schemes" => self.schemes = parse_list(key, value, &AuthMode::ALL, str::parse)?,
            "strategies" => self.strategies = parse_list(key, value, &Strategy::ALL, str::parse)?,
            "postures" => self.postures = parse_list(key, value, &Posture::ALL, str::parse)?,
            "rates" | "rates_pps" => {
                self.rates_pps = parse_list(key, value, &[], |s| s.parse::<f64>().map_err(|e| e.to_string()))?
            }
            "repetitions" => self.repetitions = parse(key, value)?,
            "base_seed" => self.base_seed = parse(key, value)?,
            "duration_s" => self.duration_s = parse(key, value)?,
            _ => self.defaults.set(key, value)?,
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.schemes.is_empty()
            || self.strategies.is_empty()
            || self.postures.is_empty()
            || self.rates_pps.is_empty()
        {
            return Err(invalid("schemes, strategies, postures and rates must all be non-empty"));
        }
        if self.repetitions < 2 {
            return Err(invalid("repetitions must be at least 2"));
        }
        if self.rates_pps.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid("rates must be finite and non-negative"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("duration_s must be positive"));
        }
        if self.base_seed.checked_add(self.repetitions as u64).is_none() {
            return Err(invalid("base_seed + repetitions overflows"));
        }
        Ok(())
    }

    /// Every cell in matrix order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &scheme in &self.schemes {
            for &strategy in &self.strategies {
                for &posture in &self.postures {
                    for &rate_pps in &self.rates_pps {
                        out.push(Cell { scheme, strategy, posture, rate_pps });
                    }
                }
            }
        }
        out.sort_by(Cell::key_cmp);
        out
    }

    /// Simulator configuration for run `index` of `cell`.
    pub fn config(&self, cell: &Cell, index: usize) -> SimConfig {
        let mut cfg =
            SimConfig::new(cell.scheme, cell.strategy, cell.rate_pps, self.duration_s, self.base_seed + index as u64);
        let mut params = self.defaults.clone();
        for (sel, p) in &self.overrides {
            if sel.matches(cell) {
                params = params.merged(p);
            }
        }
        params.apply(&mut cfg);
        cfg
    }
}

/// One point of the experiment matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub scheme: AuthMode,
    pub strategy: Strategy,
    pub posture: Posture,
    pub rate_pps: f64,
}

impl Cell {
    pub fn key_cmp(a: &Cell, b: &Cell) -> Ordering {
        (a.scheme, a.strategy, a.posture)
            .cmp(&(b.scheme, b.strategy, b.posture))
            .then(a.rate_pps.total_cmp(&b.rate_pps))
    }
}

/// Where cell traces come from.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceSource {
    /// CSV files in a directory, one per posture.
    Dir(PathBuf),
    /// The built-in generator, identical to the shipped files.
    Synthetic,
}

impl TraceSource {
    pub fn load(&self, posture: Posture) -> Result<LinkTrace, ExperimentError> {
        match self {
            TraceSource::Dir(dir) => Ok(LinkTrace::load(dir, posture)?),
            TraceSource::Synthetic => Ok(LinkTrace::synthetic(posture)),
        }
    }
}

/// One simulator run of a cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub cell: Cell,
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Repetitions of one cell summarised with confidence intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub cell: Cell,
    pub runs: usize,
    pub ratio: Summary<f64>,
    /// Over runs that delivered at least one packet; `None` when fewer
    /// than two did.
    pub delay_ms: Option<Summary<f64>>,
    pub transmissions: Summary<f64>,
    /// Mean over runs of each node's average delay, indexed by node id;
    /// `None` for nodes that never delivered.
    pub delay_by_source_ms: Vec<Option<f64>>,
}

impl AggregateRow {
    pub fn from_runs(cell: Cell, runs: &[RunRecord], alpha: f64) -> Result<Self, StatsError> {
        let ratios: Vec<f64> = runs.iter().map(|r| r.metrics.reception_ratio()).collect();
        let delays: Vec<f64> =
            runs.iter().filter(|r| r.metrics.packets_received_at_sink > 0).map(|r| r.metrics.avg_delay_ms()).collect();
        let tx: Vec<f64> = runs.iter().map(|r| r.metrics.total_transmissions as f64).collect();
        let delay_by_source_ms = (0..NODE_COUNT)
            .map(|n| {
                let v: Vec<f64> =
                    runs.iter().filter_map(|r| r.metrics.per_source.get(n).and_then(|s| s.avg_delay_ms())).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        Ok(AggregateRow {
            cell,
            runs: runs.len(),
            ratio: Summary::with_alpha(&ratios, alpha)?,
            delay_ms: Summary::with_alpha(&delays, alpha).ok(),
            transmissions: Summary::with_alpha(&tx, alpha)?,
            delay_by_source_ms,
        })
    }
}

/// Every run of a plan together with the per-cell summaries, both sorted
/// by cell key.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub runs: Vec<RunRecord>,
    pub rows: Vec<AggregateRow>,
}

/// Runs a plan on `jobs` worker threads (0 picks one per core). The
/// output does not depend on `jobs`.
pub fn run_plan_detailed(
    plan: &ExperimentPlan,
    traces: &TraceSource,
    jobs: usize,
) -> Result<PlanResult, ExperimentError> {
    plan.validate()?;
    let mut loaded = BTreeMap::new();
    for &p in &plan.postures {
        loaded.insert(p, traces.load(p)?);
    }
    let cells = plan.cells();
    let tasks: Vec<(usize, usize)> =
        (0..cells.len()).flat_map(|c| (0..plan.repetitions).map(move |i| (c, i))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, i)| {
                let cell = cells[c];
                let cfg = plan.config(&cell, i);
                let metrics = run_with_trace(&cfg, &loaded[&cell.posture])?;
                Ok(RunRecord { cell, seed: cfg.seed, metrics })
            })
            .collect::<Result<_, SimError>>()
    })?;
    let mut rows = Vec::with_capacity(cells.len());
    for (c, cell) in cells.iter().enumerate() {
        let chunk = &runs[c * plan.repetitions..(c + 1) * plan.repetitions];
        rows.push(AggregateRow::from_runs(*cell, chunk, DEFAULT_ALPHA).map_err(|e| invalid(e.to_string()))?);
    }
    Ok(PlanResult { runs, rows })
}

pub fn run_plan(
    plan: &ExperimentPlan,
    traces: &TraceSource,
    jobs: usize,
) -> Result<Vec<AggregateRow>, ExperimentError> {
    Ok(run_plan_detailed(plan, traces, jobs)?.rows)
}

/// Per-run CSV header.
pub const RUNS_HEADER: [&str; 10] = [
    "scheme",
    "strategy",
    "posture",
    "rate_pps",
    "seed",
    "generated",
    "received",
    "ratio",
    "avg_delay_ms",
    "transmissions",
];

/// Aggregate CSV header: the per-run metric columns as means, each
/// followed by its confidence half-width.
pub const SUMMARY_HEADER: [&str; 11] = [
    "scheme",
    "strategy",
    "posture",
    "rate_pps",
    "runs",
    "ratio",
    "ratio_beta",
    "avg_delay_ms",
    "avg_delay_ms_beta",
    "transmissions",
    "transmissions_beta",
];

fn cell_fields(c: &Cell) -> [String; 4] {
    [c.scheme.to_string(), c.strategy.to_string(), c.posture.to_string(), c.rate_pps.to_string()]
}

pub fn write_runs_csv<W: std::io::Write>(out: W, runs: &[RunRecord]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUNS_HEADER)?;
    for r in runs {
        let m = &r.metrics;
        let mut rec = cell_fields(&r.cell).to_vec();
        rec.extend([
            r.seed.to_string(),
            m.packets_generated.to_string(),
            m.packets_received_at_sink.to_string(),
            m.reception_ratio().to_string(),
            m.avg_delay_ms().to_string(),
            m.total_transmissions.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: std::io::Write>(out: W, rows: &[AggregateRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for row in rows {
        let mut rec = cell_fields(&row.cell).to_vec();
        let (d, db) = match &row.delay_ms {
            Some(s) => (s.mean.to_string(), s.half_width.to_string()),
            None => (String::new(), String::new()),
        };
        rec.extend([
            row.runs.to_string(),
            row.ratio.mean.to_string(),
            row.ratio.half_width.to_string(),
            d,
            db,
            row.transmissions.mean.to_string(),
            row.transmissions.half_width.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean per-source delay, one column per node; empty where a node never
/// delivered (the sink always is).
pub fn write_delay_by_source_csv<W: std::io::Write>(out: W, rows: &[AggregateRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["scheme", "strategy", "posture", "rate_pps"].map(String::from).to_vec();
    header.extend((0..NODE_COUNT).map(|n| format!("node{n}_delay_ms")));
    w.write_record(&header)?;
    for row in rows {
        let mut rec = cell_fields(&row.cell).to_vec();
        rec.extend(row.delay_by_source_ms.iter().map(|d| d.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// File names written by [`write_plan_outputs`].
pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DELAY_BY_SOURCE_FILE: &str = "delay_by_source.csv";

pub fn write_plan_outputs(dir: &Path, result: &PlanResult) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    write_runs_csv(std::fs::File::create(dir.join(RUNS_FILE))?, &result.runs)?;
    write_summary_csv(std::fs::File::create(dir.join(SUMMARY_FILE))?, &result.rows)?;
    write_delay_by_source_csv(std::fs::File::create(dir.join(DELAY_BY_SOURCE_FILE))?, &result.rows)?;
    Ok(())
}

/// One scenario against one scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackRow {
    pub scheme: Scheme,
    pub scenario: Scenario,
    pub verdict: Verdict,
    pub secret_exposed: bool,
}

impl AttackRow {
    /// BAN-GZKP is expected to block every scenario.
    pub fn is_regression(&self) -> bool {
        self.scheme == Scheme::BanGzkp && self.verdict != Verdict::AttackBlocked
    }
}

/// Every scenario against each scheme on the default topology.
pub fn run_attacks(schemes: &[Scheme], seed: u64) -> Result<Vec<AttackRow>, ExperimentError> {
    let mut rows = Vec::new();
    for &scheme in schemes {
        for scenario in Scenario::ALL {
            let r = run_scenario(scenario, scheme, ScenarioTopology::default(), seed)?;
            rows.push(AttackRow { scheme, scenario, verdict: r.verdict, secret_exposed: r.secret_exposed });
        }
    }
    Ok(rows)
}

/// Plain-text attack report, one row per line.
pub fn attack_report(rows: &[AttackRow]) -> String {
    let mut s = String::from("scheme,scenario,verdict,secret_exposed\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.scheme, r.scenario, r.verdict, r.secret_exposed);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "
[cell-defaults]
schemes = BAN_GZKP
strategies = CTP
postures = walk
rates = 1
repetitions = 5
base_seed = 10
duration_s = 5
";

    #[test]
    fn parses_defaults_and_lists() {
        let p = ExperimentPlan::parse(SMALL).unwrap();
        assert_eq!(p.schemes, vec![AuthMode::BanGzkp]);
        assert_eq!(p.strategies, vec![Strategy::Ctp]);
        assert_eq!(p.repetitions, 5);
        let all = ExperimentPlan::parse("[cell-defaults]\nstrategies = all\n").unwrap();
        assert_eq!(all.strategies, Strategy::ALL.to_vec());
        assert_eq!(all.rates_pps, vec![1.0, 5.0, 10.0]);
        assert_eq!(all.repetitions, 200);
    }

    #[test]
    fn rejects_bad_plans() {
        for text in [
            "",
            "[cell-defaults]\nrepetitions = 1\n",
            "[cell-defaults]\nschemes = RSA\n",
            "[cell-defaults]\nwhatever = 3\n",
            "[cell-defaults]\nrates =\n",
            "[cells]\n",
            "[cell-defaults]\n[override colour=red]\n",
            "ttl = 3\n[cell-defaults]\n",
        ] {
            assert!(matches!(ExperimentPlan::parse(text), Err(ExperimentError::InvalidPlan(_))), "{text:?}");
        }
    }

    #[test]
    fn overrides_apply_to_matching_cells_only() {
        let text = format!("{SMALL}ttl = 4\nstrategies = CTP, FloodToSink\n[override strategy=FloodToSink]\nttl = 2\n");
        let p = ExperimentPlan::parse(&text).unwrap();
        let cells = p.cells();
        assert_eq!(cells.len(), 2);
        let ttl = |c: &Cell| p.config(c, 0).strategy.ttl;
        assert_eq!(ttl(&cells[0]), 4);
        assert_eq!(ttl(&cells[1]), 2);
        assert_eq!(p.config(&cells[0], 3).seed, 13);
    }

    #[test]
    fn cells_sort_by_key() {
        let p = ExperimentPlan::parse(
            "[cell-defaults]\nschemes = BAN_GZKP, none\nrates = 10, 1\npostures = walk\nstrategies = CTP\n",
        )
        .unwrap();
        let cells = p.cells();
        assert_eq!(cells[0].scheme, AuthMode::None);
        assert_eq!(cells[0].rate_pps, 1.0);
        assert_eq!(cells[3].scheme, AuthMode::BanGzkp);
        assert_eq!(cells[3].rate_pps, 10.0);
    }

    #[test]
    fn attack_report_has_a_row_per_scheme_and_scenario() {
        let rows = run_attacks(&[Scheme::BanGzkp], 3).unwrap();
        assert_eq!(rows.len(), 7);
        assert!(rows.iter().all(|r| !r.is_regression()));
        assert_eq!(attack_report(&rows).lines().count(), 8);
    }

    #[test]
    fn only_an_unblocked_ban_gzkp_scenario_is_a_regression() {
        let row =
            |scheme, verdict| AttackRow { scheme, scenario: Scenario::DataReplay, verdict, secret_exposed: false };
        assert!(row(Scheme::BanGzkp, Verdict::AttackSucceeded).is_regression());
        assert!(!row(Scheme::BanGzkp, Verdict::AttackBlocked).is_regression());
        assert!(!row(Scheme::Banzkp, Verdict::AttackSucceeded).is_regression());
    }
}
