//! Event simulation of loading, running and unloading the three pipeline
//! components (text encoder, denoiser, image decoder) under a memory budget.
//!
//! Memory for a component is reserved in full at its `load_start` and
//! released at its `unload_end`. When events share a timestamp, releases are
//! applied before reservations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEXT_ENCODER: &str = "text_encoder";
pub const DENOISER: &str = "denoiser";
pub const IMAGE_DECODER: &str = "image_decoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub name: String,
    pub memory_bytes: u64,
    /// Time per invocation.
    pub exec_time: f64,
    pub load_time: f64,
    pub unload_time: f64,
}

impl ComponentSpec {
    pub fn new(name: &str, memory_bytes: u64, exec_time: f64, load_time: f64, unload_time: f64) -> Self {
        ComponentSpec {
            name: name.to_string(),
            memory_bytes,
            exec_time,
            load_time,
            unload_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Everything loaded up front and kept resident.
    NaiveResident,
    /// Denoiser resident; encoder and decoder swapped by a loader stream.
    Pipelined,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::NaiveResident => "naive_resident",
            Strategy::Pipelined => "pipelined",
        }
    }
}

fn default_strategy() -> Strategy {
    Strategy::Pipelined
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub components: Vec<ComponentSpec>,
    pub denoise_steps: u32,
    pub memory_budget_bytes: u64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::schema(e.path().to_string(), e.into_inner().to_string()))?;
        s.check()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The illustrative 400/1700/400 MB configuration with a 2200 MB budget
    /// and 20 denoising steps.
    pub fn illustrative() -> Self {
        const MB: u64 = 1_000_000;
        Scenario {
            components: vec![
                ComponentSpec::new(TEXT_ENCODER, 400 * MB, 5.0, 10.0, 2.0),
                ComponentSpec::new(DENOISER, 1700 * MB, 20.0, 40.0, 5.0),
                ComponentSpec::new(IMAGE_DECODER, 400 * MB, 15.0, 10.0, 2.0),
            ],
            denoise_steps: 20,
            memory_budget_bytes: 2200 * MB,
            strategy: Strategy::Pipelined,
        }
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        Scenario {
            strategy,
            ..self.clone()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.denoise_steps == 0 {
            return Err(Error::Scenario("denoise_steps must be at least 1".into()));
        }
        let mut seen = BTreeMap::new();
        for c in &self.components {
            if seen.insert(c.name.as_str(), ()).is_some() {
                return Err(Error::Scenario(format!("component `{}` listed twice", c.name)));
            }
            if c.memory_bytes == 0 {
                return Err(Error::Scenario(format!("component `{}` has zero memory", c.name)));
            }
            for (what, v) in [("exec_time", c.exec_time), ("load_time", c.load_time), ("unload_time", c.unload_time)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Scenario(format!("component `{}`: {what} {v} is not a non-negative number", c.name)));
                }
            }
        }
        for role in [TEXT_ENCODER, DENOISER, IMAGE_DECODER] {
            if !seen.contains_key(role) {
                return Err(Error::Scenario(format!("missing component `{role}`")));
            }
        }
        Ok(())
    }

    fn component(&self, name: &str) -> &ComponentSpec {
        self.components.iter().find(|c| c.name == name).expect("checked")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    LoadStart,
    LoadEnd,
    UnloadStart,
    UnloadEnd,
    ExecStart,
    ExecEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub action: Action,
    pub component: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timeline {
    pub strategy: Strategy,
    pub events: Vec<Event>,
    pub peak_memory: u64,
    pub makespan: f64,
    pub memory_budget: u64,
    pub feasible: bool,
    /// Budget problems no strategy can fix.
    pub notes: Vec<String>,
}

struct Recorder {
    events: Vec<Event>,
}

impl Recorder {
    fn push(&mut self, time: f64, action: Action, component: &str) {
        self.events.push(Event {
            time,
            action,
            component: component.to_string(),
        });
    }

    /// Records `[start, start + d)` as a pair of events and returns the end.
    fn span(&mut self, start: f64, d: f64, open: Action, close: Action, component: &str) -> f64 {
        self.push(start, open, component);
        self.push(start + d, close, component);
        start + d
    }

    fn load(&mut self, start: f64, c: &ComponentSpec) -> f64 {
        self.span(start, c.load_time, Action::LoadStart, Action::LoadEnd, &c.name)
    }

    fn unload(&mut self, start: f64, c: &ComponentSpec) -> f64 {
        self.span(start, c.unload_time, Action::UnloadStart, Action::UnloadEnd, &c.name)
    }

    fn exec(&mut self, start: f64, c: &ComponentSpec) -> f64 {
        self.span(start, c.exec_time, Action::ExecStart, Action::ExecEnd, &c.name)
    }
}

/// Runs the scenario's strategy.
pub fn simulate(s: &Scenario) -> Result<Timeline> {
    s.check()?;
    let enc = s.component(TEXT_ENCODER);
    let den = s.component(DENOISER);
    let dec = s.component(IMAGE_DECODER);
    let mut rec = Recorder { events: Vec::new() };

    let makespan = match s.strategy {
        Strategy::NaiveResident => {
            let t = rec.load(0.0, enc);
            let t = rec.load(t, den);
            let t = rec.load(t, dec);
            let mut t = rec.exec(t, enc);
            for _ in 0..s.denoise_steps {
                t = rec.exec(t, den);
            }
            rec.exec(t, dec)
        }
        Strategy::Pipelined => {
            let enc_loaded = rec.load(0.0, enc);
            let den_loaded = rec.load(enc_loaded, den);
            let encoded = rec.exec(enc_loaded, enc);
            let unload_at = encoded.max(den_loaded);
            let enc_gone = rec.unload(unload_at, enc);
            let dec_loaded = rec.load(enc_gone, dec);
            let mut t = unload_at;
            for _ in 0..s.denoise_steps {
                t = rec.exec(t, den);
            }
            rec.exec(t.max(dec_loaded), dec)
        }
    };

    let mut events = rec.events;
    // Stable: simultaneous events keep their causal generation order.
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let memory: BTreeMap<&str, u64> = s.components.iter().map(|c| (c.name.as_str(), c.memory_bytes)).collect();
    let peak_memory = occupancy_curve(&events, &memory).iter().map(|p| p.1).max().unwrap_or(0);
    let notes = s
        .components
        .iter()
        .filter(|c| c.memory_bytes > s.memory_budget_bytes)
        .map(|c| {
            format!(
                "component `{}` needs {} bytes, more than the {} byte budget",
                c.name, c.memory_bytes, s.memory_budget_bytes
            )
        })
        .collect();
    Ok(Timeline {
        strategy: s.strategy,
        events,
        peak_memory,
        makespan,
        memory_budget: s.memory_budget_bytes,
        feasible: peak_memory <= s.memory_budget_bytes,
        notes,
    })
}

/// Resident bytes after all events at each distinct event time.
pub fn occupancy_curve(events: &[Event], memory: &BTreeMap<&str, u64>) -> Vec<(f64, u64)> {
    let mut deltas: Vec<(f64, i64)> = events
        .iter()
        .filter_map(|e| {
            let m = *memory.get(e.component.as_str())? as i64;
            match e.action {
                Action::LoadStart => Some((e.time, m)),
                Action::UnloadEnd => Some((e.time, -m)),
                _ => None,
            }
        })
        .collect();
    // Releases first on equal times.
    deltas.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut curve: Vec<(f64, u64)> = Vec::new();
    let mut level: i64 = 0;
    for (t, d) in deltas {
        level += d;
        let bytes = level.max(0) as u64;
        match curve.last_mut() {
            Some(last) if last.0 == t => last.1 = bytes,
            _ => curve.push((t, bytes)),
        }
    }
    curve
}

impl Timeline {
    pub fn occupancy(&self, s: &Scenario) -> Vec<(f64, u64)> {
        let memory: BTreeMap<&str, u64> = s.components.iter().map(|c| (c.name.as_str(), c.memory_bytes)).collect();
        occupancy_curve(&self.events, &memory)
    }

    /// Aligned plain-text chart: `L` loading, `#` executing, `U` unloading,
    /// `=` resident and idle.
    pub fn gantt(&self, width: usize) -> String {
        let width = width.max(10);
        let mut names: Vec<&str> = Vec::new();
        for e in &self.events {
            if !names.contains(&e.component.as_str()) {
                names.push(&e.component);
            }
        }
        let label = names.iter().map(|n| n.len()).max().unwrap_or(0);
        let scale = if self.makespan > 0.0 { width as f64 / self.makespan } else { 0.0 };
        let col = |t: f64| ((t * scale).round() as usize).min(width);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:label$}  0{:>w$}",
            self.strategy.as_str(),
            format!("{}", self.makespan),
            w = width
        );
        for name in names {
            let mut row = vec![' '; width];
            let mut open: BTreeMap<u8, f64> = BTreeMap::new();
            let mut resident_from: Option<f64> = None;
            let paint = |row: &mut Vec<char>, a: f64, b: f64, ch: char, over: bool| {
                let (lo, hi) = (col(a), col(b).max(col(a) + usize::from(b > a)));
                for c in row.iter_mut().take(hi.min(width)).skip(lo) {
                    if over || *c == ' ' || *c == '=' {
                        *c = ch;
                    }
                }
            };
            for e in self.events.iter().filter(|e| e.component == name) {
                match e.action {
                    Action::LoadStart => {
                        open.insert(0, e.time);
                        resident_from = Some(e.time);
                    }
                    Action::ExecStart => {
                        open.insert(1, e.time);
                    }
                    Action::UnloadStart => {
                        open.insert(2, e.time);
                    }
                    Action::LoadEnd => paint(&mut row, open.remove(&0).unwrap_or(e.time), e.time, 'L', true),
                    Action::ExecEnd => paint(&mut row, open.remove(&1).unwrap_or(e.time), e.time, '#', true),
                    Action::UnloadEnd => {
                        paint(&mut row, open.remove(&2).unwrap_or(e.time), e.time, 'U', true);
                        if let Some(r) = resident_from.take() {
                            paint(&mut row, r, e.time, '=', false);
                        }
                    }
                }
            }
            if let Some(r) = resident_from {
                paint(&mut row, r, self.makespan, '=', false);
            }
            let _ = writeln!(out, "{name:label$} |{}|", row.into_iter().collect::<String>());
        }
        let _ = writeln!(
            out,
            "peak {} bytes, budget {} bytes, {}",
            self.peak_memory,
            self.memory_budget,
            if self.feasible { "feasible" } else { "infeasible" }
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyComparison {
    pub naive: Timeline,
    pub pipelined: Timeline,
    /// `naive.peak_memory - pipelined.peak_memory`.
    pub peak_saving: i64,
    /// `pipelined.makespan - naive.makespan`; positive when pipelining is slower.
    pub makespan_delta: f64,
}

pub fn compare_strategies(s: &Scenario) -> Result<StrategyComparison> {
    let naive = simulate(&s.with_strategy(Strategy::NaiveResident))?;
    let pipelined = simulate(&s.with_strategy(Strategy::Pipelined))?;
    Ok(StrategyComparison {
        peak_saving: naive.peak_memory as i64 - pipelined.peak_memory as i64,
        makespan_delta: pipelined.makespan - naive.makespan,
        naive,
        pipelined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MB: u64 = 1_000_000;

    #[test]
    fn illustrative_peaks() {
        let c = compare_strategies(&Scenario::illustrative()).unwrap();
        assert_eq!(c.naive.peak_memory, 2500 * MB);
        assert!(!c.naive.feasible);
        assert_eq!(c.pipelined.peak_memory, 2100 * MB);
        assert!(c.pipelined.feasible);
        assert_eq!(c.peak_saving, 400 * MB as i64);
    }

    #[test]
    fn zero_transfer_times() {
        let mut s = Scenario::illustrative();
        for c in &mut s.components {
            c.load_time = 0.0;
            c.unload_time = 0.0;
        }
        let t = simulate(&s).unwrap();
        assert_eq!(t.makespan, 5.0 + 20.0 * 20.0 + 15.0);
    }

    #[test]
    fn slow_decoder_load_stalls() {
        let mut s = Scenario::illustrative();
        for c in &mut s.components {
            c.load_time = 0.0;
            c.unload_time = 0.0;
        }
        s.components[2].load_time = 450.0;
        let t = simulate(&s).unwrap();
        // denoising ends at 405, the decoder arrives at 455
        assert_eq!(t.makespan, 5.0 + 400.0 + 15.0 + 50.0);
    }

    #[test]
    fn events_are_sorted() {
        let t = simulate(&Scenario::illustrative()).unwrap();
        assert!(t.events.windows(2).all(|w| w[0].time <= w[1].time));
        assert_eq!(t.events.iter().filter(|e| e.action == Action::ExecStart).count(), 22);
    }

    #[test]
    fn oversized_component_is_noted() {
        let mut s = Scenario::illustrative();
        s.memory_budget_bytes = 100;
        let t = simulate(&s).unwrap();
        assert!(!t.feasible);
        assert_eq!(t.notes.len(), 3);
    }

    #[test]
    fn invalid_scenarios() {
        let mut s = Scenario::illustrative();
        s.denoise_steps = 0;
        assert!(simulate(&s).is_err());
        let mut s = Scenario::illustrative();
        s.components.pop();
        assert!(simulate(&s).is_err());
        let mut s = Scenario::illustrative();
        s.components[0].load_time = -1.0;
        assert!(simulate(&s).is_err());
        let mut s = Scenario::illustrative();
        s.components[1].memory_bytes = 0;
        assert!(simulate(&s).is_err());
    }

    #[test]
    fn gantt_has_a_row_per_component() {
        let t = simulate(&Scenario::illustrative()).unwrap();
        let g = t.gantt(40);
        assert_eq!(g.lines().count(), 5);
        assert!(g.contains("denoiser"));
        assert!(g.contains('#'));
    }

    #[test]
    fn scenario_json() {
        let text = r#"{"components":[
            {"name":"text_encoder","memory_bytes":1,"exec_time":1,"load_time":1,"unload_time":1},
            {"name":"denoiser","memory_bytes":2,"exec_time":1,"load_time":1,"unload_time":1},
            {"name":"image_decoder","memory_bytes":1,"exec_time":1,"load_time":1,"unload_time":1}],
            "denoise_steps":3,"memory_budget_bytes":3,"strategy":"naive_resident"}"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.strategy, Strategy::NaiveResident);
        let e = Scenario::from_json(&text.replace("\"denoise_steps\":3", "\"denoise_steps\":\"x\"")).unwrap_err();
        assert!(e.to_string().contains("denoise_steps"));
    }
}
