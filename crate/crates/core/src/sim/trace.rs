use super::*;
use std::io::{BufRead, Write};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub map: String,
    pub agent: String,
    pub agent_version: String,
    pub run_seed: u64,
    pub dt: f64,
    pub entities: Vec<EntityInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    pub time: f64,
    pub ego: EgoState,
    pub objects: Vec<ObjectState>,
    pub lights: Vec<LightState>,
}

impl Frame {
    pub fn from_world(w: &WorldState) -> Frame {
        Frame {
            tick: w.tick,
            time: w.time,
            ego: w.ego,
            objects: w.objects.clone(),
            lights: w.lights.clone(),
        }
    }

    pub fn light(&self, id: SignalId) -> Option<LightPhase> {
        self.lights.iter().find(|l| l.id == id).map(|l| l.phase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Collision { tick: u64, entity: u32 },
    LightCrossing { tick: u64, light: SignalId, phase: LightPhase },
    LaneCrossing { tick: u64, segment: usize },
    SpeedExceeded { tick: u64, speed: f64, limit: f64 },
}

impl Event {
    pub fn tick(&self) -> u64 {
        match *self {
            Event::Collision { tick, .. }
            | Event::LightCrossing { tick, .. }
            | Event::LaneCrossing { tick, .. }
            | Event::SpeedExceeded { tick, .. } => tick,
        }
    }
}

/// Sidecar of a trace: events, misbehaviors and the final outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub frames: Vec<Frame>,
}

impl Trace {
    /// One JSON object per line: the header first, then every frame.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for f in &self.frames {
            serde_json::to_writer(&mut out, f)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("write to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Trace, SimError> {
        let mut lines = input.lines();
        let bad = |e: &dyn std::fmt::Display| SimError::Io(e.to_string());
        let header_line = lines.next().ok_or(SimError::EmptyTrace)?.map_err(|e| bad(&e))?;
        let header: TraceHeader = serde_json::from_str(&header_line).map_err(|e| bad(&e))?;
        let mut frames = Vec::new();
        for line in lines {
            let line = line.map_err(|e| bad(&e))?;
            if line.trim().is_empty() {
                continue;
            }
            let frame: Frame = serde_json::from_str(&line).map_err(|e| bad(&e))?;
            if frames.last().is_some_and(|p: &Frame| p.tick >= frame.tick) {
                return Err(SimError::Io(format!("tick {} out of order", frame.tick)));
            }
            frames.push(frame);
        }
        Ok(Trace { header, frames })
    }
}
