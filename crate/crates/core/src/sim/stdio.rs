//! Line-delimited JSON protocol for out-of-process agents.
//!
//! The harness writes one [`Request`] per line and reads one [`Reply`] per line:
//! `reset` is answered with `ready`, each `observation` with a `control`.

use super::*;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Reset { episode: EpisodeInfo },
    Observation { observation: Box<Observation> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Ready,
    Control { throttle: f64, brake: f64, steer: f64 },
    Error { message: String },
}

/// Agent speaking the protocol over any reader/writer pair.
pub struct StdioAgent<R, W> {
    name: String,
    version: String,
    perception: Perception,
    input: R,
    output: W,
    line: String,
}

impl<R: BufRead, W: Write> StdioAgent<R, W> {
    pub fn new(name: &str, version: &str, perception: Perception, input: R, output: W) -> Self {
        StdioAgent {
            name: name.to_string(),
            version: version.to_string(),
            perception,
            input,
            output,
            line: String::new(),
        }
    }

    fn exchange(&mut self, req: &Request) -> Result<Reply, AgentFault> {
        let fault = |e: &dyn std::fmt::Display| AgentFault(e.to_string());
        serde_json::to_writer(&mut self.output, req).map_err(|e| fault(&e))?;
        self.output.write_all(b"\n").map_err(|e| fault(&e))?;
        self.output.flush().map_err(|e| fault(&e))?;
        self.line.clear();
        let n = self.input.read_line(&mut self.line).map_err(|e| fault(&e))?;
        if n == 0 {
            return Err(AgentFault("agent closed its output".into()));
        }
        match serde_json::from_str(self.line.trim()).map_err(|e| fault(&e))? {
            Reply::Error { message } => Err(AgentFault(message)),
            r => Ok(r),
        }
    }
}

impl<R: BufRead, W: Write> Agent for StdioAgent<R, W> {
    fn name(&self) -> &str {
        &self.name
    }

    fn version(&self) -> String {
        self.version.clone()
    }

    fn perception(&self) -> Perception {
        self.perception
    }

    fn reset(&mut self, info: &EpisodeInfo) -> Result<(), AgentFault> {
        match self.exchange(&Request::Reset { episode: info.clone() })? {
            Reply::Ready => Ok(()),
            other => Err(AgentFault(format!("expected ready, got {other:?}"))),
        }
    }

    fn control(&mut self, obs: &Observation) -> Result<Control, AgentFault> {
        let req = Request::Observation {
            observation: Box::new(obs.clone()),
        };
        match self.exchange(&req)? {
            Reply::Control { throttle, brake, steer } => Ok(Control { throttle, brake, steer }),
            other => Err(AgentFault(format!("expected control, got {other:?}"))),
        }
    }
}

/// Serve an in-process agent over the protocol until `input` closes.
pub fn serve<R: BufRead, W: Write>(agent: &mut dyn Agent, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Reset { episode }) => match agent.reset(&episode) {
                Ok(()) => Reply::Ready,
                Err(e) => Reply::Error { message: e.0 },
            },
            Ok(Request::Observation { observation }) => match agent.control(&observation) {
                Ok(c) => Reply::Control {
                    throttle: c.throttle,
                    brake: c.brake,
                    steer: c.steer,
                },
                Err(e) => Reply::Error { message: e.0 },
            },
            Err(e) => Reply::Error { message: e.to_string() },
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// Agent running as a child process.
pub struct ProcessAgent {
    child: Child,
    inner: StdioAgent<BufReader<ChildStdout>, ChildStdin>,
}

impl ProcessAgent {
    pub fn spawn(mut command: Command, name: &str, version: &str, perception: Perception) -> Result<Self, AgentFault> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| AgentFault(format!("spawn agent: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(ProcessAgent {
            child,
            inner: StdioAgent::new(name, version, perception, BufReader::new(stdout), stdin),
        })
    }
}

impl Agent for ProcessAgent {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn version(&self) -> String {
        self.inner.version()
    }

    fn perception(&self) -> Perception {
        self.inner.perception()
    }

    fn reset(&mut self, info: &EpisodeInfo) -> Result<(), AgentFault> {
        self.inner.reset(info)
    }

    fn control(&mut self, obs: &Observation) -> Result<Control, AgentFault> {
        self.inner.control(obs)
    }
}

impl Drop for ProcessAgent {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
