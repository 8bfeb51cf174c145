#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use harness_core::agent::AgentAdapter;
use harness_core::engine::{Benchmark, TaskContext};
use harness_core::environment::{Environment, ParamType, Tool, ToolDescriptor, ToolFailure};
use harness_core::eval::stats::{read_score_csv, DomainGrids};
use harness_core::eval::{Evaluator, ExactMatchEvaluator, PgsrEvaluator};
use harness_core::registry::ComponentRegistry;
use harness_core::{Document, ExecError, HarnessError, Report, Task};

pub fn fixture_agent() -> &'static str {
    env!("CARGO_BIN_EXE_wire-fixture-agent")
}

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn golden_transcripts() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(manifest_dir().join("tests/golden"))
        .expect("golden directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
}

const LINE_WAIT: Duration = Duration::from_secs(10);

/// Replays a golden transcript against a fresh fixture process.
///
/// `# mode: M` selects the fixture mode, `> line` is written verbatim,
/// `< json` must equal the next output line as JSON, `! exit N` waits for
/// the process to exit with code N.
pub fn run_transcript(path: &Path) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mode = text
        .lines()
        .find_map(|l| l.strip_prefix("# mode:"))
        .map(str::trim)
        .ok_or("transcript has no mode line")?;
    let mut child = Command::new(fixture_agent())
        .arg(mode)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut stdin = child.stdin.take();
    let stdout = child.stdout.take().expect("piped");
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines().map_while(Result::ok) {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let result = (|| {
        for (no, line) in text.lines().enumerate() {
            let no = no + 1;
            if let Some(out) = line.strip_prefix("> ") {
                let pipe = stdin.as_mut().ok_or("stdin closed")?;
                writeln!(pipe, "{out}")
                    .and_then(|_| pipe.flush())
                    .map_err(|e| format!("line {no}: write failed: {e}"))?;
            } else if let Some(expected) = line.strip_prefix("< ") {
                let got = rx
                    .recv_timeout(LINE_WAIT)
                    .map_err(|_| format!("line {no}: no output, expected {expected}"))?;
                let want: serde_json::Value = serde_json::from_str(expected)
                    .map_err(|e| format!("line {no}: bad expectation: {e}"))?;
                let have: serde_json::Value = serde_json::from_str(&got)
                    .map_err(|e| format!("line {no}: agent wrote non-JSON {got:?}: {e}"))?;
                if want != have {
                    return Err(format!("line {no}: expected {want}, got {have}"));
                }
            } else if let Some(code) = line.strip_prefix("! exit ") {
                let code: i32 = code.trim().parse().map_err(|_| format!("line {no}: bad exit code"))?;
                let deadline = Instant::now() + LINE_WAIT;
                loop {
                    if let Some(status) = child.try_wait().map_err(|e| e.to_string())? {
                        if status.code() != Some(code) {
                            return Err(format!("line {no}: expected exit {code}, got {status}"));
                        }
                        break;
                    }
                    if Instant::now() > deadline {
                        return Err(format!("line {no}: process did not exit"));
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
            }
        }
        Ok(())
    })();
    drop(stdin.take());
    let _ = child.kill();
    let _ = child.wait();
    result
}

pub fn table3_grids() -> DomainGrids<f64> {
    let file = std::fs::File::open(manifest_dir().join("tests/data/table3.csv")).expect("table3.csv");
    read_score_csv(file).expect("table3.csv parses")
}

/// Report as JSON with the timing fields removed.
pub fn comparable(report: &Report) -> serde_json::Value {
    let mut value = serde_json::to_value(report).expect("report serializes");
    let obj = value.as_object_mut().expect("object");
    obj.remove("wall_time_seconds");
    obj["run_metadata"]
        .as_object_mut()
        .expect("metadata object")
        .remove("started_at");
    value
}

/// Brute-force 2PL maximum likelihood over `[-4, 4]`: a coarse grid, then
/// a fine grid around the coarse optimum. `(a, b, correct)` triples.
pub fn oracle_theta(responses: &[(f64, f64, bool)]) -> f64 {
    let loglik = |theta: f64| -> f64 {
        responses
            .iter()
            .map(|&(a, b, correct)| {
                let z = a * (theta - b);
                // ln σ(z) and ln(1 − σ(z)) without overflow
                let log_p = -(1.0 + (-z).exp()).ln();
                let log_q = -(1.0 + z.exp()).ln();
                let log_p = if log_p.is_finite() { log_p } else { z };
                let log_q = if log_q.is_finite() { log_q } else { -z };
                if correct {
                    log_p
                } else {
                    log_q
                }
            })
            .sum()
    };
    let argmax = |lo: f64, hi: f64, step: f64| -> f64 {
        let n = ((hi - lo) / step).round() as i64;
        (0..=n)
            .map(|i| lo + i as f64 * step)
            .map(|t| (t, loglik(t)))
            .fold((lo, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    };
    let coarse = argmax(-4.0, 4.0, 0.01);
    argmax((coarse - 0.02).max(-4.0), (coarse + 0.02).min(4.0), 1e-5)
}

/// Always fails with an infrastructure fault.
pub struct FaultyDisk;

impl Tool for FaultyDisk {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor::new("read_disk", "Read a block from the shared disk.")
            .param("block", ParamType::Integer, true)
    }

    fn call(&mut self, _ctx: &TaskContext, _args: &Document) -> Result<String, ToolFailure> {
        Err(ExecError::from(HarnessError::environment("disk unavailable")).into())
    }
}

/// Sends SIGKILL to the process named in `pid`.
pub struct KillTool;

impl Tool for KillTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor::new("kill", "Terminate a process.").param("pid", ParamType::Integer, true)
    }

    fn call(&mut self, _ctx: &TaskContext, args: &Document) -> Result<String, ToolFailure> {
        let pid = args["pid"].as_i64().unwrap_or_default().to_string();
        let status = Command::new("kill").args(["-9", &pid]).status();
        match status {
            Ok(s) if s.success() => Ok("killed".into()),
            other => Err(ToolFailure::Error(format!("kill failed: {other:?}"))),
        }
    }
}

pub type AgentMaker = dyn Fn(&Task) -> Vec<Box<dyn AgentAdapter>> + Send + Sync;

/// Key-value environment plus `read_disk` and `kill`, with agents from a
/// closure. Keeps every execution's registry for inspection.
pub struct TestBench {
    make_agents: Box<AgentMaker>,
    pub registries: Mutex<Vec<Arc<ComponentRegistry>>>,
}

impl TestBench {
    pub fn new(make_agents: impl Fn(&Task) -> Vec<Box<dyn AgentAdapter>> + Send + Sync + 'static) -> Self {
        Self {
            make_agents: Box::new(make_agents),
            registries: Mutex::new(Vec::new()),
        }
    }
}

impl Benchmark for TestBench {
    fn setup_environment(&self, ctx: &TaskContext, task: &Task) -> Result<Environment, ExecError> {
        self.registries.lock().unwrap().push(ctx.registry().clone());
        let mut env = Environment::key_value(ctx, task)?;
        env.add_tool(Box::new(FaultyDisk))?;
        env.add_tool(Box::new(KillTool))?;
        Ok(env)
    }

    fn setup_agents(
        &self,
        _ctx: &TaskContext,
        task: &Task,
        _env: &Environment,
        _user: Option<&harness_core::user::SharedUser>,
    ) -> Result<Vec<Box<dyn AgentAdapter>>, ExecError> {
        Ok((self.make_agents)(task))
    }

    fn setup_evaluators(&self, _task: &Task) -> Vec<Box<dyn Evaluator>> {
        vec![Box::new(PgsrEvaluator), Box::new(ExactMatchEvaluator::default())]
    }
}
