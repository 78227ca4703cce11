//! Bridge to an out-of-process encoder, e.g. a pretrained transformer served
//! by a Python script.
//!
//! Protocol: the program receives one JSON string per line on stdin (one per
//! text, in order) and must print one JSON array of `dim` numbers per line on
//! stdout, in the same order, then exit 0. The program owns pooling.
//!
//! Spec params: `program` (required), `args` (JSON array of strings,
//! optional), `dim` (required).

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use super::backbone::{Backbone, BackboneSpec};
use super::ScorerError;

pub const COMMAND_BACKBONE_NAME: &str = "command";

#[derive(Debug, Clone)]
pub struct CommandBackbone {
    program: String,
    args: Vec<String>,
    dim: usize,
}

impl CommandBackbone {
    pub fn new(program: impl Into<String>, args: Vec<String>, dim: usize) -> Self {
        Self {
            program: program.into(),
            args,
            dim,
        }
    }

    pub fn from_spec(spec: &BackboneSpec) -> Result<Self, ScorerError> {
        let bad = |msg: String| ScorerError::Backbone(msg);
        let program = spec
            .params
            .get("program")
            .ok_or_else(|| bad("command backbone needs a `program` param".into()))?;
        let dim = spec
            .params
            .get("dim")
            .ok_or_else(|| bad("command backbone needs a `dim` param".into()))?
            .parse::<usize>()
            .map_err(|e| bad(format!("bad dim: {e}")))?;
        let args = match spec.params.get("args") {
            None => Vec::new(),
            Some(a) => serde_json::from_str(a).map_err(|e| bad(format!("bad args: {e}")))?,
        };
        Ok(Self::new(program.clone(), args, dim))
    }
}

impl Backbone for CommandBackbone {
    fn name(&self) -> &str {
        COMMAND_BACKBONE_NAME
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ScorerError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let fail = |msg: String| ScorerError::Backbone(format!("{}: {msg}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| fail(format!("spawn failed: {e}")))?;
        let mut input = String::new();
        for t in texts {
            input.push_str(&serde_json::to_string(t).expect("string serializes"));
            input.push('\n');
        }
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let stdout = child.stdout.take().expect("piped stdout");
        let mut out = Vec::with_capacity(texts.len());
        for line in BufReader::new(stdout).lines() {
            let line = line.map_err(|e| fail(format!("read failed: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f32> =
                serde_json::from_str(&line).map_err(|e| fail(format!("bad vector line: {e}")))?;
            if v.len() != self.dim {
                return Err(fail(format!("expected {} values, got {}", self.dim, v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(fail("non-finite value in vector".into()));
            }
            out.push(v);
        }
        writer
            .join()
            .map_err(|_| fail("stdin writer panicked".into()))?
            .map_err(|e| fail(format!("write failed: {e}")))?;
        let status = child.wait().map_err(|e| fail(format!("wait failed: {e}")))?;
        if !status.success() {
            return Err(fail(format!("exited with {status}")));
        }
        if out.len() != texts.len() {
            return Err(fail(format!("expected {} vectors, got {}", texts.len(), out.len())));
        }
        Ok(out)
    }

    fn spec(&self) -> BackboneSpec {
        let mut spec = BackboneSpec {
            name: COMMAND_BACKBONE_NAME.into(),
            params: Default::default(),
        };
        spec.params.insert("program".into(), self.program.clone());
        spec.params.insert("dim".into(), self.dim.to_string());
        if !self.args.is_empty() {
            spec.params.insert(
                "args".into(),
                serde_json::to_string(&self.args).expect("strings serialize"),
            );
        }
        spec
    }
}
