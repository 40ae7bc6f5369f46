//! Line-delimited JSON protocol spoken with external evaluator workers.
//!
//! ```text
//! engine → worker  {"type":"hello","protocol":1,"space":"xception"}
//! worker → engine  {"type":"ready","capacity":N,"evaluator_id":"..."}
//! engine → worker  {"type":"eval","id":7,"genome":"xception:01…","subset_fraction":0.2,"objectives":["error"]}
//! worker → engine  {"type":"result","id":7,"miou_error_pct":23.14,"wall_time_ms":12}
//! worker → engine  {"type":"error","id":7,"message":"..."}
//! ```

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalObjective, EvalRequest, Evaluator};
use crate::genome::{Genome, SpaceId};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Frame {
    Hello {
        protocol: u32,
        space: SpaceId,
    },
    Ready {
        capacity: usize,
        evaluator_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        protocol: Option<u32>,
    },
    Eval {
        id: u64,
        genome: String,
        subset_fraction: f64,
        objectives: Vec<EvalObjective>,
    },
    Result {
        id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        miou_error_pct: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latency_cycles: Option<u64>,
        wall_time_ms: u64,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

impl Frame {
    pub fn eval(id: u64, req: &EvalRequest) -> Frame {
        Frame::Eval {
            id,
            genome: req.genome.to_string(),
            subset_fraction: req.subset_fraction,
            objectives: req.objectives.clone(),
        }
    }

    /// Request id carried by a response frame.
    pub fn response_id(&self) -> Option<u64> {
        match self {
            Frame::Result { id, .. } => Some(*id),
            Frame::Error { id, .. } => *id,
            _ => None,
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames always serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Frame, EvalError> {
        serde_json::from_str(line.trim()).map_err(|e| EvalError::Protocol(format!("{e}: {line:?}")))
    }
}

/// Options of the in-repo loopback worker.
#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub capacity: usize,
    /// Protocol version this worker accepts.
    pub protocol: u32,
    /// Exit without answering once this many evaluations have been served.
    pub fail_after: Option<usize>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            capacity: 1,
            protocol: PROTOCOL_VERSION,
            fail_after: None,
        }
    }
}

/// Serves the worker side of the protocol over `input`/`output` until EOF.
pub fn serve<E, R, W>(evaluator: &E, input: R, mut output: W, opts: &ServeOptions) -> io::Result<()>
where
    E: Evaluator + ?Sized,
    R: BufRead,
    W: Write,
{
    let send = |frame: Frame, out: &mut W| -> io::Result<()> {
        out.write_all(frame.to_line().as_bytes())?;
        out.flush()
    };
    let mut lines = input.lines();
    let space = loop {
        let Some(line) = lines.next() else {
            return Ok(());
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match Frame::parse(&line) {
            Ok(Frame::Hello { protocol, space }) if protocol == opts.protocol => break space,
            Ok(Frame::Hello { protocol, .. }) => {
                let message = format!(
                    "protocol version {protocol} not supported (worker speaks {})",
                    opts.protocol
                );
                return send(Frame::Error { id: None, message }, &mut output);
            }
            Ok(_) | Err(_) => {
                let message = "expected a hello frame".to_string();
                return send(Frame::Error { id: None, message }, &mut output);
            }
        }
    };
    send(
        Frame::Ready {
            capacity: opts.capacity,
            evaluator_id: evaluator.id().to_string(),
            protocol: Some(opts.protocol),
        },
        &mut output,
    )?;

    let mut served = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = match Frame::parse(&line) {
            Ok(f) => f,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
                send(Frame::Error { id, message: e.to_string() }, &mut output)?;
                continue;
            }
        };
        let Frame::Eval {
            id,
            genome,
            subset_fraction,
            objectives,
        } = frame
        else {
            let message = "expected an eval frame".to_string();
            send(Frame::Error { id: frame.response_id(), message }, &mut output)?;
            continue;
        };
        if opts.fail_after.is_some_and(|n| served >= n) {
            return Ok(());
        }
        served += 1;
        let reply = match genome.parse::<Genome>() {
            Err(e) => Frame::Error { id: Some(id), message: e.to_string() },
            Ok(g) if g.space() != space => Frame::Error {
                id: Some(id),
                message: format!("genome {g} is not in the {space} space"),
            },
            Ok(g) => {
                let req = EvalRequest {
                    genome: g,
                    subset_fraction,
                    objectives,
                };
                match evaluator.evaluate(&req) {
                    Ok(r) => Frame::Result {
                        id,
                        miou_error_pct: r.miou_error_pct,
                        latency_cycles: r.latency_cycles,
                        wall_time_ms: r.wall_time_ms,
                    },
                    Err(e) => Frame::Error { id: Some(id), message: e.to_string() },
                }
            }
        };
        send(reply, &mut output)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostModel;
    use crate::eval::{SurrogateConstants, SyntheticEvaluator};

    fn synthetic() -> SyntheticEvaluator {
        SyntheticEvaluator::new(SurrogateConstants::default(), CostModel::for_space(SpaceId::Xception))
    }

    fn run(input: &str, opts: &ServeOptions) -> Vec<Frame> {
        let mut out = Vec::new();
        serve(&synthetic(), input.as_bytes(), &mut out, opts).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| Frame::parse(l).unwrap())
            .collect()
    }

    #[test]
    fn frames_match_the_documented_shapes() {
        let hello = Frame::Hello {
            protocol: 1,
            space: SpaceId::Xception,
        };
        assert_eq!(
            hello.to_line(),
            "{\"type\":\"hello\",\"protocol\":1,\"space\":\"xception\"}\n"
        );
        let req = EvalRequest::new(SpaceId::Xception.supernet(), vec![EvalObjective::Error]);
        assert_eq!(
            Frame::eval(3, &req).to_line(),
            "{\"type\":\"eval\",\"id\":3,\"genome\":\"xception:0100001111111111111111\",\
             \"subset_fraction\":0.2,\"objectives\":[\"error\"]}\n"
        );
        let r = Frame::parse(r#"{"type":"result","id":3,"miou_error_pct":23.14,"wall_time_ms":5}"#).unwrap();
        assert_eq!(r.response_id(), Some(3));
        assert!(Frame::parse("{\"type\":\"bogus\"}").is_err());
    }

    #[test]
    fn handshake_then_results() {
        let input = "{\"type\":\"hello\",\"protocol\":1,\"space\":\"xception\"}\n\
            {\"type\":\"eval\",\"id\":9,\"genome\":\"xception:0100001111111111111111\",\"subset_fraction\":0.2,\"objectives\":[\"error\"]}\n";
        let frames = run(input, &ServeOptions::default());
        assert!(matches!(&frames[0], Frame::Ready { capacity: 1, .. }));
        assert!(matches!(
            frames[1],
            Frame::Result { id: 9, miou_error_pct: Some(e), .. } if e == 23.14
        ));
    }

    #[test]
    fn version_mismatch_is_refused() {
        let frames = run(
            "{\"type\":\"hello\",\"protocol\":2,\"space\":\"xception\"}\n",
            &ServeOptions::default(),
        );
        assert_eq!(frames.len(), 1);
        assert!(matches!(frames[0], Frame::Error { id: None, .. }));
    }

    #[test]
    fn malformed_and_foreign_frames_get_error_replies() {
        let input = "{\"type\":\"hello\",\"protocol\":1,\"space\":\"xception\"}\n\
            {\"type\":\"eval\",\"id\":4,\"genome\":12}\n\
            {\"type\":\"eval\",\"id\":5,\"genome\":\"mobilenetv2:00001111111111111111111\",\"subset_fraction\":0.2,\"objectives\":[\"error\"]}\n";
        let frames = run(input, &ServeOptions::default());
        assert!(matches!(frames[1], Frame::Error { id: Some(4), .. }));
        assert!(matches!(frames[2], Frame::Error { id: Some(5), .. }));
    }

    #[test]
    fn fail_after_stops_answering() {
        let eval = "{\"type\":\"eval\",\"id\":1,\"genome\":\"xception:0100001111111111111111\",\"subset_fraction\":0.2,\"objectives\":[\"error\"]}\n";
        let input = format!("{{\"type\":\"hello\",\"protocol\":1,\"space\":\"xception\"}}\n{eval}{eval}{eval}");
        let opts = ServeOptions {
            fail_after: Some(2),
            ..ServeOptions::default()
        };
        assert_eq!(run(&input, &opts).len(), 3);
    }
}
