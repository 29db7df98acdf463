//! Trace CSV: a fixed header, one row per sampled step, reals printed with
//! 17 significant digits so that reading a file back is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::{RunTrace, TraceRow};

pub const TRACE_HEADER: &str =
    "step,t,lr,target_keep,actual_keep,explicit_cum,shed_cum,loss,train_acc,eval_acc";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trace_to_string(trace: &RunTrace) -> String {
    let mut out = String::with_capacity(64 * (trace.rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.rows {
        let eval = r.eval_acc.map(real).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            real(r.t),
            real(r.lr),
            real(r.target_keep),
            real(r.actual_keep),
            r.explicit_cum,
            r.shed_cum,
            real(r.loss),
            real(r.train_acc),
            eval
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn trace_from_str(text: &str) -> Result<RunTrace> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        Some(h) => {
            return Err(Error::Format(format!(
                "line 1: unexpected header `{h}`, expected `{TRACE_HEADER}`"
            )))
        }
        None => return Err(Error::Format("line 1: missing header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("line {line_no}: {what}"));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(bad(&format!("expected 10 fields, found {}", fields.len())));
        }
        let float = |k: usize| {
            fields[k]
                .parse::<f64>()
                .map_err(|_| bad(&format!("field {} is not a number: `{}`", k + 1, fields[k])))
        };
        let int = |k: usize| {
            fields[k].parse::<u64>().map_err(|_| {
                bad(&format!(
                    "field {} is not an integer: `{}`",
                    k + 1,
                    fields[k]
                ))
            })
        };
        rows.push(TraceRow {
            step: int(0)?,
            t: float(1)?,
            lr: float(2)?,
            target_keep: float(3)?,
            actual_keep: float(4)?,
            explicit_cum: int(5)?,
            shed_cum: int(6)?,
            loss: float(7)?,
            train_acc: float(8)?,
            eval_acc: if fields[9].is_empty() {
                None
            } else {
                Some(float(9)?)
            },
        });
    }
    Ok(RunTrace { rows })
}

pub fn write_trace(path: &Path, trace: &RunTrace) -> Result<()> {
    fs::write(path, trace_to_string(trace)).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<RunTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trace_from_str(&text)
}
