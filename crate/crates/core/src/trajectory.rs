//! Line-oriented trajectory dumps.
//!
//! One record per agent per step, tab-separated:
//!
//! ```text
//! episode  step  agent  action  reward  observation  message
//! ```
//!
//! `observation` and `message` are comma-separated reals (`-` for an empty
//! message). Reals are written with Rust's shortest round-trip formatting, so
//! parsing a dump reproduces the recorded values exactly. Lines starting with
//! `#` are comments.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub agent: usize,
    pub action: usize,
    pub reward: f64,
    pub observation: Vec<f64>,
    pub message: Vec<f64>,
}

pub const HEADER: &str = "# episode\tstep\tagent\taction\treward\tobservation\tmessage";

fn join(values: &[f64]) -> String {
    if values.is_empty() {
        return "-".into();
    }
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.episode,
            self.step,
            self.agent,
            self.action,
            self.reward,
            join(&self.observation),
            join(&self.message)
        )
    }

    pub fn parse_line(text: &str, line: usize) -> Result<Self, TrajectoryError> {
        let err = |reason: String| TrajectoryError::Parse { line, reason };
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", fields.len())));
        }
        let int = |i: usize, name: &str| {
            fields[i]
                .parse::<usize>()
                .map_err(|e| err(format!("{name}: {e}")))
        };
        let reals = |i: usize, name: &str| -> Result<Vec<f64>, TrajectoryError> {
            if fields[i] == "-" {
                return Ok(Vec::new());
            }
            fields[i]
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|e| err(format!("{name}: {e}"))))
                .collect()
        };
        Ok(Self {
            episode: int(0, "episode")?,
            step: int(1, "step")?,
            agent: int(2, "agent")?,
            action: int(3, "action")?,
            reward: fields[4].parse().map_err(|e| err(format!("reward: {e}")))?,
            observation: reals(5, "observation")?,
            message: reals(6, "message")?,
        })
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[StepRecord]) -> io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.to_line())?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<StepRecord>, TrajectoryError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(StepRecord::parse_line(trimmed, i + 1)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_exact(
            episode in 0usize..1000, step in 0usize..100, agent in 0usize..30, action in 0usize..5,
            reward in -1e6f64..1e6,
            observation in prop::collection::vec(-1e3f64..1e3, 1..20),
            message in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..8),
        ) {
            let rec = StepRecord { episode, step, agent, action, reward, observation, message };
            let mut buf = Vec::new();
            write_records(&mut buf, std::slice::from_ref(&rec)).unwrap();
            let back = read_records(&buf[..]).unwrap();
            prop_assert_eq!(back, vec![rec]);
        }
    }

    #[test]
    fn bad_line_reports_line_number() {
        let text = format!("{HEADER}\n0\t0\t0\t1\t0.5\t1,0\t-\n0\t1\tx\t1\t0\t1\t-\n");
        match read_records(text.as_bytes()) {
            Err(TrajectoryError::Parse { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.starts_with("agent"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
