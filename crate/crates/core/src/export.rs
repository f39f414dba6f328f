//! CSV layouts for traces, return curves and comparison summaries.
//!
//! Every float is written with 17 significant digits so files round-trip
//! bit-exactly.
//!
//! | file | columns |
//! |------|---------|
//! | episode trace | `step, x1..xn, xhat1..xhatn, cov_trace, u, y, reward` |
//! | return curve | `episode, return, normalized_return` |
//! | return bands | `episode, mean, lower, upper` |
//! | episode summary | `episode, peak_cov_trace, diverged, first_crossing, discounted_return, failed` |
//!
//! With several inputs or outputs the `u` and `y` columns become `u1..um`
//! and `y1..yp`.

use std::io::{Read, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::filter::InformationState;
use crate::harness::{EpisodeSummary, EpisodeTrace, ReturnBands, TraceStep};

/// 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn names(prefix: &str, n: usize, bare_if_single: bool) -> Vec<String> {
    if n == 1 && bare_if_single {
        vec![prefix.to_string()]
    } else {
        (1..=n).map(|i| format!("{prefix}{i}")).collect()
    }
}

fn trace_header(n: usize, m: usize, p: usize) -> Vec<String> {
    let mut h = vec!["step".to_string()];
    h.extend(names("x", n, false));
    h.extend(names("xhat", n, false));
    h.push("cov_trace".into());
    h.extend(names("u", m, true));
    h.extend(names("y", p, true));
    h.push("reward".into());
    h
}

pub fn write_trace<W: Write>(out: W, trace: &EpisodeTrace) -> Result<()> {
    let (n, m, p) = match trace.steps.first() {
        Some(s) => (s.true_state.len(), s.control.len(), s.output.len()),
        None => (trace.initial.dim(), 1, 1),
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(n, m, p))?;
    for (k, s) in trace.steps.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(s.true_state.iter().map(|v| fmt_f64(*v)));
        row.extend(s.estimate.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(s.cov_trace));
        row.extend(s.control.iter().map(|v| fmt_f64(*v)));
        row.extend(s.output.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(s.reward));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace`]. The initial estimate is taken
/// from the first row and paired with `initial_cov`, which the file does
/// not store.
pub fn read_trace<R: Read>(input: R, state_dim: usize, initial_cov: nalgebra::DMatrix<f64>) -> Result<EpisodeTrace> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols = header.len();
    let fixed = 1 + 2 * state_dim + 1 + 1;
    let count = |prefix: &str| {
        header
            .iter()
            .filter(|h| {
                h.strip_prefix(prefix)
                    .is_some_and(|rest| rest.is_empty() || rest.chars().all(|c| c.is_ascii_digit()))
            })
            .count()
    };
    let (m, p) = (count("u"), count("y"));
    if cols != fixed + m + p || m == 0 || p == 0 {
        return Err(Error::Config(format!("unexpected trace header: {header:?}")));
    }
    let mut steps = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        let mut it = vals.into_iter();
        let mut take = |k: usize| DVector::from_iterator(k, it.by_ref().take(k));
        let true_state = take(state_dim);
        let estimate = take(state_dim);
        let cov_trace = take(1)[0];
        let control = take(m);
        let output = take(p);
        let reward = take(1)[0];
        steps.push(TraceStep {
            true_state,
            estimate,
            cov_trace,
            control,
            output,
            reward,
        });
    }
    let mean = steps
        .first()
        .map(|s| s.estimate.clone())
        .unwrap_or_else(|| DVector::zeros(state_dim));
    Ok(EpisodeTrace {
        seed: 0,
        episode: 0,
        policy: String::new(),
        initial: InformationState::new(mean, initial_cov)?,
        steps,
        failure: None,
    })
}

pub fn write_returns<W: Write>(out: W, returns: &[f64], normalized: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "return", "normalized_return"])?;
    for (e, (r, n)) in returns.iter().zip(normalized).enumerate() {
        w.write_record([e.to_string(), fmt_f64(*r), fmt_f64(*n)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bands<W: Write>(out: W, bands: &ReturnBands) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "mean", "lower", "upper"])?;
    for e in 0..bands.mean.len() {
        w.write_record([
            e.to_string(),
            fmt_f64(bands.mean[e]),
            fmt_f64(bands.lower[e]),
            fmt_f64(bands.upper[e]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summaries<W: Write>(out: W, episodes: &[EpisodeSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "episode",
        "peak_cov_trace",
        "diverged",
        "first_crossing",
        "discounted_return",
        "failed",
    ])?;
    for e in episodes {
        w.write_record([
            e.episode.to_string(),
            fmt_f64(e.peak_cov_trace),
            e.diverged.to_string(),
            e.first_crossing.map(|k| k.to_string()).unwrap_or_default(),
            fmt_f64(e.discounted_return),
            e.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summaries<R: Read>(input: R) -> Result<Vec<EpisodeSummary>> {
    let mut r = csv::Reader::from_reader(input);
    let bad = |s: &str| Error::Config(format!("bad summary field {s:?}"));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        out.push(EpisodeSummary {
            episode: f(0).parse().map_err(|_| bad(f(0)))?,
            peak_cov_trace: f(1).parse().map_err(|_| bad(f(1)))?,
            diverged: f(2).parse().map_err(|_| bad(f(2)))?,
            first_crossing: match f(3) {
                "" => None,
                s => Some(s.parse().map_err(|_| bad(s))?),
            },
            discounted_return: f(4).parse().map_err(|_| bad(f(4)))?,
            failed: f(5).parse().map_err(|_| bad(f(5)))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn trace_round_trip() {
        let step = TraceStep {
            true_state: DVector::from_vec(vec![0.1, -0.2, 0.3]),
            estimate: DVector::from_vec(vec![1.0 / 3.0, 0.0, -7.0]),
            cov_trace: 2.75,
            control: DVector::from_vec(vec![-0.4]),
            output: DVector::from_vec(vec![0.05]),
            reward: -9.125,
        };
        let trace = EpisodeTrace {
            seed: 0,
            episode: 0,
            policy: String::new(),
            initial: InformationState::new(step.estimate.clone(), DMatrix::identity(3, 3)).unwrap(),
            steps: vec![step.clone(), step],
            failure: None,
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,x1,x2,x3,xhat1,xhat2,xhat3,cov_trace,u,y,reward\n"));
        let back = read_trace(&buf[..], 3, DMatrix::identity(3, 3)).unwrap();
        assert_eq!(back, trace);
    }
}
