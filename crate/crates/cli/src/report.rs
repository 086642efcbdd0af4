//! Timing statistics and report rendering.
//!
//! Reports print an aligned text table followed by machine-readable lines of
//! the form `metric <section>.<name> <value>`.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

/// Median and spread over repeated measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub median: Duration,
    pub min: Duration,
    pub max: Duration,
    pub reps: usize,
}

impl Stats {
    pub fn from_samples(samples: &[Duration]) -> Stats {
        assert!(!samples.is_empty(), "no samples");
        let mut s = samples.to_vec();
        s.sort();
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2 };
        Stats { median, min: s[0], max: s[n - 1], reps: n }
    }
}

/// Runs `f` once as warm-up, then `reps` timed times.
pub fn measure<T>(reps: usize, mut f: impl FnMut() -> T) -> Stats {
    std::hint::black_box(f());
    let samples: Vec<Duration> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(f());
            start.elapsed()
        })
        .collect();
    Stats::from_samples(&samples)
}

pub fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Left-aligned first column, right-aligned others.
pub fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{cell:<w$}", w = widths[0]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

pub fn metric(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "metric {key} {value}");
}
