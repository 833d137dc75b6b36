//! Wall-clock scaling harness for the accumulation, distance and sort stages.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::diffusion_distances;
use crate::matrix::TransitionMatrix;
use crate::synth::{gen_sink_stack, SynthConfig};
use crate::walk::{accumulate_layers, WalkConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    /// Layers per accumulation; each extra layer is one N×N product.
    pub layers: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Repeat a stage inside one sample until it takes at least this long.
    pub min_sample: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![64, 128, 256, 512, 1024],
            layers: 2,
            warmup: 5,
            iterations: 20,
            seed: 0,
            min_sample: Duration::from_millis(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Accumulate,
    Distances,
    Sort,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Accumulate, Stage::Distances, Stage::Sort];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Accumulate => "accumulate",
            Stage::Distances => "distances",
            Stage::Sort => "sort",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub stage: Stage,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub reps_per_sample: usize,
    pub samples: usize,
}

/// Times `f` and returns per-call milliseconds for each measured sample.
fn measure(cfg: &BenchConfig, mut f: impl FnMut()) -> (Vec<f64>, usize) {
    // calibrate the inner repetition count
    let mut reps = 1usize;
    loop {
        let start = Instant::now();
        for _ in 0..reps {
            f();
        }
        if start.elapsed() >= cfg.min_sample || reps >= 1 << 20 {
            break;
        }
        reps *= 2;
    }
    for _ in 0..cfg.warmup {
        for _ in 0..reps {
            f();
        }
    }
    let samples = (0..cfg.iterations)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..reps {
                f();
            }
            start.elapsed().as_secs_f64() * 1e3 / reps as f64
        })
        .collect();
    (samples, reps)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

fn row(n: usize, stage: Stage, samples: Vec<f64>, reps: usize) -> BenchRow {
    BenchRow {
        n,
        stage,
        median_ms: median(&samples),
        min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: samples.iter().copied().fold(0.0, f64::max),
        reps_per_sample: reps,
        samples: samples.len(),
    }
}

/// Runs every stage at every size. Inputs are random dense stacks.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.iterations == 0 || cfg.layers < 2 || cfg.sizes.iter().any(|&n| n < 2) {
        return Err(Error::Config(
            "bench needs iterations >= 1, layers >= 2 and sizes >= 2".into(),
        ));
    }
    let walk = WalkConfig {
        early_stop: false,
        ..WalkConfig::default()
    };
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let stack = gen_sink_stack(&SynthConfig {
            n,
            layers: cfg.layers,
            heads: 1,
            margin: 0.0,
            sink_index: None,
            seed: cfg.seed,
            feature_dim: 0,
            ..SynthConfig::default()
        })?;
        let maps: Vec<TransitionMatrix> = (0..cfg.layers)
            .map(|l| stack.head_average(l))
            .collect::<Result<_>>()?;

        let (samples, reps) = measure(cfg, || {
            let state =
                accumulate_layers(maps.iter().cloned().map(Ok), &walk).expect("validated input");
            std::hint::black_box(state);
        });
        rows.push(row(n, Stage::Accumulate, samples, reps));

        let p = accumulate_layers(maps.iter().cloned().map(Ok), &walk)?
            .cumulative()
            .clone();
        let (samples, reps) = measure(cfg, || {
            std::hint::black_box(diffusion_distances(&p, 1).expect("anchor in range"));
        });
        rows.push(row(n, Stage::Distances, samples, reps));

        let field = diffusion_distances(&p, 1)?;
        let (samples, reps) = measure(cfg, || {
            let mut order: Vec<(f64, usize)> = field
                .normalized()
                .iter()
                .enumerate()
                .map(|(i, &d)| (d, i + 1))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            std::hint::black_box(order);
        });
        rows.push(row(n, Stage::Sort, samples, reps));
        log::info!("bench n={n} done");
    }
    Ok(rows)
}

/// Least-squares slope of `ln(time)` against `ln(n)` for one stage.
pub fn loglog_slope(rows: &[BenchRow], stage: Stage) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.stage == stage && r.median_ms > 0.0)
        .map(|r| ((r.n as f64).ln(), r.median_ms.ln()))
        .collect();
    fit_slope(&pts)
}

pub fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "n",
        "stage",
        "median_ms",
        "min_ms",
        "max_ms",
        "reps_per_sample",
        "samples",
    ])
    .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            r.stage.as_str().to_string(),
            format!("{:.6}", r.median_ms),
            format!("{:.6}", r.min_ms),
            format!("{:.6}", r.max_ms),
            r.reps_per_sample.to_string(),
            r.samples.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
