//! Machine-readable run reports: JSON summary plus CSV dumps.

use std::io::Write;

use serde::Serialize;

use crate::bench::csv_err;
use crate::error::Result;
use crate::hybrid::RemovalStep;
use crate::pipeline::{PipelineConfig, PipelineOutput, StageTimings};
use crate::reduce::ReducedTokenSet;
use crate::sink::SinkReport;

/// Bumped whenever a field is renamed or removed.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct BudgetReport {
    /// Foreground budget T, if one was set.
    pub target: Option<usize>,
    /// Patch tokens kept as survivors.
    pub survivors: usize,
    /// Whether a pooled background token is appended on top of the survivors.
    pub pooled_token: bool,
    /// Total output length, CLS and pooled included.
    pub output_tokens: usize,
    /// True when the foreground exceeded the budget and had to be thinned.
    pub constrained: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport<'a> {
    pub schema_version: u32,
    pub config: &'a PipelineConfig,
    pub tokens: usize,
    pub layers: usize,
    pub anchor: usize,
    pub sink_report: &'a SinkReport,
    pub walk_depth: usize,
    pub column_sum_history: &'a [f64],
    pub cluster_sizes: Vec<usize>,
    pub budget_used: BudgetReport,
    pub timings_per_stage_ms: &'a StageTimings,
    pub removal_log: &'a [RemovalStep],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduced: Option<&'a ReducedTokenSet>,
}

impl<'a> RunReport<'a> {
    pub fn new(
        cfg: &'a PipelineConfig,
        out: &'a PipelineOutput,
        layers: usize,
        include_tokens: bool,
    ) -> Self {
        let target = match (&cfg.hybrid, cfg.reduce.budget) {
            (Some(h), _) if cfg.mode == crate::pipeline::Mode::Hybrid => Some(h.target),
            (_, b) => b,
        };
        let output_tokens = out.reduced.as_ref().map_or(0, |r| r.len());
        RunReport {
            schema_version: SCHEMA_VERSION,
            config: cfg,
            tokens: out.field.tokens(),
            layers,
            anchor: out.anchor,
            sink_report: &out.sink,
            walk_depth: out.walk_depth,
            column_sum_history: &out.column_sum_history,
            cluster_sizes: out.assignment.sizes(),
            budget_used: BudgetReport {
                target,
                survivors: out.survivors.len(),
                pooled_token: out.pooled.is_some(),
                output_tokens,
                constrained: out.sampled,
            },
            timings_per_stage_ms: &out.timings,
            removal_log: &out.removal_log,
            reduced: if include_tokens {
                out.reduced.as_ref()
            } else {
                None
            },
        }
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self).map_err(std::io::Error::from)?;
        writeln!(w)?;
        Ok(())
    }
}

/// `index,raw,normalized,cluster` for every patch token.
pub fn write_distance_csv<W: Write>(out: &PipelineOutput, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["index", "raw", "normalized", "cluster"])
        .map_err(csv_err)?;
    for i in 1..out.field.tokens() {
        csv.write_record([
            i.to_string(),
            format!("{:.17e}", out.field.raw_of(i)),
            format!("{:.17e}", out.field.normalized_of(i)),
            out.assignment.label_of(i).to_string(),
        ])
        .map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

/// `index,fate` for every original token, CLS included.
pub fn write_mask_csv<W: Write>(out: &PipelineOutput, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["index", "fate"]).map_err(csv_err)?;
    for (i, fate) in out.mask.iter().enumerate() {
        csv.write_record([i.to_string().as_str(), fate.as_str()])
            .map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{run_pipeline, Mode};
    use crate::synth::{gen_sink_stack, SynthConfig};

    fn run(mode: Mode) -> (PipelineConfig, PipelineOutput) {
        let stack = gen_sink_stack(&SynthConfig {
            n: 12,
            layers: 8,
            margin: 0.25,
            sink_index: Some(3),
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let cfg = PipelineConfig {
            mode,
            ..Default::default()
        };
        let out = run_pipeline(&stack, &cfg).unwrap();
        (cfg, out)
    }

    #[test]
    fn json_has_versioned_schema() {
        let (cfg, out) = run(Mode::Pool);
        let mut buf = Vec::new();
        RunReport::new(&cfg, &out, 8, true)
            .write_json(&mut buf)
            .unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["sink_report"]["sink_index"], 3);
        assert_eq!(v["config"]["walk"]["tau"], 7.0);
        let sizes: u64 = v["cluster_sizes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_u64().unwrap())
            .sum();
        assert_eq!(sizes, 11);
        assert_eq!(v["reduced"]["tokens"][0]["provenance"]["kind"], "cls");
    }

    #[test]
    fn csv_dumps_cover_every_token() {
        let (_, out) = run(Mode::ReportOnly);
        let mut buf = Vec::new();
        write_distance_csv(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert!(text.starts_with("index,raw,normalized,cluster\n1,"));

        let mut buf = Vec::new();
        write_mask_csv(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.contains("\n0,keep\n"));
    }
}
