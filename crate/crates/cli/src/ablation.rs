//! Ablation suite: the four presets over a shared seed set, with a CSV table
//! and an SVG bar chart of the results.

use std::path::Path;

use pgov_core::error::{Error, Result};
use pgov_core::io;

use crate::config::{PipelineConfig, Preset, ALL_PRESETS};
use crate::pipeline::Run;
use crate::report::bar_chart_svg;

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub preset: &'static str,
    pub seed: u64,
    pub miou: f64,
    pub macc: f64,
    pub heldout_paircos: f64,
}

pub fn run_dir(out: &Path, preset: Preset, seed: u64) -> std::path::PathBuf {
    out.join("ablation").join(preset.name()).join(format!("seed_{seed}"))
}

/// Run every preset for every configured seed (>= 3), then aggregate.
pub fn run_ablation_suite(cfg: &PipelineConfig, out: &Path) -> Result<Vec<AblationRow>> {
    if cfg.ablation.seeds.len() < 3 {
        return Err(Error::invalid_config(
            "ablation.seeds",
            "the ablation suite needs at least 3 seeds",
        ));
    }
    let mut rows = Vec::new();
    for preset in ALL_PRESETS {
        for &seed in &cfg.ablation.seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = seed;
            preset.apply(&mut run_cfg);
            let dir = run_dir(out, preset, seed);
            Run::new(&run_cfg, &dir).experiment(preset)?;
            let report = io::read_eval_report_csv(&dir.join("eval_report.csv"))?;
            let get = |metric: &str| -> Result<f64> {
                report
                    .get(&(metric.to_string(), String::new()))
                    .copied()
                    .ok_or_else(|| Error::MissingArtifacts(dir.join("eval_report.csv")))
            };
            rows.push(AblationRow {
                preset: preset.name(),
                seed,
                miou: get("miou")?,
                macc: get("macc")?,
                heldout_paircos: get("heldout_paircos")?,
            });
        }
    }

    let mut csv = String::from("preset,seed,miou,macc\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.preset, r.seed, r.miou, r.macc));
    }
    io::atomic_write(&out.join("ablation.csv"), csv.as_bytes())?;

    let mut cons = String::from("preset,seed,heldout_paircos\n");
    for r in &rows {
        cons.push_str(&format!("{},{},{}\n", r.preset, r.seed, r.heldout_paircos));
    }
    io::atomic_write(&out.join("consistency.csv"), cons.as_bytes())?;

    let mut labels = Vec::new();
    let mut means = Vec::new();
    for preset in ALL_PRESETS {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.preset == preset.name())
            .map(|r| r.miou)
            .collect();
        labels.push(preset.name().to_string());
        means.push(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    let svg = bar_chart_svg("mean mIoU per preset", &labels, &means);
    io::atomic_write(&out.join("ablation.svg"), svg.as_bytes())?;
    Ok(rows)
}

pub fn mean_for<'a>(rows: &'a [AblationRow], preset: &str) -> f64 {
    let vals: Vec<f64> = rows.iter().filter(|r| r.preset == preset).map(|r| r.miou).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}
