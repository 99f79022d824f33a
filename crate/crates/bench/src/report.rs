//! CSV and JSON emitters.
//!
//! Floats are written in their shortest round-trip form, so CSV and JSON
//! outputs parse back to the same `f64` values.

use std::fmt::Write as _;

use serde_json::json;
use twolmm::datagen::HapkeGeometry;
use twolmm::endmember::EndmemberMatch;
use twolmm::hsi::ScalingState;
use twolmm::SolverTrace;

use crate::config::ExperimentConfig;
use crate::experiment::{LoadedScene, MethodRow, SweepRow};

pub const RESULTS_HEADER: &str = "method,rmse_a,rmse_x,time_s,iters,error";
pub const SWEEP_HEADER: &str = "sweep,value,method,rmse_a,rmse_x,time_s,iters,error";
pub const TRACE_HEADER: &str =
    "iteration,cost_start,cost_trial,cost,step,halvings,rel_change_a,rel_change_s,rmse_a,elapsed_s,fallback,restarted";

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Quotes a CSV field when it contains a separator, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn row_fields(r: &MethodRow) -> String {
    format!(
        "{},{},{},{},{},{}",
        csv_field(&r.method),
        opt_num(r.rmse_a),
        opt_num(r.rmse_x),
        opt_num(r.time_s),
        opt(r.iters),
        csv_field(r.error.as_deref().unwrap_or(""))
    )
}

pub fn results_csv(rows: &[MethodRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{}", row_fields(r));
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", csv_field(&r.sweep), num(r.value), row_fields(&r.row));
    }
    out
}

pub fn results_json(cfg: &ExperimentConfig, rows: &[MethodRow], matching: Option<&EndmemberMatch>) -> String {
    let value = json!({
        "seed": cfg.seed,
        "em_source": cfg.em_source.to_string(),
        "endmember_sad_deg": matching.map(|m| m.sad.clone()),
        "rows": rows,
    });
    serde_json::to_string_pretty(&value).unwrap_or_default() + "\n"
}

pub fn trace_csv(trace: &SolverTrace) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for t in &trace.entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            t.iteration,
            num(t.cost_start),
            num(t.cost_trial),
            num(t.cost),
            num(t.step),
            t.halvings,
            num(t.rel_change_a),
            num(t.rel_change_s),
            opt_num(t.rmse_a),
            num(t.elapsed),
            u8::from(t.fallback),
            u8::from(t.restarted)
        );
    }
    out
}

pub fn scalings_csv(s: &ScalingState) -> String {
    let mut out = String::from("kind,index,value\n");
    for (i, v) in s.s_e.iter().enumerate() {
        let _ = writeln!(out, "endmember,{i},{}", num(*v));
    }
    for (i, v) in s.s_x.iter().enumerate() {
        let _ = writeln!(out, "pixel,{i},{}", num(*v));
    }
    out
}

pub fn geometry_csv(g: &HapkeGeometry) -> String {
    let mut out = String::from("pixel,mu,mu0\n");
    for (i, (m, m0)) in g.mu.iter().zip(&g.mu0).enumerate() {
        let _ = writeln!(out, "{i},{},{}", num(*m), num(*m0));
    }
    out
}

/// Scene description sufficient to regenerate every file from the seed.
pub fn manifest_json(cfg: &ExperimentConfig, scene: &LoadedScene, files: &[String]) -> String {
    let finite = |v: f64| v.is_finite().then_some(v);
    let value = json!({
        "seed": cfg.seed,
        "generator": cfg.scene.generator.to_string(),
        "bands": scene.image.bands(),
        "width": scene.image.width(),
        "height": scene.image.height(),
        "endmembers": cfg.scene.endmembers,
        "snr_db": finite(cfg.scene.snr_db),
        "snr_db_empirical": scene.snr_db.and_then(finite),
        "scaling_range": [cfg.scene.s_min, cfg.scene.s_max],
        "files": files,
        "config": cfg.to_text(),
    });
    serde_json::to_string_pretty(&value).unwrap_or_default() + "\n"
}
