//! Browser bindings: preset configs, the gate check, a short simulation and
//! the excitation level of a sine basis. Results cross the boundary as JSON.

use neurofield::analysis::{pe_gram, PeMetric, SampledSignal};
use neurofield::control::{make_signal, SignalSpec};
use neurofield::experiment::{run_scenario, Mode, ScenarioConfig};
use neurofield::field::{build_grid, MeasureKind};
use neurofield::observer::{alpha_star, check_dissipativity};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn mode(name: &str) -> Result<Mode, JsError> {
    Mode::ALL
        .into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| js(format!("unknown mode {name}")))
}

/// Smoke-sized preset of a mode as TOML.
#[wasm_bindgen]
pub fn preset(name: &str) -> Result<String, JsError> {
    ScenarioConfig::smoke(mode(name)?).to_toml().map_err(js)
}

/// Dissipativity margin and gain threshold of a config.
#[wasm_bindgen]
pub fn check(toml: &str) -> Result<String, JsError> {
    let cfg = ScenarioConfig::from_toml(toml).map_err(js)?;
    cfg.validate().map_err(js)?;
    let params = cfg.build_params().map_err(js)?;
    let d = check_dissipativity(&params);
    let threshold = alpha_star(&params).ok();
    Ok(json!({
        "dissipative": d.holds,
        "margin": d.margin,
        "alpha": params.alpha,
        "alpha_star": threshold,
        "gain_ok": threshold.is_some_and(|a| params.alpha > a),
    })
    .to_string())
}

/// Runs a config and returns its report.
#[wasm_bindgen]
pub fn simulate(toml: &str) -> Result<String, JsError> {
    let cfg = ScenarioConfig::from_toml(toml).map_err(js)?;
    let out = run_scenario(&cfg).map_err(js)?;
    serde_json::to_string(&out.report).map_err(js)
}

/// Smallest window excitation of a sine basis on a `dim`-point grid, over
/// `windows` shifted windows of one period.
#[wasm_bindgen]
pub fn sine_basis_kappa(period: f64, kappa: f64, dim: usize, windows: usize) -> Result<f64, JsError> {
    if !(period > 0.0 && kappa > 0.0) || dim == 0 || windows == 0 {
        return Err(js("period, kappa, dim and windows must be positive"));
    }
    let g = build_grid(dim, MeasureKind::Lebesgue).map_err(js)?;
    let metric = PeMetric::grid(&g, 1);
    let f = make_signal(&SignalSpec::SineBasis { period, kappa, dim }, &g, 1).map_err(js)?;
    let steps = 1000;
    let dt = period / steps as f64;
    let s = SampledSignal::from_fn(0.0, dt, steps * 2 + 1, dim, |t, o| f.eval_into(t, o));
    let mut worst = f64::INFINITY;
    for w in 0..windows {
        let r = pe_gram(&s, w as f64 * period / windows as f64, period, &metric).map_err(js)?;
        worst = worst.min(r.kappa);
    }
    Ok(worst)
}
