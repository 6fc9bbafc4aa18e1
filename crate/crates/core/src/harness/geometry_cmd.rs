use std::path::Path;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, GeometryModelKind};
use super::RunSummary;
use crate::error::Result;
use crate::geometry::{
    affine_connection, affine_connection_moments, fisher_metric, fisher_metric_moments, score_mean, CoupledFamily,
    Expectation, GaussianModel, GpdModel, Measure, Tensor3,
};

fn mat(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn ten(t: &Tensor3) -> Value {
    json!(t.to_nested())
}

fn err_value(e: &crate::error::Error) -> Value {
    json!({ "error": e.to_string() })
}

/// Metric and connection by both routes at one point, with any divergence
/// reported in place of the missing tensor.
pub fn geometry_entry<M: CoupledFamily>(model: &M, theta: &[f64], measure: Measure, mc_samples: usize, seed: u64) -> Value {
    let q = Expectation::Quadrature;
    let g_d = fisher_metric(model, theta, measure, q);
    let g_l = fisher_metric_moments(model, theta, measure, q);
    let c_d = affine_connection(model, theta, measure, q);
    let c_l = affine_connection_moments(model, theta, measure, q);
    let gap_g = match (&g_d, &g_l) {
        (Ok(a), Ok(b)) => Some((&a.0 - &b.0).amax()),
        _ => None,
    };
    let gap_c = match (&c_d, &c_l) {
        (Ok(a), Ok(b)) => Some(a.0.max_abs_diff(&b.0)),
        _ => None,
    };
    let g = |r: &Result<(DMatrix<f64>, DMatrix<f64>)>| match r {
        Ok((v, e)) => json!({ "value": mat(v), "abs_err": mat(e) }),
        Err(e) => err_value(e),
    };
    let c = |r: &Result<(Tensor3, Tensor3)>| match r {
        Ok((v, e)) => json!({ "value": ten(v), "abs_err": ten(e) }),
        Err(e) => err_value(e),
    };
    let score = match score_mean(model, theta, measure, q) {
        Ok(s) => json!(s.as_slice()),
        Err(e) => err_value(&e),
    };
    let mc = if mc_samples > 0 {
        let m = Expectation::MonteCarlo { samples: mc_samples, seed };
        json!({
            "samples": mc_samples,
            "g": match fisher_metric(model, theta, measure, m) {
                Ok((v, e)) => json!({ "value": mat(&v), "stderr": mat(&e) }),
                Err(e) => err_value(&e),
            },
            "gamma": match affine_connection(model, theta, measure, m) {
                Ok((v, e)) => json!({ "value": ten(&v), "stderr": ten(&e) }),
                Err(e) => err_value(&e),
            },
        })
    } else {
        Value::Null
    };
    json!({
        "kappa": model.coupling().kappa(),
        "theta": theta,
        "g_derivative": g(&g_d),
        "g_moments": g(&g_l),
        "gamma_derivative": c(&c_d),
        "gamma_moments": c(&c_l),
        "score_mean": score,
        "max_gap_g": gap_g,
        "max_gap_gamma": gap_c,
        "monte_carlo": mc,
    })
}

pub(super) fn run_geometry(cfg: &ExperimentConfig, path: &Path) -> Result<RunSummary> {
    let mut entries = Vec::new();
    for &k in &cfg.geometry_kappas {
        for theta in &cfg.geometry_thetas {
            let e = match cfg.geometry_model {
                GeometryModelKind::Gpd => GpdModel::new(k)
                    .map(|m| geometry_entry(&m, theta, cfg.geometry_measure, cfg.geometry_mc_samples, cfg.train.seed)),
                GeometryModelKind::Gaussian => GaussianModel::new(k)
                    .map(|m| geometry_entry(&m, theta, cfg.geometry_measure, cfg.geometry_mc_samples, cfg.train.seed)),
            };
            entries.push(e.unwrap_or_else(|e| json!({ "kappa": k, "theta": theta, "error": e.to_string() })));
        }
    }
    let doc = json!({
        "schema_version": super::SCHEMA_VERSION,
        "model": match cfg.geometry_model { GeometryModelKind::Gpd => "gpd", GeometryModelKind::Gaussian => "gaussian" },
        "measure": match cfg.geometry_measure { Measure::Escort => "escort", Measure::Density => "density" },
        "entries": entries,
    });
    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(RunSummary { passed: true, files: vec![path.to_path_buf()] })
}
