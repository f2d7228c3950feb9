use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robust_inner::{penalty_coefficient, Side};
use crate::trainer::atomic_write;

pub const DEFAULT_CURVE_RHOS: [f64; 4] = [0.008, 0.03, 0.1, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub rho: f64,
    pub coefficient: Vec<f64>,
    /// Grid point of the largest coefficient; the first one on ties.
    pub argmax_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCurve {
    pub q: Vec<f64>,
    pub series: Vec<CurveSeries>,
}

/// `q = k / 100` for `k = 1..=99`, computed from the integer so grid points
/// are exact decimals.
pub fn curve_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// Penalty coefficient when the loss favors the first response, over
/// [`curve_grid`].
pub fn coefficient_curve(rhos: &[f64]) -> Result<CoefficientCurve> {
    if rhos.is_empty() {
        return Err(Error::invalid("at least one rho is required"));
    }
    let q = curve_grid();
    let series = rhos
        .iter()
        .map(|&rho| {
            let coefficient = q
                .iter()
                .map(|&qi| penalty_coefficient(qi, rho, Side::FavoringA))
                .collect::<Result<Vec<_>>>()?;
            let mut best = 0;
            for (i, &c) in coefficient.iter().enumerate() {
                if c > coefficient[best] {
                    best = i;
                }
            }
            Ok(CurveSeries {
                rho,
                argmax_q: q[best],
                coefficient,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoefficientCurve { q, series })
}

impl CoefficientCurve {
    /// Wide CSV: `q` then one column per ρ.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q");
        for s in &self.series {
            let _ = write!(out, ",rho={}", s.rho);
        }
        out.push('\n');
        for (i, q) in self.q.iter().enumerate() {
            let _ = write!(out, "{q}");
            for s in &self.series {
                let _ = write!(out, ",{}", s.coefficient[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_csv().as_bytes())
    }
}
