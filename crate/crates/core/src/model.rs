//! JSON model files.
//!
//! ```json
//! {"type": "dae", "h": {...}, "l": {...}, "f": {...}}
//! {"type": "ode_linear", "a": [[...]], "b_d": [[...]], "b_f": [[...]], "c": [[...]]}
//! {"type": "power_system"}
//! ```
//! Polynomial matrices are `{"rows": r, "cols": c, "coeffs": [[[..]]]}` with
//! ascending powers. A `power_system` without `config` is the desk-scale
//! two-area system.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dae::{LinearDrift, NonlinearDaeModel, OdeSystem};
use crate::error::{dim_err, Error, Result};
use crate::harness::sha256_hex;
use crate::poly::PolyMatrix;
use crate::power::{Plant, PowerSystemConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelFile {
    Dae {
        h: PolyMatrix,
        l: PolyMatrix,
        f: PolyMatrix,
    },
    OdeLinear {
        a: Vec<Vec<f64>>,
        b_d: Vec<Vec<f64>>,
        b_f: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        #[serde(default)]
        x_e: Option<Vec<f64>>,
    },
    PowerSystem {
        #[serde(default)]
        config: Option<PowerSystemConfig>,
    },
}

/// A model ready for synthesis; simulable models also carry their plant.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Dae(NonlinearDaeModel),
    Plant(Box<Plant>),
}

impl LoadedModel {
    pub fn dae(&self) -> &NonlinearDaeModel {
        match self {
            LoadedModel::Dae(m) => m,
            LoadedModel::Plant(p) => &p.model,
        }
    }

    pub fn plant(&self) -> Option<&Plant> {
        match self {
            LoadedModel::Dae(_) => None,
            LoadedModel::Plant(p) => Some(p),
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>], ncols: Option<usize>) -> Result<DMatrix<f64>> {
    let c = ncols.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if rows.iter().any(|r| r.len() != c) {
        return dim_err(format!("{name}: rows have unequal lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))
    }

    pub fn build(&self) -> Result<LoadedModel> {
        match self {
            ModelFile::Dae { h, l, f } => Ok(LoadedModel::Dae(NonlinearDaeModel::linear(
                h.clone(),
                l.clone(),
                f.clone(),
            )?)),
            ModelFile::OdeLinear { a, b_d, b_f, c, x_e } => {
                let a = matrix("a", a, None)?;
                let n = a.nrows();
                if a.ncols() != n {
                    return dim_err("a must be square");
                }
                // empty input lists still need n rows
                let b_d = if b_d.is_empty() {
                    DMatrix::zeros(n, 0)
                } else {
                    matrix("b_d", b_d, None)?
                };
                let b_f = matrix("b_f", b_f, None)?;
                let c = matrix("c", c, Some(n))?;
                let x_e = match x_e {
                    Some(v) if v.len() != n => return dim_err(format!("x_e has length {}, state is {n}", v.len())),
                    Some(v) => DVector::from_vec(v.clone()),
                    None => DVector::zeros(n),
                };
                let drift = Arc::new(LinearDrift { a, x_e: x_e.clone() });
                let ode = OdeSystem::new(drift, b_d, b_f, c)?;
                Ok(LoadedModel::Plant(Box::new(Plant::new(ode, x_e)?)))
            }
            ModelFile::PowerSystem { config } => {
                let cfg = config.clone().unwrap_or_else(PowerSystemConfig::desk_scale);
                Ok(LoadedModel::Plant(Box::new(Plant::two_area(&cfg)?)))
            }
        }
    }
}

/// Reads and builds a model; also returns the sha256 of the file bytes.
pub fn load_model(path: &Path) -> Result<(LoadedModel, String)> {
    let bytes = std::fs::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse(format!("model file is not UTF-8: {e}")))?;
    let model = ModelFile::parse(text)?.build()?;
    Ok((model, sha256_hex(&bytes)))
}
