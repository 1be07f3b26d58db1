//! Candidate materials in the polarization formulation `B = mu0 H + Jp`.
//!
//! Each material is a polarization law `Jp(B)` plus an out-of-plane current
//! density. The default catalogue has 16 entries: twelve ideal magnets
//! (orientations `k * 30` degrees), two conductors of opposite current, one
//! nonlinear steel and air.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::PropertyValue;

pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
pub const NU0: f64 = 1.0 / MU0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("invalid material parameters: {0}")]
    InvalidParameters(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialKind {
    Magnet,
    Conductor,
    Steel,
    Air,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum PolarizationLaw {
    None,
    /// Rigid polarization (ideal magnet, unit relative permeability).
    Constant { jp: [f64; 2] },
    /// `Jp = chi B` with `0 <= chi < 1`.
    Linear { chi: f64 },
    /// Isotropic Froelich-type saturation `|Jp| = Js a b / (Js + a b)`.
    Froelich { js: f64, a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub name: String,
    pub kind: MaterialKind,
    pub law: PolarizationLaw,
    /// Out-of-plane current density under positive supply (A/m^2).
    pub current_density: f64,
    /// Display color, RGB in `[0, 1]`.
    pub color: [f64; 3],
}

impl fmt::Display for MaterialModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Ideal magnet with remanence `br` (tesla) oriented at `angle_deg`.
pub fn pm_model_with(angle_deg: f64, br: f64) -> MaterialModel {
    let t = angle_deg.to_radians();
    MaterialModel {
        name: format!("pm_{:03}", angle_deg.round() as i64),
        kind: MaterialKind::Magnet,
        law: PolarizationLaw::Constant {
            jp: [br * t.cos(), br * t.sin()],
        },
        current_density: 0.0,
        color: hue_color(angle_deg),
    }
}

pub fn pm_model(angle_deg: f64) -> MaterialModel {
    pm_model_with(angle_deg, 1.0)
}

pub fn steel_model(js: f64, a: f64) -> Result<MaterialModel, MaterialError> {
    if !(js > 0.0 && js.is_finite()) {
        return Err(MaterialError::InvalidParameters(format!(
            "saturation polarization must be positive, got {js}"
        )));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(MaterialError::InvalidParameters(format!(
            "initial slope must lie in (0, 1) for a monotone law, got {a}"
        )));
    }
    Ok(MaterialModel {
        name: "steel".into(),
        kind: MaterialKind::Steel,
        law: PolarizationLaw::Froelich { js, a },
        current_density: 0.0,
        color: [0.45, 0.45, 0.5],
    })
}

/// Linear soft-magnetic stand-in for steel with relative permeability `mu_r`.
pub fn linear_steel_model(mu_r: f64) -> Result<MaterialModel, MaterialError> {
    if !(mu_r >= 1.0 && mu_r.is_finite()) {
        return Err(MaterialError::InvalidParameters(format!(
            "relative permeability must be >= 1, got {mu_r}"
        )));
    }
    Ok(MaterialModel {
        name: "steel".into(),
        kind: MaterialKind::Steel,
        law: PolarizationLaw::Linear {
            chi: 1.0 - 1.0 / mu_r,
        },
        current_density: 0.0,
        color: [0.45, 0.45, 0.5],
    })
}

pub fn conductor_model_with(sign: i32, magnitude: f64) -> MaterialModel {
    let positive = sign >= 0;
    MaterialModel {
        name: if positive { "conductor_pos" } else { "conductor_neg" }.into(),
        kind: MaterialKind::Conductor,
        law: PolarizationLaw::None,
        current_density: if positive { magnitude } else { -magnitude },
        color: if positive {
            [0.85, 0.15, 0.1]
        } else {
            [0.1, 0.25, 0.85]
        },
    }
}

/// Conductor carrying `sign * 10 A/mm^2`.
pub fn conductor_model(sign: i32) -> MaterialModel {
    conductor_model_with(sign, 1.0e7)
}

pub fn air_model() -> MaterialModel {
    MaterialModel {
        name: "air".into(),
        kind: MaterialKind::Air,
        law: PolarizationLaw::None,
        current_density: 0.0,
        color: [1.0, 1.0, 1.0],
    }
}

impl MaterialModel {
    pub fn is_linear(&self) -> bool {
        !matches!(self.law, PolarizationLaw::Froelich { .. })
    }

    pub fn polarization(&self, b: [f64; 2]) -> [f64; 2] {
        match self.law {
            PolarizationLaw::None => [0.0, 0.0],
            PolarizationLaw::Constant { jp } => jp,
            PolarizationLaw::Linear { chi } => [chi * b[0], chi * b[1]],
            PolarizationLaw::Froelich { js, a } => {
                let r = js * a / (js + a * b[0].hypot(b[1]));
                [r * b[0], r * b[1]]
            }
        }
    }

    pub fn d_polarization_db(&self, b: [f64; 2]) -> [[f64; 2]; 2] {
        match self.law {
            PolarizationLaw::None | PolarizationLaw::Constant { .. } => [[0.0; 2]; 2],
            PolarizationLaw::Linear { chi } => [[chi, 0.0], [0.0, chi]],
            PolarizationLaw::Froelich { js, a } => {
                // Jp = r(|B|) B  =>  dJp/dB = r I + r'(b) b (b^ b^T)
                let norm = b[0].hypot(b[1]);
                let den = js + a * norm;
                let r = js * a / den;
                if norm == 0.0 {
                    return [[r, 0.0], [0.0, r]];
                }
                let c = -js * a * a / (den * den * norm);
                [
                    [r + c * b[0] * b[0], c * b[0] * b[1]],
                    [c * b[1] * b[0], r + c * b[1] * b[1]],
                ]
            }
        }
    }

    /// Polarization, current and polarization derivative in one value.
    pub fn property(&self, b: [f64; 2]) -> PropertyValue {
        PropertyValue {
            polarization: self.polarization(b),
            current_density: self.current_density,
            d_polarization: self.d_polarization_db(b),
        }
    }
}

/// Magnitude of the steel polarization at flux density `b`.
pub fn froelich_magnitude(js: f64, a: f64, b: f64) -> f64 {
    js * a * b / (js + a * b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialsConfig {
    /// Magnet remanence (T).
    pub remanence: f64,
    /// Conductor current density magnitude (A/m^2).
    pub current_density: f64,
    pub steel_js: f64,
    pub steel_a: f64,
    /// Replace the nonlinear steel by a linear material of the same initial permeability.
    pub linear_steel: bool,
}

impl Default for MaterialsConfig {
    fn default() -> Self {
        Self {
            remanence: 1.0,
            current_density: 1.0e7,
            steel_js: 1.9,
            steel_a: 0.999,
            linear_steel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialCatalogue {
    pub entries: Vec<MaterialModel>,
}

impl MaterialCatalogue {
    /// Catalogue in the fixed order `[pm_000 .. pm_330, conductor_pos, conductor_neg, steel, air]`.
    pub fn from_config(config: &MaterialsConfig) -> Result<Self, MaterialError> {
        let mut entries: Vec<MaterialModel> = (0..12)
            .map(|k| pm_model_with(30.0 * k as f64, config.remanence))
            .collect();
        entries.push(conductor_model_with(1, config.current_density));
        entries.push(conductor_model_with(-1, config.current_density));
        entries.push(if config.linear_steel {
            linear_steel_model(1.0 / (1.0 - config.steel_a))?
        } else {
            steel_model(config.steel_js, config.steel_a)?
        });
        entries.push(air_model());
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|m| m.name == name)
    }

    pub fn get(&self, index: usize) -> &MaterialModel {
        &self.entries[index]
    }
}

pub fn default_catalogue() -> MaterialCatalogue {
    MaterialCatalogue::from_config(&MaterialsConfig::default()).expect("default parameters are valid")
}

fn hue_color(angle_deg: f64) -> [f64; 3] {
    let h = angle_deg.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b]
}
