//! Regular-solution phase models and their config file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::ThermoError;
use crate::dataio::{ElementMask, ElementSet, PhaseVocabulary, EPS_ELEMENT};

/// Gas constant in J/(mol K).
pub const R_GAS: f64 = 8.314462618;

const DEFAULT_MODELS: &str = include_str!("../../models/default9.toy");

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModel {
    pub name: String,
    /// `(a_e, b_e)` per element in element-set order; `None` outside the support.
    pub endmember: Vec<Option<(f64, f64)>>,
    /// Symmetric matrix of pairwise interaction parameters, zero on the diagonal.
    pub interaction: Vec<Vec<f64>>,
    pub ideal: bool,
    pub required: ElementMask,
}

impl PhaseModel {
    pub fn support(&self) -> ElementMask {
        self.endmember
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_some())
            .fold(0, |m, (i, _)| m | (1 << i))
    }
}

/// Molar Gibbs energy of one phase at composition `x` (full element vector).
pub fn phase_g(pm: &PhaseModel, x: &[f64], t: f64) -> Result<f64, ThermoError> {
    let mut g = 0.0;
    let mut mix = 0.0;
    for (e, &xe) in x.iter().enumerate() {
        match pm.endmember[e] {
            Some((a, b)) => {
                if xe > 0.0 {
                    g += xe * (a + b * t);
                    mix += xe * xe.ln();
                }
            }
            None if xe > EPS_ELEMENT => {
                return Err(ThermoError::Unsupported {
                    phase: pm.name.clone(),
                    element: e,
                })
            }
            None => {}
        }
    }
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            g += pm.interaction[i][j] * x[i] * x[j];
        }
    }
    if pm.ideal {
        g += R_GAS * t * mix;
    }
    Ok(g)
}

/// Element set, phase vocabulary and one model per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub elements: ElementSet,
    pub vocab: PhaseVocabulary,
    pub phases: Vec<PhaseModel>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModels {
    elements: Vec<String>,
    phase: Vec<RawPhase>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    name: String,
    #[serde(default)]
    ideal: bool,
    #[serde(default)]
    required: Vec<String>,
    endmember: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    interaction: Vec<RawInteraction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInteraction {
    pair: [String; 2],
    #[serde(rename = "L")]
    l: f64,
}

impl ModelSet {
    pub fn default9() -> Self {
        Self::from_toml_str(DEFAULT_MODELS).expect("shipped model file is valid")
    }

    pub fn load(path: &Path) -> Result<Self, ThermoError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ThermoError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ThermoError> {
        let raw: RawModels = toml::from_str(text).map_err(|e| ThermoError::Config(e.to_string()))?;
        let cfg = |m: String| ThermoError::Config(m);
        let elements = ElementSet::new(&raw.elements).map_err(|e| cfg(e.to_string()))?;
        let ne = elements.len();
        let idx = |sym: &str, phase: &str| {
            elements
                .index_of(sym)
                .ok_or_else(|| cfg(format!("phase {phase}: unknown element {sym}")))
        };
        let mut phases = Vec::new();
        for rp in raw.phase {
            let mut endmember = vec![None; ne];
            for (sym, [a, b]) in &rp.endmember {
                let e = idx(sym, &rp.name)?;
                if !a.is_finite() || !b.is_finite() {
                    return Err(cfg(format!("phase {}: non-finite end member", rp.name)));
                }
                endmember[e] = Some((*a, *b));
            }
            let mut required = 0;
            for sym in &rp.required {
                required |= 1 << idx(sym, &rp.name)?;
            }
            let mut interaction = vec![vec![0.0; ne]; ne];
            let mut seen = vec![vec![false; ne]; ne];
            for ri in &rp.interaction {
                let (i, j) = (idx(&ri.pair[0], &rp.name)?, idx(&ri.pair[1], &rp.name)?);
                if i == j || seen[i][j] {
                    return Err(cfg(format!(
                        "phase {}: bad or repeated pair {}-{}",
                        rp.name, ri.pair[0], ri.pair[1]
                    )));
                }
                if endmember[i].is_none() || endmember[j].is_none() {
                    return Err(cfg(format!(
                        "phase {}: interaction {}-{} outside the support",
                        rp.name, ri.pair[0], ri.pair[1]
                    )));
                }
                if !ri.l.is_finite() {
                    return Err(cfg(format!("phase {}: non-finite L", rp.name)));
                }
                seen[i][j] = true;
                seen[j][i] = true;
                interaction[i][j] = ri.l;
                interaction[j][i] = ri.l;
            }
            let pm = PhaseModel {
                name: rp.name,
                endmember,
                interaction,
                ideal: rp.ideal,
                required,
            };
            if pm.support() == 0 {
                return Err(cfg(format!("phase {} has an empty support", pm.name)));
            }
            if pm.required & !pm.support() != 0 {
                return Err(cfg(format!(
                    "phase {} requires elements outside its support",
                    pm.name
                )));
            }
            phases.push(pm);
        }
        let names: Vec<&str> = phases.iter().map(|p| p.name.as_str()).collect();
        let required = phases.iter().map(|p| p.required).collect();
        let vocab = PhaseVocabulary::new(&names, required, &elements).map_err(|e| cfg(e.to_string()))?;
        Ok(Self {
            elements,
            vocab,
            phases,
        })
    }

    /// Union of all phase supports.
    pub fn support(&self) -> ElementMask {
        self.phases.iter().fold(0, |m, p| m | p.support())
    }
}
