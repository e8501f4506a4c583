use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of octave bands carried by every material.
pub const NUM_BANDS: usize = 6;

/// Octave band centre frequencies in Hz.
pub const BAND_CENTERS_HZ: [f64; NUM_BANDS] = [125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0];

/// A boundary material with per-octave-band energy absorption coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub absorption: [f64; NUM_BANDS],
}

impl Material {
    pub fn new(name: impl Into<String>, absorption: [f64; NUM_BANDS]) -> Result<Self> {
        let m = Material {
            name: name.into(),
            absorption,
        };
        m.validate()?;
        Ok(m)
    }

    /// Material with the same coefficient in every band.
    pub fn uniform(name: impl Into<String>, alpha: f64) -> Result<Self> {
        Self::new(name, [alpha; NUM_BANDS])
    }

    pub fn validate(&self) -> Result<()> {
        for &a in &self.absorption {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!(
                    "material {:?}: absorption {a} outside (0, 1]",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Pressure reflection coefficient `sqrt(1 - alpha)` per band.
    pub fn reflection(&self) -> [f64; NUM_BANDS] {
        self.absorption.map(|a| (1.0 - a).max(0.0).sqrt())
    }

    pub fn mean_absorption(&self) -> f64 {
        self.absorption.iter().sum::<f64>() / NUM_BANDS as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialTable {
    pub version: u32,
    pub bands_hz: [f64; NUM_BANDS],
    pub materials: Vec<Material>,
}

const BUILTIN_TABLE: &str = include_str!("../../data/materials.json");

impl MaterialTable {
    /// The table shipped with the crate (12 common construction materials).
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_TABLE).expect("builtin material table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: MaterialTable = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_materials(materials: Vec<Material>) -> Result<Self> {
        let table = MaterialTable {
            version: 1,
            bands_hz: BAND_CENTERS_HZ,
            materials,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        if self.materials.is_empty() {
            return Err(Error::Config("material table is empty".into()));
        }
        if self.bands_hz != BAND_CENTERS_HZ {
            return Err(Error::Config(format!(
                "material table bands {:?} differ from {:?}",
                self.bands_hz, BAND_CENTERS_HZ
            )));
        }
        for m in &self.materials {
            m.validate()?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Material> {
        self.materials
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::UnknownMaterial(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_table_has_twelve_valid_materials() {
        let t = MaterialTable::builtin();
        assert_eq!(t.len(), 12);
        assert_eq!(t.version, 1);
        for m in &t.materials {
            assert!(m.absorption.iter().all(|&a| a > 0.0 && a <= 1.0));
        }
        assert!(t.get("carpet_on_concrete").is_ok());
        assert!(matches!(t.get("foam"), Err(Error::UnknownMaterial(_))));
    }

    #[test]
    fn rejects_out_of_range_absorption() {
        assert!(Material::uniform("x", 0.0).is_err());
        assert!(Material::uniform("x", 1.2).is_err());
        assert!(Material::uniform("x", 1.0).is_ok());
    }

    #[test]
    fn reflection_is_sqrt_of_reflected_energy() {
        let m = Material::uniform("x", 0.36).unwrap();
        assert!((m.reflection()[0] - 0.8).abs() < 1e-12);
    }
}
