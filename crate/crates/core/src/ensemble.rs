//! Penetration-rate ensembles: models trained at different probe rates whose
//! predictions are averaged.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::SpeedField;
use crate::nn::{load_model, ConvModel, Reconstructor};
use crate::probes::ProbeInputTensor;

/// One trained member and the probe rate it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub model: ConvModel<f32>,
    pub rate: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ensemble {
    members: Vec<Member>,
}

impl Ensemble {
    /// Equal-weight ensemble.
    pub fn new(members: Vec<(ConvModel<f32>, f64)>) -> Result<Self> {
        Self::weighted(
            members
                .into_iter()
                .map(|(model, rate)| (model, rate, 1.0))
                .collect(),
        )
    }

    /// Members with non-negative weights; weights need not sum to one.
    pub fn weighted(members: Vec<(ConvModel<f32>, f64, f64)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("ensemble without members".into()));
        }
        if members.iter().any(|m| !(m.2 >= 0.0 && m.2.is_finite()))
            || members.iter().all(|m| m.2 == 0.0)
        {
            return Err(invalid(
                "ensemble weights must be non-negative, finite and not all zero",
            ));
        }
        Ok(Self {
            members: members
                .into_iter()
                .map(|(model, rate, weight)| Member {
                    model,
                    rate,
                    weight,
                })
                .collect(),
        })
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Weighted mean of the members' predictions. A single member returns its
    /// own prediction unchanged.
    pub fn predict(&self, input: &ProbeInputTensor) -> Result<SpeedField> {
        let preds = self
            .members
            .iter()
            .map(|m| m.model.predict(input))
            .collect::<Result<Vec<_>>>()?;
        if preds.len() == 1 {
            return Ok(preds.into_iter().next().expect("one member"));
        }
        let total: f64 = self.members.iter().map(|m| m.weight).sum();
        let grid = *preds[0].grid();
        let mut acc = vec![0.0; grid.len()];
        for (p, m) in preds.iter().zip(&self.members) {
            for (a, v) in acc.iter_mut().zip(p.values()) {
                *a += m.weight * v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= total);
        SpeedField::new(grid, acc)
    }

    /// Loads every member listed in a manifest; relative paths resolve
    /// against the manifest's directory.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest: EnsembleManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let members = manifest
            .members
            .into_iter()
            .map(|e| {
                let p = if e.path.is_absolute() {
                    e.path
                } else {
                    base.join(e.path)
                };
                Ok((load_model(&p)?, e.rate, e.weight))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::weighted(members)
    }
}

/// Convenience form of [`Ensemble::predict`].
pub fn ensemble_predict(ensemble: &Ensemble, input: &ProbeInputTensor) -> Result<SpeedField> {
    ensemble.predict(input)
}

impl Reconstructor for Ensemble {
    fn reconstruct(&self, input: &ProbeInputTensor) -> Result<SpeedField> {
        self.predict(input)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub rate: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// JSON list of member model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub members: Vec<ManifestEntry>,
}

impl EnsembleManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeGrid;
    use crate::nn::{save_model, Architecture, LayerSpec, MaskSpec};

    fn small(seed: u64) -> ConvModel<f32> {
        let arch = Architecture {
            input_channels: 3,
            encoder: vec![LayerSpec::new(3, 3, 2)],
            decoder: vec![LayerSpec::new(3, 3, 2)],
            output: LayerSpec::new(3, 3, 1),
        };
        ConvModel::new(arch, MaskSpec::Isotropic, 128.0, seed).unwrap()
    }

    fn input() -> ProbeInputTensor {
        let grid = SpaceTimeGrid::standard(8, 8).unwrap();
        let ch = (0..8 * 8 * 3).map(|v| (1 + v * 37 % 255) as u8).collect();
        ProbeInputTensor::from_channels(grid, ch).unwrap()
    }

    #[test]
    fn single_member_is_exact() {
        let m = small(3);
        let e = Ensemble::new(vec![(m.clone(), 0.05)]).unwrap();
        assert_eq!(e.predict(&input()).unwrap(), m.predict(&input()).unwrap());
    }

    #[test]
    fn mean_of_two() {
        let (a, b) = (small(1), small(2));
        let e = Ensemble::new(vec![(a.clone(), 0.05), (b.clone(), 0.7)]).unwrap();
        let (pa, pb) = (a.predict(&input()).unwrap(), b.predict(&input()).unwrap());
        let pe = e.predict(&input()).unwrap();
        for ((x, y), z) in pa.values().iter().zip(pb.values()).zip(pe.values()) {
            assert!(((x + y) / 2.0 - z).abs() < 1e-12);
        }
        assert!(Ensemble::new(vec![]).is_err());
        assert!(Ensemble::weighted(vec![(a, 0.05, 0.0)]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&small(1), dir.path().join("a.bin")).unwrap();
        save_model(&small(2), dir.path().join("b.bin")).unwrap();
        let man = EnsembleManifest {
            members: vec![
                ManifestEntry {
                    path: "a.bin".into(),
                    rate: 0.05,
                    weight: 1.0,
                },
                ManifestEntry {
                    path: "b.bin".into(),
                    rate: 0.7,
                    weight: 1.0,
                },
            ],
        };
        let p = dir.path().join("ensemble.json");
        man.write(&p).unwrap();
        let e = Ensemble::from_manifest(&p).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.members()[1].model, small(2));
    }
}
