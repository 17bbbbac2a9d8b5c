//! JSON run configuration in engineering units.
//!
//! Geometry is given in millimeters, block power in W/mm², heat transfer
//! coefficients in W/(m²·K) and temperatures in °C. Every key is optional
//! and falls back to the default chip and generation settings; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chipmodel::{BlockCounts, ChipSpec, Layer, LayerRole, Material, Placement, PowerRange, PowerRanges, TsvSpec};
use crate::discretize::BoundarySpec;
use crate::grid::GridSpec;
use crate::pipeline::{GenerationConfig, Method, NoiseConfig};
use crate::solvers::{Preconditioner, SolverConfig};
use crate::{Error, Result};

const MM: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialConfig {
    /// `"silicon"`, `"copper"` or `"tim"`.
    Named(String),
    Custom {
        name: String,
        /// W/(m·K).
        k: f64,
    },
}

impl MaterialConfig {
    fn resolve(&self) -> Result<Material> {
        match self {
            MaterialConfig::Named(n) => match n.as_str() {
                "silicon" => Ok(Material::silicon()),
                "copper" => Ok(Material::copper()),
                "tim" => Ok(Material::tim()),
                other => Err(Error::InvalidConfig(format!("unknown material {other:?}"))),
            },
            MaterialConfig::Custom { name, k } => Ok(Material::new(name, *k)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub role: LayerRole,
    pub thickness_mm: f64,
    pub material: MaterialConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsvConfig {
    pub count: usize,
    pub side_mm: f64,
    #[serde(default = "copper")]
    pub material: MaterialConfig,
}

fn copper() -> MaterialConfig {
    MaterialConfig::Named("copper".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChipConfig {
    /// Lateral size `(x, y)`; the height is the sum of layer thicknesses.
    pub extent_mm: [f64; 2],
    /// Bottom to top.
    pub layers: Vec<LayerConfig>,
    pub block_counts: BlockCounts,
    /// Areal block power densities, W/mm².
    pub power_w_per_mm2: PowerRanges,
    pub tsvs: Option<TsvConfig>,
    pub placement: Placement,
}

impl Default for ChipConfig {
    /// Three 0.15 mm silicon device layers (cache, cache, core from the
    /// bottom), each on a 0.02 mm TIM layer, over 10 mm x 10 mm.
    fn default() -> Self {
        let layer = |role, thickness_mm, material: &str| LayerConfig {
            role,
            thickness_mm,
            material: MaterialConfig::Named(material.into()),
        };
        let mut layers = Vec::new();
        for role in [LayerRole::Cache, LayerRole::Cache, LayerRole::Core] {
            layers.push(layer(LayerRole::Tim, 0.02, "tim"));
            layers.push(layer(role, 0.15, "silicon"));
        }
        ChipConfig {
            extent_mm: [10.0, 10.0],
            layers,
            block_counts: BlockCounts {
                core_blocks: 156,
                high_power: 6,
                caches_per_layer: 2,
            },
            power_w_per_mm2: PowerRanges {
                high: PowerRange::new(3.0, 6.0),
                normal: PowerRange::new(0.5, 1.0),
                cache: PowerRange::new(0.02, 0.04),
            },
            tsvs: Some(TsvConfig {
                count: 16,
                side_mm: 0.2,
                material: copper(),
            }),
            placement: Placement::default(),
        }
    }
}

impl ChipConfig {
    pub fn to_spec(&self) -> Result<ChipSpec> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut z_mm = 0.0;
        for l in &self.layers {
            let top = z_mm + l.thickness_mm;
            layers.push(Layer {
                z_range: [z_mm * MM, top * MM],
                material: l.material.resolve()?,
                role: l.role,
            });
            z_mm = top;
        }
        let tsv = match &self.tsvs {
            Some(t) => Some(TsvSpec {
                count: t.count,
                side: t.side_mm * MM,
                material: t.material.resolve()?,
            }),
            None => None,
        };
        let spec = ChipSpec {
            extent: [self.extent_mm[0] * MM, self.extent_mm[1] * MM, z_mm * MM],
            layers,
            block_counts: self.block_counts,
            power_ranges: self.power_w_per_mm2,
            tsv,
            placement: self.placement,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase", deny_unknown_fields)]
pub enum BoundaryConfig {
    /// Fixed temperature `u0` (°C) on all faces.
    Dirichlet { u0: f64 },
    /// Convection with `h` (W/(m²·K)) to ambient `u_inf` (°C) on all faces.
    Robin { h: f64, u_inf: f64 },
    /// Convection on top and bottom, fixed temperature on the sides.
    Mixed { h: f64, u_inf: f64, u0: f64 },
    /// Explicit per-face conditions.
    Faces { faces: BoundarySpec },
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig::Mixed {
            h: 3e4,
            u_inf: 50.0,
            u0: 50.0,
        }
    }
}

impl BoundaryConfig {
    pub fn to_spec(&self) -> BoundarySpec {
        match *self {
            BoundaryConfig::Dirichlet { u0 } => BoundarySpec::dirichlet(u0),
            BoundaryConfig::Robin { h, u_inf } => BoundarySpec::robin(h, u_inf),
            BoundaryConfig::Mixed { h, u_inf, u0 } => BoundarySpec::mixed(h, u_inf, u0),
            BoundaryConfig::Faces { faces } => faces,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Used by `generate` when no method is given on the command line.
    pub method: Option<Method>,
    /// Used by `generate` when no output directory is given.
    pub out: Option<PathBuf>,
    pub n_data: usize,
    pub n_basis: usize,
    pub n_k: usize,
    /// Cell counts `(nx, ny, nz)`.
    pub grid: [usize; 3],
    pub master_seed: u64,
    /// CG settings of the direct method.
    pub solver: SolverConfig,
    /// Block CG settings of the BlocKOA basis solves.
    pub basis_solver: SolverConfig,
    pub noise: NoiseConfig,
    pub boundary: BoundaryConfig,
    pub chip: ChipConfig,
}

/// Default BlocKOA basis tolerance. Samples are exact whatever the basis
/// accuracy, because their power maps come from the operator action.
pub const DEFAULT_BASIS_TOL: f64 = 1e-6;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: None,
            out: None,
            n_data: 500,
            n_basis: 50,
            n_k: 5,
            grid: [24, 24, 12],
            master_seed: 0,
            solver: SolverConfig::default(),
            basis_solver: SolverConfig {
                preconditioner: Preconditioner::Jacobi,
                ..SolverConfig::with_tol(DEFAULT_BASIS_TOL)
            },
            noise: NoiseConfig::Uniform { lo: -0.01, hi: 0.01 },
            boundary: BoundaryConfig::default(),
            chip: ChipConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_generation(&self) -> Result<GenerationConfig> {
        let chip = self.chip.to_spec()?;
        let grid = GridSpec::new(self.grid, chip.extent)?;
        Ok(GenerationConfig {
            n_data: self.n_data,
            n_basis: self.n_basis,
            n_k: self.n_k,
            solver: self.solver,
            basis_solver: self.basis_solver,
            noise: self.noise,
            master_seed: self.master_seed,
            grid,
            bc: self.boundary.to_spec(),
            chip,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_reference_chip() {
        let cfg = RunConfig::default().to_generation().unwrap();
        let reference = ChipSpec::default();
        assert_eq!(cfg.chip.layers.len(), reference.layers.len());
        for (a, b) in cfg.chip.layers.iter().zip(&reference.layers) {
            assert_eq!(a.role, b.role);
            assert_eq!(a.material, b.material);
            for i in 0..2 {
                assert!((a.z_range[i] - b.z_range[i]).abs() < 1e-15);
            }
        }
        assert!((cfg.chip.extent[2] - 0.51e-3).abs() < 1e-15);
        cfg.validate().unwrap();
        assert_eq!(cfg.eta(), 10);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg = RunConfig::from_json(r#"{"n_data": 3, "grid": [8, 8, 4], "boundary": {"preset": "robin", "h": 1e4, "u_inf": 25}}"#).unwrap();
        assert_eq!(cfg.n_data, 3);
        assert_eq!(cfg.n_basis, 50);
        let g = cfg.to_generation().unwrap();
        assert_eq!(g.bc, BoundarySpec::robin(1e4, 25.0));
        assert_eq!(g.grid.counts, [8, 8, 4]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"n_dta": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"chip": {"extent": [1, 1]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"solver": {"rel_tol": 1e-6, "tol": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"boundary": {"preset": "robin", "h": 1, "u0": 3}}"#).is_err());
        assert!(RunConfig::from_json("{").is_err());
    }

    #[test]
    fn custom_material_and_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.chip.layers[0].material = MaterialConfig::Custom {
            name: "epoxy".into(),
            k: 1.5,
        };
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_generation().unwrap().chip.layers[0].material.conductivity, 1.5);
        cfg.chip.layers[0].material = MaterialConfig::Named("unobtainium".into());
        assert!(cfg.to_generation().is_err());
    }
}
