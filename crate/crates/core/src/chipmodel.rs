//! Parametric layered chip, randomized floorplans and grid rasterization.
//!
//! All lengths are meters and conductivities W/(m·K). Block power densities
//! stay areal (W/mm²) until [`rasterize_power`] spreads them over the owning
//! layer's thickness.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{GridSpec, ScalarField, Unit};
use crate::seeds;
use crate::{Error, Result};

const MM: f64 = 1e-3;
/// W/mm² -> W/m².
const PER_MM2: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    /// W/(m·K).
    pub conductivity: f64,
}

impl Material {
    pub fn new(name: &str, conductivity: f64) -> Self {
        Material {
            name: name.to_string(),
            conductivity,
        }
    }

    pub fn silicon() -> Self {
        Material::new("silicon", 150.0)
    }

    pub fn copper() -> Self {
        Material::new("copper", 413.0)
    }

    /// Equivalent conductivity of bumps, redistribution layers, pads and underfill.
    pub fn tim() -> Self {
        Material::new("tim", 40.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRole {
    Core,
    Cache,
    Tim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[bottom, top)` in meters.
    pub z_range: [f64; 2],
    pub material: Material,
    pub role: LayerRole,
}

impl Layer {
    pub fn thickness(&self) -> f64 {
        self.z_range[1] - self.z_range[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockCounts {
    pub core_blocks: usize,
    pub high_power: usize,
    pub caches_per_layer: usize,
}

/// Closed interval of areal power densities in W/mm².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerRange {
    pub lo: f64,
    pub hi: f64,
}

impl PowerRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        PowerRange { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        let u: f64 = rng.random();
        (self.lo + (self.hi - self.lo) * u).min(self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerRanges {
    pub high: PowerRange,
    pub normal: PowerRange,
    pub cache: PowerRange,
}

/// Square copper pillars spanning the full chip height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsvSpec {
    pub count: usize,
    /// Side of the square cross-section, meters.
    pub side: f64,
    pub material: Material,
}

/// Virtual placement grid used by the block placer.
///
/// Block sides are drawn uniformly (in virtual cells) from the inclusive
/// ranges below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub virtual_grid: [usize; 2],
    pub core_block_cells: [usize; 2],
    pub cache_block_cells: [usize; 2],
    pub max_retries: usize,
}

impl Default for Placement {
    fn default() -> Self {
        Placement {
            virtual_grid: [40, 40],
            core_block_cells: [1, 3],
            cache_block_cells: [10, 16],
            max_retries: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipSpec {
    /// `(x, y, z)` lengths in meters.
    pub extent: [f64; 3],
    /// Ordered bottom to top.
    pub layers: Vec<Layer>,
    pub block_counts: BlockCounts,
    pub power_ranges: PowerRanges,
    pub tsv: Option<TsvSpec>,
    #[serde(default)]
    pub placement: Placement,
}

impl Default for ChipSpec {
    /// 10 mm x 10 mm x 0.51 mm stack: a core layer on top of two L2 cache
    /// layers, each 0.15 mm device layer sitting on a 0.02 mm TIM layer.
    fn default() -> Self {
        let mut layers = Vec::new();
        let mut z = 0.0;
        for role in [LayerRole::Cache, LayerRole::Cache, LayerRole::Core] {
            let tim_top = z + 0.02 * MM;
            layers.push(Layer {
                z_range: [z, tim_top],
                material: Material::tim(),
                role: LayerRole::Tim,
            });
            z = tim_top + 0.15 * MM;
            layers.push(Layer {
                z_range: [tim_top, z],
                material: Material::silicon(),
                role,
            });
        }
        ChipSpec {
            extent: [10.0 * MM, 10.0 * MM, z],
            layers,
            block_counts: BlockCounts {
                core_blocks: 156,
                high_power: 6,
                caches_per_layer: 2,
            },
            power_ranges: PowerRanges {
                high: PowerRange::new(3.0, 6.0),
                normal: PowerRange::new(0.5, 1.0),
                cache: PowerRange::new(0.02, 0.04),
            },
            tsv: Some(TsvSpec {
                count: 16,
                side: 0.2 * MM,
                material: Material::copper(),
            }),
            placement: Placement::default(),
        }
    }
}

impl ChipSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.extent.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return bad(format!("extent must be positive, got {:?}", self.extent));
        }
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        let tol = 1e-9 * self.extent[2];
        let mut z = 0.0;
        for (i, layer) in self.layers.iter().enumerate() {
            let [z0, z1] = layer.z_range;
            if (z0 - z).abs() > tol || !(z1 > z0) {
                return bad(format!(
                    "layer {i} z-range {:?} does not continue the stack at {z}",
                    layer.z_range
                ));
            }
            if !(layer.material.conductivity.is_finite() && layer.material.conductivity > 0.0) {
                return bad(format!("layer {i} conductivity must be positive"));
            }
            z = z1;
        }
        if (z - self.extent[2]).abs() > tol {
            return bad(format!(
                "layers end at {z} m but the chip is {} m tall",
                self.extent[2]
            ));
        }
        let counts = &self.block_counts;
        if counts.core_blocks == 0 {
            return bad("core_blocks must be at least 1".into());
        }
        if counts.high_power > counts.core_blocks {
            return bad(format!(
                "high_power ({}) exceeds core_blocks ({})",
                counts.high_power, counts.core_blocks
            ));
        }
        let core_layers = self.layers_with_role(LayerRole::Core).count();
        if core_layers != 1 {
            return bad(format!("exactly one core layer is required, found {core_layers}"));
        }
        for (name, r) in [
            ("high", self.power_ranges.high),
            ("normal", self.power_ranges.normal),
            ("cache", self.power_ranges.cache),
        ] {
            if !(r.lo > 0.0 && r.lo <= r.hi && r.hi.is_finite()) {
                return bad(format!("{name} power range must satisfy 0 < lo <= hi, got {r:?}"));
            }
        }
        let p = &self.placement;
        if p.virtual_grid.contains(&0) {
            return bad("placement grid must be non-empty".into());
        }
        for (name, [lo, hi]) in [
            ("core", p.core_block_cells),
            ("cache", p.cache_block_cells),
        ] {
            if lo == 0 || lo > hi || hi > p.virtual_grid[0].min(p.virtual_grid[1]) {
                return bad(format!("{name} block size range [{lo}, {hi}] does not fit the placement grid"));
            }
        }
        if let Some(tsv) = &self.tsv {
            let cell = (self.extent[0] / p.virtual_grid[0] as f64)
                .min(self.extent[1] / p.virtual_grid[1] as f64);
            if !(tsv.side > 0.0 && tsv.side <= cell) {
                return bad(format!(
                    "TSV side {} m must be positive and at most one placement cell ({cell} m)",
                    tsv.side
                ));
            }
            if !(tsv.material.conductivity > 0.0 && tsv.material.conductivity.is_finite()) {
                return bad("TSV conductivity must be positive".into());
            }
            if tsv.count > p.virtual_grid[0] * p.virtual_grid[1] {
                return bad("more TSVs than placement cells".into());
            }
        }
        Ok(())
    }

    fn layers_with_role(&self, role: LayerRole) -> impl Iterator<Item = (usize, &Layer)> {
        self.layers.iter().enumerate().filter(move |(_, l)| l.role == role)
    }

    /// Index of the layer containing height `z` (clamped to the stack).
    pub fn layer_at(&self, z: f64) -> usize {
        self.layers
            .iter()
            .position(|l| z < l.z_range[1])
            .unwrap_or(self.layers.len() - 1)
    }

    pub fn range_for(&self, role: BlockRole) -> PowerRange {
        match role {
            BlockRole::High => self.power_ranges.high,
            BlockRole::Normal => self.power_ranges.normal,
            BlockRole::Cache => self.power_ranges.cache,
        }
    }
}

/// Axis-aligned box in meters, half-open `[lo, hi)` on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= p[a] && p[a] < self.hi[a])
    }

    fn overlaps_xy(&self, other: &Aabb) -> bool {
        (0..2).all(|a| self.lo[a] < other.hi[a] && other.lo[a] < self.hi[a])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockRole {
    High,
    Normal,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub bbox: Aabb,
    pub layer: usize,
    pub role: BlockRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialRegion {
    pub bbox: Aabb,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Floorplan {
    pub id: usize,
    pub blocks: Vec<Block>,
    pub material_regions: Vec<MaterialRegion>,
}

impl Floorplan {
    pub fn count(&self, role: BlockRole) -> usize {
        self.blocks.iter().filter(|b| b.role == role).count()
    }
}

/// Areal power density (W/mm²) per block, in floorplan block order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAssignment {
    pub floorplan_id: usize,
    pub densities: Vec<f64>,
}

/// Occupancy map on the virtual placement grid of one layer.
struct Occupancy {
    dims: [usize; 2],
    used: Vec<bool>,
}

impl Occupancy {
    fn new(dims: [usize; 2]) -> Self {
        Occupancy {
            dims,
            used: vec![false; dims[0] * dims[1]],
        }
    }

    fn is_free(&self, x: usize, y: usize, w: usize, h: usize) -> bool {
        (y..y + h).all(|j| (x..x + w).all(|i| !self.used[i + self.dims[0] * j]))
    }

    fn mark(&mut self, x: usize, y: usize, w: usize, h: usize) {
        for j in y..y + h {
            for i in x..x + w {
                self.used[i + self.dims[0] * j] = true;
            }
        }
    }

    /// Rejection-sample a free `w x h` rectangle with side lengths drawn
    /// from `sizes`.
    fn place<R: Rng>(
        &mut self,
        rng: &mut R,
        sizes: [usize; 2],
        retries: usize,
    ) -> Option<[usize; 4]> {
        for _ in 0..retries {
            let w = rng.random_range(sizes[0]..=sizes[1]);
            let h = rng.random_range(sizes[0]..=sizes[1]);
            let x = rng.random_range(0..=self.dims[0] - w);
            let y = rng.random_range(0..=self.dims[1] - h);
            if self.is_free(x, y, w, h) {
                self.mark(x, y, w, h);
                return Some([x, y, w, h]);
            }
        }
        None
    }
}

/// Builds `n_k` randomized floorplans. Floorplan `j` depends only on
/// `(spec, seed, j)`.
pub fn build_floorplans(spec: &ChipSpec, n_k: usize, seed: u64) -> Result<Vec<Floorplan>> {
    spec.validate()?;
    if n_k == 0 {
        return Err(Error::InvalidSpec("n_k must be at least 1".into()));
    }
    (0..n_k)
        .map(|j| build_floorplan(spec, j, seeds::derive(seed, seeds::FLOORPLAN, j as u64)))
        .collect()
}

fn build_floorplan(spec: &ChipSpec, id: usize, seed: u64) -> Result<Floorplan> {
    let mut rng = seeds::rng(seed);
    let p = &spec.placement;
    let unit = [
        spec.extent[0] / p.virtual_grid[0] as f64,
        spec.extent[1] / p.virtual_grid[1] as f64,
    ];
    let to_box = |[x, y, w, h]: [usize; 4], layer: &Layer| Aabb {
        lo: [x as f64 * unit[0], y as f64 * unit[1], layer.z_range[0]],
        hi: [
            (x + w) as f64 * unit[0],
            (y + h) as f64 * unit[1],
            layer.z_range[1],
        ],
    };

    let mut blocks = Vec::new();
    let counts = spec.block_counts;
    let (core_idx, core_layer) = spec
        .layers_with_role(LayerRole::Core)
        .next()
        .expect("validated: one core layer");
    let mut occ = Occupancy::new(p.virtual_grid);
    let high: Vec<usize> = sample(&mut rng, counts.core_blocks, counts.high_power).into_vec();
    for b in 0..counts.core_blocks {
        let cells = occ.place(&mut rng, p.core_block_cells, p.max_retries).ok_or_else(|| {
            Error::InvalidSpec(format!(
                "could not place core block {b} of {} after {} attempts",
                counts.core_blocks, p.max_retries
            ))
        })?;
        let role = if high.contains(&b) {
            BlockRole::High
        } else {
            BlockRole::Normal
        };
        blocks.push(Block {
            bbox: to_box(cells, core_layer),
            layer: core_idx,
            role,
        });
    }

    for (idx, layer) in spec.layers_with_role(LayerRole::Cache) {
        let mut occ = Occupancy::new(p.virtual_grid);
        for c in 0..counts.caches_per_layer {
            let cells = occ.place(&mut rng, p.cache_block_cells, p.max_retries).ok_or_else(|| {
                Error::InvalidSpec(format!(
                    "could not place cache {c} in layer {idx} after {} attempts",
                    p.max_retries
                ))
            })?;
            blocks.push(Block {
                bbox: to_box(cells, layer),
                layer: idx,
                role: BlockRole::Cache,
            });
        }
    }

    let mut material_regions = Vec::new();
    if let Some(tsv) = &spec.tsv {
        let cells = p.virtual_grid[0] * p.virtual_grid[1];
        for slot in sample(&mut rng, cells, tsv.count).into_iter() {
            let (x, y) = (slot % p.virtual_grid[0], slot / p.virtual_grid[0]);
            let cx = (x as f64 + 0.5) * unit[0];
            let cy = (y as f64 + 0.5) * unit[1];
            let half = 0.5 * tsv.side;
            material_regions.push(MaterialRegion {
                bbox: Aabb {
                    lo: [cx - half, cy - half, 0.0],
                    hi: [cx + half, cy + half, spec.extent[2]],
                },
                material: tsv.material.clone(),
            });
        }
    }

    debug_assert!(blocks.iter().enumerate().all(|(i, a)| blocks[..i]
        .iter()
        .all(|b| a.layer != b.layer || !a.bbox.overlaps_xy(&b.bbox))));

    Ok(Floorplan {
        id,
        blocks,
        material_regions,
    })
}

/// Uniform draw of one density per block from its role's range.
pub fn sample_power(fp: &Floorplan, spec: &ChipSpec, seed: u64) -> PowerAssignment {
    let mut rng = seeds::rng(seed);
    PowerAssignment {
        floorplan_id: fp.id,
        densities: fp
            .blocks
            .iter()
            .map(|b| spec.range_for(b.role).sample(&mut rng))
            .collect(),
    }
}

/// Conductivity at every cell center: the layer's base material unless a
/// material region covers the center (later regions win).
pub fn rasterize_conductivity(fp: &Floorplan, spec: &ChipSpec, grid: &GridSpec) -> ScalarField {
    let [nx, ny, nz] = grid.counts;
    let mut values = Vec::with_capacity(grid.len());
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let c = grid.cell_center(ix, iy, iz);
                let mut k = spec.layers[spec.layer_at(c[2])].material.conductivity;
                for region in &fp.material_regions {
                    if region.bbox.contains(c) {
                        k = region.material.conductivity;
                    }
                }
                values.push(k);
            }
        }
    }
    ScalarField::new(*grid, values, Unit::Conductivity).expect("conductivities are finite")
}

/// z-cells that carry a layer's power: cells whose centers fall inside the
/// layer, or the single cell containing the layer mid-plane when the layer
/// is thinner than the grid resolves.
fn layer_cells(layer: &Layer, grid: &GridSpec) -> Vec<usize> {
    let dz = grid.spacing()[2];
    let nz = grid.counts[2];
    let inside: Vec<usize> = (0..nz)
        .filter(|&iz| {
            let z = (iz as f64 + 0.5) * dz;
            layer.z_range[0] <= z && z < layer.z_range[1]
        })
        .collect();
    if !inside.is_empty() {
        return inside;
    }
    let mid = 0.5 * (layer.z_range[0] + layer.z_range[1]);
    vec![((mid / dz) as usize).min(nz - 1)]
}

/// Volumetric power map in W/m³.
///
/// Each block's areal density is spread over the grid cells of its layer:
/// value = density / (resolved layer thickness). Cells covered by no block
/// are zero. The integral `sum(q * V)` equals the block powers over their
/// rasterized footprints.
pub fn rasterize_power(
    pa: &PowerAssignment,
    fp: &Floorplan,
    spec: &ChipSpec,
    grid: &GridSpec,
) -> ScalarField {
    debug_assert_eq!(pa.densities.len(), fp.blocks.len());
    let [nx, ny, _] = grid.counts;
    let dz = grid.spacing()[2];
    let mut values = vec![0.0; grid.len()];
    let zcells: Vec<Vec<usize>> = spec.layers.iter().map(|l| layer_cells(l, grid)).collect();
    for (block, &density) in fp.blocks.iter().zip(&pa.densities) {
        let cells = &zcells[block.layer];
        let thickness = cells.len() as f64 * dz;
        let q = density * PER_MM2 / thickness;
        for iy in 0..ny {
            for ix in 0..nx {
                let c = grid.cell_center(ix, iy, 0);
                let inside = (0..2).all(|a| block.bbox.lo[a] <= c[a] && c[a] < block.bbox.hi[a]);
                if inside {
                    for &iz in cells {
                        values[grid.index(ix, iy, iz)] += q;
                    }
                }
            }
        }
    }
    ScalarField::new(*grid, values, Unit::PowerDensity).expect("power densities are finite")
}
