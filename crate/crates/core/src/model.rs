//! Problem definition: 2-D Cartesian mesh, multigroup cross sections,
//! fixed sources and detector responses, plus the JSON deck format.
//!
//! Cells are addressed row-major: `index = j * nx + i`, with `i` running
//! west to east and `j` running south to north. Per-cell, per-group arrays
//! use `index * n_groups + g`. Areas stand in for volumes (unit depth in z).

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

/// Tolerance on the spectrum normalization.
const SPECTRUM_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DeckError {
    #[error("cannot read deck {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed deck: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid deck field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("unknown builtin problem `{0}` (expected one of labyrinth2d, box_scatter, infinite_medium, absorber_slab)")]
    UnknownBuiltin(String),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> DeckError {
    DeckError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Vacuum,
    Reflective,
}

/// Domain faces, in the order used by leakage tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    West,
    East,
    South,
    North,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::West, Side::East, Side::South, Side::North];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::West => "west",
            Side::East => "east",
            Side::South => "south",
            Side::North => "north",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundaries {
    pub west: Boundary,
    pub east: Boundary,
    pub south: Boundary,
    pub north: Boundary,
}

impl Boundaries {
    pub fn uniform(b: Boundary) -> Self {
        Self {
            west: b,
            east: b,
            south: b,
            north: b,
        }
    }

    pub fn get(&self, side: Side) -> Boundary {
        match side {
            Side::West => self.west,
            Side::East => self.east,
            Side::South => self.south,
            Side::North => self.north,
        }
    }
}

/// Uniform Cartesian mesh with one material per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub cell_material: Vec<usize>,
    pub boundary: Boundaries,
}

fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (0..=n)
        .map(|k| if k == n { hi } else { lo + k as f64 * h })
        .collect()
}

impl Mesh {
    pub fn new(
        (nx, ny): (usize, usize),
        (x_min, x_max): (f64, f64),
        (y_min, y_max): (f64, f64),
        cell_material: Vec<usize>,
        boundary: Boundaries,
    ) -> Self {
        Self {
            nx,
            ny,
            x_min,
            x_max,
            y_min,
            y_max,
            x_edges: uniform_edges(x_min, x_max, nx.max(1)),
            y_edges: uniform_edges(y_min, y_max, ny.max(1)),
            cell_material,
            boundary,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    /// Cell area in cm² (the "volume" of a cell per unit depth).
    pub fn cell_volume(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (i, j) = self.ij(cell);
        (
            0.5 * (self.x_edges[i] + self.x_edges[i + 1]),
            0.5 * (self.y_edges[j] + self.y_edges[j + 1]),
        )
    }

    /// Cell containing a point; points on an interior edge belong to the
    /// cell on the north/east side.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        if !(self.x_min..=self.x_max).contains(&x) || !(self.y_min..=self.y_max).contains(&y) {
            return None;
        }
        let i = (((x - self.x_min) / self.dx()).floor() as usize).min(self.nx - 1);
        let j = (((y - self.y_min) / self.dy()).floor() as usize).min(self.ny - 1);
        Some(self.index(i, j))
    }

    /// Cells whose centers lie inside `[x0, x1] × [y0, y1]`, row-major.
    pub fn cells_in_bbox(&self, bbox: &BBox) -> Vec<usize> {
        (0..self.n_cells())
            .filter(|&c| {
                let (x, y) = self.cell_center(c);
                x >= bbox.x_min && x <= bbox.x_max && y >= bbox.y_min && y <= bbox.y_max
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    pub sigma_t: Vec<f64>,
    /// `sigma_s[g][g2]` is the transfer cross section from group `g` to `g2`.
    pub sigma_s: Vec<Vec<f64>>,
}

impl Material {
    pub fn sigma_s_out(&self, g: usize) -> f64 {
        self.sigma_s[g].iter().sum()
    }

    pub fn sigma_a(&self, g: usize) -> f64 {
        (self.sigma_t[g] - self.sigma_s_out(g)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultigroupXs {
    pub n_groups: usize,
    pub materials: Vec<Material>,
}

impl MultigroupXs {
    /// True if any material scatters from a group into a lower-index group.
    pub fn has_upscatter(&self) -> bool {
        self.materials.iter().any(|m| {
            (0..self.n_groups).any(|g| (0..g).any(|g2| m.sigma_s[g][g2] > 0.0))
        })
    }
}

/// Reverses the energy transfer direction of every scattering matrix.
pub fn transpose_scattering(xs: &MultigroupXs) -> MultigroupXs {
    let n = xs.n_groups;
    let materials = xs
        .materials
        .iter()
        .map(|m| Material {
            name: m.name.clone(),
            sigma_t: m.sigma_t.clone(),
            sigma_s: (0..n)
                .map(|g| (0..n).map(|g2| m.sigma_s[g2][g]).collect())
                .collect(),
        })
        .collect();
    MultigroupXs {
        n_groups: n,
        materials,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// How a source or detector region was written in the deck.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Cells(Vec<[usize; 2]>),
    BBox(BBox),
    Point([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    CellRegion,
    PointInCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub region: Region,
    /// Resolved cell indices, row-major.
    pub cells: Vec<usize>,
    pub spectrum: Vec<f64>,
    /// Total emission rate S (particles/s per cm of depth).
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    pub name: String,
    pub region: Region,
    pub cells: Vec<usize>,
    pub sigma_d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemModel {
    pub mesh: Mesh,
    pub xs: MultigroupXs,
    pub sources: Vec<SourceSpec>,
    pub detectors: Vec<DetectorSpec>,
}

impl ProblemModel {
    pub fn n_groups(&self) -> usize {
        self.xs.n_groups
    }

    pub fn material_of(&self, cell: usize) -> &Material {
        &self.xs.materials[self.mesh.cell_material[cell]]
    }

    /// Total source strength S.
    pub fn total_strength(&self) -> f64 {
        self.sources.iter().map(|s| s.strength).sum()
    }

    /// Isotropic source density q[cell][g] (particles/cm²/s), summed over sources.
    pub fn source_density(&self) -> Vec<f64> {
        let g_count = self.n_groups();
        let mut q = vec![0.0; self.mesh.n_cells() * g_count];
        let dv = self.mesh.cell_volume();
        for src in &self.sources {
            let volume = src.cells.len() as f64 * dv;
            for &c in &src.cells {
                for g in 0..g_count {
                    q[c * g_count + g] += src.strength * src.spectrum[g] / volume;
                }
            }
        }
        q
    }

    /// Detector response density σ_d[cell][g], summed over detectors.
    pub fn response_density(&self) -> Vec<f64> {
        let g_count = self.n_groups();
        let mut r = vec![0.0; self.mesh.n_cells() * g_count];
        for det in &self.detectors {
            for &c in &det.cells {
                for g in 0..g_count {
                    r[c * g_count + g] += det.sigma_d[g];
                }
            }
        }
        r
    }

    /// Area of the union of all detector cells.
    pub fn detector_volume(&self) -> f64 {
        let mut hit = vec![false; self.mesh.n_cells()];
        for det in &self.detectors {
            for &c in &det.cells {
                hit[c] = true;
            }
        }
        hit.iter().filter(|&&h| h).count() as f64 * self.mesh.cell_volume()
    }

    /// Copy of the model with the scattering matrices transposed in energy.
    pub fn with_transposed_scattering(&self) -> ProblemModel {
        ProblemModel {
            xs: transpose_scattering(&self.xs),
            ..self.clone()
        }
    }

    /// Checks every structural and physical invariant of the model.
    pub fn validate(&self) -> Result<(), DeckError> {
        let mesh = &self.mesh;
        if mesh.nx == 0 || mesh.ny == 0 {
            return Err(invalid("mesh.nx/ny", "cell counts must be at least 1"));
        }
        if !(mesh.x_max > mesh.x_min) || !mesh.x_min.is_finite() || !mesh.x_max.is_finite() {
            return Err(invalid("mesh.x_min/x_max", "x edges must be strictly increasing"));
        }
        if !(mesh.y_max > mesh.y_min) || !mesh.y_min.is_finite() || !mesh.y_max.is_finite() {
            return Err(invalid("mesh.y_min/y_max", "y edges must be strictly increasing"));
        }
        if mesh.x_edges.windows(2).any(|w| w[1] <= w[0]) || mesh.y_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("mesh", "edges must be strictly increasing"));
        }
        let g_count = self.xs.n_groups;
        if g_count == 0 {
            return Err(invalid("groups.count", "at least one group is required"));
        }
        if self.xs.materials.is_empty() {
            return Err(invalid("materials", "at least one material is required"));
        }
        for (k, m) in self.xs.materials.iter().enumerate() {
            let field = format!("materials[{k}] ({})", m.name);
            if m.sigma_t.len() != g_count {
                return Err(invalid(
                    format!("{field}.sigma_t"),
                    format!("expected {g_count} entries, found {}", m.sigma_t.len()),
                ));
            }
            if m.sigma_s.len() != g_count || m.sigma_s.iter().any(|row| row.len() != g_count) {
                return Err(invalid(
                    format!("{field}.sigma_s"),
                    format!("expected a {g_count}x{g_count} matrix"),
                ));
            }
            for g in 0..g_count {
                let st = m.sigma_t[g];
                if !st.is_finite() || st < 0.0 {
                    return Err(invalid(
                        format!("{field}.sigma_t[{g}]"),
                        format!("must be finite and non-negative, found {st}"),
                    ));
                }
                for g2 in 0..g_count {
                    let ss = m.sigma_s[g][g2];
                    if !ss.is_finite() || ss < 0.0 {
                        return Err(invalid(
                            format!("{field}.sigma_s[{g}][{g2}]"),
                            format!("must be finite and non-negative, found {ss}"),
                        ));
                    }
                }
                let out = m.sigma_s_out(g);
                if out > st * (1.0 + 1e-12) {
                    return Err(invalid(
                        format!("{field}.sigma_s[{g}]"),
                        format!("scattering out of group {g} ({out}) exceeds sigma_t ({st}) in material `{}`", m.name),
                    ));
                }
            }
        }
        if mesh.cell_material.len() != mesh.n_cells() {
            return Err(invalid(
                "cell_map",
                format!("expected {} entries, found {}", mesh.n_cells(), mesh.cell_material.len()),
            ));
        }
        if let Some((c, &m)) = mesh
            .cell_material
            .iter()
            .enumerate()
            .find(|(_, &m)| m >= self.xs.materials.len())
        {
            return Err(invalid(
                format!("cell_map[{c}]"),
                format!("material index {m} is not defined"),
            ));
        }
        for (k, s) in self.sources.iter().enumerate() {
            let field = format!("sources[{k}]");
            if s.spectrum.len() != g_count {
                return Err(invalid(
                    format!("{field}.spectrum"),
                    format!("expected {g_count} entries, found {}", s.spectrum.len()),
                ));
            }
            if s.spectrum.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(invalid(format!("{field}.spectrum"), "entries must be non-negative"));
            }
            let sum: f64 = s.spectrum.iter().sum();
            if (sum - 1.0).abs() > SPECTRUM_SUM_TOL {
                return Err(invalid(
                    format!("{field}.spectrum"),
                    format!("entries must sum to 1, found {sum}"),
                ));
            }
            if !s.strength.is_finite() || s.strength <= 0.0 {
                return Err(invalid(
                    format!("{field}.strength"),
                    format!("must be positive, found {}", s.strength),
                ));
            }
            if s.cells.is_empty() {
                return Err(invalid(format!("{field}.cells"), "source region contains no cells"));
            }
            if s.cells.iter().any(|&c| c >= mesh.n_cells()) {
                return Err(invalid(format!("{field}.cells"), "cell outside the mesh"));
            }
            if s.kind == SourceKind::PointInCell && s.cells.len() != 1 {
                return Err(invalid(format!("{field}.point"), "point source must resolve to one cell"));
            }
        }
        for (k, d) in self.detectors.iter().enumerate() {
            let field = format!("detectors[{k}]");
            if d.sigma_d.len() != g_count {
                return Err(invalid(
                    format!("{field}.sigma_d"),
                    format!("expected {g_count} entries, found {}", d.sigma_d.len()),
                ));
            }
            if d.sigma_d.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(invalid(format!("{field}.sigma_d"), "entries must be non-negative"));
            }
            if d.cells.is_empty() {
                return Err(invalid(format!("{field}.cells"), "detector region contains no cells"));
            }
            if d.cells.iter().any(|&c| c >= mesh.n_cells()) {
                return Err(invalid(format!("{field}.cells"), "cell outside the mesh"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Deck (JSON) representation

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeckFile<CellMap> {
    mesh: MeshDeck,
    groups: GroupsDeck,
    materials: Vec<MaterialDeck>,
    cell_map: CellMap,
    #[serde(default)]
    sources: Vec<SourceDeck>,
    #[serde(default)]
    detectors: Vec<DetectorDeck>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshDeck {
    nx: usize,
    ny: usize,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    boundary: Boundaries,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupsDeck {
    count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialDeck {
    name: String,
    sigma_t: Vec<f64>,
    sigma_s: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceDeck {
    kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cells: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    point: Option<[f64; 2]>,
    spectrum: Vec<f64>,
    strength: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectorDeck {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cells: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<BBox>,
    sigma_d: Vec<f64>,
}

fn region_from_parts(
    field: &str,
    cells: Option<Vec<[usize; 2]>>,
    bbox: Option<BBox>,
    point: Option<[f64; 2]>,
) -> Result<Region, DeckError> {
    match (cells, bbox, point) {
        (Some(c), None, None) => Ok(Region::Cells(c)),
        (None, Some(b), None) => Ok(Region::BBox(b)),
        (None, None, Some(p)) => Ok(Region::Point(p)),
        _ => Err(invalid(field, "exactly one of `cells`, `bbox` or `point` must be given")),
    }
}

fn resolve_region(mesh: &Mesh, field: &str, region: &Region) -> Result<Vec<usize>, DeckError> {
    match region {
        Region::Cells(list) => list
            .iter()
            .map(|&[i, j]| {
                if i < mesh.nx && j < mesh.ny {
                    Ok(mesh.index(i, j))
                } else {
                    Err(invalid(
                        format!("{field}.cells"),
                        format!("cell ({i}, {j}) outside {}x{} mesh", mesh.nx, mesh.ny),
                    ))
                }
            })
            .collect(),
        Region::BBox(b) => {
            if !(b.x_max >= b.x_min && b.y_max >= b.y_min) {
                return Err(invalid(format!("{field}.bbox"), "bbox bounds are inverted"));
            }
            Ok(mesh.cells_in_bbox(b))
        }
        Region::Point([x, y]) => mesh
            .locate(*x, *y)
            .map(|c| vec![c])
            .ok_or_else(|| invalid(format!("{field}.point"), format!("({x}, {y}) lies outside the mesh"))),
    }
}

/// Parses and validates a deck from JSON text.
pub fn parse_deck(text: &str) -> Result<ProblemModel, DeckError> {
    let deck: DeckFile<Vec<usize>> = serde_json::from_str(text)?;
    let mesh = Mesh::new(
        (deck.mesh.nx, deck.mesh.ny),
        (deck.mesh.x_min, deck.mesh.x_max),
        (deck.mesh.y_min, deck.mesh.y_max),
        deck.cell_map,
        deck.mesh.boundary,
    );
    if mesh.nx == 0 || mesh.ny == 0 {
        return Err(invalid("mesh.nx/ny", "cell counts must be at least 1"));
    }
    let xs = MultigroupXs {
        n_groups: deck.groups.count,
        materials: deck
            .materials
            .into_iter()
            .map(|m| Material {
                name: m.name,
                sigma_t: m.sigma_t,
                sigma_s: m.sigma_s,
            })
            .collect(),
    };
    let mut sources = Vec::with_capacity(deck.sources.len());
    for (k, s) in deck.sources.into_iter().enumerate() {
        let field = format!("sources[{k}]");
        let region = region_from_parts(&field, s.cells, s.bbox, s.point)?;
        match (s.kind, &region) {
            (SourceKind::PointInCell, Region::Point(_)) => {}
            (SourceKind::CellRegion, Region::Cells(_) | Region::BBox(_)) => {}
            (SourceKind::PointInCell, _) => {
                return Err(invalid(format!("{field}.point"), "point_in_cell sources need `point`"))
            }
            (SourceKind::CellRegion, _) => {
                return Err(invalid(field, "cell_region sources need `cells` or `bbox`"))
            }
        }
        let cells = resolve_region(&mesh, &field, &region)?;
        sources.push(SourceSpec {
            kind: s.kind,
            region,
            cells,
            spectrum: s.spectrum,
            strength: s.strength,
        });
    }
    let mut detectors = Vec::with_capacity(deck.detectors.len());
    for (k, d) in deck.detectors.into_iter().enumerate() {
        let field = format!("detectors[{k}]");
        let region = region_from_parts(&field, d.cells, d.bbox, None)?;
        let cells = resolve_region(&mesh, &field, &region)?;
        detectors.push(DetectorSpec {
            name: d.name,
            region,
            cells,
            sigma_d: d.sigma_d,
        });
    }
    let model = ProblemModel {
        mesh,
        xs,
        sources,
        detectors,
    };
    model.validate()?;
    Ok(model)
}

/// Reads a deck file from disk.
pub fn load_deck(path: impl AsRef<Path>) -> Result<ProblemModel, DeckError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DeckError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_deck(&text)
}

fn region_parts(region: &Region) -> (Option<Vec<[usize; 2]>>, Option<BBox>, Option<[f64; 2]>) {
    match region {
        Region::Cells(c) => (Some(c.clone()), None, None),
        Region::BBox(b) => (None, Some(*b), None),
        Region::Point(p) => (None, None, Some(*p)),
    }
}

/// Serializes a model to deck JSON; `cell_map` is laid out one mesh row per line.
pub fn write_deck(model: &ProblemModel) -> String {
    let mesh = &model.mesh;
    let mut map = String::from("[");
    for j in 0..mesh.ny {
        map.push_str("\n    ");
        let row: Vec<String> = (0..mesh.nx)
            .map(|i| mesh.cell_material[mesh.index(i, j)].to_string())
            .collect();
        map.push_str(&row.join(","));
        if j + 1 < mesh.ny {
            map.push(',');
        }
    }
    map.push_str("\n  ]");
    let deck = DeckFile {
        mesh: MeshDeck {
            nx: mesh.nx,
            ny: mesh.ny,
            x_min: mesh.x_min,
            x_max: mesh.x_max,
            y_min: mesh.y_min,
            y_max: mesh.y_max,
            boundary: mesh.boundary,
        },
        groups: GroupsDeck {
            count: model.xs.n_groups,
        },
        materials: model
            .xs
            .materials
            .iter()
            .map(|m| MaterialDeck {
                name: m.name.clone(),
                sigma_t: m.sigma_t.clone(),
                sigma_s: m.sigma_s.clone(),
            })
            .collect(),
        cell_map: RawValue::from_string(map).expect("cell map is valid JSON"),
        sources: model
            .sources
            .iter()
            .map(|s| {
                let (cells, bbox, point) = region_parts(&s.region);
                SourceDeck {
                    kind: s.kind,
                    cells,
                    bbox,
                    point,
                    spectrum: s.spectrum.clone(),
                    strength: s.strength,
                }
            })
            .collect(),
        detectors: model
            .detectors
            .iter()
            .map(|d| {
                let (cells, bbox, _) = region_parts(&d.region);
                DetectorDeck {
                    name: d.name.clone(),
                    cells,
                    bbox,
                    sigma_d: d.sigma_d.clone(),
                }
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&deck).expect("deck serializes");
    out.push('\n');
    out
}

/// Names accepted by [`builtin_problem`].
pub const BUILTIN_NAMES: [&str; 4] = ["labyrinth2d", "box_scatter", "infinite_medium", "absorber_slab"];

/// Loads one of the bundled decks.
pub fn builtin_problem(name: &str) -> Result<ProblemModel, DeckError> {
    let text = match name {
        "labyrinth2d" => include_str!("../decks/labyrinth2d.json"),
        "box_scatter" => include_str!("../decks/box_scatter.json"),
        "infinite_medium" => include_str!("../decks/infinite_medium.json"),
        "absorber_slab" => include_str!("../decks/absorber_slab.json"),
        other => return Err(DeckError::UnknownBuiltin(other.to_string())),
    };
    parse_deck(text)
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::CellRegion => "cell_region",
            SourceKind::PointInCell => "point_in_cell",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "mesh": {"nx": 1, "ny": 1, "x_min": 0.0, "x_max": 1.0, "y_min": 0.0, "y_max": 1.0,
                 "boundary": {"west": "vacuum", "east": "vacuum", "south": "vacuum", "north": "vacuum"}},
        "groups": {"count": 1},
        "materials": [{"name": "absorber", "sigma_t": [1.0], "sigma_s": [[0.0]]}],
        "cell_map": [0],
        "sources": [{"kind": "cell_region", "cells": [[0, 0]], "spectrum": [1.0], "strength": 1.0}]
    }"#;

    #[test]
    fn minimal_deck_loads() {
        let m = parse_deck(MINIMAL).unwrap();
        assert_eq!(m.n_groups(), 1);
        assert_eq!((m.mesh.nx, m.mesh.ny), (1, 1));
        assert_eq!(m.source_density(), vec![1.0]);
    }

    #[test]
    fn scattering_exceeding_total_names_material_and_group() {
        let text = MINIMAL.replace(r#""sigma_s": [[0.0]]"#, r#""sigma_s": [[1.5]]"#);
        let err = parse_deck(&text).unwrap_err().to_string();
        assert!(err.contains("absorber"), "{err}");
        assert!(err.contains("sigma_s[0]"), "{err}");
    }

    #[test]
    fn negative_cross_section_rejected() {
        let text = MINIMAL.replace(r#""sigma_t": [1.0]"#, r#""sigma_t": [-1.0]"#);
        let err = parse_deck(&text).unwrap_err().to_string();
        assert!(err.contains("sigma_t[0]"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace(r#""groups": {"count": 1}"#, r#""groups": {"count": 1, "bounds": []}"#);
        assert!(matches!(parse_deck(&text), Err(DeckError::Parse(_))));
        let text = MINIMAL.replacen('{', r#"{"title": "x","#, 1);
        assert!(matches!(parse_deck(&text), Err(DeckError::Parse(_))));
    }

    #[test]
    fn out_of_range_cells_rejected() {
        let text = MINIMAL.replace(r#""cells": [[0, 0]]"#, r#""cells": [[3, 0]]"#);
        let err = parse_deck(&text).unwrap_err().to_string();
        assert!(err.contains("sources[0].cells"), "{err}");
        let text = MINIMAL.replace(r#""cell_map": [0]"#, r#""cell_map": [4]"#);
        let err = parse_deck(&text).unwrap_err().to_string();
        assert!(err.contains("cell_map[0]"), "{err}");
    }

    #[test]
    fn spectrum_must_be_normalized() {
        let text = MINIMAL.replace(r#""spectrum": [1.0]"#, r#""spectrum": [0.9]"#);
        let err = parse_deck(&text).unwrap_err().to_string();
        assert!(err.contains("spectrum"), "{err}");
    }

    #[test]
    fn transpose_examples() {
        let xs = MultigroupXs {
            n_groups: 2,
            materials: vec![Material {
                name: "m".into(),
                sigma_t: vec![5.0, 5.0],
                sigma_s: vec![vec![1.0, 2.0], vec![0.0, 3.0]],
            }],
        };
        let t = transpose_scattering(&xs);
        assert_eq!(t.materials[0].sigma_s, vec![vec![1.0, 0.0], vec![2.0, 3.0]]);
        assert_eq!(t.materials[0].sigma_t, xs.materials[0].sigma_t);
        assert_eq!(transpose_scattering(&t), xs);

        let diag = MultigroupXs {
            n_groups: 2,
            materials: vec![Material {
                name: "d".into(),
                sigma_t: vec![1.0, 1.0],
                sigma_s: vec![vec![0.5, 0.0], vec![0.0, 0.25]],
            }],
        };
        assert_eq!(transpose_scattering(&diag), diag);
    }

    #[test]
    fn builtins_load_and_validate() {
        for name in BUILTIN_NAMES {
            let m = builtin_problem(name).unwrap();
            m.validate().unwrap();
        }
        assert!(matches!(builtin_problem("nope"), Err(DeckError::UnknownBuiltin(_))));
    }

    #[test]
    fn infinite_medium_is_reflective_and_uniform() {
        let m = builtin_problem("infinite_medium").unwrap();
        assert_eq!(m.xs.materials.len(), 1);
        assert_eq!(m.mesh.boundary, Boundaries::uniform(Boundary::Reflective));
        let q = m.source_density();
        assert!(q.iter().all(|&v| v == q[0] && v > 0.0));
    }

    #[test]
    fn labyrinth_source_and_detector_positions() {
        let m = builtin_problem("labyrinth2d").unwrap();
        assert_eq!(m.sources.len(), 1);
        let src = &m.sources[0];
        assert_eq!(src.kind, SourceKind::PointInCell);
        assert_eq!(src.region, Region::Point([-75.0, 0.0]));
        let (cx, _) = m.mesh.cell_center(src.cells[0]);
        assert_eq!(cx, -75.0);
        assert_eq!(m.detectors.len(), 1);
        let det = &m.detectors[0];
        let n = det.cells.len() as f64;
        let (sx, sy) = det
            .cells
            .iter()
            .map(|&c| m.mesh.cell_center(c))
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        assert!((sx / n - 75.0).abs() < 1e-9 && (sy / n + 15.0).abs() < 1e-9);
        assert!((m.detector_volume() - 100.0).abs() < 1e-9);
        let names: Vec<&str> = m.xs.materials.iter().map(|m| m.name.as_str()).collect();
        for want in ["air", "concrete", "detector"] {
            assert!(names.contains(&want), "{names:?}");
        }
        assert!(m.mesh.boundary == Boundaries::uniform(Boundary::Vacuum));
    }

    #[test]
    fn absorber_slab_layout() {
        let m = builtin_problem("absorber_slab").unwrap();
        assert_eq!(m.n_groups(), 1);
        assert_eq!(m.xs.materials[0].sigma_s, vec![vec![0.0]]);
        assert_eq!(m.sources[0].cells, vec![0]);
    }
}
