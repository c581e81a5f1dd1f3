//! Multigroup discrete-ordinates solver on the XY mesh.
//!
//! Diamond-difference transport sweeps with set-to-zero negative flux fixup,
//! wrapped in within-group source iteration and Gauss–Seidel over groups.
//! The adjoint problem is solved as a forward problem with the scattering
//! matrix transposed in energy and the group order reversed; the resulting
//! angular flux is stored at the reversed direction so that `psi_adj[m]` is
//! the importance of a particle travelling along `Ω_m`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Boundary, Mesh, MultigroupXs, ProblemModel, Side};
use crate::quadrature::{Direction, QuadratureSet};

const FOUR_PI: f64 = 4.0 * PI;

/// Convergence of reflective edge fluxes within one transport sweep.
const BOUNDARY_TOL: f64 = 1e-13;
const MAX_BOUNDARY_SWEEPS: usize = 100_000;
/// Give up on the edge-flux iteration after this many sweeps without progress.
const BOUNDARY_STALL: usize = 50;

/// Denominator floor of the pointwise relative-change metric.
pub const FLUX_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Forward,
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Set negative outgoing edge fluxes to zero (and rebalance the cell).
    pub fixup: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 2000,
            fixup: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum SnError {
    #[error("source iteration did not converge (max relative change {:.3e} after {} outer passes)", .0.report.max_rel_change, .0.report.outer_iterations)]
    NotConverged(Box<SnSolution>),
    #[error("adjoint source has {found} entries, expected {expected} (cells x groups)")]
    InvalidAdjointSource { expected: usize, found: usize },
    #[error("adjoint source must be finite and non-negative")]
    NegativeAdjointSource,
    #[error("no adjoint source: the model defines no detector response")]
    NoAdjointSource,
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("field dimensions do not match: {0}")]
    DimensionMismatch(String),
}

/// Boundary partial currents of one group: (outflow, inflow) per side.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SideCurrents {
    pub outflow: [f64; 4],
    pub inflow: [f64; 4],
}

impl SideCurrents {
    pub fn net_leakage(&self) -> f64 {
        (0..4).map(|s| self.outflow[s] - self.inflow[s]).sum()
    }
}

/// ψ[cell][group][direction], stored group-major then direction-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularFluxField {
    pub nx: usize,
    pub ny: usize,
    pub n_groups: usize,
    pub n_dirs: usize,
    /// Orientation of `values`; boundary currents are always in sweep orientation.
    pub mode: Mode,
    values: Vec<f64>,
    pub currents: Vec<SideCurrents>,
}

impl AngularFluxField {
    pub fn zeros(nx: usize, ny: usize, n_groups: usize, n_dirs: usize, mode: Mode) -> Self {
        Self {
            nx,
            ny,
            n_groups,
            n_dirs,
            mode,
            values: vec![0.0; nx * ny * n_groups * n_dirs],
            currents: vec![SideCurrents::default(); n_groups],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    fn offset(&self, cell: usize, g: usize, m: usize) -> usize {
        (g * self.n_dirs + m) * self.n_cells() + cell
    }

    pub fn get(&self, cell: usize, g: usize, m: usize) -> f64 {
        self.values[self.offset(cell, g, m)]
    }

    pub fn set(&mut self, cell: usize, g: usize, m: usize, v: f64) {
        let k = self.offset(cell, g, m);
        self.values[k] = v;
    }

    /// All cells for one (group, direction).
    pub fn direction_slice(&self, g: usize, m: usize) -> &[f64] {
        let n = self.n_cells();
        let start = (g * self.n_dirs + m) * n;
        &self.values[start..start + n]
    }

    /// Angular spectrum at one (cell, group).
    pub fn spectrum(&self, cell: usize, g: usize) -> Vec<f64> {
        (0..self.n_dirs).map(|m| self.get(cell, g, m)).collect()
    }

    pub fn same_shape(&self, other: &AngularFluxField) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.n_groups == other.n_groups
            && self.n_dirs == other.n_dirs
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Scalar flux Σ_m w ψ per cell and group.
    pub fn integrate(&self, quad: &QuadratureSet) -> ScalarFluxField {
        let n = self.n_cells();
        let mut out = ScalarFluxField::zeros(self.nx, self.ny, self.n_groups);
        for g in 0..self.n_groups {
            for c in 0..n {
                let mut s = 0.0;
                for (m, d) in quad.dirs.iter().enumerate() {
                    s += d.weight * self.values[(g * self.n_dirs + m) * n + c];
                }
                out.values[c * self.n_groups + g] = s;
            }
        }
        out
    }
}

/// φ[cell][group], laid out `cell * n_groups + g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFluxField {
    pub nx: usize,
    pub ny: usize,
    pub n_groups: usize,
    pub values: Vec<f64>,
}

impl ScalarFluxField {
    pub fn zeros(nx: usize, ny: usize, n_groups: usize) -> Self {
        Self {
            nx,
            ny,
            n_groups,
            values: vec![0.0; nx * ny * n_groups],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn get(&self, cell: usize, g: usize) -> f64 {
        self.values[cell * self.n_groups + g]
    }

    pub fn scaled(&self, k: f64) -> ScalarFluxField {
        ScalarFluxField {
            values: self.values.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub mode: Mode,
    /// Inner iterations per group (indexed by energy group).
    pub iterations: Vec<usize>,
    pub outer_iterations: usize,
    pub max_rel_change: f64,
    /// Particle balance residual per group.
    pub balance: Vec<f64>,
    /// Cells whose outgoing edge flux was clipped, summed over all sweeps.
    pub fixups: u64,
    pub converged: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnSolution {
    pub angular: AngularFluxField,
    pub scalar: ScalarFluxField,
    pub report: SolveReport,
}

/// Outgoing edge fluxes of the previous sweep, per direction, used as the
/// incoming flux of the mirrored direction on reflective faces.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFlux {
    nx: usize,
    ny: usize,
    boundary: [Boundary; 4],
    /// [side][m][face]
    out: [Vec<f64>; 4],
}

impl BoundaryFlux {
    pub fn new(mesh: &Mesh, n_dirs: usize) -> Self {
        let (nx, ny) = (mesh.nx, mesh.ny);
        let b = mesh.boundary;
        Self {
            nx,
            ny,
            boundary: [b.west, b.east, b.south, b.north],
            out: [
                vec![0.0; n_dirs * ny],
                vec![0.0; n_dirs * ny],
                vec![0.0; n_dirs * nx],
                vec![0.0; n_dirs * nx],
            ],
        }
    }

    fn faces(&self, side: Side) -> usize {
        match side {
            Side::West | Side::East => self.ny,
            Side::South | Side::North => self.nx,
        }
    }

    /// Outgoing edge flux of direction `m` through face `k` of `side`.
    pub fn outgoing(&self, side: Side, m: usize, k: usize) -> f64 {
        self.out[side.index()][m * self.faces(side) + k]
    }

    /// Incoming edge flux for direction `m` entering through `side`.
    pub fn incoming(&self, quad: &QuadratureSet, side: Side, m: usize, k: usize) -> f64 {
        match self.boundary[side.index()] {
            Boundary::Vacuum => 0.0,
            Boundary::Reflective => {
                let mirrored = match side {
                    Side::West | Side::East => quad.reflect_x(m),
                    Side::South | Side::North => quad.reflect_y(m),
                };
                self.outgoing(side, mirrored, k)
            }
        }
    }

    fn incoming_edge(&self, quad: &QuadratureSet, side: Side, m: usize) -> Vec<f64> {
        (0..self.faces(side)).map(|k| self.incoming(quad, side, m, k)).collect()
    }

    fn store(&mut self, side: Side, m: usize, values: &[f64]) {
        let n = self.faces(side);
        self.out[side.index()][m * n..(m + 1) * n].copy_from_slice(values);
    }

    fn max_rel_change(&self, old: &[Vec<f64>; 4]) -> f64 {
        (0..4)
            .map(|s| max_rel_change(&self.out[s], &old[s]))
            .fold(0.0, f64::max)
    }

    fn any_reflective(&self) -> bool {
        self.boundary.contains(&Boundary::Reflective)
    }
}

struct DirectionSweep {
    x_out: Vec<f64>,
    y_out: Vec<f64>,
    fixups: u64,
}

/// Sweeps one direction through the mesh. `x_in`/`y_in` hold the incoming
/// edge fluxes on the x-entry (length ny) and y-entry (length nx) faces.
#[allow(clippy::too_many_arguments)]
fn sweep_direction(
    mesh: &Mesh,
    sigma_t: &[f64],
    source: &[f64],
    dir: &Direction,
    x_in: &[f64],
    y_in: &[f64],
    fixup: bool,
    psi: &mut [f64],
) -> DirectionSweep {
    let (nx, ny) = (mesh.nx, mesh.ny);
    let a = 2.0 * dir.mu.abs() / mesh.dx();
    let b = 2.0 * dir.eta.abs() / mesh.dy();
    let mut col = y_in.to_vec();
    let mut x_out = vec![0.0; ny];
    let mut fixups = 0;
    for jj in 0..ny {
        let j = if dir.eta > 0.0 { jj } else { ny - 1 - jj };
        let mut row = x_in[j];
        for ii in 0..nx {
            let i = if dir.mu > 0.0 { ii } else { nx - 1 - ii };
            let c = j * nx + i;
            let (s, st) = (source[c], sigma_t[c]);
            let (psi_x, psi_y) = (row, col[i]);
            let mut center = (s + a * psi_x + b * psi_y) / (st + a + b);
            let mut out_x = 2.0 * center - psi_x;
            let mut out_y = 2.0 * center - psi_y;
            if fixup && (out_x < 0.0 || out_y < 0.0) {
                fixups += 1;
                let (mut fix_x, mut fix_y) = (false, false);
                loop {
                    fix_x |= out_x < 0.0;
                    fix_y |= out_y < 0.0;
                    let (ax, ix) = if fix_x { (0.0, 0.5 * a) } else { (a, a) };
                    let (by, iy) = if fix_y { (0.0, 0.5 * b) } else { (b, b) };
                    let den = st + ax + by;
                    center = if den > 0.0 { (s + ix * psi_x + iy * psi_y) / den } else { 0.0 };
                    out_x = if fix_x { 0.0 } else { 2.0 * center - psi_x };
                    out_y = if fix_y { 0.0 } else { 2.0 * center - psi_y };
                    if out_x >= 0.0 && out_y >= 0.0 {
                        break;
                    }
                }
            }
            psi[c] = center;
            row = out_x;
            col[i] = out_y;
        }
        x_out[j] = row;
    }
    DirectionSweep {
        x_out,
        y_out: col,
        fixups,
    }
}

fn entry_sides(dir: &Direction) -> (Side, Side) {
    (
        if dir.mu > 0.0 { Side::West } else { Side::East },
        if dir.eta > 0.0 { Side::South } else { Side::North },
    )
}

fn exit_sides(dir: &Direction) -> (Side, Side) {
    (
        if dir.mu > 0.0 { Side::East } else { Side::West },
        if dir.eta > 0.0 { Side::North } else { Side::South },
    )
}

/// Result of sweeping a set of directions for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// ψ[m][cell]
    pub psi: Vec<f64>,
    pub currents: SideCurrents,
    pub fixups: u64,
}

/// Sweeps directions `0..n_swept` with a per-direction source `[m][cell]`
/// (only the first `n_swept` blocks are read) and records boundary data.
#[allow(clippy::too_many_arguments)]
fn sweep_group<'s>(
    mesh: &Mesh,
    quad: &QuadratureSet,
    sigma_t: &[f64],
    source: &(dyn Fn(usize) -> &'s [f64] + Sync),
    n_swept: usize,
    boundary: &mut BoundaryFlux,
    fixup: bool,
    psi: &mut [f64],
) -> (SideCurrents, u64) {
    let n = mesh.n_cells();
    let results: Vec<(Vec<f64>, Vec<f64>, DirectionSweep)> = psi[..n_swept * n]
        .par_chunks_mut(n)
        .enumerate()
        .map(|(m, block)| {
            let dir = &quad.dirs[m];
            let (sx, sy) = entry_sides(dir);
            let x_in = boundary.incoming_edge(quad, sx, m);
            let y_in = boundary.incoming_edge(quad, sy, m);
            let sw = sweep_direction(mesh, sigma_t, source(m), dir, &x_in, &y_in, fixup, block);
            (x_in, y_in, sw)
        })
        .collect();

    let mut currents = SideCurrents::default();
    let mut fixups = 0;
    let (dx, dy) = (mesh.dx(), mesh.dy());
    for (m, (x_in, y_in, sw)) in results.into_iter().enumerate() {
        let dir = &quad.dirs[m];
        let (ex, ey) = exit_sides(dir);
        let (sx, sy) = entry_sides(dir);
        let wx = dir.weight * dir.mu.abs() * dy;
        let wy = dir.weight * dir.eta.abs() * dx;
        currents.outflow[ex.index()] += wx * sw.x_out.iter().sum::<f64>();
        currents.outflow[ey.index()] += wy * sw.y_out.iter().sum::<f64>();
        currents.inflow[sx.index()] += wx * x_in.iter().sum::<f64>();
        currents.inflow[sy.index()] += wy * y_in.iter().sum::<f64>();
        boundary.store(ex, m, &sw.x_out);
        boundary.store(ey, m, &sw.y_out);
        fixups += sw.fixups;
    }
    (currents, fixups)
}

/// One transport sweep of every direction for group `group`, with the total
/// emission density given per direction as `total_source[m * n_cells + cell]`.
///
/// Incoming fluxes on reflective faces come from `boundary` (the previous
/// sweep); on return `boundary` holds this sweep's outgoing edge fluxes.
pub fn sweep_once(
    model: &ProblemModel,
    quad: &QuadratureSet,
    group: usize,
    total_source: &[f64],
    boundary: &mut BoundaryFlux,
    fixup: bool,
) -> Result<SweepResult, SnError> {
    let n = model.mesh.n_cells();
    if total_source.len() != n * quad.len() {
        return Err(SnError::DimensionMismatch(format!(
            "source has {} entries, expected {}",
            total_source.len(),
            n * quad.len()
        )));
    }
    let sigma_t: Vec<f64> = (0..n).map(|c| model.material_of(c).sigma_t[group]).collect();
    let mut psi = vec![0.0; n * quad.len()];
    let src = |m: usize| &total_source[m * n..(m + 1) * n];
    let (currents, fixups) = sweep_group(
        &model.mesh,
        quad,
        &sigma_t,
        &src,
        quad.len(),
        boundary,
        fixup,
        &mut psi,
    );
    Ok(SweepResult {
        psi,
        currents,
        fixups,
    })
}

fn max_rel_change(new: &[f64], old: &[f64]) -> f64 {
    new.iter()
        .zip(old)
        .map(|(a, b)| (a - b).abs() / a.abs().max(FLUX_FLOOR))
        .fold(0.0, f64::max)
}

struct GroupSolver<'a> {
    mesh: &'a Mesh,
    xs: &'a MultigroupXs,
    quad: &'a QuadratureSet,
    opts: SolverOptions,
    n: usize,
    g_count: usize,
}

impl GroupSolver<'_> {
    fn sigma(&self, g: usize) -> Vec<f64> {
        self.mesh
            .cell_material
            .iter()
            .map(|&mat| self.xs.materials[mat].sigma_t[g])
            .collect()
    }

    /// Source iteration for one group with the other groups' fluxes frozen.
    /// Returns (iterations, converged, fixups).
    fn solve_group(
        &self,
        g: usize,
        external: &[f64],
        phi: &mut [f64],
        psi_group: &mut [f64],
        currents: &mut SideCurrents,
        boundary: &mut BoundaryFlux,
    ) -> (usize, bool, u64, f64) {
        let (n, gc) = (self.n, self.g_count);
        let sigma_t = self.sigma(g);
        let self_scatter: Vec<f64> = self
            .mesh
            .cell_material
            .iter()
            .map(|&mat| self.xs.materials[mat].sigma_s[g][g])
            .collect();
        let fixed: Vec<f64> = (0..n)
            .map(|c| {
                let mat = &self.xs.materials[self.mesh.cell_material[c]];
                let inscatter: f64 = (0..gc)
                    .filter(|&g2| g2 != g)
                    .map(|g2| mat.sigma_s[g2][g] * phi[c * gc + g2])
                    .sum();
                external[c * gc + g] + inscatter
            })
            .collect();
        let mut phi_g: Vec<f64> = (0..n).map(|c| phi[c * gc + g]).collect();
        let m_all = self.quad.len();
        let m_up = self.quad.upper_len();
        let mut fixups = 0;
        let mut converged = false;
        let mut iters = 0;
        let mut change = f64::INFINITY;
        let reflective = boundary.any_reflective();
        while iters < self.opts.max_iters {
            iters += 1;
            let src: Vec<f64> = (0..n)
                .map(|c| (fixed[c] + self_scatter[c] * phi_g[c]) / FOUR_PI)
                .collect();
            let source = |_m: usize| src.as_slice();
            // reflective faces: repeat the sweep until the edge fluxes settle
            let mut cur = SideCurrents::default();
            let mut fx = 0;
            let (mut best, mut stalled) = (f64::INFINITY, 0);
            for _ in 0..MAX_BOUNDARY_SWEEPS {
                let before = if reflective { Some(boundary.out.clone()) } else { None };
                let (c, f) = sweep_group(
                    self.mesh,
                    self.quad,
                    &sigma_t,
                    &source,
                    m_up,
                    boundary,
                    self.opts.fixup,
                    psi_group,
                );
                cur = c;
                fx += f;
                let Some(old) = before else { break };
                let delta = boundary.max_rel_change(&old);
                if delta <= BOUNDARY_TOL {
                    break;
                }
                if delta < best {
                    best = delta;
                    stalled = 0;
                } else {
                    stalled += 1;
                    if stalled >= BOUNDARY_STALL {
                        break;
                    }
                }
            }
            // ξ < 0 half carries the same flux in XY geometry
            let (upper, lower) = psi_group.split_at_mut(m_up * n);
            lower.copy_from_slice(upper);
            if reflective {
                for m in 0..m_up {
                    let mz = self.quad.mirror_z(m);
                    let dir = &self.quad.dirs[m];
                    let (ex, ey) = exit_sides(dir);
                    for side in [ex, ey] {
                        let k = boundary.faces(side);
                        let vals: Vec<f64> = (0..k).map(|f| boundary.outgoing(side, m, f)).collect();
                        boundary.store(side, mz, &vals);
                    }
                }
            }
            let mut doubled = cur;
            for s in 0..4 {
                doubled.outflow[s] *= 2.0;
                doubled.inflow[s] *= 2.0;
            }
            *currents = doubled;
            fixups += 2 * fx;
            let new_phi: Vec<f64> = (0..n)
                .map(|c| {
                    let mut s = 0.0;
                    for m in 0..m_all {
                        s += self.quad.dirs[m].weight * psi_group[m * n + c];
                    }
                    s
                })
                .collect();
            change = max_rel_change(&new_phi, &phi_g);
            phi_g = new_phi;
            if change < self.opts.tol {
                converged = true;
                break;
            }
        }
        for c in 0..n {
            phi[c * gc + g] = phi_g[c];
        }
        (iters, converged, fixups, change)
    }
}

/// Solves the forward or adjoint fixed-source problem.
///
/// In adjoint mode `adjoint_source` defaults to the detector response
/// density. Non-convergence returns the last iterate inside
/// [`SnError::NotConverged`].
pub fn solve(
    model: &ProblemModel,
    quad: &QuadratureSet,
    mode: Mode,
    adjoint_source: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SnSolution, SnError> {
    let start = Instant::now();
    if !(opts.tol > 0.0) {
        return Err(SnError::BadTolerance(opts.tol));
    }
    let n = model.mesh.n_cells();
    let gc = model.n_groups();
    let (xs, external) = match mode {
        Mode::Forward => (model.xs.clone(), model.source_density()),
        Mode::Adjoint => {
            let q_adj = match adjoint_source {
                Some(q) => {
                    if q.len() != n * gc {
                        return Err(SnError::InvalidAdjointSource {
                            expected: n * gc,
                            found: q.len(),
                        });
                    }
                    if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
                        return Err(SnError::NegativeAdjointSource);
                    }
                    q.to_vec()
                }
                None => {
                    if model.detectors.is_empty() {
                        return Err(SnError::NoAdjointSource);
                    }
                    model.response_density()
                }
            };
            (crate::model::transpose_scattering(&model.xs), q_adj)
        }
    };
    let order: Vec<usize> = match mode {
        Mode::Forward => (0..gc).collect(),
        Mode::Adjoint => (0..gc).rev().collect(),
    };
    // scattering against the sweep order forces outer iterations
    let needs_outer = xs.materials.iter().any(|mat| {
        order.iter().enumerate().any(|(k, &g)| {
            order[k + 1..].iter().any(|&later| mat.sigma_s[later][g] > 0.0)
        })
    });

    let solver = GroupSolver {
        mesh: &model.mesh,
        xs: &xs,
        quad,
        opts: *opts,
        n,
        g_count: gc,
    };
    let m_all = quad.len();
    let mut phi = vec![0.0; n * gc];
    let mut psi = vec![0.0; gc * m_all * n];
    let mut currents = vec![SideCurrents::default(); gc];
    let mut boundaries: Vec<BoundaryFlux> = (0..gc).map(|_| BoundaryFlux::new(&model.mesh, m_all)).collect();
    let mut iterations = vec![0; gc];
    let mut fixups = 0;
    let mut outer = 0;
    let mut converged;
    let mut last_change;
    loop {
        outer += 1;
        let before = phi.clone();
        converged = true;
        let mut inner_change: f64 = 0.0;
        for &g in &order {
            let block = &mut psi[g * m_all * n..(g + 1) * m_all * n];
            let (it, ok, fx, ch) =
                solver.solve_group(g, &external, &mut phi, block, &mut currents[g], &mut boundaries[g]);
            iterations[g] += it;
            fixups += fx;
            converged &= ok;
            inner_change = inner_change.max(ch);
        }
        last_change = if needs_outer {
            inner_change.max(max_rel_change(&phi, &before))
        } else {
            inner_change
        };
        if !needs_outer || last_change < opts.tol || outer >= opts.max_iters || !converged {
            if needs_outer && last_change >= opts.tol {
                converged = false;
            }
            break;
        }
    }

    let mut angular = AngularFluxField {
        nx: model.mesh.nx,
        ny: model.mesh.ny,
        n_groups: gc,
        n_dirs: m_all,
        mode,
        values: psi,
        currents,
    };
    if mode == Mode::Adjoint {
        let mut reversed = angular.values.clone();
        for g in 0..gc {
            for m in 0..m_all {
                let src = (g * m_all + quad.reverse(m)) * n;
                let dst = (g * m_all + m) * n;
                reversed[dst..dst + n].copy_from_slice(&angular.values[src..src + n]);
            }
        }
        angular.values = reversed;
    }
    let scalar = angular.integrate(quad);
    let balance = balance_check(model, quad, &angular, &external);
    let report = SolveReport {
        mode,
        iterations,
        outer_iterations: outer,
        max_rel_change: last_change,
        balance,
        fixups,
        converged,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let sol = SnSolution {
        angular,
        scalar,
        report,
    };
    if converged {
        Ok(sol)
    } else {
        Err(SnError::NotConverged(Box::new(sol)))
    }
}

/// Per-group particle balance residual
/// `|sources + inscatter − absorption − outscatter − leakage| / (sources + inscatter)`.
///
/// `source` is the external density the field was solved with; adjoint
/// fields are checked against the transposed scattering matrix.
pub fn balance_check(
    model: &ProblemModel,
    quad: &QuadratureSet,
    flux: &AngularFluxField,
    source: &[f64],
) -> Vec<f64> {
    let xs = match flux.mode {
        Mode::Forward => model.xs.clone(),
        Mode::Adjoint => crate::model::transpose_scattering(&model.xs),
    };
    let phi = flux.integrate(quad);
    let gc = flux.n_groups;
    let dv = model.mesh.cell_volume();
    (0..gc)
        .map(|g| {
            let (mut src, mut inscatter, mut absorption, mut outscatter) = (0.0, 0.0, 0.0, 0.0);
            for c in 0..flux.n_cells() {
                let mat = &xs.materials[model.mesh.cell_material[c]];
                let f = phi.get(c, g);
                src += source[c * gc + g] * dv;
                for g2 in 0..gc {
                    if g2 != g {
                        inscatter += mat.sigma_s[g2][g] * phi.get(c, g2) * dv;
                        outscatter += mat.sigma_s[g][g2] * f * dv;
                    }
                }
                absorption += (mat.sigma_t[g] - mat.sigma_s_out(g)) * f * dv;
            }
            let leakage = flux.currents[g].net_leakage();
            let produced = src + inscatter;
            let imbalance = (produced - absorption - outscatter - leakage).abs();
            if produced > 0.0 {
                imbalance / produced
            } else {
                imbalance
            }
        })
        .collect()
}

/// R = Σ_cells Σ_groups φ · weight · ΔV.
pub fn response(flux: &ScalarFluxField, weight_field: &[f64], mesh: &Mesh) -> Result<f64, SnError> {
    if flux.values.len() != weight_field.len() || flux.n_cells() != mesh.n_cells() {
        return Err(SnError::DimensionMismatch(format!(
            "flux has {} entries over {} cells, weight field has {} entries, mesh has {} cells",
            flux.values.len(),
            flux.n_cells(),
            weight_field.len(),
            mesh.n_cells()
        )));
    }
    let dv = mesh.cell_volume();
    Ok(flux.values.iter().zip(weight_field).map(|(f, w)| f * w * dv).sum())
}

// ---------------------------------------------------------------------------
// CSV export / import

pub fn scalar_flux_csv(flux: &ScalarFluxField) -> String {
    let mut out = String::from("i,j,group,value\n");
    for c in 0..flux.n_cells() {
        let (i, j) = (c % flux.nx, c / flux.nx);
        for g in 0..flux.n_groups {
            let _ = writeln!(out, "{i},{j},{g},{:e}", flux.get(c, g));
        }
    }
    out
}

pub fn angular_flux_csv(flux: &AngularFluxField) -> String {
    let mut out = String::from("i,j,group,dir,value\n");
    for c in 0..flux.n_cells() {
        let (i, j) = (c % flux.nx, c / flux.nx);
        for g in 0..flux.n_groups {
            for m in 0..flux.n_dirs {
                let _ = writeln!(out, "{i},{j},{g},{m},{:e}", flux.get(c, g, m));
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing or unexpected header (expected `{0}`)")]
    Header(String),
}

fn parse_rows(text: &str, header: &str, n_index: usize) -> Result<Vec<(Vec<usize>, f64)>, CsvError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(CsvError::Header(header.to_string())),
    }
    lines
        .map(|(k, l)| {
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != n_index + 1 {
                return Err(CsvError::Malformed {
                    line: k + 1,
                    message: format!("expected {} fields", n_index + 1),
                });
            }
            let idx = fields[..n_index]
                .iter()
                .map(|f| f.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CsvError::Malformed { line: k + 1, message: e.to_string() })?;
            let v = fields[n_index]
                .trim()
                .parse::<f64>()
                .map_err(|e| CsvError::Malformed { line: k + 1, message: e.to_string() })?;
            Ok((idx, v))
        })
        .collect()
}

fn extents(rows: &[(Vec<usize>, f64)], n_index: usize) -> Vec<usize> {
    (0..n_index)
        .map(|k| rows.iter().map(|(idx, _)| idx[k] + 1).max().unwrap_or(0))
        .collect()
}

pub fn read_scalar_flux_csv(text: &str) -> Result<ScalarFluxField, CsvError> {
    let rows = parse_rows(text, "i,j,group,value", 3)?;
    let e = extents(&rows, 3);
    let mut f = ScalarFluxField::zeros(e[0], e[1], e[2]);
    if rows.len() != f.values.len() {
        return Err(CsvError::Malformed {
            line: rows.len(),
            message: format!("expected {} rows", f.values.len()),
        });
    }
    for (idx, v) in rows {
        let c = idx[1] * f.nx + idx[0];
        f.values[c * f.n_groups + idx[2]] = v;
    }
    Ok(f)
}

/// Reads ψ values back; boundary currents are not part of the file.
pub fn read_angular_flux_csv(text: &str, mode: Mode) -> Result<AngularFluxField, CsvError> {
    let rows = parse_rows(text, "i,j,group,dir,value", 4)?;
    let e = extents(&rows, 4);
    let mut f = AngularFluxField::zeros(e[0], e[1], e[2], e[3], mode);
    if rows.len() != f.values.len() {
        return Err(CsvError::Malformed {
            line: rows.len(),
            message: format!("expected {} rows", f.values.len()),
        });
    }
    for (idx, v) in rows {
        let c = idx[1] * f.nx + idx[0];
        f.set(c, idx[2], idx[3], v);
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_problem, parse_deck, Boundaries};
    use crate::quadrature::build_quadrature;

    fn one_cell(sigma: f64, boundary: &str) -> ProblemModel {
        let text = format!(
            r#"{{"mesh": {{"nx": 1, "ny": 1, "x_min": 0.0, "x_max": 2.0, "y_min": 0.0, "y_max": 1.0,
                "boundary": {{"west": "{boundary}", "east": "{boundary}", "south": "{boundary}", "north": "{boundary}"}}}},
              "groups": {{"count": 1}},
              "materials": [{{"name": "a", "sigma_t": [{sigma}], "sigma_s": [[0.0]]}}],
              "cell_map": [0],
              "sources": [{{"kind": "cell_region", "cells": [[0, 0]], "spectrum": [1.0], "strength": 2.0}}]}}"#
        );
        parse_deck(&text).unwrap()
    }

    #[test]
    fn zero_source_gives_zero_flux() {
        let model = builtin_problem("box_scatter").unwrap();
        let quad = build_quadrature(2, 2).unwrap();
        let n = model.mesh.n_cells();
        let mut bnd = BoundaryFlux::new(&model.mesh, quad.len());
        let r = sweep_once(&model, &quad, 0, &vec![0.0; n * quad.len()], &mut bnd, true).unwrap();
        assert!(r.psi.iter().all(|&v| v == 0.0));
        assert_eq!(r.fixups, 0);
    }

    #[test]
    fn single_cell_matches_hand_diamond_difference() {
        // 2 x 1 cm cell, sigma_t = 0.7, q = S / area = 1 per steradian-free unit
        let model = one_cell(0.7, "vacuum");
        let quad = build_quadrature(2, 2).unwrap();
        let q_iso = 1.0 / FOUR_PI;
        let mut bnd = BoundaryFlux::new(&model.mesh, quad.len());
        let r = sweep_once(&model, &quad, 0, &vec![q_iso; quad.len()], &mut bnd, true).unwrap();
        for (m, d) in quad.dirs.iter().enumerate() {
            // vacuum inflow: ψ_c = q / (σ + 2|μ|/dx + 2|η|/dy); outflows 2ψ_c ≥ 0
            let expect = q_iso / (0.7 + 2.0 * d.mu.abs() / 2.0 + 2.0 * d.eta.abs() / 1.0);
            assert!((r.psi[m] - expect).abs() <= 1e-15 * expect, "m={m}");
        }
        assert_eq!(r.fixups, 0);
    }

    #[test]
    fn reflective_inflow_is_previous_mirrored_outflow() {
        let model = one_cell(0.5, "reflective");
        let quad = build_quadrature(2, 2).unwrap();
        let mut bnd = BoundaryFlux::new(&model.mesh, quad.len());
        let src = vec![0.1; quad.len()];
        sweep_once(&model, &quad, 0, &src, &mut bnd, true).unwrap();
        let snapshot = bnd.clone();
        for m in 0..quad.len() {
            let d = quad.dirs[m];
            let (sx, sy) = entry_sides(&d);
            assert_eq!(
                snapshot.incoming(&quad, sx, m, 0),
                snapshot.outgoing(sx, quad.reflect_x(m), 0)
            );
            assert_eq!(
                snapshot.incoming(&quad, sy, m, 0),
                snapshot.outgoing(sy, quad.reflect_y(m), 0)
            );
        }
    }

    #[test]
    fn infinite_medium_flux_is_q_over_sigma_a() {
        let model = builtin_problem("infinite_medium").unwrap();
        let quad = build_quadrature(4, 4).unwrap();
        let mat = &model.xs.materials[0];
        let q = model.source_density()[0];
        let expect = q / mat.sigma_a(0);
        for tol in [1e-4, 1e-12] {
            let sol = solve(&model, &quad, Mode::Forward, None, &SolverOptions { tol, ..Default::default() }).unwrap();
            for &v in &sol.scalar.values {
                assert!((v - expect).abs() <= 1e-10 * expect, "tol={tol} {v} vs {expect}");
            }
        }
        let sol = solve(&model, &quad, Mode::Forward, None, &SolverOptions { tol: 1e-12, ..Default::default() }).unwrap();
        assert!(sol.report.balance.iter().all(|&r| r <= 1e-12), "{:?}", sol.report.balance);
    }

    #[test]
    fn pure_absorber_converges_in_one_sweep() {
        let mut model = builtin_problem("box_scatter").unwrap();
        for mat in &mut model.xs.materials {
            for row in &mut mat.sigma_s {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        model.mesh.boundary = Boundaries::uniform(Boundary::Vacuum);
        let quad = build_quadrature(2, 2).unwrap();
        let one = solve(&model, &quad, Mode::Forward, None, &SolverOptions { tol: 1e-12, max_iters: 1, fixup: true });
        let one = match one {
            Err(SnError::NotConverged(sol)) => sol.scalar,
            other => panic!("expected the single-iteration flag, got {other:?}"),
        };
        let full = solve(&model, &quad, Mode::Forward, None, &SolverOptions { tol: 1e-12, ..Default::default() }).unwrap();
        assert_eq!(one.values, full.scalar.values);
        assert!(full.report.iterations.iter().all(|&it| it <= 2));
        assert_eq!(full.report.max_rel_change, 0.0);
    }

    #[test]
    fn scalar_flux_is_quadrature_integral_of_angular() {
        let model = builtin_problem("box_scatter").unwrap();
        let quad = build_quadrature(2, 2).unwrap();
        let sol = solve(&model, &quad, Mode::Forward, None, &SolverOptions::default()).unwrap();
        for c in 0..model.mesh.n_cells() {
            for g in 0..model.n_groups() {
                let direct = crate::quadrature::angular_integrate(&sol.angular.spectrum(c, g), &quad).unwrap();
                let v = sol.scalar.get(c, g);
                assert!((direct - v).abs() <= 1e-12 * v.abs().max(f64::MIN_POSITIVE));
            }
        }
    }

    #[test]
    fn source_scaling_is_linear() {
        let model = builtin_problem("box_scatter").unwrap();
        let quad = build_quadrature(2, 2).unwrap();
        let opts = SolverOptions { tol: 1e-10, ..Default::default() };
        let base = solve(&model, &quad, Mode::Forward, None, &opts).unwrap();
        let mut scaled_model = model.clone();
        let k = 4.0; // power of two: every operation scales exactly
        for s in &mut scaled_model.sources {
            s.strength *= k;
        }
        let scaled = solve(&scaled_model, &quad, Mode::Forward, None, &opts).unwrap();
        for (a, b) in base.scalar.values.iter().zip(&scaled.scalar.values) {
            assert!((k * a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn unconverged_balance_is_worse() {
        let model = builtin_problem("box_scatter").unwrap();
        let quad = build_quadrature(2, 2).unwrap();
        let q = model.source_density();
        let early = match solve(&model, &quad, Mode::Forward, None, &SolverOptions { tol: 1e-10, max_iters: 1, fixup: true }) {
            Err(SnError::NotConverged(sol)) => sol,
            other => panic!("{other:?}"),
        };
        let done = solve(&model, &quad, Mode::Forward, None, &SolverOptions { tol: 1e-10, ..Default::default() }).unwrap();
        let r_early = balance_check(&model, &quad, &early.angular, &q);
        let r_done = balance_check(&model, &quad, &done.angular, &q);
        assert!(r_early[0] > r_done[0], "{r_early:?} vs {r_done:?}");
        assert!(r_done.iter().all(|&r| r <= 1e-6));
    }

    #[test]
    fn response_examples() {
        let mesh = crate::model::Mesh::new((2, 1), (0.0, 1.0), (0.0, 0.5), vec![0, 0], Boundaries::uniform(Boundary::Vacuum));
        let flux = ScalarFluxField { nx: 2, ny: 1, n_groups: 1, values: vec![3.0, 5.0] };
        // cell area 0.5 * 0.5 = 0.25; use a mesh of area 0.5 per cell instead
        let mesh_half = crate::model::Mesh::new((2, 1), (0.0, 1.0), (0.0, 1.0), vec![0, 0], Boundaries::uniform(Boundary::Vacuum));
        assert_eq!(response(&flux, &[2.0, 0.0], &mesh_half).unwrap(), 3.0);
        assert_eq!(response(&flux, &[0.0, 0.0], &mesh).unwrap(), 0.0);
        assert!(response(&flux, &[1.0], &mesh).is_err());
        let f2 = ScalarFluxField { values: vec![-1.0, 0.25], ..flux.clone() };
        let w = [0.3, 1.7];
        let (a, b) = (2.5, -0.75);
        let combo = ScalarFluxField {
            values: flux.values.iter().zip(&f2.values).map(|(x, y)| a * x + b * y).collect(),
            ..flux.clone()
        };
        let lhs = response(&combo, &w, &mesh).unwrap();
        let rhs = a * response(&flux, &w, &mesh).unwrap() + b * response(&f2, &w, &mesh).unwrap();
        assert!((lhs - rhs).abs() <= 1e-14 * lhs.abs().max(1.0));
    }

    #[test]
    fn adjoint_source_errors() {
        let model = builtin_problem("box_scatter").unwrap();
        let quad = build_quadrature(1, 1).unwrap();
        let opts = SolverOptions::default();
        assert!(matches!(
            solve(&model, &quad, Mode::Adjoint, Some(&[1.0]), &opts),
            Err(SnError::InvalidAdjointSource { .. })
        ));
        let mut no_det = model.clone();
        no_det.detectors.clear();
        assert!(matches!(solve(&no_det, &quad, Mode::Adjoint, None, &opts), Err(SnError::NoAdjointSource)));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let model = builtin_problem("box_scatter").unwrap();
        let quad = build_quadrature(1, 1).unwrap();
        let sol = solve(&model, &quad, Mode::Forward, None, &SolverOptions::default()).unwrap();
        let back = read_scalar_flux_csv(&scalar_flux_csv(&sol.scalar)).unwrap();
        assert_eq!(back, sol.scalar);
        let text = angular_flux_csv(&sol.angular);
        assert_eq!(text.lines().count(), 1 + model.mesh.n_cells() * model.n_groups() * quad.len());
        let back = read_angular_flux_csv(&text, Mode::Forward).unwrap();
        for c in 0..back.n_cells() {
            for g in 0..back.n_groups {
                assert_eq!(back.spectrum(c, g), sol.angular.spectrum(c, g));
            }
        }
    }
}
