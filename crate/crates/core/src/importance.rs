//! Importance maps from deterministic fluxes.
//!
//! The adjoint scalar flux (or its forward-weighted angular average φ†_Ω)
//! sets a biased source q̂ = φ† p / R, birth weights w0 = R / φ† and target
//! weights ŵ = R / φ†, where p = q / S is the normalized physical source and
//! R = ⟨φ†, p⟩ is the response per source particle. Birth weight and window
//! survival weight coincide wherever particles are born.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::model::{Mesh, ProblemModel};
use crate::quadrature::QuadratureSet;
use crate::sn::{self, AngularFluxField, Mode, ScalarFluxField, SnError, SnSolution, SolverOptions};

pub const DEFAULT_RHO: f64 = 5.0;
pub const DEFAULT_FALLBACK_DELTA: f64 = 1e-12;
/// Relative floor applied before inverting forward fluxes for FW-CADIS.
pub const FW_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("field dimensions do not match: {0}")]
    DimensionMismatch(String),
    #[error("no response path: the adjoint flux is orthogonal to the source (R = {0})")]
    NoResponsePath(f64),
    #[error("forward flux is identically zero; no forward-weighted objective can be formed")]
    ZeroForwardFlux,
    #[error("window ratio must exceed 1, got {0}")]
    BadWindowRatio(f64),
    #[error(transparent)]
    Solver(#[from] SnError),
    #[error("importance map is {found} but the deck mesh is {expected}")]
    MeshMismatch { expected: String, found: String },
    #[error("malformed importance file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VrMethod {
    Cadis,
    CadisOmega,
    FwCadis,
    FwCadisOmega,
}

impl VrMethod {
    pub const ALL: [VrMethod; 4] = [
        VrMethod::Cadis,
        VrMethod::CadisOmega,
        VrMethod::FwCadis,
        VrMethod::FwCadisOmega,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            VrMethod::Cadis => "cadis",
            VrMethod::CadisOmega => "cadis_omega",
            VrMethod::FwCadis => "fw_cadis",
            VrMethod::FwCadisOmega => "fw_cadis_omega",
        }
    }

    pub fn uses_omega(self) -> bool {
        matches!(self, VrMethod::CadisOmega | VrMethod::FwCadisOmega)
    }
}

impl fmt::Display for VrMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for VrMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        VrMethod::ALL
            .into_iter()
            .find(|m| m.tag() == norm)
            .ok_or_else(|| format!("unknown method `{s}` (expected cadis, cadis-omega, fw-cadis, fw-cadis-omega)"))
    }
}

/// What the FW-CADIS adjoint source optimizes for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    FluxEnergySpace,
    FluxSpace,
    DoseSpace,
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "flux_energy_space" => Ok(Objective::FluxEnergySpace),
            "flux_space" => Ok(Objective::FluxSpace),
            "dose_space" => Ok(Objective::DoseSpace),
            _ => Err(format!("unknown objective `{s}` (expected flux-energy-space, flux-space, dose-space)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightWindow {
    pub low: f64,
    pub survival: f64,
    pub high: f64,
}

impl WeightWindow {
    /// Window centred (arithmetic mean of the bounds) on `target` with
    /// `high / low = rho`.
    pub fn around(target: f64, rho: f64) -> Self {
        let low = 2.0 * target / (1.0 + rho);
        Self {
            low,
            survival: target,
            high: rho * low,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub nx: usize,
    pub ny: usize,
    pub n_groups: usize,
    pub cell_volume: f64,
    pub method: VrMethod,
    /// Response per source particle, ⟨φ†, q/S⟩.
    pub response: f64,
    pub rho: f64,
    /// Biased source density per (cell, group); Σ q̂ ΔV = 1.
    pub q_hat: Vec<f64>,
    /// Birth weight where the physical source is non-zero and φ† > 0.
    pub w0: Vec<Option<f64>>,
    /// No window where φ† = 0.
    pub windows: Vec<Option<WeightWindow>>,
}

impl ImportanceMap {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn window(&self, cell: usize, g: usize) -> Option<&WeightWindow> {
        self.windows[cell * self.n_groups + g].as_ref()
    }

    pub fn matches(&self, mesh: &Mesh, n_groups: usize) -> Result<(), ImportanceError> {
        if self.nx != mesh.nx || self.ny != mesh.ny || self.n_groups != n_groups {
            return Err(ImportanceError::MeshMismatch {
                expected: format!("{}x{} cells, {} groups", mesh.nx, mesh.ny, n_groups),
                found: format!("{}x{} cells, {} groups", self.nx, self.ny, self.n_groups),
            });
        }
        Ok(())
    }
}

/// φ†_Ω with a per-entry flag marking where the plain angle average was used.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaFluxField {
    pub flux: ScalarFluxField,
    pub fallback: Vec<bool>,
}

fn check_pair(a: &AngularFluxField, b: &AngularFluxField, quad: &QuadratureSet) -> Result<(), ImportanceError> {
    if !a.same_shape(b) || a.n_dirs != quad.len() {
        return Err(ImportanceError::DimensionMismatch(format!(
            "forward {}x{}x{}g x {} dirs, adjoint {}x{}x{}g x {} dirs, quadrature {} dirs",
            a.nx, a.ny, a.n_groups, a.n_dirs, b.nx, b.ny, b.n_groups, b.n_dirs, quad.len()
        )));
    }
    Ok(())
}

/// Angle-integrated contributon flux Σ_m w ψ ψ† per cell and group.
pub fn contributon_scalar(
    psi_fwd: &AngularFluxField,
    psi_adj: &AngularFluxField,
    quad: &QuadratureSet,
) -> Result<ScalarFluxField, ImportanceError> {
    check_pair(psi_fwd, psi_adj, quad)?;
    let n = psi_fwd.n_cells();
    let gc = psi_fwd.n_groups;
    let mut out = ScalarFluxField::zeros(psi_fwd.nx, psi_fwd.ny, gc);
    for g in 0..gc {
        for (m, d) in quad.dirs.iter().enumerate() {
            let f = psi_fwd.direction_slice(g, m);
            let a = psi_adj.direction_slice(g, m);
            for c in 0..n {
                out.values[c * gc + g] += d.weight * f[c] * a[c];
            }
        }
    }
    Ok(out)
}

/// Forward-weighted angular average of the adjoint flux,
/// φ†_Ω = Σ w ψ ψ† / Σ w ψ.
///
/// Where Σ w ψ ≤ `fallback_delta` × (its maximum over the mesh) the plain
/// average Σ w ψ† / 4π is used instead.
pub fn omega_flux(
    psi_fwd: &AngularFluxField,
    psi_adj: &AngularFluxField,
    quad: &QuadratureSet,
    fallback_delta: f64,
) -> Result<OmegaFluxField, ImportanceError> {
    check_pair(psi_fwd, psi_adj, quad)?;
    let n = psi_fwd.n_cells();
    let gc = psi_fwd.n_groups;
    let len = n * gc;
    let mut num = vec![0.0; len];
    let mut den = vec![0.0; len];
    let mut plain = vec![0.0; len];
    let mut lo = vec![f64::INFINITY; len];
    let mut hi = vec![f64::NEG_INFINITY; len];
    for g in 0..gc {
        for (m, d) in quad.dirs.iter().enumerate() {
            let f = psi_fwd.direction_slice(g, m);
            let a = psi_adj.direction_slice(g, m);
            for c in 0..n {
                let k = c * gc + g;
                num[k] += d.weight * f[c] * a[c];
                den[k] += d.weight * f[c];
                plain[k] += d.weight * a[c];
                lo[k] = lo[k].min(a[c]);
                hi[k] = hi[k].max(a[c]);
            }
        }
    }
    let den_max = den.iter().copied().fold(0.0, f64::max);
    let threshold = fallback_delta * den_max;
    let mut flux = ScalarFluxField::zeros(psi_fwd.nx, psi_fwd.ny, gc);
    let mut fallback = vec![false; len];
    for k in 0..len {
        if den_max > 0.0 && den[k] > threshold {
            // rounding can push the ratio an ulp outside the convex hull
            flux.values[k] = (num[k] / den[k]).clamp(lo[k], hi[k]);
        } else {
            flux.values[k] = plain[k] / (4.0 * PI);
            fallback[k] = true;
        }
    }
    Ok(OmegaFluxField { flux, fallback })
}

/// CADIS source biasing and weight-window parameters from an adjoint
/// scalar flux.
pub fn cadis_params(
    phi_adj: &ScalarFluxField,
    model: &ProblemModel,
    rho: f64,
    method: VrMethod,
) -> Result<ImportanceMap, ImportanceError> {
    if !(rho > 1.0) {
        return Err(ImportanceError::BadWindowRatio(rho));
    }
    let mesh = &model.mesh;
    let gc = model.n_groups();
    if phi_adj.nx != mesh.nx || phi_adj.ny != mesh.ny || phi_adj.n_groups != gc {
        return Err(ImportanceError::DimensionMismatch(format!(
            "adjoint flux {}x{}x{}g, model {}x{}x{}g",
            phi_adj.nx, phi_adj.ny, phi_adj.n_groups, mesh.nx, mesh.ny, gc
        )));
    }
    let strength = model.total_strength();
    let p: Vec<f64> = model.source_density().iter().map(|q| q / strength).collect();
    let dv = mesh.cell_volume();
    let response: f64 = phi_adj
        .values
        .iter()
        .zip(&p)
        .map(|(a, q)| a * q * dv)
        .sum();
    if !(response > 0.0) || !response.is_finite() {
        return Err(ImportanceError::NoResponsePath(response));
    }
    let q_hat: Vec<f64> = phi_adj.values.iter().zip(&p).map(|(a, q)| a * q / response).collect();
    let w0 = phi_adj
        .values
        .iter()
        .zip(&p)
        .map(|(&a, &q)| (q > 0.0 && a > 0.0).then(|| response / a))
        .collect();
    let windows = phi_adj
        .values
        .iter()
        .map(|&a| (a > 0.0).then(|| WeightWindow::around(response / a, rho)))
        .collect();
    Ok(ImportanceMap {
        nx: mesh.nx,
        ny: mesh.ny,
        n_groups: gc,
        cell_volume: dv,
        method,
        response,
        rho,
        q_hat,
        w0,
        windows,
    })
}

/// FW-CADIS adjoint source built from a forward scalar flux.
pub fn fw_adjoint_source(
    phi_fwd: &ScalarFluxField,
    model: &ProblemModel,
    objective: Objective,
) -> Result<Vec<f64>, ImportanceError> {
    let gc = phi_fwd.n_groups;
    if phi_fwd.n_cells() != model.mesh.n_cells() || gc != model.n_groups() {
        return Err(ImportanceError::DimensionMismatch(format!(
            "forward flux {}x{}x{}g, model {}x{}x{}g",
            phi_fwd.nx, phi_fwd.ny, gc, model.mesh.nx, model.mesh.ny, model.n_groups()
        )));
    }
    let max = phi_fwd.max_value();
    if !(max > 0.0) {
        return Err(ImportanceError::ZeroForwardFlux);
    }
    let floor = FW_FLOOR * max;
    let n = phi_fwd.n_cells();
    let sigma_d = model.response_density();
    let mut q = vec![0.0; n * gc];
    for c in 0..n {
        let row = &phi_fwd.values[c * gc..(c + 1) * gc];
        match objective {
            Objective::FluxEnergySpace => {
                for g in 0..gc {
                    q[c * gc + g] = 1.0 / row[g].max(floor);
                }
            }
            Objective::FluxSpace => {
                let total: f64 = row.iter().sum();
                let v = 1.0 / total.max(floor);
                q[c * gc..(c + 1) * gc].iter_mut().for_each(|x| *x = v);
            }
            Objective::DoseSpace => {
                let sd = &sigma_d[c * gc..(c + 1) * gc];
                let dose: f64 = row.iter().zip(sd).map(|(f, s)| f * s).sum();
                for g in 0..gc {
                    q[c * gc + g] = sd[g] / dose.max(floor);
                }
            }
        }
    }
    Ok(q)
}

/// Output of [`make_vr`].
#[derive(Debug, Clone)]
pub struct VrOutcome {
    pub map: ImportanceMap,
    /// The scalar importance the map was built from (φ† or φ†_Ω).
    pub importance: ScalarFluxField,
    pub forward: Option<SnSolution>,
    pub adjoint: SnSolution,
    /// Wall time of each deterministic solve, in seconds.
    pub timings: Vec<(String, f64)>,
}

impl VrOutcome {
    pub fn deterministic_seconds(&self) -> f64 {
        self.timings.iter().map(|(_, t)| t).sum()
    }
}

fn timed_solve(
    label: &str,
    timings: &mut Vec<(String, f64)>,
    f: impl FnOnce() -> Result<SnSolution, SnError>,
) -> Result<SnSolution, SnError> {
    let start = Instant::now();
    let sol = f()?;
    timings.push((label.to_string(), start.elapsed().as_secs_f64()));
    Ok(sol)
}

/// Runs the deterministic solves a method needs and builds its map.
pub fn make_vr(
    model: &ProblemModel,
    quad: &QuadratureSet,
    method: VrMethod,
    objective: Objective,
    opts: &SolverOptions,
    rho: f64,
) -> Result<VrOutcome, ImportanceError> {
    if model.detectors.is_empty() && matches!(method, VrMethod::Cadis | VrMethod::CadisOmega) {
        return Err(ImportanceError::NoResponsePath(0.0));
    }
    let mut timings = Vec::new();
    let needs_forward = method != VrMethod::Cadis;
    let forward = if needs_forward {
        Some(timed_solve("forward", &mut timings, || {
            sn::solve(model, quad, Mode::Forward, None, opts)
        })?)
    } else {
        None
    };
    let adjoint_source = match method {
        VrMethod::Cadis | VrMethod::CadisOmega => model.response_density(),
        VrMethod::FwCadis | VrMethod::FwCadisOmega => {
            let fwd = forward.as_ref().expect("forward solve ran");
            fw_adjoint_source(&fwd.scalar, model, objective)?
        }
    };
    let adjoint = timed_solve("adjoint", &mut timings, || {
        sn::solve(model, quad, Mode::Adjoint, Some(&adjoint_source), opts)
    })?;
    let importance = if method.uses_omega() {
        let fwd = forward.as_ref().expect("forward solve ran");
        omega_flux(&fwd.angular, &adjoint.angular, quad, DEFAULT_FALLBACK_DELTA)?.flux
    } else {
        adjoint.scalar.clone()
    };
    let map = cadis_params(&importance, model, rho, method)?;
    Ok(VrOutcome {
        map,
        importance,
        forward,
        adjoint,
        timings,
    })
}

// ---------------------------------------------------------------------------
// wwfile v1 / biased-source CSV

fn header_lines(map: &ImportanceMap) -> String {
    format!(
        "# method={} R={:e} rho={:e}\n# mesh nx={} ny={} groups={}\n",
        map.method, map.response, map.rho, map.nx, map.ny, map.n_groups
    )
}

/// Weight-window file: `i,j,group,w_low,w_surv,w_high`; zeros mark "no window".
pub fn wwfile_csv(map: &ImportanceMap) -> String {
    let mut out = header_lines(map);
    out.push_str("i,j,group,w_low,w_surv,w_high\n");
    for c in 0..map.n_cells() {
        let (i, j) = (c % map.nx, c / map.nx);
        for g in 0..map.n_groups {
            let (lo, s, hi) = map
                .window(c, g)
                .map_or((0.0, 0.0, 0.0), |w| (w.low, w.survival, w.high));
            let _ = writeln!(out, "{i},{j},{g},{lo:e},{s:e},{hi:e}");
        }
    }
    out
}

/// Biased source file: `i,j,group,q_hat,w0`; `w0 = 0` where undefined.
pub fn biased_source_csv(map: &ImportanceMap) -> String {
    let mut out = header_lines(map);
    out.push_str("i,j,group,q_hat,w0\n");
    for c in 0..map.n_cells() {
        let (i, j) = (c % map.nx, c / map.nx);
        for g in 0..map.n_groups {
            let k = c * map.n_groups + g;
            let _ = writeln!(out, "{i},{j},{g},{:e},{:e}", map.q_hat[k], map.w0[k].unwrap_or(0.0));
        }
    }
    out
}

struct Parsed {
    method: VrMethod,
    response: f64,
    rho: f64,
    dims: (usize, usize, usize),
    rows: Vec<Vec<f64>>,
}

fn parse_file(text: &str, header: &str, n_values: usize) -> Result<Parsed, ImportanceError> {
    let bad = |m: String| ImportanceError::Malformed(m);
    let mut method = None;
    let mut response = None;
    let mut rho = None;
    let mut dims = None;
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut nx = None;
            let mut ny = None;
            let mut groups = None;
            for tok in comment.split_whitespace() {
                let Some((key, val)) = tok.split_once('=') else { continue };
                let num = || val.parse::<f64>().map_err(|e| bad(format!("line {}: {key}: {e}", k + 1)));
                let int = || val.parse::<usize>().map_err(|e| bad(format!("line {}: {key}: {e}", k + 1)));
                match key {
                    "method" => method = Some(val.parse::<VrMethod>().map_err(bad)?),
                    "R" => response = Some(num()?),
                    "rho" => rho = Some(num()?),
                    "nx" => nx = Some(int()?),
                    "ny" => ny = Some(int()?),
                    "groups" => groups = Some(int()?),
                    _ => {}
                }
            }
            if let (Some(a), Some(b), Some(c)) = (nx, ny, groups) {
                dims = Some((a, b, c));
            }
            continue;
        }
        if !seen_header {
            if line != header {
                return Err(bad(format!("expected header `{header}`")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + n_values {
            return Err(bad(format!("line {}: expected {} fields", k + 1, 3 + n_values)));
        }
        let vals = fields
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("line {}: {e}", k + 1)))?;
        rows.push(vals);
    }
    let (Some(method), Some(response), Some(rho), Some(dims)) = (method, response, rho, dims) else {
        return Err(bad("missing `# method=.. R=.. rho=..` or `# mesh nx=.. ny=.. groups=..` line".into()));
    };
    if rows.len() != dims.0 * dims.1 * dims.2 {
        return Err(bad(format!("expected {} rows, found {}", dims.0 * dims.1 * dims.2, rows.len())));
    }
    Ok(Parsed {
        method,
        response,
        rho,
        dims,
        rows,
    })
}

fn row_index(row: &[f64], (nx, ny, gc): (usize, usize, usize)) -> Result<usize, ImportanceError> {
    let (i, j, g) = (row[0] as usize, row[1] as usize, row[2] as usize);
    if i >= nx || j >= ny || g >= gc {
        return Err(ImportanceError::Malformed(format!("row index ({i},{j},{g}) out of range")));
    }
    Ok((j * nx + i) * gc + g)
}

/// Reads a wwfile / biased-source pair and checks it against the deck mesh.
pub fn read_vr_files(
    ww_text: &str,
    source_text: &str,
    mesh: &Mesh,
    n_groups: usize,
) -> Result<ImportanceMap, ImportanceError> {
    let ww = parse_file(ww_text, "i,j,group,w_low,w_surv,w_high", 3)?;
    let src = parse_file(source_text, "i,j,group,q_hat,w0", 2)?;
    if ww.dims != src.dims || ww.method != src.method {
        return Err(ImportanceError::Malformed(
            "weight-window and biased-source files disagree".into(),
        ));
    }
    let (nx, ny, gc) = ww.dims;
    let len = nx * ny * gc;
    let mut map = ImportanceMap {
        nx,
        ny,
        n_groups: gc,
        cell_volume: mesh.cell_volume(),
        method: ww.method,
        response: ww.response,
        rho: ww.rho,
        q_hat: vec![0.0; len],
        w0: vec![None; len],
        windows: vec![None; len],
    };
    map.matches(mesh, n_groups)?;
    for row in &ww.rows {
        let k = row_index(row, ww.dims)?;
        if row[4] > 0.0 {
            map.windows[k] = Some(WeightWindow {
                low: row[3],
                survival: row[4],
                high: row[5],
            });
        }
    }
    for row in &src.rows {
        let k = row_index(row, src.dims)?;
        map.q_hat[k] = row[3];
        map.w0[k] = (row[4] > 0.0).then_some(row[4]);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_problem, parse_deck};
    use crate::quadrature::build_quadrature;

    fn two_cells() -> ProblemModel {
        parse_deck(
            r#"{"mesh": {"nx": 2, "ny": 1, "x_min": 0.0, "x_max": 2.0, "y_min": 0.0, "y_max": 1.0,
                "boundary": {"west": "vacuum", "east": "vacuum", "south": "vacuum", "north": "vacuum"}},
              "groups": {"count": 1},
              "materials": [{"name": "m", "sigma_t": [1.0], "sigma_s": [[0.5]]}],
              "cell_map": [0, 0],
              "sources": [{"kind": "cell_region", "cells": [[0, 0]], "spectrum": [1.0], "strength": 1.0}],
              "detectors": [{"name": "d", "cells": [[1, 0]], "sigma_d": [1.0]}]}"#,
        )
        .unwrap()
    }

    fn scalar(values: Vec<f64>, nx: usize, gc: usize) -> ScalarFluxField {
        ScalarFluxField { nx, ny: 1, n_groups: gc, values }
    }

    #[test]
    fn cadis_hand_example() {
        let model = two_cells();
        let map = cadis_params(&scalar(vec![2.0, 1.0], 2, 1), &model, 5.0, VrMethod::Cadis).unwrap();
        assert_eq!(map.response, 2.0);
        assert_eq!(map.q_hat, vec![1.0, 0.0]);
        assert_eq!(map.w0, vec![Some(1.0), None]);
        let w = map.windows.iter().map(|w| w.unwrap()).collect::<Vec<_>>();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-15 * b.abs();
        assert!(close(w[0].low, 1.0 / 3.0) && w[0].survival == 1.0 && close(w[0].high, 5.0 / 3.0));
        assert!(close(w[1].low, 2.0 / 3.0) && w[1].survival == 2.0 && close(w[1].high, 10.0 / 3.0));
    }

    #[test]
    fn cadis_scale_invariance() {
        let model = two_cells();
        let base = cadis_params(&scalar(vec![2.0, 1.0], 2, 1), &model, 5.0, VrMethod::Cadis).unwrap();
        let k = 7.3;
        let scaled = cadis_params(&scalar(vec![2.0 * k, k], 2, 1), &model, 5.0, VrMethod::Cadis).unwrap();
        assert!((scaled.response - k * base.response).abs() <= 1e-12 * scaled.response);
        for (a, b) in base.q_hat.iter().zip(&scaled.q_hat) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
        for (a, b) in base.windows.iter().zip(&scaled.windows) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!((a.low - b.low).abs() <= 1e-12 * a.low);
            assert!((a.high - b.high).abs() <= 1e-12 * a.high);
        }
    }

    #[test]
    fn uniform_importance_is_unbiased() {
        let model = builtin_problem("infinite_medium").unwrap();
        let n = model.mesh.n_cells();
        let phi = ScalarFluxField { nx: model.mesh.nx, ny: model.mesh.ny, n_groups: 1, values: vec![3.0; n] };
        let map = cadis_params(&phi, &model, 5.0, VrMethod::Cadis).unwrap();
        let s = model.total_strength();
        let q = model.source_density();
        for c in 0..n {
            assert!((map.q_hat[c] - q[c] / s).abs() <= 1e-15);
            assert_eq!(map.w0[c], Some(map.windows[c].unwrap().survival));
            assert_eq!(map.w0[c], map.w0[0]);
        }
    }

    #[test]
    fn no_response_path() {
        let model = two_cells();
        let err = cadis_params(&scalar(vec![0.0, 1.0], 2, 1), &model, 5.0, VrMethod::Cadis).unwrap_err();
        assert!(err.to_string().contains("no response path"));
        let mut no_det = model.clone();
        no_det.detectors.clear();
        let quad = build_quadrature(1, 1).unwrap();
        let err = make_vr(&no_det, &quad, VrMethod::Cadis, Objective::DoseSpace, &SolverOptions::default(), 5.0)
            .unwrap_err();
        assert!(err.to_string().contains("no response path"), "{err}");
    }

    #[test]
    fn fw_source_examples() {
        let model = parse_deck(
            r#"{"mesh": {"nx": 1, "ny": 1, "x_min": 0.0, "x_max": 1.0, "y_min": 0.0, "y_max": 1.0,
                "boundary": {"west": "vacuum", "east": "vacuum", "south": "vacuum", "north": "vacuum"}},
              "groups": {"count": 2},
              "materials": [{"name": "m", "sigma_t": [1.0, 1.0], "sigma_s": [[0.0, 0.5], [0.0, 0.5]]}],
              "cell_map": [0],
              "sources": [{"kind": "cell_region", "cells": [[0, 0]], "spectrum": [1.0, 0.0], "strength": 1.0}],
              "detectors": [{"name": "d", "cells": [[0, 0]], "sigma_d": [1.0, 1.0]}]}"#,
        )
        .unwrap();
        let phi = scalar(vec![2.0, 4.0], 1, 2);
        assert_eq!(fw_adjoint_source(&phi, &model, Objective::FluxSpace).unwrap(), vec![1.0 / 6.0; 2]);
        assert_eq!(fw_adjoint_source(&phi, &model, Objective::FluxEnergySpace).unwrap(), vec![0.5, 0.25]);
        assert_eq!(fw_adjoint_source(&phi, &model, Objective::DoseSpace).unwrap(), vec![1.0 / 6.0; 2]);
        assert!(matches!(
            fw_adjoint_source(&scalar(vec![0.0, 0.0], 1, 2), &model, Objective::FluxSpace),
            Err(ImportanceError::ZeroForwardFlux)
        ));
    }

    fn field_from(quad: &QuadratureSet, f: impl Fn(usize, usize) -> f64, cells: usize) -> AngularFluxField {
        let mut a = AngularFluxField::zeros(cells, 1, 1, quad.len(), Mode::Forward);
        for c in 0..cells {
            for m in 0..quad.len() {
                a.set(c, 0, m, f(c, m));
            }
        }
        a
    }

    #[test]
    fn omega_examples() {
        let quad = build_quadrature(2, 2).unwrap();
        let fwd = field_from(&quad, |c, m| 1.0 + (c * 7 + m) as f64 % 5.0, 3);
        let iso = field_from(&quad, |_, _| 2.5, 3);
        let om = omega_flux(&fwd, &iso, &quad, DEFAULT_FALLBACK_DELTA).unwrap();
        for &v in &om.flux.values {
            assert!((v - 2.5).abs() <= 1e-12 * 2.5);
        }
        assert!(om.fallback.iter().all(|f| !f));

        let spike = field_from(&quad, |_, m| if m == 5 { 3.0 } else { 0.0 }, 1);
        let adj = field_from(&quad, |_, m| 0.1 * m as f64 + 0.3, 1);
        let om = omega_flux(&spike, &adj, &quad, DEFAULT_FALLBACK_DELTA).unwrap();
        assert!((om.flux.values[0] - adj.get(0, 0, 5)).abs() <= 1e-12 * adj.get(0, 0, 5));
    }

    #[test]
    fn omega_fallback_uses_plain_average() {
        let quad = build_quadrature(1, 2).unwrap();
        let fwd = field_from(&quad, |c, _| if c == 0 { 1.0 } else { 0.0 }, 2);
        let adj = field_from(&quad, |_, m| m as f64, 2);
        let om = omega_flux(&fwd, &adj, &quad, DEFAULT_FALLBACK_DELTA).unwrap();
        assert_eq!(om.fallback, vec![false, true]);
        let plain: f64 = quad.dirs.iter().enumerate().map(|(m, d)| d.weight * m as f64).sum::<f64>() / (4.0 * PI);
        assert_eq!(om.flux.values[1], plain);
    }

    #[test]
    fn contributon_examples() {
        let quad = build_quadrature(2, 1).unwrap();
        let c = 1.5;
        let f = field_from(&quad, |_, _| c, 2);
        let z = field_from(&quad, |_, _| 0.0, 2);
        assert!(contributon_scalar(&f, &z, &quad).unwrap().values.iter().all(|&v| v == 0.0));
        for &v in &contributon_scalar(&f, &f, &quad).unwrap().values {
            assert!((v - 4.0 * PI * c * c).abs() <= 1e-12 * v);
        }
        let other = field_from(&quad, |_, _| 1.0, 3);
        assert!(contributon_scalar(&f, &other, &quad).is_err());
    }

    #[test]
    fn method_and_objective_parse() {
        assert_eq!("cadis-omega".parse::<VrMethod>().unwrap(), VrMethod::CadisOmega);
        assert_eq!("fw_cadis".parse::<VrMethod>().unwrap(), VrMethod::FwCadis);
        assert!("magic".parse::<VrMethod>().is_err());
        assert_eq!("dose-space".parse::<Objective>().unwrap(), Objective::DoseSpace);
    }

    #[test]
    fn files_round_trip_exactly() {
        let model = builtin_problem("box_scatter").unwrap();
        let quad = build_quadrature(1, 1).unwrap();
        let vr = make_vr(&model, &quad, VrMethod::CadisOmega, Objective::DoseSpace, &SolverOptions::default(), 5.0)
            .unwrap();
        let back = read_vr_files(&wwfile_csv(&vr.map), &biased_source_csv(&vr.map), &model.mesh, 2).unwrap();
        assert_eq!(back, vr.map);
        assert_eq!(vr.timings.len(), 2);

        let other = builtin_problem("infinite_medium").unwrap();
        let err = read_vr_files(&wwfile_csv(&vr.map), &biased_source_csv(&vr.map), &other.mesh, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("20x20") && msg.contains("4x4"), "{msg}");
    }
}
