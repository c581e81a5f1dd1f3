//! Multigroup Monte Carlo on the deterministic model.
//!
//! Histories are grouped in fixed-size batches. Each history draws from its
//! own ChaCha stream (`seed`, stream = history index) and batch sums are
//! merged in batch order, so a tally does not depend on the worker count.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::importance::{ImportanceError, ImportanceMap, WeightWindow};
use crate::model::{Boundary, ProblemModel, Region, Side, SourceKind};

pub const SPLIT_MAX: usize = 10;
pub const BATCH_SIZE: u64 = 1024;

#[derive(Debug, Error)]
pub enum McError {
    #[error("history count must be at least 1")]
    ZeroHistories,
    #[error("worker count must be at least 1")]
    ZeroWorkers,
    #[error("model has no source (total strength {0})")]
    ZeroSource(f64),
    #[error(transparent)]
    Importance(#[from] ImportanceError),
    #[error("biased source is empty or has a birth cell without a weight")]
    BadBiasedSource,
    #[error("figure of merit needs positive time and relative error (got T={time}, RE={rel_err})")]
    NonPositive { time: f64, rel_err: f64 },
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// Per-history substreams: stream `index` of the ChaCha8 generator keyed by `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngPolicy {
    pub seed: u64,
}

impl RngPolicy {
    pub fn history_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// Mean with relative error; `rel_err` is `None` when nothing scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub rel_err: Option<f64>,
}

impl Estimate {
    pub fn sigma(&self) -> f64 {
        self.rel_err.map_or(0.0, |r| r * self.mean.abs())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCounts {
    pub collisions: u64,
    pub splits: u64,
    pub roulette_kills: u64,
    pub escapes: u64,
}

impl EventCounts {
    fn add(&mut self, o: &EventCounts) {
        self.collisions += o.collisions;
        self.splits += o.splits;
        self.roulette_kills += o.roulette_kills;
        self.escapes += o.escapes;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tally {
    /// Detector response per group: volume-averaged Σ_d φ, per source particle × S.
    pub groups: Vec<Estimate>,
    pub total: Estimate,
    /// Weight escaping through each side (West, East, South, North), per source particle × S.
    pub leakage: [Estimate; 4],
    pub histories: u64,
    pub time_minutes: f64,
    pub events: EventCounts,
}

impl Tally {
    /// Largest group RE among scoring groups.
    pub fn max_group_rel_err(&self) -> Option<f64> {
        self.groups.iter().filter_map(|e| e.rel_err).reduce(f64::max)
    }

    pub fn fom(&self) -> Option<f64> {
        fom(self.time_minutes, self.total.rel_err?).ok()
    }

    /// `group,mean,rel_err` rows plus the footer; timing lines are optional so
    /// that files from different runs can be compared byte for byte.
    pub fn to_csv(&self, include_timing: bool) -> String {
        let re = |e: &Estimate| e.rel_err.map_or_else(|| "no_score".to_string(), |r| format!("{r:e}"));
        let mut out = String::from("group,mean,rel_err\n");
        for (g, e) in self.groups.iter().enumerate() {
            let _ = writeln!(out, "{g},{:e},{}", e.mean, re(e));
        }
        let _ = writeln!(out, "total,{:e},{}", self.total.mean, re(&self.total));
        let _ = writeln!(out, "histories,{}", self.histories);
        if include_timing {
            let _ = writeln!(out, "time_minutes,{:e}", self.time_minutes);
            match self.fom() {
                Some(f) => writeln!(out, "fom,{f:e}"),
                None => writeln!(out, "fom,no_score"),
            }
            .ok();
        }
        out
    }
}

/// Figure of merit 1/(T·RE²), T in minutes.
pub fn fom(time_minutes: f64, rel_err: f64) -> Result<f64, McError> {
    if !(time_minutes > 0.0 && rel_err > 0.0) {
        return Err(McError::NonPositive {
            time: time_minutes,
            rel_err,
        });
    }
    Ok(1.0 / (time_minutes * rel_err * rel_err))
}

/// RE from per-history sums; `None` when the mean is not positive.
pub fn relative_error(sum: f64, sum_sq: f64, n: u64) -> Option<f64> {
    let nf = n as f64;
    let mean = sum / nf;
    if !(mean > 0.0) {
        return None;
    }
    if n < 2 {
        return Some(0.0);
    }
    let var = (sum_sq / nf - mean * mean).max(0.0);
    Some((var / ((nf - 1.0) * mean * mean)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowOutcome {
    Unchanged,
    Split { copies: usize, weight: f64 },
    Survive { weight: f64 },
    Kill,
}

/// Splits above `high`, plays roulette below `low`; expected weight is kept.
pub fn apply_weight_window<R: Rng + ?Sized>(w: f64, window: &WeightWindow, rng: &mut R) -> WindowOutcome {
    if w > window.high {
        let n = ((w / window.survival).ceil() as usize).clamp(1, SPLIT_MAX);
        if n == 1 {
            return WindowOutcome::Unchanged;
        }
        WindowOutcome::Split {
            copies: n,
            weight: w / n as f64,
        }
    } else if w < window.low {
        if rng.random::<f64>() < w / window.survival {
            WindowOutcome::Survive {
                weight: window.survival,
            }
        } else {
            WindowOutcome::Kill
        }
    } else {
        WindowOutcome::Unchanged
    }
}

/// First bin whose cumulative probability exceeds `u`.
pub fn pick_bin(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParticle {
    pub cell: usize,
    pub group: usize,
    pub x: f64,
    pub y: f64,
    pub dir: [f64; 3],
    pub weight: f64,
}

/// Discrete (cell, group) sampler with the within-cell shape of the true
/// source: a point source keeps its point, a region source is uniform.
#[derive(Debug, Clone)]
pub struct SourceSampler {
    n_groups: usize,
    cdf: Vec<f64>,
    weights: Vec<f64>,
    /// Per source cell: (source index, strength density) pairs in deck order.
    cell_sources: Vec<Vec<(usize, f64)>>,
    points: Vec<Option<[f64; 2]>>,
}

impl SourceSampler {
    fn build(model: &ProblemModel, probs: Vec<f64>, weights: Vec<f64>) -> Result<Self, McError> {
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(McError::BadBiasedSource);
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc / total
            })
            .collect();
        if let Some(last) = cdf.iter().rposition(|_| true) {
            cdf[last] = 1.0;
        }
        let mut cell_sources = vec![Vec::new(); model.mesh.n_cells()];
        for (s, src) in model.sources.iter().enumerate() {
            let density = src.strength / src.cells.len() as f64;
            for &c in &src.cells {
                cell_sources[c].push((s, density));
            }
        }
        let points = model
            .sources
            .iter()
            .map(|s| match (&s.kind, &s.region) {
                (SourceKind::PointInCell, Region::Point(p)) => Some(*p),
                _ => None,
            })
            .collect();
        Ok(Self {
            n_groups: model.n_groups(),
            cdf,
            weights,
            cell_sources,
            points,
        })
    }

    /// Samples the physical source; every birth has weight 1.
    pub fn analog(model: &ProblemModel) -> Result<Self, McError> {
        let s = model.total_strength();
        if !(s > 0.0) {
            return Err(McError::ZeroSource(s));
        }
        let probs = model.source_density();
        let n = probs.len();
        Self::build(model, probs, vec![1.0; n])
    }

    /// Samples q̂·ΔV with birth weights w0.
    pub fn biased(model: &ProblemModel, map: &ImportanceMap) -> Result<Self, McError> {
        map.matches(&model.mesh, model.n_groups())?;
        let mut weights = vec![0.0; map.q_hat.len()];
        for (k, (&q, w0)) in map.q_hat.iter().zip(&map.w0).enumerate() {
            if q > 0.0 {
                weights[k] = w0.ok_or(McError::BadBiasedSource)?;
            }
        }
        let probs = map.q_hat.iter().map(|q| q * map.cell_volume).collect();
        Self::build(model, probs, weights)
    }

    pub fn sample<R: Rng + ?Sized>(&self, model: &ProblemModel, rng: &mut R) -> SourceParticle {
        let k = pick_bin(&self.cdf, rng.random::<f64>());
        let (cell, group) = (k / self.n_groups, k % self.n_groups);
        let here = &self.cell_sources[cell];
        let which = if here.len() <= 1 {
            here.first().map(|p| p.0)
        } else {
            let spec = &model.sources;
            let dens: Vec<f64> = here.iter().map(|&(s, d)| d * spec[s].spectrum[group]).collect();
            let total: f64 = dens.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = here[here.len() - 1].0;
            for (&(s, _), d) in here.iter().zip(&dens) {
                if u < *d {
                    pick = s;
                    break;
                }
                u -= d;
            }
            Some(pick)
        };
        let mesh = &model.mesh;
        let (x, y) = match which.and_then(|s| self.points[s]) {
            Some([px, py]) => (px, py),
            None => {
                let (i, j) = mesh.ij(cell);
                let x = mesh.x_edges[i] + rng.random::<f64>() * mesh.dx();
                let y = mesh.y_edges[j] + rng.random::<f64>() * mesh.dy();
                (x, y)
            }
        };
        SourceParticle {
            cell,
            group,
            x,
            y,
            dir: isotropic(rng),
            weight: self.weights[k],
        }
    }
}

/// One biased-source draw (see [`SourceSampler::biased`]).
pub fn sample_biased_source<R: Rng + ?Sized>(
    model: &ProblemModel,
    map: &ImportanceMap,
    rng: &mut R,
) -> Result<SourceParticle, McError> {
    Ok(SourceSampler::biased(model, map)?.sample(model, rng))
}

pub fn isotropic<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let w = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let s = (1.0 - w * w).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), w]
}

/// Sum and sum of squares of per-history scores.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn add(&mut self, o: &Moments) {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }
}

#[derive(Debug, Clone)]
struct BatchSums {
    groups: Vec<Moments>,
    total: Moments,
    leakage: [Moments; 4],
    events: EventCounts,
}

impl BatchSums {
    fn new(n_groups: usize) -> Self {
        Self {
            groups: vec![Moments::default(); n_groups],
            total: Moments::default(),
            leakage: [Moments::default(); 4],
            events: EventCounts::default(),
        }
    }

    fn add(&mut self, o: &BatchSums) {
        for (a, b) in self.groups.iter_mut().zip(&o.groups) {
            a.add(b);
        }
        self.total.add(&o.total);
        for (a, b) in self.leakage.iter_mut().zip(&o.leakage) {
            a.add(b);
        }
        self.events.add(&o.events);
    }
}

#[derive(Debug, Clone, Copy)]
struct Particle {
    i: usize,
    j: usize,
    x: f64,
    y: f64,
    dir: [f64; 3],
    group: usize,
    weight: f64,
}

struct Transport<'a> {
    model: &'a ProblemModel,
    windows: Option<&'a [Option<WeightWindow>]>,
    /// σ_d per (cell, group), summed over detectors.
    response: Vec<f64>,
    n_groups: usize,
}

impl Transport<'_> {
    fn window(&self, cell: usize, g: usize) -> Option<&WeightWindow> {
        self.windows.and_then(|w| w[cell * self.n_groups + g].as_ref())
    }

    /// Applies the window at the particle's cell and group. Returns false if
    /// the particle was killed; split copies are pushed onto `bank`.
    fn check_window(&self, p: &mut Particle, bank: &mut Vec<Particle>, rng: &mut ChaCha8Rng, ev: &mut EventCounts) -> bool {
        let cell = self.model.mesh.index(p.i, p.j);
        let Some(win) = self.window(cell, p.group) else {
            return true;
        };
        match apply_weight_window(p.weight, win, rng) {
            WindowOutcome::Unchanged => true,
            WindowOutcome::Split { copies, weight } => {
                p.weight = weight;
                ev.splits += 1;
                bank.extend(std::iter::repeat_n(*p, copies - 1));
                true
            }
            WindowOutcome::Survive { weight } => {
                p.weight = weight;
                true
            }
            WindowOutcome::Kill => {
                ev.roulette_kills += 1;
                false
            }
        }
    }

    /// Follows one particle until absorption, escape or roulette.
    fn track(
        &self,
        mut p: Particle,
        bank: &mut Vec<Particle>,
        rng: &mut ChaCha8Rng,
        score: &mut [f64],
        leak: &mut [f64; 4],
        ev: &mut EventCounts,
    ) {
        let mesh = &self.model.mesh;
        let gc = self.n_groups;
        loop {
            let cell = mesh.index(p.i, p.j);
            let mat = self.model.material_of(cell);
            let sig_t = mat.sigma_t[p.group];
            let d_coll = if sig_t > 0.0 {
                -(1.0 - rng.random::<f64>()).ln() / sig_t
            } else {
                f64::INFINITY
            };
            let [u, v, _] = p.dir;
            let dx = if u > 0.0 {
                (mesh.x_edges[p.i + 1] - p.x) / u
            } else if u < 0.0 {
                (mesh.x_edges[p.i] - p.x) / u
            } else {
                f64::INFINITY
            };
            let dy = if v > 0.0 {
                (mesh.y_edges[p.j + 1] - p.y) / v
            } else if v < 0.0 {
                (mesh.y_edges[p.j] - p.y) / v
            } else {
                f64::INFINITY
            };
            let d_bound = dx.min(dy).max(0.0);
            let step = d_coll.min(d_bound);
            let sd = self.response[cell * gc + p.group];
            if sd > 0.0 {
                score[p.group] += p.weight * step * sd;
            }

            if d_coll < d_bound {
                p.x += step * u;
                p.y += step * v;
                ev.collisions += 1;
                if rng.random::<f64>() * sig_t < mat.sigma_a(p.group) {
                    return;
                }
                let out = mat.sigma_s_out(p.group);
                let mut r = rng.random::<f64>() * out;
                let row = &mat.sigma_s[p.group];
                let mut g2 = row.iter().rposition(|&s| s > 0.0).unwrap_or(p.group);
                for (k, &s) in row.iter().enumerate() {
                    if r < s {
                        g2 = k;
                        break;
                    }
                    r -= s;
                }
                p.group = g2;
                p.dir = isotropic(rng);
                if !self.check_window(&mut p, bank, rng, ev) {
                    return;
                }
                continue;
            }

            // boundary crossing; x first on ties, y follows with a zero step
            let (side, forward) = if dx <= dy {
                p.x = if u > 0.0 { mesh.x_edges[p.i + 1] } else { mesh.x_edges[p.i] };
                p.y += step * v;
                if u > 0.0 {
                    (Side::East, p.i + 1 < mesh.nx)
                } else {
                    (Side::West, p.i > 0)
                }
            } else {
                p.y = if v > 0.0 { mesh.y_edges[p.j + 1] } else { mesh.y_edges[p.j] };
                p.x += step * u;
                if v > 0.0 {
                    (Side::North, p.j + 1 < mesh.ny)
                } else {
                    (Side::South, p.j > 0)
                }
            };
            if forward {
                match side {
                    Side::East => p.i += 1,
                    Side::West => p.i -= 1,
                    Side::North => p.j += 1,
                    Side::South => p.j -= 1,
                }
                if !self.check_window(&mut p, bank, rng, ev) {
                    return;
                }
                continue;
            }
            match mesh.boundary.get(side) {
                Boundary::Vacuum => {
                    leak[side.index()] += p.weight;
                    ev.escapes += 1;
                    return;
                }
                Boundary::Reflective => match side {
                    Side::East | Side::West => p.dir[0] = -p.dir[0],
                    Side::North | Side::South => p.dir[1] = -p.dir[1],
                },
            }
        }
    }

    fn history(&self, sampler: &SourceSampler, rng: &mut ChaCha8Rng, sums: &mut BatchSums, scratch: &mut Vec<f64>) {
        let mesh = &self.model.mesh;
        let born = sampler.sample(self.model, rng);
        let (i, j) = mesh.ij(born.cell);
        scratch.iter_mut().for_each(|s| *s = 0.0);
        let mut leak = [0.0; 4];
        let mut bank = vec![Particle {
            i,
            j,
            x: born.x,
            y: born.y,
            dir: born.dir,
            group: born.group,
            weight: born.weight,
        }];
        while let Some(p) = bank.pop() {
            self.track(p, &mut bank, rng, scratch, &mut leak, &mut sums.events);
        }
        let mut total = 0.0;
        for (m, &x) in sums.groups.iter_mut().zip(scratch.iter()) {
            m.push(x);
            total += x;
        }
        sums.total.push(total);
        for (m, &x) in sums.leakage.iter_mut().zip(&leak) {
            m.push(x);
        }
    }
}

/// Runs `histories` source particles, optionally with source biasing and
/// weight windows from `importance`.
pub fn run_histories(
    model: &ProblemModel,
    importance: Option<&ImportanceMap>,
    histories: u64,
    seed: u64,
    n_workers: usize,
) -> Result<Tally, McError> {
    if histories == 0 {
        return Err(McError::ZeroHistories);
    }
    if n_workers == 0 {
        return Err(McError::ZeroWorkers);
    }
    let strength = model.total_strength();
    if !(strength > 0.0) {
        return Err(McError::ZeroSource(strength));
    }
    let sampler = match importance {
        Some(map) => SourceSampler::biased(model, map)?,
        None => SourceSampler::analog(model)?,
    };
    let gc = model.n_groups();
    let transport = Transport {
        model,
        windows: importance.map(|m| m.windows.as_slice()),
        response: model.response_density(),
        n_groups: gc,
    };
    let policy = RngPolicy { seed };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n_workers)
        .build()
        .map_err(|e| McError::Pool(e.to_string()))?;

    let start = Instant::now();
    let n_batches = histories.div_ceil(BATCH_SIZE);
    let batches: Vec<BatchSums> = pool.install(|| {
        (0..n_batches)
            .into_par_iter()
            .map(|b| {
                let mut sums = BatchSums::new(gc);
                let mut scratch = vec![0.0; gc];
                let end = ((b + 1) * BATCH_SIZE).min(histories);
                for h in b * BATCH_SIZE..end {
                    let mut rng = policy.history_rng(h);
                    transport.history(&sampler, &mut rng, &mut sums, &mut scratch);
                }
                sums
            })
            .collect()
    });
    let mut sums = BatchSums::new(gc);
    for b in &batches {
        sums.add(b);
    }
    let elapsed = start.elapsed().as_secs_f64() / 60.0;

    let det_volume = model.detector_volume();
    let scale = if det_volume > 0.0 { strength / det_volume } else { 0.0 };
    let n = histories as f64;
    let estimate = |m: &Moments, k: f64| Estimate {
        mean: k * m.sum / n,
        rel_err: relative_error(m.sum, m.sum_sq, histories),
    };
    Ok(Tally {
        groups: sums.groups.iter().map(|m| estimate(m, scale)).collect(),
        total: estimate(&sums.total, scale),
        leakage: std::array::from_fn(|s| estimate(&sums.leakage[s], strength)),
        histories,
        time_minutes: elapsed,
        events: sums.events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_problem;

    const WIN: WeightWindow = WeightWindow {
        low: 1.0 / 3.0,
        survival: 1.0,
        high: 5.0 / 3.0,
    };

    #[test]
    fn window_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            apply_weight_window(2.0, &WIN, &mut rng),
            WindowOutcome::Split { copies: 2, weight: 1.0 }
        );
        assert_eq!(apply_weight_window(1.0, &WIN, &mut rng), WindowOutcome::Unchanged);
        let mut survived = 0;
        let trials = 100_000;
        for _ in 0..trials {
            match apply_weight_window(0.1, &WIN, &mut rng) {
                WindowOutcome::Survive { weight } => {
                    assert_eq!(weight, 1.0);
                    survived += 1;
                }
                WindowOutcome::Kill => {}
                other => panic!("unexpected {other:?}"),
            }
        }
        let p = survived as f64 / trials as f64;
        let sigma = (0.1 * 0.9 / trials as f64).sqrt();
        assert!((p - 0.1).abs() <= 4.0 * sigma, "{p}");
    }

    #[test]
    fn split_is_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            apply_weight_window(50.0, &WIN, &mut rng),
            WindowOutcome::Split { copies: SPLIT_MAX, weight: 5.0 }
        );
    }

    #[test]
    fn cdf_inversion() {
        let cdf = [0.75, 1.0];
        assert_eq!(pick_bin(&cdf, 0.5), 0);
        assert_eq!(pick_bin(&cdf, 0.75), 1);
        assert_eq!(pick_bin(&cdf, 0.0), 0);
        assert_eq!(pick_bin(&[0.0, 0.5, 0.5, 1.0], 0.5), 3);
    }

    #[test]
    fn fom_examples() {
        assert_eq!(fom(1.0, 1.0).unwrap(), 1.0);
        assert!(fom(0.0, 1.0).is_err());
        assert!(fom(1.0, -1.0).is_err());
    }

    #[test]
    fn relative_error_formula() {
        // scores 1, 0, 0, 0
        let re = relative_error(1.0, 1.0, 4).unwrap();
        let mean: f64 = 0.25;
        let want = ((1.0 / 4.0 - mean * mean) / (3.0 * mean * mean)).sqrt();
        assert_eq!(re, want);
        assert_eq!(relative_error(0.0, 0.0, 10), None);
    }

    #[test]
    fn streams_are_distinct() {
        let p = RngPolicy { seed: 9 };
        let a: u64 = p.history_rng(0).random();
        let b: u64 = p.history_rng(1).random();
        let c: u64 = RngPolicy { seed: 10 }.history_rng(0).random();
        assert!(a != b && a != c);
        assert_eq!(a, p.history_rng(0).random::<u64>());
    }

    #[test]
    fn isotropic_directions_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let d = isotropic(&mut rng);
            assert!((d.iter().map(|c| c * c).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let model = builtin_problem("infinite_medium").unwrap();
        assert!(matches!(run_histories(&model, None, 0, 1, 1), Err(McError::ZeroHistories)));
        let mut none = model.clone();
        none.sources.clear();
        assert!(matches!(run_histories(&none, None, 10, 1, 1), Err(McError::ZeroSource(_))));
    }

    #[test]
    fn analog_weights_stay_one() {
        let model = builtin_problem("box_scatter").unwrap();
        let t = run_histories(&model, None, 2000, 3, 1).unwrap();
        assert_eq!(t.events.splits + t.events.roulette_kills, 0);
        // escapes count whole particles, so with unit weights the leaked weight is integral
        let leaked: f64 = t.leakage.iter().map(|e| e.mean * 2000.0 / model.total_strength()).sum();
        assert!((leaked - t.events.escapes as f64).abs() < 1e-6);
    }
}
