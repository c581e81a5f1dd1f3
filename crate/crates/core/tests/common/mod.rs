#![allow(dead_code)]

use hybrid_vr::model::{parse_deck, ProblemModel};
use proptest::prelude::*;
use serde_json::json;

/// Small random decks: every material, boundary type and region form the
/// parser accepts, with scattering strictly below the total.
pub fn small_deck() -> impl Strategy<Value = ProblemModel> {
    (1usize..5, 1usize..5, 1usize..4, 1usize..4)
        .prop_flat_map(|(nx, ny, groups, n_mat)| {
            let mats = proptest::collection::vec(
                (
                    proptest::collection::vec(0.1f64..2.0, groups),
                    proptest::collection::vec(0.0f64..1.0, groups * groups),
                    0.0f64..0.95,
                ),
                n_mat,
            );
            (
                Just((nx, ny, groups)),
                mats,
                proptest::collection::vec(0..n_mat, nx * ny),
                proptest::collection::vec(any::<bool>(), 4),
                (0..nx, 0..ny, 0..nx, 0..ny),
                proptest::collection::vec(0.0f64..1.0, groups),
                0.5f64..4.0,
                proptest::collection::vec(0.01f64..1.0, groups),
            )
        })
        .prop_map(|((nx, ny, groups), mats, cell_map, refl, (si, sj, di, dj), spec, strength, sigma_d)| {
            let materials: Vec<_> = mats
                .iter()
                .enumerate()
                .map(|(k, (st, raw, c))| {
                    // row g scatters a fraction c of σt[g], split by `raw`
                    let sigma_s: Vec<Vec<f64>> = (0..groups)
                        .map(|g| {
                            let row = &raw[g * groups..(g + 1) * groups];
                            let sum: f64 = row.iter().sum::<f64>().max(1e-12);
                            row.iter().map(|r| st[g] * c * r / sum).collect()
                        })
                        .collect();
                    json!({"name": format!("m{k}"), "sigma_t": st, "sigma_s": sigma_s})
                })
                .collect();
            let side = |b: bool| if b { "reflective" } else { "vacuum" };
            let mut spectrum = spec.clone();
            spectrum[0] += 0.1;
            let norm: f64 = spectrum.iter().sum();
            spectrum.iter_mut().for_each(|v| *v /= norm);
            let text = json!({
                "mesh": {"nx": nx, "ny": ny, "x_min": 0.0, "x_max": nx as f64 * 1.5,
                         "y_min": -1.0, "y_max": ny as f64 - 1.0,
                         "boundary": {"west": side(refl[0]), "east": side(refl[1]),
                                      "south": side(refl[2]), "north": side(refl[3])}},
                "groups": {"count": groups},
                "materials": materials,
                "cell_map": cell_map,
                "sources": [{"kind": "cell_region", "cells": [[si, sj]], "spectrum": spectrum, "strength": strength}],
                "detectors": [{"name": "d", "cells": [[di, dj]], "sigma_d": sigma_d}],
            })
            .to_string();
            parse_deck(&text).expect("generated deck is valid")
        })
}

/// ⟨a, b⟩ with cell volumes.
pub fn inner(a: &[f64], b: &[f64], dv: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y * dv).sum()
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// E₂(t) = ∫₀¹ exp(−t/μ) dμ.
pub fn e2(t: f64) -> f64 {
    simpson(|mu| if mu > 0.0 { (-t / mu).exp() } else if t == 0.0 { 1.0 } else { 0.0 }, 0.0, 1.0, 2000)
}

/// Probability that a particle born uniformly in [0, width] with an isotropic
/// direction leaves a purely absorbing slab [0, thickness] through the far face.
pub fn slab_escape(sigma: f64, thickness: f64, width: f64) -> f64 {
    simpson(|x| 0.5 * e2(sigma * (thickness - x)), 0.0, width, 200) / width
}

/// `slab_escape(1, 2, 0.01)`, the absorber_slab deck's geometry.
pub const SLAB_ESCAPE: f64 = 0.01888994820571377;
