//! Regenerates the bundled decks under `decks/`.
//!
//! `cargo run --example gen_decks -- crates/core/decks`

use std::path::PathBuf;

use hybrid_vr::model::{
    write_deck, BBox, Boundaries, Boundary, DetectorSpec, Material, Mesh, MultigroupXs, ProblemModel,
    Region, SourceKind, SourceSpec,
};

fn resolved(mesh: &Mesh, region: &Region) -> Vec<usize> {
    match region {
        Region::Cells(list) => list.iter().map(|&[i, j]| mesh.index(i, j)).collect(),
        Region::BBox(b) => mesh.cells_in_bbox(b),
        Region::Point([x, y]) => vec![mesh.locate(*x, *y).expect("point inside mesh")],
    }
}

fn source(mesh: &Mesh, kind: SourceKind, region: Region, spectrum: Vec<f64>, strength: f64) -> SourceSpec {
    SourceSpec {
        kind,
        cells: resolved(mesh, &region),
        region,
        spectrum,
        strength,
    }
}

fn detector(mesh: &Mesh, name: &str, region: Region, sigma_d: Vec<f64>) -> DetectorSpec {
    DetectorSpec {
        name: name.to_string(),
        cells: resolved(mesh, &region),
        region,
        sigma_d,
    }
}

fn bbox(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Region {
    Region::BBox(BBox { x_min, x_max, y_min, y_max })
}

fn infinite_medium() -> ProblemModel {
    let mesh = Mesh::new((4, 4), (0.0, 4.0), (0.0, 4.0), vec![0; 16], Boundaries::uniform(Boundary::Reflective));
    let xs = MultigroupXs {
        n_groups: 1,
        materials: vec![Material { name: "absorber".into(), sigma_t: vec![0.5], sigma_s: vec![vec![0.0]] }],
    };
    let sources = vec![source(&mesh, SourceKind::CellRegion, bbox(0.0, 4.0, 0.0, 4.0), vec![1.0], 16.0)];
    let detectors = vec![detector(&mesh, "center", bbox(1.0, 3.0, 1.0, 3.0), vec![1.0])];
    ProblemModel { mesh, xs, sources, detectors }
}

fn absorber_slab() -> ProblemModel {
    let boundary = Boundaries {
        west: Boundary::Vacuum,
        east: Boundary::Vacuum,
        south: Boundary::Reflective,
        north: Boundary::Reflective,
    };
    let mesh = Mesh::new((200, 1), (0.0, 2.0), (0.0, 1.0), vec![0; 200], boundary);
    let xs = MultigroupXs {
        n_groups: 1,
        materials: vec![Material { name: "absorber".into(), sigma_t: vec![1.0], sigma_s: vec![vec![0.0]] }],
    };
    let sources = vec![source(&mesh, SourceKind::CellRegion, Region::Cells(vec![[0, 0]]), vec![1.0], 1.0)];
    let detectors = vec![detector(&mesh, "right_column", Region::Cells(vec![[199, 0]]), vec![1.0])];
    ProblemModel { mesh, xs, sources, detectors }
}

fn box_scatter() -> ProblemModel {
    let (nx, ny) = (20, 20);
    let mut cell_map = vec![0; nx * ny];
    // denser block in the middle
    for j in 8..12 {
        for i in 6..14 {
            cell_map[j * nx + i] = 1;
        }
    }
    let mesh = Mesh::new((nx, ny), (0.0, 20.0), (0.0, 20.0), cell_map, Boundaries::uniform(Boundary::Vacuum));
    let xs = MultigroupXs {
        n_groups: 2,
        materials: vec![
            Material {
                name: "scatterer".into(),
                sigma_t: vec![0.5, 0.8],
                sigma_s: vec![vec![0.3, 0.1], vec![0.0, 0.6]],
            },
            Material {
                name: "dense".into(),
                sigma_t: vec![1.0, 1.5],
                sigma_s: vec![vec![0.5, 0.3], vec![0.0, 1.0]],
            },
        ],
    };
    let sources = vec![source(&mesh, SourceKind::CellRegion, bbox(0.0, 4.0, 0.0, 4.0), vec![1.0, 0.0], 1.0)];
    let detectors = vec![detector(&mesh, "corner", bbox(16.0, 20.0, 16.0, 20.0), vec![0.1, 1.0])];
    ProblemModel { mesh, xs, sources, detectors }
}

const AIR: usize = 0;
const CONCRETE: usize = 1;
const DETECTOR: usize = 2;

fn labyrinth2d() -> ProblemModel {
    let (x_min, x_max, y_min, y_max) = (-100.0, 100.0, -60.0, 60.0);
    let h = 2.0;
    let nx = ((x_max - x_min) / h) as usize;
    let ny = ((y_max - y_min) / h) as usize;
    let mut cell_map = vec![AIR; nx * ny];
    let probe = Mesh::new((nx, ny), (x_min, x_max), (y_min, y_max), cell_map.clone(), Boundaries::uniform(Boundary::Vacuum));
    for c in 0..nx * ny {
        let (x, y) = probe.cell_center(c);
        let in_shield = (-40.0..=50.0).contains(&x);
        let in_channel = (-4.0..=4.0).contains(&y);
        if in_shield && !in_channel {
            cell_map[c] = CONCRETE;
        }
        if (70.0..=80.0).contains(&x) && (-20.0..=-10.0).contains(&y) {
            cell_map[c] = DETECTOR;
        }
    }
    let mesh = Mesh::new((nx, ny), (x_min, x_max), (y_min, y_max), cell_map, Boundaries::uniform(Boundary::Vacuum));
    let xs = MultigroupXs {
        n_groups: 3,
        materials: vec![
            Material {
                name: "air".into(),
                sigma_t: vec![2.0e-4, 2.0e-4, 3.0e-4],
                sigma_s: vec![vec![1.5e-4, 0.5e-4, 0.0], vec![0.0, 1.8e-4, 0.2e-4], vec![0.0, 0.0, 2.5e-4]],
            },
            Material {
                name: "concrete".into(),
                sigma_t: vec![0.15, 0.30, 0.50],
                sigma_s: vec![vec![0.054, 0.0315, 0.0045], vec![0.0, 0.126, 0.054], vec![0.0, 0.0, 0.30]],
            },
            Material {
                name: "detector".into(),
                sigma_t: vec![0.10, 0.20, 0.60],
                sigma_s: vec![vec![0.06, 0.03, 0.0], vec![0.0, 0.12, 0.04], vec![0.0, 0.0, 0.10]],
            },
        ],
    };
    let sources = vec![source(&mesh, SourceKind::PointInCell, Region::Point([-75.0, 0.0]), vec![1.0, 0.0, 0.0], 1.0)];
    let detectors = vec![detector(&mesh, "nai", bbox(70.0, 80.0, -20.0, -10.0), vec![0.10, 0.20, 0.60])];
    ProblemModel { mesh, xs, sources, detectors }
}

fn main() {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("crates/core/decks"));
    for (name, model) in [
        ("infinite_medium", infinite_medium()),
        ("absorber_slab", absorber_slab()),
        ("box_scatter", box_scatter()),
        ("labyrinth2d", labyrinth2d()),
    ] {
        model.validate().expect("bundled deck is valid");
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, write_deck(&model)).expect("write deck");
        println!("wrote {}", path.display());
    }
}
