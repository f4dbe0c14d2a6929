//! Scenario files: the JSON description of one simulation case and its
//! translation into an assembled system.
//!
//! Every relative path inside a scenario (fracture file, output
//! directory, basis cache) is resolved against the directory containing
//! the scenario file, so a scenario bundle can be moved as a unit.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_system, AssemblyOptions, ContinuumKind, ContinuumSpec, CouplingGeometry,
    CouplingSpec, MulticontinuumSystem, WellSpec,
};
use crate::geometry::{
    build_grid, mesh_fractures, read_fracture_network, FractureMesh, FractureNetwork, Segment,
    StructuredGrid2D,
};
use crate::timestepping::SchemeKind;

use super::ExperimentError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum KindSpec {
    Matrix,
    Fracture,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ContinuumEntry {
    pub kind: KindSpec,
    pub c: f64,
    pub k: f64,
    #[serde(default)]
    pub initial: f64,
    #[serde(default)]
    pub source: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    pub pair: (usize, usize),
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WellEntry {
    pub continuum: usize,
    /// Axis-aligned rectangle [x0, y0, x1, y1].
    pub rect: [f64; 4],
    pub rate: f64,
    pub pressure: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CoarseSpec {
    pub nx: usize,
    pub ny: usize,
    /// Oversampling layers, in coarse cells, around each coarse block.
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub tolerance: f64,
    pub max_iterations_factor: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec { tolerance: 1e-8, max_iterations_factor: 10 }
    }
}

fn default_schemes() -> Vec<String> {
    vec!["coupled".into(), "d".into(), "l".into(), "u".into()]
}

fn default_output_dir() -> String {
    "out".into()
}

/// One simulation case: geometry, physics, schedule, scheme list, and
/// optional coarse level.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fracture_file: Option<String>,
    pub continua: Vec<ContinuumEntry>,
    #[serde(default)]
    pub couplings: Vec<CouplingEntry>,
    #[serde(default)]
    pub wells: Vec<WellEntry>,
    pub tau: f64,
    pub n_steps: usize,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse: Option<CoarseSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    /// Also compute the measure-weighted error norm next to the plain
    /// Euclidean one.
    #[serde(default)]
    pub weighted_norm: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_cache: Option<String>,
    /// Directory the scenario file was loaded from; anchors relative
    /// paths. Not part of the file format.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    /// Reads and validates a scenario file.
    pub fn load(path: &Path) -> Result<Scenario, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut scenario: Scenario =
            serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!(
                "{}: {e}",
                path.display()
            )))?;
        scenario.base_dir = path.parent().map(Path::to_path_buf);
        scenario.validate()?;
        Ok(scenario)
    }

    /// Writes the scenario as pretty-printed JSON.
    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| {
            ExperimentError::Config(format!("serializing scenario: {e}"))
        })?;
        std::fs::write(path, text + "\n").map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Resolves a scenario-relative path against the scenario directory.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            return p.to_path_buf();
        }
        match &self.base_dir {
            Some(dir) => dir.join(p),
            None => p.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.grid.nx == 0 || self.grid.ny == 0 {
            return bad("grid dimensions must be positive".into());
        }
        if !(self.grid.h > 0.0) || !self.grid.h.is_finite() {
            return bad(format!("grid spacing must be positive, got {}", self.grid.h));
        }
        if self.continua.is_empty() {
            return bad("at least one continuum is required".into());
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("time step must be positive, got {}", self.tau));
        }
        if self.n_steps == 0 {
            return bad("at least one time step is required".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        for s in &self.schemes {
            if SchemeKind::parse(s).is_none() {
                return bad(format!(
                    "unknown scheme {s:?}; expected coupled, d, l, or u"
                ));
            }
        }
        let l = self.continua.len();
        let has_fracture_continuum =
            self.continua.iter().any(|c| c.kind == KindSpec::Fracture);
        if has_fracture_continuum && self.fracture_file.is_none() {
            return bad("a fracture continuum needs a fracture_file".into());
        }
        for (i, cpl) in self.couplings.iter().enumerate() {
            let (a, b) = cpl.pair;
            if a >= l || b >= l {
                return bad(format!(
                    "coupling {i} names continuum {} but only {l} are declared",
                    a.max(b)
                ));
            }
            if a == b {
                return bad(format!("coupling {i} pairs continuum {a} with itself"));
            }
            if !(cpl.sigma >= 0.0) {
                return bad(format!("coupling {i} has negative sigma {}", cpl.sigma));
            }
        }
        for (i, w) in self.wells.iter().enumerate() {
            if w.continuum >= l {
                return bad(format!(
                    "well {i} names continuum {} but only {l} are declared",
                    w.continuum
                ));
            }
            if w.rect[0] > w.rect[2] || w.rect[1] > w.rect[3] {
                return bad(format!("well {i} has an empty rectangle"));
            }
        }
        if let Some(c) = &self.coarse {
            if c.nx == 0 || c.ny == 0 {
                return bad("coarse dimensions must be positive".into());
            }
            if self.grid.nx % c.nx != 0 || self.grid.ny % c.ny != 0 {
                return bad(format!(
                    "coarse grid {}x{} does not divide fine grid {}x{}",
                    c.nx, c.ny, self.grid.nx, self.grid.ny
                ));
            }
        }
        if !(self.solver.tolerance > 0.0) {
            return bad("solver tolerance must be positive".into());
        }
        if self.solver.max_iterations_factor == 0 {
            return bad("solver iteration factor must be positive".into());
        }
        Ok(())
    }

    /// Scheme list as parsed kinds, in file order without duplicates.
    pub fn scheme_kinds(&self) -> Vec<SchemeKind> {
        let mut out: Vec<SchemeKind> = Vec::new();
        for s in &self.schemes {
            if let Some(k) = SchemeKind::parse(s) {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
        }
        out
    }

    /// Builds the fine-grid system this scenario describes.
    pub fn build(&self) -> Result<BuiltScenario, ExperimentError> {
        self.validate()?;
        let grid = Arc::new(build_grid(self.grid.nx, self.grid.ny, self.grid.h)?);
        let mesh = match &self.fracture_file {
            Some(rel) => {
                let path = self.resolve(rel);
                let network = read_fracture_network(&path)?;
                Some(Arc::new(mesh_fractures(&grid, &network)?))
            }
            None => None,
        };
        let continua: Vec<ContinuumSpec> = self
            .continua
            .iter()
            .map(|c| ContinuumSpec {
                kind: match c.kind {
                    KindSpec::Matrix => ContinuumKind::Matrix,
                    KindSpec::Fracture => ContinuumKind::Fracture,
                },
                c: c.c,
                k: c.k,
                source: c.source,
                initial: c.initial,
            })
            .collect();
        let couplings: Vec<CouplingSpec> = self
            .couplings
            .iter()
            .map(|cpl| {
                let (a, b) = cpl.pair;
                let geometry = if continua[a].kind == continua[b].kind {
                    CouplingGeometry::CoLocated
                } else {
                    CouplingGeometry::Embedded
                };
                CouplingSpec { pair: cpl.pair, sigma: cpl.sigma, geometry }
            })
            .collect();
        let wells: Vec<WellSpec> = self
            .wells
            .iter()
            .map(|w| WellSpec {
                continuum: w.continuum,
                rect: (w.rect[0], w.rect[1], w.rect[2], w.rect[3]),
                rate: w.rate,
                pressure: w.pressure,
            })
            .collect();
        let system = assemble_system(
            &grid,
            mesh.as_ref(),
            &continua,
            &couplings,
            &wells,
            &AssemblyOptions::default(),
        )?;
        Ok(BuiltScenario { grid, mesh, system })
    }
}

/// The assembled form of a scenario.
pub struct BuiltScenario {
    pub grid: Arc<StructuredGrid2D>,
    pub mesh: Option<Arc<FractureMesh>>,
    pub system: MulticontinuumSystem,
}

/// Synthetic 25-segment network used by the bundled scenarios. Four
/// segments are placed to thread the two well rectangles (one pair
/// crossing inside each), the rest are seeded pseudo-random chords of
/// the unit square. The same seed always yields the same network.
pub fn bundled_fracture_network() -> FractureNetwork {
    let mut segments = vec![
        // Pair crossing inside the first well rectangle [0.1,0.15]^2.
        Segment { a: (0.05, 0.125), b: (0.45, 0.125) },
        Segment { a: (0.125, 0.05), b: (0.125, 0.5) },
        // Pair crossing inside the second rectangle [0.6,0.65]x[0.85,0.9].
        Segment { a: (0.55, 0.875), b: (0.95, 0.875) },
        Segment { a: (0.625, 0.55), b: (0.625, 0.95) },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x6672_6163);
    while segments.len() < 25 {
        let cx: f64 = rng.gen_range(0.26..0.74);
        let cy: f64 = rng.gen_range(0.26..0.74);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let half: f64 = rng.gen_range(0.14..0.24);
        let (dx, dy) = (half * angle.cos(), half * angle.sin());
        segments.push(Segment { a: (cx - dx, cy - dy), b: (cx + dx, cy + dy) });
    }
    FractureNetwork { segments }
}

const NETWORK_FILE: &str = "fractures25.txt";

struct BundledCase {
    name: &'static str,
    nx: usize,
    coarse_nx: usize,
}

/// Writes the bundled fracture network and the six ready-to-run
/// scenario files (two physics variants, three grid pairings) into
/// `dir`. Returns the paths written.
pub fn make_bundled_scenarios(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let network_path = dir.join(NETWORK_FILE);
    crate::geometry::write_fracture_network(&network_path, &bundled_fracture_network())?;
    let mut written = vec![network_path];

    let cases = [
        BundledCase { name: "fine200-c20", nx: 200, coarse_nx: 20 },
        BundledCase { name: "fine200-c40", nx: 200, coarse_nx: 40 },
        BundledCase { name: "desk100-c20", nx: 100, coarse_nx: 20 },
    ];
    for physics in ["2c", "3c"] {
        for case in &cases {
            let name = format!("{physics}-{}", case.name);
            let scenario = bundled_scenario(physics, &name, case.nx, case.coarse_nx);
            let path = dir.join(format!("{name}.json"));
            scenario.save(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn bundled_scenario(physics: &str, name: &str, nx: usize, coarse_nx: usize) -> Scenario {
    let (continua, couplings, well_continuum) = match physics {
        "2c" => (
            vec![
                ContinuumEntry {
                    kind: KindSpec::Matrix,
                    c: 0.1,
                    k: 1.0,
                    initial: 1.0,
                    source: 0.0,
                },
                ContinuumEntry {
                    kind: KindSpec::Fracture,
                    c: 1.0,
                    k: 1e6,
                    initial: 1.0,
                    source: 0.0,
                },
            ],
            vec![CouplingEntry { pair: (0, 1), sigma: 1.0 }],
            1,
        ),
        _ => (
            vec![
                ContinuumEntry {
                    kind: KindSpec::Matrix,
                    c: 0.05,
                    k: 1e-3,
                    initial: 1.0,
                    source: 0.0,
                },
                ContinuumEntry {
                    kind: KindSpec::Matrix,
                    c: 0.1,
                    k: 1.0,
                    initial: 1.0,
                    source: 0.0,
                },
                ContinuumEntry {
                    kind: KindSpec::Fracture,
                    c: 1.0,
                    k: 1e6,
                    initial: 1.0,
                    source: 0.0,
                },
            ],
            vec![
                CouplingEntry { pair: (0, 1), sigma: 1e-2 },
                CouplingEntry { pair: (0, 2), sigma: 1e-3 },
                CouplingEntry { pair: (1, 2), sigma: 1.0 },
            ],
            2,
        ),
    };
    Scenario {
        grid: GridSpec { nx, ny: nx, h: 1.0 / nx as f64 },
        fracture_file: Some(NETWORK_FILE.into()),
        continua,
        couplings,
        wells: vec![
            WellEntry {
                continuum: well_continuum,
                rect: [0.1, 0.1, 0.15, 0.15],
                rate: 1e5,
                pressure: 1.2,
            },
            WellEntry {
                continuum: well_continuum,
                rect: [0.6, 0.85, 0.65, 0.9],
                rate: 1e5,
                pressure: 1.2,
            },
        ],
        tau: 4e-5,
        n_steps: 50,
        schemes: default_schemes(),
        // The 20x20 coarse grid on the full 200x200 mesh needs one extra
        // oversampling layer before the coupled coarse error settles; the
        // finer coarse grids do not.
        coarse: Some(CoarseSpec {
            nx: coarse_nx,
            ny: coarse_nx,
            m: if nx >= 200 && coarse_nx <= 20 { 4 } else { 3 },
        }),
        solver: SolverSpec::default(),
        weighted_norm: false,
        output_dir: format!("out/{name}"),
        basis_cache: Some(format!("cache/{name}-bases.bin")),
        base_dir: None,
    }
}
