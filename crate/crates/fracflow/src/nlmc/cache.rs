//! On-disk cache for basis sets, keyed by a digest of everything the
//! bases depend on: the fine operators, the coupling data, and the
//! coarse layout. A stale or damaged cache is treated as a miss.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::basis::BasisFunction;
use crate::assembly::{CouplingGeometry, MulticontinuumSystem};

const MAGIC: &[u8; 4] = b"FFBC";
const VERSION: u32 = 1;

/// Digest of the inputs the basis construction depends on.
pub fn basis_cache_key(
    system: &MulticontinuumSystem,
    nx: usize,
    ny: usize,
    m: usize,
) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"fracflow-basis-v1");
    let push_u64 = |h: &mut Sha256, v: u64| h.update(v.to_le_bytes());
    let push_f64 = |h: &mut Sha256, v: f64| h.update(v.to_bits().to_le_bytes());

    push_u64(&mut h, system.n_continua() as u64);
    push_u64(&mut h, nx as u64);
    push_u64(&mut h, ny as u64);
    push_u64(&mut h, m as u64);

    for a in 0..system.n_continua() {
        let spec = system.continuum(a);
        push_u64(&mut h, spec.kind as u64);
        push_f64(&mut h, spec.c);
        push_f64(&mut h, spec.k);
        push_u64(&mut h, system.continuum_size(a) as u64);
        let d = system.diffusion_block(a);
        for i in 0..d.nrows() {
            let (cols, vals) = d.row(i);
            push_u64(&mut h, cols.len() as u64);
            for (&j, &v) in cols.iter().zip(vals) {
                push_u64(&mut h, j as u64);
                push_f64(&mut h, v);
            }
        }
    }
    for cpl in system.couplings() {
        push_u64(&mut h, cpl.spec.pair.0 as u64);
        push_u64(&mut h, cpl.spec.pair.1 as u64);
        push_f64(&mut h, cpl.spec.sigma);
        push_u64(
            &mut h,
            match cpl.spec.geometry {
                CouplingGeometry::CoLocated => 0,
                CouplingGeometry::Embedded => 1,
            },
        );
        for i in 0..cpl.q.nrows() {
            let (cols, vals) = cpl.q.row(i);
            push_u64(&mut h, cols.len() as u64);
            for (&j, &v) in cols.iter().zip(vals) {
                push_u64(&mut h, j as u64);
                push_f64(&mut h, v);
            }
        }
    }
    for &v in system.measures() {
        push_f64(&mut h, v);
    }

    h.finalize().into()
}

/// Writes the basis set with its key.
pub fn save_bases(path: &Path, key: &[u8; 32], bases: &[BasisFunction]) -> io::Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(key);
    buf.extend_from_slice(&(bases.len() as u64).to_le_bytes());
    for basis in bases {
        buf.extend_from_slice(&(basis.coarse_cell as u64).to_le_bytes());
        buf.extend_from_slice(&(basis.continuum as u64).to_le_bytes());
        buf.extend_from_slice(&(basis.components.len() as u64).to_le_bytes());
        for (cells, values) in &basis.components {
            buf.extend_from_slice(&(cells.len() as u64).to_le_bytes());
            for &c in cells {
                buf.extend_from_slice(&(c as u64).to_le_bytes());
            }
            for &v in values {
                buf.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.data.len() {
            return None;
        }
        let s = &self.data[self.pos..end];
        self.pos = end;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        let b = self.take(8)?;
        Some(u64::from_le_bytes(b.try_into().ok()?))
    }

    fn usize_checked(&mut self, cap: u64) -> Option<usize> {
        let v = self.u64()?;
        if v > cap {
            return None;
        }
        usize::try_from(v).ok()
    }

    fn f64(&mut self) -> Option<f64> {
        let b = self.take(8)?;
        Some(f64::from_bits(u64::from_le_bytes(b.try_into().ok()?)))
    }
}

/// Reads a basis set if the file exists, is intact, and was written for
/// exactly this key; anything else is a miss.
pub fn load_bases(path: &Path, expected_key: &[u8; 32]) -> Option<Vec<BasisFunction>> {
    let data = fs::read(path).ok()?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(4)? != MAGIC {
        return None;
    }
    if u32::from_le_bytes(c.take(4)?.try_into().ok()?) != VERSION {
        return None;
    }
    if c.take(32)? != expected_key {
        return None;
    }
    // Generous caps so a corrupt length cannot trigger a huge
    // allocation before the data runs out.
    let cap = data.len() as u64;
    let n_bases = c.usize_checked(cap)?;
    let mut out = Vec::with_capacity(n_bases);
    for _ in 0..n_bases {
        let coarse_cell = c.usize_checked(u64::MAX >> 1)?;
        let continuum = c.usize_checked(1 << 20)?;
        let n_components = c.usize_checked(1 << 20)?;
        let mut components = Vec::with_capacity(n_components);
        for _ in 0..n_components {
            let n = c.usize_checked(cap)?;
            let mut cells = Vec::with_capacity(n);
            for _ in 0..n {
                cells.push(c.usize_checked(u64::MAX >> 1)?);
            }
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(c.f64()?);
            }
            components.push((cells, values));
        }
        out.push(BasisFunction {
            coarse_cell,
            continuum,
            components,
        });
    }
    if c.pos != data.len() {
        return None;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_bases() -> Vec<BasisFunction> {
        vec![
            BasisFunction {
                coarse_cell: 0,
                continuum: 0,
                components: vec![
                    (vec![0, 1, 5], vec![1.0, 0.5, -0.25]),
                    (vec![2], vec![1e-9]),
                ],
            },
            BasisFunction {
                coarse_cell: 3,
                continuum: 1,
                components: vec![(vec![], vec![]), (vec![7, 9], vec![0.75, 0.125])],
            },
        ]
    }

    #[test]
    fn round_trip_restores_bases_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bases.bin");
        let key = [7u8; 32];
        let bases = sample_bases();
        save_bases(&path, &key, &bases).unwrap();
        let loaded = load_bases(&path, &key).unwrap();
        assert_eq!(loaded, bases);
    }

    #[test]
    fn key_mismatch_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bases.bin");
        save_bases(&path, &[1u8; 32], &sample_bases()).unwrap();
        assert!(load_bases(&path, &[2u8; 32]).is_none());
    }

    #[test]
    fn truncated_or_missing_file_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bases.bin");
        assert!(load_bases(&path, &[0u8; 32]).is_none());
        let key = [9u8; 32];
        save_bases(&path, &key, &sample_bases()).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 5]).unwrap();
        assert!(load_bases(&path, &key).is_none());
        // Trailing garbage is rejected as well.
        let mut extended = full.clone();
        extended.extend_from_slice(&[0u8; 3]);
        fs::write(&path, &extended).unwrap();
        assert!(load_bases(&path, &key).is_none());
    }

    #[test]
    fn cache_keys_react_to_every_input() {
        use crate::assembly::{
            assemble_system, AssemblyOptions, ContinuumKind, ContinuumSpec, CouplingGeometry,
            CouplingSpec,
        };
        use crate::geometry::build_grid;
        use std::sync::Arc;

        let grid = Arc::new(build_grid(4, 4, 0.25).unwrap());
        let build = |k: f64, sigma: f64| {
            assemble_system(
                &grid,
                None,
                &[
                    ContinuumSpec::new(ContinuumKind::Matrix, 1.0, k),
                    ContinuumSpec::new(ContinuumKind::Matrix, 1.0, 2.0),
                ],
                &[CouplingSpec {
                    pair: (0, 1),
                    sigma,
                    geometry: CouplingGeometry::CoLocated,
                }],
                &[],
                &AssemblyOptions::default(),
            )
            .unwrap()
        };
        let base = basis_cache_key(&build(1.0, 1.0), 2, 2, 1);
        assert_eq!(base, basis_cache_key(&build(1.0, 1.0), 2, 2, 1));
        assert_ne!(base, basis_cache_key(&build(1.5, 1.0), 2, 2, 1));
        assert_ne!(base, basis_cache_key(&build(1.0, 0.5), 2, 2, 1));
        assert_ne!(base, basis_cache_key(&build(1.0, 1.0), 4, 4, 1));
        assert_ne!(base, basis_cache_key(&build(1.0, 1.0), 2, 2, 2));
    }
}
