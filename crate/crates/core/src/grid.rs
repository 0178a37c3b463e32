//! Uniform cell grid over the domain box and the Euler successor graph on it.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dynamics::{advance_in_place, ModeId, StateBox, Substeps, SwitchedSystem};
use crate::error::{Error, Result};
use crate::scalar::{distance, Scalar};

/// Flat index of a grid cell, first axis most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridIndex(pub u32);

impl GridIndex {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// `K` cells per axis; cell centers are the grid points. A state is
/// represented by the center of the cell containing it; cells are half-open
/// except the last one on each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid<T> {
    bounds: StateBox<T>,
    k: usize,
    widths: Vec<T>,
    eps: T,
    cells: usize,
}

impl<T: Scalar> StateGrid<T> {
    pub fn new(bounds: StateBox<T>, k_per_axis: usize) -> Result<Self> {
        if k_per_axis == 0 {
            return Err(Error::Validation("grid needs at least one cell per axis".into()));
        }
        let dim = bounds.dim();
        let cells = (k_per_axis as u64)
            .checked_pow(dim as u32)
            .filter(|&n| n < u32::MAX as u64)
            .ok_or_else(|| Error::Validation(format!("{k_per_axis}^{dim} cells do not fit a 32-bit index")))?
            as usize;
        let kk = T::lit(k_per_axis as f64);
        let widths: Vec<T> = bounds.lo().iter().zip(bounds.hi()).map(|(&l, &h)| (h - l) / kk).collect();
        let two = T::lit(2.0);
        let eps = widths.iter().map(|&w| (w / two) * (w / two)).sum::<T>().sqrt();
        Ok(Self {
            bounds,
            k: k_per_axis,
            widths,
            eps,
            cells,
        })
    }

    pub fn bounds(&self) -> &StateBox<T> {
        &self.bounds
    }

    pub fn k_per_axis(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Cell half-diagonal `||(hi - lo) / (2K)||`.
    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn len(&self) -> usize {
        self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }

    pub fn coords(&self, z: GridIndex) -> Vec<usize> {
        let mut rem = z.index();
        let mut out = vec![0; self.dim()];
        for c in out.iter_mut().rev() {
            *c = rem % self.k;
            rem /= self.k;
        }
        out
    }

    pub fn from_coords(&self, coords: &[usize]) -> GridIndex {
        GridIndex(coords.iter().fold(0usize, |acc, &c| acc * self.k + c) as u32)
    }

    pub fn center(&self, z: GridIndex) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.center_into(z, &mut out);
        out
    }

    pub fn center_into(&self, z: GridIndex, out: &mut [T]) {
        let mut rem = z.index();
        let half = T::lit(0.5);
        for i in (0..self.dim()).rev() {
            let c = rem % self.k;
            rem /= self.k;
            out[i] = self.bounds.lo()[i] + self.widths[i] * (T::lit(c as f64) + half);
        }
    }

    /// Cell of `y`; `y` need not be checked against the box (coordinates are clamped).
    fn cell_of(&self, y: &[T]) -> GridIndex {
        let last = (self.k - 1) as f64;
        let mut flat = 0usize;
        for (i, &v) in y.iter().enumerate() {
            let raw = ((v - self.bounds.lo()[i]) / self.widths[i]).floor().as_f64();
            let c = raw.clamp(0.0, last) as usize;
            flat = flat * self.k + c;
        }
        GridIndex(flat as u32)
    }

    /// Index of the cell containing `y`; its center is within `eps` of `y`.
    pub fn representative(&self, y: &[T]) -> Result<GridIndex> {
        if !self.bounds.contains(y) {
            return Err(Error::OutOfDomain {
                state: y.iter().map(|v| v.as_f64()).collect(),
            });
        }
        Ok(self.cell_of(y))
    }

    pub fn iter(&self) -> impl Iterator<Item = GridIndex> {
        (0..self.cells as u32).map(GridIndex)
    }
}

/// How admissibility of a mode is decided for a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Admissibility {
    /// Only the Euler image at `tau` must lie in the box.
    #[default]
    Endpoint,
    /// Every Euler sub-step must lie in the box.
    Strict,
}

const BOTTOM: u32 = u32::MAX;

/// `next^u(z)` for every grid point and mode, `None` where the Euler image
/// leaves the box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuccessorTable {
    cells: usize,
    modes: usize,
    entries: Vec<u32>,
    dead: Vec<GridIndex>,
}

impl SuccessorTable {
    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn mode_count(&self) -> usize {
        self.modes
    }

    #[inline]
    pub fn next(&self, z: GridIndex, u: ModeId) -> Option<GridIndex> {
        let e = self.entries[z.index() * self.modes + u.index()];
        (e != BOTTOM).then_some(GridIndex(e))
    }

    #[inline]
    pub(crate) fn row(&self, z: GridIndex) -> &[u32] {
        let start = z.index() * self.modes;
        &self.entries[start..start + self.modes]
    }

    /// Grid points without any admissible mode.
    pub fn invariance_violations(&self) -> &[GridIndex] {
        &self.dead
    }

    /// Modes whose successor from `z` stays in the box.
    pub fn admissible(&self, z: GridIndex) -> Result<Vec<ModeId>> {
        if z.index() >= self.cells {
            return Err(Error::Validation(format!("cell {} out of range", z.0)));
        }
        let modes: Vec<ModeId> = self
            .row(z)
            .iter()
            .enumerate()
            .filter(|(_, &e)| e != BOTTOM)
            .map(|(u, _)| ModeId(u))
            .collect();
        if modes.is_empty() {
            return Err(Error::InvarianceViolation { cells: vec![z.index()] });
        }
        Ok(modes)
    }

    /// Table from raw successor lists; `None` marks an inadmissible mode.
    pub fn from_rows(rows: Vec<Vec<Option<GridIndex>>>) -> Result<Self> {
        let modes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != modes) {
            return Err(Error::Validation("successor rows must have equal length".into()));
        }
        let cells = rows.len();
        let mut entries = Vec::with_capacity(cells * modes);
        for row in &rows {
            for e in row {
                match e {
                    Some(z) if z.index() < cells => entries.push(z.0),
                    Some(z) => return Err(Error::Validation(format!("successor {} out of range", z.0))),
                    None => entries.push(BOTTOM),
                }
            }
        }
        Ok(Self::assemble(cells, modes, entries))
    }

    fn assemble(cells: usize, modes: usize, entries: Vec<u32>) -> Self {
        let dead = (0..cells)
            .filter(|&z| entries[z * modes..(z + 1) * modes].iter().all(|&e| e == BOTTOM))
            .map(|z| GridIndex(z as u32))
            .collect();
        Self {
            cells,
            modes,
            entries,
            dead,
        }
    }

    const MAGIC: &'static [u8; 8] = b"RSSUCC01";

    /// Binary encoding: magic, key length + key, cells, modes, entries (LE).
    pub fn write_to<W: Write>(&self, mut out: W, key: &str) -> Result<()> {
        out.write_all(Self::MAGIC)?;
        out.write_all(&(key.len() as u32).to_le_bytes())?;
        out.write_all(key.as_bytes())?;
        out.write_all(&(self.cells as u64).to_le_bytes())?;
        out.write_all(&(self.modes as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.entries.len() * 4);
        for e in &self.entries {
            buf.extend_from_slice(&e.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// Reads a table written by [`SuccessorTable::write_to`], checking the key.
    pub fn read_from<R: Read>(mut input: R, expected_key: &str) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("not a successor table file".into()));
        }
        let mut u32buf = [0u8; 4];
        input.read_exact(&mut u32buf)?;
        let klen = u32::from_le_bytes(u32buf) as usize;
        if klen > 4096 {
            return Err(Error::Format("cache key too long".into()));
        }
        let mut key = vec![0u8; klen];
        input.read_exact(&mut key)?;
        if key != expected_key.as_bytes() {
            return Err(Error::Format("cache key mismatch".into()));
        }
        let mut u64buf = [0u8; 8];
        input.read_exact(&mut u64buf)?;
        let cells = u64::from_le_bytes(u64buf) as usize;
        input.read_exact(&mut u64buf)?;
        let modes = u64::from_le_bytes(u64buf) as usize;
        let mut raw = Vec::new();
        input.read_to_end(&mut raw)?;
        if raw.len() != cells * modes * 4 {
            return Err(Error::Format("successor table payload has the wrong size".into()));
        }
        let entries: Vec<u32> = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if entries.iter().any(|&e| e != BOTTOM && e as usize >= cells) {
            return Err(Error::Format("successor index out of range".into()));
        }
        Ok(Self::assemble(cells, modes, entries))
    }
}

/// Computes `next^u(z)` for all grid points and modes: the representative of
/// the subsampled Euler image of the cell center after one period `tau`.
pub fn build_successors<T: Scalar>(
    system: &SwitchedSystem<T>,
    grid: &StateGrid<T>,
    substeps: &Substeps,
    admissibility: Admissibility,
) -> Result<SuccessorTable> {
    system.validate()?;
    if grid.dim() != system.dim() {
        return Err(Error::Validation("grid and system dimensions differ".into()));
    }
    if substeps.as_slice().len() != system.mode_count() {
        return Err(Error::Validation("one substep count per mode is required".into()));
    }
    let m = system.mode_count();
    let dim = system.dim();
    let domain = system.domain();
    let mut entries = vec![BOTTOM; grid.len() * m];
    entries
        .par_chunks_mut(m)
        .enumerate()
        .try_for_each(|(z, row)| -> Result<()> {
            let mut center = vec![T::zero(); dim];
            grid.center_into(GridIndex(z as u32), &mut center);
            let mut y = vec![T::zero(); dim];
            let mut scratch = vec![T::zero(); dim];
            for (u, slot) in row.iter_mut().enumerate() {
                let mode = ModeId(u);
                let n = substeps.get(mode);
                let dt = system.tau() / T::lit(n as f64);
                y.copy_from_slice(&center);
                let inside = match admissibility {
                    Admissibility::Endpoint => {
                        advance_in_place(system, mode, &mut y, dt, n, &mut scratch);
                        domain.contains(&y)
                    }
                    Admissibility::Strict => {
                        let mut ok = true;
                        for _ in 0..n {
                            advance_in_place(system, mode, &mut y, dt, 1, &mut scratch);
                            if !domain.contains(&y) {
                                ok = false;
                                break;
                            }
                        }
                        ok
                    }
                };
                if y.iter().any(|v| v.is_nan()) {
                    return Err(Error::NumericalDomain {
                        mode,
                        state: center.iter().map(|v| v.as_f64()).collect(),
                    });
                }
                *slot = if inside { grid.cell_of(&y).0 } else { BOTTOM };
            }
            Ok(())
        })?;
    let table = SuccessorTable::assemble(grid.len(), m, entries);
    if !table.dead.is_empty() {
        log::warn!(
            "controlled Euler-invariance violated at {} grid point(s), first {:?}",
            table.dead.len(),
            grid.center(table.dead[0])
        );
    }
    Ok(table)
}

/// Stable content hash of everything that determines a successor table.
pub fn cache_key<T: Scalar>(
    system: &SwitchedSystem<T>,
    k_per_axis: usize,
    substeps: &Substeps,
    admissibility: Admissibility,
) -> String {
    let mut h = Sha256::new();
    h.update(b"robust-synth/successors/v1");
    h.update(system.fingerprint());
    h.update((k_per_axis as u64).to_le_bytes());
    h.update((substeps.as_slice().len() as u64).to_le_bytes());
    for &n in substeps.as_slice() {
        h.update((n as u64).to_le_bytes());
    }
    h.update([matches!(admissibility, Admissibility::Strict) as u8]);
    h.update((std::mem::size_of::<T>() as u8).to_le_bytes());
    hex::encode(h.finalize())
}

/// Loads the table from `dir` when a file for its key exists, otherwise builds
/// and stores it.
pub fn cached_successors<T: Scalar>(
    dir: &Path,
    system: &SwitchedSystem<T>,
    grid: &StateGrid<T>,
    substeps: &Substeps,
    admissibility: Admissibility,
) -> Result<(SuccessorTable, bool)> {
    let key = cache_key(system, grid.k_per_axis(), substeps, admissibility);
    let path = dir.join(format!("successors-{key}.bin"));
    if path.exists() {
        let file = std::fs::File::open(&path)?;
        match SuccessorTable::read_from(std::io::BufReader::new(file), &key) {
            Ok(table) => return Ok((table, true)),
            Err(e) => log::warn!("ignoring unreadable cache file {}: {e}", path.display()),
        }
    }
    let table = build_successors(system, grid, substeps, admissibility)?;
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    {
        let file = std::fs::File::create(&tmp)?;
        let mut w = std::io::BufWriter::new(file);
        table.write_to(&mut w, &key)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, &path)?;
    Ok((table, false))
}

/// Largest distance from a state to its representative over `samples`.
pub fn max_representation_error<T: Scalar>(grid: &StateGrid<T>, samples: &[Vec<T>]) -> Result<T> {
    samples.iter().try_fold(T::zero(), |acc, y| {
        let z = grid.representative(y)?;
        Ok(acc.max(distance(y, &grid.center(z))))
    })
}
