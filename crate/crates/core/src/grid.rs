//! Dyadic geometry on the unit cube `[0,1)^d`.
//!
//! A [`GridSpec`] fixes the spatial dimension `d`, the finest level `L`
//! (cells of side `2^-L`) and a per-axis shift in units of `2^-L`. Shifted
//! grids wrap around the torus, so every cube of every grid is exactly a
//! union of finest cells and all averages over cubes are exact finite sums.
//!
//! Cells are indexed row-major by their integer coordinates at level `L`;
//! all modules address piecewise-constant data by that index.

use crate::error::{Error, Result};

pub const MAX_LEVEL: u32 = 12;

/// A dyadic grid: dimension, finest level, per-axis shift (finest-cell units).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    d: u32,
    level: u32,
    shift: [u32; 2],
}

impl GridSpec {
    pub fn new(d: u32, level: u32, shift: [u32; 2]) -> Result<Self> {
        if !(1..=2).contains(&d) {
            return Err(Error::parameter(format!("dimension must be 1 or 2, got {d}")));
        }
        if level > MAX_LEVEL {
            return Err(Error::parameter(format!(
                "finest level must be <= {MAX_LEVEL}, got {level}"
            )));
        }
        let side = 1u32 << level;
        for a in 0..d as usize {
            if shift[a] >= side {
                return Err(Error::parameter(format!(
                    "shift component {} out of range [0, {side})",
                    shift[a]
                )));
            }
        }
        if d == 1 && shift[1] != 0 {
            return Err(Error::parameter("1-d grid with a second shift component"));
        }
        Ok(GridSpec { d, level, shift })
    }

    /// The standard (unshifted) grid.
    pub fn standard(d: u32, level: u32) -> Result<Self> {
        Self::new(d, level, [0, 0])
    }

    pub fn dim(&self) -> u32 {
        self.d
    }

    pub fn finest_level(&self) -> u32 {
        self.level
    }

    pub fn shift(&self) -> [u32; 2] {
        self.shift
    }

    /// Cells per axis at the finest level.
    pub fn side(&self) -> u32 {
        1 << self.level
    }

    /// Total number of finest cells `2^{dL}`.
    pub fn cell_count(&self) -> usize {
        1usize << (self.d * self.level)
    }

    /// Measure of one finest cell.
    pub fn cell_measure(&self) -> f64 {
        1.0 / self.cell_count() as f64
    }

    /// Row-major index of the cell with integer coordinates `coords`.
    pub fn cell_index(&self, coords: [u32; 2]) -> usize {
        let side = self.side() as usize;
        match self.d {
            1 => coords[0] as usize,
            _ => coords[1] as usize * side + coords[0] as usize,
        }
    }

    /// Integer coordinates of cell `index`.
    pub fn cell_coords(&self, index: usize) -> [u32; 2] {
        let side = self.side() as usize;
        match self.d {
            1 => [index as u32, 0],
            _ => [(index % side) as u32, (index / side) as u32],
        }
    }

    /// Midpoint of cell `index` in physical coordinates.
    pub fn cell_center(&self, index: usize) -> [f64; 2] {
        let h = 1.0 / self.side() as f64;
        let c = self.cell_coords(index);
        [(c[0] as f64 + 0.5) * h, (c[1] as f64 + 0.5) * h]
    }

    /// The grid's cube at `level` containing finest cell `cell` (torus-aware).
    pub fn cube_containing(&self, cell: usize, level: u32) -> Cube {
        debug_assert!(level <= self.level);
        let coords = self.cell_coords(cell);
        let side = self.side();
        let mut anchor = [0u32; 2];
        for a in 0..self.d as usize {
            let unshifted = (coords[a] + side - self.shift[a]) % side;
            anchor[a] = unshifted >> (self.level - level);
        }
        Cube {
            grid: *self,
            level,
            anchor,
        }
    }

    /// The level-0 cube (whole unit cube).
    pub fn root(&self) -> Cube {
        Cube {
            grid: *self,
            level: 0,
            anchor: [0, 0],
        }
    }
}

/// One dyadic cube of a grid: level `0..=L` and integer anchor at that level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cube {
    grid: GridSpec,
    level: u32,
    anchor: [u32; 2],
}

impl Cube {
    pub fn new(grid: GridSpec, level: u32, anchor: [u32; 2]) -> Result<Self> {
        if level > grid.finest_level() {
            return Err(Error::parameter(format!(
                "cube level {level} beyond finest level {}",
                grid.finest_level()
            )));
        }
        let side = 1u32 << level;
        for a in 0..grid.dim() as usize {
            if anchor[a] >= side {
                return Err(Error::parameter(format!(
                    "cube anchor {} out of range at level {level}",
                    anchor[a]
                )));
            }
        }
        Ok(Cube { grid, level, anchor })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn anchor(&self) -> [u32; 2] {
        self.anchor
    }

    /// Side length `2^-level`.
    pub fn side_length(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    /// Measure `2^{-d * level}`.
    pub fn measure(&self) -> f64 {
        0.5f64.powi((self.grid.dim() * self.level) as i32)
    }

    /// Number of finest cells composing the cube.
    pub fn cell_count(&self) -> usize {
        1usize << (self.grid.dim() * (self.grid.finest_level() - self.level))
    }

    /// The parent cube (None for the root).
    pub fn parent(&self) -> Option<Cube> {
        if self.level == 0 {
            return None;
        }
        Some(Cube {
            grid: self.grid,
            level: self.level - 1,
            anchor: [self.anchor[0] >> 1, self.anchor[1] >> 1],
        })
    }

    /// Indices of the finest cells composing this cube, in increasing order.
    pub fn cell_indices(&self) -> Vec<usize> {
        let g = &self.grid;
        let span = 1u32 << (g.finest_level() - self.level);
        let side = g.side();
        let mut cells = Vec::with_capacity(self.cell_count());
        match g.dim() {
            1 => {
                for o in 0..span {
                    let x = (self.anchor[0] * span + g.shift()[0] + o) % side;
                    cells.push(g.cell_index([x, 0]));
                }
            }
            _ => {
                for oy in 0..span {
                    let y = (self.anchor[1] * span + g.shift()[1] + oy) % side;
                    for ox in 0..span {
                        let x = (self.anchor[0] * span + g.shift()[0] + ox) % side;
                        cells.push(g.cell_index([x, y]));
                    }
                }
            }
        }
        cells.sort_unstable();
        cells
    }
}

/// An arbitrary nonempty-or-empty set of finest cells of one grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubeSet {
    grid: GridSpec,
    members: Vec<usize>,
}

impl CubeSet {
    /// Builds a set from cell indices (deduplicated, sorted).
    pub fn new(grid: GridSpec, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if let Some(&last) = members.last() {
            if last >= grid.cell_count() {
                return Err(Error::parameter(format!(
                    "cell index {last} out of range (grid has {} cells)",
                    grid.cell_count()
                )));
            }
        }
        Ok(CubeSet { grid, members })
    }

    /// All cells of the grid.
    pub fn all(grid: GridSpec) -> Self {
        CubeSet {
            grid,
            members: (0..grid.cell_count()).collect(),
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.members.binary_search(&cell).is_ok()
    }

    /// Total measure `|members| * 2^{-dL}`.
    pub fn measure(&self) -> f64 {
        self.members.len() as f64 * self.grid.cell_measure()
    }

    pub fn intersect(&self, other: &CubeSet) -> CubeSet {
        let members = self
            .members
            .iter()
            .copied()
            .filter(|c| other.contains(*c))
            .collect();
        CubeSet {
            grid: self.grid,
            members,
        }
    }

    pub fn subtract(&self, other: &CubeSet) -> CubeSet {
        let members = self
            .members
            .iter()
            .copied()
            .filter(|c| !other.contains(*c))
            .collect();
        CubeSet {
            grid: self.grid,
            members,
        }
    }
}

/// The finest cells composing `q`, as a set. Measure equals `|q|` exactly.
pub fn cells_of(q: &Cube) -> CubeSet {
    CubeSet {
        grid: q.grid(),
        members: q.cell_indices(),
    }
}

/// Every dyadic cube of levels `0..=max_level` of `grid`, exactly once.
///
/// Order: by level, then row-major anchor; the deterministic enumeration
/// order breaks argmax ties everywhere downstream.
pub fn enumerate_cubes(grid: &GridSpec, max_level: u32) -> Result<Vec<Cube>> {
    if max_level > grid.finest_level() {
        return Err(Error::parameter(format!(
            "max_level {max_level} beyond finest level {}",
            grid.finest_level()
        )));
    }
    let mut cubes = Vec::new();
    for level in 0..=max_level {
        let side = 1u32 << level;
        match grid.dim() {
            1 => {
                for x in 0..side {
                    cubes.push(Cube {
                        grid: *grid,
                        level,
                        anchor: [x, 0],
                    });
                }
            }
            _ => {
                for y in 0..side {
                    for x in 0..side {
                        cubes.push(Cube {
                            grid: *grid,
                            level,
                            anchor: [x, y],
                        });
                    }
                }
            }
        }
    }
    Ok(cubes)
}

/// The `2^d` shifted grids with per-axis shifts `{0, 1/3}` rounded to the
/// finest lattice (torus wrap-around keeps all cube measures equal).
pub fn shifted_grids(d: u32, level: u32) -> Result<Vec<GridSpec>> {
    let side = 1u32 << level;
    // nearest multiple of 2^-L to 1/3; 2^L/3 is never half-integral
    let third = (side as f64 / 3.0).round() as u32 % side;
    let mut grids = Vec::with_capacity(1 << d);
    for mask in 0..(1u32 << d) {
        let mut shift = [0u32; 2];
        for a in 0..d as usize {
            if mask & (1 << a) != 0 {
                shift[a] = third;
            }
        }
        grids.push(GridSpec::new(d, level, shift)?);
    }
    Ok(grids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerate_counts() {
        let g = GridSpec::standard(1, 2).unwrap();
        assert_eq!(enumerate_cubes(&g, 2).unwrap().len(), 7); // 1+2+4
        let g = GridSpec::standard(2, 1).unwrap();
        assert_eq!(enumerate_cubes(&g, 1).unwrap().len(), 5); // 1+4
        let g = GridSpec::standard(1, 3).unwrap();
        let cubes = enumerate_cubes(&g, 0).unwrap();
        assert_eq!(cubes.len(), 1);
        assert_eq!(cubes[0].measure(), 1.0);
    }

    #[test]
    fn enumerate_rejects_deep_level() {
        let g = GridSpec::standard(1, 2).unwrap();
        assert!(enumerate_cubes(&g, 3).is_err());
    }

    #[test]
    fn shifted_grid_shifts() {
        let grids = shifted_grids(1, 3).unwrap();
        assert_eq!(grids.len(), 2);
        assert_eq!(grids[0].shift()[0], 0);
        assert_eq!(grids[1].shift()[0], 3); // round(8/3) = 3

        let grids = shifted_grids(2, 1).unwrap();
        assert_eq!(grids.len(), 4);

        let grids = shifted_grids(1, 0).unwrap();
        assert_eq!(grids.len(), 2);
        assert!(grids.iter().all(|g| g.shift()[0] == 0)); // degenerate rounding
    }

    #[test]
    fn cells_of_examples() {
        let g = GridSpec::standard(1, 2).unwrap();
        let root = g.root();
        let set = cells_of(&root);
        assert_eq!(set.len(), 4);
        assert_eq!(set.measure(), 1.0);

        let leaf = Cube::new(g, 2, [3, 0]).unwrap();
        let set = cells_of(&leaf);
        assert_eq!(set.len(), 1);
        assert_eq!(set.measure(), 0.25);

        let g2 = GridSpec::standard(2, 2).unwrap();
        let c = Cube::new(g2, 1, [1, 0]).unwrap();
        let set = cells_of(&c);
        assert_eq!(set.len(), 4);
        assert_eq!(set.measure(), 0.25);
    }

    #[test]
    fn levels_tile_the_cube() {
        for (d, level, shift) in [(1, 3, [0, 0]), (1, 3, [3, 0]), (2, 2, [1, 1])] {
            let g = GridSpec::new(d, level, shift).unwrap();
            for l in 0..=level {
                let mut seen = vec![false; g.cell_count()];
                for q in enumerate_cubes(&g, l).unwrap().iter().filter(|q| q.level() == l) {
                    for c in q.cell_indices() {
                        assert!(!seen[c], "cell {c} covered twice at level {l}");
                        seen[c] = true;
                    }
                }
                assert!(seen.iter().all(|&s| s), "level {l} does not tile");
            }
        }
    }

    #[test]
    fn nesting_in_parent() {
        let g = GridSpec::new(1, 3, [3, 0]).unwrap();
        for q in enumerate_cubes(&g, 3).unwrap() {
            if let Some(p) = q.parent() {
                let pc = cells_of(&p);
                for c in q.cell_indices() {
                    assert!(pc.contains(c));
                }
            }
        }
    }

    #[test]
    fn cube_containing_inverts_cells_of() {
        let g = GridSpec::new(2, 2, [1, 0]).unwrap();
        for q in enumerate_cubes(&g, 2).unwrap() {
            for c in q.cell_indices() {
                assert_eq!(g.cube_containing(c, q.level()), q);
            }
        }
    }

    #[test]
    fn cubeset_algebra() {
        let g = GridSpec::standard(1, 2).unwrap();
        let a = CubeSet::new(g, vec![0, 1, 2]).unwrap();
        let b = CubeSet::new(g, vec![2, 3]).unwrap();
        assert_eq!(a.intersect(&b).members(), &[2]);
        assert_eq!(a.subtract(&b).members(), &[0, 1]);
        assert!(CubeSet::new(g, vec![4]).is_err());
    }
}
