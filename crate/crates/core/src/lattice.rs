//! Finite nearest-neighbour graphs: cubes `[-L, L]^d`, rectangular boxes and
//! periodic tori, together with the block/grid decomposition of a torus and
//! the shell family of a cube.
//!
//! Sites are indexed lexicographically by coordinate, first axis most
//! significant. Cubes use coordinates in `[-L, L]`, boxes and tori use
//! `0..side`. Two sites are adjacent iff their coordinates differ by one in
//! exactly one axis (modulo the side on a torus). On a torus axis of side 2
//! the `+1` and `-1` neighbours coincide; the two parallel edges are
//! collapsed into one edge of unit coupling.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};

/// Site counts at or above this are refused unless a larger cap is passed.
pub const DEFAULT_SITE_CAP: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    /// Open box with an outer boundary layer (the cube `Λ_L` is a special case).
    Cube,
    Torus,
}

/// What lies one step away from a site in a given direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Site(usize),
    /// Index into [`Geometry::boundary`].
    Boundary(usize),
}

/// Serializable description; adjacency is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub dimension: usize,
    pub kind: GeometryKind,
    /// Side parameter `L` when the geometry is a cube `Λ_L` or torus `𝕋_L`.
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    /// Number of sites along each axis.
    pub sides: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GeometrySpec", try_from = "GeometrySpec")]
pub struct Geometry {
    dim: usize,
    kind: GeometryKind,
    l: Option<usize>,
    sides: Vec<usize>,
    offset: i64,
    coords: Vec<Vec<i64>>,
    neighbors: Vec<Vec<usize>>,
    directional: Vec<Vec<Slot>>,
    boundary: Vec<Vec<i64>>,
    boundary_contacts: Vec<Vec<usize>>,
}

impl From<Geometry> for GeometrySpec {
    fn from(g: Geometry) -> Self {
        GeometrySpec {
            dimension: g.dim,
            kind: g.kind,
            l: g.l,
            sides: g.sides,
        }
    }
}

impl TryFrom<GeometrySpec> for Geometry {
    type Error = LabError;

    fn try_from(s: GeometrySpec) -> Result<Self> {
        if s.sides.len() != s.dimension {
            return Err(invalid("sides must have one entry per dimension"));
        }
        let g = match (s.kind, s.l) {
            (GeometryKind::Cube, Some(l)) => Geometry::cube(s.dimension, l)?,
            (GeometryKind::Torus, Some(l)) => Geometry::torus(s.dimension, l)?,
            (GeometryKind::Cube, None) => Geometry::open_box(&s.sides)?,
            (GeometryKind::Torus, None) => Geometry::periodic_box(&s.sides)?,
        };
        if g.sides != s.sides {
            return Err(invalid("sides inconsistent with L"));
        }
        Ok(g)
    }
}

/// Build `Λ_L = [-L, L]^d` or the torus `𝕋_L` of side `2L`.
pub fn build_geometry(d: usize, l: usize, kind: GeometryKind) -> Result<Geometry> {
    build_geometry_with_cap(d, l, kind, DEFAULT_SITE_CAP)
}

pub fn build_geometry_with_cap(
    d: usize,
    l: usize,
    kind: GeometryKind,
    cap: u64,
) -> Result<Geometry> {
    if d < 2 {
        return Err(invalid(format!("dimension must be at least 2, got {d}")));
    }
    let side = match kind {
        GeometryKind::Cube => 2 * l + 1,
        GeometryKind::Torus => {
            if l == 0 {
                return Err(invalid("torus requires L >= 1"));
            }
            2 * l
        }
    };
    let sides = vec![side; d];
    check_cap(&sides, cap)?;
    let mut g = match kind {
        GeometryKind::Cube => Geometry::build(GeometryKind::Cube, &sides, -(l as i64)),
        GeometryKind::Torus => Geometry::build(GeometryKind::Torus, &sides, 0),
    };
    g.l = Some(l);
    Ok(g)
}

fn check_cap(sides: &[usize], cap: u64) -> Result<()> {
    let mut n: u64 = 1;
    for &s in sides {
        n = n.checked_mul(s as u64).unwrap_or(u64::MAX);
    }
    if n >= cap {
        return Err(LabError::CapExceeded {
            what: "site count",
            value: n,
            cap,
        });
    }
    Ok(())
}

impl Geometry {
    pub fn cube(d: usize, l: usize) -> Result<Self> {
        build_geometry(d, l, GeometryKind::Cube)
    }

    pub fn torus(d: usize, l: usize) -> Result<Self> {
        build_geometry(d, l, GeometryKind::Torus)
    }

    /// Open rectangular box with coordinates `0..sides[j]`.
    pub fn open_box(sides: &[usize]) -> Result<Self> {
        Self::check_sides(sides)?;
        Ok(Self::build(GeometryKind::Cube, sides, 0))
    }

    /// Rectangular torus with coordinates `0..sides[j]` (sides at least 2).
    pub fn periodic_box(sides: &[usize]) -> Result<Self> {
        Self::check_sides(sides)?;
        if sides.iter().any(|&s| s < 2) {
            return Err(invalid("torus sides must be at least 2"));
        }
        Ok(Self::build(GeometryKind::Torus, sides, 0))
    }

    fn check_sides(sides: &[usize]) -> Result<()> {
        if sides.len() < 2 {
            return Err(invalid("dimension must be at least 2"));
        }
        if sides.contains(&0) {
            return Err(invalid("box sides must be positive"));
        }
        check_cap(sides, DEFAULT_SITE_CAP)
    }

    fn build(kind: GeometryKind, sides: &[usize], offset: i64) -> Self {
        let dim = sides.len();
        let n: usize = sides.iter().product();
        let coords: Vec<Vec<i64>> = (0..n).map(|i| unrank(i, sides, offset)).collect();

        let mut boundary: Vec<Vec<i64>> = Vec::new();
        let mut neighbors = vec![Vec::new(); n];
        let mut directional = vec![Vec::with_capacity(2 * dim); n];
        let mut pending: Vec<(usize, Vec<i64>)> = Vec::new();

        for (i, c) in coords.iter().enumerate() {
            for axis in 0..dim {
                for step in [1i64, -1] {
                    let mut nc = c.clone();
                    nc[axis] += step;
                    match kind {
                        GeometryKind::Torus => {
                            let s = sides[axis] as i64;
                            nc[axis] = (nc[axis] - offset).rem_euclid(s) + offset;
                            let j = rank(&nc, sides, offset);
                            directional[i].push(Slot::Site(j));
                            if j != i && !neighbors[i].contains(&j) {
                                neighbors[i].push(j);
                            }
                        }
                        GeometryKind::Cube => {
                            if inside(&nc, sides, offset) {
                                let j = rank(&nc, sides, offset);
                                directional[i].push(Slot::Site(j));
                                neighbors[i].push(j);
                            } else {
                                // placeholder, resolved once the boundary list is sorted
                                directional[i].push(Slot::Boundary(usize::MAX));
                                pending.push((i, nc.clone()));
                                boundary.push(nc);
                            }
                        }
                    }
                }
            }
            neighbors[i].sort_unstable();
        }

        boundary.sort();
        boundary.dedup();
        let mut boundary_contacts = vec![Vec::new(); n];
        for (i, nc) in &pending {
            let b = boundary.binary_search(nc).unwrap();
            boundary_contacts[*i].push(b);
            let slot = directional[*i]
                .iter_mut()
                .find(|s| **s == Slot::Boundary(usize::MAX))
                .unwrap();
            *slot = Slot::Boundary(b);
        }

        Geometry {
            dim,
            kind,
            l: None,
            sides: sides.to_vec(),
            offset,
            coords,
            neighbors,
            directional,
            boundary,
            boundary_contacts,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn is_torus(&self) -> bool {
        self.kind == GeometryKind::Torus
    }

    /// Side parameter `L` if built as `Λ_L` or `𝕋_L`.
    pub fn side_parameter(&self) -> Option<usize> {
        self.l
    }

    /// True for the centred cube `Λ_L`.
    pub fn is_centered_cube(&self) -> bool {
        self.kind == GeometryKind::Cube && self.l.is_some()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn site_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self, site: usize) -> &[i64] {
        &self.coords[site]
    }

    pub fn site_at(&self, c: &[i64]) -> Option<usize> {
        if c.len() != self.dim {
            return None;
        }
        match self.kind {
            GeometryKind::Cube => inside(c, &self.sides, self.offset)
                .then(|| rank(c, &self.sides, self.offset)),
            GeometryKind::Torus => {
                let w: Vec<i64> = c
                    .iter()
                    .zip(&self.sides)
                    .map(|(&x, &s)| (x - self.offset).rem_euclid(s as i64) + self.offset)
                    .collect();
                Some(rank(&w, &self.sides, self.offset))
            }
        }
    }

    /// Site with all coordinates zero: the centre of `Λ_L`, a corner of an
    /// uncentred box, the reference site of a torus.
    pub fn origin(&self) -> usize {
        self.site_at(&vec![0; self.dim]).expect("zero is a valid coordinate")
    }

    /// Distinct in-volume neighbours, sorted.
    pub fn neighbors(&self, site: usize) -> &[usize] {
        &self.neighbors[site]
    }

    /// Neighbour slot in each direction `+e_1, -e_1, +e_2, ...`.
    pub fn directional(&self, site: usize) -> &[Slot] {
        &self.directional[site]
    }

    /// Outer boundary `∂Λ = {x : x ~ Λ, x ∉ Λ}` in sorted coordinate order.
    /// Empty for tori.
    pub fn boundary(&self) -> &[Vec<i64>] {
        &self.boundary
    }

    /// Boundary sites adjacent to `site`, one entry per bond.
    pub fn boundary_contacts(&self, site: usize) -> &[usize] {
        &self.boundary_contacts[site]
    }

    /// Undirected in-volume edges `(x, y)` with `x < y`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for (x, nb) in self.neighbors.iter().enumerate() {
            for &y in nb {
                if x < y {
                    e.push((x, y));
                }
            }
        }
        e
    }

    /// Largest number of bonds (in-volume plus boundary) at any site.
    pub fn max_bonds(&self) -> usize {
        (0..self.site_count())
            .map(|x| self.neighbors[x].len() + self.boundary_contacts[x].len())
            .max()
            .unwrap_or(0)
    }

    /// Translate a torus site by `k`.
    pub fn translate(&self, site: usize, k: &[i64]) -> Result<usize> {
        if !self.is_torus() {
            return Err(LabError::Geometry("translation requires a torus".into()));
        }
        let c: Vec<i64> = self.coords[site].iter().zip(k).map(|(a, b)| a + b).collect();
        Ok(self.site_at(&c).unwrap())
    }

    /// Chebyshev distance, periodic on tori.
    pub fn sup_distance(&self, a: usize, b: usize) -> i64 {
        let ca = &self.coords[a];
        let cb = &self.coords[b];
        (0..self.dim)
            .map(|j| {
                let d = (ca[j] - cb[j]).abs();
                match self.kind {
                    GeometryKind::Torus => d.min(self.sides[j] as i64 - d),
                    GeometryKind::Cube => d,
                }
            })
            .max()
            .unwrap_or(0)
    }

    pub fn spec(&self) -> GeometrySpec {
        self.clone().into()
    }

    /// Short human label such as `torus 2x3` or `cube L=1 (3x3)`.
    pub fn label(&self) -> String {
        let sides = self
            .sides
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("x");
        match (self.kind, self.l) {
            (GeometryKind::Torus, _) => format!("torus {sides}"),
            (GeometryKind::Cube, Some(l)) => format!("cube L={l} ({sides})"),
            (GeometryKind::Cube, None) => format!("box {sides}"),
        }
    }
}

fn unrank(mut i: usize, sides: &[usize], offset: i64) -> Vec<i64> {
    let mut c = vec![0i64; sides.len()];
    for j in (0..sides.len()).rev() {
        c[j] = (i % sides[j]) as i64 + offset;
        i /= sides[j];
    }
    c
}

fn rank(c: &[i64], sides: &[usize], offset: i64) -> usize {
    let mut i = 0usize;
    for (x, &s) in c.iter().zip(sides) {
        i = i * s + (x - offset) as usize;
    }
    i
}

fn inside(c: &[i64], sides: &[usize], offset: i64) -> bool {
    c.iter()
        .zip(sides)
        .all(|(&x, &s)| x >= offset && x < offset + s as i64)
}

/// Blocks separated by a periodic grid of coordinate slabs on a torus.
///
/// With period `p = ⌊ℓ⌋ - 1`, a site belongs to the grid iff at least one of
/// its coordinates is a multiple of `p`. The remaining sites form
/// `q = Π_j (side_j / p)` disjoint cubes of side `p - 1 = ⌊ℓ⌋ - 2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockDecomposition {
    /// Requested `ℓ`.
    pub ell_requested: f64,
    /// `ℓ` actually used (an integer when it had to be shrunk).
    pub ell: f64,
    pub adjusted: bool,
    /// Grid period `⌊ℓ⌋ - 1`.
    pub period: usize,
    /// Block side `⌊ℓ⌋ - 2`.
    pub block_side: usize,
    /// Grid sites, sorted.
    pub grid: Vec<usize>,
    /// Each block's sites, sorted.
    pub blocks: Vec<Vec<usize>>,
    /// Block centres in torus coordinates.
    pub centers: Vec<Vec<f64>>,
    /// Block index per site, `None` on the grid.
    pub block_of: Vec<Option<usize>>,
}

impl BlockDecomposition {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_grid(&self, site: usize) -> bool {
        self.block_of[site].is_none()
    }
}

/// Decompose a torus into blocks of side `⌊ℓ⌋ - 2` separated by a grid.
///
/// If `⌊ℓ⌋ - 1` does not divide every side, `ℓ` is shrunk to the largest
/// integer whose period does; the adjustment is reported in the result.
pub fn build_block_grid(geom: &Geometry, ell: f64) -> Result<BlockDecomposition> {
    if !geom.is_torus() {
        return Err(LabError::Geometry("block grid requires a torus".into()));
    }
    if !ell.is_finite() || ell < 3.0 {
        return Err(invalid(format!("ell must satisfy floor(ell) >= 3, got {ell}")));
    }
    let floor = ell.floor() as usize;
    let max_period = floor - 1;
    let period = (2..=max_period)
        .rev()
        .find(|p| geom.sides().iter().all(|s| s % p == 0))
        .ok_or(LabError::NoAdmissibleBlockSide {
            side: geom.sides()[0],
            ell,
        })?;
    let adjusted = period != max_period;
    let ell_used = if adjusted { (period + 1) as f64 } else { ell };

    let n = geom.site_count();
    let per_axis: Vec<usize> = geom.sides().iter().map(|s| s / period).collect();
    let q: usize = per_axis.iter().product();
    let mut block_of = vec![None; n];
    let mut blocks = vec![Vec::new(); q];
    let mut grid = Vec::new();
    for site in 0..n {
        let c = geom.coords(site);
        if c.iter().any(|&x| x as usize % period == 0) {
            grid.push(site);
            continue;
        }
        let mut b = 0usize;
        for (j, &x) in c.iter().enumerate() {
            b = b * per_axis[j] + x as usize / period;
        }
        block_of[site] = Some(b);
        blocks[b].push(site);
    }
    let centers = (0..q)
        .map(|b| {
            let idx = unrank(b, &per_axis, 0);
            idx.iter()
                .map(|&k| k as f64 * period as f64 + period as f64 / 2.0)
                .collect()
        })
        .collect();
    Ok(BlockDecomposition {
        ell_requested: ell,
        ell: ell_used,
        adjusted,
        period,
        block_side: period - 1,
        grid,
        blocks,
        centers,
        block_of,
    })
}

/// Shells `λ_i = {x ∈ Λ_L : max_j |x_j| = i}` of a centred cube.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShellFamily {
    pub shells: Vec<Vec<usize>>,
}

impl ShellFamily {
    pub fn sizes(&self) -> Vec<usize> {
        self.shells.iter().map(Vec::len).collect()
    }
}

pub fn shells(geom: &Geometry) -> Result<ShellFamily> {
    let l = match (geom.kind(), geom.side_parameter()) {
        (GeometryKind::Cube, Some(l)) => l,
        _ => return Err(LabError::Geometry("shells require a centred cube".into())),
    };
    let mut shells = vec![Vec::new(); l + 1];
    for site in 0..geom.site_count() {
        let r = geom.coords(site).iter().map(|x| x.unsigned_abs()).max().unwrap() as usize;
        shells[r].push(site);
    }
    Ok(ShellFamily { shells })
}

/// `|λ_i|` in closed form.
pub fn shell_size(d: usize, i: usize) -> u64 {
    if i == 0 {
        1
    } else {
        (2 * i as u64 + 1).pow(d as u32) - (2 * i as u64 - 1).pow(d as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cube_counts() {
        let g = Geometry::cube(2, 1).unwrap();
        assert_eq!(g.site_count(), 9);
        // ℓ¹ outer layer of a 3x3 square: three sites beyond each side
        assert_eq!(g.boundary().len(), 12);
        let degs: Vec<usize> = (0..9).map(|x| g.neighbors(x).len()).collect();
        assert_eq!(*degs.iter().min().unwrap(), 2);
        assert_eq!(*degs.iter().max().unwrap(), 4);
        for x in 0..9 {
            assert_eq!(g.neighbors(x).len() + g.boundary_contacts(x).len(), 4);
        }
    }

    #[test]
    fn tiny_torus_collapses_parallel_edges() {
        let g = Geometry::torus(2, 1).unwrap();
        assert_eq!(g.site_count(), 4);
        for x in 0..4 {
            assert_eq!(g.neighbors(x).len(), 2);
            assert_eq!(g.directional(x).len(), 4);
        }
        assert_eq!(g.edges().len(), 4);
    }

    #[test]
    fn cube_3d_centre() {
        let g = Geometry::cube(3, 2).unwrap();
        assert_eq!(g.site_count(), 125);
        assert_eq!(g.neighbors(g.origin()).len(), 6);
        assert_eq!(g.coords(g.origin()), &[0, 0, 0]);
    }

    #[test]
    fn torus_degrees_and_size() {
        let g = Geometry::torus(2, 2).unwrap();
        assert_eq!(g.site_count(), 16);
        assert!((0..16).all(|x| g.neighbors(x).len() == 4));
        assert!(g.boundary().is_empty());
        assert_eq!(g.edges().len(), 32);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Geometry::cube(1, 3).is_err());
        assert!(matches!(
            build_geometry_with_cap(2, 10, GeometryKind::Cube, 100),
            Err(LabError::CapExceeded { .. })
        ));
        assert!(matches!(
            build_geometry(2, 1 << 16, GeometryKind::Torus),
            Err(LabError::CapExceeded { .. })
        ));
    }

    #[test]
    fn lexicographic_indexing() {
        let g = Geometry::cube(2, 1).unwrap();
        assert_eq!(g.coords(0), &[-1, -1]);
        assert_eq!(g.coords(1), &[-1, 0]);
        assert_eq!(g.coords(3), &[0, -1]);
        assert_eq!(g.coords(8), &[1, 1]);
    }

    #[test]
    fn block_grid_side_twelve() {
        let g = Geometry::torus(2, 6).unwrap();
        let b = build_block_grid(&g, 5.0).unwrap();
        assert!(!b.adjusted);
        assert_eq!(b.period, 4);
        assert_eq!(b.block_side, 3);
        assert_eq!(b.block_count(), 9);
        assert!(b.blocks.iter().all(|blk| blk.len() == 9));
    }

    #[test]
    fn block_grid_single_block() {
        let g = Geometry::torus(2, 2).unwrap();
        let b = build_block_grid(&g, 5.0).unwrap();
        assert_eq!(b.period, 4);
        assert_eq!(b.block_count(), 1);
        assert_eq!(b.blocks[0].len(), 9);
        assert_eq!(b.grid.len(), 7);
    }

    #[test]
    fn block_grid_shrinks_ell() {
        // period 3 does not divide 8; the largest admissible period is 2
        let g = Geometry::torus(2, 4).unwrap();
        let b = build_block_grid(&g, 4.7).unwrap();
        assert!(b.adjusted);
        assert_eq!(b.period, 2);
        assert_eq!(b.ell, 3.0);
        assert_eq!(b.block_side, 1);
        assert_eq!(b.block_count(), 16);
    }

    #[test]
    fn block_grid_errors() {
        let odd = Geometry::periodic_box(&[3, 3]).unwrap();
        assert!(matches!(
            build_block_grid(&odd, 3.5),
            Err(LabError::NoAdmissibleBlockSide { .. })
        ));
        let t = Geometry::torus(2, 2).unwrap();
        assert!(build_block_grid(&t, 2.9).is_err());
        assert!(build_block_grid(&Geometry::cube(2, 2).unwrap(), 4.0).is_err());
    }

    #[test]
    fn shell_examples() {
        assert_eq!(shells(&Geometry::cube(2, 1).unwrap()).unwrap().sizes(), vec![1, 8]);
        assert_eq!(shells(&Geometry::cube(2, 2).unwrap()).unwrap().sizes()[2], 16);
        assert_eq!(shells(&Geometry::cube(3, 1).unwrap()).unwrap().sizes()[1], 26);
        assert!(shells(&Geometry::torus(2, 2).unwrap()).is_err());
    }

    #[test]
    fn json_roundtrip_rebuilds_adjacency() {
        let g = Geometry::periodic_box(&[2, 3]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert!(!s.contains("neighbors"));
        let back: Geometry = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        let c = Geometry::cube(3, 1).unwrap();
        let back: Geometry = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
