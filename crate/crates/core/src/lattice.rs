//! Periodic triangulations carrying the three-spin interactions.
//!
//! Two lattices are supported:
//!
//! * **Union Jack**: an `L x L` square lattice of corner sites at integer
//!   coordinates plus one center site at `(x + 1/2, y + 1/2)` in every unit
//!   square, joined to its four corners. Every square contributes four
//!   triangles. Corners carry colors A/B in a checkerboard, centers carry C.
//!   `L` must be even so the checkerboard closes around the torus; the
//!   production sweeps use multiples of 6.
//! * **Triangular**: `L x L` sites embedded on the square grid at integer
//!   coordinates `(i, j)` with the diagonal `(i + 1, j) - (i, j + 1)` added,
//!   which is the triangular lattice in sheared form. Site `(i, j)` has color
//!   `(i + 2j) mod 3`, so `L` must be a multiple of 3.
//!
//! `L` counts unit squares (Union Jack) or sites (triangular) per side, and is
//! the length entering the `1/L^2` susceptibility normalization and the
//! smallest wave vector `2 pi / L`. Site ids are row-major, Union Jack
//! corners before centers. Triangle vertices are stored in color order
//! `[A, B, C]`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::digest_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeKind {
    UnionJack,
    Triangular,
}

impl LatticeKind {
    /// Checks that `size` is admissible for this lattice.
    pub fn validate_size(self, size: usize) -> Result<()> {
        match self {
            LatticeKind::UnionJack if size < 2 || size % 2 != 0 => Err(Error::LatticeSize(format!(
                "Union Jack needs an even L >= 2 for the corner checkerboard to close, got {size}"
            ))),
            LatticeKind::Triangular if size < 3 || size % 3 != 0 => Err(Error::LatticeSize(format!(
                "triangular lattice needs L >= 3 divisible by 3 for the periodic 3-coloring, got {size}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn build(self, size: usize) -> Result<Lattice> {
        match self {
            LatticeKind::UnionJack => build_union_jack(size),
            LatticeKind::Triangular => build_triangular(size),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            LatticeKind::UnionJack => "uj",
            LatticeKind::Triangular => "tr",
        }
    }
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeKind::UnionJack => f.write_str("union-jack"),
            LatticeKind::Triangular => f.write_str("triangular"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Color {
    A,
    B,
    C,
}

impl Color {
    fn from_index(i: usize) -> Color {
        match i % 3 {
            0 => Color::A,
            1 => Color::B,
            _ => Color::C,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: usize,
    pub coords: [f64; 2],
    pub color: Color,
    /// Number of incident triangles.
    pub coordination: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triangle {
    pub id: usize,
    pub vertices: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct Lattice {
    kind: LatticeKind,
    size: usize,
    sites: Vec<Site>,
    triangles: Vec<Triangle>,
    incidence: Vec<Vec<usize>>,
}

impl Lattice {
    /// Assembles a lattice from raw parts, deriving incidence and coordination.
    ///
    /// No invariant is enforced here; use [`verify_lattice`] to check one.
    pub fn from_parts(
        kind: LatticeKind,
        size: usize,
        coords: Vec<[f64; 2]>,
        colors: Vec<Color>,
        triangles: Vec<[usize; 3]>,
    ) -> Lattice {
        let mut incidence = vec![Vec::new(); coords.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                incidence[v].push(t);
            }
        }
        let sites = coords
            .into_iter()
            .zip(colors)
            .enumerate()
            .map(|(id, (coords, color))| Site {
                id,
                coords,
                color,
                coordination: incidence[id].len(),
            })
            .collect();
        let triangles = triangles
            .into_iter()
            .enumerate()
            .map(|(id, vertices)| Triangle { id, vertices })
            .collect();
        Lattice {
            kind,
            size,
            sites,
            triangles,
            incidence,
        }
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    /// Linear size `L`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    /// Triangles containing `site`, in ascending id order.
    pub fn incidence(&self, site: usize) -> &[usize] {
        &self.incidence[site]
    }

    /// Magnitude of the smallest nonzero wave vector, `2 pi / L`.
    pub fn k_min(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.size as f64
    }

    pub fn max_coordination(&self) -> usize {
        self.sites.iter().map(|s| s.coordination).max().unwrap_or(0)
    }

    /// Stable fingerprint of the lattice geometry.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(16 + 12 * self.triangles.len());
        bytes.extend_from_slice(self.kind.short_name().as_bytes());
        bytes.extend_from_slice(&(self.size as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.sites.len() as u64).to_le_bytes());
        for tri in &self.triangles {
            for &v in &tri.vertices {
                bytes.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        digest_hex(&bytes)
    }

    /// Debug dump `{kind, L, sites: [{id, x, y, color}], triangles: [[i, j, k]]}`.
    pub fn to_dump(&self) -> LatticeDump {
        LatticeDump {
            kind: self.kind,
            size: self.size,
            sites: self
                .sites
                .iter()
                .map(|s| SiteDump {
                    id: s.id,
                    x: s.coords[0],
                    y: s.coords[1],
                    color: s.color,
                })
                .collect(),
            triangles: self.triangles.iter().map(|t| t.vertices).collect(),
        }
    }

    pub fn from_dump(dump: &LatticeDump) -> Lattice {
        let mut ordered: Vec<&SiteDump> = dump.sites.iter().collect();
        ordered.sort_by_key(|s| s.id);
        Lattice::from_parts(
            dump.kind,
            dump.size,
            ordered.iter().map(|s| [s.x, s.y]).collect(),
            ordered.iter().map(|s| s.color).collect(),
            dump.triangles.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteDump {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub color: Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeDump {
    pub kind: LatticeKind,
    #[serde(rename = "L")]
    pub size: usize,
    pub sites: Vec<SiteDump>,
    pub triangles: Vec<[usize; 3]>,
}

/// Union Jack lattice with `L x L` unit squares on a torus.
pub fn build_union_jack(size: usize) -> Result<Lattice> {
    LatticeKind::UnionJack.validate_size(size)?;
    let l = size;
    let corner = |x: usize, y: usize| (y % l) * l + (x % l);
    let center = |x: usize, y: usize| l * l + y * l + x;

    let mut coords = Vec::with_capacity(2 * l * l);
    let mut colors = Vec::with_capacity(2 * l * l);
    for y in 0..l {
        for x in 0..l {
            coords.push([x as f64, y as f64]);
            colors.push(if (x + y) % 2 == 0 { Color::A } else { Color::B });
        }
    }
    for y in 0..l {
        for x in 0..l {
            coords.push([x as f64 + 0.5, y as f64 + 0.5]);
            colors.push(Color::C);
        }
    }

    let mut triangles = Vec::with_capacity(4 * l * l);
    for y in 0..l {
        for x in 0..l {
            let c = center(x, y);
            let ring = [
                corner(x, y),
                corner(x + 1, y),
                corner(x + 1, y + 1),
                corner(x, y + 1),
            ];
            for e in 0..4 {
                let (a, b) = (ring[e], ring[(e + 1) % 4]);
                triangles.push(color_ordered([a, b, c], &colors));
            }
        }
    }
    Ok(Lattice::from_parts(LatticeKind::UnionJack, l, coords, colors, triangles))
}

/// Triangular lattice with `L x L` sites on a torus, in sheared embedding.
pub fn build_triangular(size: usize) -> Result<Lattice> {
    LatticeKind::Triangular.validate_size(size)?;
    let l = size;
    let id = |i: usize, j: usize| (j % l) * l + (i % l);

    let mut coords = Vec::with_capacity(l * l);
    let mut colors = Vec::with_capacity(l * l);
    for j in 0..l {
        for i in 0..l {
            coords.push([i as f64, j as f64]);
            colors.push(Color::from_index(i + 2 * j));
        }
    }

    let mut triangles = Vec::with_capacity(2 * l * l);
    for j in 0..l {
        for i in 0..l {
            triangles.push(color_ordered([id(i, j), id(i + 1, j), id(i, j + 1)], &colors));
            triangles.push(color_ordered(
                [id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)],
                &colors,
            ));
        }
    }
    Ok(Lattice::from_parts(LatticeKind::Triangular, l, coords, colors, triangles))
}

fn color_ordered(mut tri: [usize; 3], colors: &[Color]) -> [usize; 3] {
    tri.sort_by_key(|&v| colors[v]);
    tri
}

/// Outcome of [`verify_lattice`]; one flag per structural check.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub site_count_ok: bool,
    pub triangle_count_ok: bool,
    pub distinct_vertices_ok: bool,
    pub three_coloring_ok: bool,
    pub coordination_histogram: BTreeMap<usize, usize>,
    pub coordination_ok: bool,
    pub incidence_sum_ok: bool,
    pub incidence_consistent: bool,
    /// Every vertex operator touches a multiple of four triangles.
    /// `None` where the property is not expected (triangular lattice).
    pub multiple_of_four: Option<bool>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.site_count_ok
            && self.triangle_count_ok
            && self.distinct_vertices_ok
            && self.three_coloring_ok
            && self.coordination_ok
            && self.incidence_sum_ok
            && self.incidence_consistent
            && self.multiple_of_four.unwrap_or(true)
    }
}

pub fn verify_lattice(lat: &Lattice) -> ValidationReport {
    let l = lat.size();
    let (n_expected, tri_expected) = match lat.kind() {
        LatticeKind::UnionJack => (2 * l * l, 4 * l * l),
        LatticeKind::Triangular => (l * l, 2 * l * l),
    };

    let distinct_vertices_ok = lat.triangles().iter().all(|t| {
        let [a, b, c] = t.vertices;
        a != b && b != c && a != c && t.vertices.iter().all(|&v| v < lat.n_sites())
    });

    let three_coloring_ok = distinct_vertices_ok
        && lat.triangles().iter().all(|t| {
            let mut seen = [false; 3];
            for &v in &t.vertices {
                seen[lat.sites()[v].color.index()] = true;
            }
            seen.iter().all(|&s| s)
        });

    let mut histogram = BTreeMap::new();
    for site in lat.sites() {
        *histogram.entry(site.coordination).or_insert(0) += 1;
    }
    let coordination_ok = match lat.kind() {
        LatticeKind::UnionJack => {
            histogram == BTreeMap::from([(4, l * l), (8, l * l)])
                && lat
                    .sites()
                    .iter()
                    .all(|s| s.coordination == if s.color == Color::C { 4 } else { 8 })
        }
        LatticeKind::Triangular => histogram == BTreeMap::from([(6, l * l)]),
    };

    let incidence_sum: usize = (0..lat.n_sites()).map(|s| lat.incidence(s).len()).sum();
    let incidence_sum_ok = incidence_sum == 3 * lat.n_triangles();

    let incidence_consistent = distinct_vertices_ok
        && (0..lat.n_sites()).all(|s| {
            lat.incidence(s)
                .iter()
                .all(|&t| t < lat.n_triangles() && lat.triangles()[t].vertices.contains(&s))
                && lat.sites()[s].coordination == lat.incidence(s).len()
        })
        && lat.triangles().iter().all(|t| {
            t.vertices
                .iter()
                .all(|&v| lat.incidence(v).iter().filter(|&&x| x == t.id).count() == 1)
        });

    let multiple_of_four = match lat.kind() {
        LatticeKind::UnionJack => Some(
            lat.sites()
                .iter()
                .all(|s| s.coordination > 0 && s.coordination % 4 == 0),
        ),
        LatticeKind::Triangular => None,
    };

    ValidationReport {
        site_count_ok: lat.n_sites() == n_expected,
        triangle_count_ok: lat.n_triangles() == tri_expected,
        distinct_vertices_ok,
        three_coloring_ok,
        coordination_histogram: histogram,
        coordination_ok,
        incidence_sum_ok,
        incidence_consistent,
        multiple_of_four,
    }
}
