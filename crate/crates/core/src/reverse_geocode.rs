//! Nearest-city lookup for ground-truth labeling of geotagged mentions.
//!
//! Cities are placed on the unit sphere and stored in a static 3-d tree. The
//! tree prunes by chord length, which is monotone in great-circle distance;
//! the final comparison uses haversine distance and entity id so results are
//! identical to a linear scan.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::gazetteer::{Granularity, LocationEntity};
use crate::text::escape;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::InvalidArgument(format!(
                "coordinates out of range: ({latitude}, {longitude})"
            )));
        }
        Ok(GeoPoint {
            latitude,
            longitude,
        })
    }

    fn to_unit(self) -> [f64; 3] {
        let (lat, lon) = (self.latitude.to_radians(), self.longitude.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }
}

/// Great-circle distance on a spherical Earth.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dp = p2 - p1;
    let dl = (b.longitude - a.longitude).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy)]
struct Node {
    point: [f64; 3],
    city: usize,
    axis: u8,
}

/// Immutable spatial index over the City-granularity entities.
#[derive(Debug, Clone)]
pub struct CityLocator {
    cities: Vec<LocationEntity>,
    // Implicit balanced tree: the median of each slice is its root.
    nodes: Vec<Node>,
}

impl CityLocator {
    pub fn build(cities: Vec<LocationEntity>) -> Result<Self> {
        if cities.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if let Some(bad) = cities.iter().find(|c| c.granularity != Granularity::City) {
            return Err(Error::InvalidArgument(format!(
                "entity {} is not a city",
                bad.entity_id
            )));
        }
        let mut nodes: Vec<Node> = cities
            .iter()
            .enumerate()
            .map(|(i, c)| Node {
                point: GeoPoint {
                    latitude: c.latitude,
                    longitude: c.longitude,
                }
                .to_unit(),
                city: i,
                axis: 0,
            })
            .collect();
        build_tree(&mut nodes);
        Ok(CityLocator { cities, nodes })
    }

    /// Build from a mixed database, keeping only cities.
    pub fn from_database(entities: &[LocationEntity]) -> Result<Self> {
        Self::build(
            entities
                .iter()
                .filter(|e| e.granularity == Granularity::City)
                .cloned()
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.cities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cities.is_empty()
    }

    pub fn cities(&self) -> &[LocationEntity] {
        &self.cities
    }

    /// City minimizing great-circle distance; ties go to the lower entity id.
    pub fn nearest_city(&self, point: GeoPoint) -> Result<&LocationEntity> {
        let point = GeoPoint::new(point.latitude, point.longitude)?;
        let mut search = Search {
            locator: self,
            query: point,
            query_unit: point.to_unit(),
            best: None,
            best_chord_sq: f64::INFINITY,
        };
        search.visit(0, self.nodes.len());
        let (_, city) = search.best.expect("locator is non-empty");
        Ok(&self.cities[city])
    }
}

/// Batch mode: `lat<TAB>lon` lines in, `lat<TAB>lon<TAB>city<TAB>admin1<TAB>country`
/// lines out, in input order. Returns the number of rows written.
pub fn reverse_geocode_tsv<R: BufRead, W: Write>(
    locator: &CityLocator,
    input: R,
    mut out: W,
) -> Result<usize> {
    const WHAT: &str = "coordinates";
    let mut rows = 0;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split('\t');
        let (Some(lat), Some(lon)) = (f.next(), f.next()) else {
            return Err(Error::format(WHAT, lineno, "expected lat<TAB>lon"));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::format(WHAT, lineno, format!("bad coordinate {s:?}")))
        };
        let point = GeoPoint::new(parse(lat)?, parse(lon)?)
            .map_err(|e| Error::format(WHAT, lineno, e.to_string()))?;
        let city = locator.nearest_city(point)?;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            lat.trim(),
            lon.trim(),
            escape(city.city_name()),
            escape(city.admin1_display()),
            escape(&city.country_name)
        )?;
        rows += 1;
    }
    Ok(rows)
}

fn build_tree(nodes: &mut [Node]) {
    if nodes.len() <= 1 {
        return;
    }
    let axis = widest_axis(nodes);
    let mid = nodes.len() / 2;
    nodes.select_nth_unstable_by(mid, |a, b| {
        a.point[axis]
            .total_cmp(&b.point[axis])
            .then(a.city.cmp(&b.city))
    });
    nodes[mid].axis = axis as u8;
    let (left, right) = nodes.split_at_mut(mid);
    build_tree(left);
    build_tree(&mut right[1..]);
}

fn widest_axis(nodes: &[Node]) -> usize {
    (0..3)
        .map(|axis| {
            let (lo, hi) = nodes
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| {
                    (lo.min(n.point[axis]), hi.max(n.point[axis]))
                });
            (axis, hi - lo)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(axis, _)| axis)
        .unwrap_or(0)
}

// Slack on the pruning bound so rounding in the chord/haversine conversion
// can never discard a tied or marginally closer candidate.
const PRUNE_SLACK: f64 = 1e-9;

struct Search<'a> {
    locator: &'a CityLocator,
    query: GeoPoint,
    query_unit: [f64; 3],
    best: Option<(f64, usize)>,
    best_chord_sq: f64,
}

impl Search<'_> {
    fn visit(&mut self, lo: usize, hi: usize) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let node = self.locator.nodes[mid];
        self.consider(node.city);
        if hi - lo == 1 {
            return;
        }
        let axis = node.axis as usize;
        let diff = self.query_unit[axis] - node.point[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.visit(near.0, near.1);
        if diff * diff <= self.best_chord_sq + PRUNE_SLACK {
            self.visit(far.0, far.1);
        }
    }

    fn consider(&mut self, city: usize) {
        let c = &self.locator.cities[city];
        let d = haversine_km(
            self.query,
            GeoPoint {
                latitude: c.latitude,
                longitude: c.longitude,
            },
        );
        let better = match self.best {
            None => true,
            Some((bd, bc)) => match d.total_cmp(&bd) {
                Ordering::Less => true,
                Ordering::Equal => c.entity_id < self.locator.cities[bc].entity_id,
                Ordering::Greater => false,
            },
        };
        if better {
            self.best = Some((d, city));
            let chord = 2.0 * (d / (2.0 * EARTH_RADIUS_KM)).sin();
            self.best_chord_sq = chord * chord;
        }
    }
}
