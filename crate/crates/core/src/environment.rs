//! Bathymetry, currents, wind and medium properties.
//!
//! Grids live in the local tangent plane: `.asc` header corners and XYZ
//! coordinates are easting/northing in meters relative to the scenario origin.
//! Depth values are positive down.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::AIR_DENSITY;
use crate::geomath::Vec3;

pub const SEAWATER_DENSITY: f64 = 1025.0;
pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("irregular XYZ grid: {0}")]
    IrregularGrid(String),
    #[error("query ({north:.3}, {east:.3}) is outside the bathymetry grid")]
    OutOfBounds { north: f64, east: f64 },
    #[error("no-data node near ({north:.3}, {east:.3})")]
    NoData { north: f64, east: f64 },
    #[error("invalid flow field: {0}")]
    InvalidFlow(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn parse_err(line: usize, message: impl Into<String>) -> EnvironmentError {
    EnvironmentError::Parse {
        line,
        message: message.into(),
    }
}

/// Regular depth grid; node `(row, col)` sits at
/// `north = south + row * cell_size`, `east = west + col * cell_size`.
/// Rows are stored south to north.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathymetryGrid {
    pub west: f64,
    pub south: f64,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub depth: Vec<f64>,
    pub nodata: f64,
}

impl BathymetryGrid {
    pub fn new(
        west: f64,
        south: f64,
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
        depth: Vec<f64>,
        nodata: f64,
    ) -> Result<Self, EnvironmentError> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(parse_err(0, "cellsize must be positive"));
        }
        if n_rows < 2 || n_cols < 2 {
            return Err(parse_err(0, "grid needs at least 2x2 nodes"));
        }
        if depth.len() != n_rows * n_cols {
            return Err(parse_err(
                0,
                format!("expected {} depth values, found {}", n_rows * n_cols, depth.len()),
            ));
        }
        for (i, d) in depth.iter().enumerate() {
            if *d != nodata && !(d.is_finite() && *d >= 0.0) {
                return Err(parse_err(0, format!("node {i} has invalid depth {d}")));
            }
        }
        Ok(Self {
            west,
            south,
            cell_size,
            n_rows,
            n_cols,
            depth,
            nodata,
        })
    }

    /// Flat seabed covering a square centered on the origin.
    pub fn flat(half_extent: f64, cell_size: f64, depth: f64) -> Self {
        let n = (2.0 * half_extent / cell_size).ceil() as usize + 1;
        Self {
            west: -half_extent,
            south: -half_extent,
            cell_size,
            n_rows: n,
            n_cols: n,
            depth: vec![depth; n * n],
            nodata: DEFAULT_NODATA,
        }
    }

    pub fn node(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.n_cols + col]
    }

    pub fn north_extent(&self) -> f64 {
        (self.n_rows - 1) as f64 * self.cell_size
    }

    pub fn east_extent(&self) -> f64 {
        (self.n_cols - 1) as f64 * self.cell_size
    }

    pub fn contains(&self, north: f64, east: f64) -> bool {
        let r = snap((north - self.south) / self.cell_size);
        let c = snap((east - self.west) / self.cell_size);
        r >= 0.0 && c >= 0.0 && r <= (self.n_rows - 1) as f64 && c <= (self.n_cols - 1) as f64
    }

    /// Bilinear depth at a local (north, east) point; exact at nodes.
    pub fn depth_at(&self, north: f64, east: f64) -> Result<f64, EnvironmentError> {
        if !self.contains(north, east) {
            return Err(EnvironmentError::OutOfBounds { north, east });
        }
        let r = snap((north - self.south) / self.cell_size);
        let c = snap((east - self.west) / self.cell_size);
        let r0 = (r.floor() as usize).min(self.n_rows - 2);
        let c0 = (c.floor() as usize).min(self.n_cols - 2);
        let fr = r - r0 as f64;
        let fc = c - c0 as f64;
        let d00 = self.node(r0, c0);
        let d01 = self.node(r0, c0 + 1);
        let d10 = self.node(r0 + 1, c0);
        let d11 = self.node(r0 + 1, c0 + 1);
        if [d00, d01, d10, d11].contains(&self.nodata) {
            return Err(EnvironmentError::NoData { north, east });
        }
        // Weights collapse to exactly one node when the query sits on it.
        let south_edge = if fc == 0.0 { d00 } else if fc == 1.0 { d01 } else { d00 + (d01 - d00) * fc };
        let north_edge = if fc == 0.0 { d10 } else if fc == 1.0 { d11 } else { d10 + (d11 - d10) * fc };
        Ok(if fr == 0.0 {
            south_edge
        } else if fr == 1.0 {
            north_edge
        } else {
            south_edge + (north_edge - south_edge) * fr
        })
    }

    /// Esri ASCII grid text, rows written north to south.
    pub fn to_asc(&self) -> String {
        let mut s = String::new();
        writeln!(s, "ncols {}", self.n_cols).unwrap();
        writeln!(s, "nrows {}", self.n_rows).unwrap();
        writeln!(s, "xllcorner {}", self.west).unwrap();
        writeln!(s, "yllcorner {}", self.south).unwrap();
        writeln!(s, "cellsize {}", self.cell_size).unwrap();
        writeln!(s, "NODATA_value {}", self.nodata).unwrap();
        for row in (0..self.n_rows).rev() {
            let line: Vec<String> = (0..self.n_cols).map(|c| format!("{}", self.node(row, c))).collect();
            writeln!(s, "{}", line.join(" ")).unwrap();
        }
        s
    }

    pub fn parse_asc(text: &str) -> Result<Self, EnvironmentError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let keys = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"];
        let mut header = [0.0f64; 6];
        for (k, key) in keys.iter().enumerate() {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| parse_err(k + 1, format!("missing header row '{key}'")))?;
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap_or("").to_ascii_lowercase();
            let accepted = match *key {
                "xllcorner" => name == "xllcorner" || name == "xllcenter",
                "yllcorner" => name == "yllcorner" || name == "yllcenter",
                other => name == other,
            };
            if !accepted {
                return Err(parse_err(idx + 1, format!("expected header row '{key}', found '{}'", line.trim())));
            }
            header[k] = parts
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| parse_err(idx + 1, format!("bad value for '{key}'")))?;
        }
        let n_cols = header[0] as usize;
        let n_rows = header[1] as usize;
        if header[0] != n_cols as f64 || header[1] != n_rows as f64 {
            return Err(parse_err(1, "ncols/nrows must be integers"));
        }
        let mut rows_north_first = Vec::with_capacity(n_rows);
        for (idx, line) in lines {
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| parse_err(idx + 1, format!("bad depth value: {e}")))?;
            if vals.len() != n_cols {
                return Err(parse_err(idx + 1, format!("expected {n_cols} values, found {}", vals.len())));
            }
            rows_north_first.push(vals);
        }
        if rows_north_first.len() != n_rows {
            return Err(parse_err(
                0,
                format!("expected {n_rows} data rows, found {}", rows_north_first.len()),
            ));
        }
        let depth: Vec<f64> = rows_north_first.into_iter().rev().flatten().collect();
        Self::new(header[2], header[3], header[4], n_rows, n_cols, depth, header[5])
    }

    /// Whitespace `east north depth` triples on a regular grid, any order.
    pub fn parse_xyz(text: &str) -> Result<Self, EnvironmentError> {
        let mut pts = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let vals: Result<Vec<f64>, _> = t.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| parse_err(idx + 1, format!("bad number: {e}")))?;
            if vals.len() != 3 {
                return Err(parse_err(idx + 1, format!("expected 3 columns, found {}", vals.len())));
            }
            pts.push((vals[0], vals[1], vals[2]));
        }
        if pts.is_empty() {
            return Err(parse_err(0, "no points"));
        }
        let axis = |sel: fn(&(f64, f64, f64)) -> f64| {
            let mut v: Vec<f64> = pts.iter().map(sel).collect();
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() <= 1e-6);
            v
        };
        let xs = axis(|p| p.0);
        let ys = axis(|p| p.1);
        if xs.len() < 2 || ys.len() < 2 {
            return Err(EnvironmentError::IrregularGrid("need at least 2 distinct x and y values".into()));
        }
        let cell = xs[1] - xs[0];
        let uniform = |v: &[f64]| v.windows(2).all(|w| ((w[1] - w[0]) - cell).abs() <= 1e-6);
        if !uniform(&xs) || !uniform(&ys) {
            return Err(EnvironmentError::IrregularGrid(format!(
                "node spacing differs from {cell} m"
            )));
        }
        let (n_cols, n_rows) = (xs.len(), ys.len());
        if pts.len() != n_rows * n_cols {
            return Err(EnvironmentError::IrregularGrid(format!(
                "{} points do not fill a {n_rows}x{n_cols} grid",
                pts.len()
            )));
        }
        let mut depth = vec![f64::NAN; n_rows * n_cols];
        for (x, y, z) in &pts {
            let c = ((x - xs[0]) / cell).round() as usize;
            let r = ((y - ys[0]) / cell).round() as usize;
            let slot = &mut depth[r * n_cols + c];
            if !slot.is_nan() {
                return Err(EnvironmentError::IrregularGrid(format!("duplicate node at ({x}, {y})")));
            }
            *slot = *z;
        }
        Self::new(xs[0], ys[0], cell, n_rows, n_cols, depth, DEFAULT_NODATA)
    }
}

/// Rounds grid coordinates that are within float noise of a node index.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Loads `.asc` or XYZ bathymetry, choosing the parser by extension
/// (`.asc` → Esri grid, anything else → XYZ).
pub fn load_bathymetry(path: &Path) -> Result<BathymetryGrid, EnvironmentError> {
    let text = std::fs::read_to_string(path).map_err(|source| EnvironmentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let is_asc = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("asc"))
        .unwrap_or(false);
    if is_asc {
        BathymetryGrid::parse_asc(&text)
    } else {
        BathymetryGrid::parse_xyz(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentLayer {
    pub depth_from: f64,
    pub depth_to: f64,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowField {
    #[serde(default)]
    pub currents: Vec<CurrentLayer>,
    #[serde(default = "Vec3::zeros")]
    pub wind: Vec3,
}

impl FlowField {
    pub fn validate(&self) -> Result<(), EnvironmentError> {
        for l in &self.currents {
            if !(l.depth_from < l.depth_to) || l.depth_from < 0.0 {
                return Err(EnvironmentError::InvalidFlow(format!(
                    "layer [{}, {}) is empty or above the surface",
                    l.depth_from, l.depth_to
                )));
            }
        }
        for w in self.currents.windows(2) {
            if w[1].depth_from < w[0].depth_to {
                return Err(EnvironmentError::InvalidFlow(
                    "current layers must be sorted and non-overlapping".into(),
                ));
            }
        }
        Ok(())
    }

    /// Current at depth `z`; layers are half-open `[from, to)`.
    pub fn current_at(&self, z: f64) -> Vec3 {
        if z < 0.0 {
            return Vec3::zeros();
        }
        self.currents
            .iter()
            .find(|l| z >= l.depth_from && z < l.depth_to)
            .map(|l| l.velocity)
            .unwrap_or_else(Vec3::zeros)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentSample {
    pub current: Vec3,
    pub wind: Vec3,
    pub rho: f64,
    pub seabed_depth: Option<f64>,
}

impl EnvironmentSample {
    pub fn still_water() -> Self {
        Self {
            current: Vec3::zeros(),
            wind: Vec3::zeros(),
            rho: SEAWATER_DENSITY,
            seabed_depth: None,
        }
    }
}

/// Static world environment; immutable after load.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Environment {
    pub bathymetry: Option<BathymetryGrid>,
    pub flow: FlowField,
    pub water_density: Option<f64>,
}

impl Environment {
    pub fn rho_water(&self) -> f64 {
        self.water_density.unwrap_or(SEAWATER_DENSITY)
    }

    pub fn seabed(&self, position: &Vec3) -> Option<f64> {
        self.bathymetry
            .as_ref()
            .and_then(|g| g.depth_at(position.x, position.y).ok())
    }

    /// Environmental conditions at `position`. Steady fields, so `_t` is unused.
    pub fn sample(&self, position: &Vec3, _t: f64) -> EnvironmentSample {
        let in_air = position.z < 0.0;
        EnvironmentSample {
            current: self.flow.current_at(position.z),
            wind: if in_air { self.flow.wind } else { Vec3::zeros() },
            rho: if in_air { AIR_DENSITY } else { self.rho_water() },
            seabed_depth: self.seabed(position),
        }
    }

    /// Sample for a hull at `position` whose superstructure rises `freeboard`
    /// meters above it: water properties from the hull, wind from above it.
    pub fn sample_for_hull(&self, position: &Vec3, freeboard: f64, t: f64) -> EnvironmentSample {
        let mut s = self.sample(position, t);
        if freeboard > 0.0 {
            let top = Vec3::new(position.x, position.y, position.z - freeboard);
            s.wind = self.sample(&top, t).wind;
        }
        s
    }
}

pub fn sample_environment(world: &Environment, position: &Vec3, t: f64) -> EnvironmentSample {
    world.sample(position, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Grounding {
    Clear,
    Grounded { penetration: f64 },
}

pub fn grounding_check(
    grid: &BathymetryGrid,
    position: &Vec3,
    draft: f64,
) -> Result<Grounding, EnvironmentError> {
    let seabed = grid.depth_at(position.x, position.y)?;
    let keel = position.z + draft;
    Ok(if keel >= seabed {
        Grounding::Grounded {
            penetration: keel - seabed,
        }
    } else {
        Grounding::Clear
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const ASC_2X2: &str = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 10\nNODATA_value -9999\n5 6\n7 8\n";

    #[test]
    fn parses_small_asc() {
        let g = BathymetryGrid::parse_asc(ASC_2X2).unwrap();
        assert_eq!((g.n_rows, g.n_cols, g.cell_size), (2, 2, 10.0));
        // First data row is the northern edge.
        assert_eq!(g.node(1, 0), 5.0);
        assert_eq!(g.node(1, 1), 6.0);
        assert_eq!(g.node(0, 0), 7.0);
        assert_eq!(g.node(0, 1), 8.0);
    }

    #[test]
    fn xyz_matches_asc() {
        let xyz = "0 10 5\n10 10 6\n0 0 7\n10 0 8\n";
        let a = BathymetryGrid::parse_asc(ASC_2X2).unwrap();
        let b = BathymetryGrid::parse_xyz(xyz).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_nodata_row_names_the_line() {
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 10\n5 6\n7 8\n";
        let err = BathymetryGrid::parse_asc(text).unwrap_err();
        match err {
            EnvironmentError::Parse { line, message } => {
                assert_eq!(line, 6);
                assert!(message.contains("nodata_value"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn irregular_xyz_rejected() {
        let xyz = "0 0 1\n10 0 1\n25 0 1\n0 10 1\n10 10 1\n25 10 1\n";
        assert!(matches!(BathymetryGrid::parse_xyz(xyz), Err(EnvironmentError::IrregularGrid(_))));
        let holey = "0 0 1\n10 0 1\n0 10 1\n";
        assert!(matches!(BathymetryGrid::parse_xyz(holey), Err(EnvironmentError::IrregularGrid(_))));
    }

    #[test]
    fn depth_at_nodes_and_midpoints() {
        let g = BathymetryGrid::new(0.0, 0.0, 10.0, 2, 2, vec![4.0, 4.0, 8.0, 8.0], DEFAULT_NODATA).unwrap();
        assert_eq!(g.depth_at(0.0, 0.0).unwrap(), 4.0);
        assert_eq!(g.depth_at(10.0, 10.0).unwrap(), 8.0);
        assert_eq!(g.depth_at(5.0, 5.0).unwrap(), 6.0);
        assert!(matches!(g.depth_at(11.0, 5.0), Err(EnvironmentError::OutOfBounds { .. })));
    }

    #[test]
    fn nodata_corner_reported() {
        let g = BathymetryGrid::new(0.0, 0.0, 10.0, 2, 2, vec![4.0, -9999.0, 8.0, 8.0], -9999.0).unwrap();
        assert!(matches!(g.depth_at(5.0, 5.0), Err(EnvironmentError::NoData { .. })));
    }

    #[test]
    fn sampling_layers_and_media() {
        let env = Environment {
            bathymetry: None,
            flow: FlowField {
                currents: vec![
                    CurrentLayer { depth_from: 0.0, depth_to: 10.0, velocity: Vec3::new(0.3, 0.0, 0.0) },
                    CurrentLayer { depth_from: 10.0, depth_to: 50.0, velocity: Vec3::new(0.0, 0.1, 0.0) },
                ],
                wind: Vec3::new(0.0, 5.0, 0.0),
            },
            water_density: None,
        };
        let s = env.sample(&Vec3::new(0.0, 0.0, 5.0), 0.0);
        assert_eq!(s.current, Vec3::new(0.3, 0.0, 0.0));
        assert_eq!(s.wind, Vec3::zeros());
        assert_eq!(s.rho, SEAWATER_DENSITY);

        let air = env.sample(&Vec3::new(0.0, 0.0, -2.0), 0.0);
        assert_eq!(air.current, Vec3::zeros());
        assert_eq!(air.wind, Vec3::new(0.0, 5.0, 0.0));
        assert_eq!(air.rho, 1.225);

        let boundary = env.sample(&Vec3::new(0.0, 0.0, 10.0), 0.0);
        assert_eq!(boundary.current, Vec3::new(0.0, 0.1, 0.0));

        let hull = env.sample_for_hull(&Vec3::zeros(), 1.0, 0.0);
        assert_eq!(hull.wind, Vec3::new(0.0, 5.0, 0.0));
        assert_eq!(hull.rho, SEAWATER_DENSITY);
    }

    #[test]
    fn overlapping_layers_rejected() {
        let f = FlowField {
            currents: vec![
                CurrentLayer { depth_from: 0.0, depth_to: 10.0, velocity: Vec3::zeros() },
                CurrentLayer { depth_from: 5.0, depth_to: 20.0, velocity: Vec3::zeros() },
            ],
            wind: Vec3::zeros(),
        };
        assert!(f.validate().is_err());
    }

    #[test]
    fn grounding_rules() {
        let g = BathymetryGrid::flat(100.0, 10.0, 10.0);
        assert_eq!(grounding_check(&g, &Vec3::new(0.0, 0.0, 5.0), 0.5).unwrap(), Grounding::Clear);
        match grounding_check(&g, &Vec3::new(0.0, 0.0, 9.8), 0.5).unwrap() {
            Grounding::Grounded { penetration } => assert_abs_diff_eq!(penetration, 0.3, epsilon = 1e-12),
            Grounding::Clear => panic!("expected grounding"),
        }
        assert_eq!(
            grounding_check(&g, &Vec3::new(0.0, 0.0, 9.5), 0.5).unwrap(),
            Grounding::Grounded { penetration: 0.0 }
        );
        assert!(grounding_check(&g, &Vec3::new(500.0, 0.0, 5.0), 0.5).is_err());
    }

    fn arb_grid() -> impl Strategy<Value = BathymetryGrid> {
        (2usize..6, 2usize..6, 0.5..20.0f64).prop_flat_map(|(r, c, cell)| {
            prop::collection::vec(0.0..200.0f64, r * c).prop_map(move |d| {
                BathymetryGrid::new(-3.0, 7.5, cell, r, c, d, DEFAULT_NODATA).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn asc_round_trip(g in arb_grid()) {
            let back = BathymetryGrid::parse_asc(&g.to_asc()).unwrap();
            prop_assert_eq!(back, g);
        }

        #[test]
        fn continuous_across_cell_edges(g in arb_grid(), frac in 0.0..1.0f64) {
            // Shared edge between column 0 and 1 queried from both sides.
            let north = g.south + frac * g.north_extent();
            let edge = g.west + g.cell_size;
            let a = g.depth_at(north, edge - 1e-12).unwrap();
            let b = g.depth_at(north, edge).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn nodes_are_exact(g in arb_grid(), r in 0usize..6, c in 0usize..6) {
            let (r, c) = (r % g.n_rows, c % g.n_cols);
            let n = g.south + r as f64 * g.cell_size;
            let e = g.west + c as f64 * g.cell_size;
            prop_assert_eq!(g.depth_at(n, e).unwrap(), g.node(r, c));
        }
    }
}
