//! Occupancy-grid world model for the mobile base: ASCII map parsing, A*
//! planning over four- or eight-connected cells, and constant-speed time
//! parameterization of planned paths.

mod astar;

pub use astar::{astar, heuristic_value, Connectivity, Heuristic, PlanResult};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Grid coordinates: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// A 2D boolean occupancy grid with a world anchoring: cell `(0, 0)` has its
/// corner at `origin` and every cell is `resolution` meters square.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    occupancy: Vec<bool>,
}

/// JSON header on the first line of a map file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapHeader {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub resolution: f64,
    pub origin: [f64; 2],
}

fn default_schema() -> u32 {
    1
}

/// Schema version this build reads and writes.
pub const MAP_SCHEMA_VERSION: u32 = 1;

impl GridMap {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        occupancy: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("grid must be at least 1x1".into()));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::InvalidArgument(format!("resolution {resolution} must be > 0")));
        }
        if occupancy.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "occupancy has {} cells, expected {}",
                occupancy.len(),
                width * height
            )));
        }
        Ok(Self { width, height, resolution, origin, occupancy })
    }

    /// Parses the on-disk format: a one-line JSON header followed by one
    /// text row per grid row (`#` occupied, `.` free). Row 0 of the text is
    /// grid row 0.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("map file is empty".into()))?;
        let header: MapHeader = serde_json::from_str(header_line).map_err(|e| {
            Error::InvalidArgument(format!("map header (line 1): {e}"))
        })?;
        if header.schema != MAP_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported map schema {} (this build reads {MAP_SCHEMA_VERSION})",
                header.schema
            )));
        }
        let mut occupancy = Vec::new();
        let mut width = None;
        let mut height = 0usize;
        for (i, line) in lines.enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let row: Vec<bool> = line
                .chars()
                .map(|c| match c {
                    '#' => Ok(true),
                    '.' => Ok(false),
                    other => Err(Error::InvalidArgument(format!(
                        "map line {}: unexpected character {other:?}",
                        i + 2
                    ))),
                })
                .collect::<Result<_>>()?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::InvalidArgument(format!(
                        "map line {}: row width {} does not match {}",
                        i + 2,
                        row.len(),
                        w
                    )));
                }
                _ => {}
            }
            occupancy.extend(row);
            height += 1;
        }
        let width = width.ok_or_else(|| Error::InvalidArgument("map has no rows".into()))?;
        Self::new(width, height, header.resolution, (header.origin[0], header.origin[1]), occupancy)
    }

    /// Serializes back to the on-disk format.
    pub fn to_text(&self) -> String {
        let header = MapHeader {
            schema: MAP_SCHEMA_VERSION,
            resolution: self.resolution,
            origin: [self.origin.0, self.origin.1],
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.is_occupied(Cell::new(x, y)) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    pub fn is_occupied(&self, cell: Cell) -> bool {
        self.occupancy[cell.y * self.width + cell.x]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.is_occupied(cell)
    }

    pub(crate) fn index(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }

    /// World coordinates of a cell center.
    pub fn cell_center(&self, cell: Cell) -> (f64, f64) {
        (
            self.origin.0 + (cell.x as f64 + 0.5) * self.resolution,
            self.origin.1 + (cell.y as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing a world point, if inside the map.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<Cell> {
        let cx = (x - self.origin.0) / self.resolution;
        let cy = (y - self.origin.1) / self.resolution;
        if cx < 0.0 || cy < 0.0 {
            return None;
        }
        let cell = Cell::new(cx as usize, cy as usize);
        self.in_bounds(cell).then_some(cell)
    }
}

/// One waypoint of a time-parameterized world-frame path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedWaypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// A time-parameterized polyline: the planner output the base controller
/// consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedPath {
    waypoints: Vec<TimedWaypoint>,
}

impl TimedPath {
    pub fn new(waypoints: Vec<TimedWaypoint>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::InvalidArgument("timed path needs at least one waypoint".into()));
        }
        for pair in waypoints.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::InvalidArgument(
                    "timed path timestamps must strictly increase".into(),
                ));
            }
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[TimedWaypoint] {
        &self.waypoints
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].t
    }

    pub fn end(&self) -> TimedWaypoint {
        self.waypoints[self.waypoints.len() - 1]
    }

    /// Reference pose at time `t`: linear interpolation of position along
    /// the active segment, with that segment's heading. Clamps outside the
    /// time span.
    pub fn interpolate(&self, t: f64) -> TimedWaypoint {
        let first = self.waypoints[0];
        let last = self.waypoints[self.waypoints.len() - 1];
        if t <= first.t {
            return TimedWaypoint { t, ..first };
        }
        if t >= last.t {
            return TimedWaypoint { t, ..last };
        }
        let seg_end = self.waypoints.partition_point(|w| w.t <= t);
        let a = self.waypoints[seg_end - 1];
        let b = self.waypoints[seg_end];
        let s = (t - a.t) / (b.t - a.t);
        TimedWaypoint {
            t,
            x: a.x + s * (b.x - a.x),
            y: a.y + s * (b.y - a.y),
            heading: a.heading,
        }
    }

    /// Same path with the final waypoint heading replaced, used to demand a
    /// specific arrival heading from the follower.
    pub fn with_final_heading(mut self, heading: f64) -> Self {
        if let Some(last) = self.waypoints.last_mut() {
            last.heading = heading;
        }
        self
    }

    /// CSV export with header `t,x,y,heading`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,x,y,heading")?;
        for w in &self.waypoints {
            writeln!(out, "{},{},{},{}", w.t, w.x, w.y, w.heading)?;
        }
        Ok(())
    }
}

/// Converts a found plan into a constant-speed timed path through the cell
/// centers. Waypoint headings point along their outgoing segment; the final
/// waypoint keeps the last segment heading.
pub fn time_parameterize(result: &PlanResult, map: &GridMap, speed: f64) -> Result<TimedPath> {
    if !result.found || result.path.is_empty() {
        return Err(Error::InvalidArgument("cannot time-parameterize an empty path".into()));
    }
    if !(speed.is_finite() && speed > 0.0) {
        return Err(Error::InvalidArgument(format!("speed {speed} must be > 0")));
    }
    let points: Vec<(f64, f64)> = result.path.iter().map(|c| map.cell_center(*c)).collect();
    let mut waypoints = Vec::with_capacity(points.len());
    let mut t = 0.0;
    for (i, p) in points.iter().enumerate() {
        let heading = if i + 1 < points.len() {
            let (nx, ny) = points[i + 1];
            (ny - p.1).atan2(nx - p.0)
        } else if let Some(prev) = waypoints.last() {
            let prev: &TimedWaypoint = prev;
            prev.heading
        } else {
            0.0
        };
        if i > 0 {
            let (px, py) = points[i - 1];
            t += ((p.0 - px).hypot(p.1 - py)) / speed;
        }
        waypoints.push(TimedWaypoint { t, x: p.0, y: p.1, heading });
    }
    TimedPath::new(waypoints)
}
