use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::material::{Material, MaterialTable, NUM_BANDS};
use crate::{Error, Result};

/// Sampling ranges for room dimensions, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomRanges {
    pub length_m: (f64, f64),
    pub width_m: (f64, f64),
    pub height_m: (f64, f64),
}

impl Default for RoomRanges {
    fn default() -> Self {
        RoomRanges {
            length_m: (3.0, 10.0),
            width_m: (3.0, 10.0),
            height_m: (3.0, 5.0),
        }
    }
}

/// Minimum distance of source and microphone from every wall and from
/// each other, meters.
pub const MIN_CLEARANCE_M: f64 = 0.5;

/// A rectangular (shoebox) room.
///
/// Surfaces are indexed `[x=0, x=L, y=0, y=W, z=0 (floor), z=H (ceiling)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub room_id: String,
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub materials: [Material; 6],
}

pub type Point = [f64; 3];

impl Room {
    pub fn new(
        room_id: impl Into<String>,
        dims: [f64; 3],
        materials: [Material; 6],
    ) -> Result<Self> {
        let room = Room {
            room_id: room_id.into(),
            length_m: dims[0],
            width_m: dims[1],
            height_m: dims[2],
            materials,
        };
        if dims.iter().any(|d| !d.is_finite() || *d <= 2.0 * MIN_CLEARANCE_M) {
            return Err(Error::InvalidRoom(format!(
                "dimensions {dims:?} leave no room for {MIN_CLEARANCE_M} m clearance"
            )));
        }
        for m in &room.materials {
            m.validate()?;
        }
        Ok(room)
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.length_m, self.width_m, self.height_m]
    }

    pub fn volume(&self) -> f64 {
        self.length_m * self.width_m * self.height_m
    }

    /// Areas of the six surfaces in the canonical order.
    pub fn surface_areas(&self) -> [f64; 6] {
        let [l, w, h] = self.dims();
        [w * h, w * h, l * h, l * h, l * w, l * w]
    }

    pub fn surface_area(&self) -> f64 {
        self.surface_areas().iter().sum()
    }

    /// Area-weighted absorption per band.
    pub fn mean_absorption_per_band(&self) -> [f64; NUM_BANDS] {
        let areas = self.surface_areas();
        let total: f64 = areas.iter().sum();
        let mut out = [0.0; NUM_BANDS];
        for (m, a) in self.materials.iter().zip(areas) {
            for (o, alpha) in out.iter_mut().zip(m.absorption) {
                *o += a * alpha / total;
            }
        }
        out
    }

    pub fn material_names(&self) -> [String; 6] {
        self.materials.clone().map(|m| m.name)
    }

    /// Distance of `p` to the closest wall (negative when outside).
    pub fn boundary_distance(&self, p: &Point) -> f64 {
        let dims = self.dims();
        (0..3)
            .map(|i| p[i].min(dims[i] - p[i]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Draws a room with uniform dimensions in `ranges` and six materials drawn
/// uniformly (with replacement) from `table`.
pub fn sample_room<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &RoomRanges,
    table: &MaterialTable,
    room_id: impl Into<String>,
) -> Result<Room> {
    let mut u = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let dims = [u(ranges.length_m), u(ranges.width_m), u(ranges.height_m)];
    let materials: [Material; 6] = std::array::from_fn(|_| {
        table
            .materials
            .choose(rng)
            .expect("material table is non-empty")
            .clone()
    });
    Room::new(room_id, dims, materials)
}

/// Places source and microphone uniformly inside the room, at least
/// [`MIN_CLEARANCE_M`] from every wall and from each other, by rejection.
pub fn place_endpoints<R: Rng + ?Sized>(room: &Room, rng: &mut R) -> Result<(Point, Point)> {
    let dims = room.dims();
    assert!(
        dims.iter().all(|d| *d > 2.0 * MIN_CLEARANCE_M),
        "room {} cannot host endpoints",
        room.room_id
    );
    let draw = |rng: &mut R| -> Point {
        std::array::from_fn(|i| rng.gen_range(MIN_CLEARANCE_M..=dims[i] - MIN_CLEARANCE_M))
    };
    for _ in 0..10_000 {
        let s = draw(rng);
        let m = draw(rng);
        if distance(&s, &m) >= MIN_CLEARANCE_M {
            return Ok((s, m));
        }
    }
    Err(Error::Placement(format!(
        "no valid pair found in room {} ({dims:?})",
        room.room_id
    )))
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
