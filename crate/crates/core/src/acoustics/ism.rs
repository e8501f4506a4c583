//! Image-source enumeration and impulse-train synthesis for shoebox rooms.
//!
//! An image is indexed by a lattice cell `m` and a parity `p` per axis; its
//! coordinate along x is `(1 - 2 p) xs + 2 m L`, and it has struck the
//! `x = 0` wall `|m - p|` times and the `x = L` wall `|m|` times.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::material::NUM_BANDS;
use super::room::{distance, Point, Room};

/// One image source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: Point,
    /// Reflection count per surface in the canonical surface order.
    pub hits: [u32; 6],
}

impl ImageSource {
    pub fn order(&self) -> u32 {
        self.hits.iter().sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct AxisImage {
    coord: f64,
    hits_low: u32,
    hits_high: u32,
    gain: [f64; NUM_BANDS],
}

/// All images along one axis whose coordinate lies within `reach` of `mic`.
/// `beta` holds the band reflection coefficients of the low and high wall.
fn axis_images(
    src: f64,
    len: f64,
    mic: f64,
    reach: f64,
    max_order: u32,
    beta: [[f64; NUM_BANDS]; 2],
) -> Vec<AxisImage> {
    let by_reach = ((reach + len) / (2.0 * len)).ceil() + 1.0;
    let m_max = by_reach.min(f64::from(max_order) + 1.0) as i64;
    let mut out = Vec::new();
    for m in -m_max..=m_max {
        for p in 0..=1i64 {
            let coord = (1 - 2 * p) as f64 * src + 2.0 * m as f64 * len;
            let hits_low = (m - p).unsigned_abs() as u32;
            let hits_high = m.unsigned_abs() as u32;
            if hits_low + hits_high > max_order || (coord - mic).abs() > reach {
                continue;
            }
            let gain = std::array::from_fn(|b| {
                beta[0][b].powi(hits_low as i32) * beta[1][b].powi(hits_high as i32)
            });
            out.push(AxisImage {
                coord,
                hits_low,
                hits_high,
                gain,
            });
        }
    }
    out
}

/// Enumerates image sources of total reflection order `<= max_order` whose
/// distance to `mic` does not exceed `max_distance`.
pub fn image_sources(
    room: &Room,
    source: &Point,
    mic: &Point,
    max_order: u32,
    max_distance: f64,
) -> Vec<ImageSource> {
    let mut out = Vec::new();
    for_each_image(room, source, mic, max_order, max_distance, |img, _, _| {
        out.push(img)
    });
    out
}

fn for_each_image(
    room: &Room,
    source: &Point,
    mic: &Point,
    max_order: u32,
    max_distance: f64,
    mut f: impl FnMut(ImageSource, f64, [f64; NUM_BANDS]),
) {
    let dims = room.dims();
    let beta: [[f64; NUM_BANDS]; 6] = std::array::from_fn(|s| room.materials[s].reflection());
    let axes: [Vec<AxisImage>; 3] = std::array::from_fn(|i| {
        axis_images(
            source[i],
            dims[i],
            mic[i],
            max_distance,
            max_order,
            [beta[2 * i], beta[2 * i + 1]],
        )
    });
    let max_d2 = max_distance * max_distance;
    for x in &axes[0] {
        let dx2 = (x.coord - mic[0]).powi(2);
        let ox = x.hits_low + x.hits_high;
        for y in &axes[1] {
            let dxy2 = dx2 + (y.coord - mic[1]).powi(2);
            let oxy = ox + y.hits_low + y.hits_high;
            if dxy2 > max_d2 || oxy > max_order {
                continue;
            }
            for z in &axes[2] {
                let d2 = dxy2 + (z.coord - mic[2]).powi(2);
                if d2 > max_d2 || oxy + z.hits_low + z.hits_high > max_order {
                    continue;
                }
                let img = ImageSource {
                    position: [x.coord, y.coord, z.coord],
                    hits: [
                        x.hits_low,
                        x.hits_high,
                        y.hits_low,
                        y.hits_high,
                        z.hits_low,
                        z.hits_high,
                    ],
                };
                let gain = std::array::from_fn(|b| x.gain[b] * y.gain[b] * z.gain[b]);
                f(img, d2.sqrt(), gain);
            }
        }
    }
}

/// Half-length of the fractional-delay kernel; 81 taps in total.
pub const SINC_HALF_TAPS: usize = 40;
/// Half-length of the kernel used for the dense late tail.
pub const LATE_SINC_HALF_TAPS: usize = 8;
/// Images arriving this long after the direct sound use the short kernel.
/// Past this point reflections are dense and arrive well after the 50 ms
/// clarity boundary, so the long kernel's sharper band edge buys nothing.
pub const LATE_AFTER_S: f64 = 0.08;
/// Fractional-delay resolution of the tabulated kernel.
const SINC_PHASES: usize = 512;

/// Hann-windowed sinc kernels with `half` taps either side, tabulated at
/// `SINC_PHASES` fractional offsets. Row `q` holds the taps for a delay of
/// `n0 + q / SINC_PHASES` evaluated at `n0 - half ..= n0 + half`.
fn build_table(half: usize) -> Vec<Vec<f64>> {
    (0..SINC_PHASES)
        .map(|q| {
            let frac = q as f64 / SINC_PHASES as f64;
            (0..=2 * half)
                .map(|j| windowed_sinc(j as f64 - half as f64 - frac, half))
                .collect()
        })
        .collect()
}

fn sinc_table(half: usize) -> &'static [Vec<f64>] {
    static LONG: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    static SHORT: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    let cell = if half == SINC_HALF_TAPS { &LONG } else { &SHORT };
    cell.get_or_init(|| build_table(half))
}

fn windowed_sinc(x: f64, half_taps: usize) -> f64 {
    let half = half_taps as f64 + 1.0;
    if x.abs() >= half {
        return 0.0;
    }
    let w = 0.5 * (1.0 + (PI * x / half).cos());
    let s = if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    };
    w * s
}

/// Per-band impulse trains, one buffer of `len` samples per octave band.
pub struct BandTrains {
    pub bands: [Vec<f64>; NUM_BANDS],
    pub image_count: usize,
}

/// Renders per-band impulse trains for all images with delay below `len`
/// samples. Each image contributes `prod(beta^hits) / (4 pi r)` in every
/// band, placed with a windowed-sinc fractional delay (81 taps early,
/// 17 taps in the late tail).
pub fn render_band_trains(
    room: &Room,
    source: &Point,
    mic: &Point,
    max_order: u32,
    len: usize,
    sample_rate: f64,
    speed_of_sound: f64,
) -> BandTrains {
    let (early, late) = (sinc_table(SINC_HALF_TAPS), sinc_table(LATE_SINC_HALF_TAPS));
    let late_distance = distance(source, mic) + LATE_AFTER_S * speed_of_sound;
    let max_distance = (len as f64 - 1.0) / sample_rate * speed_of_sound;
    let mut bands: [Vec<f64>; NUM_BANDS] = std::array::from_fn(|_| vec![0.0; len]);
    let mut count = 0usize;

    for_each_image(room, source, mic, max_order, max_distance, |_, r, gain| {
        let r = r.max(1e-3);
        let tau = r / speed_of_sound * sample_rate;
        let mut n0 = tau.floor() as i64;
        let mut q = ((tau - n0 as f64) * SINC_PHASES as f64).round() as usize;
        if q == SINC_PHASES {
            q = 0;
            n0 += 1;
        }
        let spread = 1.0 / (4.0 * PI * r);
        let (table, half) = if r > late_distance {
            (late, LATE_SINC_HALF_TAPS)
        } else {
            (early, SINC_HALF_TAPS)
        };
        let kernel = &table[q];
        let start = n0 - half as i64;
        let lo = (-start).max(0) as usize;
        let hi = ((len as i64 - start).min(kernel.len() as i64)).max(0) as usize;
        if lo >= hi {
            return;
        }
        count += 1;
        let base = (start + lo as i64) as usize;
        let taps = &kernel[lo..hi];
        for b in 0..NUM_BANDS {
            let a = gain[b] * spread;
            let dst = &mut bands[b][base..base + taps.len()];
            for (d, &k) in dst.iter_mut().zip(taps) {
                *d += a * k;
            }
        }
    });

    BandTrains {
        bands,
        image_count: count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::Material;

    fn room(dims: [f64; 3]) -> Room {
        let m = Material::uniform("m", 0.3).unwrap();
        Room::new("r", dims, std::array::from_fn(|_| m.clone())).unwrap()
    }

    #[test]
    fn first_order_image_across_x0_is_mirrored() {
        let r = room([5.0, 4.0, 3.0]);
        let src = [1.0, 2.0, 1.5];
        let imgs = image_sources(&r, &src, &[3.0, 2.0, 1.5], 1, 1e9);
        assert_eq!(imgs.len(), 7);
        let across_x0 = imgs
            .iter()
            .find(|i| i.hits == [1, 0, 0, 0, 0, 0])
            .unwrap();
        assert_eq!(across_x0.position, [-1.0, 2.0, 1.5]);
        let across_xl = imgs
            .iter()
            .find(|i| i.hits == [0, 1, 0, 0, 0, 0])
            .unwrap();
        assert_eq!(across_xl.position, [9.0, 2.0, 1.5]);
    }

    #[test]
    fn image_counts_per_order() {
        // Number of lattice images of order exactly k in 3-D: 4k^2 + 2 (k >= 1).
        let r = room([5.0, 4.0, 3.0]);
        let imgs = image_sources(&r, &[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0], 5, 1e9);
        for k in 0..=5u32 {
            let n = imgs.iter().filter(|i| i.order() == k).count();
            let expected = if k == 0 { 1 } else { 4 * k * k + 2 } as usize;
            assert_eq!(n, expected, "order {k}");
        }
    }

    #[test]
    fn integer_delay_kernel_is_a_delta() {
        for half in [SINC_HALF_TAPS, LATE_SINC_HALF_TAPS] {
            let k = &sinc_table(half)[0];
            assert_eq!(k.len(), 2 * half + 1);
            for (j, v) in k.iter().enumerate() {
                let expected = if j == half { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-12, "tap {j}: {v}");
            }
        }
    }

    #[test]
    fn half_sample_kernel_is_symmetric() {
        let k = &sinc_table(SINC_HALF_TAPS)[SINC_PHASES / 2];
        assert!((k[SINC_HALF_TAPS] - k[SINC_HALF_TAPS + 1]).abs() < 1e-12);
        assert!((k[SINC_HALF_TAPS] - 2.0 / PI).abs() < 1e-3);
    }

    /// Mirrors the source across walls one reflection at a time, recording
    /// how often each wall was used.
    fn mirror_bfs(dims: [f64; 3], src: Point, depth: u32) -> Vec<(Point, [u32; 6])> {
        let mut frontier = vec![(src, [0u32; 6], usize::MAX)];
        let mut all = frontier.iter().map(|(p, h, _)| (*p, *h)).collect::<Vec<_>>();
        for _ in 0..depth {
            let mut next = Vec::new();
            for (p, h, last) in &frontier {
                for wall in 0..6 {
                    if wall == *last {
                        continue;
                    }
                    let axis = wall / 2;
                    let mut q = *p;
                    q[axis] = if wall % 2 == 0 { -q[axis] } else { 2.0 * dims[axis] - q[axis] };
                    let mut hits = *h;
                    hits[wall] += 1;
                    next.push((q, hits, wall));
                }
            }
            all.extend(next.iter().map(|(p, h, _)| (*p, *h)));
            frontier = next;
        }
        all
    }

    fn key(p: &Point) -> [i64; 3] {
        p.map(|v| (v * 1e6).round() as i64)
    }

    #[test]
    fn lattice_matches_brute_force_mirroring_up_to_order_three() {
        let dims = [5.3, 4.1, 3.2];
        let r = room(dims);
        let src = [1.1, 2.7, 0.9];
        let lattice = image_sources(&r, &src, &[3.0, 2.0, 1.5], 3, 1e9);

        let mut brute = std::collections::BTreeMap::new();
        for (p, h) in mirror_bfs(dims, src, 3) {
            let order: u32 = h.iter().sum();
            let e = brute.entry(key(&p)).or_insert((h, order));
            if order < e.1 {
                *e = (h, order);
            }
        }
        assert_eq!(lattice.len(), brute.len());
        for img in &lattice {
            let (hits, _) = brute.get(&key(&img.position)).expect("image missing");
            assert_eq!(*hits, img.hits);
        }
    }
}
