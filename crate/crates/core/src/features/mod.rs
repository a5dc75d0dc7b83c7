//! Per-object morphology, intensity and correlation features.

mod table;

pub use table::{column_index, extract_all, FeatureRow, FeatureTable, ObjectLevel, FEATURE_COLUMNS};

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{mask_to_bbox, BinaryMask, Channel};

/// Cauchy–Crofton perimeter estimate from boundary crossings in four directions.
///
/// Counts 0/1 transitions of the zero-padded mask along rows, columns and both
/// diagonals. Unlike a plain count of exposed pixel edges, this converges to the
/// Euclidean length of smooth contours, so discs score circularity near 1.
pub fn crofton_perimeter(m: &BinaryMask) -> f64 {
    let (w, h) = (m.width() as isize, m.height() as isize);
    let at = |x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h && m.get(x as usize, y as usize);
    let (mut horizontal, mut vertical, mut diagonal) = (0usize, 0usize, 0usize);
    for y in -1..h {
        for x in -1..w {
            let here = at(x, y);
            horizontal += (here != at(x + 1, y)) as usize;
            vertical += (here != at(x, y + 1)) as usize;
            diagonal += (here != at(x + 1, y + 1)) as usize;
            diagonal += (at(x, y + 1) != at(x + 1, y)) as usize;
        }
    }
    PI / 8.0 * (horizontal as f64 + vertical as f64 + diagonal as f64 * FRAC_1_SQRT_2)
}

/// Long over short side of the bounding box (≥ 1).
pub fn bbox_aspect_ratio(m: &BinaryMask) -> Result<f64> {
    let b = mask_to_bbox(m)?;
    let (a, c) = (b.width() as f64, b.height() as f64);
    Ok(a.max(c) / a.min(c))
}

/// `4πA / P²`.
pub fn circularity(area: usize, perimeter: f64) -> f64 {
    if perimeter <= 0.0 {
        return 0.0;
    }
    4.0 * PI * area as f64 / (perimeter * perimeter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatures {
    pub area: usize,
    pub perimeter: f64,
    pub equivalent_diameter: f64,
    pub eccentricity: f64,
    pub solidity: f64,
    pub extent: f64,
    pub aspect_ratio: f64,
    pub circularity: f64,
    pub major_axis_length: f64,
    pub minor_axis_length: f64,
}

/// Central second moments `(μ20, μ02, μ11)` of the pixel squares.
///
/// Each pixel is treated as a unit square, which adds 1/12 to both axial
/// moments; a one-pixel-wide strip therefore keeps a nonzero minor axis.
fn second_moments(m: &BinaryMask) -> Result<(f64, f64, f64)> {
    let (cx, cy) = m.centroid()?;
    let n = m.area() as f64;
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for (x, y) in m.pixels() {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        xx += dx * dx;
        yy += dy * dy;
        xy += dx * dy;
    }
    Ok((xx / n + 1.0 / 12.0, yy / n + 1.0 / 12.0, xy / n))
}

/// Area of the convex hull of all pixel corners.
pub fn convex_hull_area(m: &BinaryMask) -> f64 {
    // Per row only the outermost pixels can contribute hull corners.
    let mut corners: Vec<(i64, i64)> = Vec::new();
    for y in 0..m.height() {
        let row = (0..m.width()).filter(|x| m.get(*x, y));
        let (mut lo, mut hi) = (None, None);
        for x in row {
            lo.get_or_insert(x);
            hi = Some(x);
        }
        if let (Some(lo), Some(hi)) = (lo, hi) {
            let (y0, y1) = (y as i64, y as i64 + 1);
            corners.extend([(lo as i64, y0), (lo as i64, y1), (hi as i64 + 1, y0), (hi as i64 + 1, y1)]);
        }
    }
    let hull = monotone_chain(corners);
    let twice: i64 = (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() as f64 / 2.0
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; returns the hull counter-clockwise without collinear points.
fn monotone_chain(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Morphology of one object.
pub fn region_props(m: &BinaryMask) -> Result<RegionFeatures> {
    if m.is_empty() {
        return Err(Error::EmptyMask);
    }
    let area = m.area();
    let bbox = mask_to_bbox(m)?;
    let perimeter = crofton_perimeter(m);
    let (mu20, mu02, mu11) = second_moments(m)?;
    let half_trace = (mu20 + mu02) / 2.0;
    let root = (((mu20 - mu02) / 2.0).powi(2) + mu11 * mu11).sqrt();
    let l1 = half_trace + root;
    let l2 = (half_trace - root).max(0.0);
    Ok(RegionFeatures {
        area,
        perimeter,
        equivalent_diameter: 2.0 * (area as f64 / PI).sqrt(),
        eccentricity: (1.0 - l2 / l1).max(0.0).sqrt(),
        solidity: area as f64 / convex_hull_area(m),
        extent: area as f64 / bbox.area() as f64,
        aspect_ratio: bbox_aspect_ratio(m)?,
        circularity: circularity(area, perimeter),
        major_axis_length: 4.0 * l1.sqrt(),
        minor_axis_length: 4.0 * l2.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn intensity_stats(m: &BinaryMask, channel: &Channel) -> Result<IntensityStats> {
    if m.dims() != channel.dims() {
        return Err(Error::DimensionMismatch(format!(
            "mask {:?} vs channel {:?}",
            m.dims(),
            channel.dims()
        )));
    }
    if m.is_empty() {
        return Err(Error::EmptyMask);
    }
    let values: Vec<f64> = m.pixels().map(|(x, y)| *channel.get(x, y) as f64).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(IntensityStats {
        mean,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        std: var.sqrt(),
    })
}

/// Pearson correlation of two channels over the mask; `None` when either
/// channel is constant there or the mask has fewer than two pixels.
pub fn correlation_feature(m: &BinaryMask, a: &Channel, b: &Channel) -> Result<Option<f64>> {
    if m.dims() != a.dims() || m.dims() != b.dims() {
        return Err(Error::DimensionMismatch("correlation inputs".into()));
    }
    if m.area() < 2 {
        return Ok(None);
    }
    let pairs: Vec<(f64, f64)> = m
        .pixels()
        .map(|(x, y)| (*a.get(x, y) as f64, *b.get(x, y) as f64))
        .collect();
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (va, vb) in &pairs {
        sab += (va - ma) * (vb - mb);
        saa += (va - ma) * (va - ma);
        sbb += (vb - mb) * (vb - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Raster;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, rw: usize, rh: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh)
    }

    fn disc(size: usize, c: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(size, size, |x, y| {
            (x as f64 - c).powi(2) + (y as f64 - c).powi(2) <= r * r
        })
    }

    fn rotate90(m: &BinaryMask) -> BinaryMask {
        let (w, h) = m.dims();
        BinaryMask::from_fn(h, w, |x, y| m.get(y, h - 1 - x))
    }

    #[test]
    fn square_features() {
        let f = region_props(&rect(20, 20, 5, 5, 10, 10)).unwrap();
        assert_eq!(f.area, 100);
        assert_eq!(f.extent, 1.0);
        assert_eq!(f.solidity, 1.0);
        assert_eq!(f.aspect_ratio, 1.0);
        assert_relative_eq!(f.eccentricity, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn strip_features_match_closed_form() {
        let f = region_props(&rect(12, 3, 1, 1, 10, 1)).unwrap();
        assert_eq!(f.aspect_ratio, 10.0);
        // Unit-square moments: λ1 = 100/12, λ2 = 1/12.
        assert_relative_eq!(f.eccentricity, (1.0f64 - 1.0 / 100.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(f.major_axis_length, 4.0 * (100.0f64 / 12.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(f.minor_axis_length, 4.0 * (1.0f64 / 12.0).sqrt(), epsilon = 1e-12);
        assert!((f.eccentricity - 0.995).abs() < 1e-3);
        assert_eq!(f.solidity, 1.0);
    }

    #[test]
    fn disc_circularity_is_near_one() {
        let f = region_props(&disc(50, 25.0, 20.0)).unwrap();
        assert!(f.circularity >= 0.9 && f.circularity <= 1.1, "{}", f.circularity);
        for r in [10.0, 15.0, 30.0] {
            let c = region_props(&disc(80, 40.0, r)).unwrap().circularity;
            assert!((0.9..=1.1).contains(&c), "r={r}: {c}");
        }
    }

    #[test]
    fn crofton_perimeter_of_square_tracks_its_length() {
        // A 10×10 square has perimeter 40; Crofton with 4 directions
        // underestimates axis-aligned edges by a bounded factor.
        let p = crofton_perimeter(&rect(20, 20, 5, 5, 10, 10));
        assert!((p - 40.0).abs() / 40.0 < 0.1, "{p}");
    }

    #[test]
    fn equivalent_diameter_round_trips_area() {
        for m in [disc(30, 15.0, 9.0), rect(9, 9, 1, 2, 3, 5)] {
            let f = region_props(&m).unwrap();
            assert!((f.equivalent_diameter.powi(2) * PI / 4.0 - f.area as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn l_shape_hull_and_solidity() {
        // L tromino: corners hull area = 3.5, area 3.
        let m = BinaryMask::from_pixels(3, 3, [(0, 0), (0, 1), (1, 0)]);
        assert_relative_eq!(convex_hull_area(&m), 3.5);
        assert_relative_eq!(region_props(&m).unwrap().solidity, 3.0 / 3.5);
    }

    #[test]
    fn empty_mask_errors() {
        let m = BinaryMask::empty(4, 4);
        assert!(matches!(region_props(&m), Err(Error::EmptyMask)));
        assert!(matches!(
            intensity_stats(&m, &Raster::filled(4, 4, 0.5)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn intensity_examples() {
        let c = Raster::filled(3, 3, 0.6f32);
        let s = intensity_stats(&BinaryMask::from_fn(3, 3, |_, _| true), &c).unwrap();
        assert_relative_eq!(s.mean, 0.6f32 as f64);
        assert_eq!(s.std, 0.0);
        let c = Raster::from_vec(2, 1, vec![0.2f32, 0.8]).unwrap();
        let s = intensity_stats(&BinaryMask::from_fn(2, 1, |_, _| true), &c).unwrap();
        assert_relative_eq!(s.mean, 0.5, epsilon = 1e-7);
        assert_relative_eq!(s.std, 0.3, epsilon = 1e-7);
        let one = BinaryMask::from_pixels(2, 1, [(1, 0)]);
        let s = intensity_stats(&one, &c).unwrap();
        assert_eq!((s.min, s.max, s.std), (s.mean, s.mean, 0.0));
    }

    #[test]
    fn correlation_examples() {
        let a = Raster::from_vec(3, 2, vec![0.1f32, 0.5, 0.3, 0.9, 0.7, 0.2]).unwrap();
        let inv = a.map(|v| 1.0 - v);
        let all = BinaryMask::from_fn(3, 2, |_, _| true);
        assert_relative_eq!(correlation_feature(&all, &a, &a).unwrap().unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(correlation_feature(&all, &a, &inv).unwrap().unwrap(), -1.0, epsilon = 1e-6);
        // Six pixels, hand computed: x = 1..6, y = (2,1,4,3,6,5).
        let x = Raster::from_vec(3, 2, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = Raster::from_vec(3, 2, vec![2.0f32, 1.0, 4.0, 3.0, 6.0, 5.0]).unwrap();
        // Sxy = 14.5, Sxx = Syy = 17.5 → r = 29/35.
        assert_relative_eq!(correlation_feature(&all, &x, &y).unwrap().unwrap(), 29.0 / 35.0, epsilon = 1e-12);
        let flat = Raster::filled(3, 2, 0.4f32);
        assert_eq!(correlation_feature(&all, &a, &flat).unwrap(), None);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (2usize..10, 2usize..10)
            .prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(any::<bool>(), w * h)))
            .prop_filter_map("nonempty", |(w, h, bits)| {
                let m = BinaryMask::from_bits(w, h, bits).unwrap();
                (!m.is_empty()).then_some(m)
            })
    }

    /// Naive solidity oracle: hull of every corner of every pixel, gift wrapping.
    fn naive_hull_area(m: &BinaryMask) -> f64 {
        let mut pts: Vec<(i64, i64)> = Vec::new();
        for (x, y) in m.pixels() {
            let (x, y) = (x as i64, y as i64);
            pts.extend([(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)]);
        }
        pts.sort_unstable();
        pts.dedup();
        if pts.len() < 3 {
            return 0.0;
        }
        let start = pts[0];
        let mut hull = vec![start];
        let mut cur = start;
        loop {
            let mut cand = if pts[0] == cur { pts[1] } else { pts[0] };
            for &p in &pts {
                if p == cur {
                    continue;
                }
                let c = cross(cur, cand, p);
                let farther = (p.0 - cur.0).pow(2) + (p.1 - cur.1).pow(2)
                    > (cand.0 - cur.0).pow(2) + (cand.1 - cur.1).pow(2);
                if c < 0 || (c == 0 && farther) {
                    cand = p;
                }
            }
            if cand == start {
                break;
            }
            hull.push(cand);
            cur = cand;
        }
        let twice: i64 = (0..hull.len())
            .map(|i| {
                let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum();
        twice.abs() as f64 / 2.0
    }

    proptest! {
        #[test]
        fn hull_matches_gift_wrapping(m in arb_mask()) {
            prop_assert_eq!(convex_hull_area(&m), naive_hull_area(&m));
        }

        #[test]
        fn bounded_features(m in arb_mask()) {
            let f = region_props(&m).unwrap();
            prop_assert!(f.solidity > 0.0 && f.solidity <= 1.0);
            prop_assert!(f.extent > 0.0 && f.extent <= 1.0);
            prop_assert!(f.aspect_ratio >= 1.0);
            prop_assert!((0.0..1.0).contains(&f.eccentricity));
            prop_assert!(f.minor_axis_length <= f.major_axis_length);
        }

        #[test]
        fn rotation_invariance(m in arb_mask()) {
            let a = region_props(&m).unwrap();
            let b = region_props(&rotate90(&m)).unwrap();
            prop_assert_eq!(a.area, b.area);
            prop_assert_eq!(a.solidity, b.solidity);
            prop_assert_eq!(a.equivalent_diameter, b.equivalent_diameter);
            prop_assert!((a.eccentricity - b.eccentricity).abs() < 1e-9);
        }

        #[test]
        fn intensity_matches_naive_loop(m in arb_mask(), seed in any::<u64>()) {
            let (w, h) = m.dims();
            let mut s = seed;
            let c = Raster::from_fn(w, h, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 40) as f32 / (1u64 << 24) as f32
            });
            let got = intensity_stats(&m, &c).unwrap();
            let (mut n, mut sum, mut lo, mut hi) = (0.0f64, 0.0f64, f64::INFINITY, f64::NEG_INFINITY);
            for y in 0..h {
                for x in 0..w {
                    if m.get(x, y) {
                        let v = *c.get(x, y) as f64;
                        n += 1.0;
                        sum += v;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            let mean = sum / n;
            let mut ss = 0.0;
            for y in 0..h {
                for x in 0..w {
                    if m.get(x, y) {
                        let d = *c.get(x, y) as f64 - mean;
                        ss += d * d;
                    }
                }
            }
            prop_assert_eq!(got.mean, mean);
            prop_assert_eq!(got.min, lo);
            prop_assert_eq!(got.max, hi);
            prop_assert_eq!(got.std, (ss / n).sqrt());
        }

        #[test]
        fn doubling_scale_on_discs(r in 10.0f64..30.0) {
            let small = region_props(&disc(72, 36.0, r)).unwrap();
            let big = region_props(&disc(144, 72.0, 2.0 * r)).unwrap();
            let area_ratio = big.area as f64 / small.area as f64;
            let perim_ratio = big.perimeter / small.perimeter;
            prop_assert!((area_ratio / 4.0 - 1.0).abs() < 0.05, "area ratio {}", area_ratio);
            prop_assert!((perim_ratio / 2.0 - 1.0).abs() < 0.05, "perimeter ratio {}", perim_ratio);
        }
    }
}
