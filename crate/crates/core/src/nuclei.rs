//! Nucleus detection: automatic masks on the nucleus channel, then removal of
//! shape outliers (debris, streaks, merged conglomerates).

use serde::{Deserialize, Serialize};

use crate::backend::SegmentationBackend;
use crate::error::{Error, Result};
use crate::features::{bbox_aspect_ratio, circularity, crofton_perimeter};
use crate::imaging::{mask_to_bbox, BinaryMask, BoundingBox, MultiChannelImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub area: usize,
    /// Long over short bounding-box side.
    pub aspect_ratio: f64,
    /// `4πA/P²` with the Crofton perimeter.
    pub circularity: f64,
}

impl ShapeStats {
    pub fn of(m: &BinaryMask) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(Self {
            area: m.area(),
            aspect_ratio: bbox_aspect_ratio(m)?,
            circularity: circularity(m.area(), crofton_perimeter(m)),
        })
    }

    fn values(&self) -> [f64; 3] {
        [self.area as f64, self.aspect_ratio, self.circularity]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NucleusRecord {
    /// 1-based, in row-major order of the centroid.
    pub id: u32,
    pub mask: BinaryMask,
    pub center: (f64, f64),
    pub stats: ShapeStats,
}

impl NucleusRecord {
    pub fn bbox(&self) -> BoundingBox {
        mask_to_bbox(&self.mask).expect("nucleus masks are nonempty")
    }

    /// The pixel containing the centroid.
    pub fn center_pixel(&self) -> (usize, usize) {
        (self.center.0.round() as usize, self.center.1.round() as usize)
    }
}

pub fn compute_center(m: &BinaryMask) -> Result<(f64, f64)> {
    m.centroid()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Default outlier distance, in standard deviations from the median.
pub const SHAPE_OUTLIER_SDS: f64 = 2.0;

/// Indices of the candidates kept by the outlier rule: a candidate is dropped
/// if any of its statistics lies more than `k` population standard deviations
/// from that statistic's median. Populations of two or fewer are kept whole.
pub fn shape_inliers(stats: &[ShapeStats], k: f64) -> Vec<usize> {
    let n = stats.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut keep = vec![true; n];
    for s in 0..3 {
        let values: Vec<f64> = stats.iter().map(|st| st.values()[s]).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let med = median(&sorted);
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for (i, v) in values.iter().enumerate() {
            if (v - med).abs() > k * sd {
                keep[i] = false;
            }
        }
    }
    (0..n).filter(|i| keep[*i]).collect()
}

pub fn filter_by_shape(candidates: Vec<(BinaryMask, ShapeStats)>) -> Vec<(BinaryMask, ShapeStats)> {
    let stats: Vec<ShapeStats> = candidates.iter().map(|c| c.1).collect();
    let keep = shape_inliers(&stats, SHAPE_OUTLIER_SDS);
    let mut keep = keep.into_iter().peekable();
    candidates
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(c)
            } else {
                None
            }
        })
        .collect()
}

/// Runs automatic mask generation on the nucleus channel and keeps shape inliers.
pub fn detect_nuclei(
    image: &MultiChannelImage,
    backend: &dyn SegmentationBackend,
) -> Result<Vec<NucleusRecord>> {
    let channel = image.nucleus_channel()?;
    let mut candidates = Vec::new();
    for r in backend.generate_masks_auto(channel)? {
        if r.mask.is_empty() {
            continue;
        }
        let stats = ShapeStats::of(&r.mask)?;
        candidates.push((r.mask, stats));
    }
    let mut records: Vec<NucleusRecord> = filter_by_shape(candidates)
        .into_iter()
        .map(|(mask, stats)| {
            let center = compute_center(&mask)?;
            Ok(NucleusRecord {
                id: 0,
                mask,
                center,
                stats,
            })
        })
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| {
        a.center
            .1
            .total_cmp(&b.center.1)
            .then(a.center.0.total_cmp(&b.center.0))
    });
    for (i, r) in records.iter_mut().enumerate() {
        r.id = i as u32 + 1;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::OracleBackend;
    use crate::imaging::{ChannelRole, Raster};
    use proptest::prelude::*;

    fn stats_with_area(area: usize) -> ShapeStats {
        ShapeStats {
            area,
            aspect_ratio: 1.0,
            circularity: 0.95,
        }
    }

    fn nucleus_image(channel: Raster<f32>) -> MultiChannelImage {
        MultiChannelImage::new(vec![channel], vec![ChannelRole::Nucleus]).unwrap()
    }

    fn paint_disc(c: &mut Raster<f32>, cx: usize, cy: usize, r: f64) {
        for y in 0..c.height() {
            for x in 0..c.width() {
                if (x as f64 - cx as f64).powi(2) + (y as f64 - cy as f64).powi(2) <= r * r {
                    *c.get_mut(x, y) = 0.9;
                }
            }
        }
    }

    #[test]
    fn identical_population_is_kept() {
        let s = vec![stats_with_area(100); 5];
        assert_eq!(shape_inliers(&s, 2.0), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn large_area_outlier_is_dropped() {
        let areas = [100, 102, 98, 101, 99, 400];
        let s: Vec<_> = areas.iter().map(|a| stats_with_area(*a)).collect();
        // Independent check of the arithmetic: median 100.5, population SD ≈ 111.8.
        let mean = areas.iter().sum::<usize>() as f64 / 6.0;
        let sd = (areas.iter().map(|a| (*a as f64 - mean).powi(2)).sum::<f64>() / 6.0).sqrt();
        assert!((sd - 111.8).abs() < 0.05);
        assert!(299.5 > 2.0 * sd && 2.0 < 2.0 * sd);
        assert_eq!(shape_inliers(&s, 2.0), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn tiny_populations_are_not_filtered() {
        assert_eq!(shape_inliers(&[stats_with_area(5)], 2.0), vec![0]);
        assert_eq!(
            shape_inliers(&[stats_with_area(5), stats_with_area(5000)], 2.0),
            vec![0, 1]
        );
    }

    #[test]
    fn center_examples() {
        let single = BinaryMask::from_pixels(8, 8, [(3, 4)]);
        assert_eq!(compute_center(&single).unwrap(), (3.0, 4.0));
        let block = BinaryMask::from_pixels(4, 4, [(0, 0), (1, 0), (0, 1), (1, 1)]);
        assert_eq!(compute_center(&block).unwrap(), (0.5, 0.5));
        let l = BinaryMask::from_pixels(4, 4, [(0, 0), (0, 1), (1, 0)]);
        let (x, y) = compute_center(&l).unwrap();
        assert!((x - 1.0 / 3.0).abs() < 1e-12 && (y - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(compute_center(&BinaryMask::empty(2, 2)), Err(Error::EmptyMask)));
    }

    #[test]
    fn blank_channel_has_no_nuclei() {
        let img = nucleus_image(Raster::filled(32, 32, 0.05));
        assert!(detect_nuclei(&img, &OracleBackend::default()).unwrap().is_empty());
    }

    const DISC_CENTERS: [(usize, usize); 5] = [(15, 15), (50, 12), (80, 20), (20, 60), (60, 55)];

    #[test]
    fn equal_discs_are_detected_at_their_centers() {
        let mut c = Raster::filled(100, 80, 0.05f32);
        for (x, y) in DISC_CENTERS {
            paint_disc(&mut c, x, y, 5.0);
        }
        let nuclei = detect_nuclei(&nucleus_image(c), &OracleBackend::default()).unwrap();
        assert_eq!(nuclei.len(), 5);
        let mut expected = DISC_CENTERS.to_vec();
        expected.sort_by_key(|(x, y)| (*y, *x));
        for (n, (x, y)) in nuclei.iter().zip(expected) {
            assert!((n.center.0 - x as f64).abs() <= 0.5 && (n.center.1 - y as f64).abs() <= 0.5);
        }
        assert_eq!(nuclei.iter().map(|n| n.id).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn streak_is_removed_as_aspect_outlier() {
        let mut c = Raster::filled(100, 80, 0.05f32);
        for (x, y) in DISC_CENTERS {
            paint_disc(&mut c, x, y, 5.0);
        }
        for y in 72..74 {
            for x in 30..80 {
                *c.get_mut(x, y) = 0.9;
            }
        }
        let nuclei = detect_nuclei(&nucleus_image(c), &OracleBackend::default()).unwrap();
        assert_eq!(nuclei.len(), 5);
        assert!(nuclei.iter().all(|n| n.stats.aspect_ratio == 1.0));
    }

    #[test]
    fn missing_nucleus_channel_errors() {
        let img = MultiChannelImage::new(vec![Raster::filled(4, 4, 0.1)], vec![ChannelRole::CellMarker])
            .unwrap();
        assert!(matches!(
            detect_nuclei(&img, &OracleBackend::default()),
            Err(Error::NoNucleusChannel)
        ));
    }

    fn population() -> impl Strategy<Value = Vec<ShapeStats>> {
        proptest::collection::vec(
            (50usize..150, 1.0f64..2.0, 0.7f64..1.0).prop_map(|(area, aspect_ratio, circularity)| {
                ShapeStats {
                    area,
                    aspect_ratio,
                    circularity,
                }
            }),
            3..12,
        )
    }

    fn pick(stats: &[ShapeStats], idx: &[usize]) -> Vec<ShapeStats> {
        idx.iter().map(|i| stats[*i]).collect()
    }

    proptest! {
        /// Idempotence on populations whose first pass drops nothing.
        #[test]
        fn filtering_a_clean_population_is_idempotent(s in population()) {
            let once = pick(&s, &shape_inliers(&s, 2.0));
            prop_assume!(once.len() == s.len());
            let twice = pick(&once, &shape_inliers(&once, 2.0));
            prop_assert_eq!(once, twice);
        }

        /// Appending a candidate sitting at the median of every statistic keeps
        /// the medians (odd populations) and shrinks each SD by at most
        /// √(n/(n+1)); candidates inside that shrunken band therefore survive.
        #[test]
        fn median_duplicate_keeps_candidates_inside_shrunken_band(s in population()) {
            let s = if s.len() % 2 == 0 { s[1..].to_vec() } else { s };
            let n = s.len();
            let column = |pop: &[ShapeStats], k: usize| -> Vec<f64> {
                pop.iter().map(|p| p.values()[k]).collect()
            };
            let med_of = |k: usize| {
                let mut v = column(&s, k);
                v.sort_by(f64::total_cmp);
                median(&v)
            };
            let median_candidate = ShapeStats {
                area: med_of(0) as usize,
                aspect_ratio: med_of(1),
                circularity: med_of(2),
            };
            let shrink = (n as f64 / (n as f64 + 1.0)).sqrt();
            let in_band = |i: usize| {
                (0..3).all(|k| {
                    let vals = column(&s, k);
                    let mean = vals.iter().sum::<f64>() / n as f64;
                    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
                    (vals[i] - med_of(k)).abs() <= 2.0 * sd * shrink
                })
            };
            let mut extended = s.clone();
            extended.push(median_candidate);
            let after = shape_inliers(&extended, 2.0);
            for i in (0..n).filter(|i| in_band(*i)) {
                prop_assert!(after.contains(&i), "candidate {} dropped", i);
            }
        }
    }

    #[test]
    fn median_duplicate_can_drop_a_boundary_candidate() {
        // Areas {8,5,0,7}: median 6, SD ≈ 3.08, so |0 − 6| ≤ 2·SD. Appending a
        // candidate at the median shrinks the SD to ≈ 2.79 and 0 falls outside.
        let s: Vec<_> = [8, 5, 0, 7, 6].iter().map(|a| stats_with_area(*a)).collect();
        assert_eq!(shape_inliers(&s[..4], 2.0), vec![0, 1, 2, 3]);
        assert!(!shape_inliers(&s, 2.0).contains(&2));
    }
}
