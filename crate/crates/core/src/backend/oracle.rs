use std::collections::{BTreeMap, VecDeque};

use super::{BackendDescriptor, NativeGrid, PromptSet, SegmentationBackend, SegmentationResult};
use crate::error::Result;
use crate::imaging::{resample_score_grid, BinaryMask, Calibration, Channel, Raster, ScoreGrid};

/// Deterministic synthetic segmenter.
///
/// Pixels brighter than `intensity_threshold` form the segmentable set.
/// Foreground seeds are the foreground points plus every pixel whose mask
/// prior probability is at least 0.5; background seeds are the background
/// points. A bright pixel belongs to the mask iff its 4-connected geodesic
/// distance (through bright pixels) to the nearest foreground seed is
/// strictly smaller than to the nearest background seed. With no background
/// seeds in a component this is a plain flood fill.
///
/// Confidence is the fraction of mask pixels brighter than
/// `confidence_threshold`; logits are `±logit_magnitude` at input
/// resolution with threshold 0.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    descriptor: BackendDescriptor,
    pub intensity_threshold: f32,
    pub confidence_threshold: f32,
    pub logit_magnitude: f32,
}

impl Default for OracleBackend {
    fn default() -> Self {
        Self {
            descriptor: BackendDescriptor {
                name: "oracle".into(),
                native_grid: NativeGrid::InputResolution,
                logits_threshold: 0.0,
                tensor_names: BTreeMap::new(),
            },
            intensity_threshold: 0.5,
            confidence_threshold: 0.75,
            logit_magnitude: 4.0,
        }
    }
}

const UNREACHED: u32 = u32::MAX;

impl OracleBackend {
    fn bright(&self, channel: &Channel) -> Vec<bool> {
        channel
            .as_slice()
            .iter()
            .map(|v| *v > self.intensity_threshold)
            .collect()
    }

    fn result_for(&self, channel: &Channel, mask: BinaryMask) -> Result<SegmentationResult> {
        let confidence = if mask.is_empty() {
            0.0
        } else {
            let strong = mask
                .pixels()
                .filter(|(x, y)| *channel.get(*x, *y) > self.confidence_threshold)
                .count();
            strong as f32 / mask.area() as f32
        };
        let m = self.logit_magnitude;
        let logits = ScoreGrid::new(
            Raster::from_vec(
                mask.width(),
                mask.height(),
                mask.as_slice().iter().map(|b| if *b { m } else { -m }).collect(),
            )?,
            Calibration::Sigmoid,
        )?;
        SegmentationResult::from_logits(
            logits,
            self.descriptor.logits_threshold,
            mask.dims(),
            confidence,
        )
    }
}

/// Multi-source BFS distances over `passable` pixels (4-connectivity).
fn geodesic_distances(w: usize, h: usize, passable: &[bool], seeds: &[usize]) -> Vec<u32> {
    let mut dist = vec![UNREACHED; w * h];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if passable[s] && dist[s] == UNREACHED {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let d = dist[i] + 1;
        let mut visit = |j: usize| {
            if passable[j] && dist[j] == UNREACHED {
                dist[j] = d;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    dist
}

/// 4-connected components of `on`, in raster order of their first pixel.
pub(crate) fn connected_components(w: usize, h: usize, on: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i % w, i / w);
            let mut neighbors = [usize::MAX; 4];
            if x > 0 {
                neighbors[0] = i - 1;
            }
            if x + 1 < w {
                neighbors[1] = i + 1;
            }
            if y > 0 {
                neighbors[2] = i - w;
            }
            if y + 1 < h {
                neighbors[3] = i + w;
            }
            for j in neighbors {
                if j != usize::MAX && on[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

impl SegmentationBackend for OracleBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn segment_with_prompts(
        &self,
        channel: &Channel,
        prompts: &PromptSet,
    ) -> Result<SegmentationResult> {
        let (w, h) = channel.dims();
        prompts.validate((w, h))?;
        let bright = self.bright(channel);

        let mut fg: Vec<usize> = prompts.foreground().map(|p| p.y * w + p.x).collect();
        if let Some(prior) = &prompts.mask_prior {
            let prior = resample_score_grid(prior, (w, h))?;
            fg.extend(
                (0..w * h).filter(|i| prior.calibration().probability(prior.values().as_slice()[*i]) >= 0.5),
            );
        }
        let bg: Vec<usize> = prompts.background().map(|p| p.y * w + p.x).collect();

        let d_fg = geodesic_distances(w, h, &bright, &fg);
        let d_bg = geodesic_distances(w, h, &bright, &bg);
        let bits = (0..w * h)
            .map(|i| bright[i] && d_fg[i] != UNREACHED && d_fg[i] < d_bg[i])
            .collect();
        self.result_for(channel, BinaryMask::from_bits(w, h, bits)?)
    }

    fn generate_masks_auto(&self, channel: &Channel) -> Result<Vec<SegmentationResult>> {
        let (w, h) = channel.dims();
        let bright = self.bright(channel);
        connected_components(w, h, &bright)
            .into_iter()
            .map(|comp| {
                let mask = BinaryMask::from_pixels(w, h, comp.into_iter().map(|i| (i % w, i / w)));
                self.result_for(channel, mask)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::imaging::PointPrompt;
    use proptest::prelude::*;

    fn disc(cx: f64, cy: f64, r: f64) -> impl Fn(usize, usize) -> bool {
        move |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= r * r
        }
    }

    fn image_of(w: usize, h: usize, shapes: &[&dyn Fn(usize, usize) -> bool]) -> Channel {
        Raster::from_fn(w, h, |x, y| if shapes.iter().any(|s| s(x, y)) { 0.9 } else { 0.05 })
    }

    /// Analytic disc membership, independent of the flood fill under test.
    fn reference_disc_mask(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        BinaryMask::from_fn(w, h, f)
    }

    #[test]
    fn blank_image_gives_empty_mask_and_zero_confidence() {
        let ch = Raster::filled(16, 16, 0.0f32);
        let r = OracleBackend::default()
            .segment_with_prompts(&ch, &PromptSet::new(vec![PointPrompt::foreground(3, 3)], None))
            .unwrap();
        assert!(r.mask.is_empty());
        assert_eq!(r.confidence, 0.0);
    }

    #[test]
    fn point_inside_disc_returns_disc() {
        let d = disc(15.0, 15.0, 6.0);
        let ch = image_of(32, 32, &[&d]);
        let r = OracleBackend::default()
            .segment_with_prompts(&ch, &PromptSet::new(vec![PointPrompt::foreground(14, 16)], None))
            .unwrap();
        assert_eq!(r.mask, reference_disc_mask(32, 32, disc(15.0, 15.0, 6.0)));
        assert_eq!(r.confidence, 1.0);
    }

    #[test]
    fn background_point_carves_out_touching_disc() {
        // Radius-6 discs 13 px apart: 4-adjacent at (16,12)-(17,12), no shared pixel.
        let a = disc(10.0, 12.0, 6.0);
        let b = disc(23.0, 12.0, 6.0);
        let ch = image_of(34, 24, &[&a, &b]);
        let prompts = PromptSet::new(
            vec![PointPrompt::foreground(10, 12), PointPrompt::background(23, 12)],
            None,
        );
        let r = OracleBackend::default().segment_with_prompts(&ch, &prompts).unwrap();
        let only_a = reference_disc_mask(34, 24, disc(10.0, 12.0, 6.0));
        assert_eq!(r.mask, only_a);
    }

    #[test]
    fn mask_prior_seeds_flood() {
        let d = disc(8.0, 8.0, 4.0);
        let ch = image_of(16, 16, &[&d]);
        let mut prior = Raster::filled(16, 16, -4.0f32);
        *prior.get_mut(8, 8) = 4.0;
        let prompts = PromptSet::new(
            vec![],
            Some(ScoreGrid::new(prior, Calibration::Sigmoid).unwrap()),
        );
        let r = OracleBackend::default().segment_with_prompts(&ch, &prompts).unwrap();
        assert_eq!(r.mask.area(), reference_disc_mask(16, 16, disc(8.0, 8.0, 4.0)).area());
    }

    #[test]
    fn invalid_prompt_is_rejected() {
        let ch = Raster::filled(8, 8, 0.9f32);
        let err = OracleBackend::default()
            .segment_with_prompts(&ch, &PromptSet::new(vec![PointPrompt::foreground(8, 0)], None))
            .unwrap_err();
        assert!(matches!(err, Error::InvalidPrompt(_)));
    }

    #[test]
    fn automask_examples() {
        let oracle = OracleBackend::default();
        assert!(oracle
            .generate_masks_auto(&Raster::filled(20, 20, 0.0f32))
            .unwrap()
            .is_empty());

        let (a, b, c) = (disc(6.0, 6.0, 3.0), disc(20.0, 8.0, 3.0), disc(12.0, 22.0, 4.0));
        let ch = image_of(30, 30, &[&a, &b, &c]);
        let masks = oracle.generate_masks_auto(&ch).unwrap();
        assert_eq!(masks.len(), 3);
        let expected = [
            reference_disc_mask(30, 30, disc(6.0, 6.0, 3.0)),
            reference_disc_mask(30, 30, disc(20.0, 8.0, 3.0)),
            reference_disc_mask(30, 30, disc(12.0, 22.0, 4.0)),
        ];
        for (m, e) in masks.iter().zip(&expected) {
            assert_eq!(&m.mask, e);
        }

        // Border contact is not the backend's concern.
        let edge = disc(0.0, 10.0, 4.0);
        let ch = image_of(20, 20, &[&edge]);
        assert_eq!(oracle.generate_masks_auto(&ch).unwrap().len(), 1);
    }

    #[test]
    fn confidence_is_fraction_of_strong_pixels() {
        let ch = Raster::from_fn(4, 1, |x, _| [0.6, 0.8, 0.9, 0.7][x]);
        let r = OracleBackend::default()
            .segment_with_prompts(&ch, &PromptSet::new(vec![PointPrompt::foreground(0, 0)], None))
            .unwrap();
        assert_eq!(r.mask.area(), 4);
        assert_eq!(r.confidence, 0.5);
    }

    fn arb_scene() -> impl Strategy<Value = (Channel, Vec<PointPrompt>, PointPrompt)> {
        let w = 12usize;
        let h = 10usize;
        (
            proptest::collection::vec(prop_oneof![Just(0.1f32), Just(0.9f32)], w * h),
            proptest::collection::vec((0..w, 0..h, any::<bool>()), 1..6),
            (0..w, 0..h, any::<bool>()),
        )
            .prop_map(move |(vals, pts, extra)| {
                let mk = |(x, y, fg): (usize, usize, bool)| {
                    if fg {
                        PointPrompt::foreground(x, y)
                    } else {
                        PointPrompt::background(x, y)
                    }
                };
                let mut points: Vec<PointPrompt> = pts.into_iter().map(mk).collect();
                points[0].polarity = crate::imaging::Polarity::Foreground;
                (Raster::from_vec(w, h, vals).unwrap(), points, mk(extra))
            })
    }

    proptest! {
        #[test]
        fn oracle_is_monotone_in_prompts((ch, points, extra) in arb_scene()) {
            let oracle = OracleBackend::default();
            let base = oracle.segment_with_prompts(&ch, &PromptSet::new(points.clone(), None)).unwrap();
            let mut more = points.clone();
            more.push(extra);
            let next = oracle.segment_with_prompts(&ch, &PromptSet::new(more, None)).unwrap();
            if extra.is_foreground() {
                prop_assert!(base.mask.is_subset_of(&next.mask));
            } else {
                prop_assert!(next.mask.is_subset_of(&base.mask));
            }
        }

        #[test]
        fn oracle_is_deterministic_and_consistent((ch, points, _) in arb_scene()) {
            let oracle = OracleBackend::default();
            let p = PromptSet::new(points, None);
            let a = oracle.segment_with_prompts(&ch, &p).unwrap();
            let b = oracle.segment_with_prompts(&ch, &p).unwrap();
            prop_assert_eq!(&a.mask, &b.mask);
            prop_assert_eq!(a.logits.values().as_slice(), b.logits.values().as_slice());
            prop_assert_eq!(a.confidence.to_bits(), b.confidence.to_bits());
            let rethresholded = a.logits.threshold_to_mask(0.0, ch.dims()).unwrap();
            prop_assert_eq!(rethresholded, a.mask);
        }
    }
}
