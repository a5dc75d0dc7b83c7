//! Exported inference-graph backend (ONNX, executed with `tract`).
//!
//! The graph file carries its own contract in `metadata_props`:
//!
//! | key                         | value                                              |
//! |-----------------------------|----------------------------------------------------|
//! | `native_grid`               | `WxH` of the low-resolution logits                 |
//! | `logits_threshold`          | mask threshold applied to logits                   |
//! | `input_size`                | `WxH` of the image tensor                          |
//! | `max_points`                | point slots per call (unused slots get label −1)   |
//! | `tensor.image`              | image input `[1,3,H,W]`, f32 in `[0,1]`            |
//! | `tensor.point_coords`       | `[1,P,2]` f32, `(x,y)` in image-tensor pixels      |
//! | `tensor.point_labels`       | `[1,P]` f32: 1 foreground, 0 background, −1 pad    |
//! | `tensor.mask_input`         | optional `[1,1,Gh,Gw]` mask-prior logits           |
//! | `tensor.has_mask_input`     | optional `[1]` f32 flag                            |
//! | `tensor.logits`             | output `[1,K,Gh,Gw]`                               |
//! | `tensor.score`              | output `[1,K]`; the argmax candidate is returned   |
//! | `encoder_graph`             | optional sibling file holding the image encoder    |
//! | `tensor.image_embeddings`   | encoder output / decoder input (with `encoder_graph`) |
//!
//! Optional automatic-mask settings: `automask.points_per_side` (16),
//! `automask.score_threshold` (0.88), `automask.nms_iou` (0.7).

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use tract_onnx::pb::ModelProto;
use tract_onnx::prelude::*;

use super::{BackendDescriptor, NativeGrid, PromptSet, SegmentationBackend, SegmentationResult};
use crate::error::{Error, Result};
use crate::imaging::{
    resample_score_grid, resize_channel, BinaryMask, Calibration, Channel, PointPrompt, Polarity,
    Raster, ScoreGrid,
};

/// Default-domain opsets this adapter accepts.
pub const SUPPORTED_OPSETS: std::ops::RangeInclusive<i64> = 7..=21;

const REQUIRED_TENSORS: [&str; 5] = ["image", "point_coords", "point_labels", "logits", "score"];

fn infer_err(e: impl std::fmt::Display) -> Error {
    Error::Inference(e.to_string())
}

fn parse_dims(key: &str, value: &str) -> Result<(usize, usize)> {
    let bad = || Error::Format(format!("metadata `{key}` must be WxH, got `{value}`"));
    let (w, h) = value.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("metadata `{key}` is not a number: `{value}`")))
}

#[derive(Debug, Clone)]
struct GraphSettings {
    input_size: (usize, usize),
    max_points: usize,
    encoder: Option<PathBuf>,
    points_per_side: usize,
    score_threshold: f32,
    nms_iou: f64,
}

fn read_proto(path: &Path) -> Result<ModelProto> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let proto = tract_onnx::onnx()
        .proto_model_for_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if proto.graph.is_none() || proto.ir_version <= 0 {
        return Err(Error::Format(format!("{}: no graph", path.display())));
    }
    let opset = proto
        .opset_import
        .iter()
        .find(|o| o.domain.is_empty() || o.domain == "ai.onnx")
        .map(|o| o.version)
        .ok_or_else(|| Error::Format("graph declares no default-domain opset".into()))?;
    if !SUPPORTED_OPSETS.contains(&opset) {
        return Err(Error::UnsupportedOpset(opset));
    }
    Ok(proto)
}

pub(crate) fn read_descriptor(path: &Path) -> Result<(BackendDescriptor, ModelProto)> {
    let proto = read_proto(path)?;
    let meta: BTreeMap<&str, &str> = proto
        .metadata_props
        .iter()
        .map(|e| (e.key.as_str(), e.value.as_str()))
        .collect();
    let get = |k: &str| {
        meta.get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("graph metadata lacks `{k}`")))
    };
    let (gw, gh) = parse_dims("native_grid", get("native_grid")?)?;
    let threshold: f32 = parse_num("logits_threshold", get("logits_threshold")?)?;
    let mut tensor_names = BTreeMap::new();
    for (k, v) in &meta {
        if let Some(role) = k.strip_prefix("tensor.") {
            tensor_names.insert(role.to_string(), v.to_string());
        }
    }
    for role in REQUIRED_TENSORS {
        if !tensor_names.contains_key(role) {
            return Err(Error::Format(format!("graph metadata lacks `tensor.{role}`")));
        }
    }
    let name = meta
        .get("name")
        .map(|s| s.to_string())
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "graph".into())
        });
    Ok((
        BackendDescriptor {
            name,
            native_grid: NativeGrid::Fixed {
                width: gw,
                height: gh,
            },
            logits_threshold: threshold,
            tensor_names,
        },
        proto,
    ))
}

fn settings_from(proto: &ModelProto, path: &Path) -> Result<GraphSettings> {
    let meta: BTreeMap<&str, &str> = proto
        .metadata_props
        .iter()
        .map(|e| (e.key.as_str(), e.value.as_str()))
        .collect();
    let input_size = parse_dims(
        "input_size",
        meta.get("input_size")
            .ok_or_else(|| Error::Format("graph metadata lacks `input_size`".into()))?,
    )?;
    let max_points = match meta.get("max_points") {
        Some(v) => parse_num("max_points", v)?,
        None => 16,
    };
    if max_points == 0 {
        return Err(Error::Format("max_points must be positive".into()));
    }
    let encoder = meta.get("encoder_graph").map(|rel| {
        path.parent()
            .map(|p| p.join(rel))
            .unwrap_or_else(|| PathBuf::from(rel))
    });
    Ok(GraphSettings {
        input_size,
        max_points,
        encoder,
        points_per_side: match meta.get("automask.points_per_side") {
            Some(v) => parse_num("automask.points_per_side", v)?,
            None => 16,
        },
        score_threshold: match meta.get("automask.score_threshold") {
            Some(v) => parse_num("automask.score_threshold", v)?,
            None => 0.88,
        },
        nms_iou: match meta.get("automask.nms_iou") {
            Some(v) => parse_num("automask.nms_iou", v)?,
            None => 0.7,
        },
    })
}

type Plan = Arc<TypedRunnableModel>;

fn build_plan(
    proto: &ModelProto,
    inputs: &[(String, Vec<usize>)],
    outputs: &[String],
) -> Result<Plan> {
    let mut model = tract_onnx::onnx()
        .model_for_proto_model(proto)
        .map_err(|e| Error::Format(format!("cannot parse graph: {e}")))?;
    model
        .set_input_names(inputs.iter().map(|(n, _)| n.as_str()))
        .map_err(|e| Error::Format(format!("graph inputs: {e}")))?;
    model
        .select_outputs_by_name(outputs.iter().map(|s| s.as_str()))
        .map_err(|e| Error::Format(format!("graph outputs: {e}")))?;
    for (i, (_, shape)) in inputs.iter().enumerate() {
        model
            .set_input_fact(i, f32::fact(shape.as_slice()).into())
            .map_err(infer_err)?;
    }
    model
        .into_optimized()
        .and_then(|m| m.into_runnable())
        .map_err(|e| Error::Format(format!("cannot build plan: {e}")))
}

/// Runs an exported promptable-segmentation graph.
pub struct GraphBackend {
    descriptor: BackendDescriptor,
    settings: GraphSettings,
    encoder: Option<Plan>,
    decoder: Plan,
    has_mask_input: bool,
    has_mask_flag: bool,
    /// Last (channel fingerprint, image embedding) pair from the encoder.
    embedding_cache: Mutex<Option<(u64, Tensor)>>,
}

impl std::fmt::Debug for GraphBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphBackend")
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

impl GraphBackend {
    pub fn open(path: &Path) -> Result<Self> {
        let (descriptor, proto) = read_descriptor(path)?;
        let settings = settings_from(&proto, path)?;
        let names = &descriptor.tensor_names;
        let (iw, ih) = settings.input_size;
        let (gw, gh) = descriptor.native_grid.resolve((iw, ih));
        let p = settings.max_points;

        let mut decoder_inputs = Vec::new();
        let encoder = match &settings.encoder {
            Some(enc_path) => {
                let embed = names.get("image_embeddings").ok_or_else(|| {
                    Error::Format("`encoder_graph` requires `tensor.image_embeddings`".into())
                })?;
                let enc_proto = read_proto(enc_path)?;
                let plan = build_plan(
                    &enc_proto,
                    &[(names["image"].clone(), vec![1, 3, ih, iw])],
                    std::slice::from_ref(embed),
                )?;
                let shape: Vec<usize> = plan.model().output_fact(0).map_err(infer_err)?.shape
                    .as_concrete()
                    .ok_or_else(|| Error::Format("encoder output shape is not concrete".into()))?
                    .to_vec();
                decoder_inputs.push((embed.clone(), shape));
                Some(plan)
            }
            None => {
                decoder_inputs.push((names["image"].clone(), vec![1, 3, ih, iw]));
                None
            }
        };
        decoder_inputs.push((names["point_coords"].clone(), vec![1, p, 2]));
        decoder_inputs.push((names["point_labels"].clone(), vec![1, p]));
        let has_mask_input = names.contains_key("mask_input");
        let has_mask_flag = names.contains_key("has_mask_input");
        if has_mask_input {
            decoder_inputs.push((names["mask_input"].clone(), vec![1, 1, gh, gw]));
        }
        if has_mask_flag {
            decoder_inputs.push((names["has_mask_input"].clone(), vec![1]));
        }
        let decoder = build_plan(
            &proto,
            &decoder_inputs,
            &[names["logits"].clone(), names["score"].clone()],
        )?;
        Ok(Self {
            descriptor,
            settings,
            encoder,
            decoder,
            has_mask_input,
            has_mask_flag,
            embedding_cache: Mutex::new(None),
        })
    }

    fn image_tensor(&self, channel: &Channel) -> Result<Tensor> {
        let (iw, ih) = self.settings.input_size;
        let resized = resize_channel(channel, (iw, ih))?;
        let plane = resized.as_slice();
        let mut data = Vec::with_capacity(3 * plane.len());
        for _ in 0..3 {
            data.extend_from_slice(plane);
        }
        Tensor::from_shape(&[1, 3, ih, iw], &data).map_err(infer_err)
    }

    fn fingerprint(channel: &Channel) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        channel.dims().hash(&mut h);
        for v in channel.as_slice() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// The first decoder input: raw image, or the (cached) encoder embedding.
    fn image_input(&self, channel: &Channel) -> Result<Tensor> {
        let image = self.image_tensor(channel)?;
        let Some(encoder) = &self.encoder else {
            return Ok(image);
        };
        let key = Self::fingerprint(channel);
        let mut cache = self.embedding_cache.lock().expect("embedding cache poisoned");
        if let Some((k, t)) = cache.as_ref() {
            if *k == key {
                return Ok(t.clone());
            }
        }
        let out = encoder.run(tvec!(image.into_tvalue())).map_err(infer_err)?;
        let embedding = out[0].clone().into_tensor();
        *cache = Some((key, embedding.clone()));
        Ok(embedding)
    }

    fn run_decoder(
        &self,
        image_input: Tensor,
        channel_dims: (usize, usize),
        prompts: &PromptSet,
    ) -> Result<SegmentationResult> {
        let (w, h) = channel_dims;
        let (iw, ih) = self.settings.input_size;
        let p = self.settings.max_points;
        if prompts.points.len() > p {
            return Err(Error::InvalidPrompt(format!(
                "{} points exceed the graph's {p} slots",
                prompts.points.len()
            )));
        }
        let scale = |v: usize, from: usize, to: usize| -> f32 {
            if from <= 1 {
                0.0
            } else {
                (v as f64 * (to - 1) as f64 / (from - 1) as f64) as f32
            }
        };
        let mut coords = vec![0f32; 2 * p];
        let mut labels = vec![-1f32; p];
        for (i, pt) in prompts.points.iter().enumerate() {
            coords[2 * i] = scale(pt.x, w, iw);
            coords[2 * i + 1] = scale(pt.y, h, ih);
            labels[i] = match pt.polarity {
                Polarity::Foreground => 1.0,
                Polarity::Background => 0.0,
            };
        }
        let (gw, gh) = self.descriptor.native_grid.resolve((iw, ih));
        let mut inputs: TVec<TValue> = tvec!(
            image_input.into_tvalue(),
            Tensor::from_shape(&[1, p, 2], &coords).map_err(infer_err)?.into_tvalue(),
            Tensor::from_shape(&[1, p], &labels).map_err(infer_err)?.into_tvalue(),
        );
        if self.has_mask_input {
            let prior = match &prompts.mask_prior {
                Some(g) => resample_score_grid(g, (gw, gh))?.values().as_slice().to_vec(),
                None => vec![0f32; gw * gh],
            };
            inputs.push(
                Tensor::from_shape(&[1, 1, gh, gw], &prior)
                    .map_err(infer_err)?
                    .into_tvalue(),
            );
        }
        if self.has_mask_flag {
            let flag = [if prompts.mask_prior.is_some() { 1f32 } else { 0f32 }];
            inputs.push(Tensor::from_shape(&[1], &flag).map_err(infer_err)?.into_tvalue());
        }
        let out = self.decoder.run(inputs).map_err(infer_err)?;
        let logits = out[0].to_plain_array_view::<f32>().map_err(infer_err)?;
        let scores = out[1].to_plain_array_view::<f32>().map_err(infer_err)?;
        let scores: Vec<f32> = scores.iter().copied().collect();
        let shape = logits.shape().to_vec();
        if shape.len() != 4 || shape[2] != gh || shape[3] != gw || shape[1] != scores.len() {
            return Err(Error::Inference(format!(
                "unexpected logits shape {shape:?} for {} scores on a {gw}x{gh} grid",
                scores.len()
            )));
        }
        let best = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Inference("graph returned no candidates".into()))?;
        let values: Vec<f32> = logits
            .slice(tract_ndarray::s![0, best, .., ..])
            .iter()
            .copied()
            .collect();
        let grid = ScoreGrid::new(Raster::from_vec(gw, gh, values)?, Calibration::Sigmoid)?;
        SegmentationResult::from_logits(grid, self.descriptor.logits_threshold, (w, h), scores[best])
    }
}

fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a.intersection_count(b).unwrap_or(0);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

impl SegmentationBackend for GraphBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn segment_with_prompts(
        &self,
        channel: &Channel,
        prompts: &PromptSet,
    ) -> Result<SegmentationResult> {
        prompts.validate(channel.dims())?;
        let image = self.image_input(channel)?;
        self.run_decoder(image, channel.dims(), prompts)
    }

    /// Grid of single-point prompts, score filtering, then greedy NMS by mask IoU.
    fn generate_masks_auto(&self, channel: &Channel) -> Result<Vec<SegmentationResult>> {
        let (w, h) = channel.dims();
        let n = self.settings.points_per_side.max(1);
        let image = self.image_input(channel)?;
        let mut candidates = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let x = (((i as f64 + 0.5) / n as f64) * w as f64) as usize;
                let y = (((j as f64 + 0.5) / n as f64) * h as f64) as usize;
                let prompts = PromptSet::new(
                    vec![PointPrompt::foreground(x.min(w - 1), y.min(h - 1))],
                    None,
                );
                let r = self.run_decoder(image.clone(), (w, h), &prompts)?;
                if !r.mask.is_empty() && r.confidence >= self.settings.score_threshold {
                    candidates.push(r);
                }
            }
        }
        // Stable sort keeps grid order among equal scores.
        candidates.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let mut kept: Vec<SegmentationResult> = Vec::new();
        for c in candidates {
            if kept.iter().all(|k| mask_iou(&k.mask, &c.mask) <= self.settings.nms_iou) {
                kept.push(c);
            }
        }
        Ok(kept)
    }
}
