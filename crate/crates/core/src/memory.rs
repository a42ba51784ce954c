//! Item-count memory accounting for MB blocks and whole networks.
//!
//! Execution model: batch size 1, weights streamed into RAM one layer at a
//! time. A layer occupies `input + weights + output` items while it runs and
//! nothing else is resident. Normalization parameters, biases and activation
//! scratch are not counted.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::ShapeError;

/// Input image channels fed to the stem.
pub const IMAGE_CHANNELS: u64 = 3;
/// Kernel size of the stem convolution.
pub const STEM_KERNEL: u64 = 3;

/// Channel multiplier of the expansion layer, kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpandRatio {
    pub num: u32,
    pub den: u32,
}

impl ExpandRatio {
    pub const fn new(num: u32, den: u32) -> Self {
        ExpandRatio { num, den }
    }

    pub const fn from_int(e: u32) -> Self {
        ExpandRatio { num: e, den: 1 }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `E * channels`, rounded to the nearest integer with ties going up.
    pub fn expanded(self, channels: u32) -> u64 {
        let num = channels as u64 * self.num as u64;
        let den = self.den as u64;
        (2 * num + den) / (2 * den)
    }
}

impl From<u32> for ExpandRatio {
    fn from(e: u32) -> Self {
        ExpandRatio::from_int(e)
    }
}

/// A fully resolved mobile inverted bottleneck block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MBBlockShape {
    pub c_in: u32,
    pub c_out: u32,
    pub expand: ExpandRatio,
    pub kernel: u32,
    pub stride: u32,
    pub input_size: u32,
}

impl MBBlockShape {
    pub fn new(
        c_in: u32,
        c_out: u32,
        expand: impl Into<ExpandRatio>,
        kernel: u32,
        stride: u32,
        input_size: u32,
    ) -> Result<Self, ShapeError> {
        let shape = MBBlockShape {
            c_in,
            c_out,
            expand: expand.into(),
            kernel,
            stride,
            input_size,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.c_in == 0 {
            return Err(ShapeError::invalid("c_in", "must be positive"));
        }
        if self.c_out == 0 {
            return Err(ShapeError::invalid("c_out", "must be positive"));
        }
        if self.expand.num == 0 || self.expand.den == 0 {
            return Err(ShapeError::invalid(
                "expand",
                format!("{}/{} is not a positive ratio", self.expand.num, self.expand.den),
            ));
        }
        if self.expanded_channels() == 0 {
            return Err(ShapeError::invalid("expand", "expanded width rounds to zero"));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(ShapeError::invalid(
                "kernel",
                format!("{} is not an odd positive size", self.kernel),
            ));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(ShapeError::invalid(
                "stride",
                format!("{} is not 1 or 2", self.stride),
            ));
        }
        if self.input_size == 0 {
            return Err(ShapeError::invalid("input_size", "must be positive"));
        }
        if self.stride == 2 && !self.input_size.is_multiple_of(2) {
            return Err(ShapeError::NonDivisible {
                input_size: self.input_size,
            });
        }
        Ok(())
    }

    pub fn expanded_channels(&self) -> u64 {
        self.expand.expanded(self.c_in)
    }

    pub fn output_size(&self) -> u32 {
        self.input_size / self.stride
    }

    /// `[expansion, depthwise, projection]` item triples (input, weight, output).
    /// Caller must have validated the shape.
    fn layer_counts(&self) -> [[u64; 3]; 3] {
        let c_in = self.c_in as u64;
        let c_out = self.c_out as u64;
        let mid = self.expanded_channels();
        let k = self.kernel as u64;
        let area_in = (self.input_size as u64).pow(2);
        let area_out = (self.output_size() as u64).pow(2);
        [
            [c_in * area_in, c_in * mid, mid * area_in],
            [mid * area_in, mid * k * k, mid * area_out],
            [mid * area_out, mid * c_out, c_out * area_out],
        ]
    }

    /// Totals of the three layers without building labelled records.
    pub fn layer_totals(&self) -> Result<[u64; 3], ShapeError> {
        self.validate()?;
        Ok(self.layer_counts().map(|[i, w, o]| i + w + o))
    }

    /// Largest of the three layer totals.
    pub fn peak_items(&self) -> Result<u64, ShapeError> {
        Ok(self.layer_totals()?.into_iter().max().unwrap_or(0))
    }

    /// Multiply-accumulates of the three layers.
    fn macs(&self) -> u64 {
        let c_in = self.c_in as u64;
        let c_out = self.c_out as u64;
        let mid = self.expanded_channels();
        let k = self.kernel as u64;
        let area_in = (self.input_size as u64).pow(2);
        let area_out = (self.output_size() as u64).pow(2);
        c_in * mid * area_in + k * k * mid * area_out + mid * c_out * area_out
    }
}

/// Items resident while one layer executes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMemory {
    pub label: String,
    pub input_items: u64,
    pub weight_items: u64,
    pub output_items: u64,
    pub total_items: u64,
}

impl LayerMemory {
    pub fn new(label: impl Into<String>, input_items: u64, weight_items: u64, output_items: u64) -> Self {
        LayerMemory {
            label: label.into(),
            input_items,
            weight_items,
            output_items,
            total_items: input_items + weight_items + output_items,
        }
    }

    fn from_counts(label: String, [i, w, o]: [u64; 3]) -> Self {
        LayerMemory::new(label, i, w, o)
    }
}

pub fn expansion_memory(shape: &MBBlockShape) -> Result<LayerMemory, ShapeError> {
    shape.validate()?;
    Ok(LayerMemory::from_counts("exp".into(), shape.layer_counts()[0]))
}

pub fn depthwise_memory(shape: &MBBlockShape) -> Result<LayerMemory, ShapeError> {
    shape.validate()?;
    Ok(LayerMemory::from_counts("dw".into(), shape.layer_counts()[1]))
}

pub fn projection_memory(shape: &MBBlockShape) -> Result<LayerMemory, ShapeError> {
    shape.validate()?;
    Ok(LayerMemory::from_counts("proj".into(), shape.layer_counts()[2]))
}

/// The three layers of a block in execution order, labelled `exp`, `dw`, `proj`.
pub fn block_memory(shape: &MBBlockShape) -> Result<[LayerMemory; 3], ShapeError> {
    block_memory_labeled(shape, "")
}

fn block_memory_labeled(shape: &MBBlockShape, prefix: &str) -> Result<[LayerMemory; 3], ShapeError> {
    shape.validate()?;
    let [e, d, p] = shape.layer_counts();
    Ok([
        LayerMemory::from_counts(format!("{prefix}exp"), e),
        LayerMemory::from_counts(format!("{prefix}dw"), d),
        LayerMemory::from_counts(format!("{prefix}proj"), p),
    ])
}

/// Which layer of a block holds the most items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DominantLayer {
    Depthwise,
    Expansion,
    Projection,
}

/// Tag of the layer with the largest total; ties prefer depthwise, then
/// expansion, then projection.
pub fn dominant_layer(shape: &MBBlockShape) -> Result<DominantLayer, ShapeError> {
    let [exp, dw, proj] = shape.layer_totals()?;
    Ok(if dw >= exp && dw >= proj {
        DominantLayer::Depthwise
    } else if exp >= proj {
        DominantLayer::Expansion
    } else {
        DominantLayer::Projection
    })
}

/// Element width used when converting items to bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Float64,
    Float32,
    Float16,
    Int8,
}

impl Precision {
    pub fn width(self) -> u64 {
        match self {
            Precision::Float64 => 8,
            Precision::Float32 => 4,
            Precision::Float16 => 2,
            Precision::Int8 => 1,
        }
    }
}

pub fn items_to_bytes(items: u64, precision: Precision) -> u64 {
    items * precision.width()
}

/// Stem, staged MB blocks, final expand layer and classifier of one subnet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSkeleton {
    pub resolution: u32,
    pub stem_width: u32,
    /// Blocks grouped by stage, in execution order.
    pub stages: Vec<Vec<MBBlockShape>>,
    pub head_width: u32,
    pub include_classifier: bool,
    pub num_classes: u32,
}

impl NetworkSkeleton {
    pub fn blocks(&self) -> impl Iterator<Item = &MBBlockShape> {
        self.stages.iter().flatten()
    }

    /// Channels and spatial size entering the head layer.
    fn head_input(&self) -> (u32, u32) {
        match self.blocks().last() {
            Some(b) => (b.c_out, b.output_size()),
            None => (self.stem_width, self.resolution / 2),
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.resolution < 2 || !self.resolution.is_multiple_of(2) {
            return Err(ShapeError::NonDivisible {
                input_size: self.resolution,
            });
        }
        if self.stem_width == 0 {
            return Err(ShapeError::invalid("stem_width", "must be positive"));
        }
        if self.head_width == 0 {
            return Err(ShapeError::invalid("head_width", "must be positive"));
        }
        if self.num_classes == 0 {
            return Err(ShapeError::invalid("num_classes", "must be positive"));
        }
        let mut channels = self.stem_width;
        let mut size = self.resolution / 2;
        let mut boundary = "stem".to_string();
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.validate()?;
                let here = format!("stage{}.block{}", s + 1, b + 1);
                if block.c_in != channels {
                    return Err(ShapeError::Chain {
                        boundary: format!("{boundary} -> {here}"),
                        detail: format!("c_in {} != previous c_out {}", block.c_in, channels),
                    });
                }
                if block.input_size != size {
                    return Err(ShapeError::Chain {
                        boundary: format!("{boundary} -> {here}"),
                        detail: format!("input size {} != previous output size {}", block.input_size, size),
                    });
                }
                channels = block.c_out;
                size = block.output_size();
                boundary = here;
            }
        }
        Ok(())
    }

    pub fn stem_record(&self) -> LayerMemory {
        let r = self.resolution as u64;
        let w = self.stem_width as u64;
        LayerMemory::new(
            "stem",
            IMAGE_CHANNELS * r * r,
            IMAGE_CHANNELS * w * STEM_KERNEL * STEM_KERNEL,
            w * (r / 2) * (r / 2),
        )
    }

    pub fn head_record(&self) -> LayerMemory {
        let (c, size) = self.head_input();
        let (c, h, area) = (c as u64, self.head_width as u64, (size as u64).pow(2));
        LayerMemory::new("head", c * area, c * h, h * area)
    }

    /// Linear classifier after global pooling; the pooled input is `head_width` items.
    pub fn classifier_record(&self) -> LayerMemory {
        let h = self.head_width as u64;
        let k = self.num_classes as u64;
        LayerMemory::new("classifier", h, h * k, k)
    }

    /// Totals of the counted layers, in profile order, without labels.
    pub fn layer_totals(&self) -> Result<Vec<u64>, ShapeError> {
        self.validate()?;
        let mut totals = Vec::with_capacity(3 + 3 * self.blocks().count());
        totals.push(self.stem_record().total_items);
        for block in self.blocks() {
            totals.extend(block.layer_counts().iter().map(|c| c.iter().sum::<u64>()));
        }
        totals.push(self.head_record().total_items);
        if self.include_classifier {
            totals.push(self.classifier_record().total_items);
        }
        Ok(totals)
    }

    /// Peak over the counted layers without building the labelled profile.
    pub fn peak_items(&self) -> Result<u64, ShapeError> {
        Ok(self.layer_totals()?.into_iter().max().unwrap_or(0))
    }

    /// Peak items of each stage, over its MB layers only.
    pub fn stage_peaks(&self) -> Result<Vec<u64>, ShapeError> {
        self.validate()?;
        self.stages.iter().map(|stage| stage_peak(stage)).collect()
    }

    /// Peak items of every block, in execution order.
    pub fn block_peaks(&self) -> Result<Vec<u64>, ShapeError> {
        self.validate()?;
        self.blocks().map(|b| b.peak_items()).collect()
    }
}

/// Largest layer total over a run of blocks.
pub fn stage_peak(blocks: &[MBBlockShape]) -> Result<u64, ShapeError> {
    let mut peak = 0;
    for b in blocks {
        peak = peak.max(b.peak_items()?);
    }
    Ok(peak)
}

/// Stride of a stage's first block: every stage but the last halves the
/// feature map on entry.
pub fn stage_stride(stage: usize, num_stages: usize) -> u32 {
    if stage + 1 < num_stages {
        2
    } else {
        1
    }
}

/// One stage of `(kernel, expand)` layers. The first block maps `c_in` to
/// `width` with the stage stride; the rest are `width -> width` at stride 1.
pub fn build_stage<I>(c_in: u32, width: u32, input_size: u32, stride: u32, layers: I) -> Result<Vec<MBBlockShape>, ShapeError>
where
    I: IntoIterator<Item = (u32, ExpandRatio)>,
{
    let mut blocks = Vec::new();
    let mut size = input_size;
    for (j, (kernel, expand)) in layers.into_iter().enumerate() {
        let block = if j == 0 {
            MBBlockShape::new(c_in, width, expand, kernel, stride, size)?
        } else {
            MBBlockShape::new(width, width, expand, kernel, 1, size)?
        };
        size = block.output_size();
        blocks.push(block);
    }
    Ok(blocks)
}

/// Ordered per-layer records plus peak statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryProfile {
    pub records: Vec<LayerMemory>,
    pub peak_items: u64,
    pub peak_index: usize,
    pub avg_items: f64,
    pub std_items: f64,
    pub classifier_excluded: bool,
}

impl MemoryProfile {
    /// Builds statistics over `records`; when `classifier_excluded` is set the
    /// trailing record labelled `classifier` is left out of them.
    pub fn from_records(records: Vec<LayerMemory>, classifier_excluded: bool) -> Self {
        let mut profile = MemoryProfile {
            records,
            peak_items: 0,
            peak_index: 0,
            avg_items: 0.0,
            std_items: 0.0,
            classifier_excluded,
        };
        let counted: Vec<(usize, u64)> = profile.counted().map(|(i, r)| (i, r.total_items)).collect();
        if counted.is_empty() {
            return profile;
        }
        let (mut peak_index, mut peak) = counted[0];
        for &(i, t) in &counted[1..] {
            if t > peak {
                peak = t;
                peak_index = i;
            }
        }
        let n = counted.len() as f64;
        let mean = counted.iter().map(|&(_, t)| t as f64).sum::<f64>() / n;
        let var = counted.iter().map(|&(_, t)| (t as f64 - mean).powi(2)).sum::<f64>() / n;
        profile.peak_items = peak;
        profile.peak_index = peak_index;
        profile.avg_items = mean;
        profile.std_items = var.sqrt();
        profile
    }

    fn is_counted(&self, record: &LayerMemory) -> bool {
        !(self.classifier_excluded && record.label == "classifier")
    }

    /// Records that take part in the statistics, with their indices.
    pub fn counted(&self) -> impl Iterator<Item = (usize, &LayerMemory)> {
        self.records.iter().enumerate().filter(move |(_, r)| self.is_counted(r))
    }

    /// Writes the counted records as
    /// `index,label,input_items,weight_items,output_items,total_items`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "label", "input_items", "weight_items", "output_items", "total_items"])?;
        for (i, r) in self.counted() {
            w.write_record([
                i.to_string(),
                r.label.clone(),
                r.input_items.to_string(),
                r.weight_items.to_string(),
                r.output_items.to_string(),
                r.total_items.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Walks the skeleton layer by layer: stem, every MB layer, head, classifier.
pub fn profile_network(skeleton: &NetworkSkeleton) -> Result<MemoryProfile, ShapeError> {
    skeleton.validate()?;
    let mut records = Vec::with_capacity(3 + 3 * skeleton.blocks().count());
    records.push(skeleton.stem_record());
    for (s, stage) in skeleton.stages.iter().enumerate() {
        for (b, block) in stage.iter().enumerate() {
            let prefix = format!("stage{}.block{}.", s + 1, b + 1);
            records.extend(block_memory_labeled(block, &prefix)?);
        }
    }
    records.push(skeleton.head_record());
    records.push(skeleton.classifier_record());
    Ok(MemoryProfile::from_records(records, !skeleton.include_classifier))
}

/// Population standard deviation over mean; 0 for empty or all-zero input.
pub fn coefficient_of_variation(values: &[u64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// FLOPs as `2 * MACs` over stem, MB layers, head and classifier.
pub fn flops_estimate(skeleton: &NetworkSkeleton) -> Result<u64, ShapeError> {
    skeleton.validate()?;
    let r2 = (skeleton.resolution as u64 / 2).pow(2);
    let stem = STEM_KERNEL * STEM_KERNEL * IMAGE_CHANNELS * skeleton.stem_width as u64 * r2;
    let blocks: u64 = skeleton.blocks().map(MBBlockShape::macs).sum();
    let (c, size) = skeleton.head_input();
    let head = c as u64 * skeleton.head_width as u64 * (size as u64).pow(2);
    let classifier = skeleton.head_width as u64 * skeleton.num_classes as u64;
    Ok(2 * (stem + blocks + head + classifier))
}

/// FLOPs in millions, rounded to three significant digits.
pub fn mflops(flops: u64) -> f64 {
    round_significant(flops as f64 / 1e6, 3)
}

pub fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - magnitude);
    (x * scale).round() / scale
}
