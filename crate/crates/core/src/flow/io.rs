//! `gsjf-1` model files: UTF-8 JSON with every number written to 17
//! significant digits so a save/load cycle is bit-exact.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter};

use super::attention::AttentionLayer;
use super::block::FlowBlock;
use super::model::{FlowModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const FORMAT_TAG: &str = "gsjf-1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    config: ModelConfig,
    blocks: Vec<BlockRecord>,
}

#[derive(Serialize, Deserialize)]
struct BlockRecord {
    flip: bool,
    layers: Vec<LayerRecord>,
    w_s: Vec<Vec<f64>>,
    b_s: Vec<f64>,
    w_u: Vec<Vec<f64>>,
    b_u: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    wq: Vec<Vec<f64>>,
    wk: Vec<Vec<f64>>,
    wv: Vec<Vec<f64>>,
    wo: Vec<Vec<f64>>,
    mlp_w1: Vec<Vec<f64>>,
    mlp_w2: Vec<Vec<f64>>,
    ln1_gain: Vec<f64>,
    ln1_bias: Vec<f64>,
    ln2_gain: Vec<f64>,
    ln2_bias: Vec<f64>,
}

/// Compact JSON with `%.16e` floats.
pub struct SigFig17;

impl Formatter for SigFig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", f64::from(value))
    }

    fn write_null<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        CompactFormatter.write_null(writer)
    }
}

/// Serializes `value` with 17-significant-digit floats.
pub fn to_json_17<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFig17);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

fn layer_record(a: &AttentionLayer) -> LayerRecord {
    LayerRecord {
        wq: a.wq.to_rows(),
        wk: a.wk.to_rows(),
        wv: a.wv.to_rows(),
        wo: a.wo.to_rows(),
        mlp_w1: a.mlp_w1.to_rows(),
        mlp_w2: a.mlp_w2.to_rows(),
        ln1_gain: a.ln1_gain.clone(),
        ln1_bias: a.ln1_bias.clone(),
        ln2_gain: a.ln2_gain.clone(),
        ln2_bias: a.ln2_bias.clone(),
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    Matrix::from_rows(rows).map_err(|_| Error::ModelDimension(format!("{what} has ragged rows")))
}

impl TryFrom<LayerRecord> for AttentionLayer {
    type Error = Error;

    fn try_from(r: LayerRecord) -> Result<Self> {
        Ok(AttentionLayer {
            wq: matrix(&r.wq, "wq")?,
            wk: matrix(&r.wk, "wk")?,
            wv: matrix(&r.wv, "wv")?,
            wo: matrix(&r.wo, "wo")?,
            mlp_w1: matrix(&r.mlp_w1, "mlp_w1")?,
            mlp_w2: matrix(&r.mlp_w2, "mlp_w2")?,
            ln1_gain: r.ln1_gain,
            ln1_bias: r.ln1_bias,
            ln2_gain: r.ln2_gain,
            ln2_bias: r.ln2_bias,
        })
    }
}

pub fn model_to_json(model: &FlowModel) -> Result<String> {
    if let Some(l) = model.blocks.iter().position(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "block {l} has non-finite weights; refusing to save"
        )));
    }
    let file = ModelFile {
        format: FORMAT_TAG.to_string(),
        config: model.config.clone(),
        blocks: model
            .blocks
            .iter()
            .map(|b| BlockRecord {
                flip: b.flip,
                layers: b.layers.iter().map(layer_record).collect(),
                w_s: b.w_s.to_rows(),
                b_s: b.b_s.clone(),
                w_u: b.w_u.to_rows(),
                b_u: b.b_u.clone(),
            })
            .collect(),
    };
    to_json_17(&file)
}

pub fn model_from_json(text: &str) -> Result<FlowModel> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::MalformedModel(e.to_string()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(FORMAT_TAG) => {}
        Some(other) => {
            return Err(Error::VersionMismatch {
                found: other.to_string(),
            })
        }
        None => return Err(Error::MalformedModel("missing \"format\" tag".into())),
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| Error::MalformedModel(e.to_string()))?;
    let blocks = file
        .blocks
        .into_iter()
        .map(|b| {
            Ok(FlowBlock {
                layers: b
                    .layers
                    .into_iter()
                    .map(AttentionLayer::try_from)
                    .collect::<Result<_>>()?,
                w_s: matrix(&b.w_s, "w_s")?,
                b_s: b.b_s,
                w_u: matrix(&b.w_u, "w_u")?,
                b_u: b.b_u,
                flip: b.flip,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    file.config
        .validate()
        .map_err(|e| Error::ModelDimension(e.to_string()))?;
    FlowModel::new(file.config, blocks)
}

pub fn save_model(model: &FlowModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FlowModel> {
    model_from_json(&fs::read_to_string(path)?)
}
