use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{conv, AntsConfig, AntsParams, ConvLayer};
use crate::error::{Error, Result};
use crate::tensor::{stt, Tensor};

pub const DESCRIPTOR_FILE: &str = "ants.json";

/// JSON descriptor stored next to the per-layer STT1 tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDescriptor {
    pub config: AntsConfig,
    pub seed: u64,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub kernel: PathBuf,
    pub kernel_shape: Vec<usize>,
    pub bias: PathBuf,
    pub bias_shape: Vec<usize>,
}

impl ParamsDescriptor {
    pub fn from_json(text: &str) -> Result<Self> {
        let d: ParamsDescriptor = serde_json::from_str(text)?;
        d.config.validate()?;
        let shapes = d.config.layer_shapes();
        if shapes.len() != d.layers.len() {
            return Err(Error::shape(format!(
                "descriptor lists {} layers, config implies {}",
                d.layers.len(),
                shapes.len()
            )));
        }
        for (entry, (o, i)) in d.layers.iter().zip(shapes) {
            if entry.kernel_shape != [o, i, 3, 3, 3] || entry.bias_shape != [o] {
                return Err(Error::shape(format!(
                    "layer shapes {:?}/{:?} do not match config ({o}, {i})",
                    entry.kernel_shape, entry.bias_shape
                )));
            }
        }
        Ok(d)
    }
}

pub fn save_params(
    dir: impl AsRef<Path>,
    config: &AntsConfig,
    params: &AntsParams<f32>,
    seed: u64,
) -> Result<()> {
    let dir = dir.as_ref();
    params.check_config(config)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let kernel_shape = vec![layer.c_out, layer.c_in, 3, 3, 3];
        let bias_shape = vec![layer.c_out];
        let entry = LayerEntry {
            kernel: format!("layer{l}.kernel.stt").into(),
            kernel_shape: kernel_shape.clone(),
            bias: format!("layer{l}.bias.stt").into(),
            bias_shape: bias_shape.clone(),
        };
        stt::write(
            dir.join(&entry.kernel),
            &Tensor::new(kernel_shape, layer.kernel.clone())?,
        )?;
        stt::write(dir.join(&entry.bias), &Tensor::new(bias_shape, layer.bias.clone())?)?;
        layers.push(entry);
    }
    let descriptor = ParamsDescriptor {
        config: config.clone(),
        seed,
        layers,
    };
    let path = dir.join(DESCRIPTOR_FILE);
    let text = serde_json::to_string_pretty(&descriptor)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_params(dir: impl AsRef<Path>) -> Result<(ParamsDescriptor, AntsParams<f32>)> {
    let dir = dir.as_ref();
    let path = dir.join(DESCRIPTOR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let descriptor = ParamsDescriptor::from_json(&text)?;
    let layers = descriptor
        .layers
        .iter()
        .map(|entry| {
            let kernel = stt::read(dir.join(&entry.kernel))?;
            let bias = stt::read(dir.join(&entry.bias))?;
            if kernel.dims() != entry.kernel_shape || bias.dims() != entry.bias_shape {
                return Err(Error::shape(format!(
                    "tensor {} does not match its descriptor shape",
                    entry.kernel.display()
                )));
            }
            Ok(ConvLayer {
                c_out: entry.kernel_shape[0],
                c_in: entry.kernel_shape[1],
                kernel: kernel.into_data(),
                bias: bias.into_data(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = AntsParams { layers };
    debug_assert!(params.layers.iter().all(|l| l.kernel.len() == l.c_out * l.c_in * conv::TAPS));
    Ok((descriptor, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ants::ants_init;
    use crate::tensor::GridShape;

    #[test]
    fn save_load_round_trip() {
        let config = AntsConfig {
            n_layers: 2,
            hidden_channels: 3,
            grid: GridShape::new(1, 2, 2).unwrap(),
            m: 1,
            source_channels: vec![2],
            target_channels: vec![2],
        };
        let params = ants_init(&config, 5);
        let dir = tempfile::tempdir().unwrap();
        save_params(dir.path(), &config, &params, 5).unwrap();
        let (desc, back) = load_params(dir.path()).unwrap();
        assert_eq!(desc.seed, 5);
        assert_eq!(desc.config, config);
        assert_eq!(back, params);
    }

    #[test]
    fn descriptor_shape_mismatch_rejected() {
        let text = r#"{"config":{"n_layers":1,"hidden_channels":2,"grid":{"t":1,"h":1,"w":1},
            "m":1,"source_channels":[1],"target_channels":[1]},"seed":0,
            "layers":[{"kernel":"k","kernel_shape":[1,2,3,3,3],"bias":"b","bias_shape":[1]}]}"#;
        assert!(ParamsDescriptor::from_json(text).is_err());
        let ok = text.replace("[1,2,3,3,3]", "[1,3,3,3,3]");
        assert!(ParamsDescriptor::from_json(&ok).is_ok());
    }
}
