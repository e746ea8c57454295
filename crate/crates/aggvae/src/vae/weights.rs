//! The trained decoder as a self-describing artifact: a JSON header (layer
//! sizes, latent dimension, standardization vectors, training provenance)
//! followed by little-endian f64 parameter blocks in layer order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vae::{Activation, Mlp, MlpSpec};

const MAGIC: &[u8; 4] = b"AGVW";
const VERSION: u32 = 1;
const MAX_PARAMS: usize = 1 << 26;

/// Training provenance embedded in the decoder artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub root_seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub train_count: usize,
    pub grid_resolution: usize,
    pub noise_sigma: f64,
    pub lengthscale_shape: f64,
    pub lengthscale_scale: f64,
    pub sigma_scale: f64,
    pub config_hash: String,
}

/// The reusable surrogate-prior artifact: decoder parameters plus the
/// standardization transform that maps raw network outputs back to the
/// original aggregate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub mlp: Mlp,
    pub latent_dim: usize,
    pub k1: usize,
    pub k2: usize,
    pub standardize_mean: Array1<f64>,
    pub standardize_sd: Array1<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    activation: String,
    latent_dim: usize,
    k1: usize,
    k2: usize,
    standardize_mean: Vec<f64>,
    standardize_sd: Vec<f64>,
    provenance: Provenance,
}

impl DecoderWeights {
    pub fn new(
        mlp: Mlp,
        latent_dim: usize,
        k1: usize,
        k2: usize,
        standardize_mean: Array1<f64>,
        standardize_sd: Array1<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        let out_dim = k1 + k2;
        if latent_dim >= out_dim {
            return Err(Error::Invalid(format!(
                "latent dimension {latent_dim} must be smaller than K1 + K2 = {out_dim}"
            )));
        }
        if mlp.spec.input_dim() != latent_dim {
            return Err(Error::DimMismatch(format!(
                "decoder input {} != latent dimension {latent_dim}",
                mlp.spec.input_dim()
            )));
        }
        if mlp.spec.output_dim() != out_dim {
            return Err(Error::DimMismatch(format!(
                "decoder output {} != K1 + K2 = {out_dim}",
                mlp.spec.output_dim()
            )));
        }
        if standardize_mean.len() != out_dim || standardize_sd.len() != out_dim {
            return Err(Error::DimMismatch(
                "standardization vectors must have length K1 + K2".into(),
            ));
        }
        if standardize_sd.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid("standardization sds must be positive".into()));
        }
        let finite = mlp.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && mlp.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
            && standardize_mean.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("decoder parameters".into()));
        }
        Ok(DecoderWeights {
            mlp,
            latent_dim,
            k1,
            k2,
            standardize_mean,
            standardize_sd,
            provenance,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.k1 + self.k2
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: "aggvae-decoder".into(),
            version: VERSION,
            layer_sizes: self.mlp.spec.layer_sizes.clone(),
            activation: self.mlp.spec.activation.name().into(),
            latent_dim: self.latent_dim,
            k1: self.k1,
            k2: self.k2,
            standardize_mean: self.standardize_mean.to_vec(),
            standardize_sd: self.standardize_sd.to_vec(),
            provenance: self.provenance.clone(),
        };
        let header_json = serde_json::to_vec(&header).expect("header serialization");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for (w, b) in self.mlp.weights.iter().zip(&self.mlp.biases) {
            for v in w.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in b.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[0..4] != MAGIC {
            return Err(Error::Invalid("not a decoder-weights container".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Invalid(format!("unsupported decoder version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body_start = 12usize
            .checked_add(header_len)
            .ok_or_else(|| Error::Invalid("header length overflows".into()))?;
        if bytes.len() < body_start {
            return Err(Error::Invalid("decoder header is truncated".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..body_start])
            .map_err(|e| Error::Invalid(format!("bad decoder header: {e}")))?;

        let spec = MlpSpec {
            layer_sizes: header.layer_sizes.clone(),
            activation: Activation::from_name(&header.activation)?,
        }
        .validated()?;
        let param_count: usize = spec
            .layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        if param_count > MAX_PARAMS {
            return Err(Error::Invalid("decoder too large".into()));
        }
        let body = &bytes[body_start..];
        if body.len() != param_count * 8 {
            return Err(Error::Invalid(format!(
                "decoder body has {} bytes, want {}",
                body.len(),
                param_count * 8
            )));
        }

        let mut offset = 0usize;
        let mut next = |len: usize| -> Vec<f64> {
            let vals: Vec<f64> = body[offset * 8..(offset + len) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += len;
            vals
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in spec.layer_sizes.windows(2) {
            let (rows, cols) = (w[0], w[1]);
            let wv = next(rows * cols);
            weights.push(
                Array2::from_shape_vec((rows, cols), wv).expect("sized from header"),
            );
            biases.push(Array1::from_vec(next(cols)));
        }
        let mlp = Mlp { spec, weights, biases };
        DecoderWeights::new(
            mlp,
            header.latent_dim,
            header.k1,
            header.k2,
            Array1::from_vec(header.standardize_mean),
            Array1::from_vec(header.standardize_sd),
            header.provenance,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::parse(path, e.to_string()))
    }
}
