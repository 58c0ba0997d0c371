//! Multi-tensor weights container.
//!
//! Layout: an 8-byte little-endian manifest length, the JSON manifest, then
//! the concatenated tensor-file blobs. Each manifest entry gives the blob's
//! name, byte offset (from the end of the manifest) and length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::network::{architecture_hash, LayerParams, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::tensor_file::{Tensor, TensorData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub architecture: Vec<LayerSpec>,
    pub architecture_hash: String,
    #[serde(rename = "R")]
    pub axial_factor: usize,
    pub base_width: usize,
    /// Mean envelope value of the training distribution.
    pub reference_mean: f64,
    pub seed: u64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    offset: u64,
    length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    #[serde(flatten)]
    meta: WeightsMeta,
    entries: Vec<Entry>,
}

/// Trained regressor together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub meta: WeightsMeta,
    pub net: Network<f32>,
}

fn entry_name(i: usize, spec: &LayerSpec, what: &str) -> String {
    let kind = serde_json::to_value(spec.kind).expect("kind serialises");
    format!("{i:02}.{}.{what}", kind.as_str().unwrap_or("layer"))
}

impl NetworkWeights {
    pub fn new(net: Network<f32>, axial_factor: usize, base_width: usize, reference_mean: f64, seed: u64, iterations: usize) -> Self {
        let meta = WeightsMeta {
            architecture: net.specs().to_vec(),
            architecture_hash: architecture_hash(net.specs()),
            axial_factor,
            base_width,
            reference_mean,
            seed,
            iterations,
        };
        Self { meta, net }
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (spec, p)) in self.net.specs().iter().zip(self.net.params()).enumerate() {
            if let Some(p) = p {
                out.push((
                    entry_name(i, spec, "weight"),
                    Tensor::new(TensorData::F32(p.weight.clone()), [1.0, 1.0], "weight"),
                ));
                out.push((
                    entry_name(i, spec, "bias"),
                    Tensor::new(TensorData::F32(p.bias.clone().insert_axis(Axis(0))), [1.0, 1.0], "bias"),
                ));
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let blobs: Vec<(String, Vec<u8>)> = self.named_tensors().into_iter().map(|(n, t)| (n, t.to_bytes())).collect();
        let mut offset = 0u64;
        let entries = blobs
            .iter()
            .map(|(name, b)| {
                let e = Entry {
                    name: name.clone(),
                    offset,
                    length: b.len() as u64,
                };
                offset += b.len() as u64;
                e
            })
            .collect();
        let manifest = serde_json::to_vec(&Manifest {
            meta: self.meta.clone(),
            entries,
        })?;
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(&manifest)?;
        for (_, b) in &blobs {
            w.write_all(b)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 16 << 20 {
            return Err(Error::Format(format!("manifest length {len} is implausible")));
        }
        let mut manifest = vec![0u8; len as usize];
        r.read_exact(&mut manifest)?;
        let manifest: Manifest =
            serde_json::from_slice(&manifest).map_err(|e| Error::Format(format!("bad weights manifest: {e}")))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        let meta = manifest.meta;
        if architecture_hash(&meta.architecture) != meta.architecture_hash {
            return Err(Error::Format("architecture hash does not match the layer list".into()));
        }
        let lookup = |name: &str| -> Result<Tensor> {
            let e = manifest
                .entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            let (a, b) = (e.offset as usize, (e.offset + e.length) as usize);
            if b > payload.len() {
                return Err(Error::Format(format!("tensor {name} runs past the end of the file")));
            }
            Tensor::read_from(&payload[a..b])
        };
        let as_f32 = |t: Tensor| -> Result<Array2<f32>> {
            match t.data {
                TensorData::F32(a) => Ok(a),
                TensorData::F64(a) => Ok(a.mapv(|v| v as f32)),
            }
        };
        let mut params = Vec::with_capacity(meta.architecture.len());
        for (i, spec) in meta.architecture.iter().enumerate() {
            let name = entry_name(i, spec, "weight");
            if manifest.entries.iter().any(|e| e.name == name) {
                let weight = as_f32(lookup(&name)?)?;
                let bias = as_f32(lookup(&entry_name(i, spec, "bias"))?)?;
                let bias: Array1<f32> = bias.row(0).to_owned();
                params.push(Some(LayerParams { weight, bias }));
            } else {
                params.push(None);
            }
        }
        let net = Network::from_params(meta.architecture.clone(), params)?;
        Ok(Self { meta, net })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::file(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::network::build_network;
    use crate::rng::SimRng;

    #[test]
    fn round_trip() {
        let net = Network::<f32>::init(build_network(4, 4).unwrap(), &mut SimRng::new(1)).unwrap();
        let w = NetworkWeights::new(net, 4, 4, 0.123, 77, 10);
        let mut bytes = Vec::new();
        w.write_to(&mut bytes).unwrap();
        let back = NetworkWeights::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, w);

        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let m: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        assert_eq!(m["R"], 4);
        assert_eq!(m["seed"], 77);
        assert!(m["entries"].as_array().unwrap().len() >= 14);
    }

    #[test]
    fn detects_truncation() {
        let net = Network::<f32>::init(build_network(8, 2).unwrap(), &mut SimRng::new(1)).unwrap();
        let mut bytes = Vec::new();
        NetworkWeights::new(net, 8, 2, 0.1, 1, 1).write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 10);
        assert!(NetworkWeights::read_from(bytes.as_slice()).is_err());
    }
}
