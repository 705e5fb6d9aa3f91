//! Versioned JSON checkpoints for every network in the crate.
//!
//! Layout: `{format_version, network_kind, layer_specs: [{name, kind, in, out,
//! activation}], tensors: {name: {shape, values}}, metadata: {...}}`.
//! Values are written with shortest round-trip formatting, so a save/load
//! cycle reproduces every `f64` bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseLayer};
use super::lstm::LstmCell;
use super::mlp::Mlp;
use super::normalizer::RunningNorm;
use super::tensor::Tensor;
use crate::error::{PerpError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: String,
    #[serde(rename = "in")]
    pub input: usize,
    pub out: usize,
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format_version: u32,
    pub network_kind: String,
    pub layer_specs: Vec<LayerSpec>,
    pub tensors: BTreeMap<String, TensorRecord>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl PolicyCheckpoint {
    pub fn new(network_kind: impl Into<String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            network_kind: network_kind.into(),
            layer_specs: Vec::new(),
            tensors: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn put_tensor(&mut self, name: &str, t: &Tensor) {
        self.tensors.insert(
            name.to_string(),
            TensorRecord {
                shape: t.shape().to_vec(),
                values: t.values().to_vec(),
            },
        );
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let rec = self
            .tensors
            .get(name)
            .ok_or_else(|| PerpError::Config(format!("checkpoint has no tensor `{name}`")))?;
        Tensor::new(rec.shape.clone(), rec.values.clone())
    }

    pub fn put_mlp(&mut self, name: &str, mlp: &Mlp) {
        for (i, layer) in mlp.layers.iter().enumerate() {
            let lname = format!("{name}.{i}");
            self.layer_specs.push(LayerSpec {
                name: lname.clone(),
                kind: "dense".into(),
                input: layer.input_size(),
                out: layer.output_size(),
                activation: layer.activation.name().into(),
            });
            self.put_tensor(&format!("{lname}.weight"), &layer.weight);
            self.put_tensor(&format!("{lname}.bias"), &layer.bias);
        }
    }

    pub fn mlp(&self, name: &str) -> Result<Mlp> {
        let prefix = format!("{name}.");
        let mut layers = Vec::new();
        for spec in self
            .layer_specs
            .iter()
            .filter(|s| s.kind == "dense" && s.name.starts_with(&prefix))
        {
            let weight = self.tensor(&format!("{}.weight", spec.name))?;
            let bias = self.tensor(&format!("{}.bias", spec.name))?;
            if weight.shape() != [spec.out, spec.input] {
                return Err(PerpError::Config(format!(
                    "layer `{}` weight shape {:?} disagrees with spec {}x{}",
                    spec.name,
                    weight.shape(),
                    spec.out,
                    spec.input
                )));
            }
            layers.push(DenseLayer::from_parts(weight, bias, Activation::parse(&spec.activation)?)?);
        }
        if layers.is_empty() {
            return Err(PerpError::Config(format!("checkpoint has no network `{name}`")));
        }
        Ok(Mlp { layers })
    }

    pub fn put_lstm(&mut self, name: &str, cell: &LstmCell) {
        self.layer_specs.push(LayerSpec {
            name: name.to_string(),
            kind: "lstm".into(),
            input: cell.input_size(),
            out: cell.hidden_size(),
            activation: "tanh".into(),
        });
        self.put_tensor(&format!("{name}.w_input"), &cell.w_input);
        self.put_tensor(&format!("{name}.w_hidden"), &cell.w_hidden);
        self.put_tensor(&format!("{name}.bias"), &cell.bias);
    }

    pub fn lstm(&self, name: &str) -> Result<LstmCell> {
        let spec = self
            .layer_specs
            .iter()
            .find(|s| s.kind == "lstm" && s.name == name)
            .ok_or_else(|| PerpError::Config(format!("checkpoint has no lstm `{name}`")))?;
        let cell = LstmCell {
            w_input: self.tensor(&format!("{name}.w_input"))?,
            w_hidden: self.tensor(&format!("{name}.w_hidden"))?,
            bias: self.tensor(&format!("{name}.bias"))?,
        };
        if cell.w_input.shape() != [4 * spec.out, spec.input] || cell.w_hidden.shape() != [4 * spec.out, spec.out] {
            return Err(PerpError::Config(format!("lstm `{name}` tensors disagree with spec")));
        }
        Ok(cell)
    }

    pub fn put_normalizer(&mut self, name: &str, norm: &RunningNorm) {
        let (m, v, c) = norm.to_tensors();
        self.put_tensor(&format!("{name}.mean"), &m);
        self.put_tensor(&format!("{name}.var"), &v);
        self.put_tensor(&format!("{name}.count"), &c);
    }

    pub fn normalizer(&self, name: &str) -> Result<RunningNorm> {
        RunningNorm::from_tensors(
            &self.tensor(&format!("{name}.mean"))?,
            &self.tensor(&format!("{name}.var"))?,
            &self.tensor(&format!("{name}.count"))?,
        )
    }

    pub fn set_meta(&mut self, key: &str, value: impl Serialize) {
        self.metadata.insert(
            key.to_string(),
            serde_json::to_value(value).expect("metadata is plain data"),
        );
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .metadata
            .get(key)
            .ok_or_else(|| PerpError::Config(format!("checkpoint metadata lacks `{key}`")))?;
        serde_json::from_value(v.clone())
            .map_err(|e| PerpError::Config(format!("checkpoint metadata `{key}`: {e}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.network_kind != kind {
            return Err(PerpError::Config(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.network_kind
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)
            .map_err(|e| PerpError::Config(format!("malformed checkpoint: {e}")))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(PerpError::Config(format!(
                "unsupported checkpoint format_version {} (expected {FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| PerpError::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| PerpError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PerpError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            PerpError::Config(reason) => PerpError::Format {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn mlp_and_lstm_round_trip_bit_exact() {
        let mut rng = rng_from(5, &[]);
        let mlp = Mlp::new(&[3, 64, 64, 18], Activation::Tanh, Activation::Identity, &mut rng);
        let lstm = LstmCell::new(3, 32, &mut rng);
        let mut ck = PolicyCheckpoint::new("test");
        ck.put_mlp("actor", &mlp);
        ck.put_lstm("enc", &lstm);
        ck.set_meta("delta", 20);
        let back = PolicyCheckpoint::from_json(&ck.to_json()).unwrap();
        let mlp2 = back.mlp("actor").unwrap();
        let lstm2 = back.lstm("enc").unwrap();
        assert_eq!(mlp, mlp2);
        assert_eq!(lstm, lstm2);
        let x = [0.1, 0.9, 0.013];
        let (a, b) = (mlp.infer(&x).unwrap(), mlp2.infer(&x).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(back.meta::<u32>("delta").unwrap(), 20);
    }

    #[test]
    fn layer_specs_follow_documented_schema() {
        let mut rng = rng_from(0, &[]);
        let mut ck = PolicyCheckpoint::new("pcp");
        ck.put_mlp("actor", &Mlp::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng));
        let doc: serde_json::Value = serde_json::from_str(&ck.to_json()).unwrap();
        assert_eq!(doc["format_version"], 1);
        assert_eq!(doc["network_kind"], "pcp");
        assert_eq!(doc["layer_specs"][0]["in"], 3);
        assert_eq!(doc["layer_specs"][0]["out"], 4);
        assert_eq!(doc["layer_specs"][0]["activation"], "tanh");
        assert_eq!(doc["layer_specs"][1]["activation"], "identity");
        assert_eq!(doc["tensors"]["actor.0.weight"]["shape"], serde_json::json!([4, 3]));
    }

    #[test]
    fn rejects_unknown_version() {
        let mut ck = PolicyCheckpoint::new("x");
        ck.format_version = 99;
        assert!(PolicyCheckpoint::from_json(&ck.to_json()).is_err());
    }
}
