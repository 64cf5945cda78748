//! Checkpoint file format: a JSON document with schema version, architecture
//! tag, integer sizes, every weight matrix as a row-major array of arrays,
//! and the readout stored alongside. Serialization uses shortest
//! round-trip float encoding, so save -> load is value-exact for doubles.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{
    Activation, Architecture, GruParams, LstmParams, ModelParams, PlrnnParams, Readout,
    VanillaRnnParams,
};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Affine frame the training data was standardized with; stored so that
/// evaluation can place new data in the same frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum TensorJson {
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub arch: Architecture,
    pub m: usize,
    pub n_in: usize,
    pub n_out: usize,
    model: BTreeMap<String, TensorJson>,
    readout: ReadoutJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReadoutJson {
    b_out: Vec<Vec<f64>>,
    reg: f64,
}

fn mat_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_mat(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("ragged matrix for '{what}'")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("non-finite entries in '{what}'")));
    }
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| Error::Config(format!("bad shape for '{what}': {e}")))
}

impl Checkpoint {
    pub fn from_parts(
        model: &ModelParams,
        readout: &Readout,
        normalization: Option<Normalization>,
    ) -> Self {
        let mut tensors = BTreeMap::new();
        let mut put_m = |name: &str, a: &Array2<f64>| {
            tensors.insert(name.to_string(), TensorJson::Matrix(mat_to_rows(a)));
        };
        match model {
            ModelParams::Vanilla(p) => {
                put_m("w", &p.w);
                put_m("b_in", &p.b_in);
                tensors.insert("bias".into(), TensorJson::Vector(p.bias.to_vec()));
            }
            ModelParams::Plrnn(p) => {
                put_m("w", &p.w);
                put_m("c", &p.c);
                tensors.insert("a".into(), TensorJson::Vector(p.a.to_vec()));
                tensors.insert("bias".into(), TensorJson::Vector(p.bias.to_vec()));
            }
            ModelParams::Lstm(p) => {
                put_m("w_ii", &p.w_ii);
                put_m("w_hi", &p.w_hi);
                put_m("w_if", &p.w_if);
                put_m("w_hf", &p.w_hf);
                put_m("w_ig", &p.w_ig);
                put_m("w_hg", &p.w_hg);
                put_m("w_io", &p.w_io);
                put_m("w_ho", &p.w_ho);
                tensors.insert("b_i".into(), TensorJson::Vector(p.b_i.to_vec()));
                tensors.insert("b_f".into(), TensorJson::Vector(p.b_f.to_vec()));
                tensors.insert("b_g".into(), TensorJson::Vector(p.b_g.to_vec()));
                tensors.insert("b_o".into(), TensorJson::Vector(p.b_o.to_vec()));
            }
            ModelParams::Gru(p) => {
                put_m("w_z", &p.w_z);
                put_m("w_r", &p.w_r);
                put_m("w_h", &p.w_h);
                put_m("u_z", &p.u_z);
                put_m("u_r", &p.u_r);
                put_m("u_h", &p.u_h);
                tensors.insert("b_z".into(), TensorJson::Vector(p.b_z.to_vec()));
                tensors.insert("b_r".into(), TensorJson::Vector(p.b_r.to_vec()));
                tensors.insert("b_h".into(), TensorJson::Vector(p.b_h.to_vec()));
            }
        }
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            arch: model.arch(),
            m: model.latent_dim(),
            n_in: model.input_dim(),
            n_out: readout.obs_dim(),
            model: tensors,
            readout: ReadoutJson {
                b_out: mat_to_rows(&readout.b_out),
                reg: readout.reg,
            },
            normalization,
        }
    }

    fn mat(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        match self.model.get(name) {
            Some(TensorJson::Matrix(m)) => {
                let a = rows_to_mat(m, name)?;
                if a.dim() != (rows, cols) {
                    return Err(Error::Config(format!(
                        "'{name}' has shape {:?}, expected ({rows}, {cols})",
                        a.dim()
                    )));
                }
                Ok(a)
            }
            Some(TensorJson::Vector(_)) => {
                Err(Error::Config(format!("'{name}' must be a matrix")))
            }
            None => Err(Error::Config(format!("checkpoint is missing '{name}'"))),
        }
    }

    fn vec(&self, name: &str, len: usize) -> Result<Array1<f64>> {
        match self.model.get(name) {
            Some(TensorJson::Vector(v)) => {
                if v.len() != len {
                    return Err(Error::Config(format!(
                        "'{name}' has length {}, expected {len}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config(format!("non-finite entries in '{name}'")));
                }
                Ok(Array1::from_vec(v.clone()))
            }
            Some(TensorJson::Matrix(_)) => {
                Err(Error::Config(format!("'{name}' must be a vector")))
            }
            None => Err(Error::Config(format!("checkpoint is missing '{name}'"))),
        }
    }

    pub fn into_parts(self) -> Result<(ModelParams, Readout, Option<Normalization>)> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint schema_version {}",
                self.schema_version
            )));
        }
        let (m, n_in) = (self.m, self.n_in);
        let model = match self.arch {
            Architecture::Vanilla => ModelParams::Vanilla(VanillaRnnParams {
                w: self.mat("w", m, m)?,
                b_in: self.mat("b_in", m, n_in)?,
                bias: self.vec("bias", m)?,
                activation: Activation::Tanh,
            }),
            Architecture::Plrnn => ModelParams::Plrnn(PlrnnParams {
                a: self.vec("a", m)?,
                w: self.mat("w", m, m)?,
                c: self.mat("c", m, n_in)?,
                bias: self.vec("bias", m)?,
            }),
            Architecture::Lstm => ModelParams::Lstm(LstmParams {
                w_ii: self.mat("w_ii", m, n_in)?,
                w_hi: self.mat("w_hi", m, m)?,
                w_if: self.mat("w_if", m, n_in)?,
                w_hf: self.mat("w_hf", m, m)?,
                w_ig: self.mat("w_ig", m, n_in)?,
                w_hg: self.mat("w_hg", m, m)?,
                w_io: self.mat("w_io", m, n_in)?,
                w_ho: self.mat("w_ho", m, m)?,
                b_i: self.vec("b_i", m)?,
                b_f: self.vec("b_f", m)?,
                b_g: self.vec("b_g", m)?,
                b_o: self.vec("b_o", m)?,
            }),
            Architecture::Gru => ModelParams::Gru(GruParams {
                w_z: self.mat("w_z", m, n_in)?,
                w_r: self.mat("w_r", m, n_in)?,
                w_h: self.mat("w_h", m, n_in)?,
                u_z: self.mat("u_z", m, m)?,
                u_r: self.mat("u_r", m, m)?,
                u_h: self.mat("u_h", m, m)?,
                b_z: self.vec("b_z", m)?,
                b_r: self.vec("b_r", m)?,
                b_h: self.vec("b_h", m)?,
            }),
        };
        let b_out = rows_to_mat(&self.readout.b_out, "b_out")?;
        if b_out.dim() != (self.n_out, m) {
            return Err(Error::Config(format!(
                "'b_out' has shape {:?}, expected ({}, {m})",
                b_out.dim(),
                self.n_out
            )));
        }
        let readout = Readout {
            b_out,
            reg: self.readout.reg,
        };
        Ok((model, readout, self.normalization))
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &ModelParams,
    readout: &Readout,
    normalization: Option<Normalization>,
) -> Result<()> {
    let ckpt = Checkpoint::from_parts(model, readout, normalization);
    std::fs::write(path, serde_json::to_string_pretty(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(ModelParams, Readout, Option<Normalization>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("malformed checkpoint {}: {e}", path.display())))?;
    ckpt.into_parts()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;

    #[test]
    fn round_trip_is_value_exact_for_all_architectures() {
        let dir = std::env::temp_dir().join(format!("dsr_ckpt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for (i, arch) in [
            Architecture::Vanilla,
            Architecture::Plrnn,
            Architecture::Lstm,
            Architecture::Gru,
        ]
        .into_iter()
        .enumerate()
        {
            let (model, readout) = init_params(arch, 5, 2, 3, 1000 + i as u64).unwrap();
            let path = dir.join(format!("{}.json", arch.label()));
            save_checkpoint(
                &path,
                &model,
                &readout,
                Some(Normalization {
                    means: vec![0.5, -0.25, 1.0 / 3.0],
                    stds: vec![1.7, 2.0, 0.9],
                }),
            )
            .unwrap();
            let (model2, readout2, norm) = load_checkpoint(&path).unwrap();
            let flat: Vec<f64> = model.tensor_slices().concat();
            let flat2: Vec<f64> = model2.tensor_slices().concat();
            assert_eq!(flat.len(), flat2.len());
            for (a, b) in flat.iter().zip(flat2.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{}", arch.label());
            }
            for (a, b) in readout.b_out.iter().zip(readout2.b_out.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            let norm = norm.unwrap();
            assert_eq!(norm.means[2].to_bits(), (1.0_f64 / 3.0).to_bits());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_checkpoint_is_config_error() {
        let dir = std::env::temp_dir().join(format!("dsr_ckpt_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Config(_))));
        std::fs::write(&path, r#"{"schema_version": 99}"#).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Config(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
