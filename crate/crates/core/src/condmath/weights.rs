//! Weight containers and the on-disk tensor archive.
//!
//! An archive is a directory holding `manifest.json` and one `<name>.bin`
//! f32le file per tensor. The manifest maps tensor names to shapes and
//! records the seed when the weights came from [`WeightArchive::seeded`].

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Standard deviation of seeded initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    tensors: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    pub seed: Option<u64>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl WeightArchive {
    /// Normal(0, 0.02) tensors drawn in the order given.
    pub fn seeded(seed: u64, specs: &[(&str, Vec<usize>)]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = specs
            .iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
                (name.to_string(), Tensor { shape: shape.clone(), data })
            })
            .collect();
        Self {
            seed: Some(seed),
            tensors,
        }
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::input(format!(
                "tensor {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        self.tensors.insert(name.to_string(), Tensor { shape, data });
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = io::read_json(&dir.join("manifest.json"))?;
        let mut tensors = BTreeMap::new();
        for (name, shape) in manifest.tensors {
            let path = dir.join(format!("{name}.bin"));
            let data = io::le_bytes_to_f32(&io::read_bytes(&path)?)?;
            let want: usize = shape.iter().product();
            if data.len() != want {
                return Err(Error::format(
                    (data.len().min(want) * 4) as u64,
                    format!("{}: {} values, manifest shape {shape:?}", path.display(), data.len()),
                ));
            }
            tensors.insert(name, Tensor { shape, data });
        }
        Ok(Self {
            seed: manifest.seed,
            tensors,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut manifest = Manifest {
            seed: self.seed,
            tensors: BTreeMap::new(),
        };
        for (name, t) in &self.tensors {
            io::write_bytes(
                &dir.join(format!("{name}.bin")),
                &io::f32_to_le_bytes(t.data.iter().copied()),
            )?;
            manifest.tensors.insert(name.clone(), t.shape.clone());
        }
        io::write_json(&dir.join("manifest.json"), &manifest)
    }

    fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::input(format!("weight archive has no tensor {name:?}")))
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let t = self.get(name)?;
        match t.shape[..] {
            [r, c] => Ok(Array2::from_shape_vec((r, c), t.data.iter().map(|v| *v as f64).collect())
                .expect("shape checked on insert")),
            _ => Err(Error::input(format!("tensor {name:?} has shape {:?}, expected 2-D", t.shape))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        let t = self.get(name)?;
        match t.shape[..] {
            [_] => Ok(t.data.iter().map(|v| *v as f64).collect()),
            _ => Err(Error::input(format!("tensor {name:?} has shape {:?}, expected 1-D", t.shape))),
        }
    }
}

/// Affine -> SiLU -> affine. Weight matrices are stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1_weight: Array2<f64>,
    pub fc1_bias: Array1<f64>,
    pub fc2_weight: Array2<f64>,
    pub fc2_bias: Array1<f64>,
}

impl Mlp {
    pub fn new(
        fc1_weight: Array2<f64>,
        fc1_bias: Array1<f64>,
        fc2_weight: Array2<f64>,
        fc2_bias: Array1<f64>,
    ) -> Result<Self> {
        let mlp = Self {
            fc1_weight,
            fc1_bias,
            fc2_weight,
            fc2_bias,
        };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            fc1_weight: Array2::zeros((hidden, input)),
            fc1_bias: Array1::zeros(hidden),
            fc2_weight: Array2::zeros((output, hidden)),
            fc2_bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1_weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.fc2_weight.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let hidden = self.fc1_weight.nrows();
        if self.fc1_bias.len() != hidden
            || self.fc2_weight.ncols() != hidden
            || self.fc2_bias.len() != self.fc2_weight.nrows()
        {
            return Err(Error::input(format!(
                "inconsistent MLP shapes: fc1 {:?} + {}, fc2 {:?} + {}",
                self.fc1_weight.dim(),
                self.fc1_bias.len(),
                self.fc2_weight.dim(),
                self.fc2_bias.len()
            )));
        }
        Ok(())
    }

    pub fn from_archive(archive: &WeightArchive, prefix: &str) -> Result<Self> {
        Self::new(
            archive.matrix(&format!("{prefix}.fc1.weight"))?,
            archive.vector(&format!("{prefix}.fc1.bias"))?,
            archive.matrix(&format!("{prefix}.fc2.weight"))?,
            archive.vector(&format!("{prefix}.fc2.bias"))?,
        )
    }

    /// Tensor names and shapes for a seeded archive.
    pub fn archive_specs(prefix: &str, input: usize, hidden: usize, output: usize) -> Vec<(String, Vec<usize>)> {
        vec![
            (format!("{prefix}.fc1.weight"), vec![hidden, input]),
            (format!("{prefix}.fc1.bias"), vec![hidden]),
            (format!("{prefix}.fc2.weight"), vec![output, hidden]),
            (format!("{prefix}.fc2.bias"), vec![output]),
        ]
    }
}

/// Shared modulation head: rows `[0, 3D)` produce vision shift/scale/gate,
/// rows `[3D, 6D)` produce text shift/scale/gate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaLNWeights {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl AdaLNWeights {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        let w = Self { weight, bias };
        w.hidden_dim()?;
        Ok(w)
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            weight: Array2::zeros((6 * d, d)),
            bias: Array1::zeros(6 * d),
        }
    }

    pub fn hidden_dim(&self) -> Result<usize> {
        let d = self.weight.ncols();
        if d == 0 || self.weight.nrows() != 6 * d || self.bias.len() != 6 * d {
            return Err(Error::input(format!(
                "AdaLN head must be (6D x D) with 6D bias, got {:?} and {}",
                self.weight.dim(),
                self.bias.len()
            )));
        }
        Ok(d)
    }

    pub fn from_archive(archive: &WeightArchive, prefix: &str) -> Result<Self> {
        Self::new(
            archive.matrix(&format!("{prefix}.linear.weight"))?,
            archive.vector(&format!("{prefix}.linear.bias"))?,
        )
    }

    pub fn archive_specs(prefix: &str, d: usize) -> Vec<(String, Vec<usize>)> {
        vec![
            (format!("{prefix}.linear.weight"), vec![6 * d, d]),
            (format!("{prefix}.linear.bias"), vec![6 * d]),
        ]
    }
}

/// How the noise latent is combined with the condition stack before the
/// projector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Projector input is `concat(z, c₁, c₂, …)`.
    #[default]
    Concat,
    /// Projector input is `concat(c₁, c₂, …) + repeat(z)`; every condition
    /// must be exactly D wide.
    RepeatAdd,
}

/// Optional per-condition embedders followed by the residual projector.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub mode: FusionMode,
    /// Empty, or one embedder per condition latent.
    pub embedders: Vec<Mlp>,
    /// `(D, in)` projector, zero at initialization.
    pub proj_weight: Array2<f64>,
    pub proj_bias: Array1<f64>,
}

impl FusionWeights {
    /// Zero projector for `Concat` fusion of conditions with the given widths.
    pub fn zero_init(d: usize, cond_widths: &[usize]) -> Self {
        let input = d + cond_widths.iter().sum::<usize>();
        Self {
            mode: FusionMode::Concat,
            embedders: Vec::new(),
            proj_weight: Array2::zeros((d, input)),
            proj_bias: Array1::zeros(d),
        }
    }

    pub fn from_archive(archive: &WeightArchive, prefix: &str, conditions: usize, mode: FusionMode) -> Result<Self> {
        let embedders = (0..conditions)
            .map(|i| format!("{prefix}.embed.{i}"))
            .filter(|p| archive.tensors.contains_key(&format!("{p}.fc1.weight")))
            .map(|p| Mlp::from_archive(archive, &p))
            .collect::<Result<Vec<_>>>()?;
        if !embedders.is_empty() && embedders.len() != conditions {
            return Err(Error::input(format!(
                "archive has {} of {conditions} condition embedders",
                embedders.len()
            )));
        }
        Ok(Self {
            mode,
            embedders,
            proj_weight: archive.matrix(&format!("{prefix}.proj.weight"))?,
            proj_bias: archive.vector(&format!("{prefix}.proj.bias"))?,
        })
    }
}
