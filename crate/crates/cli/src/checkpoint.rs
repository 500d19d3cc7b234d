//! Model checkpoints: a text manifest of `name shape` lines closed by
//! `end`, followed by the tensors as little-endian f64 in manifest order.

use std::path::Path;

use gradflow_core::diffusion::{DiffusionSchedule, Standardizer};
use gradflow_core::epinet::Epinet;
use gradflow_core::models::{BaselineModel, FModel, K1Model};
use gradflow_core::nn::{Mlp, MlpSpec};

use crate::error::{CliError, Result};

const MAGIC: &str = "gradflow-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn push_vec(&mut self, name: impl Into<String>, data: Vec<f64>) {
        self.push(name, vec![data.len()], data);
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.push(name, vec![1], vec![v]);
    }

    fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| {
            CliError::format(
                Path::new("<checkpoint>"),
                format!("missing tensor `{name}`"),
            )
        })
    }

    pub fn vec(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.get(name)?.data)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        match self.vec(name)? {
            [v] => Ok(*v),
            other => Err(CliError::format(
                Path::new("<checkpoint>"),
                format!("`{name}` has {} values, expected 1", other.len()),
            )),
        }
    }

    pub fn count(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
            Ok(v as usize)
        } else {
            Err(CliError::format(
                Path::new("<checkpoint>"),
                format!("`{name}` = {v} is not a count"),
            ))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{MAGIC}\n");
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            out.push_str(&format!("{} {}\n", t.name, dims.join("x")));
        }
        out.push_str("end\n");
        let mut bytes = out.into_bytes();
        for t in &self.tensors {
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| CliError::format(path, m.to_string());
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let n = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated manifest"))?;
            pos += n + 1;
            std::str::from_utf8(&rest[..n]).map_err(|_| bad("manifest is not UTF-8"))
        };
        if next_line()? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut manifest = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let (name, shape) = line
                .rsplit_once(' ')
                .ok_or_else(|| bad("malformed manifest line"))?;
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse().map_err(|_| bad("malformed tensor shape")))
                .collect::<Result<_>>()?;
            manifest.push((name.to_string(), shape));
        }
        let mut blob = &bytes[pos..];
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let len: usize = shape.iter().product();
            if blob.len() < 8 * len {
                return Err(bad("truncated tensor data"));
            }
            let data = blob[..8 * len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            blob = &blob[8 * len..];
            tensors.push(Tensor { name, shape, data });
        }
        if !blob.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self { tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn put_mlp(&mut self, prefix: &str, net: &Mlp) {
        self.push_vec(
            format!("{prefix}.widths"),
            net.spec().widths().iter().map(|&w| w as f64).collect(),
        );
        self.push_vec(format!("{prefix}.params"), net.params().to_vec());
    }

    pub fn mlp(&self, prefix: &str) -> Result<Mlp> {
        let widths = self
            .vec(&format!("{prefix}.widths"))?
            .iter()
            .map(|&w| w as usize)
            .collect();
        Ok(Mlp::from_params(
            MlpSpec::new(widths)?,
            self.vec(&format!("{prefix}.params"))?.to_vec(),
        )?)
    }

    pub fn put_standardizer(&mut self, name: &str, s: &Standardizer) {
        self.push_vec(name, vec![s.mean, s.scale]);
    }

    pub fn standardizer(&self, name: &str) -> Result<Standardizer> {
        match self.vec(name)? {
            &[mean, scale] => Ok(Standardizer { mean, scale }),
            _ => Err(CliError::format(
                Path::new("<checkpoint>"),
                format!("`{name}` is not a standardizer"),
            )),
        }
    }

    pub fn put_k1(&mut self, m: &K1Model) {
        self.put_mlp("k1.net", &m.net);
        self.push_vec("k1.betas", m.schedule.betas().to_vec());
        self.put_standardizer("k1.target", &m.target);
        self.put_standardizer("k1.raw", &m.raw);
        self.push_scalar("k1.sample_steps", m.sample_steps as f64);
    }

    pub fn k1(&self) -> Result<K1Model> {
        Ok(K1Model {
            net: self.mlp("k1.net")?,
            schedule: DiffusionSchedule::from_betas(self.vec("k1.betas")?)?,
            target: self.standardizer("k1.target")?,
            raw: self.standardizer("k1.raw")?,
            sample_steps: self.count("k1.sample_steps")?,
        })
    }

    pub fn put_f(&mut self, m: &FModel) {
        self.put_mlp("f.net", &m.net);
        self.push_vec("f.betas", m.schedule.betas().to_vec());
        self.put_standardizer("f.target", &m.target);
        self.push_scalar("f.sample_steps", m.sample_steps as f64);
    }

    pub fn f(&self) -> Result<FModel> {
        Ok(FModel {
            net: self.mlp("f.net")?,
            schedule: DiffusionSchedule::from_betas(self.vec("f.betas")?)?,
            target: self.standardizer("f.target")?,
            sample_steps: self.count("f.sample_steps")?,
        })
    }

    /// `κ`, `d_Φ`, the frozen priors and the learnable net.
    pub fn put_epinet(&mut self, prefix: &str, e: &Epinet) {
        self.push_scalar(format!("{prefix}.kappa"), e.prior_scale);
        self.push_scalar(format!("{prefix}.index_dim"), e.priors.len() as f64);
        for (i, p) in e.priors.iter().enumerate() {
            self.put_mlp(&format!("{prefix}.prior.{i}"), p);
        }
        self.put_mlp(&format!("{prefix}.learnable"), &e.learnable);
    }

    pub fn epinet(&self, prefix: &str) -> Result<Epinet> {
        let d = self.count(&format!("{prefix}.index_dim"))?;
        let priors = (0..d)
            .map(|i| self.mlp(&format!("{prefix}.prior.{i}")))
            .collect::<Result<_>>()?;
        Ok(Epinet {
            priors,
            learnable: self.mlp(&format!("{prefix}.learnable"))?,
            prior_scale: self.scalar(&format!("{prefix}.kappa"))?,
        })
    }

    pub fn put_baseline(&mut self, m: &BaselineModel) {
        self.put_mlp("baseline.k1_net", &m.k1_net);
        self.put_standardizer("baseline.raw", &m.raw);
        self.put_mlp("baseline.f_net", &m.f_net);
    }

    pub fn baseline(&self) -> Result<BaselineModel> {
        Ok(BaselineModel {
            k1_net: self.mlp("baseline.k1_net")?,
            raw: self.standardizer("baseline.raw")?,
            f_net: self.mlp("baseline.f_net")?,
        })
    }
}
