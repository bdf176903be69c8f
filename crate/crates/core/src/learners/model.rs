use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{BoundMlp, Layer, Mlp, OutputActivation};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::format;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MODEL_MANIFEST: &str = "model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[default]
    Proto,
    Relation,
}

/// Anything that maps feature rows to embedding rows.
pub trait Embedder {
    fn embed(&self, x: &Tensor) -> Result<Tensor>;
}

/// Architecture of a learner, independent of its weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    /// Input width first, embedding width last.
    pub layer_widths: Vec<usize>,
    /// Hidden widths of the relation head (RelationNet only).
    #[serde(default = "default_relation_hidden")]
    pub relation_hidden: Vec<usize>,
}

fn default_relation_hidden() -> Vec<usize> {
    vec![32]
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Proto,
            layer_widths: vec![32, 64, 64, 32],
            relation_hidden: default_relation_hidden(),
        }
    }
}

/// Embedding network plus, for RelationNet, the pairwise relation head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: LearnerKind,
    pub embed: Mlp,
    pub relation: Option<Mlp>,
}

/// A model's parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub embed: BoundMlp,
    pub relation: Option<BoundMlp>,
}

impl BoundModel {
    /// Parameter handles in [`Model::params`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.embed
            .vars()
            .chain(self.relation.iter().flat_map(BoundMlp::vars))
            .collect()
    }

    pub fn relation(&self) -> Result<&BoundMlp> {
        self.relation
            .as_ref()
            .ok_or_else(|| Error::Precondition("model has no relation head".into()))
    }
}

impl Model {
    pub fn new(config: &LearnerConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let embed = Mlp::new(&config.layer_widths, OutputActivation::Identity, &mut rng)?;
        let relation = match config.kind {
            LearnerKind::Proto => None,
            LearnerKind::Relation => {
                let mut widths = vec![2 * embed.output_dim()];
                widths.extend(&config.relation_hidden);
                widths.push(1);
                Some(Mlp::new(&widths, OutputActivation::Sigmoid, &mut rng)?)
            }
        };
        Ok(Self {
            kind: config.kind,
            embed,
            relation,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.embed.params().chain(self.relation.iter().flat_map(Mlp::params)).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.embed
            .params_mut()
            .chain(self.relation.iter_mut().flat_map(Mlp::params_mut))
            .collect()
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundModel {
        BoundModel {
            embed: self.embed.bind(tape, trainable),
            relation: self.relation.as_ref().map(|r| r.bind(tape, trainable)),
        }
    }

    /// Wraps existing tape handles given in [`Model::params`] order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundModel> {
        let n = 2 * self.embed.layers().len();
        if vars.len() < n {
            return Err(Error::Dimension(format!("{} handles, embedding alone needs {n}", vars.len())));
        }
        let relation = match &self.relation {
            Some(r) => Some(r.bind_vars(&vars[n..])?),
            None if vars.len() == n => None,
            None => return Err(Error::Dimension(format!("{} handles for {n} parameters", vars.len()))),
        };
        Ok(BoundModel {
            embed: self.embed.bind_vars(&vars[..n])?,
            relation,
        })
    }

    pub fn relation_head(&self) -> Result<&Mlp> {
        self.relation
            .as_ref()
            .ok_or_else(|| Error::Precondition("model has no relation head".into()))
    }

    pub fn bit_eq(&self, other: &Model) -> bool {
        let (a, b) = (self.params(), other.params());
        self.kind == other.kind && a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.bit_eq(y))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = Vec::new();
        let mut write_net = |prefix: &str, net: &Mlp| -> Result<()> {
            for (i, layer) in net.layers().iter().enumerate() {
                for (name, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
                    let file = format!("{prefix}.{i}.{name}.emlt");
                    let t = if name == "bias" {
                        Tensor::matrix(1, t.len(), t.data().to_vec())?
                    } else {
                        t.clone()
                    };
                    format::write(&dir.join(&file), &t)?;
                    tensors.push(file);
                }
            }
            Ok(())
        };
        write_net("embed", &self.embed)?;
        if let Some(r) = &self.relation {
            write_net("relation", r)?;
        }
        let manifest = ModelManifest {
            learner_type: self.kind,
            layer_widths: self.embed.widths().to_vec(),
            relation_widths: self.relation.as_ref().map(|r| r.widths().to_vec()),
            tensors,
        };
        let path = dir.join(MODEL_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: ModelManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut files = m.tensors.iter();
        let mut read_net = |widths: &[usize], act: OutputActivation| -> Result<Mlp> {
            let mut layers = Vec::new();
            for _ in 1..widths.len() {
                let (wf, bf) = match (files.next(), files.next()) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(Error::format(&path, "too few tensor files")),
                };
                let weight = format::read(&dir.join(wf))?;
                let bias = format::read(&dir.join(bf))?;
                layers.push(Layer {
                    weight: Tensor::matrix(weight.rows(), weight.cols(), weight.into_data())?,
                    bias: Tensor::vector(bias.into_data()),
                });
            }
            Mlp::from_layers(widths.to_vec(), layers, act)
        };
        let embed = read_net(&m.layer_widths, OutputActivation::Identity)?;
        let relation = match (m.learner_type, &m.relation_widths) {
            (LearnerKind::Relation, Some(w)) => Some(read_net(w, OutputActivation::Sigmoid)?),
            (LearnerKind::Proto, None) => None,
            _ => return Err(Error::format(&path, "relation widths do not match learner type")),
        };
        if files.next().is_some() {
            return Err(Error::format(&path, "unexpected extra tensor files"));
        }
        Ok(Self {
            kind: m.learner_type,
            embed,
            relation,
        })
    }
}

impl Embedder for Model {
    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.embed.forward(x)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    learner_type: LearnerKind,
    layer_widths: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relation_widths: Option<Vec<usize>>,
    tensors: Vec<String>,
}
