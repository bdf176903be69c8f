use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::format;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub type ClassId = u32;

pub const MANIFEST: &str = "manifest.json";

/// All rows of one class, split into train and test matrices of equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDataset {
    pub class_id: ClassId,
    pub train: Tensor,
    pub test: Tensor,
}

impl ClassDataset {
    pub fn new(class_id: ClassId, train: Tensor, test: Tensor) -> Result<Self> {
        let c = Self {
            class_id,
            train,
            test,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.train.cols()
    }

    pub fn split(&self, split: Split) -> &Tensor {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, t) in [("train", &self.train), ("test", &self.test)] {
            if t.shape().len() != 2 {
                return Err(Error::Validation(format!(
                    "class {} {name} split must be a matrix, got {:?}",
                    self.class_id,
                    t.shape()
                )));
            }
            if t.rows() == 0 {
                return Err(Error::Validation(format!(
                    "class {} {name} split is empty",
                    self.class_id
                )));
            }
        }
        if self.train.cols() != self.test.cols() {
            return Err(Error::Validation(format!(
                "class {}: train dim {} != test dim {}",
                self.class_id,
                self.train.cols(),
                self.test.cols()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    dim: usize,
    classes: Vec<ManifestClass>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestClass {
    id: ClassId,
    train: String,
    test: String,
}

/// Checks every class has the same width and a unique id; returns the width.
pub fn validate_classes(classes: &[ClassDataset]) -> Result<usize> {
    let dim = classes
        .first()
        .ok_or_else(|| Error::Validation("dataset has no classes".into()))?
        .dim();
    let mut seen = BTreeSet::new();
    for c in classes {
        c.validate()?;
        if c.dim() != dim {
            return Err(Error::Validation(format!(
                "class {} has dim {}, dataset dim is {dim}",
                c.class_id,
                c.dim()
            )));
        }
        if !seen.insert(c.class_id) {
            return Err(Error::Validation(format!("duplicate class id {}", c.class_id)));
        }
    }
    Ok(dim)
}

pub fn save_dataset(dir: &Path, classes: &[ClassDataset]) -> Result<()> {
    let dim = validate_classes(classes)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(classes.len());
    for c in classes {
        let train = format!("class_{:05}_train.emlt", c.class_id);
        let test = format!("class_{:05}_test.emlt", c.class_id);
        format::write(&dir.join(&train), &c.train)?;
        format::write(&dir.join(&test), &c.test)?;
        entries.push(ManifestClass {
            id: c.class_id,
            train,
            test,
        });
    }
    let manifest = Manifest {
        version: 1,
        dim,
        classes: entries,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<ClassDataset>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.version != 1 {
        return Err(Error::format(
            &path,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    let mut classes = Vec::with_capacity(manifest.classes.len());
    for entry in &manifest.classes {
        let train = format::read(&dir.join(&entry.train))?;
        let test = format::read(&dir.join(&entry.test))?;
        for t in [&train, &test] {
            if t.cols() != manifest.dim {
                return Err(Error::Validation(format!(
                    "class {} has dim {}, manifest says {}",
                    entry.id,
                    t.cols(),
                    manifest.dim
                )));
            }
        }
        classes.push(ClassDataset::new(entry.id, train, test)?);
    }
    validate_classes(&classes)?;
    Ok(classes)
}
