//! Checkpoint files: magic "DDCK", a u32 format version, then repeated
//! records of (name length u32, name bytes, ndim u32, dims u32 each,
//! little-endian f32 payload). Loading validates the record set against
//! the model architecture reconstructed from the shapes themselves.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use mospred_core::model::{Encoder, HeadMode, ModelConfig, MosPredictor};
use mospred_core::refine::RefinementLayer;
use mospred_core::rng::{substream, tag};
use mospred_core::tensor::Tensor;

use crate::{runtime, validation, CliResult};

const MAGIC: &[u8; 4] = b"DDCK";
const VERSION: u32 = 1;

pub const REFINE_A: &str = "refine.a";
pub const REFINE_B: &str = "refine.b";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl CheckpointRecord {
    pub fn scalar(name: &str, value: f32) -> Self {
        CheckpointRecord { name: name.to_string(), dims: Vec::new(), data: vec![value] }
    }
}

pub fn write_checkpoint(path: &Path, records: &[CheckpointRecord]) -> CliResult<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for rec in records {
        let name = rec.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(rec.dims.len() as u32).to_le_bytes());
        for &d in &rec.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let expect: usize = rec.dims.iter().product();
        if rec.data.len() != expect {
            return Err(runtime(format!(
                "record '{}' holds {} values for dims {:?}",
                rec.name,
                rec.data.len(),
                rec.dims
            )));
        }
        for &v in &rec.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| runtime(format!("writing {}: {e}", path.display())))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(validation(format!("{}: truncated checkpoint", self.path)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(path: &Path) -> CliResult<Vec<CheckpointRecord>> {
    let bytes = fs::read(path).map_err(|e| validation(format!("opening {}: {e}", path.display())))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path: path.display().to_string() };
    if cur.take(4)? != MAGIC {
        return Err(validation(format!("{} is not a checkpoint file", path.display())));
    }
    let version = cur.take_u32()?;
    if version != VERSION {
        return Err(validation(format!(
            "{}: checkpoint version {version}, this build reads {VERSION}",
            path.display()
        )));
    }
    let mut records = Vec::new();
    while cur.pos < cur.bytes.len() {
        let name_len = cur.take_u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|e| validation(format!("{}: bad record name: {e}", path.display())))?;
        let ndim = cur.take_u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.take_u32()? as usize);
        }
        let count: usize = dims.iter().product();
        let payload = cur.take(count * 4)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(CheckpointRecord { name, dims, data });
    }
    Ok(records)
}

fn param_records(model: &MosPredictor) -> Vec<CheckpointRecord> {
    let mut records = Vec::new();
    model.visit_params(&mut |p| {
        records.push(CheckpointRecord {
            name: p.name.clone(),
            dims: p.value.shape().to_vec(),
            data: p.value.data().to_vec(),
        });
    });
    records
}

/// Saves all model parameters, plus the refinement scalars when fitted.
pub fn save_model(
    path: &Path,
    model: &MosPredictor,
    refinement: Option<&RefinementLayer>,
) -> CliResult<()> {
    let mut records = param_records(model);
    if let Some(r) = refinement {
        records.push(CheckpointRecord::scalar(REFINE_A, r.a as f32));
        records.push(CheckpointRecord::scalar(REFINE_B, r.b as f32));
    }
    write_checkpoint(path, &records)
}

/// Rebuilds the architecture from record shapes alone: channel counts
/// from the first conv kernel, judge pool from the table height, head
/// structure from which names exist.
fn config_from_records(records: &[CheckpointRecord], path: &Path) -> CliResult<ModelConfig> {
    let find = |name: &str| records.iter().find(|r| r.name == name);
    let conv1 = find("encoder.conv1.weight").ok_or_else(|| {
        validation(format!("{}: no encoder.conv1.weight record", path.display()))
    })?;
    if conv1.dims.len() != 3 {
        return Err(validation(format!(
            "{}: encoder.conv1.weight has dims {:?}",
            path.display(),
            conv1.dims
        )));
    }
    let feature_dim = conv1.dims[1];
    let hidden = conv1.dims[2];
    let table = find("judge.table")
        .ok_or_else(|| validation(format!("{}: no judge.table record", path.display())))?;
    if table.dims.len() != 2 || table.dims[0] == 0 {
        return Err(validation(format!(
            "{}: judge.table has dims {:?}",
            path.display(),
            table.dims
        )));
    }
    let judge_count = (table.dims[0] - 1) as u32;
    let use_regression_head = records.iter().any(|r| r.name.starts_with("reg_head."));
    let use_distribution_head = records.iter().any(|r| r.name.starts_with("dist_head."));
    let head_mode = if records.iter().any(|r| r.name.contains(".mlp1.")) {
        HeadMode::Mlp
    } else {
        HeadMode::Linear
    };
    Ok(ModelConfig {
        feature_dim,
        hidden,
        judge_count,
        head_mode,
        use_regression_head,
        use_distribution_head,
    })
}

/// Loads a full model (and the refinement layer if recorded). The
/// record set must match the reconstructed architecture exactly.
pub fn load_model(path: &Path) -> CliResult<(MosPredictor, Option<RefinementLayer>)> {
    let records = read_checkpoint(path)?;
    let (refine, params): (Vec<_>, Vec<_>) =
        records.into_iter().partition(|r| r.name.starts_with("refine."));

    let config = config_from_records(&params, path)?;
    let mut model = MosPredictor::new(config, 0).map_err(validation)?;

    let mut expected = BTreeSet::new();
    model.visit_params(&mut |p| {
        expected.insert(p.name.clone());
    });
    let got: BTreeSet<String> = params.iter().map(|r| r.name.clone()).collect();
    if expected != got {
        let missing: Vec<_> = expected.difference(&got).cloned().collect();
        let extra: Vec<_> = got.difference(&expected).cloned().collect();
        return Err(validation(format!(
            "{}: record set mismatch (missing {missing:?}, unexpected {extra:?})",
            path.display()
        )));
    }
    for rec in &params {
        let tensor = Tensor::from_vec(&rec.dims, rec.data.clone()).map_err(validation)?;
        model
            .set_param(&rec.name, &tensor)
            .map_err(|e| validation(format!("{}: {e}", path.display())))?;
    }

    let refinement = match (
        refine.iter().find(|r| r.name == REFINE_A),
        refine.iter().find(|r| r.name == REFINE_B),
    ) {
        (Some(a), Some(b)) if a.data.len() == 1 && b.data.len() == 1 => {
            Some(RefinementLayer { a: a.data[0] as f64, b: b.data[0] as f64 })
        }
        (None, None) => None,
        _ => {
            return Err(validation(format!(
                "{}: refinement records must be exactly refine.a and refine.b scalars",
                path.display()
            )))
        }
    };
    Ok((model, refinement))
}

/// Saves only the encoder parameters (the stage-1 artifact).
pub fn save_encoder(path: &Path, encoder: &Encoder) -> CliResult<()> {
    let mut records = Vec::new();
    encoder.visit_params(&mut |p| {
        records.push(CheckpointRecord {
            name: p.name.clone(),
            dims: p.value.shape().to_vec(),
            data: p.value.data().to_vec(),
        });
    });
    write_checkpoint(path, &records)
}

pub fn load_encoder(path: &Path) -> CliResult<Encoder> {
    let records = read_checkpoint(path)?;
    let conv1 = records
        .iter()
        .find(|r| r.name == "encoder.conv1.weight")
        .ok_or_else(|| validation(format!("{}: no encoder.conv1.weight record", path.display())))?;
    if conv1.dims.len() != 3 {
        return Err(validation(format!(
            "{}: encoder.conv1.weight has dims {:?}",
            path.display(),
            conv1.dims
        )));
    }
    let mut encoder = Encoder::new(conv1.dims[1], conv1.dims[2], &mut substream(0, tag::INIT, 0));

    let mut expected = BTreeSet::new();
    encoder.visit_params(&mut |p| {
        expected.insert(p.name.clone());
    });
    let got: BTreeSet<String> = records.iter().map(|r| r.name.clone()).collect();
    if expected != got {
        return Err(validation(format!(
            "{}: expected exactly the encoder records, found {got:?}",
            path.display()
        )));
    }
    let mut outcome = Ok(());
    encoder.visit_params_mut(&mut |p| {
        let rec = records.iter().find(|r| r.name == p.name).expect("name set checked");
        if rec.dims == p.value.shape() {
            match Tensor::from_vec(&rec.dims, rec.data.clone()) {
                Ok(t) => p.value = t,
                Err(e) => outcome = Err(validation(e)),
            }
        } else {
            outcome = Err(validation(format!(
                "record '{}' has dims {:?}, encoder expects {:?}",
                p.name,
                rec.dims,
                p.value.shape()
            )));
        }
    });
    outcome?;
    Ok(encoder)
}
