//! `prepare`: the client's side of an encrypted run, written to disk as a
//! manifest plus one slot dump per ciphertext block.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use qglr::enc_train::client_prepare;
use qglr::encoding::{plan_layout, BlockKind, BlockRecord, Manifest};
use qglr::he::{encode_ciphertext, Evaluator, SimCiphertext};

use crate::run::load_dataset;
use crate::spec::ExperimentSpec;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PARAMS_FILE: &str = "he.toml";

fn dump(dir: &Path, kind: BlockKind, row: usize, col: usize, ct: &SimCiphertext) -> Result<BlockRecord> {
    let file = format!("{}-{row}-{col}.slots", kind.as_str());
    let path = dir.join(&file);
    fs::write(&path, encode_ciphertext(ct)).with_context(|| format!("writing {}", path.display()))?;
    Ok(BlockRecord {
        kind,
        row_block: row,
        col_block: col,
        file,
    })
}

/// Returns the manifest that was written.
pub fn prepare(spec: &ExperimentSpec) -> Result<Manifest> {
    let data = load_dataset(spec)?;
    let cfg = spec.train_config()?;
    let params = spec.he_params()?;
    let ds = &data.train;
    let layout = plan_layout(ds.n_samples(), ds.n_features(), &params, cfg.batch_size)?;
    let mut ev = Evaluator::new(params, spec.seed)?;
    let client = client_prepare(&mut ev, ds, &layout, cfg.mode, cfg.optimizer, cfg.epsilon)?;

    let dir = &spec.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut blocks = Vec::new();
    for (rb, row) in client.z.iter().enumerate() {
        for (cb, ct) in row.iter().enumerate() {
            blocks.push(dump(dir, BlockKind::Z, rb, cb, ct)?);
        }
    }
    for (rb, row) in client.bbar.iter().enumerate() {
        for (cb, ct) in row.iter().enumerate() {
            blocks.push(dump(dir, BlockKind::Bbar, rb, cb, ct)?);
        }
    }
    for (cb, ct) in client.w0.iter().enumerate() {
        blocks.push(dump(dir, BlockKind::W, 0, cb, ct)?);
        blocks.push(dump(dir, BlockKind::V, 0, cb, ct)?);
    }
    let manifest = Manifest { layout, blocks };
    fs::write(dir.join(PARAMS_FILE), params.to_toml())?;
    fs::write(dir.join("spec.echo"), spec.to_toml())?;
    fs::write(dir.join(MANIFEST_FILE), manifest.to_string())?;
    Ok(manifest)
}
