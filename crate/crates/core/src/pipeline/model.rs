use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::icp::rigid_icp;
use crate::imaging::sha256_hex;
use crate::mesh::{load_mesh, TriMesh};
use crate::nicp::nicp_register;
use crate::shape_model::{build_model, CorpusEntry, ShapeModel};

/// OBJ and PLY files directly inside `dir`, sorted by name.
pub fn list_meshes(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("obj" | "ply")
                )
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Rigidly aligns `canonical` to `target`, deforms it onto the target and
/// maps the result back into the canonical frame.
pub fn fit_corpus_mesh(canonical: &TriMesh, target: &TriMesh, cfg: &RunConfig) -> Result<TriMesh> {
    let pose = rigid_icp(canonical, target, cfg.icp.max_iter, cfg.icp.tol)?;
    let fitted = nicp_register(&canonical.apply_pose(&pose), target, &cfg.nicp)?;
    Ok(fitted.apply_pose(&pose.inverse()))
}

/// Fits every corpus mesh, skipping failures, and builds the model from the
/// survivors. Needs at least `components` survivors.
pub fn build_from_corpus(
    canonical: &TriMesh,
    corpus: &[(String, TriMesh)],
    cfg: &RunConfig,
) -> Result<(ShapeModel, Vec<String>)> {
    let k = cfg.components;
    if corpus.len() < k + 1 {
        return Err(Error::CorpusTooSmall {
            found: corpus.len(),
            required: k + 1,
        });
    }
    let fitted: Vec<(String, Result<TriMesh>)> = corpus
        .par_iter()
        .map(|(name, m)| (name.clone(), fit_corpus_mesh(canonical, m, cfg)))
        .collect();
    let mut names = Vec::new();
    let mut meshes = Vec::new();
    for (name, r) in fitted {
        match r {
            Ok(m) => {
                names.push(name);
                meshes.push(m);
            }
            Err(e) => log::warn!("skipping {name}: {e}"),
        }
    }
    if meshes.len() < k {
        return Err(Error::CorpusTooSmall {
            found: meshes.len(),
            required: k,
        });
    }
    Ok((build_model(canonical, &meshes, k)?, names))
}

/// Builds the model from the configured corpus and writes it to `paths.model`.
pub fn build_shape_model_cmd(cfg: &RunConfig) -> Result<ShapeModel> {
    let canonical = load_mesh(cfg.require("canonical_mesh", &cfg.paths.canonical_mesh)?)?;
    let dir = cfg.require("corpus_dir", &cfg.paths.corpus_dir)?;
    let out = cfg
        .paths
        .model
        .clone()
        .ok_or_else(|| Error::InvalidConfig("paths.model is not set".into()))?;
    let mut corpus = Vec::new();
    let mut hashes = Vec::new();
    for p in list_meshes(&dir)? {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        hashes.push((name.clone(), sha256_hex(&std::fs::read(&p)?)));
        match load_mesh(&p) {
            Ok(m) => corpus.push((name, m)),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    log::info!("fitting {} corpus meshes", corpus.len());
    let (mut model, used) = build_from_corpus(&canonical, &corpus, cfg)?;
    model.metadata.corpus = hashes
        .into_iter()
        .filter(|(n, _)| used.contains(n))
        .map(|(name, sha256)| CorpusEntry { name, sha256 })
        .collect();
    model.metadata.build_date = Some(chrono::Utc::now().to_rfc3339());
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    model.save(&out)?;
    log::info!("wrote {} ({} components)", out.display(), model.components());
    Ok(model)
}
