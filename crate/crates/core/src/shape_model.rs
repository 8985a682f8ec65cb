//! PCA deformation model over registered corpus meshes.
//!
//! Shapes are `x(α) = x0 + U diag(σ) α` with `α` clamped to `[-1, 1]^K`, so
//! each coefficient spans one standard deviation of its component.
//! Displacements are mean-centered before the SVD and the corpus-mean
//! displacement is folded into `x0`; `eval(0)` is therefore the corpus-mean
//! shape. The raw canonical positions are kept alongside.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{LabelPolylines, TriMesh};

const MAGIC: &[u8; 8] = b"DRSHAPE\0";
const FORMAT_VERSION: u32 = 1;

/// Corpus file identity recorded at build time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub sha256: String,
}

/// JSON sidecar written next to the binary container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format_version: u32,
    pub vertex_count: usize,
    pub components: usize,
    /// `"population"`: σ = singular value / sqrt(N).
    pub sigma_convention: String,
    pub coefficient_bounds: [f64; 2],
    pub build_date: Option<String>,
    pub corpus: Vec<CorpusEntry>,
    #[serde(default)]
    pub labels: LabelPolylines,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    template: TriMesh,
    x0: DVector<f64>,
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    canonical: DVector<f64>,
    pub metadata: ModelMetadata,
}

impl ShapeModel {
    /// Assembles a model from its arrays. `template` supplies faces and labels;
    /// its vertex positions are kept as the raw canonical shape.
    pub fn from_parts(template: TriMesh, x0: DVector<f64>, u: DMatrix<f64>, sigma: DVector<f64>) -> Result<Self> {
        let n3 = 3 * template.vertex_count();
        let k = sigma.len();
        if x0.len() != n3 || u.nrows() != n3 || u.ncols() != k {
            return Err(Error::InvalidModel(format!(
                "array shapes disagree: x0 {}, U {}x{}, sigma {k}, 3V {n3}",
                x0.len(),
                u.nrows(),
                u.ncols()
            )));
        }
        if sigma.iter().any(|s| !(*s >= 0.0)) || sigma.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidModel("sigma must be non-negative and non-increasing".into()));
        }
        let gram_err = (u.transpose() * &u - DMatrix::identity(k, k)).abs().max();
        if gram_err > 1e-8 {
            return Err(Error::InvalidModel(format!("components are not orthonormal (error {gram_err:e})")));
        }
        let metadata = ModelMetadata {
            format_version: FORMAT_VERSION,
            vertex_count: template.vertex_count(),
            components: k,
            sigma_convention: "population".into(),
            coefficient_bounds: [-1.0, 1.0],
            build_date: None,
            corpus: Vec::new(),
            labels: template.labels().clone(),
        };
        Ok(Self {
            canonical: template.flatten(),
            template,
            x0,
            u,
            sigma,
            metadata,
        })
    }

    pub fn components(&self) -> usize {
        self.sigma.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertex_count()
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    /// Canonical positions as given at build time (before mean folding).
    pub fn canonical(&self) -> &DVector<f64> {
        &self.canonical
    }

    /// Faces and labels of the model topology.
    pub fn template(&self) -> &TriMesh {
        &self.template
    }

    /// `x0 + U diag(σ) α` without clamping.
    pub fn eval_flat_unclamped(&self, alpha: &[f64]) -> DVector<f64> {
        assert_eq!(alpha.len(), self.components(), "one coefficient per component");
        let mut x = self.x0.clone();
        for (k, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                x.axpy(a * self.sigma[k], &self.u.column(k), 1.0);
            }
        }
        x
    }

    pub fn eval_flat(&self, alpha: &[f64]) -> DVector<f64> {
        let clamped: Vec<f64> = alpha.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        self.eval_flat_unclamped(&clamped)
    }

    pub fn mesh_from_flat(&self, flat: &DVector<f64>) -> TriMesh {
        self.template.with_flat(flat).expect("model vectors match the template")
    }

    /// Shape for coefficients `α`, clamped to `[-1, 1]` per component.
    pub fn eval(&self, alpha: &[f64]) -> TriMesh {
        self.mesh_from_flat(&self.eval_flat(alpha))
    }

    /// Least-squares coefficients `diag(σ)⁻¹ Uᵀ (x − x0)`; zero-σ components map to 0.
    pub fn project(&self, mesh: &TriMesh) -> Result<Vec<f64>> {
        if !mesh.same_topology(&self.template) {
            return Err(Error::TopologyMismatch(format!(
                "mesh has {} vertices / {} faces, model has {} / {}",
                mesh.vertex_count(),
                mesh.face_count(),
                self.template.vertex_count(),
                self.template.face_count()
            )));
        }
        let coeffs = self.u.transpose() * (mesh.flatten() - &self.x0);
        Ok(coeffs
            .iter()
            .zip(self.sigma.iter())
            .map(|(&c, &s)| if s > 0.0 { c / s } else { 0.0 })
            .collect())
    }

    /// Writes the binary container to `path` and metadata to [`metadata_path`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let (v, k, f) = (self.vertex_count(), self.components(), self.template.face_count());
        for n in [v, k, f] {
            buf.extend_from_slice(&(n as u64).to_le_bytes());
        }
        let put = |buf: &mut Vec<u8>, xs: &[f64]| xs.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
        put(&mut buf, self.x0.as_slice());
        // column-major, one component after another
        put(&mut buf, self.u.as_slice());
        put(&mut buf, self.sigma.as_slice());
        put(&mut buf, self.canonical.as_slice());
        for face in self.template.faces() {
            for &i in face {
                buf.extend_from_slice(&(i as u32).to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        let meta = ModelMetadata {
            labels: self.template.labels().clone(),
            ..self.metadata.clone()
        };
        std::fs::write(metadata_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
            path: path.to_path_buf(),
        };
        if r.take(8)? != MAGIC {
            return Err(r.error("not a shape model container"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(r.error(&format!("unsupported container version {version}")));
        }
        let v = r.u64()? as usize;
        let k = r.u64()? as usize;
        let f = r.u64()? as usize;
        let x0 = DVector::from_vec(r.f64s(3 * v)?);
        let u = DMatrix::from_vec(3 * v, k, r.f64s(3 * v * k)?);
        let sigma = DVector::from_vec(r.f64s(k)?);
        let canonical = r.f64s(3 * v)?;
        let mut faces = Vec::with_capacity(f);
        for _ in 0..f {
            let mut face = [0usize; 3];
            for slot in &mut face {
                *slot = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
            }
            faces.push(face);
        }
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes after model arrays"));
        }
        let meta_path = metadata_path(path);
        let metadata: Option<ModelMetadata> = if meta_path.exists() {
            Some(serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?)
        } else {
            log::warn!("no metadata next to {}; labels unavailable", path.display());
            None
        };
        let verts = canonical
            .chunks_exact(3)
            .map(|c| nalgebra::Point3::new(c[0], c[1], c[2]))
            .collect();
        let mut template = TriMesh::new(verts, faces)?;
        if let Some(m) = &metadata {
            template = template.with_labels(m.labels.clone())?;
        }
        let mut model = Self::from_parts(template, x0, u, sigma)?;
        if let Some(m) = metadata {
            model.metadata = m;
        }
        Ok(model)
    }
}

/// `<path>.json` beside the container.
pub fn metadata_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl Reader<'_> {
    fn error(&self, message: &str) -> Error {
        Error::BinaryParse {
            path: self.path.clone(),
            offset: self.pos as u64,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.error("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.error("array size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// PCA over `registered[j] − canonical`, keeping the top `k` components.
pub fn build_model(canonical: &TriMesh, registered: &[TriMesh], k: usize) -> Result<ShapeModel> {
    if registered.len() < k || registered.is_empty() {
        return Err(Error::CorpusTooSmall {
            found: registered.len(),
            required: k.max(1),
        });
    }
    for (j, m) in registered.iter().enumerate() {
        if !m.same_topology(canonical) {
            let name = m
                .metadata()
                .source
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| format!("corpus mesh #{j}"));
            return Err(Error::TopologyMismatch(format!(
                "{name}: {} vertices / {} faces, canonical has {} / {}",
                m.vertex_count(),
                m.face_count(),
                canonical.vertex_count(),
                canonical.face_count()
            )));
        }
    }
    let n = registered.len();
    let base = canonical.flatten();
    let mut disp = DMatrix::zeros(base.len(), n);
    for (j, m) in registered.iter().enumerate() {
        disp.set_column(j, &(m.flatten() - &base));
    }
    let mean = disp.column_mean();
    for mut col in disp.column_iter_mut() {
        col -= &mean;
    }
    let svd = disp.svd(true, false);
    let full_u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if order.len() < k {
        return Err(Error::CorpusTooSmall {
            found: order.len(),
            required: k,
        });
    }
    let mut u = DMatrix::zeros(base.len(), k);
    let mut sigma = DVector::zeros(k);
    for (c, &src) in order.iter().take(k).enumerate() {
        let mut col = full_u.column(src).into_owned();
        // deterministic sign: largest-magnitude entry positive
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        u.set_column(c, &col);
        sigma[c] = svd.singular_values[src] / (n as f64).sqrt();
    }
    let x0 = &base + &mean;
    log::info!(
        "shape model: {k} components from {n} meshes; leading sigma {:.3} mm",
        sigma.get(0).copied().unwrap_or(0.0)
    );
    ShapeModel::from_parts(canonical.clone(), x0, u, sigma)
}

/// Clamped evaluation; free-function form of [`ShapeModel::eval`].
pub fn eval_shape(model: &ShapeModel, alpha: &[f64]) -> TriMesh {
    model.eval(alpha)
}

pub fn project_shape(model: &ShapeModel, mesh: &TriMesh) -> Result<Vec<f64>> {
    model.project(mesh)
}
