use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{oracle_render, OracleObject};
use crate::error::{Error, Result};
use crate::geometry::{fibonacci_hemisphere, viewpoint_error_deg, Viewpoint};
use crate::imaging::ImageBuffer;
use crate::rng::{Cursor, StreamKey};
use crate::scoring::DEFAULT_SEED;

const MANIFEST: &str = "manifest.json";
const FORMAT: u32 = 1;
const OBJECT_TAG: u64 = 0x6f626a; // "obj"
const PAIR_TAG: u64 = 0x70616972; // "pair"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_objects: usize,
    pub views_per_object: usize,
    pub queries_per_reference: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_objects: 5,
            views_per_object: 21,
            queries_per_reference: 20,
            image_size: 64,
            seed: DEFAULT_SEED,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 || self.queries_per_reference == 0 {
            return Err(Error::InvalidCount);
        }
        if self.views_per_object < self.queries_per_reference + 1 {
            return Err(Error::InvalidConfig(format!(
                "{} views cannot hold 1 reference + {} queries",
                self.views_per_object, self.queries_per_reference
            )));
        }
        if self.image_size < 32 {
            return Err(Error::InvalidConfig(format!("image size {} < 32", self.image_size)));
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_objects * self.queries_per_reference
    }

    pub fn object_seed(&self, k: usize) -> u64 {
        StreamKey::new(self.seed).derive_all(&[OBJECT_TAG, k as u64]).0
    }

    /// Reference index and query indices (without replacement) for object `k`.
    pub fn sample_views(&self, k: usize) -> (usize, Vec<usize>) {
        let mut cur = Cursor::new(StreamKey::new(self.seed).derive_all(&[PAIR_TAG, k as u64]));
        let mut order: Vec<usize> = (0..self.views_per_object).collect();
        // Partial Fisher-Yates: the first 1 + q slots are the sample.
        for i in 0..=self.queries_per_reference {
            let j = i + cur.below((order.len() - i) as u64) as usize;
            order.swap(i, j);
        }
        (order[0], order[1..=self.queries_per_reference].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestView {
    pub index: usize,
    /// Relative to the dataset root.
    pub image: String,
    /// Ground truth; may be stripped for queries.
    pub viewpoint: Option<Viewpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestObject {
    pub id: String,
    pub seed: u64,
    pub reference: usize,
    pub queries: Vec<usize>,
    pub views: Vec<ManifestView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub spec: DatasetSpec,
    pub objects: Vec<ManifestObject>,
}

/// A reference/query pair ready for estimation.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub pair_id: usize,
    pub object_id: String,
    pub reference_image: ImageBuffer,
    pub reference_viewpoint: Viewpoint,
    pub query_image: ImageBuffer,
    pub query_truth: Option<Viewpoint>,
}

impl EvalPair {
    /// Ground-truth relative rotation angle, when the query truth is known.
    pub fn delta_deg(&self) -> Option<f64> {
        self.query_truth
            .map(|q| viewpoint_error_deg(&self.reference_viewpoint, &q).expect("dataset viewpoints avoid the poles"))
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let text = fs::read_to_string(root.join(MANIFEST))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", root.join(MANIFEST).display())))?;
        if manifest.format != FORMAT {
            return Err(Error::Dataset(format!("unsupported manifest format {}", manifest.format)));
        }
        for obj in &manifest.objects {
            let ok = |i: usize| i < obj.views.len();
            if !ok(obj.reference) || !obj.queries.iter().all(|q| ok(*q)) {
                return Err(Error::Dataset(format!("{}: view index out of range", obj.id)));
            }
            if obj.views[obj.reference].viewpoint.is_none() {
                return Err(Error::Dataset(format!("{}: reference viewpoint missing", obj.id)));
            }
        }
        Ok(Dataset { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    /// Removes every ground-truth viewpoint except the references'.
    pub fn strip_ground_truth(&mut self) {
        for obj in &mut self.manifest.objects {
            for v in &mut obj.views {
                if v.index != obj.reference {
                    v.viewpoint = None;
                }
            }
        }
    }

    pub fn save_manifest(&self) -> Result<()> {
        write_manifest(&self.root, &self.manifest)
    }

    /// All pairs in manifest order, images loaded.
    pub fn pairs(&self) -> Result<Vec<EvalPair>> {
        let mut pairs = Vec::new();
        for obj in &self.manifest.objects {
            let rv = &obj.views[obj.reference];
            let reference_image = ImageBuffer::load_png(self.root.join(&rv.image))?;
            let reference_viewpoint = rv.viewpoint.expect("checked at load");
            for q in &obj.queries {
                let qv = &obj.views[*q];
                pairs.push(EvalPair {
                    pair_id: pairs.len(),
                    object_id: obj.id.clone(),
                    reference_image: reference_image.clone(),
                    reference_viewpoint,
                    query_image: ImageBuffer::load_png(self.root.join(&qv.image))?,
                    query_truth: qv.viewpoint,
                });
            }
        }
        Ok(pairs)
    }
}

fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(root.join(MANIFEST), text)?;
    Ok(())
}

/// Renders `spec.n_objects` oracle objects at Fibonacci-hemisphere views and
/// writes images plus manifest under `out`.
pub fn generate_dataset(spec: &DatasetSpec, out: impl AsRef<Path>) -> Result<Dataset> {
    spec.validate()?;
    let root = out.as_ref().to_path_buf();
    let views = fibonacci_hemisphere(spec.views_per_object)?;
    let objects = (0..spec.n_objects)
        .into_par_iter()
        .map(|k| {
            let id = format!("obj{k:03}");
            let seed = spec.object_seed(k);
            let object = OracleObject::from_seed(seed);
            let dir = root.join("images").join(&id);
            fs::create_dir_all(&dir)?;
            let mut manifest_views = Vec::with_capacity(views.len());
            for (i, v) in views.iter().enumerate() {
                let rel = format!("images/{id}/{i:03}.png");
                oracle_render(&object, v, spec.image_size)?.image.save_png(root.join(&rel))?;
                manifest_views.push(ManifestView { index: i, image: rel, viewpoint: Some(*v) });
            }
            let (reference, queries) = spec.sample_views(k);
            Ok(ManifestObject { id, seed, reference, queries, views: manifest_views })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { format: FORMAT, spec: *spec, objects };
    write_manifest(&root, &manifest)?;
    log::info!("wrote {} objects x {} views to {}", spec.n_objects, spec.views_per_object, root.display());
    Ok(Dataset { root, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_sampling_is_without_replacement() {
        let spec = DatasetSpec { views_per_object: 21, queries_per_reference: 20, ..Default::default() };
        for k in 0..10 {
            let (r, q) = spec.sample_views(k);
            let mut all: Vec<usize> = q.clone();
            all.push(r);
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 21);
        }
        assert_ne!(spec.sample_views(0), spec.sample_views(1));
    }

    #[test]
    fn spec_rejects_too_few_views() {
        let spec = DatasetSpec { views_per_object: 20, queries_per_reference: 20, ..Default::default() };
        assert!(spec.validate().is_err());
    }
}
