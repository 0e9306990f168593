use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::evalkit::max_label;
use crate::labels::{LesionClass, Side};
use crate::mipbuild::Study;
use crate::tensorio::read_nifti;

const HEADER: [&str; 6] = ["patient_id", "pre_path", "post_paths", "mask_path", "label_left", "label_right"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub patient_id: String,
    /// Paths exactly as written in the manifest.
    pub pre_path: String,
    pub post_paths: Vec<String>,
    pub mask_path: Option<String>,
    pub label_left: LesionClass,
    pub label_right: LesionClass,
}

impl ManifestRow {
    pub fn label(&self, side: Side) -> LesionClass {
        match side {
            Side::Left => self.label_left,
            Side::Right => self.label_right,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    patient_id: String,
    pre_path: String,
    post_paths: String,
    #[serde(default)]
    mask_path: String,
    label_left: String,
    label_right: String,
}

/// Parsed manifest. Relative paths resolve against the manifest's folder.
#[derive(Debug, Clone)]
pub struct Manifest {
    base_dir: PathBuf,
    rows: Vec<ManifestRow>,
    index: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn parse(bytes: &[u8], base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let header = reader.headers().map_err(|e| Error::ManifestParse(e.to_string()))?.clone();
        for col in HEADER {
            if !header.iter().any(|h| h == col) && col != "mask_path" {
                return Err(Error::ManifestParse(format!("missing column {col:?}")));
            }
        }
        let mut rows = Vec::new();
        let mut index = BTreeMap::new();
        for (line, rec) in reader.deserialize::<RawRow>().enumerate() {
            let raw = rec.map_err(|e| Error::ManifestParse(format!("row {}: {e}", line + 1)))?;
            if raw.patient_id.is_empty() {
                return Err(Error::ManifestParse(format!("row {}: empty patient id", line + 1)));
            }
            let post_paths: Vec<String> =
                raw.post_paths.split(';').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect();
            if post_paths.len() < 2 {
                return Err(Error::ManifestParse(format!(
                    "{}: needs at least 2 post paths, found {}",
                    raw.patient_id,
                    post_paths.len()
                )));
            }
            let row = ManifestRow {
                pre_path: raw.pre_path,
                post_paths,
                mask_path: (!raw.mask_path.is_empty()).then_some(raw.mask_path),
                label_left: raw.label_left.parse()?,
                label_right: raw.label_right.parse()?,
                patient_id: raw.patient_id,
            };
            if index.insert(row.patient_id.clone(), rows.len()).is_some() {
                return Err(Error::ManifestParse(format!("duplicate patient id {:?}", row.patient_id)));
            }
            rows.push(row);
        }
        Ok(Self { base_dir: base_dir.into(), rows, index })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn row(&self, patient: &str) -> Option<&ManifestRow> {
        self.index.get(patient).map(|&i| &self.rows[i])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Patient ids with their stratification label (more severe side).
    pub fn stratification(&self) -> Vec<(String, LesionClass)> {
        self.rows.iter().map(|r| (r.patient_id.clone(), max_label(r.label_left, r.label_right))).collect()
    }

    /// Reads every volume a row references.
    pub fn load_study(&self, row: &ManifestRow) -> Result<Study> {
        let pre = read_nifti(self.resolve(&row.pre_path))?;
        let posts = row.post_paths.iter().map(|p| read_nifti(self.resolve(p))).collect::<Result<Vec<_>>>()?;
        let mask = row.mask_path.as_deref().map(|p| read_nifti(self.resolve(p))).transpose()?;
        let mut sources = vec![row.pre_path.clone()];
        sources.extend(row.post_paths.iter().cloned());
        sources.extend(row.mask_path.iter().cloned());
        Ok(Study { patient_id: row.patient_id.clone(), pre: Some(pre), posts, mask, sources })
    }
}

/// Where training and evaluation get per-breast labels from.
pub trait LabelSource: Sync {
    fn label(&self, patient: &str, side: Side) -> Option<LesionClass>;
}

impl LabelSource for Manifest {
    fn label(&self, patient: &str, side: Side) -> Option<LesionClass> {
        self.row(patient).map(|r| r.label(side))
    }
}

/// Wraps a label source and records which patients were looked up.
pub struct AuditedLabels<'a> {
    inner: &'a dyn LabelSource,
    accessed: Mutex<BTreeSet<String>>,
}

impl<'a> AuditedLabels<'a> {
    pub fn new(inner: &'a dyn LabelSource) -> Self {
        Self { inner, accessed: Mutex::new(BTreeSet::new()) }
    }

    pub fn accessed(&self) -> BTreeSet<String> {
        self.accessed.lock().expect("audit lock").clone()
    }
}

impl LabelSource for AuditedLabels<'_> {
    fn label(&self, patient: &str, side: Side) -> Option<LesionClass> {
        self.accessed.lock().expect("audit lock").insert(patient.to_string());
        self.inner.label(patient, side)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OK: &str = "patient_id,pre_path,post_paths,mask_path,label_left,label_right\n\
        A,a/pre.nii,a/p1.nii;a/p2.nii,a/m.nii,benign,no_lesion\n\
        B,/abs/pre.nii,b/p1.nii; b/p2.nii ;b/p3.nii,,no_lesion,malignant\n";

    #[test]
    fn parses_rows() {
        let m = Manifest::parse(OK.as_bytes(), "/data").unwrap();
        assert_eq!(m.len(), 2);
        let b = m.row("B").unwrap();
        assert_eq!(b.post_paths, ["b/p1.nii", "b/p2.nii", "b/p3.nii"]);
        assert_eq!(b.mask_path, None);
        assert_eq!(m.resolve(&b.pre_path), PathBuf::from("/abs/pre.nii"));
        assert_eq!(m.resolve("a/pre.nii"), PathBuf::from("/data/a/pre.nii"));
        assert_eq!(
            m.stratification(),
            [("A".to_string(), LesionClass::Benign), ("B".to_string(), LesionClass::Malignant)]
        );
        assert_eq!(m.label("A", Side::Left), Some(LesionClass::Benign));
    }

    #[test]
    fn rejects_bad_manifests() {
        let bad = [
            "patient_id,pre_path,post_paths,mask_path,label_left\nA,p,x;y,,benign\n",
            "patient_id,pre_path,post_paths,mask_path,label_left,label_right\nA,p,x,,benign,benign\n",
            "patient_id,pre_path,post_paths,mask_path,label_left,label_right\nA,p,x;y,,cancer,benign\n",
            "patient_id,pre_path,post_paths,mask_path,label_left,label_right\nA,p,x;y,,benign,benign\nA,p,x;y,,benign,benign\n",
        ];
        for text in bad {
            assert!(matches!(Manifest::parse(text.as_bytes(), "."), Err(Error::ManifestParse(_))), "{text}");
        }
    }

    #[test]
    fn audit_records_lookups() {
        let m = Manifest::parse(OK.as_bytes(), ".").unwrap();
        let audited = AuditedLabels::new(&m);
        assert_eq!(audited.label("B", Side::Right), Some(LesionClass::Malignant));
        assert_eq!(audited.accessed().into_iter().collect::<Vec<_>>(), ["B"]);
    }
}
