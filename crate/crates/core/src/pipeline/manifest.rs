use super::{PipelineError, Result};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: u8,
    pub mask: Option<PathBuf>,
}

/// Images to analyse, one CSV row each: `id,path,label[,mask]`. Relative
/// paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn merr(msg: String) -> PipelineError {
    PipelineError::Manifest(msg)
}

/// Accepts 0/1 or benign/malignant.
fn parse_label(s: &str) -> Option<u8> {
    match s.trim().to_ascii_lowercase().as_str() {
        "0" | "benign" => Some(0),
        "1" | "malignant" => Some(1),
        _ => None,
    }
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut r = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| merr(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = r.headers().map_err(|e| merr(e.to_string()))?.iter().map(str::to_string).collect();
        let has_mask = match header.as_slice() {
            [a, b, c] if a == "id" && b == "path" && c == "label" => false,
            [a, b, c, d] if a == "id" && b == "path" && c == "label" && d == "mask" => true,
            _ => return Err(merr(format!("{}: header must be id,path,label[,mask], got {header:?}", path.display()))),
        };
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut entries = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| merr(e.to_string()))?;
            let row = line + 2;
            if rec.len() < 3 || rec.len() > header.len() {
                return Err(merr(format!("row {row}: expected {} fields, got {}", header.len(), rec.len())));
            }
            let label = parse_label(&rec[2]).ok_or_else(|| merr(format!("row {row}: label {:?} is not 0/1/benign/malignant", &rec[2])))?;
            let mask = match rec.get(3) {
                Some(m) if has_mask && !m.is_empty() => Some(resolve(m)),
                _ => None,
            };
            entries.push(ManifestEntry { id: rec[0].to_string(), path: resolve(&rec[1]), label, mask });
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| merr(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let with_mask = self.entries.iter().any(|e| e.mask.is_some());
        if with_mask {
            w.write_record(["id", "path", "label", "mask"]).map_err(err)?;
        } else {
            w.write_record(["id", "path", "label"]).map_err(err)?;
        }
        for e in &self.entries {
            let mut rec = vec![e.id.clone(), e.path.display().to_string(), e.label.to_string()];
            if with_mask {
                rec.push(e.mask.as_ref().map(|m| m.display().to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|source| PipelineError::Io { path: path.display().to_string(), source })
    }

    /// Unique nonempty ids, existing image and mask files, at least one entry.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(merr("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.id.is_empty() || !seen.insert(e.id.as_str()) {
                return Err(merr(format!("id {:?} is empty or duplicated", e.id)));
            }
            if !e.path.is_file() {
                return Err(merr(format!("{}: image {} does not exist", e.id, e.path.display())));
            }
            if let Some(m) = &e.mask {
                if !m.is_file() {
                    return Err(merr(format!("{}: mask {} does not exist", e.id, m.display())));
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        std::fs::write(dir.join(name), b"x").unwrap();
    }

    #[test]
    fn read_resolve_validate() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        touch(dir.path(), "b.png");
        touch(dir.path(), "bm.png");
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "id,path,label,mask\na,a.png,benign,\nb,b.png,1,bm.png\n").unwrap();
        let m = Manifest::read(&p).unwrap();
        assert_eq!(m.labels(), vec![0, 1]);
        assert_eq!(m.entries[0].mask, None);
        assert_eq!(m.entries[1].mask.as_deref(), Some(dir.path().join("bm.png").as_path()));
        m.validate().unwrap();
        let q = dir.path().join("n.csv");
        m.write(&q).unwrap();
        assert_eq!(Manifest::read(&q).unwrap(), m);
    }

    #[test]
    fn rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        let p = dir.path().join("m.csv");
        for text in ["id,file,label\na,a.png,0\n", "id,path,label\na,a.png,2\n"] {
            std::fs::write(&p, text).unwrap();
            assert!(Manifest::read(&p).is_err(), "{text}");
        }
        for text in ["id,path,label\na,a.png,0\na,a.png,1\n", "id,path,label\na,missing.png,0\n", "id,path,label\n"] {
            std::fs::write(&p, text).unwrap();
            assert!(Manifest::read(&p).unwrap().validate().is_err(), "{text}");
        }
    }
}
