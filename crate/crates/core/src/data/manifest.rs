use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageArray};

use super::stem_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lesion {
    Irma,
    Npa,
    Nv,
}

impl Lesion {
    pub const ALL: [Lesion; 3] = [Lesion::Irma, Lesion::Npa, Lesion::Nv];

    pub fn as_str(self) -> &'static str {
        match self {
            Lesion::Irma => "IRMA",
            Lesion::Npa => "NPA",
            Lesion::Nv => "NV",
        }
    }
}

impl fmt::Display for Lesion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lesion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "IRMA" | "IRMAS" => Ok(Lesion::Irma),
            "NPA" | "NPAS" => Ok(Lesion::Npa),
            "NV" => Ok(Lesion::Nv),
            other => Err(Error::invalid(format!(
                "unknown lesion `{other}` (expected IRMA, NPA or NV)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegEntry {
    /// File name under `images/`.
    pub image: String,
    pub image_path: PathBuf,
    /// `None` means the image is not annotated for that lesion.
    pub masks: BTreeMap<Lesion, Option<PathBuf>>,
}

impl SegEntry {
    pub fn stem(&self) -> String {
        stem_of(&self.image)
    }

    pub fn mask(&self, lesion: Lesion) -> Option<&Path> {
        self.masks.get(&lesion).and_then(|m| m.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegManifest {
    pub root: PathBuf,
    pub entries: Vec<SegEntry>,
}

impl SegManifest {
    /// Indices of entries annotated for `lesion`.
    pub fn annotated(&self, lesion: Lesion) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].mask(lesion).is_some())
            .collect()
    }

    /// Writes the `image,IRMA,NPA,NV` listing; mask cells hold paths relative to
    /// the root, empty when unannotated.
    pub fn write_listing(&self, path: &Path) -> Result<()> {
        let mut out = String::from("image,IRMA,NPA,NV\n");
        for e in &self.entries {
            out.push_str(&e.image);
            for lesion in Lesion::ALL {
                out.push(',');
                if let Some(p) = e.mask(lesion) {
                    let rel = p.strip_prefix(&self.root).unwrap_or(p);
                    out.push_str(&rel.to_string_lossy());
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_listing(root: &Path, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::parse(&name, 1, e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["image", "IRMA", "NPA", "NV"] {
            return Err(Error::parse(&name, 1, "expected header `image,IRMA,NPA,NV`"));
        }
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(&name, i + 2, e.to_string()))?;
            let image = rec[0].to_string();
            let mut masks = BTreeMap::new();
            for (j, lesion) in Lesion::ALL.into_iter().enumerate() {
                let cell = &rec[j + 1];
                masks.insert(
                    lesion,
                    (!cell.is_empty()).then(|| root.join(cell)),
                );
            }
            entries.push(SegEntry {
                image_path: root.join("images").join(&image),
                image,
                masks,
            });
        }
        Ok(SegManifest {
            root: root.to_path_buf(),
            entries,
        })
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Scans `<root>/images` and `<root>/masks/{IRMA,NPA,NV}`.
///
/// A mask is attached when a file with the same stem exists in the lesion
/// directory. Every image and mask is decoded to validate it.
pub fn load_seg_manifest(root: &Path) -> Result<SegManifest> {
    let images_dir = root.join("images");
    let names = list_pngs(&images_dir)?;
    if names.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no images under {}",
            images_dir.display()
        )));
    }
    let mut lesion_files: BTreeMap<Lesion, BTreeMap<String, PathBuf>> = BTreeMap::new();
    for lesion in Lesion::ALL {
        let dir = root.join("masks").join(lesion.as_str());
        let mut by_stem = BTreeMap::new();
        if dir.is_dir() {
            for name in list_pngs(&dir)? {
                by_stem.insert(stem_of(&name), dir.join(&name));
            }
        }
        lesion_files.insert(lesion, by_stem);
    }

    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let image_path = images_dir.join(&name);
        let img = ImageArray::load(&image_path)?;
        let stem = stem_of(&name);
        let mut masks = BTreeMap::new();
        for lesion in Lesion::ALL {
            let found = lesion_files[&lesion].get(&stem).cloned();
            if let Some(path) = &found {
                let m = BinaryMask::load(path)?;
                if (m.height(), m.width()) != (img.height(), img.width()) {
                    return Err(Error::ShapeMismatch(format!(
                        "{}: mask is {}x{} but image is {}x{}",
                        path.display(),
                        m.height(),
                        m.width(),
                        img.height(),
                        img.width()
                    )));
                }
            }
            masks.insert(lesion, found);
        }
        entries.push(SegEntry {
            image: name,
            image_path,
            masks,
        });
    }
    Ok(SegManifest {
        root: root.to_path_buf(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClsEntry {
    pub image: String,
    pub image_path: PathBuf,
    pub label: usize,
}

impl ClsEntry {
    pub fn stem(&self) -> String {
        stem_of(&self.image)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClsManifest {
    pub root: PathBuf,
    pub entries: Vec<ClsEntry>,
    pub class_count: usize,
}

impl ClsManifest {
    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn images(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.image.clone()).collect()
    }

    pub fn write_labels(&self, path: &Path) -> Result<()> {
        let mut out = String::from("image,label\n");
        for e in &self.entries {
            out.push_str(&format!("{},{}\n", e.image, e.label));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Builds a manifest from a `labels.csv` file whose images live under
    /// `<dir of file>/images`. Image files are not required to exist.
    pub fn from_labels_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = parse_labels_csv(&text, &path.display().to_string())?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_rows(&root, rows)
    }

    fn from_rows(root: &Path, rows: Vec<(String, usize)>) -> Result<Self> {
        let class_count = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0).max(2);
        let entries = rows
            .into_iter()
            .map(|(image, label)| ClsEntry {
                image_path: root.join("images").join(&image),
                image,
                label,
            })
            .collect();
        Ok(ClsManifest {
            root: root.to_path_buf(),
            entries,
            class_count,
        })
    }
}

/// Parses a `labels.csv` body (`image,label`). Duplicate images are rejected.
pub fn parse_labels_csv(text: &str, source_name: &str) -> Result<Vec<(String, usize)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    if headers.len() != 2 || headers[0].trim() != "image" || headers[1].trim() != "label" {
        return Err(Error::parse(source_name, 1, "expected header `image,label`"));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::parse(source_name, line, "expected 2 fields"));
        }
        let image = rec[0].trim().to_string();
        if image.is_empty() {
            return Err(Error::parse(source_name, line, "empty image name"));
        }
        let label = rec[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::parse(source_name, line, format!("bad label: {e}")))?;
        if label > 1024 {
            return Err(Error::parse(source_name, line, "label out of range"));
        }
        if !seen.insert(image.clone()) {
            return Err(Error::parse(source_name, line, format!("duplicate image `{image}`")));
        }
        rows.push((image, label));
    }
    Ok(rows)
}

/// Reads `<root>/labels.csv` and checks that every listed image exists.
pub fn load_cls_manifest(root: &Path) -> Result<ClsManifest> {
    let path = root.join("labels.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let rows = parse_labels_csv(&text, &path.display().to_string())?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{} lists no images", path.display())));
    }
    let m = ClsManifest::from_rows(root, rows)?;
    for e in &m.entries {
        if !e.image_path.is_file() {
            return Err(Error::io(
                &e.image_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "listed image is missing"),
            ));
        }
    }
    Ok(m)
}
