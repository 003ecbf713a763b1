//! Dataset manifests, fold splitting and the synthetic OCTA-like generator.
//!
//! On-disk layout shared by real and synthetic data:
//!
//! ```text
//! <root>/images/*.png
//! <root>/masks/{IRMA,NPA,NV}/*.png
//! <root>/labels.csv        image,label
//! <root>/folds.csv         image,fold
//! ```

mod folds;
mod manifest;
pub mod synth;

pub use folds::{
    read_folds_csv, split_folds, split_folds_stratified, write_folds_csv, FoldAssignment,
};
pub use manifest::{
    load_cls_manifest, load_seg_manifest, parse_labels_csv, ClsEntry, ClsManifest, Lesion,
    SegEntry, SegManifest,
};
pub use synth::{generate_synthetic, SynthSpec};

/// Stem of an image file name (`images/case_001.png` → `case_001`).
pub fn stem_of(name: &str) -> String {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    match base.rfind('.') {
        Some(i) if i > 0 => base[..i].to_string(),
        _ => base.to_string(),
    }
}
