//! Sample/manifest data model: the manifest CSV schema, class-balance
//! statistics and a deterministic synthetic dataset generator.

mod synth;

pub use synth::{generate_synthetic_dataset, render_synthetic_sample, SynthOptions};

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Expected side length of every sample crop, in pixels.
pub const IMAGE_SIZE: u32 = 128;

/// Label value for normal mitotic figures (the negative class).
pub const LABEL_NMF: u8 = 0;
/// Label value for atypical mitotic figures (the positive class).
pub const LABEL_AMF: u8 = 1;

/// One labeled cell crop with its acquisition provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    /// Path to the PNG, possibly relative to the manifest location.
    pub image_path: PathBuf,
    /// 0 = NMF, 1 = AMF.
    pub label: u8,
    pub domain_id: String,
    pub case_id: String,
}

/// An ordered sample catalog with class counts kept consistent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub n_nmf: u64,
    pub n_amf: u64,
    /// Directory relative image paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Build from records, recomputing counts. The base dir resolves
    /// relative image paths.
    pub fn from_records(records: Vec<SampleRecord>, base_dir: PathBuf) -> Self {
        let n_amf = records.iter().filter(|r| r.label == LABEL_AMF).count() as u64;
        let n_nmf = records.len() as u64 - n_amf;
        DatasetManifest {
            records,
            n_nmf,
            n_amf,
            base_dir,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Absolute (or caller-relative) path of a record's image.
    pub fn image_path(&self, record: &SampleRecord) -> PathBuf {
        if record.image_path.is_absolute() {
            record.image_path.clone()
        } else {
            self.base_dir.join(&record.image_path)
        }
    }
}

/// Parse a label token: NMF/AMF names (case-insensitive) or 0/1 digits.
pub fn parse_label(token: &str) -> Option<u8> {
    match token.trim() {
        t if t.eq_ignore_ascii_case("nmf") => Some(LABEL_NMF),
        t if t.eq_ignore_ascii_case("amf") => Some(LABEL_AMF),
        "0" => Some(LABEL_NMF),
        "1" => Some(LABEL_AMF),
        _ => None,
    }
}

/// Canonical label name written to manifests.
pub fn label_name(label: u8) -> &'static str {
    if label == LABEL_AMF {
        "AMF"
    } else {
        "NMF"
    }
}

const MANIFEST_HEADER: [&str; 5] = ["sample_id", "image_path", "label", "domain", "case_id"];

/// Load a manifest CSV (`sample_id,image_path,label,domain,case_id`).
/// Lines starting with `#` are ignored. With `validate_images` set, every
/// referenced image must decode to 128x128 RGB.
pub fn load_manifest(path: &Path, validate_images: bool) -> Result<DatasetManifest> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);

    {
        let headers = reader.headers().map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let found: Vec<&str> = headers.iter().collect();
        if found != MANIFEST_HEADER {
            return Err(Error::BadPredictionFile {
                path: path.to_path_buf(),
                reason: format!(
                    "manifest header {:?} does not match {:?}",
                    found, MANIFEST_HEADER
                ),
            });
        }
    }

    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let field = |i: usize, name: &'static str| -> Result<String> {
            match row.get(i) {
                Some(v) if !v.is_empty() => Ok(v.to_string()),
                _ => Err(Error::MissingField {
                    row: idx + 1,
                    field: name,
                }),
            }
        };
        let sample_id = field(0, "sample_id")?;
        if !seen.insert(sample_id.clone()) {
            return Err(Error::DuplicateSampleId {
                row: idx + 1,
                sample_id,
            });
        }
        let image_path = PathBuf::from(field(1, "image_path")?);
        let label_token = field(2, "label")?;
        let label = parse_label(&label_token).ok_or(Error::UnknownLabel {
            row: idx + 1,
            token: label_token,
        })?;
        let domain_id = field(3, "domain")?;
        let case_id = field(4, "case_id")?;
        records.push(SampleRecord {
            sample_id,
            image_path,
            label,
            domain_id,
            case_id,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyManifest {
            path: path.to_path_buf(),
        });
    }
    let manifest = DatasetManifest::from_records(records, base_dir);
    if validate_images {
        for record in &manifest.records {
            load_sample_image(&manifest.image_path(record))?;
        }
    }
    Ok(manifest)
}

/// Write a manifest CSV. An optional config fingerprint is embedded as a
/// leading `#` comment so provenance travels with the artifact.
pub fn save_manifest(
    manifest: &DatasetManifest,
    path: &Path,
    fingerprint: Option<&str>,
) -> Result<()> {
    let mut out = String::new();
    if let Some(fp) = fingerprint {
        out.push_str(&format!("# config_fingerprint={fp}\n"));
    }
    out.push_str(&MANIFEST_HEADER.join(","));
    out.push('\n');
    for r in &manifest.records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.sample_id,
            r.image_path.display(),
            label_name(r.label),
            r.domain_id,
            r.case_id
        ));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Decode an RGB image and enforce the 128x128x3 sample contract.
pub fn load_sample_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w != IMAGE_SIZE || h != IMAGE_SIZE {
        return Err(Error::BadImageDimensions {
            path: path.to_path_buf(),
            width: w,
            height: h,
            expected: IMAGE_SIZE,
        });
    }
    Ok(rgb)
}

/// Class counts and the AMF fraction of a manifest.
pub fn class_balance(manifest: &DatasetManifest) -> (u64, u64, f64) {
    let total = manifest.n_nmf + manifest.n_amf;
    let fraction = if total == 0 {
        0.0
    } else {
        manifest.n_amf as f64 / total as f64
    };
    (manifest.n_nmf, manifest.n_amf, fraction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("manifest.csv");
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn load_two_row_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "sample_id,image_path,label,domain,case_id\n\
             s1,images/s1.png,NMF,0,case_a\n\
             s2,images/s2.png,AMF,1,case_b\n",
        );
        let m = load_manifest(&path, false).unwrap();
        assert_eq!((m.n_nmf, m.n_amf), (1, 1));
        assert_eq!(m.records[0].label, LABEL_NMF);
        assert_eq!(m.records[1].label, LABEL_AMF);
        assert_eq!(m.records[1].domain_id, "1");
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "sample_id,image_path,label,domain,case_id\n");
        assert!(matches!(
            load_manifest(&path, false),
            Err(Error::EmptyManifest { .. })
        ));
    }

    #[test]
    fn labels_parse_case_insensitively() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "sample_id,image_path,label,domain,case_id\n\
             s1,a.png,amf,0,c\n\
             s2,b.png,nmf,0,c\n\
             s3,c.png,1,0,c\n\
             s4,d.png,0,0,c\n",
        );
        let m = load_manifest(&path, false).unwrap();
        let labels: Vec<u8> = m.records.iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![1, 0, 1, 0]);
    }

    #[test]
    fn unknown_label_and_duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "sample_id,image_path,label,domain,case_id\ns1,a.png,atypical,0,c\n",
        );
        assert!(matches!(
            load_manifest(&path, false),
            Err(Error::UnknownLabel { row: 1, .. })
        ));

        let path = write_csv(
            dir.path(),
            "sample_id,image_path,label,domain,case_id\ns1,a.png,NMF,0,c\ns1,b.png,AMF,0,c\n",
        );
        assert!(matches!(
            load_manifest(&path, false),
            Err(Error::DuplicateSampleId { .. })
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_manifest(Path::new("/nonexistent/m.csv"), false),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn image_validation_flag_catches_missing_and_undecodable() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "sample_id,image_path,label,domain,case_id\ns1,missing.png,NMF,0,c\n",
        );
        // Without the flag the manifest loads; with it, the image must exist.
        assert!(load_manifest(&path, false).is_ok());
        assert!(matches!(
            load_manifest(&path, true),
            Err(Error::Image { .. })
        ));

        std::fs::write(dir.path().join("missing.png"), b"not a png").unwrap();
        assert!(matches!(
            load_manifest(&path, true),
            Err(Error::Image { .. })
        ));

        // Wrong dimensions are rejected too.
        let small = image::RgbImage::new(64, 64);
        small.save(dir.path().join("missing.png")).unwrap();
        assert!(matches!(
            load_manifest(&path, true),
            Err(Error::BadImageDimensions { .. })
        ));
    }

    #[test]
    fn save_load_roundtrip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            SampleRecord {
                sample_id: "a".into(),
                image_path: "images/a.png".into(),
                label: 1,
                domain_id: "2".into(),
                case_id: "case_x".into(),
            },
            SampleRecord {
                sample_id: "b".into(),
                image_path: "images/b.png".into(),
                label: 0,
                domain_id: "0".into(),
                case_id: "case_y".into(),
            },
        ];
        let manifest = DatasetManifest::from_records(records.clone(), dir.path().into());
        let path = dir.path().join("m.csv");
        save_manifest(&manifest, &path, Some("deadbeef")).unwrap();
        let loaded = load_manifest(&path, false).unwrap();
        assert_eq!(loaded.records, records);
        assert_eq!((loaded.n_nmf, loaded.n_amf), (1, 1));
    }

    #[test]
    fn class_balance_examples() {
        let mk = |n_nmf: usize, n_amf: usize| {
            let mut records = Vec::new();
            for i in 0..n_nmf {
                records.push(SampleRecord {
                    sample_id: format!("n{i}"),
                    image_path: "x.png".into(),
                    label: 0,
                    domain_id: "0".into(),
                    case_id: "c".into(),
                });
            }
            for i in 0..n_amf {
                records.push(SampleRecord {
                    sample_id: format!("a{i}"),
                    image_path: "x.png".into(),
                    label: 1,
                    domain_id: "0".into(),
                    case_id: "c".into(),
                });
            }
            DatasetManifest::from_records(records, PathBuf::from("."))
        };

        // The corpus-scale class imbalance: 10191 NMF vs 1748 AMF.
        let (_, _, frac) = class_balance(&mk(10191, 1748));
        assert!((frac - 0.1464).abs() < 1e-4);

        let (_, _, frac) = class_balance(&mk(5, 5));
        assert_eq!(frac, 0.5);

        let (_, _, frac) = class_balance(&mk(3, 1));
        assert_eq!(frac, 0.25);
    }
}
