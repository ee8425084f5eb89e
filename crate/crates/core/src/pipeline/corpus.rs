//! Toy corpus on disk: PNG images, a JSON manifest and CSV annotations.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{create_dir, read_png, read_to_string, write_atomic, write_png};
use super::toyface::{make_toy_face, ToyFaceParams, TOY_LANDMARKS};
use crate::began::LatentVector;
use crate::diffcore::{Element, Tensor};
use crate::error::{Error, Result};
use crate::lgen::{LandmarkSet, TrainingPair};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LANDMARK_FILE: &str = "landmarks.csv";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Image path relative to the manifest's directory.
    pub image: String,
    pub landmarks: LandmarkSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub image_size: usize,
    pub landmark_count: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.landmarks.count() != self.landmark_count {
                return Err(Error::Config(format!(
                    "{} has {} landmarks, manifest declares {}",
                    e.image,
                    e.landmarks.count(),
                    self.landmark_count
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: CorpusManifest =
            serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::Format {
                path: path.into(),
                msg: e.to_string(),
            })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn landmark_rows(&self) -> Vec<(String, LandmarkSet)> {
        self.entries
            .iter()
            .map(|e| (e.image.clone(), e.landmarks.clone()))
            .collect()
    }

    /// Loads every image, checking its size against the manifest.
    pub fn load_images<T: Element>(&self, root: &Path, channels: usize) -> Result<Vec<Tensor<T>>> {
        self.entries
            .par_iter()
            .map(|e| {
                let path = root.join(&e.image);
                let img = read_png::<T>(&path, channels)?;
                if img.shape()[1..] != [self.image_size, self.image_size] {
                    return Err(Error::Config(format!(
                        "{} is {}x{}, manifest declares {}",
                        path.display(),
                        img.shape()[2],
                        img.shape()[1],
                        self.image_size
                    )));
                }
                Ok(img)
            })
            .collect()
    }
}

/// Directory that relative manifest paths resolve against.
pub fn manifest_root(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn sample_params(n: usize, seed: u64) -> Vec<ToyFaceParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| ToyFaceParams::sample(&mut rng)).collect()
}

/// The faces `build_corpus` would write for the same arguments, kept in
/// memory at full precision.
pub fn render_corpus<T: Element>(
    n: usize,
    image_size: usize,
    seed: u64,
) -> Result<Vec<(Tensor<T>, LandmarkSet)>> {
    sample_params(n, seed)
        .par_iter()
        .map(|p| make_toy_face::<T>(p, image_size))
        .collect()
}

/// Renders `n` seeded toy faces into `out_dir`.
pub fn build_corpus(
    n: usize,
    image_size: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    if n == 0 {
        return Err(Error::Argument("corpus size must be at least 1".into()));
    }
    create_dir(&out_dir.join(IMAGE_DIR))?;
    let entries = sample_params(n, seed)
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (img, landmarks) = make_toy_face::<f32>(p, image_size)?;
            let image = format!("{IMAGE_DIR}/face_{i:05}.png");
            write_png(&out_dir.join(&image), &img)?;
            Ok(ManifestEntry {
                image,
                landmarks,
                latent: None,
                err_final: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest {
        image_size,
        landmark_count: TOY_LANDMARKS,
        seed,
        entries,
    };
    write_landmark_csv(
        &out_dir.join(LANDMARK_FILE),
        &manifest.landmark_rows(),
        TOY_LANDMARKS,
    )?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn fmt6(v: f64) -> String {
    let s = format!("{v:.6}");
    // avoid a signed zero in the text form
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn landmark_header(count: usize) -> Vec<String> {
    (1..=count)
        .flat_map(|i| [format!("x{i}"), format!("y{i}")])
        .collect()
}

fn csv_bytes(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Landmark CSV text: `image,x1,y1,…` with six fractional digits.
pub fn landmark_csv(rows: &[(String, LandmarkSet)], count: usize) -> Result<Vec<u8>> {
    let mut header = vec!["image".to_string()];
    header.extend(landmark_header(count));
    for (name, l) in rows {
        if l.count() != count {
            return Err(Error::Shape(format!(
                "{name} has {} landmarks, expected {count}",
                l.count()
            )));
        }
    }
    Ok(csv_bytes(
        header,
        rows.iter().map(|(name, l)| {
            let mut r = vec![name.clone()];
            r.extend(l.flat().into_iter().map(fmt6));
            r
        }),
    ))
}

pub fn write_landmark_csv(path: &Path, rows: &[(String, LandmarkSet)], count: usize) -> Result<()> {
    write_atomic(path, &landmark_csv(rows, count)?)
}

/// Training-pair CSV text: `image,z1..zN,x1,y1,…`.
pub fn pair_csv(pairs: &[TrainingPair], n_z: usize, count: usize) -> Result<Vec<u8>> {
    let mut header = vec!["image".to_string()];
    header.extend((1..=n_z).map(|i| format!("z{i}")));
    header.extend(landmark_header(count));
    for p in pairs {
        if p.z.dim() != n_z || p.target.count() != count {
            return Err(Error::Shape(format!(
                "pair {} does not match n_z {n_z} / {count} landmarks",
                p.image_ref
            )));
        }
    }
    Ok(csv_bytes(
        header,
        pairs.iter().map(|p| {
            let mut r = vec![p.image_ref.clone()];
            r.extend(p.z.values().iter().map(|&v| fmt6(v)));
            r.extend(p.target.flat().into_iter().map(fmt6));
            r
        }),
    ))
}

pub fn write_pair_csv(path: &Path, pairs: &[TrainingPair], n_z: usize, count: usize) -> Result<()> {
    write_atomic(path, &pair_csv(pairs, n_z, count)?)
}

struct Table {
    header: Vec<String>,
    rows: Vec<(String, Vec<f64>)>,
}

fn read_table(path: &Path, bytes: &[u8]) -> Result<Table> {
    let fail = |msg: String| Error::Format {
        path: path.into(),
        msg,
    };
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| fail(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("image") {
        return Err(fail("first column must be `image`".into()));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| fail(format!("row {}: {s:?}: {e}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((rec[0].to_string(), values));
    }
    Ok(Table { header, rows })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn parse_landmark_csv(path: &Path, bytes: &[u8]) -> Result<Vec<(String, LandmarkSet)>> {
    let t = read_table(path, bytes)?;
    let count = (t.header.len() - 1) / 2;
    if t.header[1..] != landmark_header(count)[..] {
        return Err(Error::Format {
            path: path.into(),
            msg: "landmark header must be image,x1,y1,...".into(),
        });
    }
    t.rows
        .into_iter()
        .map(|(name, v)| {
            let l = LandmarkSet::from_flat(&v)
                .map_err(|e| e.context(format!("{}: {name}", path.display())))?;
            Ok((name, l))
        })
        .collect()
}

pub fn read_landmark_csv(path: &Path) -> Result<Vec<(String, LandmarkSet)>> {
    parse_landmark_csv(path, &read_bytes(path)?)
}

/// Parses a pair CSV, inferring n_z and the landmark count from the header.
pub fn parse_pair_csv(path: &Path, bytes: &[u8]) -> Result<(Vec<TrainingPair>, usize, usize)> {
    let t = read_table(path, bytes)?;
    let n_z = t.header.iter().filter(|h| h.starts_with('z')).count();
    let count = (t.header.len() - 1 - n_z) / 2;
    let mut expected: Vec<String> = (1..=n_z).map(|i| format!("z{i}")).collect();
    expected.extend(landmark_header(count));
    if n_z == 0 || count == 0 || t.header[1..] != expected[..] {
        return Err(Error::Format {
            path: path.into(),
            msg: "pair header must be image,z1..zN,x1,y1,...".into(),
        });
    }
    let pairs = t
        .rows
        .into_iter()
        .map(|(image_ref, v)| {
            let ctx = |e: Error| e.context(format!("{}: {image_ref}", path.display()));
            Ok(TrainingPair {
                z: LatentVector::new(v[..n_z].to_vec()).map_err(ctx)?,
                target: LandmarkSet::from_flat(&v[n_z..]).map_err(ctx)?,
                image_ref,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pairs, n_z, count))
}

pub fn read_pair_csv(path: &Path) -> Result<(Vec<TrainingPair>, usize, usize)> {
    parse_pair_csv(path, &read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_face_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_corpus(1, 16, 4, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert!(dir.path().join(&m.entries[0].image).exists());
        let loaded = CorpusManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, m);
        let imgs = loaded.load_images::<f32>(dir.path(), 3).unwrap();
        assert_eq!(imgs[0].shape(), &[3, 16, 16]);
        let rows = read_landmark_csv(&dir.path().join(LANDMARK_FILE)).unwrap();
        assert_eq!(rows[0].0, m.entries[0].image);
        assert!(matches!(
            build_corpus(0, 16, 4, dir.path()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn corpus_is_seed_determined() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = build_corpus(5, 16, 9, a.path()).unwrap();
        let mb = build_corpus(5, 16, 9, b.path()).unwrap();
        assert_eq!(ma, mb);
        for f in [MANIFEST_FILE, LANDMARK_FILE, "images/face_00003.png"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn csv_formats() {
        let rows = vec![
            (
                "a.png".to_string(),
                LandmarkSet::new(vec![(0.25, 0.5), (1.0 / 3.0, 0.0)]).unwrap(),
            ),
            (
                "b,c.png".to_string(),
                LandmarkSet::new(vec![(1.0, 0.1234564), (0.1234565, 0.9999999)]).unwrap(),
            ),
        ];
        let text = landmark_csv(&rows, 2).unwrap();
        let s = String::from_utf8(text.clone()).unwrap();
        assert!(s.starts_with("image,x1,y1,x2,y2\na.png,0.250000,0.500000,0.333333,0.000000\n"));
        let back = parse_landmark_csv(Path::new("t.csv"), &text).unwrap();
        assert_eq!(back[1].0, "b,c.png");
        assert_eq!(landmark_csv(&back, 2).unwrap(), text);
        assert!(landmark_csv(&rows, 3).is_err());

        let pairs = vec![TrainingPair {
            image_ref: "a.png".into(),
            z: LatentVector::new(vec![-0.5, -1e-9]).unwrap(),
            target: LandmarkSet::new(vec![(0.5, 0.5)]).unwrap(),
        }];
        let text = pair_csv(&pairs, 2, 1).unwrap();
        assert_eq!(
            String::from_utf8(text.clone()).unwrap(),
            "image,z1,z2,x1,y1\na.png,-0.500000,0.000000,0.500000,0.500000\n"
        );
        let (back, n_z, count) = parse_pair_csv(Path::new("p.csv"), &text).unwrap();
        assert_eq!((n_z, count), (2, 1));
        assert_eq!(pair_csv(&back, 2, 1).unwrap(), text);
        assert_eq!(
            String::from_utf8(pair_csv(&[], 2, 1).unwrap()).unwrap(),
            "image,z1,z2,x1,y1\n"
        );
    }

    #[test]
    fn malformed_csv_is_a_format_error() {
        let e = parse_landmark_csv(Path::new("t.csv"), b"name,x1,y1\na,0.1,0.2\n").unwrap_err();
        assert!(matches!(e, Error::Format { .. }));
        let e = parse_landmark_csv(Path::new("t.csv"), b"image,x1,y1\na,0.1,zz\n").unwrap_err();
        assert!(matches!(e, Error::Format { .. }));
        assert_eq!(e.exit_code(), 2);
    }
}
