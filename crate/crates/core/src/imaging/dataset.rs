use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::decode::{ImageDecoder, NetpbmDecoder};
use super::{class_index, edge_detect, preprocess, GrayImage, ImagingError, CLASS_NAMES};
use crate::rng;
use crate::train::Example;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    /// Preprocessed 48×48 pixels in `[0, 1]`.
    pub pixels: GrayImage,
    pub label: usize,
    pub source_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ImageSample>,
    pub split: Split,
}

impl Dataset {
    pub fn class_names(&self) -> [&'static str; 7] {
        CLASS_NAMES
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 7] {
        let mut counts = [0; 7];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Copy with every image replaced by its thresholded edge map.
    pub fn edge_detected(&self, theta: f64) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .map(|s| ImageSample {
                    pixels: edge_detect(&s.pixels, theta),
                    ..s.clone()
                })
                .collect(),
            split: self.split,
        }
    }

    pub fn examples(&self) -> Vec<Example> {
        self.samples
            .iter()
            .map(|s| Example {
                input: s.pixels.to_tensor(),
                label: s.label,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Per-class shuffle with a seed-derived stream, then the first
/// `round(n · test_fraction)` samples of each class go to the test split.
pub fn split_stratified(samples: Vec<ImageSample>, config: &SplitConfig) -> Result<(Dataset, Dataset), ImagingError> {
    if !(0.0..=1.0).contains(&config.test_fraction) {
        return Err(ImagingError::Split(format!("test_fraction {} outside [0, 1]", config.test_fraction)));
    }
    let mut by_class: Vec<Vec<ImageSample>> = vec![Vec::new(); CLASS_NAMES.len()];
    for s in samples {
        by_class[s.label].push(s);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut group) in by_class.into_iter().enumerate() {
        group.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        group.shuffle(&mut rng::seeded(rng::derive_seed(config.seed, label as u64)));
        let n_test = (group.len() as f64 * config.test_fraction).round() as usize;
        let rest = group.split_off(n_test);
        test.extend(group);
        train.extend(rest);
    }
    let key = |s: &ImageSample| (s.label, s.source_id.clone());
    train.sort_by_key(key);
    test.sort_by_key(key);
    Ok((
        Dataset {
            samples: train,
            split: Split::Train,
        },
        Dataset {
            samples: test,
            split: Split::Test,
        },
    ))
}

/// Files that could not be read or decoded during ingestion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub loaded: usize,
    pub skipped: Vec<(String, String)>,
}

/// [`ingest_with`] using only the built-in Netpbm decoder.
pub fn ingest(root: &Path, config: &SplitConfig) -> Result<(Dataset, Dataset, IngestReport), ImagingError> {
    ingest_with(root, config, &[&NetpbmDecoder])
}

/// Reads `<root>/<class>/*`, preprocessing every decodable file to 48×48.
/// Undecodable files are skipped and listed in the report.
pub fn ingest_with(
    root: &Path,
    config: &SplitConfig,
    decoders: &[&dyn ImageDecoder],
) -> Result<(Dataset, Dataset, IngestReport), ImagingError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ImagingError::Io { path, source }
    };
    let mut class_dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(io(root))? {
        let entry = entry.map_err(io(root))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !entry.path().is_dir() {
            continue;
        }
        let label = class_index(&name).ok_or_else(|| ImagingError::UnknownClass(name.clone()))?;
        class_dirs.push((name, label, entry.path()));
    }
    class_dirs.sort();
    let mut report = IngestReport::default();
    let mut samples = Vec::new();
    for (class, label, dir) in class_dirs {
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .map_err(io(&dir))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
            .collect();
        files.sort();
        for path in files {
            let id = format!("{class}/{}", path.file_name().unwrap_or_default().to_string_lossy());
            let loaded = std::fs::read(&path)
                .map_err(io(&path))
                .and_then(|bytes| {
                    let dec = decoders.iter().find(|d| d.accepts(&bytes)).ok_or(ImagingError::NoDecoder)?;
                    dec.decode(&bytes)
                })
                .and_then(|img| preprocess(&img.into_gray()));
            match loaded {
                Ok(pixels) => samples.push(ImageSample {
                    pixels,
                    label,
                    source_id: id,
                }),
                Err(e) => {
                    log::warn!("skipping {id}: {e}");
                    report.skipped.push((id, e.to_string()));
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(ImagingError::Empty(root.to_path_buf()));
    }
    report.loaded = samples.len();
    let (train, test) = split_stratified(samples, config)?;
    Ok((train, test, report))
}

/// CSV with header `source_id,split,label`, train rows first.
pub fn write_manifest<W: Write>(out: W, splits: &[&Dataset]) -> Result<(), ImagingError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source_id", "split", "label"])?;
    for ds in splits {
        for s in &ds.samples {
            w.write_record([s.source_id.as_str(), ds.split.as_str(), &s.label.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(per_class: usize) -> Vec<ImageSample> {
        (0..7)
            .flat_map(|label| {
                (0..per_class).map(move |i| ImageSample {
                    pixels: GrayImage::from_fn(48, 48, |_, _| 0.0),
                    label,
                    source_id: format!("{}/{i:03}", CLASS_NAMES[label]),
                })
            })
            .collect()
    }

    #[test]
    fn stratified_counts() {
        let (train, test) = split_stratified(samples(10), &SplitConfig { test_fraction: 0.2, seed: 1 }).unwrap();
        assert_eq!((train.len(), test.len()), (56, 14));
        assert_eq!(test.class_counts(), [2; 7]);
    }

    #[test]
    fn split_depends_only_on_seed() {
        let cfg = SplitConfig { test_fraction: 0.3, seed: 9 };
        let a = split_stratified(samples(10), &cfg).unwrap();
        let b = split_stratified(samples(10), &cfg).unwrap();
        assert_eq!(a, b);
        let c = split_stratified(samples(10), &SplitConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn manifest_has_header_and_rows() {
        let (train, test) = split_stratified(samples(2), &SplitConfig { test_fraction: 0.5, seed: 0 }).unwrap();
        let mut buf = Vec::new();
        write_manifest(&mut buf, &[&train, &test]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "source_id,split,label");
        assert_eq!(lines.len(), 15);
        assert!(lines[1].ends_with(",train,0"));
    }
}
