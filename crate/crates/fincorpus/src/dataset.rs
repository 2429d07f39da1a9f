//! Temporal-then-random dataset splits, instruction-tuning JSONL export and
//! the training-run manifest.

use crate::jsonl;
use crate::label::{render_prompt, LabelSet, LabeledExample, LabelingConfig};
use crate::model::Sentiment;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid split spec: {0}")]
    BadSpec(String),
    #[error("bundle has no examples")]
    EmptyBundle,
    #[error("unknown training preset {0:?}")]
    UnknownPreset(String),
    #[error("manifest at {path} already exists with different contents")]
    ManifestMismatch { path: PathBuf },
    #[error("prompt rendering failed: {0}")]
    Prompt(#[from] crate::label::LabelError),
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad manifest json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub split_date: NaiveDate,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            split_date: NaiveDate::from_ymd_opt(2021, 11, 1).unwrap(),
            valid_fraction: 0.2,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(DatasetError::BadSpec(format!(
                "valid_fraction {} not in (0, 1)",
                self.valid_fraction
            )));
        }
        Ok(())
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "valid", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    /// Per split, per label counts; every label key is always present.
    pub class_counts: BTreeMap<String, BTreeMap<Sentiment, usize>>,
}

impl DatasetBundle {
    pub fn split(&self, name: &str) -> Option<&[LabeledExample]> {
        match name {
            "train" => Some(&self.train),
            "valid" => Some(&self.valid),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn count_classes(examples: &[LabeledExample]) -> BTreeMap<Sentiment, usize> {
    let mut counts: BTreeMap<Sentiment, usize> = Sentiment::ALL.iter().map(|&s| (s, 0)).collect();
    for e in examples {
        *counts.get_mut(&e.label).expect("all variants present") += 1;
    }
    counts
}

/// Everything dated strictly after the split date is test; the rest is
/// shuffled with the pinned PRNG and cut at floor((1 - valid_fraction) * n),
/// remainder to valid. Test keeps input order.
pub fn temporal_then_random_split(
    examples: Vec<LabeledExample>,
    spec: &SplitSpec,
) -> Result<DatasetBundle, DatasetError> {
    spec.validate()?;
    let mut test = Vec::new();
    let mut pool = Vec::new();
    for example in examples {
        if example.entry_date > spec.split_date {
            test.push(example);
        } else {
            pool.push(example);
        }
    }
    crate::rng::shuffle(&mut pool, spec.seed);
    let train_len = ((1.0 - spec.valid_fraction) * pool.len() as f64).floor() as usize;
    let valid = pool.split_off(train_len);
    let train = pool;

    let class_counts = BTreeMap::from([
        ("train".to_string(), count_classes(&train)),
        ("valid".to_string(), count_classes(&valid)),
        ("test".to_string(), count_classes(&test)),
    ]);
    Ok(DatasetBundle { train, valid, test, class_counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

/// Writes train.jsonl, valid.jsonl and test.jsonl under `out_dir`, each
/// sorted by doc_id so exports are byte-stable. The label set picks the
/// prompt's answer menu; outputs are always the canonical three-way label.
pub fn export_instruction_jsonl(
    bundle: &DatasetBundle,
    label_set: LabelSet,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, DatasetError> {
    if bundle.is_empty() {
        return Err(DatasetError::EmptyBundle);
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for name in SPLIT_NAMES {
        let split = bundle.split(name).expect("fixed names");
        let mut ordered: Vec<&LabeledExample> = split.iter().collect();
        ordered.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let records = ordered
            .iter()
            .map(|e| {
                Ok(InstructionRecord {
                    instruction: render_prompt(&e.text, label_set)?,
                    input: String::new(),
                    output: e.label.as_str().to_string(),
                })
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        let path = out_dir.join(format!("{name}.jsonl"));
        jsonl::write_jsonl(&path, &records)?;
        paths.push(path);
    }
    Ok(paths)
}

pub const LORA_RANK: u32 = 8;
pub const LORA_ALPHA: u32 = 16;
pub const LORA_DROPOUT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainPreset {
    pub name: &'static str,
    pub batch_size: u32,
    pub learning_rate: f64,
}

/// Named hyperparameter presets; both share the LoRA constants.
pub fn train_preset(name: &str) -> Result<TrainPreset, DatasetError> {
    match name {
        "rlsp-f3" => Ok(TrainPreset { name: "rlsp-f3", batch_size: 128, learning_rate: 3e-3 }),
        "sft-g3" => Ok(TrainPreset { name: "sft-g3", batch_size: 16, learning_rate: 1e-4 }),
        other => Err(DatasetError::UnknownPreset(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub preset: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub labeling: LabelingConfig,
    /// Digest per input artifact, keyed by a caller-chosen name.
    pub corpus_digests: BTreeMap<String, String>,
}

pub fn build_manifest(
    preset_name: &str,
    labeling: LabelingConfig,
    corpus_digests: BTreeMap<String, String>,
) -> Result<TrainManifest, DatasetError> {
    let preset = train_preset(preset_name)?;
    Ok(TrainManifest {
        preset: preset.name.to_string(),
        lora_rank: LORA_RANK,
        lora_alpha: LORA_ALPHA,
        lora_dropout: LORA_DROPOUT,
        batch_size: preset.batch_size,
        learning_rate: preset.learning_rate,
        labeling,
        corpus_digests,
    })
}

/// Writes the manifest as pretty JSON. A manifest is immutable: rewriting
/// identical contents is a no-op, rewriting different contents is an error.
pub fn write_manifest(manifest: &TrainManifest, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut rendered = serde_json::to_string_pretty(manifest)?;
    rendered.push('\n');
    if path.exists() {
        let existing = std::fs::read_to_string(path)?;
        if existing == rendered {
            return Ok(());
        }
        return Err(DatasetError::ManifestMismatch { path: path.to_path_buf() });
    }
    std::fs::write(path, rendered)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<TrainManifest, DatasetError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn example(i: usize, entry: NaiveDate, label: Sentiment) -> LabeledExample {
        LabeledExample {
            doc_id: format!("doc{i:04}"),
            symbol: "TST".to_string(),
            text: format!("headline number {i}"),
            forward_return_pct: 0.0,
            label,
            entry_date: entry,
            exit_date: entry + chrono::Days::new(1),
        }
    }

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn mixed_examples(n: usize, after: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| {
                let entry = if i < after { date(2022, 1, 1) } else { date(2021, 6, 1) };
                example(i, entry, Sentiment::ALL[i % 3])
            })
            .collect()
    }

    #[test]
    fn ten_examples_split_by_date_then_floor() {
        let bundle =
            temporal_then_random_split(mixed_examples(10, 4), &SplitSpec::default()).unwrap();
        assert_eq!(bundle.test.len(), 4);
        // pool of 6 at 0.8/0.2: floor(4.8) = 4 train, remainder 2 valid
        assert_eq!(bundle.train.len(), 4);
        assert_eq!(bundle.valid.len(), 2);
        assert_eq!(bundle.len(), 10);
        let counts = &bundle.class_counts["test"];
        assert_eq!(counts.values().sum::<usize>(), 4);
        assert_eq!(counts.len(), 3);
    }

    #[test]
    fn boundary_date_goes_to_the_training_pool() {
        let spec = SplitSpec::default();
        let on_boundary = vec![
            example(0, spec.split_date, Sentiment::Neutral),
            example(1, spec.split_date + chrono::Days::new(1), Sentiment::Neutral),
        ];
        let bundle = temporal_then_random_split(on_boundary, &spec).unwrap();
        assert_eq!(bundle.test.len(), 1);
        assert_eq!(bundle.test[0].doc_id, "doc0001");
        assert_eq!(bundle.train.len() + bundle.valid.len(), 1);
    }

    #[test]
    fn split_partitions_input_and_respects_dates() {
        let spec = SplitSpec::default();
        for n in [1usize, 7, 23, 100] {
            let input = mixed_examples(n, n / 3);
            let input_ids: BTreeSet<String> = input.iter().map(|e| e.doc_id.clone()).collect();
            let bundle = temporal_then_random_split(input, &spec).unwrap();
            let mut seen = BTreeSet::new();
            for name in SPLIT_NAMES {
                for e in bundle.split(name).unwrap() {
                    assert!(seen.insert(e.doc_id.clone()), "{} duplicated", e.doc_id);
                }
            }
            assert_eq!(seen, input_ids, "n={n}");
            for e in bundle.train.iter().chain(&bundle.valid) {
                assert!(e.entry_date <= spec.split_date);
            }
            for e in &bundle.test {
                assert!(e.entry_date > spec.split_date);
            }
            let train_exact = (1.0 - spec.valid_fraction) * (bundle.len() - bundle.test.len()) as f64;
            assert!((bundle.train.len() as f64 - train_exact).abs() <= 1.0);
        }
    }

    #[test]
    fn same_seed_reproduces_membership_exactly() {
        let spec = SplitSpec::default();
        let a = temporal_then_random_split(mixed_examples(50, 11), &spec).unwrap();
        let b = temporal_then_random_split(mixed_examples(50, 11), &spec).unwrap();
        assert_eq!(a, b);
        let other = SplitSpec { seed: 43, ..spec };
        let c = temporal_then_random_split(mixed_examples(50, 11), &other).unwrap();
        assert_ne!(
            a.train.iter().map(|e| &e.doc_id).collect::<Vec<_>>(),
            c.train.iter().map(|e| &e.doc_id).collect::<Vec<_>>()
        );
    }

    /// Standalone reimplementation of the documented shuffle recipe:
    /// splitmix64 seed expansion into an xorshift64* stream, Fisher-Yates
    /// from the top with modulo draws.
    fn oracle_shuffle_order(n: usize, seed: u64) -> Vec<usize> {
        let mut sm = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = sm;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        sm = z ^ (z >> 31);
        let mut state = if sm == 0 { 0x9E37_79B9_7F4A_7C15 } else { sm };
        let mut next = move || {
            state ^= state >> 12;
            state ^= state << 25;
            state ^= state >> 27;
            state.wrapping_mul(0x2545_F491_4F6C_DD1D)
        };
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (next() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        order
    }

    #[test]
    fn membership_matches_independent_prng_oracle() {
        let spec = SplitSpec::default();
        let input = mixed_examples(100, 25);
        let pool_ids: Vec<String> = input
            .iter()
            .filter(|e| e.entry_date <= spec.split_date)
            .map(|e| e.doc_id.clone())
            .collect();
        let bundle = temporal_then_random_split(input, &spec).unwrap();

        let order = oracle_shuffle_order(pool_ids.len(), spec.seed);
        let shuffled: Vec<&String> = order.iter().map(|&i| &pool_ids[i]).collect();
        let cut = ((1.0 - spec.valid_fraction) * shuffled.len() as f64).floor() as usize;
        let want_train: Vec<&String> = shuffled[..cut].to_vec();
        let want_valid: Vec<&String> = shuffled[cut..].to_vec();

        let got_train: Vec<&String> = bundle.train.iter().map(|e| &e.doc_id).collect();
        let got_valid: Vec<&String> = bundle.valid.iter().map(|e| &e.doc_id).collect();
        assert_eq!(got_train, want_train);
        assert_eq!(got_valid, want_valid);
    }

    #[test]
    fn spec_validation_rejects_degenerate_fractions() {
        for bad in [0.0, 1.0, -0.1, 1.5] {
            let spec = SplitSpec { valid_fraction: bad, ..SplitSpec::default() };
            assert!(temporal_then_random_split(vec![], &spec).is_err(), "{bad}");
        }
    }

    #[test]
    fn export_writes_sorted_instruction_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut examples = mixed_examples(6, 2);
        examples.reverse();
        let bundle = temporal_then_random_split(examples, &SplitSpec::default()).unwrap();
        let paths = export_instruction_jsonl(&bundle, LabelSet::Three, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        for (path, name) in paths.iter().zip(SPLIT_NAMES) {
            assert_eq!(path.file_name().unwrap().to_str().unwrap(), format!("{name}.jsonl"));
            let records: Vec<InstructionRecord> = jsonl::read_jsonl(path).unwrap();
            assert_eq!(records.len(), bundle.split(name).unwrap().len());
            let mut by_id: Vec<&LabeledExample> = bundle.split(name).unwrap().iter().collect();
            by_id.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
            for (record, example) in records.iter().zip(by_id) {
                assert_eq!(record.input, "");
                assert!(record.instruction.starts_with("What is the sentiment of this news?"));
                assert!(
                    record.instruction.contains(&example.text),
                    "records must follow doc_id order"
                );
                assert_eq!(record.output, example.label.as_str());
            }
        }
    }

    #[test]
    fn export_is_byte_identical_across_runs() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let bundle =
            temporal_then_random_split(mixed_examples(9, 3), &SplitSpec::default()).unwrap();
        let a = export_instruction_jsonl(&bundle, LabelSet::Seven, dir_a.path()).unwrap();
        let b = export_instruction_jsonl(&bundle, LabelSet::Seven, dir_b.path()).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        }
        // the seven-way menu changes the prompt, not the stored label
        let records: Vec<InstructionRecord> = jsonl::read_jsonl(&a[0]).unwrap();
        assert!(records[0].instruction.contains("strong positive"));
        assert!(["negative", "neutral", "positive"].contains(&records[0].output.as_str()));
    }

    #[test]
    fn single_positive_example_exports_positive_output() {
        let dir = tempfile::tempdir().unwrap();
        let one = vec![example(0, date(2021, 6, 1), Sentiment::Positive)];
        let bundle = temporal_then_random_split(one, &SplitSpec::default()).unwrap();
        // a singleton pool yields train = floor(0.8 * 1) = 0, so the
        // example lands in valid
        assert_eq!(bundle.valid.len(), 1);
        let paths = export_instruction_jsonl(&bundle, LabelSet::Three, dir.path()).unwrap();
        let records: Vec<InstructionRecord> =
            jsonl::read_jsonl(&paths[1]).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].output, "positive");
        let empty = DatasetBundle {
            train: vec![],
            valid: vec![],
            test: vec![],
            class_counts: BTreeMap::new(),
        };
        assert!(matches!(
            export_instruction_jsonl(&empty, LabelSet::Three, dir.path()),
            Err(DatasetError::EmptyBundle)
        ));
    }

    #[test]
    fn presets_carry_their_hyperparameters() {
        let f3 = train_preset("rlsp-f3").unwrap();
        assert_eq!(f3.batch_size, 128);
        assert_eq!(f3.learning_rate, 3e-3);
        let g3 = train_preset("sft-g3").unwrap();
        assert_eq!(g3.batch_size, 16);
        assert_eq!(g3.learning_rate, 1e-4);
        assert!(matches!(train_preset("bogus"), Err(DatasetError::UnknownPreset(_))));
        assert_eq!((LORA_RANK, LORA_ALPHA), (8, 16));
        assert_eq!(LORA_DROPOUT, 0.05);
    }

    #[test]
    fn manifests_are_write_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train_manifest.json");
        let digests = BTreeMap::from([("train.jsonl".to_string(), "abc123".to_string())]);
        let manifest = build_manifest("rlsp-f3", LabelingConfig::default(), digests).unwrap();
        assert_eq!(manifest.lora_rank, 8);
        assert_eq!(manifest.lora_alpha, 16);
        assert_eq!(manifest.batch_size, 128);

        write_manifest(&manifest, &path).unwrap();
        // identical rewrite is fine
        write_manifest(&manifest, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), manifest);

        let mut changed = manifest.clone();
        changed.corpus_digests.insert("extra".to_string(), "fff".to_string());
        assert!(matches!(
            write_manifest(&changed, &path),
            Err(DatasetError::ManifestMismatch { .. })
        ));
        assert_eq!(read_manifest(&path).unwrap(), manifest);
    }
}
