//! RAVDESS labels, the 12-class gender × emotion target, dataset assembly,
//! the held-out-actor train/test split, and the manifest file.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::MelExtractor;
use crate::dsp::MelSpectrogram;
use crate::pipeline::{features_from_wav, PipelineError};
use crate::rng::{self, Stream};

pub const NUM_CLASSES: usize = 12;
pub const TEST_SET_SIZE: usize = 180;
/// Actor whose clips are all routed to the test set.
pub const HELD_OUT_ACTOR: u8 = 24;

const MANIFEST_HEADER: &str = "# ser-manifest v1";
const SPLIT_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed RAVDESS file name {0:?}")]
    MalformedName(String),
    #[error("{field} code {code} out of range in {name:?}")]
    CodeOutOfRange {
        name: String,
        field: &'static str,
        code: u8,
    },
    #[error("no usable clips found under {0}")]
    EmptyDataset(PathBuf),
    #[error("need at least {needed} examples, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error("{held} clips from actor {actor} exceed the test set size {size}")]
    HeldOutTooLarge { actor: u8, held: usize, size: usize },
    #[error("no clips from held-out actor {0}")]
    MissingHeldOutActor(u8),
    #[error("could not draw a test set covering every emotion after {0} attempts")]
    CoverageUnsatisfiable(usize),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn from_actor(actor_id: u8) -> Self {
        if actor_id % 2 == 1 {
            Gender::Male
        } else {
            Gender::Female
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

/// The eight emotions encoded in RAVDESS file names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceEmotion {
    Neutral = 1,
    Calm = 2,
    Happy = 3,
    Sad = 4,
    Angry = 5,
    Fearful = 6,
    Disgust = 7,
    Surprised = 8,
}

impl SourceEmotion {
    pub const ALL: [SourceEmotion; 8] = [
        SourceEmotion::Neutral,
        SourceEmotion::Calm,
        SourceEmotion::Happy,
        SourceEmotion::Sad,
        SourceEmotion::Angry,
        SourceEmotion::Fearful,
        SourceEmotion::Disgust,
        SourceEmotion::Surprised,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get((code as usize).wrapping_sub(1)).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// The six emotions the classifier predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Happy,
    Sad,
    Angry,
    Fearful,
    Disgust,
}

impl Emotion {
    pub const ALL: [Emotion; 6] = [
        Emotion::Neutral,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Angry,
        Emotion::Fearful,
        Emotion::Disgust,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Angry => "angry",
            Emotion::Fearful => "fearful",
            Emotion::Disgust => "disgust",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    AudioVideo = 1,
    VideoOnly = 2,
    AudioOnly = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VocalChannel {
    Speech = 1,
    Song = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Intensity {
    Normal = 1,
    Strong = 2,
}

/// Everything a RAVDESS file name encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RawLabel {
    pub modality: Modality,
    pub vocal_channel: VocalChannel,
    pub emotion: SourceEmotion,
    pub intensity: Intensity,
    pub statement: u8,
    pub repetition: u8,
    pub actor_id: u8,
    pub gender: Gender,
}

/// One of the 12 gender × emotion targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassLabel {
    pub gender: Gender,
    pub emotion: Emotion,
}

impl ClassLabel {
    pub fn new(gender: Gender, emotion: Emotion) -> Self {
        Self { gender, emotion }
    }

    /// `6 * is_female + emotion ordinal`.
    pub fn index(self) -> usize {
        let g = match self.gender {
            Gender::Male => 0,
            Gender::Female => 1,
        };
        6 * g + self.emotion.ordinal()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        if i >= NUM_CLASSES {
            return None;
        }
        let gender = if i < 6 { Gender::Male } else { Gender::Female };
        Some(Self::new(gender, Emotion::ALL[i % 6]))
    }

    /// All classes in index order.
    pub fn all() -> Vec<ClassLabel> {
        (0..NUM_CLASSES).filter_map(Self::from_index).collect()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.gender.as_str(), self.emotion.as_str())
    }
}

fn out_of_range(name: &str, field: &'static str, code: u8) -> DatasetError {
    DatasetError::CodeOutOfRange {
        name: name.to_string(),
        field,
        code,
    }
}

/// Parse `MM-VV-EE-II-SS-RR-AA.wav`. A directory prefix is ignored.
pub fn parse_ravdess_filename(name: &str) -> Result<RawLabel, DatasetError> {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let stem = base
        .strip_suffix(".wav")
        .or_else(|| base.strip_suffix(".WAV"))
        .ok_or_else(|| DatasetError::MalformedName(name.to_string()))?;
    let fields: Vec<&str> = stem.split('-').collect();
    if fields.len() != 7 {
        return Err(DatasetError::MalformedName(name.to_string()));
    }
    let mut codes = [0u8; 7];
    for (slot, f) in codes.iter_mut().zip(&fields) {
        if f.len() != 2 || !f.bytes().all(|b| b.is_ascii_digit()) {
            return Err(DatasetError::MalformedName(name.to_string()));
        }
        *slot = f.parse().expect("two ascii digits");
    }
    let [mm, vv, ee, ii, ss, rr, aa] = codes;

    let modality = match mm {
        1 => Modality::AudioVideo,
        2 => Modality::VideoOnly,
        3 => Modality::AudioOnly,
        c => return Err(out_of_range(name, "modality", c)),
    };
    let vocal_channel = match vv {
        1 => VocalChannel::Speech,
        2 => VocalChannel::Song,
        c => return Err(out_of_range(name, "vocal channel", c)),
    };
    let emotion = SourceEmotion::from_code(ee).ok_or_else(|| out_of_range(name, "emotion", ee))?;
    let intensity = match ii {
        1 => Intensity::Normal,
        // neutral is only recorded at normal intensity
        2 if emotion != SourceEmotion::Neutral => Intensity::Strong,
        c => return Err(out_of_range(name, "intensity", c)),
    };
    if !(1..=2).contains(&ss) {
        return Err(out_of_range(name, "statement", ss));
    }
    if !(1..=2).contains(&rr) {
        return Err(out_of_range(name, "repetition", rr));
    }
    if !(1..=24).contains(&aa) {
        return Err(out_of_range(name, "actor", aa));
    }
    Ok(RawLabel {
        modality,
        vocal_channel,
        emotion,
        intensity,
        statement: ss,
        repetition: rr,
        actor_id: aa,
        gender: Gender::from_actor(aa),
    })
}

pub fn format_ravdess_filename(raw: &RawLabel) -> String {
    format!(
        "{:02}-{:02}-{:02}-{:02}-{:02}-{:02}-{:02}.wav",
        raw.modality as u8,
        raw.vocal_channel as u8,
        raw.emotion.code(),
        raw.intensity as u8,
        raw.statement,
        raw.repetition,
        raw.actor_id
    )
}

/// Calm folds into neutral and surprised into happy; intensity is dropped.
pub fn convert_label(raw: &RawLabel) -> ClassLabel {
    let emotion = match raw.emotion {
        SourceEmotion::Neutral | SourceEmotion::Calm => Emotion::Neutral,
        SourceEmotion::Happy | SourceEmotion::Surprised => Emotion::Happy,
        SourceEmotion::Sad => Emotion::Sad,
        SourceEmotion::Angry => Emotion::Angry,
        SourceEmotion::Fearful => Emotion::Fearful,
        SourceEmotion::Disgust => Emotion::Disgust,
    };
    ClassLabel::new(raw.gender, emotion)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: MelSpectrogram,
    pub label: ClassLabel,
    pub actor_id: u8,
    pub source_id: String,
}

#[derive(Debug)]
pub enum SkipReason {
    NotRavdess(DatasetError),
    /// Video or song-channel recording.
    Excluded,
    Unreadable(std::io::Error),
    Pipeline(PipelineError),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::NotRavdess(e) => write!(f, "{e}"),
            SkipReason::Excluded => f.write_str("not an audio-only speech recording"),
            SkipReason::Unreadable(e) => write!(f, "read failed: {e}"),
            SkipReason::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: SkipReason,
}

#[derive(Debug)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub skipped: Vec<SkippedFile>,
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), DatasetError> {
    let entries = fs::read_dir(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Label and featurize one file, or say why it was skipped.
pub fn load_example(path: &Path, extractor: &MelExtractor) -> Result<LabeledExample, SkipReason> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let raw = parse_ravdess_filename(&name).map_err(SkipReason::NotRavdess)?;
    if raw.modality != Modality::AudioOnly || raw.vocal_channel != VocalChannel::Speech {
        return Err(SkipReason::Excluded);
    }
    let bytes = fs::read(path).map_err(SkipReason::Unreadable)?;
    let processed = features_from_wav(&bytes, extractor).map_err(SkipReason::Pipeline)?;
    Ok(LabeledExample {
        features: processed.features,
        label: convert_label(&raw),
        actor_id: raw.actor_id,
        source_id: path.to_string_lossy().into_owned(),
    })
}

/// Walk `root` for WAV files in lexicographic path order and featurize every
/// audio-only speech clip. Per-file failures land in `skipped`.
pub fn build_dataset(root: &Path, extractor: &MelExtractor) -> Result<Dataset, DatasetError> {
    let mut paths = Vec::new();
    collect_wavs(root, &mut paths)?;
    paths.sort();

    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        match load_example(&path, extractor) {
            Ok(ex) => examples.push(ex),
            Err(reason) => {
                tracing::debug!(path = %path.display(), %reason, "skipping file");
                skipped.push(SkippedFile { path, reason });
            }
        }
    }
    if examples.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    Ok(Dataset { examples, skipped })
}

/// The fields the split looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitKey {
    pub actor_id: u8,
    pub emotion: Emotion,
}

impl From<&LabeledExample> for SplitKey {
    fn from(ex: &LabeledExample) -> Self {
        Self {
            actor_id: ex.actor_id,
            emotion: ex.label.emotion,
        }
    }
}

/// Sorted, disjoint index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Held-out-actor split.
///
/// Every clip of [`HELD_OUT_ACTOR`] goes to the test set. The remaining test
/// slots are filled by Fisher-Yates shuffling the other indices with the
/// `Split` stream of `seed` and taking a prefix. If the test set then misses
/// an emotion present in the data, the shuffle is redrawn from the same
/// stream (up to 1000 times).
pub fn split_indices(keys: &[SplitKey], seed: u64, test_size: usize) -> Result<SplitIndices, DatasetError> {
    if keys.len() < test_size {
        return Err(DatasetError::InsufficientData {
            needed: test_size,
            have: keys.len(),
        });
    }
    let (held, mut rest): (Vec<usize>, Vec<usize>) = (0..keys.len()).partition(|&i| keys[i].actor_id == HELD_OUT_ACTOR);
    if held.is_empty() {
        return Err(DatasetError::MissingHeldOutActor(HELD_OUT_ACTOR));
    }
    if held.len() > test_size {
        return Err(DatasetError::HeldOutTooLarge {
            actor: HELD_OUT_ACTOR,
            held: held.len(),
            size: test_size,
        });
    }
    let wanted: BTreeSet<Emotion> = keys.iter().map(|k| k.emotion).collect();
    let fill = test_size - held.len();
    let mut rng = rng::stream(seed, Stream::Split);

    for _ in 0..SPLIT_ATTEMPTS {
        rng::shuffle(&mut rng, &mut rest);
        let mut test: Vec<usize> = held.iter().chain(&rest[..fill]).copied().collect();
        let covered: BTreeSet<Emotion> = test.iter().map(|&i| keys[i].emotion).collect();
        if covered == wanted {
            test.sort_unstable();
            let mut train = rest[fill..].to_vec();
            train.sort_unstable();
            return Ok(SplitIndices { train, test });
        }
    }
    Err(DatasetError::CoverageUnsatisfiable(SPLIT_ATTEMPTS))
}

/// [`split_indices`] with the standard 180-clip test set, moving the examples.
pub fn split_train_test(
    examples: Vec<LabeledExample>,
    seed: u64,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>), DatasetError> {
    let keys: Vec<SplitKey> = examples.iter().map(SplitKey::from).collect();
    let idx = split_indices(&keys, seed, TEST_SET_SIZE)?;
    let mut slots: Vec<Option<LabeledExample>> = examples.into_iter().map(Some).collect();
    let mut take =
        |ids: &[usize]| -> Vec<LabeledExample> { ids.iter().map(|&i| slots[i].take().expect("disjoint")).collect() };
    let train = take(&idx.train);
    let test = take(&idx.test);
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class_index: usize,
    pub actor_id: u8,
    pub split: SplitTag,
}

/// Tab-separated `path class_index actor_id split`, one clip per line,
/// after a version comment line.
pub fn write_manifest<W: Write>(entries: &[ManifestEntry], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{MANIFEST_HEADER}")?;
    writeln!(w, "# path\tclass_index\tactor_id\tsplit")?;
    for e in entries {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.path.display(),
            e.class_index,
            e.actor_id,
            e.split.as_str()
        )?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut out = Vec::new();
    let mut saw_header = false;
    for (i, line) in r.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DatasetError::Manifest {
            line: lineno,
            msg: e.to_string(),
        })?;
        if lineno == 1 {
            if line.trim() != MANIFEST_HEADER {
                return Err(DatasetError::Manifest {
                    line: 1,
                    msg: format!("expected {MANIFEST_HEADER:?}"),
                });
            }
            saw_header = true;
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| DatasetError::Manifest {
            line: lineno,
            msg: msg.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        let class_index: usize = cols[1].parse().map_err(|_| bad("bad class index"))?;
        if class_index >= NUM_CLASSES {
            return Err(bad("class index out of range"));
        }
        let actor_id: u8 = cols[2].parse().map_err(|_| bad("bad actor id"))?;
        let split = match cols[3] {
            "train" => SplitTag::Train,
            "test" => SplitTag::Test,
            _ => return Err(bad("split must be train or test")),
        };
        out.push(ManifestEntry {
            path: PathBuf::from(cols[0]),
            class_index,
            actor_id,
            split,
        });
    }
    if !saw_header {
        return Err(DatasetError::Manifest {
            line: 1,
            msg: "empty manifest".into(),
        });
    }
    Ok(out)
}

pub fn read_manifest_file(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let f = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_manifest(BufReader::new(f))
}
