use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bpe_core::io::{read_mask, read_volume};
use bpe_core::pipeline::{Layout, Selection};
use bpe_core::preprocess::nearest_rank_index;
use bpe_core::{Mask3D, Volume3D};

use crate::error::{ReaderError, Result};

/// Study settings; every field can be overridden from the environment
/// (see [`StudyConfig::apply_env`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Pipeline output directory holding `preprocessed/` and `masks/`.
    pub data_dir: PathBuf,
    /// The two compared segmentations, as `method/operator`.
    pub method_a: String,
    pub method_b: String,
    #[serde(default)]
    pub study_seed: u64,
    /// JSONL score store.
    pub store: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Required in the `x-study-token` header of export requests.
    pub token: String,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

impl StudyConfig {
    pub fn load(path: &std::path::Path) -> Result<StudyConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ReaderError::Config(format!("{}: {e}", path.display())))?;
        let mut c: StudyConfig =
            serde_json::from_str(&text).map_err(|e| ReaderError::Config(format!("{}: {e}", path.display())))?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(std::path::Path::new(""));
        c.data_dir = base.join(&c.data_dir);
        c.store = base.join(&c.store);
        Ok(c)
    }

    /// `BPE_READER_DATA`, `BPE_READER_STORE`, `BPE_READER_SEED`,
    /// `BPE_READER_LISTEN` and `BPE_READER_TOKEN` replace the file values.
    pub fn apply_env(&mut self) -> Result<()> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if let Some(v) = var("BPE_READER_DATA") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("BPE_READER_STORE") {
            self.store = v.into();
        }
        if let Some(v) = var("BPE_READER_SEED") {
            self.study_seed = v
                .parse()
                .map_err(|_| ReaderError::Config(format!("BPE_READER_SEED={v:?} is not an integer")))?;
        }
        if let Some(v) = var("BPE_READER_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = var("BPE_READER_TOKEN") {
            self.token = v;
        }
        Ok(())
    }

    pub fn selections(&self) -> Result<[Selection; 2]> {
        let parse = |s: &str| s.parse::<Selection>().map_err(|e| ReaderError::Config(e.to_string()));
        let (a, b) = (parse(&self.method_a)?, parse(&self.method_b)?);
        if a == b {
            return Err(ReaderError::Config("method_a and method_b must differ".into()));
        }
        if self.token.is_empty() {
            return Err(ReaderError::Config("study token must not be empty".into()));
        }
        Ok([a, b])
    }
}

/// Anonymised method label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    A,
    B,
}

impl Slot {
    fn other(self) -> Slot {
        match self {
            Slot::A => Slot::B,
            Slot::B => Slot::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReaderAssignment {
    pub middle: Slot,
    pub right: Slot,
}

/// Which method goes to the middle panel: the low bit of
/// `SHA-256(seed as 8 little-endian bytes ‖ case_id)`.
pub fn assign_sides(study_seed: u64, case_id: &str) -> ReaderAssignment {
    let mut h = Sha256::new();
    h.update(study_seed.to_le_bytes());
    h.update(case_id.as_bytes());
    let middle = if h.finalize()[0] & 1 == 0 { Slot::A } else { Slot::B };
    ReaderAssignment {
        middle,
        right: middle.other(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Original,
    Middle,
    Right,
}

/// What the viewer shows for one case: the pre-contrast volume, its fixed
/// display window, and the two FGT masks by slot.
pub struct CaseView {
    pub volume: Volume3D,
    pub window: (f32, f32),
    pub a: Mask3D,
    pub b: Mask3D,
}

impl CaseView {
    pub fn mask(&self, slot: Slot) -> &Mask3D {
        match slot {
            Slot::A => &self.a,
            Slot::B => &self.b,
        }
    }
}

/// 2nd and 98th nearest-rank percentiles of the volume.
pub fn display_window(vol: &Volume3D) -> (f32, f32) {
    let mut v = vol.data().to_vec();
    v.sort_by(f32::total_cmp);
    (v[nearest_rank_index(v.len(), 2.0)], v[nearest_rank_index(v.len(), 98.0)])
}

const CACHE_CASES: usize = 6;

pub struct Study {
    pub config: StudyConfig,
    layout: Layout,
    methods: [Selection; 2],
    /// Case id to slice count, for cases with both mask sets.
    cases: BTreeMap<String, usize>,
    cache: Mutex<Vec<(String, Arc<CaseView>)>>,
}

impl Study {
    /// Scans `data_dir/preprocessed`; cases missing either mask set are left
    /// out of the study with a warning.
    pub fn open(config: StudyConfig) -> Result<Study> {
        let methods = config.selections()?;
        let layout = Layout::new(&config.data_dir);
        let dir = config.data_dir.join("preprocessed");
        let entries = std::fs::read_dir(&dir)
            .map_err(|e| ReaderError::Config(format!("{}: {e}", dir.display())))?;
        let mut cases = BTreeMap::new();
        for entry in entries.flatten() {
            let Some(id) = entry.file_name().to_str().map(str::to_string) else { continue };
            let s0 = entry.path().join("s0.nii");
            if !s0.exists() {
                continue;
            }
            let have = methods
                .iter()
                .filter(|m| layout.masks(m, &id).join("fgt.nii").exists())
                .count();
            if have < 2 {
                log::warn!("case {id} has {have} of 2 mask sets; left out of the study");
                continue;
            }
            let dims = read_volume(&s0)?.dims();
            cases.insert(id, dims[2]);
        }
        Ok(Study {
            config,
            layout,
            methods,
            cases,
            cache: Mutex::new(Vec::new()),
        })
    }

    pub fn cases(&self) -> &BTreeMap<String, usize> {
        &self.cases
    }

    pub fn method_name(&self, slot: Slot) -> String {
        match slot {
            Slot::A => self.methods[0].to_string(),
            Slot::B => self.methods[1].to_string(),
        }
    }

    /// Side assignment of a case in the study; an error if the case lacks
    /// either mask set.
    pub fn assignment(&self, case_id: &str) -> Result<ReaderAssignment> {
        if !self.cases.contains_key(case_id) {
            return Err(ReaderError::UnknownCase(case_id.to_string()));
        }
        Ok(assign_sides(self.config.study_seed, case_id))
    }

    pub fn view(&self, case_id: &str) -> Result<Arc<CaseView>> {
        if !self.cases.contains_key(case_id) {
            return Err(ReaderError::UnknownCase(case_id.to_string()));
        }
        {
            let mut cache = self.cache.lock().expect("cache lock");
            if let Some(i) = cache.iter().position(|(id, _)| id == case_id) {
                let hit = cache.remove(i);
                let view = hit.1.clone();
                cache.insert(0, hit);
                return Ok(view);
            }
        }
        let volume = read_volume(self.layout.preprocessed(case_id).join("s0.nii"))?;
        let mask = |m: &Selection| -> Result<Mask3D> {
            let mask = read_mask(self.layout.masks(m, case_id).join("fgt.nii"))?;
            volume
                .geometry()
                .check_aligned(mask.geometry(), "mask vs volume")
                .map_err(|e| ReaderError::Data(e.to_string()))?;
            Ok(mask)
        };
        let view = Arc::new(CaseView {
            window: display_window(&volume),
            a: mask(&self.methods[0])?,
            b: mask(&self.methods[1])?,
            volume,
        });
        let mut cache = self.cache.lock().expect("cache lock");
        cache.insert(0, (case_id.to_string(), view.clone()));
        cache.truncate(CACHE_CASES);
        Ok(view)
    }
}
