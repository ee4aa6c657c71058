//! Immutable, indexed temporal knowledge graph and the benchmark file loader.
//!
//! A dataset directory holds `entity2id.txt` and `relation2id.txt`
//! (`label<TAB>id` per line) plus `train.txt`, `valid.txt` and `test.txt`
//! (`subject<TAB>relation<TAB>object<TAB>timestamp`, extra columns ignored).
//! Raw timestamps are shifted to start at zero and divided by the dataset
//! interval, so one step in the loaded graph is one interval.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENTITY_FILE: &str = "entity2id.txt";
pub const RELATION_FILE: &str = "relation2id.txt";
pub const SPLIT_FILES: [(Split, &str); 3] = [
    (Split::Train, "train.txt"),
    (Split::Valid, "valid.txt"),
    (Split::Test, "test.txt"),
];

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_newtype!(
    /// Index into the entity dictionary.
    EntityId
);
id_newtype!(
    /// Index into the relation dictionary. Ids in `[|R|, 2|R|)` denote inverse relations.
    RelationId
);
id_newtype!(
    /// Normalized time step.
    Timestamp
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Quadruple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub timestamp: Timestamp,
}

impl Quadruple {
    pub fn new(subject: u32, relation: u32, object: u32, timestamp: u32) -> Self {
        Self {
            subject: EntityId(subject),
            relation: RelationId(relation),
            object: EntityId(object),
            timestamp: Timestamp(timestamp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}:{line}: {kind} id {id} out of range (dictionary has {limit})")]
    Reference {
        source_name: String,
        line: usize,
        kind: &'static str,
        id: u64,
        limit: usize,
    },
    #[error("dictionary mismatch: {0}")]
    DictionaryMismatch(String),
    #[error("relation id {relation} out of range (expected < {limit})")]
    RelationOutOfRange { relation: u32, limit: u32 },
    #[error("splits overlap in time: max({earlier:?}) = {max} > min({later:?}) = {min}")]
    SplitOrder {
        earlier: Split,
        later: Split,
        max: u32,
        min: u32,
    },
    #[error("fact at timestamp {got} appended after timestamp {last}")]
    OutOfOrder { got: u32, last: u32 },
}

pub type Result<T, E = KgError> = std::result::Result<T, E>;

/// Bijection between labels and dense ids `0..n`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    forward: HashMap<String, u32>,
    backward: Vec<String>,
}

impl Dictionary {
    /// Builds a dictionary from `(label, id)` pairs; ids must be unique and dense.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u32)>,
        S: Into<String>,
    {
        let mut slots: Vec<Option<String>> = Vec::new();
        let mut forward = HashMap::new();
        for (label, id) in pairs {
            let label = label.into();
            let idx = id as usize;
            if idx >= slots.len() {
                slots.resize(idx + 1, None);
            }
            if slots[idx].is_some() {
                return Err(KgError::DictionaryMismatch(format!("id {id} assigned twice")));
            }
            if forward.insert(label.clone(), id).is_some() {
                return Err(KgError::DictionaryMismatch(format!("label {label:?} assigned twice")));
            }
            slots[idx] = Some(label);
        }
        let backward = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| KgError::DictionaryMismatch(format!("id {i} has no label"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { forward, backward })
    }

    /// Dictionary whose labels are the decimal ids themselves.
    pub fn numeric(n: usize) -> Self {
        Self::from_pairs((0..n as u32).map(|i| (i.to_string(), i))).expect("dense by construction")
    }

    pub fn len(&self) -> usize {
        self.backward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backward.is_empty()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.backward.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.forward.get(label).copied()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.backward.iter().map(String::as_str)
    }

    pub fn read<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| KgError::Io {
                path: PathBuf::from(source_name),
                source,
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            // OpenKE-style files start with a bare entry count.
            if lineno == 0 && !line.contains('\t') && line.trim().parse::<u64>().is_ok() {
                continue;
            }
            let (label, id) = line.rsplit_once('\t').ok_or_else(|| KgError::Parse {
                source_name: source_name.to_string(),
                line: lineno + 1,
                message: "expected label<TAB>id".into(),
            })?;
            let id = id.trim().parse::<u32>().map_err(|e| KgError::Parse {
                source_name: source_name.to_string(),
                line: lineno + 1,
                message: format!("bad id {id:?}: {e}"),
            })?;
            pairs.push((label.to_string(), id));
        }
        Self::from_pairs(pairs)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let file = open(path)?;
        Self::read(BufReader::new(file), &path.display().to_string())
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            KgError::MissingFile(path.to_path_buf())
        } else {
            KgError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

/// Parses tab-separated quadruples, keeping raw timestamps and file order.
pub fn parse_quadruples<R: BufRead>(
    reader: R,
    source_name: &str,
    entities: &Dictionary,
    relations: &Dictionary,
) -> Result<Vec<Quadruple>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| KgError::Io {
            path: PathBuf::from(source_name),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = lineno + 1;
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(KgError::Parse {
                source_name: source_name.to_string(),
                line: line_no,
                message: format!("expected at least 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let mut nums = [0u64; 4];
        for (slot, field) in nums.iter_mut().zip(&fields[..4]) {
            *slot = field.parse::<u64>().map_err(|e| KgError::Parse {
                source_name: source_name.to_string(),
                line: line_no,
                message: format!("non-integer field {field:?}: {e}"),
            })?;
        }
        let check = |kind: &'static str, id: u64, limit: usize| -> Result<u32> {
            if id >= limit as u64 {
                Err(KgError::Reference {
                    source_name: source_name.to_string(),
                    line: line_no,
                    kind,
                    id,
                    limit,
                })
            } else {
                Ok(id as u32)
            }
        };
        let subject = check("entity", nums[0], entities.len())?;
        let relation = check("relation", nums[1], relations.len())?;
        let object = check("entity", nums[2], entities.len())?;
        let timestamp = u32::try_from(nums[3]).map_err(|_| KgError::Parse {
            source_name: source_name.to_string(),
            line: line_no,
            message: format!("timestamp {} too large", nums[3]),
        })?;
        out.push(Quadruple::new(subject, relation, object, timestamp));
    }
    Ok(out)
}

pub fn parse_quadruple_file(path: &Path, entities: &Dictionary, relations: &Dictionary) -> Result<Vec<Quadruple>> {
    let file = open(path)?;
    parse_quadruples(BufReader::new(file), &path.display().to_string(), entities, relations)
}

/// Writes quadruples in the same tab-separated layout `parse_quadruples` reads.
pub fn write_quadruples<W: Write>(mut writer: W, facts: &[Quadruple]) -> io::Result<()> {
    for q in facts {
        writeln!(writer, "{}\t{}\t{}\t{}", q.subject, q.relation, q.object, q.timestamp)?;
    }
    Ok(())
}

/// Maps a relation to its inverse; an involution on `[0, 2|R|)`.
pub fn inverse_relation(relation: RelationId, num_relations: u32) -> Result<RelationId> {
    let r = relation.0;
    if r >= 2 * num_relations {
        return Err(KgError::RelationOutOfRange {
            relation: r,
            limit: 2 * num_relations,
        });
    }
    Ok(RelationId(if r < num_relations {
        r + num_relations
    } else {
        r - num_relations
    }))
}

/// Lookup key into a [`FactIndex`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexKey {
    Subject(EntityId),
    SubjectRelation(EntityId, RelationId),
    Object(EntityId),
    ObjectRelation(EntityId, RelationId),
}

/// Append-only chronological fact list with positional indexes. Postings
/// hold positions into the fact list, so they share its ordering.
#[derive(Debug, Clone, Default)]
pub struct FactIndex {
    facts: Vec<Quadruple>,
    by_subject: HashMap<EntityId, Vec<u32>>,
    by_object: HashMap<EntityId, Vec<u32>>,
    by_subject_relation: HashMap<(EntityId, RelationId), Vec<u32>>,
    by_object_relation: HashMap<(EntityId, RelationId), Vec<u32>>,
}

impl FactIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a fact; timestamps must be non-decreasing.
    pub fn push(&mut self, fact: Quadruple) -> Result<u32> {
        if let Some(last) = self.facts.last() {
            if fact.timestamp < last.timestamp {
                return Err(KgError::OutOfOrder {
                    got: fact.timestamp.0,
                    last: last.timestamp.0,
                });
            }
        }
        let pos = self.facts.len() as u32;
        self.facts.push(fact);
        self.by_subject.entry(fact.subject).or_default().push(pos);
        self.by_object.entry(fact.object).or_default().push(pos);
        self.by_subject_relation
            .entry((fact.subject, fact.relation))
            .or_default()
            .push(pos);
        self.by_object_relation
            .entry((fact.object, fact.relation))
            .or_default()
            .push(pos);
        Ok(pos)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn facts(&self) -> &[Quadruple] {
        &self.facts
    }

    pub fn get(&self, pos: u32) -> &Quadruple {
        &self.facts[pos as usize]
    }

    pub fn postings(&self, key: IndexKey) -> &[u32] {
        let list = match key {
            IndexKey::Subject(e) => self.by_subject.get(&e),
            IndexKey::Object(e) => self.by_object.get(&e),
            IndexKey::SubjectRelation(e, r) => self.by_subject_relation.get(&(e, r)),
            IndexKey::ObjectRelation(e, r) => self.by_object_relation.get(&(e, r)),
        };
        list.map(Vec::as_slice).unwrap_or(&[])
    }

    /// Positions of facts matching `key` with timestamp strictly before `t`,
    /// in chronological order.
    pub fn facts_before(&self, t: Timestamp, key: IndexKey) -> &[u32] {
        let list = self.postings(key);
        let end = list.partition_point(|&pos| self.facts[pos as usize].timestamp < t);
        &list[..end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub num_timestamps: usize,
    /// Raw time units per step (e.g. 24 for hour-stamped daily data).
    pub interval: u32,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Raw time units per step. Detected as the gcd of raw timestamp offsets when unset.
    pub interval: Option<u32>,
}

/// Loaded dataset: dictionaries, chronologically sorted facts and split tags.
#[derive(Debug, Clone)]
pub struct TemporalKg {
    name: String,
    entities: Dictionary,
    relations: Dictionary,
    index: FactIndex,
    split_of: Vec<Split>,
    counts: [usize; 3],
    interval: u32,
}

impl TemporalKg {
    /// Builds a graph from already-normalized split fact lists.
    pub fn from_splits(
        name: impl Into<String>,
        entities: Dictionary,
        relations: Dictionary,
        train: Vec<Quadruple>,
        valid: Vec<Quadruple>,
        test: Vec<Quadruple>,
        interval: u32,
    ) -> Result<Self> {
        for q in train.iter().chain(&valid).chain(&test) {
            if q.subject.index() >= entities.len() || q.object.index() >= entities.len() {
                return Err(KgError::DictionaryMismatch(format!(
                    "fact {q:?} references an entity outside the dictionary ({})",
                    entities.len()
                )));
            }
            if q.relation.index() >= relations.len() {
                return Err(KgError::DictionaryMismatch(format!(
                    "fact {q:?} references a relation outside the dictionary ({})",
                    relations.len()
                )));
            }
        }
        check_split_order(&train, Split::Train, &valid, Split::Valid)?;
        check_split_order(&valid, Split::Valid, &test, Split::Test)?;
        check_split_order(&train, Split::Train, &test, Split::Test)?;

        let counts = [train.len(), valid.len(), test.len()];
        let mut tagged: Vec<(Quadruple, Split)> = train
            .into_iter()
            .map(|q| (q, Split::Train))
            .chain(valid.into_iter().map(|q| (q, Split::Valid)))
            .chain(test.into_iter().map(|q| (q, Split::Test)))
            .collect();
        tagged.sort_by_key(|(q, _)| q.timestamp);

        let mut index = FactIndex::new();
        let mut split_of = Vec::with_capacity(tagged.len());
        for (q, split) in tagged {
            index.push(q)?;
            split_of.push(split);
        }
        Ok(Self {
            name: name.into(),
            entities,
            relations,
            index,
            split_of,
            counts,
            interval,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entities(&self) -> &Dictionary {
        &self.entities
    }

    pub fn relations(&self) -> &Dictionary {
        &self.relations
    }

    pub fn num_entities(&self) -> u32 {
        self.entities.len() as u32
    }

    pub fn num_relations(&self) -> u32 {
        self.relations.len() as u32
    }

    /// Raw time units per normalized step.
    pub fn interval(&self) -> u32 {
        self.interval
    }

    pub fn index(&self) -> &FactIndex {
        &self.index
    }

    pub fn facts(&self) -> &[Quadruple] {
        self.index.facts()
    }

    pub fn split_of(&self, pos: u32) -> Split {
        self.split_of[pos as usize]
    }

    /// Position of the first test fact. Splits are time-ordered and ties keep
    /// train/valid/test file order, so every test fact sits at or after it.
    pub fn test_start(&self) -> u32 {
        (self.counts[0] + self.counts[1]) as u32
    }

    /// Facts of one split in global (chronological, then file) order.
    pub fn split_facts(&self, split: Split) -> Vec<Quadruple> {
        self.facts()
            .iter()
            .zip(&self.split_of)
            .filter(|(_, s)| **s == split)
            .map(|(q, _)| *q)
            .collect()
    }

    pub fn inverse_relation(&self, relation: RelationId) -> Result<RelationId> {
        inverse_relation(relation, self.num_relations())
    }

    pub fn facts_before(&self, t: Timestamp, key: IndexKey) -> impl DoubleEndedIterator<Item = &Quadruple> + '_ {
        self.index.facts_before(t, key).iter().map(|&p| self.index.get(p))
    }

    pub fn stats(&self) -> DatasetStats {
        let timestamps: BTreeSet<Timestamp> = self.facts().iter().map(|q| q.timestamp).collect();
        DatasetStats {
            entities: self.entities.len(),
            relations: self.relations.len(),
            train: self.counts[0],
            valid: self.counts[1],
            test: self.counts[2],
            num_timestamps: timestamps.len(),
            interval: self.interval,
        }
    }
}

fn check_split_order(earlier: &[Quadruple], e: Split, later: &[Quadruple], l: Split) -> Result<()> {
    let max = earlier.iter().map(|q| q.timestamp.0).max();
    let min = later.iter().map(|q| q.timestamp.0).min();
    match (max, min) {
        (Some(max), Some(min)) if max > min => Err(KgError::SplitOrder {
            earlier: e,
            later: l,
            max,
            min,
        }),
        _ => Ok(()),
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Shifts timestamps to start at zero and divides them by the interval.
/// Returns the interval used.
pub fn normalize_timestamps(splits: &mut [&mut Vec<Quadruple>], interval: Option<u32>) -> u32 {
    let min = splits
        .iter()
        .flat_map(|s| s.iter())
        .map(|q| q.timestamp.0)
        .min()
        .unwrap_or(0);
    let interval = interval.filter(|&i| i > 0).unwrap_or_else(|| {
        let g = splits
            .iter()
            .flat_map(|s| s.iter())
            .fold(0, |acc, q| gcd(acc, q.timestamp.0 - min));
        g.max(1)
    });
    for split in splits.iter_mut() {
        for q in split.iter_mut() {
            q.timestamp = Timestamp((q.timestamp.0 - min) / interval);
        }
    }
    interval
}

pub fn load_dataset(dir: &Path) -> Result<TemporalKg> {
    load_dataset_with(dir, &LoadOptions::default())
}

pub fn load_dataset_with(dir: &Path, opts: &LoadOptions) -> Result<TemporalKg> {
    if !dir.is_dir() {
        return Err(KgError::MissingFile(dir.to_path_buf()));
    }
    let entities = Dictionary::read_file(&dir.join(ENTITY_FILE))?;
    let relations = Dictionary::read_file(&dir.join(RELATION_FILE))?;
    let mut train = parse_quadruple_file(&dir.join(SPLIT_FILES[0].1), &entities, &relations)?;
    let mut valid = parse_quadruple_file(&dir.join(SPLIT_FILES[1].1), &entities, &relations)?;
    let mut test = parse_quadruple_file(&dir.join(SPLIT_FILES[2].1), &entities, &relations)?;
    let interval = normalize_timestamps(&mut [&mut train, &mut valid, &mut test], opts.interval);
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    TemporalKg::from_splits(name, entities, relations, train, valid, test, interval)
}

/// Writes a graph back out in the on-disk dataset layout (normalized timestamps).
pub fn save_dataset(kg: &TemporalKg, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (file, dict) in [(ENTITY_FILE, kg.entities()), (RELATION_FILE, kg.relations())] {
        let mut out = io::BufWriter::new(File::create(dir.join(file))?);
        for (id, label) in dict.labels().enumerate() {
            writeln!(out, "{label}\t{id}")?;
        }
        out.flush()?;
    }
    for (split, file) in SPLIT_FILES {
        let mut out = io::BufWriter::new(File::create(dir.join(file))?);
        write_quadruples(&mut out, &kg.split_facts(split))?;
        out.flush()?;
    }
    Ok(())
}
