//! Instances, label spaces, dataset loading and labeled/unlabeled pools.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Ordered set of class names. Class indices are positions in this list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    labels: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::Validation(format!(
                "label space needs at least 2 classes, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.trim().is_empty() {
                return Err(Error::Validation("empty class name".into()));
            }
            if !seen.insert(label.to_lowercase()) {
                return Err(Error::Validation(format!("duplicate class name `{label}`")));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }

    /// Exact (case-sensitive) lookup.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        LabelSpace::new(labels)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(space: LabelSpace) -> Self {
        space.labels
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<usize>,
}

impl Instance {
    pub fn new(id: impl Into<String>, text: impl Into<String>, gold_label: Option<usize>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold_label,
        }
    }
}

/// A validated collection of instances with unique ids.
#[derive(Debug, Clone)]
pub struct Corpus {
    instances: Vec<Instance>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(instances: Vec<Instance>, label_space: &LabelSpace) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(instances.len());
        for (pos, inst) in instances.iter().enumerate() {
            if inst.id.is_empty() {
                return Err(Error::Validation(format!("instance #{pos} has an empty id")));
            }
            if let Some(label) = inst.gold_label {
                if label >= label_space.len() {
                    return Err(Error::Validation(format!(
                        "instance `{}` has label {label} outside {} classes",
                        inst.id,
                        label_space.len()
                    )));
                }
            }
            if by_id.insert(inst.id.clone(), pos).is_some() {
                return Err(Error::Validation(format!("duplicate id `{}`", inst.id)));
            }
        }
        Ok(Self { instances, by_id })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.by_id.get(id).map(|&pos| &self.instances[pos])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Instance> {
        self.instances.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: serde_json::Value,
    text: String,
    #[serde(default)]
    label: Option<serde_json::Value>,
}

fn resolve_label(
    value: &serde_json::Value,
    space: &LabelSpace,
) -> std::result::Result<Option<usize>, String> {
    match value {
        serde_json::Value::Null => Ok(None),
        serde_json::Value::String(s) if s.is_empty() => Ok(None),
        serde_json::Value::String(s) => space
            .index_of(s)
            .map(Some)
            .ok_or_else(|| format!("unknown label `{s}` (expected one of {:?})", space.names())),
        serde_json::Value::Number(n) => match n.as_u64() {
            Some(k) if (k as usize) < space.len() => Ok(Some(k as usize)),
            _ => Err(format!("label index {n} outside {} classes", space.len())),
        },
        other => Err(format!("label must be a class name, got {other}")),
    }
}

fn id_string(value: &serde_json::Value) -> std::result::Result<String, String> {
    match value {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(format!("id must be a string or number, got {other}")),
    }
}

/// Loads a dataset file. Record order is preserved.
pub fn load_corpus(path: &Path, format: DataFormat, label_space: &LabelSpace) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut instances = Vec::new();
    match format {
        DataFormat::Jsonl => {
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let lineno = n + 1;
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let raw: RawRecord =
                    serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
                let id = id_string(&raw.id).map_err(|m| parse_err(lineno, m))?;
                let gold = match &raw.label {
                    Some(v) => resolve_label(v, label_space).map_err(|m| parse_err(lineno, m))?,
                    None => None,
                };
                instances.push(Instance::new(id, raw.text, gold));
            }
        }
        DataFormat::Csv => {
            let mut reader = csv::Reader::from_reader(file);
            let headers = reader
                .headers()
                .map_err(|e| parse_err(1, e.to_string()))?
                .clone();
            let column = |name: &str| headers.iter().position(|h| h.trim() == name);
            let (Some(id_col), Some(text_col)) = (column("id"), column("text")) else {
                return Err(parse_err(1, "CSV header must contain `id` and `text`".into()));
            };
            let label_col = column("label");
            for (n, record) in reader.records().enumerate() {
                let lineno = n + 2;
                let record = record.map_err(|e| parse_err(lineno, e.to_string()))?;
                let field = |col: usize| {
                    record
                        .get(col)
                        .ok_or_else(|| parse_err(lineno, format!("missing column {col}")))
                };
                let id = field(id_col)?.to_string();
                let text = field(text_col)?.to_string();
                let gold = match label_col.and_then(|c| record.get(c)) {
                    Some(name) if !name.trim().is_empty() => Some(
                        label_space
                            .index_of(name.trim())
                            .ok_or_else(|| parse_err(lineno, format!("unknown label `{name}`")))?,
                    ),
                    _ => None,
                };
                instances.push(Instance::new(id, text, gold));
            }
        }
    }
    Corpus::new(instances, label_space)
}

/// Where a labeled pool entry's label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Gold,
    Molam,
    /// A single annotator acting as the labeler.
    Annotator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub id: String,
    pub label: usize,
    pub source: LabelSource,
}

impl LabeledEntry {
    pub fn new(id: impl Into<String>, label: usize, source: LabelSource) -> Self {
        Self {
            id: id.into(),
            label,
            source,
        }
    }
}

/// Disjoint labeled and unlabeled pools. The unlabeled set iterates in id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPools {
    labeled: Vec<LabeledEntry>,
    unlabeled: BTreeSet<String>,
    num_classes: usize,
}

impl DataPools {
    pub fn labeled(&self) -> &[LabeledEntry] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<String> {
        &self.unlabeled
    }

    pub fn total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_labeled(&self, id: &str) -> bool {
        self.labeled.iter().any(|e| e.id == id)
    }

    /// Moves a batch from the unlabeled to the labeled pool. The batch is
    /// validated as a whole; on error the pools are left untouched.
    pub fn transfer(&mut self, batch: &[LabeledEntry]) -> Result<()> {
        let mut seen = HashSet::with_capacity(batch.len());
        for entry in batch {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::Validation(format!("duplicate id `{}` in batch", entry.id)));
            }
            if !self.unlabeled.contains(&entry.id) {
                return Err(Error::State(format!(
                    "`{}` is not in the unlabeled pool",
                    entry.id
                )));
            }
            if entry.label >= self.num_classes {
                return Err(Error::Validation(format!(
                    "label {} for `{}` outside {} classes",
                    entry.label, entry.id, self.num_classes
                )));
            }
        }
        for entry in batch {
            self.unlabeled.remove(&entry.id);
            self.labeled.push(entry.clone());
        }
        Ok(())
    }

    /// Checks disjointness and label bounds against a corpus.
    pub fn check(&self, corpus: &Corpus) -> Result<()> {
        let mut ids = HashSet::new();
        for entry in &self.labeled {
            if !ids.insert(entry.id.as_str()) || self.unlabeled.contains(&entry.id) {
                return Err(Error::State(format!("`{}` appears twice in the pools", entry.id)));
            }
            if entry.label >= self.num_classes {
                return Err(Error::State(format!("label {} out of range", entry.label)));
            }
        }
        if let Some(missing) = self
            .labeled
            .iter()
            .map(|e| &e.id)
            .chain(self.unlabeled.iter())
            .find(|id| !corpus.contains(id))
        {
            return Err(Error::State(format!("`{missing}` is not in the corpus")));
        }
        Ok(())
    }
}

/// Seeds the labeled pool with `n_init` gold-labeled instances drawn uniformly
/// without replacement; everything else becomes unlabeled.
pub fn seed_pools(corpus: &Corpus, n_init: usize, seed: u64, num_classes: usize) -> Result<DataPools> {
    seed_pools_with(corpus, n_init, seed, num_classes, false)
}

/// As [`seed_pools`], optionally stratified: classes are visited round-robin
/// so the initial pool is as balanced as the gold labels allow.
pub fn seed_pools_with(
    corpus: &Corpus,
    n_init: usize,
    seed: u64,
    num_classes: usize,
    stratified: bool,
) -> Result<DataPools> {
    if n_init > corpus.len() {
        return Err(Error::Validation(format!(
            "n_init {n_init} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let mut candidates: Vec<(&str, usize)> = corpus
        .iter()
        .filter_map(|inst| inst.gold_label.map(|g| (inst.id.as_str(), g)))
        .collect();
    if candidates.len() < n_init {
        return Err(Error::InsufficientLabels {
            required: n_init,
            available: candidates.len(),
        });
    }
    // Sorting first makes the draw a function of the id set, not file order.
    candidates.sort_unstable();
    let mut rng = rng::stream(seed, "seed-pools", 0);
    candidates.shuffle(&mut rng);

    let chosen: Vec<(&str, usize)> = if stratified {
        let mut by_class: BTreeMap<usize, std::collections::VecDeque<(&str, usize)>> =
            BTreeMap::new();
        for c in &candidates {
            by_class.entry(c.1).or_default().push_back(*c);
        }
        let mut out = Vec::with_capacity(n_init);
        while out.len() < n_init {
            for queue in by_class.values_mut() {
                if out.len() == n_init {
                    break;
                }
                if let Some(c) = queue.pop_front() {
                    out.push(c);
                }
            }
        }
        out
    } else {
        candidates[..n_init].to_vec()
    };

    let mut labeled: Vec<LabeledEntry> = chosen
        .iter()
        .map(|&(id, g)| LabeledEntry::new(id, g, LabelSource::Gold))
        .collect();
    labeled.sort_by(|a, b| a.id.cmp(&b.id));
    let taken: HashSet<&str> = chosen.iter().map(|c| c.0).collect();
    let unlabeled = corpus
        .iter()
        .filter(|inst| !taken.contains(inst.id.as_str()))
        .map(|inst| inst.id.clone())
        .collect();
    Ok(DataPools {
        labeled,
        unlabeled,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn ag_news() -> LabelSpace {
        LabelSpace::new(["World", "Sports", "Business", "Sci/Tech"]).unwrap()
    }

    fn write_tmp(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn synthetic_corpus(n: usize) -> Corpus {
        let instances = (0..n)
            .map(|i| Instance::new(format!("doc-{i:05}"), format!("text {i}"), Some(i % 4)))
            .collect();
        Corpus::new(instances, &ag_news()).unwrap()
    }

    #[test]
    fn label_space_rejects_bad_input() {
        assert!(LabelSpace::new(["only"]).is_err());
        assert!(LabelSpace::new(["a", "A"]).is_err());
        assert!(LabelSpace::new(["a", " "]).is_err());
        let space = ag_news();
        for (i, name) in space.names().iter().enumerate() {
            assert_eq!(space.index_of(name), Some(i));
        }
    }

    #[test]
    fn loads_jsonl_in_order() {
        let f = write_tmp(
            concat!(
                r#"{"id": "a", "text": "stocks fall", "label": "Business"}"#,
                "\n",
                r#"{"id": "b", "text": "goal!", "label": "Sports"}"#,
                "\n\n",
                r#"{"id": 3, "text": "new chip"}"#,
                "\n"
            ),
            ".jsonl",
        );
        let corpus = load_corpus(f.path(), DataFormat::Jsonl, &ag_news()).unwrap();
        assert_eq!(corpus.len(), 3);
        let ids: Vec<_> = corpus.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "3"]);
        assert_eq!(corpus.get("a").unwrap().gold_label, Some(2));
        assert_eq!(corpus.get("3").unwrap().gold_label, None);
    }

    #[test]
    fn misspelled_label_is_rejected_with_line() {
        let f = write_tmp(
            concat!(
                r#"{"id": "a", "text": "x", "label": "World"}"#,
                "\n",
                r#"{"id": "b", "text": "y", "label": "Sprots"}"#,
                "\n"
            ),
            ".jsonl",
        );
        let err = load_corpus(f.path(), DataFormat::Jsonl, &ag_news()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("Sprots"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let f = write_tmp("{\"id\": \"a\", \"text\": \"x\"}\n{not json\n", ".jsonl");
        let err = load_corpus(f.path(), DataFormat::Jsonl, &ag_news()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = write_tmp(
            "{\"id\": \"a\", \"text\": \"x\"}\n{\"id\": \"a\", \"text\": \"y\"}\n",
            ".jsonl",
        );
        let err = load_corpus(f.path(), DataFormat::Jsonl, &ag_news()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn csv_with_missing_labels() {
        let f = write_tmp(
            "id,text,label\n1,alpha,World\n2,beta,\n3,\"gamma, delta\",Sports\n4,eps,\n5,zeta,Sci/Tech\n",
            ".csv",
        );
        let corpus = load_corpus(f.path(), DataFormat::Csv, &ag_news()).unwrap();
        assert_eq!(corpus.len(), 5);
        assert_eq!(corpus.iter().filter(|i| i.gold_label.is_none()).count(), 2);
        assert_eq!(corpus.get("3").unwrap().text, "gamma, delta");
        assert_eq!(DataFormat::from_path(f.path()), DataFormat::Csv);
    }

    #[test]
    fn seeding_sizes_and_determinism() {
        let corpus = synthetic_corpus(1000);
        let pools = seed_pools(&corpus, 50, 7, 4).unwrap();
        assert_eq!(pools.labeled().len(), 50);
        assert_eq!(pools.unlabeled().len(), 950);
        pools.check(&corpus).unwrap();
        let again = seed_pools(&corpus, 50, 7, 4).unwrap();
        assert_eq!(pools, again);
        let other = seed_pools(&corpus, 50, 8, 4).unwrap();
        assert_ne!(pools.labeled(), other.labeled());

        let empty = seed_pools(&corpus, 0, 7, 4).unwrap();
        assert!(empty.labeled().is_empty());
        assert_eq!(empty.unlabeled().len(), 1000);
    }

    #[test]
    fn seeding_ignores_file_order() {
        let corpus = synthetic_corpus(200);
        let mut reversed: Vec<Instance> = corpus.instances().to_vec();
        reversed.reverse();
        let reversed = Corpus::new(reversed, &ag_news()).unwrap();
        assert_eq!(
            seed_pools(&corpus, 20, 3, 4).unwrap(),
            seed_pools(&reversed, 20, 3, 4).unwrap()
        );
    }

    #[test]
    fn stratified_seeding_is_balanced() {
        let corpus = synthetic_corpus(400);
        let pools = seed_pools_with(&corpus, 40, 1, 4, true).unwrap();
        let mut counts = [0usize; 4];
        for e in pools.labeled() {
            counts[e.label] += 1;
        }
        assert_eq!(counts, [10; 4]);
    }

    #[test]
    fn seeding_needs_enough_gold() {
        let instances = (0..10)
            .map(|i| Instance::new(format!("{i}"), "t", (i < 3).then_some(0)))
            .collect();
        let corpus = Corpus::new(instances, &ag_news()).unwrap();
        assert!(matches!(
            seed_pools(&corpus, 5, 0, 4),
            Err(Error::InsufficientLabels {
                required: 5,
                available: 3
            })
        ));
    }

    #[test]
    fn transfer_moves_and_guards() {
        let corpus = synthetic_corpus(100);
        let mut pools = seed_pools(&corpus, 10, 1, 4).unwrap();
        let batch: Vec<LabeledEntry> = pools
            .unlabeled()
            .iter()
            .take(50)
            .map(|id| LabeledEntry::new(id.clone(), 1, LabelSource::Molam))
            .collect();
        pools.transfer(&batch).unwrap();
        assert_eq!(pools.labeled().len(), 60);
        assert_eq!(pools.unlabeled().len(), 40);
        pools.check(&corpus).unwrap();

        let before = pools.clone();
        pools.transfer(&[]).unwrap();
        assert_eq!(before, pools);

        let again = [batch[0].clone()];
        assert!(matches!(pools.transfer(&again), Err(Error::State(_))));
        let free = pools.unlabeled().iter().next().unwrap().clone();
        let dup = [
            LabeledEntry::new(free.clone(), 0, LabelSource::Molam),
            LabeledEntry::new(free, 0, LabelSource::Molam),
        ];
        assert!(matches!(pools.transfer(&dup), Err(Error::Validation(_))));
        assert_eq!(before, pools);
    }

    #[test]
    fn pools_round_trip_through_json() {
        let corpus = synthetic_corpus(30);
        let pools = seed_pools(&corpus, 5, 2, 4).unwrap();
        let json = serde_json::to_string(&pools).unwrap();
        let back: DataPools = serde_json::from_str(&json).unwrap();
        assert_eq!(pools, back);
    }
}
