//! Triple datasets, vocabularies, relation domains and the gold index used
//! by filtered evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    /// Entity occupying `side`.
    pub fn entity(&self, side: Side) -> EntityId {
        match side {
            Side::Head => self.head,
            Side::Tail => self.tail,
        }
    }

    /// Copy of this triple with the `side` slot replaced by `entity`.
    pub fn with_entity(&self, side: Side, entity: EntityId) -> Self {
        match side {
            Side::Head => Self { head: entity, ..*self },
            Side::Tail => Self { tail: entity, ..*self },
        }
    }
}

/// Which end of a triple an entity occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Head, Side::Tail];

    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Head => "head",
            Side::Tail => "tail",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "head" | "h" => Ok(Side::Head),
            "tail" | "t" => Ok(Side::Tail),
            other => Err(Error::Config(format!("unknown side `{other}`"))),
        }
    }
}

/// Column order of a triple file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TripleFormat {
    /// `head<TAB>relation<TAB>tail`
    #[default]
    Hrt,
    /// `head<TAB>tail<TAB>relation`
    Htr,
}

impl FromStr for TripleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hrt" => Ok(TripleFormat::Hrt),
            "htr" => Ok(TripleFormat::Htr),
            other => Err(Error::Config(format!("unknown triple format `{other}`"))),
        }
    }
}

/// Bijective label <-> id map; ids are assigned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vocabulary of `n` synthetic labels `{prefix}0 .. {prefix}{n-1}`.
    pub fn numbered(prefix: &str, n: usize) -> Self {
        let mut vocab = Self::new();
        for i in 0..n {
            vocab.intern(&format!("{prefix}{i}"));
        }
        vocab
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Up to `n` labels closest to `label` by Levenshtein distance.
    pub fn nearest(&self, label: &str, n: usize) -> Vec<String> {
        let mut scored: Vec<(usize, &String)> = self
            .labels
            .iter()
            .map(|l| (strsim::levenshtein(label, l), l))
            .collect();
        scored.sort();
        scored.into_iter().take(n).map(|(_, l)| l.clone()).collect()
    }

    /// Resolve a label or fail with nearest-match suggestions.
    pub fn resolve(&self, label: &str, kind: &'static str) -> Result<u32> {
        self.id(label).ok_or_else(|| Error::UnknownLabel {
            kind,
            label: label.to_owned(),
            suggestions: self.nearest(label, 3),
        })
    }

    /// Write `label<TAB>id` lines.
    pub fn write_id_map(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (id, label) in self.labels.iter().enumerate() {
            writeln!(out, "{label}\t{id}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// The head or tail domain of one relation: every entity seen in that slot
/// of the relation in the training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    pub relation: RelationId,
    pub side: Side,
    /// Sorted, unique.
    pub members: Vec<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationCategory {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 4] = [
        RelationCategory::OneToOne,
        RelationCategory::OneToMany,
        RelationCategory::ManyToOne,
        RelationCategory::ManyToMany,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelationCategory::OneToOne => "1-to-1",
            RelationCategory::OneToMany => "1-to-N",
            RelationCategory::ManyToOne => "N-to-1",
            RelationCategory::ManyToMany => "N-to-N",
        }
    }

    /// Categorize from average heads-per-tail and tails-per-head.
    pub fn from_multiplicity(heads_per_tail: f64, tails_per_head: f64) -> Self {
        let many_heads = heads_per_tail > CATEGORY_THRESHOLD;
        let many_tails = tails_per_head > CATEGORY_THRESHOLD;
        match (many_heads, many_tails) {
            (false, false) => RelationCategory::OneToOne,
            (false, true) => RelationCategory::OneToMany,
            (true, false) => RelationCategory::ManyToOne,
            (true, true) => RelationCategory::ManyToMany,
        }
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Average multiplicity above which a relation side counts as "N".
pub const CATEGORY_THRESHOLD: f64 = 1.5;

/// Triple splits over shared vocabularies. Immutable once built.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    gold: HashSet<Triple>,
    // (head, relation) -> gold tails, (relation, tail) -> gold heads
    gold_tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    gold_heads: HashMap<(RelationId, EntityId), Vec<EntityId>>,
}

impl KnowledgeGraph {
    /// Build from id-level splits. Fails if any id is out of range.
    pub fn new(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let (n_ent, n_rel) = (entities.len() as u32, relations.len() as u32);
        for t in train.iter().chain(&valid).chain(&test) {
            if t.head >= n_ent || t.tail >= n_ent || t.relation >= n_rel {
                return Err(Error::Config(format!(
                    "triple ({}, {}, {}) out of range for {n_ent} entities / {n_rel} relations",
                    t.head, t.relation, t.tail
                )));
            }
        }

        let gold: HashSet<Triple> = train.iter().chain(&valid).chain(&test).copied().collect();
        let mut gold_tails: HashMap<_, Vec<_>> = HashMap::new();
        let mut gold_heads: HashMap<_, Vec<_>> = HashMap::new();
        // sort so lookups are deterministic regardless of hash order
        let mut sorted: Vec<&Triple> = gold.iter().collect();
        sorted.sort();
        for t in sorted {
            gold_tails.entry((t.head, t.relation)).or_default().push(t.tail);
            gold_heads.entry((t.relation, t.tail)).or_default().push(t.head);
        }

        Ok(Self {
            entities,
            relations,
            train,
            valid,
            test,
            gold,
            gold_tails,
            gold_heads,
        })
    }

    /// Synthetic graph with numbered labels, for tests and tooling.
    pub fn from_ids(
        num_entities: usize,
        num_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        Self::new(
            Vocab::numbered("e", num_entities),
            Vocab::numbered("r", num_relations),
            train,
            valid,
            test,
        )
    }

    /// Build from labeled triples, interning train, then valid, then test.
    pub fn from_labeled<S: AsRef<str>>(
        train: &[[S; 3]],
        valid: &[[S; 3]],
        test: &[[S; 3]],
    ) -> Result<Self> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut intern = |rows: &[[S; 3]]| -> Vec<Triple> {
            rows.iter()
                .map(|[h, r, t]| {
                    let head = entities.intern(h.as_ref());
                    let relation = relations.intern(r.as_ref());
                    let tail = entities.intern(t.as_ref());
                    Triple::new(head, relation, tail)
                })
                .collect()
        };
        let train = intern(train);
        let valid = intern(valid);
        let test = intern(test);
        Self::new(entities, relations, train, valid, test)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn gold_len(&self) -> usize {
        self.gold.len()
    }

    /// True iff the triple appears in any split.
    pub fn is_gold(&self, triple: &Triple) -> bool {
        self.gold.contains(triple)
    }

    /// Entities `e` such that replacing `side` of `triple` by `e` gives a
    /// gold triple (the gold entity itself included).
    pub fn gold_candidates(&self, triple: &Triple, side: Side) -> &[EntityId] {
        let found = match side {
            Side::Tail => self.gold_tails.get(&(triple.head, triple.relation)),
            Side::Head => self.gold_heads.get(&(triple.relation, triple.tail)),
        };
        found.map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn label_triple(&self, t: &Triple) -> [&str; 3] {
        [
            self.entities.label(t.head).unwrap_or("?"),
            self.relations.label(t.relation).unwrap_or("?"),
            self.entities.label(t.tail).unwrap_or("?"),
        ]
    }
}

fn read_triples(
    path: &Path,
    format: TripleFormat,
    entities: &mut Vocab,
    relations: &mut Vocab,
) -> Result<Vec<Triple>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let (h, r, t) = match format {
            TripleFormat::Hrt => (fields[0], fields[1], fields[2]),
            TripleFormat::Htr => (fields[0], fields[2], fields[1]),
        };
        let head = entities.intern(h);
        let relation = relations.intern(r);
        let tail = entities.intern(t);
        triples.push(Triple::new(head, relation, tail));
    }
    Ok(triples)
}

/// Load the three splits. Vocabulary ids follow first-seen order over
/// train, then valid, then test.
pub fn load_graph(
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
    format: TripleFormat,
) -> Result<KnowledgeGraph> {
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let train = read_triples(train_path, format, &mut entities, &mut relations)?;
    let valid = read_triples(valid_path, format, &mut entities, &mut relations)?;
    let test = read_triples(test_path, format, &mut entities, &mut relations)?;
    KnowledgeGraph::new(entities, relations, train, valid, test)
}

/// Load `train.txt`, `valid.txt` and `test.txt` from a directory.
pub fn load_dataset_dir(dir: &Path, format: TripleFormat) -> Result<KnowledgeGraph> {
    load_graph(
        &dir.join("train.txt"),
        &dir.join("valid.txt"),
        &dir.join("test.txt"),
        format,
    )
}

/// Write triples as labels in `format` column order.
pub fn write_triples(
    graph: &KnowledgeGraph,
    triples: &[Triple],
    path: &Path,
    format: TripleFormat,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for t in triples {
        let [h, r, tl] = graph.label_triple(t);
        let res = match format {
            TripleFormat::Hrt => writeln!(out, "{h}\t{r}\t{tl}"),
            TripleFormat::Htr => writeln!(out, "{h}\t{tl}\t{r}"),
        };
        res.map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Head and tail domains of every relation present in the training split,
/// ordered by relation id, head before tail.
pub fn extract_domains(graph: &KnowledgeGraph) -> Vec<Domain> {
    let mut heads: BTreeMap<RelationId, BTreeSet<EntityId>> = BTreeMap::new();
    let mut tails: BTreeMap<RelationId, BTreeSet<EntityId>> = BTreeMap::new();
    for t in &graph.train {
        heads.entry(t.relation).or_default().insert(t.head);
        tails.entry(t.relation).or_default().insert(t.tail);
    }
    let mut domains = Vec::with_capacity(heads.len() * 2);
    for (relation, head_set) in heads {
        domains.push(Domain {
            relation,
            side: Side::Head,
            members: head_set.into_iter().collect(),
        });
        domains.push(Domain {
            relation,
            side: Side::Tail,
            members: tails.remove(&relation).unwrap_or_default().into_iter().collect(),
        });
    }
    domains
}

/// Heads-per-tail and tails-per-head averages over distinct (h, t) pairs.
fn multiplicities<'a>(
    triples: impl Iterator<Item = &'a Triple>,
) -> BTreeMap<RelationId, (f64, f64)> {
    let mut pairs: BTreeMap<RelationId, BTreeSet<(EntityId, EntityId)>> = BTreeMap::new();
    for t in triples {
        pairs.entry(t.relation).or_default().insert((t.head, t.tail));
    }
    pairs
        .into_iter()
        .map(|(r, set)| {
            let heads: BTreeSet<_> = set.iter().map(|p| p.0).collect();
            let tails: BTreeSet<_> = set.iter().map(|p| p.1).collect();
            let n = set.len() as f64;
            (r, (n / tails.len() as f64, n / heads.len() as f64))
        })
        .collect()
}

/// Mapping category of every relation in the vocabulary. Relations seen in
/// training are categorized from the training split; relations that only
/// occur in valid/test fall back to all gold triples.
pub fn classify_relations(graph: &KnowledgeGraph) -> BTreeMap<RelationId, RelationCategory> {
    let from_train = multiplicities(graph.train.iter());
    let from_all = multiplicities(graph.gold.iter());
    (0..graph.num_relations() as RelationId)
        .filter_map(|r| {
            let (hpt, tph) = from_train.get(&r).or_else(|| from_all.get(&r))?;
            Some((r, RelationCategory::from_multiplicity(*hpt, *tph)))
        })
        .collect()
}
