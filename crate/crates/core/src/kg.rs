//! Knowledge-graph storage: vocabularies, TSV loading, the walkable
//! adjacency index and train/test splitting.
//!
//! Every base relation `r` gets an inverse partner named `_r`, and relation
//! id 0 is reserved for [`SELF_LOOP`]. Ids are laid out so that base
//! relation `k` (0-based, in order of first appearance) has id `2k + 1` and
//! its inverse `2k + 2`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::DebateRng;

pub type EntityId = usize;
pub type RelationId = usize;

pub const SELF_LOOP: RelationId = 0;
pub const SELF_LOOP_NAME: &str = "SELF_LOOP";
pub const INVERSE_PREFIX: char = '_';

const SNAPSHOT_MAGIC: &str = "KGDEBATE-SNAPSHOT";
const SNAPSHOT_VERSION: u32 = 1;

/// Inverse partner of a relation id; the self loop is its own inverse.
pub fn inverse_of(r: RelationId) -> RelationId {
    match r {
        SELF_LOOP => SELF_LOOP,
        r if r % 2 == 1 => r + 1,
        r => r - 1,
    }
}

/// Bidirectional name/id maps for entities and relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    entity_names: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_ids: HashMap<String, RelationId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    entities: Vec<String>,
    relations: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(repr: VocabRepr) -> Self {
        let mut vocab = Vocab::new();
        for name in repr.entities {
            vocab.intern_entity(&name);
        }
        for name in repr.relations {
            // Names came from a vocab that already accepted them.
            let _ = vocab.intern_relation(&name);
        }
        vocab
    }
}

impl From<Vocab> for VocabRepr {
    fn from(vocab: Vocab) -> Self {
        let relations = vocab
            .base_relations()
            .map(|r| vocab.relation_name(r).to_owned())
            .collect();
        VocabRepr {
            entities: vocab.entity_names,
            relations,
        }
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut relation_ids = HashMap::new();
        relation_ids.insert(SELF_LOOP_NAME.to_owned(), SELF_LOOP);
        Self {
            entity_names: Vec::new(),
            entity_ids: HashMap::new(),
            relation_names: vec![SELF_LOOP_NAME.to_owned()],
            relation_ids,
        }
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = self.entity_names.len();
        self.entity_names.push(name.to_owned());
        self.entity_ids.insert(name.to_owned(), id);
        id
    }

    /// Interns a base relation and its inverse. Fails if `name` (or its
    /// inverse name) is already taken by a relation of the other kind.
    pub fn intern_relation(&mut self, name: &str) -> Result<RelationId> {
        if let Some(&id) = self.relation_ids.get(name) {
            if self.is_base(id) {
                return Ok(id);
            }
            return Err(Error::InvalidInput(format!(
                "relation name {name:?} collides with a reserved or inverse relation"
            )));
        }
        let inverse_name = format!("{INVERSE_PREFIX}{name}");
        if self.relation_ids.contains_key(&inverse_name) {
            return Err(Error::InvalidInput(format!(
                "inverse name {inverse_name:?} of relation {name:?} is already a base relation"
            )));
        }
        let id = self.relation_names.len();
        self.relation_names.push(name.to_owned());
        self.relation_names.push(inverse_name.clone());
        self.relation_ids.insert(name.to_owned(), id);
        self.relation_ids.insert(inverse_name, id + 1);
        Ok(id)
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    /// Looks up any relation name, including `_r` inverses and `SELF_LOOP`.
    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id]
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    /// Total relation ids: base, inverse and the self loop.
    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn num_base_relations(&self) -> usize {
        (self.relation_names.len() - 1) / 2
    }

    pub fn base_relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        (1..self.relation_names.len()).step_by(2)
    }

    pub fn is_base(&self, r: RelationId) -> bool {
        r != SELF_LOOP && r % 2 == 1
    }

    pub fn is_inverse(&self, r: RelationId) -> bool {
        r != SELF_LOOP && r.is_multiple_of(2)
    }

    pub fn inverse(&self, r: RelationId) -> RelationId {
        inverse_of(r)
    }

    /// The base relation of `r` (identity for base relations and the self loop).
    pub fn base_of(&self, r: RelationId) -> RelationId {
        if self.is_inverse(r) {
            r - 1
        } else {
            r
        }
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn check_triple(&self, t: &Triple) -> Result<()> {
        if t.s >= self.num_entities() || t.o >= self.num_entities() {
            return Err(Error::InvalidInput(format!(
                "entity id out of range in {t:?} (have {})",
                self.num_entities()
            )));
        }
        if t.p >= self.num_relations() {
            return Err(Error::InvalidInput(format!(
                "relation id out of range in {t:?} (have {})",
                self.num_relations()
            )));
        }
        Ok(())
    }

    /// Resolves a `(subject, predicate, object)` name triple.
    pub fn resolve(&self, s: &str, p: &str, o: &str) -> std::result::Result<Triple, String> {
        let s = self.entity_id(s).ok_or_else(|| s.to_owned())?;
        let p = self.relation_id(p).ok_or_else(|| p.to_owned())?;
        let o = self.entity_id(o).ok_or_else(|| o.to_owned())?;
        Ok(Triple { s, p, o })
    }

    pub fn triple_names(&self, t: &Triple) -> (String, String, String) {
        (
            self.entity_name(t.s).to_owned(),
            self.relation_name(t.p).to_owned(),
            self.entity_name(t.o).to_owned(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub s: EntityId,
    pub p: RelationId,
    pub o: EntityId,
}

impl Triple {
    pub fn new(s: EntityId, p: RelationId, o: EntityId) -> Self {
        Self { s, p, o }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub triple: Triple,
    pub label: bool,
}

/// One admissible move: follow `relation` to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub relation: RelationId,
    pub target: EntityId,
}

impl Action {
    pub fn new(relation: RelationId, target: EntityId) -> Self {
        Self { relation, target }
    }

    pub fn self_loop(entity: EntityId) -> Self {
        Self::new(SELF_LOOP, entity)
    }
}

/// Reads a TSV triple file into a fresh vocabulary.
pub fn load_triples(path: impl AsRef<Path>) -> Result<(Vocab, Vec<Triple>)> {
    let mut vocab = Vocab::new();
    let triples = load_triples_into(&mut vocab, path)?;
    Ok((vocab, triples))
}

/// Reads a TSV triple file, extending an existing vocabulary.
pub fn load_triples_into(vocab: &mut Vocab, path: impl AsRef<Path>) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_triples(vocab, BufReader::new(file), path)
}

pub fn read_triples(vocab: &mut Vocab, reader: impl BufRead, source: &Path) -> Result<Vec<Triple>> {
    let mut triples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |message: String| Error::Parse {
            path: source.to_path_buf(),
            line: i + 1,
            message,
        };
        let [s, p, o] = fields[..] else {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        };
        let s = vocab.intern_entity(s);
        let p = vocab.intern_relation(p).map_err(|e| parse_err(e.to_string()))?;
        let o = vocab.intern_entity(o);
        triples.push(Triple { s, p, o });
    }
    Ok(triples)
}

pub fn write_triples(vocab: &Vocab, triples: &[Triple], mut out: impl Write) -> Result<()> {
    for t in triples {
        writeln!(
            out,
            "{}\t{}\t{}",
            vocab.entity_name(t.s),
            vocab.relation_name(t.p),
            vocab.entity_name(t.o)
        )?;
    }
    Ok(())
}

/// Adjacency in compressed-row form. `actions(e)` holds outgoing edges,
/// inverse edges and the self loop, sorted by `(relation, target)`.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    offsets: Vec<usize>,
    actions: Vec<Action>,
    facts: HashSet<Triple>,
}

impl GraphIndex {
    pub fn actions(&self, entity: EntityId) -> &[Action] {
        &self.actions[self.offsets[entity]..self.offsets[entity + 1]]
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.facts.contains(triple)
    }

    pub fn num_entities(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Distinct stored facts.
    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    pub fn total_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn has_action(&self, entity: EntityId, action: Action) -> bool {
        self.actions(entity).binary_search(&action).is_ok()
    }
}

pub fn build_index(vocab: &Vocab, facts: &[Triple]) -> Result<GraphIndex> {
    let n = vocab.num_entities();
    let mut per_entity: Vec<Vec<Action>> = (0..n).map(|e| vec![Action::self_loop(e)]).collect();
    let mut stored = HashSet::with_capacity(facts.len());
    for t in facts {
        vocab.check_triple(t)?;
        if !vocab.is_base(t.p) {
            return Err(Error::InvalidInput(format!(
                "fact {t:?} uses non-base relation {:?}",
                vocab.relation_name(t.p)
            )));
        }
        if stored.insert(*t) {
            per_entity[t.s].push(Action::new(t.p, t.o));
            per_entity[t.o].push(Action::new(vocab.inverse(t.p), t.s));
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut actions = Vec::new();
    offsets.push(0);
    for mut list in per_entity {
        list.sort_unstable();
        list.dedup();
        actions.extend(list);
        offsets.push(actions.len());
    }
    Ok(GraphIndex {
        offsets,
        actions,
        facts: stored,
    })
}

const REJECTION_ATTEMPTS: usize = 64;

/// Replaces the object of `positive` with a uniformly drawn entity `õ` such
/// that `õ != o` and `(s, p, õ)` is not in `known`.
pub fn corrupt_object(
    rng: &mut DebateRng,
    positive: &Triple,
    vocab: &Vocab,
    known: &HashSet<Triple>,
) -> Result<Triple> {
    corrupt_object_among(rng, positive, vocab.num_entities(), |i| i, known)
}

/// As [`corrupt_object`], drawing `õ` uniformly from `pool` instead of all
/// entities.
pub fn corrupt_object_from(
    rng: &mut DebateRng,
    positive: &Triple,
    pool: &[EntityId],
    known: &HashSet<Triple>,
) -> Result<Triple> {
    corrupt_object_among(rng, positive, pool.len(), |i| pool[i], known)
}

fn corrupt_object_among(
    rng: &mut DebateRng,
    positive: &Triple,
    n: usize,
    candidate: impl Fn(usize) -> EntityId,
    known: &HashSet<Triple>,
) -> Result<Triple> {
    let eligible = |o: EntityId| o != positive.o && !known.contains(&Triple::new(positive.s, positive.p, o));
    if n > 0 {
        for _ in 0..REJECTION_ATTEMPTS {
            let o = candidate(rng.random_range(0..n));
            if eligible(o) {
                return Ok(Triple::new(positive.s, positive.p, o));
            }
        }
    }
    // Dense neighbourhood: fall back to an exhaustive scan, still uniform.
    let candidates: Vec<EntityId> = (0..n).map(&candidate).filter(|&o| eligible(o)).collect();
    if candidates.is_empty() {
        return Err(Error::Exhausted {
            subject: positive.s,
            predicate: positive.p,
        });
    }
    Ok(Triple::new(
        positive.s,
        positive.p,
        candidates[rng.random_range(0..candidates.len())],
    ))
}

/// Where corrupted objects are drawn from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// Any entity.
    #[default]
    Uniform,
    /// Entities observed as the object of the same predicate somewhere in
    /// the facts, so negatives are type-plausible.
    Range,
}

impl std::str::FromStr for NegativeSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "range" => Ok(Self::Range),
            other => Err(Error::InvalidInput(format!(
                "unknown negative sampling {other:?} (expected uniform or range)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledQuery>,
    pub test: Vec<LabeledQuery>,
    /// Facts the traversal graph is built from (test positives removed).
    pub graph_facts: Vec<Triple>,
}

/// Builds balanced train/test query sets from the facts whose predicate is in
/// `target_relations`. Every positive is followed by one corrupted negative.
pub fn make_split(
    vocab: &Vocab,
    facts: &[Triple],
    target_relations: &[RelationId],
    test_fraction: f64,
    rng: &mut DebateRng,
) -> Result<DatasetSplit> {
    make_split_with(vocab, facts, target_relations, test_fraction, NegativeSampling::Uniform, rng)
}

pub fn make_split_with(
    vocab: &Vocab,
    facts: &[Triple],
    target_relations: &[RelationId],
    test_fraction: f64,
    negatives: NegativeSampling,
    rng: &mut DebateRng,
) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let known: HashSet<Triple> = facts.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut candidates: Vec<Triple> = facts
        .iter()
        .filter(|t| target_relations.contains(&t.p))
        .filter(|t| seen.insert(**t))
        .copied()
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptySplit);
    }
    candidates.shuffle(rng);
    let mut ranges: HashMap<RelationId, Vec<EntityId>> = HashMap::new();
    for t in facts {
        if target_relations.contains(&t.p) {
            ranges.entry(t.p).or_default().push(t.o);
        }
    }
    for pool in ranges.values_mut() {
        pool.sort_unstable();
        pool.dedup();
    }
    let n_test = (candidates.len() as f64 * test_fraction).floor() as usize;
    let (test_pos, train_pos) = candidates.split_at(n_test);

    let mut pair_up = |positives: &[Triple]| -> Result<Vec<LabeledQuery>> {
        let mut out = Vec::with_capacity(positives.len() * 2);
        for pos in positives {
            let negative = match negatives {
                NegativeSampling::Uniform => corrupt_object(rng, pos, vocab, &known),
                NegativeSampling::Range => corrupt_object_from(rng, pos, &ranges[&pos.p], &known),
            };
            match negative {
                Ok(neg) => {
                    out.push(LabeledQuery { triple: *pos, label: true });
                    out.push(LabeledQuery { triple: neg, label: false });
                }
                Err(Error::Exhausted { .. }) => {
                    log::debug!("skipping {pos:?}: no corruption candidate");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    };
    let test = pair_up(test_pos)?;
    let train = pair_up(train_pos)?;

    let held_out: HashSet<Triple> = test.iter().filter(|q| q.label).map(|q| q.triple).collect();
    let mut kept = HashSet::new();
    let graph_facts = facts
        .iter()
        .filter(|t| !held_out.contains(t) && kept.insert(**t))
        .copied()
        .collect();
    Ok(DatasetSplit {
        train,
        test,
        graph_facts,
    })
}

/// Everything needed to rebuild the graph and query sets: the on-disk
/// dataset produced by `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub vocab: Vocab,
    pub split: DatasetSplit,
}

impl Snapshot {
    pub fn index(&self) -> Result<GraphIndex> {
        build_index(&self.vocab, &self.split.graph_facts)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}")?;
        serde_json::to_writer(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }

    pub fn read_from(mut input: impl BufRead) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(SNAPSHOT_MAGIC) {
            return Err(Error::Format("missing snapshot magic header".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("unreadable snapshot version".into()))?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let mut body = String::new();
        input.read_to_string(&mut body)?;
        let snapshot: Snapshot = serde_json::from_str(&body)?;
        for t in snapshot
            .split
            .graph_facts
            .iter()
            .chain(snapshot.split.train.iter().map(|q| &q.triple))
            .chain(snapshot.split.test.iter().map(|q| &q.triple))
        {
            snapshot.vocab.check_triple(t)?;
        }
        Ok(snapshot)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
