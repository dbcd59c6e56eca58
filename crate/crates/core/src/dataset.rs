//! Rating ingestion, sparse per-domain rating matrices and experiment splits.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, fraction_count, sample_indices};

pub const MATRIX_VERSION: &str = "coldmap-matrix-v1";

/// One observed rating as read from a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    pub timestamp: Option<i64>,
}

impl RatingRecord {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, rating: u8) -> Self {
        RatingRecord {
            user_id: user_id.into(),
            item_id: item_id.into(),
            rating,
            timestamp: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Csv,
}

/// Reads `user,item,rating[,timestamp]` lines.
pub fn parse_ratings_file(
    path: &Path,
    format: InputFormat,
    has_header: bool,
) -> Result<Vec<RatingRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(file, path, format, has_header)
}

/// Same as [`parse_ratings_file`] over any reader; `origin` labels errors.
pub fn parse_ratings<R: Read>(
    reader: R,
    origin: &Path,
    format: InputFormat,
    has_header: bool,
) -> Result<Vec<RatingRecord>> {
    let InputFormat::Csv = format;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: e.position().map_or(line, |p| p.line()),
                    message: e.to_string(),
                })
            }
        }
        let line = row.position().map_or(line, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() < 3 || row.len() > 4 {
            return Err(parse_err(format!(
                "expected user,item,rating[,timestamp], found {} fields",
                row.len()
            )));
        }
        if row[0].is_empty() || row[1].is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let rating: i64 = row[2]
            .parse()
            .map_err(|_| parse_err(format!("rating `{}` is not an integer", &row[2])))?;
        if !(1..=5).contains(&rating) {
            return Err(Error::RatingOutOfRange {
                path: origin.to_path_buf(),
                line,
                rating,
            });
        }
        let timestamp = match row.get(3) {
            Some(t) if !t.is_empty() => Some(
                t.parse()
                    .map_err(|_| parse_err(format!("timestamp `{t}` is not an integer")))?,
            ),
            _ => None,
        };
        out.push(RatingRecord {
            user_id: row[0].to_string(),
            item_id: row[1].to_string(),
            rating: rating as u8,
            timestamp,
        });
    }
    Ok(out)
}

/// Bijection between opaque string ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidParam(format!("duplicate vocabulary id `{id}`")));
            }
        }
        Ok(Vocab { ids, index })
    }

    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub user: usize,
    pub item: usize,
    pub rating: u8,
}

/// Sparse user x item rating store.
///
/// Entries are kept sorted by `(user, item)`, giving CSR access per user; a
/// per-item list of entry positions gives column access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    users: Vocab,
    items: Vocab,
    entries: Vec<Entry>,
    user_ptr: Vec<usize>,
    item_entries: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    version: String,
    users: Vec<String>,
    items: Vec<String>,
    entries: Vec<(usize, usize, u8)>,
}

impl RatingMatrix {
    /// Builds a matrix; ids are indexed in order of first appearance and a
    /// repeated `(user, item)` keeps the last record's rating.
    pub fn from_records(records: &[RatingRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("no rating records".into()));
        }
        let mut users = Vocab::default();
        let mut items = Vocab::default();
        let mut cells: HashMap<(usize, usize), u8> = HashMap::with_capacity(records.len());
        for r in records {
            if !(1..=5).contains(&r.rating) {
                return Err(Error::InvalidParam(format!(
                    "rating {} for ({}, {}) outside 1..=5",
                    r.rating, r.user_id, r.item_id
                )));
            }
            let u = users.intern(&r.user_id);
            let i = items.intern(&r.item_id);
            cells.insert((u, i), r.rating);
        }
        let entries = cells
            .into_iter()
            .map(|((user, item), rating)| Entry { user, item, rating })
            .collect();
        Ok(Self::assemble(users, items, entries))
    }

    fn assemble(users: Vocab, items: Vocab, mut entries: Vec<Entry>) -> Self {
        entries.sort_unstable_by_key(|e| (e.user, e.item));
        let mut user_ptr = vec![0usize; users.len() + 1];
        for e in &entries {
            user_ptr[e.user + 1] += 1;
        }
        for u in 0..users.len() {
            user_ptr[u + 1] += user_ptr[u];
        }
        let mut item_entries = vec![Vec::new(); items.len()];
        for (pos, e) in entries.iter().enumerate() {
            item_entries[e.item].push(pos);
        }
        RatingMatrix {
            users,
            items,
            entries,
            user_ptr,
            item_entries,
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn density(&self) -> f64 {
        self.entries.len() as f64 / (self.n_users() as f64 * self.n_items() as f64)
    }

    pub fn users(&self) -> &Vocab {
        &self.users
    }

    pub fn items(&self) -> &Vocab {
        &self.items
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Ratings of user `u`, sorted by item index.
    pub fn user_entries(&self, u: usize) -> &[Entry] {
        &self.entries[self.user_ptr[u]..self.user_ptr[u + 1]]
    }

    pub fn item_entries(&self, i: usize) -> impl Iterator<Item = &Entry> + '_ {
        self.item_entries[i].iter().map(move |&p| &self.entries[p])
    }

    pub fn user_count(&self, u: usize) -> usize {
        self.user_ptr[u + 1] - self.user_ptr[u]
    }

    pub fn item_count(&self, i: usize) -> usize {
        self.item_entries[i].len()
    }

    pub fn get(&self, u: usize, i: usize) -> Option<u8> {
        let row = self.user_entries(u);
        row.binary_search_by_key(&i, |e| e.item)
            .ok()
            .map(|p| row[p].rating)
    }

    pub fn get_by_id(&self, user: &str, item: &str) -> Option<u8> {
        self.get(self.users.index_of(user)?, self.items.index_of(item)?)
    }

    pub fn records(&self) -> impl Iterator<Item = RatingRecord> + '_ {
        self.entries.iter().map(|e| RatingRecord {
            user_id: self.users.id(e.user).to_string(),
            item_id: self.items.id(e.item).to_string(),
            rating: e.rating,
            timestamp: None,
        })
    }

    /// Keeps the entries for which `keep` is true and drops users and items
    /// left without ratings. Surviving ids keep their relative order.
    pub fn retain_entries(&self, mut keep: impl FnMut(usize, &Entry) -> bool) -> Result<Self> {
        let kept: Vec<Entry> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(p, e)| keep(*p, e))
            .map(|(_, e)| *e)
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyResult("no ratings left after filtering".into()));
        }
        let mut user_alive = vec![false; self.n_users()];
        let mut item_alive = vec![false; self.n_items()];
        for e in &kept {
            user_alive[e.user] = true;
            item_alive[e.item] = true;
        }
        let (user_map, users) = reindex(&self.users, &user_alive);
        let (item_map, items) = reindex(&self.items, &item_alive);
        let entries = kept
            .into_iter()
            .map(|e| Entry {
                user: user_map[e.user],
                item: item_map[e.item],
                rating: e.rating,
            })
            .collect();
        Ok(Self::assemble(users, items, entries))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MatrixFile {
            version: MATRIX_VERSION.to_string(),
            users: self.users.ids.clone(),
            items: self.items.ids.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| (e.user, e.item, e.rating))
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: MatrixFile = serde_json::from_str(s)?;
        if file.version != MATRIX_VERSION {
            return Err(Error::Version {
                expected: MATRIX_VERSION.into(),
                found: file.version,
            });
        }
        let users = Vocab::from_ids(file.users)?;
        let items = Vocab::from_ids(file.items)?;
        let mut seen = BTreeSet::new();
        let mut entries = Vec::with_capacity(file.entries.len());
        for (user, item, rating) in file.entries {
            if user >= users.len() || item >= items.len() || !(1..=5).contains(&rating) {
                return Err(Error::InvalidParam(format!(
                    "bad matrix entry ({user}, {item}, {rating})"
                )));
            }
            if !seen.insert((user, item)) {
                return Err(Error::InvalidParam(format!(
                    "duplicate matrix entry ({user}, {item})"
                )));
            }
            entries.push(Entry { user, item, rating });
        }
        Ok(Self::assemble(users, items, entries))
    }
}

fn reindex(vocab: &Vocab, alive: &[bool]) -> (Vec<usize>, Vocab) {
    let mut map = vec![usize::MAX; vocab.len()];
    let mut ids = Vec::new();
    for (old, &a) in alive.iter().enumerate() {
        if a {
            map[old] = ids.len();
            ids.push(vocab.id(old).to_string());
        }
    }
    let vocab = Vocab::from_ids(ids).expect("subset of a vocabulary is unique");
    (map, vocab)
}

/// Alias kept for the pipeline's naming.
pub fn build_rating_matrix(records: &[RatingRecord]) -> Result<RatingMatrix> {
    RatingMatrix::from_records(records)
}

/// Iteratively drops users with fewer than `min_user` ratings and items with
/// fewer than `min_item` ratings until nothing changes.
pub fn filter_min_ratings(m: &RatingMatrix, min_user: usize, min_item: usize) -> Result<RatingMatrix> {
    let mut user_alive = vec![true; m.n_users()];
    let mut item_alive = vec![true; m.n_items()];
    loop {
        let mut user_cnt = vec![0usize; m.n_users()];
        let mut item_cnt = vec![0usize; m.n_items()];
        for e in m.entries() {
            if user_alive[e.user] && item_alive[e.item] {
                user_cnt[e.user] += 1;
                item_cnt[e.item] += 1;
            }
        }
        let mut changed = false;
        for u in 0..m.n_users() {
            if user_alive[u] && user_cnt[u] < min_user.max(1) {
                user_alive[u] = false;
                changed = true;
            }
        }
        for i in 0..m.n_items() {
            if item_alive[i] && item_cnt[i] < min_item.max(1) {
                item_alive[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    m.retain_entries(|_, e| user_alive[e.user] && item_alive[e.item])
        .map_err(|_| Error::EmptyResult(format!(
            "no ratings survive min_user={min_user}, min_item={min_item}"
        )))
}

/// Target and auxiliary domains with their shared users.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub target: RatingMatrix,
    pub auxiliary: RatingMatrix,
    pub linked_users: BTreeSet<String>,
    pub cold_start_users: BTreeSet<String>,
}

impl DomainPair {
    /// Linked users are those present in both matrices; cold-start users are
    /// those with auxiliary ratings only.
    pub fn new(target: RatingMatrix, auxiliary: RatingMatrix) -> Self {
        let mut linked_users = BTreeSet::new();
        let mut cold_start_users = BTreeSet::new();
        for id in auxiliary.users().ids() {
            if target.users().index_of(id).is_some() {
                linked_users.insert(id.clone());
            } else {
                cold_start_users.insert(id.clone());
            }
        }
        DomainPair {
            target,
            auxiliary,
            linked_users,
            cold_start_users,
        }
    }

    /// `(auxiliary index, target index)` of every linked user, in id order.
    pub fn linked_indices(&self) -> Vec<(usize, usize)> {
        self.linked_users
            .iter()
            .filter_map(|id| {
                Some((
                    self.auxiliary.users().index_of(id)?,
                    self.target.users().index_of(id)?,
                ))
            })
            .collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        for id in &self.cold_start_users {
            if self.target.users().index_of(id).is_some() {
                return Err(Error::InvalidParam(format!(
                    "cold-start user `{id}` has target ratings"
                )));
            }
        }
        for id in &self.linked_users {
            if self.target.users().index_of(id).is_none()
                || self.auxiliary.users().index_of(id).is_none()
            {
                return Err(Error::InvalidParam(format!(
                    "linked user `{id}` missing from a domain"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub cold_start_fraction: f64,
    pub density_level: f64,
    pub overlap_level: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            cold_start_fraction: 0.5,
            density_level: 1.0,
            overlap_level: 1.0,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.density_level) || !unit(self.overlap_level) {
            return Err(Error::InvalidParam(format!(
                "density_level {} and overlap_level {} must lie in (0, 1]",
                self.density_level, self.overlap_level
            )));
        }
        if self.density_level < 1.0 && self.overlap_level < 1.0 {
            return Err(Error::InvalidParam(
                "only one of density_level and overlap_level may be below 1".into(),
            ));
        }
        let f = self.effective_cold_fraction();
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidParam(format!(
                "cold-start fraction {f} must lie in (0, 1)"
            )));
        }
        Ok(())
    }

    /// An overlap level below 1 turns `1 - overlap_level` of the linked users
    /// cold; otherwise `cold_start_fraction` applies.
    pub fn effective_cold_fraction(&self) -> f64 {
        if self.overlap_level < 1.0 {
            1.0 - self.overlap_level
        } else {
            self.cold_start_fraction
        }
    }
}

/// Moves the given linked users to the cold-start set and returns their
/// target ratings as the test set.
pub fn split_with_cold_users(
    pair: &DomainPair,
    cold: &BTreeSet<String>,
) -> Result<(DomainPair, Vec<RatingRecord>)> {
    if cold.is_empty() {
        return Err(Error::EmptyResult("cold-start sample is empty".into()));
    }
    let target = &pair.target;
    let cold_idx: Vec<bool> = target
        .users()
        .ids()
        .iter()
        .map(|id| cold.contains(id))
        .collect();
    let test: Vec<RatingRecord> = target
        .records()
        .filter(|r| cold.contains(&r.user_id))
        .collect();
    let train_target = target.retain_entries(|_, e| !cold_idx[e.user])?;
    let linked_users = pair
        .linked_users
        .iter()
        .filter(|id| !cold.contains(*id))
        .cloned()
        .collect();
    let train = DomainPair {
        target: train_target,
        auxiliary: pair.auxiliary.clone(),
        linked_users,
        cold_start_users: cold.clone(),
    };
    Ok((train, test))
}

/// Samples `floor(fraction * |linked|)` linked users as cold-start users.
pub fn select_cold_start_split(
    pair: &DomainPair,
    spec: &SplitSpec,
) -> Result<(DomainPair, Vec<RatingRecord>)> {
    spec.validate()?;
    if pair.linked_users.is_empty() {
        return Err(Error::EmptyInput("no linked users".into()));
    }
    let linked: Vec<&String> = pair.linked_users.iter().collect();
    let k = fraction_count(spec.effective_cold_fraction(), linked.len());
    if k == 0 {
        return Err(Error::EmptyResult(format!(
            "cold-start fraction {} of {} linked users selects nobody",
            spec.effective_cold_fraction(),
            linked.len()
        )));
    }
    let mut rng = rng::seeded(spec.seed);
    let cold: BTreeSet<String> = sample_indices(&mut rng, linked.len(), k)
        .into_iter()
        .map(|i| linked[i].clone())
        .collect();
    split_with_cold_users(pair, &cold)
}

/// Keeps `floor(level * |entries|)` auxiliary ratings, then the same fraction
/// of the (already cold-start-free) target ratings.
pub fn subsample_density(train: &DomainPair, level: f64, seed: u64) -> Result<DomainPair> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidParam(format!("density level {level} not in (0, 1]")));
    }
    if level == 1.0 {
        return Ok(train.clone());
    }
    let mut rng = rng::seeded(seed);
    let mut thin = |m: &RatingMatrix, name: &str| -> Result<RatingMatrix> {
        let k = fraction_count(level, m.len());
        let keep = sample_indices(&mut rng, m.len(), k);
        let mut mask = vec![false; m.len()];
        for p in keep {
            mask[p] = true;
        }
        m.retain_entries(|p, _| mask[p])
            .map_err(|_| Error::EmptyResult(format!("{name} domain empty at density {level}")))
    };
    let auxiliary = thin(&train.auxiliary, "auxiliary")?;
    let target = thin(&train.target, "target")?;
    let linked_users = train
        .linked_users
        .iter()
        .filter(|id| {
            target.users().index_of(id).is_some() && auxiliary.users().index_of(id).is_some()
        })
        .cloned()
        .collect();
    let cold_start_users = train
        .cold_start_users
        .iter()
        .filter(|id| auxiliary.users().index_of(id).is_some())
        .cloned()
        .collect();
    Ok(DomainPair {
        target,
        auxiliary,
        linked_users,
        cold_start_users,
    })
}

/// Cold-start selection followed by density thinning; the thinning seed is
/// derived from `spec.seed`.
pub fn make_split(pair: &DomainPair, spec: &SplitSpec) -> Result<(DomainPair, Vec<RatingRecord>)> {
    let (train, test) = select_cold_start_split(pair, spec)?;
    let train = subsample_density(
        &train,
        spec.density_level,
        rng::derive_seed(spec.seed, rng::offsets::DENSITY),
    )?;
    Ok((train, test))
}
