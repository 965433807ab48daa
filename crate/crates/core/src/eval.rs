//! Link-prediction evaluation: for each test triple, replace the head (then
//! the tail) with every entity, rank the gold entity by combined score and
//! aggregate Mean Rank and Hits@{1,3,10} in the raw and filtered settings.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::domains::{BoundDomains, DomainModel};
use crate::error::{Error, Result};
use crate::graph::{
    classify_relations, EntityId, KnowledgeGraph, RelationCategory, RelationId, Side, Triple,
};
use crate::model::EmbeddingModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    Raw,
    Filtered,
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::Raw, Setting::Filtered];

    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Raw => "raw",
            Setting::Filtered => "filtered",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Prediction side, plus the head/tail average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SideSelector {
    Head,
    Tail,
    Combined,
}

impl SideSelector {
    pub const ALL: [SideSelector; 3] = [SideSelector::Head, SideSelector::Tail, SideSelector::Combined];

    pub fn as_str(&self) -> &'static str {
        match self {
            SideSelector::Head => "head",
            SideSelector::Tail => "tail",
            SideSelector::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieMode {
    /// rank = 1 + #strictly better
    #[default]
    Optimistic,
    /// rank = 1 + #better-or-equal
    Pessimistic,
}

impl FromStr for TieMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "optimistic" => Ok(TieMode::Optimistic),
            "pessimistic" => Ok(TieMode::Pessimistic),
            other => Err(Error::Config(format!("unknown tie mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub tie_mode: TieMode,
}

/// Mean rank and Hits@n (percentages) over a set of predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub count: usize,
    pub mean_rank: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: impl IntoIterator<Item = usize>) -> Self {
        let (mut count, mut sum, mut h1, mut h3, mut h10) = (0usize, 0f64, 0usize, 0usize, 0usize);
        for r in ranks {
            count += 1;
            sum += r as f64;
            h1 += (r <= 1) as usize;
            h3 += (r <= 3) as usize;
            h10 += (r <= 10) as usize;
        }
        if count == 0 {
            return Self {
                count,
                mean_rank: f64::NAN,
                hits1: f64::NAN,
                hits3: f64::NAN,
                hits10: f64::NAN,
            };
        }
        let pct = |h: usize| 100.0 * h as f64 / count as f64;
        Self {
            count,
            mean_rank: sum / count as f64,
            hits1: pct(h1),
            hits3: pct(h3),
            hits10: pct(h10),
        }
    }

    fn average(a: &Self, b: &Self) -> Self {
        Self {
            count: a.count + b.count,
            mean_rank: (a.mean_rank + b.mean_rank) / 2.0,
            hits1: (a.hits1 + b.hits1) / 2.0,
            hits3: (a.hits3 + b.hits3) / 2.0,
            hits10: (a.hits10 + b.hits10) / 2.0,
        }
    }

    pub const NAMES: [&'static str; 5] = ["count", "mr", "hits@1", "hits@3", "hits@10"];

    pub fn values(&self) -> [f64; 5] {
        [
            self.count as f64,
            self.mean_rank,
            self.hits1,
            self.hits3,
            self.hits10,
        ]
    }
}

/// Ranks of one test triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankRecord {
    pub triple: Triple,
    pub head_raw: usize,
    pub head_filtered: usize,
    pub tail_raw: usize,
    pub tail_filtered: usize,
    pub head_tied: bool,
    pub tail_tied: bool,
}

impl RankRecord {
    pub fn rank(&self, side: Side, setting: Setting) -> usize {
        match (side, setting) {
            (Side::Head, Setting::Raw) => self.head_raw,
            (Side::Head, Setting::Filtered) => self.head_filtered,
            (Side::Tail, Setting::Raw) => self.tail_raw,
            (Side::Tail, Setting::Filtered) => self.tail_filtered,
        }
    }
}

/// Log-spaced histogram of non-negative score terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    /// Upper edges; the last bin is open-ended.
    pub edges: Vec<String>,
    pub counts: Vec<u64>,
}

const HIST_EDGES: [f64; 8] = [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3];
const HIST_LABELS: [&str; 9] = [
    "0", "(0,1e-3)", "[1e-3,1e-2)", "[1e-2,1e-1)", "[1e-1,1)", "[1,10)", "[10,100)", "[100,1e3)",
    "[1e3,inf)",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Bins([u64; 9]);

impl Bins {
    #[inline]
    fn add(&mut self, v: f64) {
        let idx = if v <= 0.0 {
            0
        } else {
            HIST_EDGES[1..].iter().position(|&e| v < e).map_or(8, |p| p + 1)
        };
        self.0[idx] += 1;
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
        self
    }

    fn into_histogram(self) -> Histogram {
        Histogram {
            edges: HIST_LABELS.iter().map(|s| s.to_string()).collect(),
            counts: self.0.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_test: usize,
    pub overall: BTreeMap<(Setting, SideSelector), Metrics>,
    pub by_category: BTreeMap<(Setting, SideSelector, RelationCategory), Metrics>,
    /// Fraction of predictions where some competitor tied the gold score.
    pub tie_rate: f64,
    /// Predictions whose target domain had no fitted ellipsoid (penalty 0).
    /// Always 0 without a domain model.
    pub predictions_without_domain: usize,
    pub baseline_histogram: Histogram,
    pub penalty_histogram: Option<Histogram>,
    pub records: Vec<RankRecord>,
}

impl EvalReport {
    pub fn overall(&self, setting: Setting, side: SideSelector) -> Metrics {
        self.overall[&(setting, side)]
    }

    pub fn category(
        &self,
        setting: Setting,
        side: SideSelector,
        category: RelationCategory,
    ) -> Option<Metrics> {
        self.by_category.get(&(setting, side, category)).copied()
    }

    /// Fixed-order `(setting, side, category, metric, value)` rows; every
    /// category appears, empty ones with count 0 and NaN metrics.
    pub fn rows(&self) -> Vec<(String, &'static str, &'static str, &'static str, f64)> {
        let empty = Metrics::from_ranks(std::iter::empty());
        let mut rows = Vec::new();
        for setting in Setting::ALL {
            for side in SideSelector::ALL {
                let mut push = |cat: &'static str, m: &Metrics| {
                    for (name, value) in Metrics::NAMES.iter().zip(m.values()) {
                        rows.push((setting.to_string(), side.as_str(), cat, *name, value));
                    }
                };
                push("all", &self.overall(setting, side));
                for cat in RelationCategory::ALL {
                    let m = self.category(setting, side, cat).unwrap_or(empty);
                    push(cat.as_str(), &m);
                }
            }
        }
        rows
    }

    fn scalar_rows(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("n_test".to_string(), self.n_test as f64),
            ("tie_rate".to_string(), self.tie_rate),
            (
                "predictions_without_domain".to_string(),
                self.predictions_without_domain as f64,
            ),
        ];
        for (label, count) in self.baseline_histogram.edges.iter().zip(&self.baseline_histogram.counts) {
            out.push((format!("hist.baseline.{label}"), *count as f64));
        }
        if let Some(h) = &self.penalty_histogram {
            for (label, count) in h.edges.iter().zip(&h.counts) {
                out.push((format!("hist.penalty.{label}"), *count as f64));
            }
        }
        out
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.scalar_rows() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        for (setting, side, cat, metric, value) in self.rows() {
            writeln!(s, "{setting}.{side}.{cat}.{metric} = {value}").unwrap();
        }
        s
    }

    /// `setting,side,category,metric,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("setting,side,category,metric,value\n");
        for (setting, side, cat, metric, value) in self.rows() {
            writeln!(s, "{setting},{side},{cat},{metric},{value}").unwrap();
        }
        s
    }
}

/// Baseline and domain-augmented reports side by side, with
/// `delta = dre − baseline`.
pub fn comparison_text(baseline: &EvalReport, dre: &EvalReport) -> String {
    let mut s = String::new();
    for (label, report) in [("baseline", baseline), ("dre", dre)] {
        for (k, v) in report.scalar_rows() {
            writeln!(s, "{label}.{k} = {v}").unwrap();
        }
    }
    for ((setting, side, cat, metric, b), (_, _, _, _, d)) in
        baseline.rows().into_iter().zip(dre.rows())
    {
        let key = format!("{setting}.{side}.{cat}.{metric}");
        writeln!(s, "baseline.{key} = {b}").unwrap();
        writeln!(s, "dre.{key} = {d}").unwrap();
        writeln!(s, "delta.{key} = {}", d - b).unwrap();
    }
    s
}

pub fn comparison_csv(baseline: &EvalReport, dre: &EvalReport) -> String {
    let mut s = String::from("setting,side,category,metric,baseline,dre,delta\n");
    for ((setting, side, cat, metric, b), (_, _, _, _, d)) in
        baseline.rows().into_iter().zip(dre.rows())
    {
        writeln!(s, "{setting},{side},{cat},{metric},{b},{d},{}", d - b).unwrap();
    }
    s
}

/// Baseline score of `triple` plus, when domains are given, the penalty of
/// the entity in `side` against that side's domain of the relation.
pub fn combined_score(
    model: &EmbeddingModel,
    domains: Option<&BoundDomains<'_>>,
    triple: &Triple,
    side: Side,
) -> Result<f64> {
    let base = model.score_triple(triple)?;
    Ok(match domains {
        None => base,
        Some(d) => base + d.penalty(triple.entity(side), triple.relation, side),
    })
}

/// 1-based rank of the gold entity of `triple` among all replacements of
/// its `side` slot.
pub fn rank_entity(
    model: &EmbeddingModel,
    domains: Option<&BoundDomains<'_>>,
    graph: &KnowledgeGraph,
    triple: &Triple,
    side: Side,
    setting: Setting,
    tie_mode: TieMode,
) -> Result<usize> {
    let gold_entity = triple.entity(side);
    let gold = combined_score(model, domains, triple, side)?;
    let mut rank = 1;
    for c in 0..model.num_entities as EntityId {
        if c == gold_entity {
            continue;
        }
        let candidate = triple.with_entity(side, c);
        if setting == Setting::Filtered && graph.is_gold(&candidate) {
            continue;
        }
        let s = combined_score(model, domains, &candidate, side)?;
        if s < gold || (tie_mode == TieMode::Pessimistic && s == gold) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Evaluate on the graph's test split.
pub fn evaluate(
    model: &EmbeddingModel,
    domains: Option<&DomainModel>,
    graph: &KnowledgeGraph,
    options: &EvalOptions,
) -> Result<EvalReport> {
    evaluate_triples(model, domains, graph, &graph.test, options)
}

/// Precomputed final-space images and penalties for one relation.
struct RelationCache<'a> {
    relation: RelationId,
    k: usize,
    heads: Cow<'a, [f64]>,
    tails: Cow<'a, [f64]>,
    head_penalty: Option<Vec<f64>>,
    tail_penalty: Option<Vec<f64>>,
}

impl<'a> RelationCache<'a> {
    fn build(model: &'a EmbeddingModel, domains: Option<&BoundDomains<'_>>, r: RelationId) -> Self {
        let k = model.final_dim();
        let project = |side: Side| -> Cow<'a, [f64]> {
            if model.projection(r, side).is_none() {
                return Cow::Borrowed(&model.entity_vecs);
            }
            let mut out = vec![0.0; model.num_entities * k];
            out.par_chunks_mut(k).enumerate().for_each(|(e, row)| {
                model.project_into(e as EntityId, r, side, row);
            });
            Cow::Owned(out)
        };
        let penalties = |side: Side| domains.and_then(|d| d.penalty_vector(r, side));
        Self {
            relation: r,
            k,
            heads: project(Side::Head),
            tails: project(Side::Tail),
            head_penalty: penalties(Side::Head),
            tail_penalty: penalties(Side::Tail),
        }
    }

    #[inline]
    fn head(&self, e: EntityId) -> &[f64] {
        &self.heads[e as usize * self.k..(e as usize + 1) * self.k]
    }

    #[inline]
    fn tail(&self, e: EntityId) -> &[f64] {
        &self.tails[e as usize * self.k..(e as usize + 1) * self.k]
    }
}

struct SideOutcome {
    raw: usize,
    filtered: usize,
    tied: bool,
}

fn rank_side(
    model: &EmbeddingModel,
    graph: &KnowledgeGraph,
    cache: &RelationCache<'_>,
    triple: &Triple,
    side: Side,
    tie_mode: TieMode,
    baseline_bins: &mut Bins,
    penalty_bins: &mut Bins,
) -> SideOutcome {
    let r = cache.relation;
    let penalty = match side {
        Side::Head => cache.head_penalty.as_deref(),
        Side::Tail => cache.tail_penalty.as_deref(),
    };
    let score = |c: EntityId| -> (f64, f64) {
        let base = match side {
            Side::Head => model.score_projected(r, cache.head(c), cache.tail(triple.tail)),
            Side::Tail => model.score_projected(r, cache.head(triple.head), cache.tail(c)),
        };
        let pen = penalty.map_or(0.0, |p| p[c as usize]);
        (base, pen)
    };
    let combine = |(base, pen): (f64, f64)| if penalty.is_some() { base + pen } else { base };

    let gold_entity = triple.entity(side);
    let gold = combine(score(gold_entity));
    let beats = |s: f64| s < gold || (tie_mode == TieMode::Pessimistic && s == gold);

    let mut better = 0usize;
    let mut ties = 0usize;
    for c in 0..model.num_entities as EntityId {
        let terms = score(c);
        baseline_bins.add(terms.0);
        if penalty.is_some() {
            penalty_bins.add(terms.1);
        }
        if c == gold_entity {
            continue;
        }
        let s = combine(terms);
        if beats(s) {
            better += 1;
        }
        if s == gold {
            ties += 1;
        }
    }
    let mut filtered_out = 0usize;
    for &c in graph.gold_candidates(triple, side) {
        if c != gold_entity && beats(combine(score(c))) {
            filtered_out += 1;
        }
    }
    SideOutcome {
        raw: 1 + better,
        filtered: 1 + better - filtered_out,
        tied: ties > 0,
    }
}

/// Evaluate on an arbitrary list of triples. Parallel over triples within
/// each relation; records come back in input order, so the report does not
/// depend on the thread count.
pub fn evaluate_triples(
    model: &EmbeddingModel,
    domains: Option<&DomainModel>,
    graph: &KnowledgeGraph,
    triples: &[Triple],
    options: &EvalOptions,
) -> Result<EvalReport> {
    model.validate()?;
    if graph.num_entities() != model.num_entities || graph.num_relations() != model.num_relations
    {
        return Err(Error::Config(format!(
            "model covers {} entities / {} relations, graph has {} / {}",
            model.num_entities,
            model.num_relations,
            graph.num_entities(),
            graph.num_relations()
        )));
    }
    if triples.is_empty() {
        return Err(Error::EmptyInput("no triples to evaluate".into()));
    }
    let bound = domains.map(|d| d.bind(model)).transpose()?;
    for t in triples {
        model.score_triple(t)?;
    }

    let mut by_relation: BTreeMap<RelationId, Vec<usize>> = BTreeMap::new();
    for (i, t) in triples.iter().enumerate() {
        by_relation.entry(t.relation).or_default().push(i);
    }

    let mut records: Vec<Option<RankRecord>> = vec![None; triples.len()];
    let mut baseline_bins = Bins::default();
    let mut penalty_bins = Bins::default();
    let mut without_domain = 0usize;
    let mut tied = 0usize;
    for (&r, indices) in &by_relation {
        let cache = RelationCache::build(model, bound.as_ref(), r);
        if bound.is_some() {
            without_domain += indices.len()
                * (cache.head_penalty.is_none() as usize + cache.tail_penalty.is_none() as usize);
        }
        let results: Vec<(usize, RankRecord, Bins, Bins)> = indices
            .par_iter()
            .map(|&i| {
                let t = triples[i];
                let mut bb = Bins::default();
                let mut pb = Bins::default();
                let head = rank_side(model, graph, &cache, &t, Side::Head, options.tie_mode, &mut bb, &mut pb);
                let tail = rank_side(model, graph, &cache, &t, Side::Tail, options.tie_mode, &mut bb, &mut pb);
                let rec = RankRecord {
                    triple: t,
                    head_raw: head.raw,
                    head_filtered: head.filtered,
                    tail_raw: tail.raw,
                    tail_filtered: tail.filtered,
                    head_tied: head.tied,
                    tail_tied: tail.tied,
                };
                (i, rec, bb, pb)
            })
            .collect();
        for (i, rec, bb, pb) in results {
            tied += rec.head_tied as usize + rec.tail_tied as usize;
            records[i] = Some(rec);
            baseline_bins = baseline_bins.merge(bb);
            penalty_bins = penalty_bins.merge(pb);
        }
    }
    let records: Vec<RankRecord> = records.into_iter().map(|r| r.expect("every triple ranked")).collect();

    for rec in &records {
        assert!(
            rec.head_filtered <= rec.head_raw && rec.tail_filtered <= rec.tail_raw,
            "filtered rank exceeds raw rank for {:?}",
            rec.triple
        );
    }

    let categories = classify_relations(graph);
    let mut overall = BTreeMap::new();
    let mut by_category = BTreeMap::new();
    for setting in Setting::ALL {
        let side_metrics = |filter: &dyn Fn(&RankRecord) -> bool, side: Side| {
            Metrics::from_ranks(records.iter().filter(|r| filter(r)).map(|r| r.rank(side, setting)))
        };
        let all = |_: &RankRecord| true;
        let head = side_metrics(&all, Side::Head);
        let tail = side_metrics(&all, Side::Tail);
        overall.insert((setting, SideSelector::Head), head);
        overall.insert((setting, SideSelector::Tail), tail);
        overall.insert((setting, SideSelector::Combined), Metrics::average(&head, &tail));
        for cat in RelationCategory::ALL {
            let in_cat = |r: &RankRecord| categories.get(&r.triple.relation) == Some(&cat);
            let head = side_metrics(&in_cat, Side::Head);
            if head.count == 0 {
                continue;
            }
            let tail = side_metrics(&in_cat, Side::Tail);
            by_category.insert((setting, SideSelector::Head, cat), head);
            by_category.insert((setting, SideSelector::Tail, cat), tail);
            by_category.insert((setting, SideSelector::Combined, cat), Metrics::average(&head, &tail));
        }
    }
    for setting in Setting::ALL {
        for side in SideSelector::ALL {
            let m = overall[&(setting, side)];
            assert!(m.hits1 <= m.hits3 && m.hits3 <= m.hits10, "hits@n not monotone");
        }
    }
    for side in SideSelector::ALL {
        let (raw, filt) = (overall[&(Setting::Raw, side)], overall[&(Setting::Filtered, side)]);
        assert!(filt.mean_rank <= raw.mean_rank && filt.hits10 >= raw.hits10);
    }

    Ok(EvalReport {
        n_test: triples.len(),
        overall,
        by_category,
        tie_rate: tied as f64 / (2 * triples.len()) as f64,
        predictions_without_domain: without_domain,
        baseline_histogram: baseline_bins.into_histogram(),
        penalty_histogram: bound.is_some().then(|| penalty_bins.into_histogram()),
        records,
    })
}
