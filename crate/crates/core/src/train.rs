//! Margin-ranking training of the baseline models.
//!
//! Each positive triple is paired with one corrupted triple and the hinge
//! `max(0, γ + f(pos) − f(neg))` is minimized by mini-batch SGD: gradients
//! are summed over a batch and applied once per batch. TransR and STransE
//! start from a trained TransE model with identity projections.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{evaluate_triples, EvalOptions, Setting, SideSelector};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::model::{Dissimilarity, EmbeddingModel, TripleGradient, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeSampling {
    /// Replace head or tail with equal probability.
    #[default]
    Uniform,
    /// Replace the head with probability `tph / (tph + hpt)` of the relation.
    Bernoulli,
}

impl FromStr for NegativeSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "unif" => Ok(NegativeSampling::Uniform),
            "bernoulli" | "bern" => Ok(NegativeSampling::Bernoulli),
            other => Err(Error::Config(format!("unknown negative sampling `{other}`"))),
        }
    }
}

/// Validation-driven early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStop {
    /// Evaluate filtered Hits@10 on the validation split every `every` epochs.
    pub every: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            every: 25,
            patience: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub dim_entity: usize,
    pub dim_relation: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub batch_size: usize,
    pub dissimilarity: Dissimilarity,
    pub epochs: usize,
    pub negative_sampling: NegativeSampling,
    pub seed: u64,
    /// Project touched entity vectors back into the unit ball after each batch.
    pub normalize_entities: bool,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::TransE,
            dim_entity: 50,
            dim_relation: 50,
            learning_rate: 0.001,
            margin: 2.0,
            batch_size: 120,
            dissimilarity: Dissimilarity::L1,
            epochs: 1000,
            negative_sampling: NegativeSampling::Uniform,
            seed: 0,
            normalize_entities: false,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config("margin must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.dim_entity == 0 || self.dim_relation == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if let Some(es) = self.early_stop {
            if es.every == 0 || es.patience == 0 {
                return Err(Error::Config(
                    "early-stop cadence and patience must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean hinge loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    /// `(epoch, filtered Hits@10 on valid)` at each early-stop check.
    pub validation: Vec<(usize, f64)>,
    /// Epoch whose parameters were returned when early stopping was active.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Train a model of `config.variant`. TransR/STransE require `init` to be a
/// trained TransE model over the same vocabularies.
pub fn train(
    graph: &KnowledgeGraph,
    config: &TrainConfig,
    init: Option<&EmbeddingModel>,
) -> Result<EmbeddingModel> {
    train_with_report(graph, config, init).map(|(m, _)| m)
}

pub fn train_with_report(
    graph: &KnowledgeGraph,
    config: &TrainConfig,
    init: Option<&EmbeddingModel>,
) -> Result<(EmbeddingModel, TrainReport)> {
    config.validate()?;
    if graph.train.is_empty() {
        return Err(Error::EmptyInput("training split has no triples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = initial_model(graph, config, init, &mut rng)?;
    let sampler = Sampler::new(graph, config.negative_sampling);
    let mut grads = GradBuffer::new(&model);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..graph.train.len()).collect();
    let mut best: Option<(f64, usize, EmbeddingModel)> = None;
    let mut stale_checks = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            for &idx in batch {
                let pos = graph.train[idx];
                let neg = sampler.corrupt(&pos, &mut rng);
                let loss = config.margin + model.score_unchecked(&pos) - model.score_unchecked(&neg);
                if loss > 0.0 {
                    total += loss;
                    grads.add(&pos, &model.score_gradient(&pos), 1.0);
                    grads.add(&neg, &model.score_gradient(&neg), -1.0);
                }
            }
            grads.apply(&mut model, config.learning_rate, config.normalize_entities);
        }
        let mean = total / graph.train.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        report.epoch_losses.push(mean);

        if let Some(es) = config.early_stop {
            if epoch % es.every == 0 && !graph.valid.is_empty() {
                let hits = validation_hits10(&model, graph)?;
                log::info!("epoch {epoch}: valid filtered hits@10 {hits:.2}");
                report.validation.push((epoch, hits));
                let previous = best.as_ref().map(|(b, _, _)| *b);
                if previous.is_none_or(|b| hits >= b) {
                    // ties keep the later, longer-trained parameters
                    best = Some((hits, epoch, model.clone()));
                }
                if previous.is_none_or(|b| hits > b) {
                    stale_checks = 0;
                } else {
                    stale_checks += 1;
                    if stale_checks >= es.patience {
                        report.stopped_early = true;
                        log::info!("early stop at epoch {epoch}");
                        break;
                    }
                }
            }
        }
    }

    if let Some((_, epoch, best_model)) = best {
        report.best_epoch = Some(epoch);
        model = best_model;
    }
    Ok((model, report))
}

fn validation_hits10(model: &EmbeddingModel, graph: &KnowledgeGraph) -> Result<f64> {
    let report = evaluate_triples(model, None, graph, &graph.valid, &EvalOptions::default())?;
    Ok(report
        .overall(Setting::Filtered, SideSelector::Combined)
        .hits10)
}

fn initial_model(
    graph: &KnowledgeGraph,
    config: &TrainConfig,
    init: Option<&EmbeddingModel>,
    rng: &mut ChaCha8Rng,
) -> Result<EmbeddingModel> {
    let (n_ent, n_rel) = (graph.num_entities(), graph.num_relations());
    if let Some(m) = init {
        m.validate()?;
        if m.num_entities != n_ent || m.num_relations != n_rel {
            return Err(Error::Config(format!(
                "initial model has {} entities / {} relations, graph has {n_ent} / {n_rel}",
                m.num_entities, m.num_relations
            )));
        }
        if m.variant != Variant::TransE {
            return Err(Error::Config(format!(
                "initial model must be TransE, got {}",
                m.variant
            )));
        }
        if m.dim_entity != config.dim_entity {
            return Err(Error::Config(format!(
                "initial model entity dimension {} differs from requested {}",
                m.dim_entity, config.dim_entity
            )));
        }
    }

    match config.variant {
        Variant::TransE => {
            if config.dim_relation != config.dim_entity {
                return Err(Error::Config(
                    "TransE uses one dimension for entities and relations".into(),
                ));
            }
            if let Some(m) = init {
                let mut m = m.clone();
                m.dissimilarity = config.dissimilarity;
                return Ok(m);
            }
            let d = config.dim_entity;
            let bound = 6.0 / (d as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            };
            let entity_vecs = draw(n_ent * d);
            let relation_vecs = draw(n_rel * d);
            Ok(EmbeddingModel {
                variant: Variant::TransE,
                dissimilarity: config.dissimilarity,
                num_entities: n_ent,
                num_relations: n_rel,
                dim_entity: d,
                dim_relation: d,
                entity_vecs,
                relation_vecs,
                head_proj: None,
                tail_proj: None,
            })
        }
        variant @ (Variant::TransR | Variant::STransE) => {
            let base = init.ok_or_else(|| {
                Error::Config(format!("{variant} training needs a trained TransE model as init"))
            })?;
            let (d, k) = (config.dim_entity, config.dim_relation);
            let mut relation_vecs = vec![0.0; n_rel * k];
            for r in 0..n_rel {
                let src = base.relation(r as RelationId);
                let n = k.min(d);
                relation_vecs[r * k..r * k + n].copy_from_slice(&src[..n]);
            }
            let mut eye = vec![0.0; k * d];
            for i in 0..k.min(d) {
                eye[i * d + i] = 1.0;
            }
            let proj: Vec<f64> = eye.iter().copied().cycle().take(n_rel * k * d).collect();
            let tail_proj = (variant == Variant::STransE).then(|| proj.clone());
            Ok(EmbeddingModel {
                variant,
                dissimilarity: config.dissimilarity,
                num_entities: n_ent,
                num_relations: n_rel,
                dim_entity: d,
                dim_relation: k,
                entity_vecs: base.entity_vecs.clone(),
                relation_vecs,
                head_proj: Some(proj),
                tail_proj,
            })
        }
    }
}

struct Sampler {
    num_entities: u32,
    known: HashSet<Triple>,
    head_prob: Option<BTreeMap<RelationId, f64>>,
}

impl Sampler {
    const MAX_RETRIES: usize = 10;

    fn new(graph: &KnowledgeGraph, mode: NegativeSampling) -> Self {
        let head_prob = match mode {
            NegativeSampling::Uniform => None,
            NegativeSampling::Bernoulli => {
                let mut pairs: BTreeMap<RelationId, BTreeSet<(EntityId, EntityId)>> =
                    BTreeMap::new();
                for t in &graph.train {
                    pairs.entry(t.relation).or_default().insert((t.head, t.tail));
                }
                Some(
                    pairs
                        .into_iter()
                        .map(|(r, set)| {
                            let heads = set.iter().map(|p| p.0).collect::<BTreeSet<_>>().len();
                            let tails = set.iter().map(|p| p.1).collect::<BTreeSet<_>>().len();
                            let n = set.len() as f64;
                            let (tph, hpt) = (n / heads as f64, n / tails as f64);
                            (r, tph / (tph + hpt))
                        })
                        .collect(),
                )
            }
        };
        Self {
            num_entities: graph.num_entities() as u32,
            known: graph.train.iter().copied().collect(),
            head_prob,
        }
    }

    /// Corrupt head or tail; retries a few times to avoid training triples.
    fn corrupt(&self, pos: &Triple, rng: &mut ChaCha8Rng) -> Triple {
        let p_head = self
            .head_prob
            .as_ref()
            .and_then(|m| m.get(&pos.relation).copied())
            .unwrap_or(0.5);
        let replace_head = rng.random::<f64>() < p_head;
        let mut neg = *pos;
        for _ in 0..Self::MAX_RETRIES {
            let e = rng.random_range(0..self.num_entities);
            neg = if replace_head {
                Triple { head: e, ..*pos }
            } else {
                Triple { tail: e, ..*pos }
            };
            if !self.known.contains(&neg) {
                break;
            }
        }
        neg
    }
}

/// Dense gradient storage with touched-row lists so clearing is cheap.
struct GradBuffer {
    d: usize,
    k: usize,
    entity: Vec<f64>,
    entity_touched: Vec<bool>,
    entity_list: Vec<EntityId>,
    relation: Vec<f64>,
    relation_touched: Vec<bool>,
    relation_list: Vec<RelationId>,
    head_proj: Option<Vec<f64>>,
    tail_proj: Option<Vec<f64>>,
}

impl GradBuffer {
    fn new(model: &EmbeddingModel) -> Self {
        let (d, k) = (model.dim_entity, model.dim_relation);
        Self {
            d,
            k,
            entity: vec![0.0; model.num_entities * d],
            entity_touched: vec![false; model.num_entities],
            entity_list: Vec::new(),
            relation: vec![0.0; model.num_relations * k],
            relation_touched: vec![false; model.num_relations],
            relation_list: Vec::new(),
            head_proj: model.head_proj.as_ref().map(|w| vec![0.0; w.len()]),
            tail_proj: model.tail_proj.as_ref().map(|w| vec![0.0; w.len()]),
        }
    }

    fn touch_entity(&mut self, e: EntityId) {
        if !self.entity_touched[e as usize] {
            self.entity_touched[e as usize] = true;
            self.entity_list.push(e);
        }
    }

    fn add(&mut self, t: &Triple, g: &TripleGradient, sign: f64) {
        let (d, k) = (self.d, self.k);
        for (e, grad) in [(t.head, &g.head), (t.tail, &g.tail)] {
            self.touch_entity(e);
            let row = &mut self.entity[e as usize * d..(e as usize + 1) * d];
            for (a, b) in row.iter_mut().zip(grad) {
                *a += sign * b;
            }
        }
        let r = t.relation as usize;
        if !self.relation_touched[r] {
            self.relation_touched[r] = true;
            self.relation_list.push(t.relation);
        }
        for (a, b) in self.relation[r * k..(r + 1) * k].iter_mut().zip(&g.relation) {
            *a += sign * b;
        }
        let block = k * d;
        for (buf, grad) in [
            (self.head_proj.as_mut(), g.head_proj.as_ref()),
            (self.tail_proj.as_mut(), g.tail_proj.as_ref()),
        ] {
            if let (Some(buf), Some(grad)) = (buf, grad) {
                for (a, b) in buf[r * block..(r + 1) * block].iter_mut().zip(grad) {
                    *a += sign * b;
                }
            }
        }
    }

    fn apply(&mut self, model: &mut EmbeddingModel, lr: f64, normalize: bool) {
        let (d, k) = (self.d, self.k);
        for e in self.entity_list.drain(..) {
            let range = e as usize * d..(e as usize + 1) * d;
            let row = &mut model.entity_vecs[range.clone()];
            for (p, g) in row.iter_mut().zip(&mut self.entity[range]) {
                *p -= lr * *g;
                *g = 0.0;
            }
            if normalize {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
            self.entity_touched[e as usize] = false;
        }
        let block = k * d;
        for r in self.relation_list.drain(..) {
            let r = r as usize;
            let range = r * k..(r + 1) * k;
            for (p, g) in model.relation_vecs[range.clone()]
                .iter_mut()
                .zip(&mut self.relation[range])
            {
                *p -= lr * *g;
                *g = 0.0;
            }
            for (buf, params) in [
                (self.head_proj.as_mut(), model.head_proj.as_mut()),
                (self.tail_proj.as_mut(), model.tail_proj.as_mut()),
            ] {
                if let (Some(buf), Some(params)) = (buf, params) {
                    let range = r * block..(r + 1) * block;
                    for (p, g) in params[range.clone()].iter_mut().zip(&mut buf[range]) {
                        *p -= lr * *g;
                        *g = 0.0;
                    }
                }
            }
            self.relation_touched[r] = false;
        }
    }
}
