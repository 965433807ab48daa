//! Fitting one ellipsoid per relation domain and scoring candidates
//! against them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::ellipsoid::{fit_with_outcome, Ellipsoid, FitConfig};
use crate::error::{Error, Result};
use crate::graph::{extract_domains, EntityId, KnowledgeGraph, RelationId, Side};
use crate::model::EmbeddingModel;

pub type DomainKey = (RelationId, Side);

/// Fitted domain ellipsoids tied to the embedding model they were fitted in.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainModel {
    /// Final-space dimension of the model.
    pub dim: usize,
    pub model_fingerprint: u64,
    pub ellipsoids: BTreeMap<DomainKey, Ellipsoid>,
    /// Domains with too few members to fit.
    pub skipped: BTreeSet<DomainKey>,
}

/// Per-domain fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainFitStat {
    pub relation: RelationId,
    pub side: Side,
    pub members: usize,
    /// `None` for skipped domains.
    pub initial_mean: Option<f64>,
    pub final_mean: Option<f64>,
    pub reverted: bool,
}

const MAGIC: &str = "DREDOM";
const FORMAT_VERSION: &str = "v1";

fn side_flag(side: Side) -> u8 {
    match side {
        Side::Head => 0,
        Side::Tail => 1,
    }
}

fn side_from_flag(flag: u8) -> Result<Side> {
    match flag {
        0 => Ok(Side::Head),
        1 => Ok(Side::Tail),
        other => Err(Error::Format(format!("bad side flag {other}"))),
    }
}

impl DomainModel {
    pub fn empty(dim: usize, model_fingerprint: u64) -> Self {
        Self {
            dim,
            model_fingerprint,
            ellipsoids: BTreeMap::new(),
            skipped: BTreeSet::new(),
        }
    }

    pub fn get(&self, relation: RelationId, side: Side) -> Option<&Ellipsoid> {
        self.ellipsoids.get(&(relation, side))
    }

    /// Check the fingerprint once and return a scorer bound to `model`.
    pub fn bind<'a>(&'a self, model: &'a EmbeddingModel) -> Result<BoundDomains<'a>> {
        let found = model.fingerprint();
        if found != self.model_fingerprint {
            return Err(Error::StaleDomainModel {
                expected: self.model_fingerprint,
                found,
            });
        }
        if model.final_dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: model.final_dim(),
            });
        }
        Ok(BoundDomains {
            domains: self,
            model,
        })
    }

    /// Header line, then per ellipsoid: relation id (u64 LE), side flag
    /// (u8), ellipsoid record; then per skipped domain: relation id, side.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = format!(
            "{MAGIC} {FORMAT_VERSION} {} {} {} {:016x}\n",
            self.dim,
            self.ellipsoids.len(),
            self.skipped.len(),
            self.model_fingerprint
        )
        .into_bytes();
        for (&(r, side), e) in &self.ellipsoids {
            buf.extend_from_slice(&(r as u64).to_le_bytes());
            buf.push(side_flag(side));
            e.write_record(&mut buf);
        }
        for &(r, side) in &self.skipped {
            buf.extend_from_slice(&(r as u64).to_le_bytes());
            buf.push(side_flag(side));
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .take(256)
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing domain-model header".into()))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::Format("domain-model header is not ASCII".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.first() != Some(&MAGIC) {
            return Err(Error::Format("not a domain-model file (bad magic)".into()));
        }
        if fields.get(1) != Some(&FORMAT_VERSION) {
            return Err(Error::Format(format!(
                "unsupported domain-model version {:?}",
                fields.get(1)
            )));
        }
        if fields.len() != 6 {
            return Err(Error::Format(
                "domain-model header needs: magic version k n_fitted n_skipped fingerprint".into(),
            ));
        }
        let num = |i: usize| -> Result<usize> {
            fields[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad header field `{}`", fields[i])))
        };
        let (dim, n_fitted, n_skipped) = (num(2)?, num(3)?, num(4)?);
        let fp = fields[5];
        if fp.len() != 16 {
            return Err(Error::Format(format!("garbled model fingerprint `{fp}`")));
        }
        let model_fingerprint = u64::from_str_radix(fp, 16)
            .map_err(|_| Error::Format(format!("garbled model fingerprint `{fp}`")))?;

        let mut pos = newline + 1;
        let truncated = || Error::Format("truncated domain-model file".into());
        let read_key = |pos: &mut usize| -> Result<DomainKey> {
            let raw = bytes.get(*pos..*pos + 9).ok_or_else(truncated)?;
            let r = u64::from_le_bytes(raw[..8].try_into().unwrap());
            let r = RelationId::try_from(r)
                .map_err(|_| Error::Format(format!("relation id {r} out of range")))?;
            *pos += 9;
            Ok((r, side_from_flag(raw[8])?))
        };
        let mut ellipsoids = BTreeMap::new();
        for _ in 0..n_fitted {
            let key = read_key(&mut pos)?;
            let (e, used) = Ellipsoid::read_record(&bytes[pos..])?;
            if e.dim() != dim {
                return Err(Error::Format(format!(
                    "ellipsoid of dimension {} in a k={dim} file",
                    e.dim()
                )));
            }
            pos += used;
            ellipsoids.insert(key, e);
        }
        let mut skipped = BTreeSet::new();
        for _ in 0..n_skipped {
            skipped.insert(read_key(&mut pos)?);
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after domain records",
                bytes.len() - pos
            )));
        }
        if ellipsoids.len() != n_fitted || skipped.len() != n_skipped {
            return Err(Error::Format("duplicate domain records".into()));
        }
        Ok(Self {
            dim,
            model_fingerprint,
            ellipsoids,
            skipped,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_domains(domains: &DomainModel, path: &Path) -> Result<()> {
    domains.save(path)
}

pub fn load_domains(path: &Path) -> Result<DomainModel> {
    DomainModel::load(path)
}

/// A domain model whose fingerprint has been checked against `model`.
#[derive(Debug, Clone, Copy)]
pub struct BoundDomains<'a> {
    pub domains: &'a DomainModel,
    pub model: &'a EmbeddingModel,
}

impl BoundDomains<'_> {
    /// Test-time penalty of `candidate` in the `side` domain of `relation`;
    /// 0 when that domain was skipped or never seen.
    pub fn penalty(&self, candidate: EntityId, relation: RelationId, side: Side) -> f64 {
        match self.domains.get(relation, side) {
            None => 0.0,
            Some(e) => {
                let mut p = vec![0.0; self.model.final_dim()];
                self.model.project_into(candidate, relation, side, &mut p);
                e.score_test(&p).expect("dimension checked at bind")
            }
        }
    }

    /// Whether `candidate` lies strictly inside the domain; `None` when no
    /// ellipsoid exists for it.
    pub fn inside(&self, candidate: EntityId, relation: RelationId, side: Side) -> Option<bool> {
        let e = self.domains.get(relation, side)?;
        let mut p = vec![0.0; self.model.final_dim()];
        self.model.project_into(candidate, relation, side, &mut p);
        e.contains(&p).ok()
    }

    /// Penalty of every entity, or `None` for an absent domain.
    pub fn penalty_vector(&self, relation: RelationId, side: Side) -> Option<Vec<f64>> {
        self.domains.get(relation, side)?;
        Some(
            (0..self.model.num_entities as EntityId)
                .map(|e| self.penalty(e, relation, side))
                .collect(),
        )
    }
}

/// Checked single-candidate penalty. Fingerprints the model on every call;
/// bulk scoring should go through [`DomainModel::bind`].
pub fn domain_penalty(
    domains: &DomainModel,
    model: &EmbeddingModel,
    candidate: EntityId,
    relation: RelationId,
    side: Side,
) -> Result<f64> {
    let bound = domains.bind(model)?;
    if candidate as usize >= model.num_entities || relation as usize >= model.num_relations {
        return Err(Error::Config(format!(
            "({candidate}, {relation}) out of range for the model"
        )));
    }
    Ok(bound.penalty(candidate, relation, side))
}

fn check_vocab(graph: &KnowledgeGraph, model: &EmbeddingModel) -> Result<()> {
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
    model.validate()
}

pub fn fit_all_domains(
    graph: &KnowledgeGraph,
    model: &EmbeddingModel,
    config: &FitConfig,
) -> Result<DomainModel> {
    fit_all_domains_with_stats(graph, model, config).map(|(d, _)| d)
}

/// Fit every training-split domain in the model's final space. Domains are
/// fitted in parallel; each gets its own seed derived from
/// `(config.seed, relation, side)`, so results do not depend on scheduling.
pub fn fit_all_domains_with_stats(
    graph: &KnowledgeGraph,
    model: &EmbeddingModel,
    config: &FitConfig,
) -> Result<(DomainModel, Vec<DomainFitStat>)> {
    config.validate()?;
    check_vocab(graph, model)?;
    if graph.train.is_empty() {
        return Err(Error::EmptyInput("training split has no triples".into()));
    }
    let fingerprint = model.fingerprint();
    let domains = extract_domains(graph);
    let min_members = config.min_members.max(1);

    let fitted: Vec<(DomainKey, Option<Ellipsoid>, DomainFitStat)> = domains
        .par_iter()
        .map(|dom| -> Result<_> {
            let key = (dom.relation, dom.side);
            let mut stat = DomainFitStat {
                relation: dom.relation,
                side: dom.side,
                members: dom.members.len(),
                initial_mean: None,
                final_mean: None,
                reverted: false,
            };
            if dom.members.len() < min_members {
                return Ok((key, None, stat));
            }
            let points: Vec<Vec<f64>> = dom
                .members
                .iter()
                .map(|&e| model.project_entity(e, dom.relation, dom.side))
                .collect::<Result<_>>()?;
            let seed = config
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(2 * dom.relation as u64 + side_flag(dom.side) as u64);
            let cfg = FitConfig {
                seed,
                ..config.clone()
            };
            let out = fit_with_outcome(&points, &cfg)?;
            stat.initial_mean = Some(out.initial_mean);
            stat.final_mean = Some(out.final_mean);
            stat.reverted = out.reverted;
            Ok((key, Some(out.ellipsoid), stat))
        })
        .collect::<Result<_>>()?;

    let mut dm = DomainModel::empty(model.final_dim(), fingerprint);
    let mut stats = Vec::with_capacity(fitted.len());
    for (key, ellipsoid, stat) in fitted {
        match ellipsoid {
            Some(e) => {
                dm.ellipsoids.insert(key, e);
            }
            None => {
                dm.skipped.insert(key);
            }
        }
        stats.push(stat);
    }
    Ok((dm, stats))
}
