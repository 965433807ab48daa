//! Translation-based embedding models and their binary container format.
//!
//! All three variants score a triple as the dissimilarity of
//! `P_head(r)·h + r − P_tail(r)·t`, where the projections are the identity
//! for TransE, a shared matrix `W_r` for TransR and two matrices
//! `W_{r,1}`, `W_{r,2}` for STransE. The projected space is the model's
//! "final space"; domains are fitted there.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{EntityId, RelationId, Side, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    TransE,
    TransR,
    STransE,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::TransE => "transe",
            Variant::TransR => "transr",
            Variant::STransE => "stranse",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(Variant::TransE),
            "transr" => Ok(Variant::TransR),
            "stranse" => Ok(Variant::STransE),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dissimilarity {
    L1,
    L2,
}

impl Dissimilarity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dissimilarity::L1 => "l1",
            Dissimilarity::L2 => "l2",
        }
    }

    /// Dissimilarity of `head + relation - tail`.
    #[inline]
    pub fn translated(&self, head: &[f64], relation: &[f64], tail: &[f64]) -> f64 {
        let residuals = head
            .iter()
            .zip(relation)
            .zip(tail)
            .map(|((h, r), t)| h + r - t);
        match self {
            Dissimilarity::L1 => residuals.map(f64::abs).sum(),
            Dissimilarity::L2 => residuals.map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

impl fmt::Display for Dissimilarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dissimilarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Dissimilarity::L1),
            "l2" => Ok(Dissimilarity::L2),
            other => Err(Error::Config(format!("unknown dissimilarity `{other}`"))),
        }
    }
}

/// Entity/relation embeddings plus optional per-relation projections.
///
/// Matrices are stored row-major: `entity_vecs` is `|E| × d`,
/// `relation_vecs` is `|R| × k`, each projection block is `k × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub variant: Variant,
    pub dissimilarity: Dissimilarity,
    pub num_entities: usize,
    pub num_relations: usize,
    pub dim_entity: usize,
    pub dim_relation: usize,
    pub entity_vecs: Vec<f64>,
    pub relation_vecs: Vec<f64>,
    /// `W_{r,1}` for STransE, the shared `W_r` for TransR.
    pub head_proj: Option<Vec<f64>>,
    /// `W_{r,2}`, STransE only.
    pub tail_proj: Option<Vec<f64>>,
}

/// Gradient of one triple's score with respect to the parameters it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGradient {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
    /// Gradient for `head_proj[r]`. For TransR this is the full gradient of
    /// the shared matrix.
    pub head_proj: Option<Vec<f64>>,
    pub tail_proj: Option<Vec<f64>>,
}

const MAGIC: &str = "DREKGE";
const FORMAT_VERSION: &str = "v1";

impl EmbeddingModel {
    /// All-zero TransE model.
    pub fn zeros_transe(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        dissimilarity: Dissimilarity,
    ) -> Self {
        Self {
            variant: Variant::TransE,
            dissimilarity,
            num_entities,
            num_relations,
            dim_entity: dim,
            dim_relation: dim,
            entity_vecs: vec![0.0; num_entities * dim],
            relation_vecs: vec![0.0; num_relations * dim],
            head_proj: None,
            tail_proj: None,
        }
    }

    /// Check the structural invariants of the variant.
    pub fn validate(&self) -> Result<()> {
        let (d, k) = (self.dim_entity, self.dim_relation);
        let expect = |what: &str, expected: usize, found: usize| -> Result<()> {
            if expected != found {
                Err(Error::Config(format!(
                    "{what}: expected {expected} values, found {found}"
                )))
            } else {
                Ok(())
            }
        };
        if d == 0 || k == 0 {
            return Err(Error::Config("embedding dimensions must be positive".into()));
        }
        expect("entity vectors", self.num_entities * d, self.entity_vecs.len())?;
        expect("relation vectors", self.num_relations * k, self.relation_vecs.len())?;
        let block = self.num_relations * k * d;
        match self.variant {
            Variant::TransE => {
                if k != d {
                    return Err(Error::Config(format!(
                        "TransE requires equal entity and relation dimensions ({d} vs {k})"
                    )));
                }
                if self.head_proj.is_some() || self.tail_proj.is_some() {
                    return Err(Error::Config("TransE has no projection matrices".into()));
                }
            }
            Variant::TransR => {
                let w = self.head_proj.as_ref().ok_or_else(|| {
                    Error::Config("TransR requires a projection matrix per relation".into())
                })?;
                expect("projection matrices", block, w.len())?;
                if self.tail_proj.is_some() {
                    return Err(Error::Config(
                        "TransR shares one projection; tail matrices must be absent".into(),
                    ));
                }
            }
            Variant::STransE => {
                let (w1, w2) = match (&self.head_proj, &self.tail_proj) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(Error::Config(
                            "STransE requires head and tail projection matrices".into(),
                        ))
                    }
                };
                expect("head projection matrices", block, w1.len())?;
                expect("tail projection matrices", block, w2.len())?;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        let all = |v: &[f64]| v.iter().all(|x| x.is_finite());
        all(&self.entity_vecs)
            && all(&self.relation_vecs)
            && self.head_proj.as_deref().is_none_or(all)
            && self.tail_proj.as_deref().is_none_or(all)
    }

    /// Dimension of the space scores (and domains) live in.
    pub fn final_dim(&self) -> usize {
        self.dim_relation
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let d = self.dim_entity;
        &self.entity_vecs[e as usize * d..(e as usize + 1) * d]
    }

    pub fn relation(&self, r: RelationId) -> &[f64] {
        let k = self.dim_relation;
        &self.relation_vecs[r as usize * k..(r as usize + 1) * k]
    }

    /// Projection matrix applied to entities on `side` of relation `r`, or
    /// `None` for TransE.
    pub fn projection(&self, r: RelationId, side: Side) -> Option<&[f64]> {
        let block = self.dim_relation * self.dim_entity;
        let range = r as usize * block..(r as usize + 1) * block;
        match (self.variant, side) {
            (Variant::TransE, _) => None,
            (Variant::TransR, _) | (Variant::STransE, Side::Head) => {
                self.head_proj.as_ref().map(|w| &w[range])
            }
            (Variant::STransE, Side::Tail) => self.tail_proj.as_ref().map(|w| &w[range]),
        }
    }

    fn check_ids(&self, e: EntityId, r: RelationId) -> Result<()> {
        if e as usize >= self.num_entities {
            return Err(Error::Config(format!(
                "entity id {e} out of range ({} entities)",
                self.num_entities
            )));
        }
        if r as usize >= self.num_relations {
            return Err(Error::Config(format!(
                "relation id {r} out of range ({} relations)",
                self.num_relations
            )));
        }
        Ok(())
    }

    /// Write the final-space image of entity `e` under relation `r` into
    /// `out` (length `k`). Ids are assumed valid.
    #[inline]
    pub fn project_into(&self, e: EntityId, r: RelationId, side: Side, out: &mut [f64]) {
        let v = self.entity(e);
        match self.projection(r, side) {
            None => out.copy_from_slice(v),
            Some(w) => {
                let d = self.dim_entity;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = w[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    /// Final-space representation of entity `e` on `side` of relation `r`.
    pub fn project_entity(&self, e: EntityId, r: RelationId, side: Side) -> Result<Vec<f64>> {
        self.check_ids(e, r)?;
        if self.variant != Variant::TransE && self.projection(r, side).is_none() {
            return Err(Error::Config(format!(
                "{} model is missing its projection matrices",
                self.variant
            )));
        }
        let mut out = vec![0.0; self.dim_relation];
        self.project_into(e, r, side, &mut out);
        Ok(out)
    }

    /// Baseline score from pre-projected head and tail; lower is better.
    #[inline]
    pub fn score_projected(&self, r: RelationId, head: &[f64], tail: &[f64]) -> f64 {
        self.dissimilarity.translated(head, self.relation(r), tail)
    }

    /// Baseline score of a triple; lower is more plausible.
    pub fn score_triple(&self, triple: &Triple) -> Result<f64> {
        self.check_ids(triple.head, triple.relation)?;
        self.check_ids(triple.tail, triple.relation)?;
        self.validate()?;
        Ok(self.score_unchecked(triple))
    }

    pub(crate) fn score_unchecked(&self, t: &Triple) -> f64 {
        let k = self.dim_relation;
        let mut ph = vec![0.0; k];
        let mut pt = vec![0.0; k];
        self.project_into(t.head, t.relation, Side::Head, &mut ph);
        self.project_into(t.tail, t.relation, Side::Tail, &mut pt);
        self.score_projected(t.relation, &ph, &pt)
    }

    /// Analytic (sub)gradient of `score_triple`. At L1 kinks and at a zero
    /// L2 residual the subgradient 0 is used.
    pub fn score_gradient(&self, t: &Triple) -> TripleGradient {
        let (d, k) = (self.dim_entity, self.dim_relation);
        let mut ph = vec![0.0; k];
        let mut pt = vec![0.0; k];
        self.project_into(t.head, t.relation, Side::Head, &mut ph);
        self.project_into(t.tail, t.relation, Side::Tail, &mut pt);
        let r = self.relation(t.relation);
        let residual: Vec<f64> = (0..k).map(|i| ph[i] + r[i] - pt[i]).collect();

        // g = d score / d residual
        let g: Vec<f64> = match self.dissimilarity {
            Dissimilarity::L1 => residual
                .iter()
                .map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
                .collect(),
            Dissimilarity::L2 => {
                let norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    residual.iter().map(|v| v / norm).collect()
                } else {
                    vec![0.0; k]
                }
            }
        };

        let h = self.entity(t.head);
        let tl = self.entity(t.tail);
        // W^T g
        let back = |w: Option<&[f64]>| -> Vec<f64> {
            match w {
                None => g.clone(),
                Some(w) => {
                    let mut out = vec![0.0; d];
                    for i in 0..k {
                        let row = &w[i * d..(i + 1) * d];
                        for (o, &wij) in out.iter_mut().zip(row) {
                            *o += wij * g[i];
                        }
                    }
                    out
                }
            }
        };
        let outer = |v: &[f64], sign: f64| -> Vec<f64> {
            let mut m = vec![0.0; k * d];
            for i in 0..k {
                for j in 0..d {
                    m[i * d + j] = sign * g[i] * v[j];
                }
            }
            m
        };

        let w_head = self.projection(t.relation, Side::Head);
        let w_tail = self.projection(t.relation, Side::Tail);
        let head = back(w_head);
        let tail: Vec<f64> = back(w_tail).into_iter().map(|v| -v).collect();
        let (head_proj, tail_proj) = match self.variant {
            Variant::TransE => (None, None),
            Variant::TransR => {
                let diff: Vec<f64> = h.iter().zip(tl).map(|(a, b)| a - b).collect();
                (Some(outer(&diff, 1.0)), None)
            }
            Variant::STransE => (Some(outer(h, 1.0)), Some(outer(tl, -1.0))),
        };
        TripleGradient {
            head,
            relation: g,
            tail,
            head_proj,
            tail_proj,
        }
    }

    fn header(&self) -> String {
        format!(
            "{MAGIC} {FORMAT_VERSION} {} {} {} {} {} {}\n",
            self.variant,
            self.num_entities,
            self.num_relations,
            self.dim_entity,
            self.dim_relation,
            self.dissimilarity
        )
    }

    fn payload_len(&self) -> usize {
        8 * (self.entity_vecs.len()
            + self.relation_vecs.len()
            + self.head_proj.as_ref().map_or(0, Vec::len)
            + self.tail_proj.as_ref().map_or(0, Vec::len))
    }

    /// Serialize: ASCII header line, little-endian f64 payload
    /// (entities, relations, head projections, tail projections), then the
    /// payload byte length as a little-endian u64 footer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let payload_len = self.payload_len();
        let mut buf = Vec::with_capacity(header.len() + payload_len + 8);
        buf.extend_from_slice(header.as_bytes());
        let blocks = [
            Some(&self.entity_vecs),
            Some(&self.relation_vecs),
            self.head_proj.as_ref(),
            self.tail_proj.as_ref(),
        ];
        for block in blocks.into_iter().flatten() {
            for v in block {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&(payload_len as u64).to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .take(256)
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing model header line".into()))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::Format("model header is not ASCII".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.first() != Some(&MAGIC) {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        if fields.get(1) != Some(&FORMAT_VERSION) {
            return Err(Error::Format(format!(
                "unsupported model version {:?}",
                fields.get(1)
            )));
        }
        if fields.len() != 8 {
            return Err(Error::Format(format!(
                "model header has {} fields, expected 8",
                fields.len()
            )));
        }
        let variant: Variant = fields[2]
            .parse()
            .map_err(|_| Error::Format(format!("unknown variant `{}`", fields[2])))?;
        let num = |i: usize| -> Result<usize> {
            fields[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad header field `{}`", fields[i])))
        };
        let (n_ent, n_rel, d, k) = (num(3)?, num(4)?, num(5)?, num(6)?);
        let dissimilarity: Dissimilarity = fields[7]
            .parse()
            .map_err(|_| Error::Format(format!("unknown dissimilarity `{}`", fields[7])))?;

        let n_proj = match variant {
            Variant::TransE => 0,
            Variant::TransR => 1,
            Variant::STransE => 2,
        };
        let counts = [n_ent * d, n_rel * k, n_rel * k * d * n_proj];
        let expected_payload = 8 * counts.iter().sum::<usize>();
        let body = &bytes[newline + 1..];
        if body.len() != expected_payload + 8 {
            return Err(Error::Format(format!(
                "model payload is {} bytes, expected {}",
                body.len().saturating_sub(8),
                expected_payload
            )));
        }
        let footer = u64::from_le_bytes(body[expected_payload..].try_into().unwrap());
        if footer != expected_payload as u64 {
            return Err(Error::Format(format!(
                "payload length footer {footer} disagrees with header ({expected_payload})"
            )));
        }

        let mut floats = body[..expected_payload]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
        let entity_vecs = take(n_ent * d);
        let relation_vecs = take(n_rel * k);
        let block = n_rel * k * d;
        let head_proj = (n_proj >= 1).then(|| take(block));
        let tail_proj = (n_proj == 2).then(|| take(block));

        let model = Self {
            variant,
            dissimilarity,
            num_entities: n_ent,
            num_relations: n_rel,
            dim_entity: d,
            dim_relation: k,
            entity_vecs,
            relation_vecs,
            head_proj,
            tail_proj,
        };
        model
            .validate()
            .map_err(|e| Error::Format(format!("inconsistent model file: {e}")))?;
        Ok(model)
    }

    /// 64-bit fingerprint of the serialized model.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        u64::from_be_bytes(digest[..8].try_into().unwrap())
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

/// Free-function forms of the model file operations.
pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel> {
    EmbeddingModel::load(path)
}
