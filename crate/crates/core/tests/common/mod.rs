//! Independent reference implementations and generators shared by the
//! integration tests. Nothing here calls the library's scoring or ranking
//! code; models and ellipsoids are read through their public fields only.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use kgdomain::graph::{EntityId, RelationId};
use kgdomain::model::{Dissimilarity, EmbeddingModel, Variant};
use kgdomain::{DomainModel, Ellipsoid, KnowledgeGraph, Side, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entity `e` in the final space of relation `r`, by explicit matrix product.
pub fn project(m: &EmbeddingModel, e: EntityId, r: RelationId, side: Side) -> Vec<f64> {
    let (d, k) = (m.dim_entity, m.dim_relation);
    let v = &m.entity_vecs[e as usize * d..(e as usize + 1) * d];
    let w = match (m.variant, side) {
        (Variant::TransE, _) => return v.to_vec(),
        (Variant::TransR, _) | (Variant::STransE, Side::Head) => m.head_proj.as_ref().unwrap(),
        (Variant::STransE, Side::Tail) => m.tail_proj.as_ref().unwrap(),
    };
    let block = &w[r as usize * k * d..(r as usize + 1) * k * d];
    (0..k)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..d {
                s += block[i * d + j] * v[j];
            }
            s
        })
        .collect()
}

pub fn baseline(m: &EmbeddingModel, t: &Triple) -> f64 {
    let k = m.dim_relation;
    let h = project(m, t.head, t.relation, Side::Head);
    let tl = project(m, t.tail, t.relation, Side::Tail);
    let r = &m.relation_vecs[t.relation as usize * k..(t.relation as usize + 1) * k];
    let mut acc = 0.0;
    for i in 0..k {
        let v = h[i] + r[i] - tl[i];
        acc += match m.dissimilarity {
            Dissimilarity::L1 => v.abs(),
            Dissimilarity::L2 => v * v,
        };
    }
    match m.dissimilarity {
        Dissimilarity::L1 => acc,
        Dissimilarity::L2 => acc.sqrt(),
    }
}

/// `(q, ‖x − a‖)` from the packed factor entries.
pub fn quad_and_norm(e: &Ellipsoid, x: &[f64]) -> (f64, f64) {
    let k = e.dim();
    let y: Vec<f64> = x.iter().zip(e.center()).map(|(a, b)| a - b).collect();
    let mut z = vec![0.0; k];
    for i in 0..k {
        for (j, zj) in z.iter_mut().enumerate().take(i + 1) {
            *zj += e.factor().get(i, j) * y[i];
        }
    }
    let q = z.iter().map(|v| v * v).sum::<f64>();
    let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    (q, n)
}

pub fn radial(e: &Ellipsoid, x: &[f64]) -> f64 {
    let (q, n) = quad_and_norm(e, x);
    (1.0 - 1.0 / q.sqrt()).abs() * n
}

pub fn penalty(e: &Ellipsoid, x: &[f64]) -> f64 {
    let (q, n) = quad_and_norm(e, x);
    if q < 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / q.sqrt()).abs() * n
    }
}

pub fn oracle_score(m: &EmbeddingModel, dm: Option<&DomainModel>, t: &Triple, side: Side) -> f64 {
    let base = baseline(m, t);
    let Some(dm) = dm else { return base };
    match dm.ellipsoids.get(&(t.relation, side)) {
        None => base,
        Some(e) => base + penalty(e, &project(m, t.entity(side), t.relation, side)),
    }
}

/// `[head_raw, head_filtered, tail_raw, tail_filtered]` per test triple,
/// by sorting every candidate's score.
pub fn oracle_ranks(
    m: &EmbeddingModel,
    dm: Option<&DomainModel>,
    g: &KnowledgeGraph,
    triples: &[Triple],
) -> Vec<[usize; 4]> {
    let gold: HashSet<Triple> = g.train.iter().chain(&g.valid).chain(&g.test).copied().collect();
    let rank = |t: &Triple, side: Side, filtered: bool| -> usize {
        let gold_entity = t.entity(side);
        let mut scored: Vec<(f64, EntityId)> = (0..m.num_entities as EntityId)
            .filter(|&c| {
                let cand = t.with_entity(side, c);
                c == gold_entity || !filtered || !gold.contains(&cand)
            })
            .map(|c| (oracle_score(m, dm, &t.with_entity(side, c), side), c))
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let target = scored.iter().find(|s| s.1 == gold_entity).unwrap().0;
        1 + scored.iter().take_while(|s| s.0 < target).count()
    };
    triples
        .iter()
        .map(|t| {
            [
                rank(t, Side::Head, false),
                rank(t, Side::Head, true),
                rank(t, Side::Tail, false),
                rank(t, Side::Tail, true),
            ]
        })
        .collect()
}

/// `(MR, Hits@1, Hits@3, Hits@10)` with hits in percent.
pub fn summarize(ranks: &[usize]) -> (f64, f64, f64, f64) {
    let n = ranks.len() as f64;
    let hits = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    (
        ranks.iter().sum::<usize>() as f64 / n,
        hits(1),
        hits(3),
        hits(10),
    )
}

/// Head and tail domains recomputed by scanning the training split.
pub fn brute_force_domains(g: &KnowledgeGraph) -> BTreeMap<(RelationId, Side), BTreeSet<EntityId>> {
    let mut out: BTreeMap<(RelationId, Side), BTreeSet<EntityId>> = BTreeMap::new();
    for t in &g.train {
        out.entry((t.relation, Side::Head)).or_default().insert(t.head);
        out.entry((t.relation, Side::Tail)).or_default().insert(t.tail);
    }
    out
}

/// Random id-level graph; every split non-empty.
pub fn random_graph(rng: &mut ChaCha8Rng, max_entities: usize, max_relations: usize) -> KnowledgeGraph {
    let n_ent = rng.random_range(4..=max_entities);
    let n_rel = rng.random_range(1..=max_relations);
    let mut split = |n: usize| -> Vec<Triple> {
        (0..n)
            .map(|_| {
                Triple::new(
                    rng.random_range(0..n_ent as u32),
                    rng.random_range(0..n_rel as u32),
                    rng.random_range(0..n_ent as u32),
                )
            })
            .collect()
    };
    let train = split(3 * n_ent);
    let valid = split(n_ent / 2 + 1);
    let test = split(n_ent / 2 + 1);
    KnowledgeGraph::from_ids(n_ent, n_rel, train, valid, test).unwrap()
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Random model of any variant over the graph's vocabularies.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    g: &KnowledgeGraph,
    variant: Variant,
    dissimilarity: Dissimilarity,
    d: usize,
    k: usize,
) -> EmbeddingModel {
    let k = if variant == Variant::TransE { d } else { k };
    let (ne, nr) = (g.num_entities(), g.num_relations());
    let proj = |rng: &mut ChaCha8Rng| Some(uniform_vec(rng, nr * k * d, 1.0));
    let head_proj = if variant == Variant::TransE { None } else { proj(rng) };
    let tail_proj = if variant == Variant::STransE { proj(rng) } else { None };
    EmbeddingModel {
        variant,
        dissimilarity,
        num_entities: ne,
        num_relations: nr,
        dim_entity: d,
        dim_relation: k,
        entity_vecs: uniform_vec(rng, ne * d, 1.0),
        relation_vecs: uniform_vec(rng, nr * k, 1.0),
        head_proj,
        tail_proj,
    }
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] += h;
    let up = f(&p);
    p[i] -= 2.0 * h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Lower-triangular factor with diagonal in `[0.4, 2)` and off-diagonal
/// entries in `[-0.5, 0.5)`, around a random center.
pub fn random_ellipsoid(rng: &mut ChaCha8Rng, k: usize) -> Ellipsoid {
    let mut dense = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..i {
            dense[i * k + j] = rng.random_range(-0.5..0.5);
        }
        dense[i * k + i] = rng.random_range(0.4..2.0);
    }
    let factor = kgdomain::LowerTriangular::from_dense(k, &dense).unwrap();
    Ellipsoid::new(uniform_vec(rng, k, 2.0), factor).unwrap()
}

/// A point whose quadratic form is drawn from `[0.2, 0.8] ∪ [1.25, 4]`,
/// away from the center and the surface.
pub fn off_surface_point(rng: &mut ChaCha8Rng, e: &Ellipsoid) -> Vec<f64> {
    let k = e.dim();
    let u = uniform_vec(rng, k, 1.0);
    let probe: Vec<f64> = e.center().iter().zip(&u).map(|(a, v)| a + v).collect();
    let (qu, _) = quad_and_norm(e, &probe);
    let target = if rng.random_bool(0.5) {
        rng.random_range(0.2..0.8)
    } else {
        rng.random_range(1.25..4.0)
    };
    let s = (target / qu).sqrt();
    e.center().iter().zip(&u).map(|(a, v)| a + s * v).collect()
}

/// Largest relative error between the analytic gradient of the radial
/// distance and central differences, over the center and the factor.
pub fn gradient_fd_error(e: &Ellipsoid, x: &[f64]) -> f64 {
    let k = e.dim();
    let g = e.gradient(x).unwrap().expect("non-degenerate point");
    let h = 1e-6;
    let center_fd: Vec<f64> = (0..k)
        .map(|i| {
            central_diff(
                |a| radial(&Ellipsoid::new(a.to_vec(), e.factor().clone()).unwrap(), x),
                e.center(),
                i,
                h,
            )
        })
        .collect();
    let packed = e.factor().packed().to_vec();
    let factor_fd: Vec<f64> = (0..packed.len())
        .map(|i| {
            central_diff(
                |l| {
                    let f = kgdomain::LowerTriangular::from_packed(k, l.to_vec()).unwrap();
                    radial(&Ellipsoid::new(e.center().to_vec(), f).unwrap(), x)
                },
                &packed,
                i,
                h,
            )
        })
        .collect();
    rel_err(&g.center, &center_fd).max(rel_err(g.factor.packed(), &factor_fd))
}

/// Random orthogonal matrix from the QR factorization of a Gaussian-ish
/// matrix.
pub fn random_rotation(rng: &mut ChaCha8Rng, k: usize) -> nalgebra::DMatrix<f64> {
    let m = nalgebra::DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    m.qr().q()
}

/// Conjugate `e` by the rotation `r`: center `R·a`, matrix `R·M·Rᵀ`,
/// refactored with nalgebra's Cholesky.
pub fn rotate(e: &Ellipsoid, r: &nalgebra::DMatrix<f64>) -> Ellipsoid {
    let k = e.dim();
    let l = nalgebra::DMatrix::from_fn(k, k, |i, j| if j <= i { e.factor().get(i, j) } else { 0.0 });
    let m = r * (&l * l.transpose()) * r.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(m).expect("rotated matrix stays SPD").l();
    let dense: Vec<f64> = (0..k * k).map(|idx| chol[(idx / k, idx % k)]).collect();
    let a = r * nalgebra::DVector::from_column_slice(e.center());
    Ellipsoid::new(
        a.as_slice().to_vec(),
        kgdomain::LowerTriangular::from_dense(k, &dense).unwrap(),
    )
    .unwrap()
}

pub fn rotate_point(x: &[f64], r: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    (r * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec()
}
