//! Learned parameters: entity vectors in `R^k`, relation vectors in `R^d`
//! and one `k x d` projection matrix per relation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::graph::{EntityId, RelationId};

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("dimensions must be at least 1 (k = {k}, d = {d})")]
    BadDims { k: usize, d: usize },
    #[error("embedding file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("embedding file: {0}")]
    Io(#[from] std::io::Error),
}

/// Read access to a parameter store. Implemented by the plain
/// [`EmbeddingSpace`] and by the trainer's shared lock-free store, so the
/// kernels can run against either.
pub trait Params {
    fn k(&self) -> usize;
    fn d(&self) -> usize;
    fn num_entities(&self) -> usize;
    fn num_relations(&self) -> usize;
    fn read_entity(&self, id: EntityId, out: &mut [f64]);
    fn read_relation(&self, id: RelationId, out: &mut [f64]);
    /// Row-major `k x d`.
    fn read_projection(&self, id: RelationId, out: &mut [f64]);

    fn entity_vec(&self, id: EntityId) -> Vec<f64> {
        let mut v = vec![0.0; self.k()];
        self.read_entity(id, &mut v);
        v
    }

    fn relation_vec(&self, id: RelationId) -> Vec<f64> {
        let mut v = vec![0.0; self.d()];
        self.read_relation(id, &mut v);
        v
    }

    fn projection_vec(&self, id: RelationId) -> Vec<f64> {
        let mut v = vec![0.0; self.k() * self.d()];
        self.read_projection(id, &mut v);
        v
    }
}

/// A parameter block addressed by gradients and updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    Entity(EntityId),
    Relation(RelationId),
    Projection(RelationId),
}

/// Gradients for the handful of blocks touched by one objective term.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseGrads {
    blocks: Vec<(Block, Vec<f64>)>,
}

impl SparseGrads {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `scale * grad` into the block's accumulator.
    pub fn add_scaled(&mut self, block: Block, grad: &[f64], scale: f64) {
        if let Some((_, acc)) = self.blocks.iter_mut().find(|(b, _)| *b == block) {
            for (a, g) in acc.iter_mut().zip(grad) {
                *a += scale * g;
            }
        } else {
            self.blocks.push((block, grad.iter().map(|g| scale * g).collect()));
        }
    }

    pub fn add(&mut self, block: Block, grad: &[f64]) {
        self.add_scaled(block, grad, 1.0);
    }

    pub fn get(&self, block: Block) -> Option<&[f64]> {
        self.blocks
            .iter()
            .find(|(b, _)| *b == block)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Block, &[f64])> {
        self.blocks.iter().map(|(b, g)| (*b, g.as_slice()))
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.blocks.iter().map(|(b, _)| *b).collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn merge(&mut self, other: &SparseGrads, scale: f64) {
        for (b, g) in other.iter() {
            self.add_scaled(b, g, scale);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|(_, g)| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpace {
    k: usize,
    d: usize,
    entities: Vec<f64>,
    relations: Vec<f64>,
    projections: Vec<f64>,
}

impl EmbeddingSpace {
    /// All-zero vectors, identity-padded projections.
    pub fn zeros(num_entities: usize, num_relations: usize, k: usize, d: usize) -> Result<Self, SpaceError> {
        if k == 0 || d == 0 {
            return Err(SpaceError::BadDims { k, d });
        }
        let mut projections = vec![0.0; num_relations * k * d];
        for r in 0..num_relations {
            for i in 0..k.min(d) {
                projections[r * k * d + i * d + i] = 1.0;
            }
        }
        Ok(EmbeddingSpace {
            k,
            d,
            entities: vec![0.0; num_entities * k],
            relations: vec![0.0; num_relations * d],
            projections,
        })
    }

    /// Uniform vectors in `[-6/sqrt(dim), 6/sqrt(dim)]` and identity-padded
    /// projection matrices.
    pub fn init<R: Rng>(
        num_entities: usize,
        num_relations: usize,
        k: usize,
        d: usize,
        rng: &mut R,
    ) -> Result<Self, SpaceError> {
        let mut space = Self::zeros(num_entities, num_relations, k, d)?;
        let ek = 6.0 / (k as f64).sqrt();
        for x in &mut space.entities {
            *x = rng.random_range(-ek..=ek);
        }
        let ed = 6.0 / (d as f64).sqrt();
        for x in &mut space.relations {
            *x = rng.random_range(-ed..=ed);
        }
        Ok(space)
    }

    pub fn from_parts(
        k: usize,
        d: usize,
        entities: Vec<f64>,
        relations: Vec<f64>,
        projections: Vec<f64>,
    ) -> Result<Self, SpaceError> {
        if k == 0 || d == 0 {
            return Err(SpaceError::BadDims { k, d });
        }
        let fmt = |message: &str| SpaceError::Format {
            line: 0,
            message: message.to_string(),
        };
        if entities.len() % k != 0 || relations.len() % d != 0 {
            return Err(fmt("parameter lengths are not multiples of the dimensions"));
        }
        if projections.len() != relations.len() / d * k * d {
            return Err(fmt("one projection matrix per relation required"));
        }
        Ok(EmbeddingSpace {
            k,
            d,
            entities,
            relations,
            projections,
        })
    }

    pub fn entity(&self, id: EntityId) -> &[f64] {
        &self.entities[id.index() * self.k..(id.index() + 1) * self.k]
    }

    pub fn entity_mut(&mut self, id: EntityId) -> &mut [f64] {
        &mut self.entities[id.index() * self.k..(id.index() + 1) * self.k]
    }

    pub fn relation(&self, id: RelationId) -> &[f64] {
        &self.relations[id.index() * self.d..(id.index() + 1) * self.d]
    }

    pub fn relation_mut(&mut self, id: RelationId) -> &mut [f64] {
        &mut self.relations[id.index() * self.d..(id.index() + 1) * self.d]
    }

    pub fn projection(&self, id: RelationId) -> &[f64] {
        let n = self.k * self.d;
        &self.projections[id.index() * n..(id.index() + 1) * n]
    }

    pub fn projection_mut(&mut self, id: RelationId) -> &mut [f64] {
        let n = self.k * self.d;
        &mut self.projections[id.index() * n..(id.index() + 1) * n]
    }

    pub fn block(&self, block: Block) -> &[f64] {
        match block {
            Block::Entity(e) => self.entity(e),
            Block::Relation(r) => self.relation(r),
            Block::Projection(r) => self.projection(r),
        }
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        match block {
            Block::Entity(e) => self.entity_mut(e),
            Block::Relation(r) => self.relation_mut(r),
            Block::Projection(r) => self.projection_mut(r),
        }
    }

    pub(crate) fn raw_parts(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.entities, &self.relations, &self.projections)
    }

    pub fn is_finite(&self) -> bool {
        self.entities
            .iter()
            .chain(&self.relations)
            .chain(&self.projections)
            .all(|x| x.is_finite())
    }

    /// Writes the text format: a `k d num_entities num_relations` header,
    /// one `id v1 .. vk` line per entity, one `id v1 .. vd` line per
    /// relation, then one `id h11 h12 .. hkd` line per relation holding its
    /// projection matrix in row-major order. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write<W: Write>(&self, out: &mut W) -> Result<(), SpaceError> {
        let (ne, nr) = (self.num_entities(), self.num_relations());
        writeln!(out, "{} {} {} {}", self.k, self.d, ne, nr)?;
        let row = |out: &mut W, id: usize, vals: &[f64]| -> std::io::Result<()> {
            write!(out, "{}", id)?;
            for v in vals {
                write!(out, " {}", v)?;
            }
            writeln!(out)
        };
        for i in 0..ne {
            row(out, i, self.entity(EntityId(i as u32)))?;
        }
        for r in 0..nr {
            row(out, r, self.relation(RelationId(r as u32)))?;
        }
        for r in 0..nr {
            row(out, r, self.projection(RelationId(r as u32)))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), SpaceError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, SpaceError> {
        let mut lines = input.lines().enumerate();
        let fmt = |line: usize, message: String| SpaceError::Format { line, message };
        let (_, header) = lines.next().ok_or_else(|| fmt(1, "missing header".into()))?;
        let header: Vec<usize> = header?
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| fmt(1, format!("bad header: {}", e)))?;
        let [k, d, ne, nr] = header[..] else {
            return Err(fmt(1, "header must be `k d num_entities num_relations`".into()));
        };
        let mut section = |count: usize, width: usize| -> Result<Vec<f64>, SpaceError> {
            let mut values = Vec::with_capacity(count * width);
            for expected in 0..count {
                let (i, line) = lines
                    .next()
                    .ok_or_else(|| fmt(0, "unexpected end of file".into()))?;
                let line = line?;
                let mut fields = line.split_whitespace();
                let id = fields.next().and_then(|s| s.parse::<usize>().ok());
                if id != Some(expected) {
                    return Err(fmt(i + 1, format!("expected id {}", expected)));
                }
                let before = values.len();
                for f in fields {
                    values.push(f.parse::<f64>().map_err(|e| fmt(i + 1, e.to_string()))?);
                }
                if values.len() - before != width {
                    return Err(fmt(i + 1, format!("expected {} values", width)));
                }
            }
            Ok(values)
        };
        let entities = section(ne, k)?;
        let relations = section(nr, d)?;
        let projections = section(nr, k * d)?;
        Self::from_parts(k, d, entities, relations, projections)
    }

    pub fn load(path: &Path) -> Result<Self, SpaceError> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

impl Params for EmbeddingSpace {
    fn k(&self) -> usize {
        self.k
    }

    fn d(&self) -> usize {
        self.d
    }

    fn num_entities(&self) -> usize {
        self.entities.len() / self.k
    }

    fn num_relations(&self) -> usize {
        self.relations.len() / self.d
    }

    fn read_entity(&self, id: EntityId, out: &mut [f64]) {
        out.copy_from_slice(self.entity(id));
    }

    fn read_relation(&self, id: RelationId, out: &mut [f64]) {
        out.copy_from_slice(self.relation(id));
    }

    fn read_projection(&self, id: RelationId, out: &mut [f64]) {
        out.copy_from_slice(self.projection(id));
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projections_start_identity_padded() {
        let s = EmbeddingSpace::zeros(1, 2, 3, 2).unwrap();
        assert_eq!(s.projection(RelationId(1)), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(EmbeddingSpace::zeros(1, 1, 0, 2).is_err());
    }

    #[test]
    fn init_respects_bounds() {
        let s = EmbeddingSpace::init(10, 2, 16, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (e, r, _) = s.raw_parts();
        assert!(e.iter().all(|x| x.abs() <= 1.5));
        assert!(r.iter().all(|x| x.abs() <= 3.0));
    }

    #[test]
    fn sparse_grads_merge_blocks() {
        let mut g = SparseGrads::new();
        g.add(Block::Entity(EntityId(1)), &[1.0, 2.0]);
        g.add_scaled(Block::Entity(EntityId(1)), &[1.0, 1.0], -2.0);
        g.add(Block::Relation(RelationId(0)), &[0.5]);
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(Block::Entity(EntityId(1))), Some(&[-1.0, 0.0][..]));
        assert_eq!(g.get(Block::Entity(EntityId(2))), None);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = "2 2 2 1\n0 1 2\n";
        assert!(matches!(
            EmbeddingSpace::read(text.as_bytes()),
            Err(SpaceError::Format { .. })
        ));
        let bad_id = "1 1 1 0\n3 1\n";
        assert!(EmbeddingSpace::read(bad_id.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn text_format_round_trips_exactly(seed in any::<u64>(), ne in 0usize..6, nr in 0usize..3, k in 1usize..5, d in 1usize..5) {
            let s = EmbeddingSpace::init(ne, nr, k, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut buf = Vec::new();
            s.write(&mut buf).unwrap();
            let back = EmbeddingSpace::read(buf.as_slice()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
