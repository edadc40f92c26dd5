//! Learned symbol embeddings standing in for image features.
//!
//! Slots 0..3 hold the objects (sum of shape, color and size embeddings),
//! slot 3 the relation, the rest a learned empty-slot vector.

use ladx_nn::layers::INIT_STD;
use ladx_nn::{ops, Bound, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

use crate::scenegen::{Color, Relation, Scene, Shape, Size, MAX_OBJECTS};

pub const COND_PREFIX: &str = "cond";
pub const DEFAULT_SLOTS: usize = 8;

const SHAPE0: usize = 0;
const COLOR0: usize = SHAPE0 + Shape::ALL.len();
const SIZE0: usize = COLOR0 + Color::ALL.len();
const RELATION0: usize = SIZE0 + Size::ALL.len();
const EMPTY: usize = RELATION0 + Relation::ALL.len();
const NULL: usize = EMPTY + 1;
const ROWS: usize = NULL + 1;
const RELATION_SLOT: usize = MAX_OBJECTS;

/// Condition features `[slots, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CondFeatures {
    pub values: Tensor<f32>,
}

impl CondFeatures {
    pub fn slots(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn slot(&self, i: usize) -> &[f32] {
        self.values.row(i)
    }
}

#[derive(Clone, Debug)]
pub struct CondEncoder {
    pub dim: usize,
    pub slots: usize,
    table: ParamId,
}

impl CondEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, dim: usize, slots: usize, rng: &mut impl Rng) -> Self {
        assert!(slots > RELATION_SLOT, "need at least {} condition slots", RELATION_SLOT + 1);
        let table = store.add_normal(&format!("{COND_PREFIX}.table"), &[ROWS, dim], INIT_STD, rng);
        CondEncoder { dim, slots, table }
    }

    /// Table rows summed into each slot; `None` is the null condition.
    pub fn bags(&self, scene: Option<&Scene>) -> Vec<Vec<usize>> {
        let Some(scene) = scene else {
            return vec![vec![NULL]; self.slots];
        };
        let mut bags = vec![vec![EMPTY]; self.slots];
        for (slot, o) in scene.objects.iter().enumerate() {
            bags[slot] = vec![SHAPE0 + o.shape.index(), COLOR0 + o.color.index(), SIZE0 + o.size.index()];
        }
        bags[RELATION_SLOT] = vec![RELATION0 + scene.relation.index()];
        bags
    }

    /// Features `[B, slots, d]` for a batch, `None` entries dropped to null.
    pub fn forward<T: Scalar>(&self, p: &Bound<T>, scenes: &[Option<&Scene>]) -> Var<T> {
        let bags: Vec<Vec<usize>> = scenes.iter().flat_map(|s| self.bags(*s)).collect();
        ops::reshape(&ops::embedding_bag(p.get(self.table), &bags), vec![scenes.len(), self.slots, self.dim])
    }

    pub fn encode_condition(&self, store: &ParamStore<f32>, scene: &Scene) -> CondFeatures {
        self.features(store, Some(scene))
    }

    pub fn null_condition(&self, store: &ParamStore<f32>) -> CondFeatures {
        self.features(store, None)
    }

    fn features(&self, store: &ParamStore<f32>, scene: Option<&Scene>) -> CondFeatures {
        let v = self.forward(&store.bind(false), &[scene]).value().clone();
        CondFeatures { values: v.reshape(vec![self.slots, self.dim]) }
    }
}
