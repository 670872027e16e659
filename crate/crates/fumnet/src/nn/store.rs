//! Named parameter storage decoupled from the tape.
//!
//! Layers register parameters (trained) and buffers (running statistics)
//! here at construction time and keep only [`ParamId`] handles. Each
//! forward pass leases the trainable slots onto a fresh tape as gradient
//! leaves via [`ParamStore::lease`]; after backward, the trainer reads the
//! gradients back through the same [`Frame`].

use crate::tensor::{Element, Tape, Tensor, Var};

/// Handle to one slot in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    /// Optimized; leased with `requires_grad`.
    Trainable,
    /// Carried state such as batch-norm running statistics; saved in
    /// checkpoints but never differentiated.
    Buffer,
}

struct Slot<T> {
    name: String,
    tensor: Tensor<T>,
    kind: SlotKind,
}

pub struct ParamStore<T> {
    slots: Vec<Slot<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self { slots: Vec::new() }
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.push(name.into(), tensor, SlotKind::Trainable)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.push(name.into(), tensor, SlotKind::Buffer)
    }

    fn push(&mut self, name: String, tensor: Tensor<T>, kind: SlotKind) -> ParamId {
        debug_assert!(
            !self.slots.iter().any(|s| s.name == name),
            "duplicate parameter name {name}"
        );
        self.slots.push(Slot { name, tensor, kind });
        ParamId(self.slots.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.slots[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> SlotKind {
        self.slots[id.0].kind
    }

    /// Overwrites a slot's values; the shape must be unchanged.
    pub fn set(&mut self, id: ParamId, tensor: Tensor<T>) {
        assert_eq!(
            self.slots[id.0].tensor.shape(),
            tensor.shape(),
            "slot {} shape change",
            self.slots[id.0].name
        );
        self.slots[id.0].tensor = tensor;
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [T] {
        self.slots[id.0].tensor.data_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == SlotKind::Trainable)
            .map(|(i, _)| ParamId(i))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }

    /// Total number of trainable scalar values.
    pub fn num_trainable_values(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.kind == SlotKind::Trainable)
            .map(|s| s.tensor.numel())
            .sum()
    }

    /// Puts every trainable slot on the tape as a gradient leaf.
    pub fn lease<'t>(&self, tape: &'t Tape<T>) -> Frame<'t, '_, T> {
        let vars = self
            .slots
            .iter()
            .map(|s| match s.kind {
                SlotKind::Trainable => Some(tape.input(&s.tensor, true)),
                SlotKind::Buffer => None,
            })
            .collect();
        Frame {
            store: self,
            tape,
            vars,
        }
    }

    /// Builds a frame whose trainable variables are supplied by the caller
    /// (in `trainable_ids` order) instead of leased from the stored values.
    /// Gradient checks use this to differentiate a forward pass with
    /// respect to externally perturbed parameters.
    pub fn frame_from_vars<'t>(
        &self,
        tape: &'t Tape<T>,
        trainable_vars: &[Var<'t, T>],
    ) -> Frame<'t, '_, T> {
        let mut supplied = trainable_vars.iter();
        let vars = self
            .slots
            .iter()
            .map(|s| match s.kind {
                SlotKind::Trainable => Some(*supplied.next().expect("one var per trainable slot")),
                SlotKind::Buffer => None,
            })
            .collect();
        assert!(supplied.next().is_none(), "too many vars supplied");
        Frame {
            store: self,
            tape,
            vars,
        }
    }

    pub fn apply_updates(&mut self, updates: Vec<BufferUpdate<T>>) {
        for update in updates {
            let slot = &mut self.slots[update.id.0];
            debug_assert_eq!(slot.kind, SlotKind::Buffer);
            assert_eq!(slot.tensor.numel(), update.value.len());
            slot.tensor = Tensor::new(slot.tensor.shape().to_vec(), update.value)
                .expect("buffer update length checked");
        }
    }
}

/// Pending write to a buffer slot, collected during a train-mode forward
/// pass and applied after the optimizer step.
pub struct BufferUpdate<T> {
    pub id: ParamId,
    pub value: Vec<T>,
}

/// One lease of a store onto a tape.
pub struct Frame<'t, 's, T: Element> {
    store: &'s ParamStore<T>,
    pub tape: &'t Tape<T>,
    vars: Vec<Option<Var<'t, T>>>,
}

impl<'t, T: Element> Frame<'t, '_, T> {
    /// Tape variable for a trainable slot.
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0].expect("buffer slots are not leased as variables")
    }

    /// Current value of a buffer slot.
    pub fn buffer(&self, id: ParamId) -> &Tensor<T> {
        debug_assert_eq!(self.store.kind(id), SlotKind::Buffer);
        self.store.get(id)
    }

    /// Gradient of a trainable slot after `backward`, if one reached it.
    pub fn grad(&self, id: ParamId) -> Option<Tensor<T>> {
        self.vars[id.0].and_then(|v| v.grad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    #[test]
    fn lease_pull_grads_roundtrip() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add_param("w", Tensor::from_vec(vec![2.0, 3.0]));
        let stat = store.add_buffer("stat", Tensor::from_vec(vec![0.0]));

        let tape = Tape::new();
        let frame = store.lease(&tape);
        let loss = frame.var(w).mul(frame.var(w)).unwrap().sum_all();
        backward(loss).unwrap();
        assert_eq!(frame.grad(w).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(frame.buffer(stat).data(), &[0.0]);
        assert_eq!(store.num_trainable_values(), 2);
        assert_eq!(store.find("w"), Some(w));
    }

    #[test]
    fn buffer_updates_apply_after_the_pass() {
        let mut store = ParamStore::<f32>::new();
        let b = store.add_buffer("running", Tensor::from_vec(vec![1.0, 1.0]));
        store.apply_updates(vec![BufferUpdate {
            id: b,
            value: vec![0.5, 2.0],
        }]);
        assert_eq!(store.get(b).data(), &[0.5, 2.0]);
    }
}
