//! GRU and LSTM heads for the sequence-model comparison: 2-layer
//! unidirectional recurrences over the channel vector sequence, reading
//! out the final hidden state.

use rand::Rng;

use crate::nn::{kaiming_init, Frame, ParamId, ParamStore};
use crate::tensor::{Element, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RnnKind {
    Gru,
    Lstm,
}

impl RnnKind {
    fn gates(self) -> usize {
        match self {
            RnnKind::Gru => 3,
            RnnKind::Lstm => 4,
        }
    }
}

pub struct RecurrentCell {
    kind: RnnKind,
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
    hidden: usize,
}

struct CellState<'t, T: Element> {
    h: Var<'t, T>,
    cell: Option<Var<'t, T>>,
}

impl RecurrentCell {
    fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: RnnKind,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let g = kind.gates();
        Self {
            kind,
            w_ih: store.add_param(format!("{name}.w_ih"), kaiming_init(&[g * hidden, in_dim], in_dim, rng)),
            w_hh: store.add_param(format!("{name}.w_hh"), kaiming_init(&[g * hidden, hidden], hidden, rng)),
            b_ih: store.add_param(format!("{name}.b_ih"), Tensor::zeros(&[g * hidden])),
            b_hh: store.add_param(format!("{name}.b_hh"), Tensor::zeros(&[g * hidden])),
            hidden,
        }
    }

    fn step<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        x: Var<'t, T>,
        state: &mut CellState<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let h = self.hidden;
        let gi = x
            .matmul_t(frame.var(self.w_ih))?
            .add_row_bias(frame.var(self.b_ih))?;
        let gh = state
            .h
            .matmul_t(frame.var(self.w_hh))?
            .add_row_bias(frame.var(self.b_hh))?;
        match self.kind {
            RnnKind::Gru => {
                // Gate order r, z, n; the reset gate scales only the
                // hidden contribution of the candidate.
                let r = gi.narrow(1, 0, h)?.add(gh.narrow(1, 0, h)?)?.sigmoid();
                let z = gi.narrow(1, h, h)?.add(gh.narrow(1, h, h)?)?.sigmoid();
                let n = gi
                    .narrow(1, 2 * h, h)?
                    .add(r.mul(gh.narrow(1, 2 * h, h)?)?)?
                    .tanh();
                let keep = z.scale(-T::one()).add_scalar(T::one()); // 1 - z
                let new_h = keep.mul(n)?.add(z.mul(state.h)?)?;
                state.h = new_h;
                Ok(new_h)
            }
            RnnKind::Lstm => {
                let gates = gi.add(gh)?;
                let i = gates.narrow(1, 0, h)?.sigmoid();
                let f = gates.narrow(1, h, h)?.sigmoid();
                let g = gates.narrow(1, 2 * h, h)?.tanh();
                let o = gates.narrow(1, 3 * h, h)?.sigmoid();
                let cell = state.cell.expect("lstm state carries a cell");
                let new_cell = f.mul(cell)?.add(i.mul(g)?)?;
                let new_h = o.mul(new_cell.tanh())?;
                state.h = new_h;
                state.cell = Some(new_cell);
                Ok(new_h)
            }
        }
    }
}

/// Stacked unidirectional recurrence; `forward` consumes a `[Q, steps, W]`
/// sequence batch and returns the top layer's final hidden state `[Q, H]`.
pub struct RecurrentHead {
    cells: Vec<RecurrentCell>,
    pub kind: RnnKind,
    pub hidden: usize,
}

impl RecurrentHead {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: RnnKind,
        in_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let cells = (0..layers)
            .map(|l| {
                let dim = if l == 0 { in_dim } else { hidden };
                RecurrentCell::new(store, &format!("{name}.l{l}"), kind, dim, hidden, rng)
            })
            .collect();
        Self {
            cells,
            kind,
            hidden,
        }
    }

    pub fn forward<'t, T: Element>(
        &self,
        frame: &Frame<'t, '_, T>,
        seq: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let shape = seq.shape();
        if shape.len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "recurrent_head",
                shape,
                reason: "expected [queries, steps, features]".into(),
            });
        }
        let (q, steps, width) = (shape[0], shape[1], shape[2]);
        let zeros = frame
            .tape
            .input(&Tensor::zeros(&[q, self.hidden]), false);
        let mut states: Vec<CellState<'t, T>> = self
            .cells
            .iter()
            .map(|_| CellState {
                h: zeros,
                cell: matches!(self.kind, RnnKind::Lstm).then_some(zeros),
            })
            .collect();
        for t in 0..steps {
            let mut x = seq.narrow(1, t, 1)?.reshape(&[q, width])?;
            for (cell, state) in self.cells.iter().zip(&mut states) {
                x = cell.step(frame, x, state)?;
            }
        }
        Ok(states.last().expect("at least one layer").h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck_sampled, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn zero_params(store: &mut ParamStore<f64>) {
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape));
        }
    }

    #[test]
    fn zeroed_networks_keep_zero_hidden_state() {
        for kind in [RnnKind::Gru, RnnKind::Lstm] {
            let mut store = ParamStore::<f64>::new();
            let head = RecurrentHead::new(&mut store, "rnn", kind, 3, 4, 2, &mut rng(0));
            zero_params(&mut store);
            let tape = Tape::new();
            let frame = store.lease(&tape);
            let seq = tape.input(&Tensor::zeros(&[2, 5, 3]), false);
            let h = head.forward(&frame, seq).unwrap().value();
            assert_eq!(h.shape(), &[2, 4]);
            assert!(h.data().iter().all(|&v| v == 0.0), "{kind:?}");
        }
    }

    #[test]
    fn gru_matches_hand_unrolled_two_step_recurrence() {
        // Single layer, hidden 1, input dim 1, hand-picked weights.
        let mut store = ParamStore::<f64>::new();
        let head = RecurrentHead::new(&mut store, "rnn", RnnKind::Gru, 1, 1, 1, &mut rng(1));
        let cell = &head.cells[0];
        // w_ih rows: r, z, n; same for w_hh.
        store.set(cell.w_ih, Tensor::new(vec![3, 1], vec![0.5, -0.3, 0.8]).unwrap());
        store.set(cell.w_hh, Tensor::new(vec![3, 1], vec![0.2, 0.4, -0.6]).unwrap());
        store.set(cell.b_ih, Tensor::from_vec(vec![0.1, 0.0, -0.2]));
        store.set(cell.b_hh, Tensor::from_vec(vec![0.0, 0.3, 0.1]));

        let xs = [0.7, -1.2];
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = 0.0f64;
        for x in xs {
            let r = sigmoid(0.5 * x + 0.1 + 0.2 * h);
            let z = sigmoid(-0.3 * x + 0.4 * h + 0.3);
            let n = (0.8 * x - 0.2 + r * (-0.6 * h + 0.1)).tanh();
            h = (1.0 - z) * n + z * h;
        }

        let tape = Tape::new();
        let frame = store.lease(&tape);
        let seq = tape.input(&Tensor::new(vec![1, 2, 1], xs.to_vec()).unwrap(), false);
        let got = head.forward(&frame, seq).unwrap().value().data()[0];
        assert!((got - h).abs() < 1e-12, "{got} vs {h}");
    }

    #[test]
    fn lstm_matches_hand_unrolled_two_step_recurrence() {
        let mut store = ParamStore::<f64>::new();
        let head = RecurrentHead::new(&mut store, "rnn", RnnKind::Lstm, 1, 1, 1, &mut rng(2));
        let cell = &head.cells[0];
        // Gate order i, f, g, o.
        store.set(cell.w_ih, Tensor::new(vec![4, 1], vec![0.5, -0.4, 0.9, 0.3]).unwrap());
        store.set(cell.w_hh, Tensor::new(vec![4, 1], vec![-0.2, 0.6, 0.1, -0.7]).unwrap());
        store.set(cell.b_ih, Tensor::from_vec(vec![0.05, 0.1, -0.1, 0.2]));
        store.set(cell.b_hh, Tensor::from_vec(vec![0.0; 4]));

        let xs = [1.1, -0.4];
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        for x in xs {
            let i = sigmoid(0.5 * x - 0.2 * h + 0.05);
            let f = sigmoid(-0.4 * x + 0.6 * h + 0.1);
            let g = (0.9 * x + 0.1 * h - 0.1).tanh();
            let o = sigmoid(0.3 * x - 0.7 * h + 0.2);
            c = f * c + i * g;
            h = o * c.tanh();
        }

        let tape = Tape::new();
        let frame = store.lease(&tape);
        let seq = tape.input(&Tensor::new(vec![1, 2, 1], xs.to_vec()).unwrap(), false);
        let got = head.forward(&frame, seq).unwrap().value().data()[0];
        assert!((got - h).abs() < 1e-12, "{got} vs {h}");
    }

    #[test]
    fn gradcheck_through_four_step_recurrences() {
        for (kind, seed) in [(RnnKind::Gru, 3u64), (RnnKind::Lstm, 4u64)] {
            let mut store = ParamStore::<f64>::new();
            let head = RecurrentHead::new(&mut store, "rnn", kind, 2, 3, 2, &mut rng(seed));
            let trainable: Vec<_> = store.trainable_ids().collect();
            let inputs: Vec<Tensor<f64>> = trainable
                .iter()
                .map(|id| store.get(*id).clone())
                .collect();
            let seq = kaiming_init::<f64, _>(&[1, 4, 2], 1, &mut rng(seed + 10));
            let mut all_inputs = inputs;
            all_inputs.push(seq);
            let report = gradcheck_sampled(
                |tape, vars| {
                    let (params, seq) = vars.split_at(vars.len() - 1);
                    let frame = store.frame_from_vars(tape, params);
                    Ok(head.forward(&frame, seq[0])?.sum_all())
                },
                &all_inputs,
                1e-3,
                1e-4,
                12,
                seed,
            )
            .unwrap();
            assert!(report.pass(), "{kind:?}: {report}");
        }
    }
}
