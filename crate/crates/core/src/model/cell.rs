use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{EdgeType, HeteroGraph};
use crate::model::{LayerWeights, Model};
use crate::numcore::{Tape, Var};

/// Dropout settings for a training-mode pass.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

/// Records the four row-normalised adjacency matrices of `graph` as tape
/// constants, in [`EdgeType`] order.
pub fn adjacency_vars(tape: &mut Tape<'_>, graph: &HeteroGraph) -> [Var; 4] {
    graph.mean_adjacency().map(|a| tape.constant(a))
}

/// Node input matrix: projected word embeddings for the word rows, the
/// sentiment embeddings for the last three rows.
pub fn node_inputs(tape: &mut Tape<'_>, model: &Model, token_ids: &[usize]) -> Result<Var> {
    let table = tape.param(model.embed);
    let words = tape.gather_rows(table, token_ids)?;
    let proj = tape.param(model.input_proj);
    let words = tape.matmul(words, proj)?;
    let senti = tape.param(model.senti);
    tape.concat_rows(&[words, senti])
}

/// Mean of the in-neighbours' hidden rows under one relation, plus `k`.
/// Rows with no neighbours come out as exactly `k`.
pub fn neighbor_aggregate(tape: &mut Tape<'_>, adj: Var, h: Var, k: Var) -> Result<Var> {
    let mean = tape.matmul(adj, h)?;
    tape.add_row(mean, k)
}

/// One gated message-passing layer over all nodes.
///
/// ```text
/// agg_r = mean_{j -> i in r} h_j + k               r in {to, from, position, sentiment}
/// z     = sigmoid(sum_r agg_r Wz_r + x Vz + h Uz)
/// r     = sigmoid(sum_r agg_r Wr_r + x Vr + h Ur)
/// cand  = tanh(sum_r agg_r Wh_r + x Vh + (r * h) Uh)
/// h'    = (1 - z) * h + z * cand
/// ```
pub fn hggnn_cell(
    tape: &mut Tape<'_>,
    layer: &LayerWeights,
    x: Var,
    h_prev: Var,
    adj: &[Var; 4],
) -> Result<Var> {
    let k = tape.param(layer.k);
    let g = &layer.gru;

    let lin = |tape: &mut Tape<'_>, a: Var, w| -> Result<Var> {
        let w = tape.param(w);
        tape.matmul(a, w)
    };

    let xz = lin(tape, x, g.vz)?;
    let hz = lin(tape, h_prev, g.uz)?;
    let mut z_pre = tape.add(xz, hz)?;
    let xr = lin(tape, x, g.vr)?;
    let hr = lin(tape, h_prev, g.ur)?;
    let mut r_pre = tape.add(xr, hr)?;
    let mut c_pre = lin(tape, x, g.vh)?;

    for ty in EdgeType::ALL {
        let rel = &layer.relations[ty.index()];
        let agg = neighbor_aggregate(tape, adj[ty.index()], h_prev, k)?;
        let az = lin(tape, agg, rel.wz)?;
        z_pre = tape.add(z_pre, az)?;
        let ar = lin(tape, agg, rel.wr)?;
        r_pre = tape.add(r_pre, ar)?;
        let ah = lin(tape, agg, rel.wh)?;
        c_pre = tape.add(c_pre, ah)?;
    }

    let z = tape.sigmoid(z_pre);
    let r = tape.sigmoid(r_pre);
    let gated = tape.mul(r, h_prev)?;
    let hu = lin(tape, gated, g.uh)?;
    let c_pre = tape.add(c_pre, hu)?;
    let cand = tape.tanh(c_pre);

    let keep = tape.one_minus(z);
    let kept = tape.mul(keep, h_prev)?;
    let fresh = tape.mul(z, cand)?;
    let out = tape.add(kept, fresh)?;
    if !tape.value(out).all_finite() {
        return Err(Error::Numerical("non-finite hidden state in gated cell".into()));
    }
    Ok(out)
}

/// Applies the layers of one stack in order. In training mode the node
/// inputs get one dropout mask shared by all layers of this call.
pub fn run_stack(
    tape: &mut Tape<'_>,
    stack: &[LayerWeights],
    x: Var,
    h0: Var,
    adj: &[Var; 4],
    dropout: Option<&mut DropoutCtx<'_>>,
) -> Result<Var> {
    if stack.is_empty() {
        return Ok(h0);
    }
    let x = match dropout {
        Some(d) => tape.dropout(x, d.rate, d.rng)?,
        None => x,
    };
    let mut h = h0;
    for layer in stack {
        h = hggnn_cell(tape, layer, x, h, adj)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Polarity;
    use crate::graph::{HeteroGraph, NodeId};
    use crate::model::{ModelConfig, Stack};
    use crate::numcore::Tensor;
    use rand::SeedableRng;

    fn model(hidden: usize) -> Model {
        let cfg = ModelConfig::new(4, 3, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Model::new(cfg, Tensor::uniform(&[4, 3], 0.5, &mut rng), 11).unwrap()
    }

    #[test]
    fn aggregate_cases() {
        let store = crate::numcore::ParamStore::new();
        let mut tape = Tape::new(&store);
        let mut g = HeteroGraph::empty(3);
        g.add_sentiment_edge(NodeId::Word(1), NodeId::Sentiment(Polarity::Pos), 0.9)
            .unwrap();
        g.add_sentiment_edge(NodeId::Word(2), NodeId::Sentiment(Polarity::Pos), 0.9)
            .unwrap();
        let adj = adjacency_vars(&mut tape, &g);
        let h = tape.constant(
            Tensor::from_rows(&[
                vec![1.0, 2.0],
                vec![3.0, 6.0],
                vec![5.0, 5.0],
                vec![7.0, 7.0],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
            ])
            .unwrap(),
        );
        let k = tape.constant(Tensor::vector(vec![0.5, -0.5]));
        let a = neighbor_aggregate(&mut tape, adj[EdgeType::Sentiment.index()], h, k).unwrap();
        let v = tape.value(a);
        // isolated word 3 -> k
        assert_eq!(v.row(2), &[0.5, -0.5]);
        // word 1 has the single neighbour POS (row 3)
        assert_eq!(v.row(0), &[7.5, 6.5]);
        // POS has neighbours w1, w2
        assert_eq!(v.row(3), &[2.0 + 0.5, 4.0 - 0.5]);
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let mut m = model(5);
        m.zero_weights();
        let mut g = HeteroGraph::empty(3);
        g.add_sentiment_edge(NodeId::Word(2), NodeId::Sentiment(Polarity::Neg), 0.8)
            .unwrap();
        let mut tape = Tape::new(&m.store);
        let adj = adjacency_vars(&mut tape, &g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Tensor::uniform(&[6, 5], 1.0, &mut rng));
        let h0 = Tensor::uniform(&[6, 5], 1.0, &mut rng);
        let h = tape.constant(h0.clone());
        let out = hggnn_cell(&mut tape, &m.ae[0], x, h, &adj).unwrap();
        let expected: Vec<f64> = h0.data().iter().map(|v| 0.5 * v).collect();
        assert_eq!(tape.value(out).data(), expected.as_slice());

        let one = run_stack(&mut tape, &m.ae[..1], x, h, &adj, None).unwrap();
        assert_eq!(tape.value(one).data(), expected.as_slice());
        let none = run_stack(&mut tape, &[], x, h, &adj, None).unwrap();
        assert_eq!(none, h);
    }

    #[test]
    fn closed_gate_passes_state_through() {
        let mut m = model(4);
        // saturate the update gate shut through its recurrent matrix
        let layer = m.shared[0];
        m.store.value_mut(layer.gru.uz).fill(0.0);
        for ty in EdgeType::ALL {
            m.store.value_mut(layer.relations[ty.index()].wz).fill(0.0);
        }
        m.store.value_mut(layer.gru.vz).fill(-1000.0);
        let g = crate::graph::init_graph(
            &crate::corpus::parse_str("1\ta\t2\td\tO\tNONE\n2\tb\t0\tr\tO\tNONE\n", "x")
                .unwrap()
                .sentences[0],
            1,
        );
        let mut tape = Tape::new(&m.store);
        let adj = adjacency_vars(&mut tape, &g);
        let x = tape.constant(Tensor::full(&[5, 4], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h0 = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let h = tape.constant(h0.clone());
        let out = hggnn_cell(&mut tape, &layer, x, h, &adj).unwrap();
        assert_eq!(tape.value(out), &h0);
    }

    #[test]
    fn empty_graph_is_a_plain_gru() {
        let mut m = model(3);
        let layer = m.as_[1];
        m.store.value_mut(layer.k).fill(0.0);
        let g = HeteroGraph::empty(2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = Tensor::uniform(&[5, 3], 1.0, &mut rng);
        let h0 = Tensor::uniform(&[5, 3], 1.0, &mut rng);

        let mut tape = Tape::new(&m.store);
        let adj = adjacency_vars(&mut tape, &g);
        let x = tape.constant(x0.clone());
        let h = tape.constant(h0.clone());
        let out = hggnn_cell(&mut tape, &layer, x, h, &adj).unwrap();

        // reference GRU on plain arrays
        let mm = |a: &Tensor, w: &Tensor| -> Vec<f64> {
            let (n, k) = a.dims2();
            let m = w.cols();
            let mut o = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    o[i * m + j] = (0..k).map(|p| a.get(i, p) * w.get(p, j)).sum();
                }
            }
            o
        };
        let s = &m.store;
        let g_ = &layer.gru;
        let sig = crate::numcore::tensor::sigmoid;
        let zx = mm(&x0, s.value(g_.vz));
        let zh = mm(&h0, s.value(g_.uz));
        let rx = mm(&x0, s.value(g_.vr));
        let rh = mm(&h0, s.value(g_.ur));
        let z: Vec<f64> = zx.iter().zip(&zh).map(|(a, b)| sig(a + b)).collect();
        let r: Vec<f64> = rx.iter().zip(&rh).map(|(a, b)| sig(a + b)).collect();
        let rh0 = Tensor::new(vec![5, 3], r.iter().zip(h0.data()).map(|(a, b)| a * b).collect()).unwrap();
        let cx = mm(&x0, s.value(g_.vh));
        let ch = mm(&rh0, s.value(g_.uh));
        let expected: Vec<f64> = (0..15)
            .map(|i| {
                let c = (cx[i] + ch[i]).tanh();
                (1.0 - z[i]) * h0.data()[i] + z[i] * c
            })
            .collect();
        for (a, b) in tape.value(out).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn node_inputs_layout() {
        let m = model(4);
        let mut tape = Tape::new(&m.store);
        let x = node_inputs(&mut tape, &m, &[0, 2]).unwrap();
        assert_eq!(tape.value(x).shape(), &[5, 4]);
        assert_eq!(tape.value(x).row(2), m.store.value(m.senti).row(0));
        assert_eq!(m.stack(Stack::Shared).len(), 3);
    }
}
