//! Recurrent cells and dense layers built on [`crate::tensor`].
//!
//! Parameter handles (`*Params`) only hold ids into a [`ParamStore`]; the
//! forward functions record onto a [`Graph`] borrowed from that store.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// `U(-1/√fan_in, 1/√fan_in)`
fn init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

fn check_input(g: &Graph<'_>, x: Var, dim: usize, op: &'static str) -> Result<()> {
    if g.shape(x) != [dim] {
        return Err(Error::shape(op, g.shape(x), &[dim]));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init(&[out_dim, in_dim], in_dim, rng));
        let bias = store.add(format!("{name}.bias"), init(&[out_dim], in_dim, rng));
        LinearParams {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }
}

/// `W·x + b`
pub fn linear(g: &mut Graph<'_>, x: Var, p: &LinearParams) -> Result<Var> {
    check_input(g, x, p.in_dim, "linear")?;
    let w = g.param(p.weight);
    let b = g.param(p.bias);
    let wx = g.matmul(w, x)?;
    g.add(wx, b)
}

/// Gate weights of a GRU cell. Input weights are `[h×d]`, recurrent
/// weights `[h×h]`; the candidate has separate input and hidden biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub w_r: ParamId,
    pub w_z: ParamId,
    pub w_n: ParamId,
    pub u_r: ParamId,
    pub u_z: ParamId,
    pub u_n: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_in: ParamId,
    pub b_hn: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let (d, h) = (input_dim, hidden_dim);
        let mut add = |suffix: &str, shape: &[usize], fan_in: usize| {
            store.add(format!("{name}.{suffix}"), init(shape, fan_in, rng))
        };
        GruParams {
            w_r: add("w_r", &[h, d], d),
            w_z: add("w_z", &[h, d], d),
            w_n: add("w_n", &[h, d], d),
            u_r: add("u_r", &[h, h], h),
            u_z: add("u_z", &[h, h], h),
            u_n: add("u_n", &[h, h], h),
            b_r: add("b_r", &[h], h),
            b_z: add("b_z", &[h], h),
            b_in: add("b_in", &[h], h),
            b_hn: add("b_hn", &[h], h),
            input_dim,
            hidden_dim,
        }
    }
}

/// Pre-activation `W x + U h + b`.
fn gate(g: &mut Graph<'_>, w: ParamId, x: Var, u: ParamId, h: Var, b: ParamId) -> Result<Var> {
    let (w, u, b) = (g.param(w), g.param(u), g.param(b));
    let wx = g.matmul(w, x)?;
    let uh = g.matmul(u, h)?;
    let s = g.add(wx, uh)?;
    g.add(s, b)
}

/// One GRU step:
///
/// ```text
/// r  = σ(W_r x + U_r h + b_r)
/// z  = σ(W_z x + U_z h + b_z)
/// n  = tanh(W_n x + b_in + r ⊙ (U_n h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_cell(g: &mut Graph<'_>, x: Var, h: Var, p: &GruParams) -> Result<Var> {
    check_input(g, x, p.input_dim, "gru_cell input")?;
    check_input(g, h, p.hidden_dim, "gru_cell hidden")?;
    let r = gate(g, p.w_r, x, p.u_r, h, p.b_r)?;
    let r = g.sigmoid(r);
    let z = gate(g, p.w_z, x, p.u_z, h, p.b_z)?;
    let z = g.sigmoid(z);

    let (w_n, u_n, b_in, b_hn) = (g.param(p.w_n), g.param(p.u_n), g.param(p.b_in), g.param(p.b_hn));
    let wx = g.matmul(w_n, x)?;
    let wx = g.add(wx, b_in)?;
    let uh = g.matmul(u_n, h)?;
    let uh = g.add(uh, b_hn)?;
    let reset = g.mul(r, uh)?;
    let n = g.add(wx, reset)?;
    let n = g.tanh(n);

    let keep_new = g.affine(z, -1.0, 1.0);
    let a = g.mul(keep_new, n)?;
    let b = g.mul(z, h)?;
    g.add(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmParams {
    pub w_i: ParamId,
    pub w_f: ParamId,
    pub w_g: ParamId,
    pub w_o: ParamId,
    pub u_i: ParamId,
    pub u_f: ParamId,
    pub u_g: ParamId,
    pub u_o: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_g: ParamId,
    pub b_o: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let (d, h) = (input_dim, hidden_dim);
        let mut add = |suffix: &str, shape: &[usize], fan_in: usize| {
            store.add(format!("{name}.{suffix}"), init(shape, fan_in, rng))
        };
        LstmParams {
            w_i: add("w_i", &[h, d], d),
            w_f: add("w_f", &[h, d], d),
            w_g: add("w_g", &[h, d], d),
            w_o: add("w_o", &[h, d], d),
            u_i: add("u_i", &[h, h], h),
            u_f: add("u_f", &[h, h], h),
            u_g: add("u_g", &[h, h], h),
            u_o: add("u_o", &[h, h], h),
            b_i: add("b_i", &[h], h),
            b_f: add("b_f", &[h], h),
            b_g: add("b_g", &[h], h),
            b_o: add("b_o", &[h], h),
            input_dim,
            hidden_dim,
        }
    }
}

/// One LSTM step:
///
/// ```text
/// i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
/// g = tanh(W_g x + U_g h + b_g) o = σ(W_o x + U_o h + b_o)
/// c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
/// ```
pub fn lstm_cell(g: &mut Graph<'_>, x: Var, h: Var, c: Var, p: &LstmParams) -> Result<(Var, Var)> {
    check_input(g, x, p.input_dim, "lstm_cell input")?;
    check_input(g, h, p.hidden_dim, "lstm_cell hidden")?;
    check_input(g, c, p.hidden_dim, "lstm_cell cell")?;
    let i = gate(g, p.w_i, x, p.u_i, h, p.b_i)?;
    let i = g.sigmoid(i);
    let f = gate(g, p.w_f, x, p.u_f, h, p.b_f)?;
    let f = g.sigmoid(f);
    let cand = gate(g, p.w_g, x, p.u_g, h, p.b_g)?;
    let cand = g.tanh(cand);
    let o = gate(g, p.w_o, x, p.u_o, h, p.b_o)?;
    let o = g.sigmoid(o);

    let kept = g.mul(f, c)?;
    let written = g.mul(i, cand)?;
    let c_next = g.add(kept, written)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Runs one LSTM over `seq` from zero state and returns the last hidden
/// state.
pub fn lstm_last_hidden(g: &mut Graph<'_>, seq: &[Var], p: &LstmParams) -> Result<Var> {
    let mut h = g.zeros(&[p.hidden_dim]);
    let mut c = g.zeros(&[p.hidden_dim]);
    for &x in seq {
        (h, c) = lstm_cell(g, x, h, c, p)?;
    }
    Ok(h)
}

/// Concatenation of the forward LSTM's last hidden state and the backward
/// LSTM's last hidden state (the backward LSTM reads `seq` reversed).
pub fn bilstm_encode(g: &mut Graph<'_>, seq: &[Var], fwd: &LstmParams, bwd: &LstmParams) -> Result<Var> {
    if seq.is_empty() {
        return Err(Error::EmptyInput);
    }
    let forward = lstm_last_hidden(g, seq, fwd)?;
    let reversed: Vec<Var> = seq.iter().rev().copied().collect();
    let backward = lstm_last_hidden(g, &reversed, bwd)?;
    g.concat(&[forward, backward], 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }

    fn fill(store: &mut ParamStore, id: ParamId, v: f64) {
        store.get_mut(id).data_mut().fill(v);
    }

    #[test]
    fn gru_zero_params_halve_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let p = GruParams::new(&mut store, "gru", 3, 2, &mut rng);
        zero_all(&mut store);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![0.4, -1.0, 2.0]));
        let h = g.constant(Tensor::vector(vec![1.0, 0.0]));
        let out = gru_cell(&mut g, x, h, &p).unwrap();
        assert_eq!(g.value(out), &[0.5, 0.0]);

        let h0 = g.zeros(&[2]);
        let out = gru_cell(&mut g, x, h0, &p).unwrap();
        assert_eq!(g.value(out), &[0.0, 0.0]);
    }

    #[test]
    fn gru_saturated_update_gate_carries_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let p = GruParams::new(&mut store, "gru", 4, 3, &mut rng);
        fill(&mut store, p.w_z, 0.0);
        fill(&mut store, p.u_z, 0.0);
        fill(&mut store, p.b_z, 40.0);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![0.3, 0.1, -0.2, 0.9]));
        let h = g.constant(Tensor::vector(vec![0.5, -0.25, 0.75]));
        let out = gru_cell(&mut g, x, h, &p).unwrap();
        for (a, b) in g.value(out).iter().zip([0.5, -0.25, 0.75]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gru_rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let p = GruParams::new(&mut store, "gru", 4, 3, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.zeros(&[5]);
        let h = g.zeros(&[3]);
        assert!(matches!(gru_cell(&mut g, x, h, &p), Err(Error::Shape { .. })));
    }

    #[test]
    fn gru_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let p = GruParams::new(&mut store, "gru", 4, 3, &mut rng);
        let x = store.add("x", Tensor::uniform(&[4], 1.0, &mut rng));
        let h = store.add("h", Tensor::uniform(&[3], 1.0, &mut rng));
        let report = grad_check(&store, 1e-5, |g| {
            let (xv, hv) = (g.param(x), g.param(h));
            let out = gru_cell(g, xv, hv, &p)?;
            g.cross_entropy(out, 1)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn lstm_zero_params_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let p = LstmParams::new(&mut store, "lstm", 3, 2, &mut rng);
        zero_all(&mut store);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let (h, c) = (g.zeros(&[2]), g.zeros(&[2]));
        let (h2, c2) = lstm_cell(&mut g, x, h, c, &p).unwrap();
        assert_eq!(g.value(h2), &[0.0, 0.0]);
        assert_eq!(g.value(c2), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_saturated_forget_gate_accumulates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let p = LstmParams::new(&mut store, "lstm", 3, 2, &mut rng);
        fill(&mut store, p.w_f, 0.0);
        fill(&mut store, p.u_f, 0.0);
        fill(&mut store, p.b_f, 20.0);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![0.2, -0.4, 0.6]));
        let h = g.constant(Tensor::vector(vec![0.1, -0.3]));
        let c = g.constant(Tensor::vector(vec![0.7, -0.2]));
        let (_, c2) = lstm_cell(&mut g, x, h, c, &p).unwrap();

        // i ⊙ g computed by hand from the stored weights
        let mv = |w: ParamId, u: ParamId, b: ParamId, row: usize| {
            let (w, u, b) = (store.get(w), store.get(u), store.get(b));
            let xs = [0.2, -0.4, 0.6];
            let hs = [0.1, -0.3];
            let mut s = b.data()[row];
            for (j, x) in xs.iter().enumerate() {
                s += w.data()[row * 3 + j] * x;
            }
            for (j, h) in hs.iter().enumerate() {
                s += u.data()[row * 2 + j] * h;
            }
            s
        };
        for (row, c_prev) in [0.7, -0.2].into_iter().enumerate() {
            let i = 1.0 / (1.0 + (-mv(p.w_i, p.u_i, p.b_i, row)).exp());
            let gg = mv(p.w_g, p.u_g, p.b_g, row).tanh();
            assert!((g.value(c2)[row] - (c_prev + i * gg)).abs() < 1e-6);
        }
    }

    #[test]
    fn lstm_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let p = LstmParams::new(&mut store, "lstm", 4, 3, &mut rng);
        let x = store.add("x", Tensor::uniform(&[4], 1.0, &mut rng));
        let h = store.add("h", Tensor::uniform(&[3], 1.0, &mut rng));
        let c = store.add("c", Tensor::uniform(&[3], 1.0, &mut rng));
        let report = grad_check(&store, 1e-5, |g| {
            let (xv, hv, cv) = (g.param(x), g.param(h), g.param(c));
            let (h2, c2) = lstm_cell(g, xv, hv, cv, &p)?;
            let both = g.concat(&[h2, c2], 0)?;
            g.cross_entropy(both, 4)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    fn bilstm_fixture() -> (ParamStore, LstmParams, LstmParams, Vec<ParamId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let fwd = LstmParams::new(&mut store, "fwd", 3, 2, &mut rng);
        let bwd = LstmParams::new(&mut store, "bwd", 3, 2, &mut rng);
        let xs = (0..4)
            .map(|i| store.add(format!("x{i}"), Tensor::uniform(&[3], 1.0, &mut rng)))
            .collect();
        (store, fwd, bwd, xs)
    }

    #[test]
    fn bilstm_matches_two_unidirectional_runs() {
        let (store, fwd, bwd, xs) = bilstm_fixture();
        let mut g = Graph::new(&store);
        let seq: Vec<Var> = xs.iter().map(|&x| g.param(x)).collect();
        let out = bilstm_encode(&mut g, &seq, &fwd, &bwd).unwrap();

        // Oracle: run each direction by hand with explicit loops.
        let mut o = Graph::new(&store);
        let seq2: Vec<Var> = xs.iter().map(|&x| o.param(x)).collect();
        let mut h = o.zeros(&[2]);
        let mut c = o.zeros(&[2]);
        for &x in &seq2 {
            (h, c) = lstm_cell(&mut o, x, h, c, &fwd).unwrap();
        }
        let fwd_h = o.value(h).to_vec();
        let mut h = o.zeros(&[2]);
        let mut c = o.zeros(&[2]);
        for &x in seq2.iter().rev() {
            (h, c) = lstm_cell(&mut o, x, h, c, &bwd).unwrap();
        }
        let mut expected = fwd_h;
        expected.extend_from_slice(o.value(h));
        assert_eq!(g.value(out), expected.as_slice());
    }

    #[test]
    fn bilstm_single_step_and_empty() {
        let (store, fwd, bwd, xs) = bilstm_fixture();
        let mut g = Graph::new(&store);
        let x = g.param(xs[0]);
        let out = bilstm_encode(&mut g, &[x], &fwd, &bwd).unwrap();
        let z = g.zeros(&[2]);
        let (hf, _) = lstm_cell(&mut g, x, z, z, &fwd).unwrap();
        let (hb, _) = lstm_cell(&mut g, x, z, z, &bwd).unwrap();
        let mut expected = g.value(hf).to_vec();
        expected.extend_from_slice(g.value(hb));
        assert_eq!(g.value(out), expected.as_slice());
        assert!(matches!(bilstm_encode(&mut g, &[], &fwd, &bwd), Err(Error::EmptyInput)));
    }

    #[test]
    fn bilstm_gradient_check() {
        let (store, fwd, bwd, xs) = bilstm_fixture();
        let report = grad_check(&store, 1e-5, |g| {
            let seq: Vec<Var> = xs.iter().map(|&x| g.param(x)).collect();
            let out = bilstm_encode(g, &seq, &fwd, &bwd)?;
            g.cross_entropy(out, 2)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let p = LinearParams::new(&mut store, "fc", 3, 3, &mut rng);
        store.assign(p.weight, Tensor::identity(3)).unwrap();
        fill(&mut store, p.bias, 0.0);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let y = linear(&mut g, x, &p).unwrap();
        assert_eq!(g.value(y), &[1.0, -2.0, 0.5]);
        drop(g);

        fill(&mut store, p.weight, 0.0);
        store.assign(p.bias, Tensor::vector(vec![0.1, 0.2, 0.3])).unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![9.0, 9.0, 9.0]));
        let y = linear(&mut g, x, &p).unwrap();
        assert_eq!(g.value(y), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn linear_cross_entropy_gradient_check() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
            let mut store = ParamStore::new();
            let p = LinearParams::new(&mut store, "fc", 6, 4, &mut rng);
            let x = Tensor::uniform(&[6], 1.0, &mut rng);
            let report = grad_check(&store, 1e-5, |g| {
                let xv = g.constant(x.clone());
                let y = linear(g, xv, &p)?;
                g.cross_entropy(y, 2)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn cells_are_pure() {
        let (store, fwd, bwd, xs) = bilstm_fixture();
        let run = || {
            let mut g = Graph::new(&store);
            let seq: Vec<Var> = xs.iter().map(|&x| g.param(x)).collect();
            let out = bilstm_encode(&mut g, &seq, &fwd, &bwd).unwrap();
            g.value(out).to_vec()
        };
        assert_eq!(run(), run());
    }
}
