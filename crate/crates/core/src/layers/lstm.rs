use crate::error::{Error, Result};
use crate::layers::{glorot_uniform_balanced, orthogonal, sigmoid, Activation};
use crate::tensor::Tensor;
use rand_chacha::ChaCha20Rng;

/// One gate's affine weights.
#[derive(Debug, Clone)]
pub struct GateParams {
    /// `[in, units]`
    pub wx: Tensor,
    /// `[units, units]`
    pub wh: Tensor,
    /// `[units]`
    pub b: Tensor,
}

impl GateParams {
    fn init(in_dim: usize, units: usize, bias: f64, rng: &mut ChaCha20Rng) -> Self {
        GateParams {
            wx: glorot_uniform_balanced(rng, [in_dim, units], in_dim, units),
            wh: orthogonal(rng, units),
            b: Tensor::from_vec(vec![bias; units]),
        }
    }

    fn affine(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        x.matmul(&self.wx)?.add(&h.matmul(&self.wh)?)?.add_row(&self.b)
    }
}

/// Gated recurrence with input/forget/output gates and a candidate block.
///
/// Gate activations are sigmoid; the candidate and the cell output run
/// through `cell_activation`.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub output_gate: GateParams,
    pub candidate: GateParams,
    pub cell_activation: Activation,
}

impl LstmParams {
    pub fn init(
        in_dim: usize,
        units: usize,
        cell_activation: Activation,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        // Gate order is fixed: input, forget, output, candidate. The forget
        // gate starts biased open so early training can carry cell state
        // across the window.
        LstmParams {
            input_gate: GateParams::init(in_dim, units, 0.0, rng),
            forget_gate: GateParams::init(in_dim, units, 1.0, rng),
            output_gate: GateParams::init(in_dim, units, 0.0, rng),
            candidate: GateParams::init(in_dim, units, 0.0, rng),
            cell_activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.input_gate.wx.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.input_gate.wx.shape()[1]
    }

    pub fn gates(&self) -> [&GateParams; 4] {
        [
            &self.input_gate,
            &self.forget_gate,
            &self.output_gate,
            &self.candidate,
        ]
    }

    fn shapes_consistent(&self) -> bool {
        let (d, u) = (self.in_dim(), self.units());
        self.gates().iter().all(|g| {
            g.wx.shape() == [d, u] && g.wh.shape() == [u, u] && g.b.shape() == [u]
        })
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    /// Gate values after sigmoid: input, forget, output.
    i: Tensor,
    f: Tensor,
    o: Tensor,
    /// Candidate pre-activation and value.
    g_pre: Tensor,
    g: Tensor,
}

/// Sequences saved by [`lstm_forward`] for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    seq: Tensor,
    steps: Vec<StepCache>,
    /// `h_0..h_T`, index 0 is the zero initial state.
    hs: Vec<Tensor>,
    /// `c_0..c_T`, index 0 is the zero initial state.
    cs: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct GateGrads {
    pub dwx: Tensor,
    pub dwh: Tensor,
    pub db: Tensor,
}

/// Gradients in gate order input, forget, output, candidate.
#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub dseq: Tensor,
    pub gates: [GateGrads; 4],
}

/// Runs the gated recurrence and returns the final hidden state `h_T` with
/// `h_0 = c_0 = 0`.
pub fn lstm_forward(seq: &Tensor, p: &LstmParams) -> Result<(Tensor, LstmCache)> {
    if seq.rank() != 3 || seq.shape()[2] != p.in_dim() || !p.shapes_consistent() {
        return Err(Error::Shape(format!(
            "lstm_forward: sequence {:?} vs gate weights {:?}",
            seq.shape(),
            p.input_gate.wx.shape()
        )));
    }
    let (batch, steps) = (seq.shape()[0], seq.shape()[1]);
    if steps == 0 {
        return Err(Error::Domain("lstm_forward: empty sequence".into()));
    }
    let units = p.units();
    let mut hs = vec![Tensor::zeros(&[batch, units])];
    let mut cs = vec![Tensor::zeros(&[batch, units])];
    let mut step_caches = Vec::with_capacity(steps);
    let act = p.cell_activation;

    for t in 0..steps {
        let x_t = seq.time_slice(t)?;
        let h_prev = &hs[t];
        let i = p.input_gate.affine(&x_t, h_prev)?.map(sigmoid);
        let f = p.forget_gate.affine(&x_t, h_prev)?.map(sigmoid);
        let o = p.output_gate.affine(&x_t, h_prev)?.map(sigmoid);
        let g_pre = p.candidate.affine(&x_t, h_prev)?;
        let g = g_pre.map(|v| act.apply(v));

        let c = f.mul(&cs[t])?.add(&i.mul(&g)?)?;
        let h = o.mul(&c.map(|v| act.apply(v)))?;
        hs.push(h);
        cs.push(c);
        step_caches.push(StepCache { i, f, o, g_pre, g });
    }
    let h_final = hs[steps].clone();
    h_final.ensure_finite("lstm_forward output")?;
    Ok((
        h_final,
        LstmCache {
            seq: seq.clone(),
            steps: step_caches,
            hs,
            cs,
        },
    ))
}

/// BPTT over the gated recurrence. `dh` is the gradient with respect to the
/// final hidden state only.
pub fn lstm_backward(dh: &Tensor, p: &LstmParams, cache: &LstmCache) -> Result<LstmGrads> {
    let steps = cache.steps.len();
    if steps == 0 || cache.seq.shape()[2] != p.in_dim() || cache.hs.len() != steps + 1 {
        return Err(Error::Contract(
            "lstm_backward: cache does not match parameters".into(),
        ));
    }
    if dh.shape() != cache.hs[steps].shape() {
        return Err(Error::Contract(format!(
            "lstm_backward: upstream gradient {:?} vs final state {:?}",
            dh.shape(),
            cache.hs[steps].shape()
        )));
    }
    let act = p.cell_activation;
    let mut grads: Vec<GateGrads> = p
        .gates()
        .iter()
        .map(|g| GateGrads {
            dwx: Tensor::zeros(g.wx.shape()),
            dwh: Tensor::zeros(g.wh.shape()),
            db: Tensor::zeros(g.b.shape()),
        })
        .collect();
    let mut dseq = Tensor::zeros(cache.seq.shape());

    let mut dh_cur = dh.clone();
    let mut dc_cur = Tensor::zeros(dh.shape());
    for t in (0..steps).rev() {
        let step = &cache.steps[t];
        let c_t = &cache.cs[t + 1];
        let c_prev = &cache.cs[t];
        let h_prev = &cache.hs[t];
        let x_t = cache.seq.time_slice(t)?;

        // h_t = o * act(c_t)
        let act_c = c_t.map(|v| act.apply(v));
        let do_gate = dh_cur.mul(&act_c)?;
        let dc_from_h = dh_cur.mul(&step.o)?.zip(c_t, |g, c| g * act.grad(c))?;
        let dc = dc_cur.add(&dc_from_h)?;

        // c_t = f * c_prev + i * g
        let di = dc.mul(&step.g)?;
        let df = dc.mul(c_prev)?;
        let dg = dc.mul(&step.i)?;

        // Pre-activation gradients: sigmoid gates from their outputs, the
        // candidate from its cached pre-activation.
        let dz_i = di.zip(&step.i, |g, a| g * a * (1.0 - a))?;
        let dz_f = df.zip(&step.f, |g, a| g * a * (1.0 - a))?;
        let dz_o = do_gate.zip(&step.o, |g, a| g * a * (1.0 - a))?;
        let dz_g = dg.zip(&step.g_pre, |g, z| g * act.grad(z))?;

        let x_t_t = x_t.transpose()?;
        let h_prev_t = h_prev.transpose()?;
        let mut dx_t = Tensor::zeros(x_t.shape());
        let mut dh_prev = Tensor::zeros(dh_cur.shape());
        for (k, dz) in [&dz_i, &dz_f, &dz_o, &dz_g].into_iter().enumerate() {
            let gate = p.gates()[k];
            grads[k].dwx = grads[k].dwx.add(&x_t_t.matmul(dz)?)?;
            grads[k].dwh = grads[k].dwh.add(&h_prev_t.matmul(dz)?)?;
            grads[k].db = grads[k].db.add(&dz.col_sum()?)?;
            dx_t = dx_t.add(&dz.matmul(&gate.wx.transpose()?)?)?;
            dh_prev = dh_prev.add(&dz.matmul(&gate.wh.transpose()?)?)?;
        }

        let (batch, in_dim) = (dx_t.shape()[0], dx_t.shape()[1]);
        for row in 0..batch {
            for ch in 0..in_dim {
                dseq.set3(row, t, ch, dx_t.at2(row, ch));
            }
        }
        dh_cur = dh_prev;
        dc_cur = dc.mul(&step.f)?;
    }

    let gates: [GateGrads; 4] = grads
        .try_into()
        .map_err(|_| Error::Contract("lstm_backward: gate count".into()))?;
    Ok(LstmGrads { dseq, gates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_seq(rng: &mut ChaCha20Rng, batch: usize, steps: usize, dim: usize) -> Tensor {
        Tensor::new(
            &[batch, steps, dim],
            (0..batch * steps * dim)
                .map(|_| rng.gen_range(-1.5..1.5))
                .collect(),
        )
        .unwrap()
    }

    fn zero_params(in_dim: usize, units: usize) -> LstmParams {
        let zg = || GateParams {
            wx: Tensor::zeros(&[in_dim, units]),
            wh: Tensor::zeros(&[units, units]),
            b: Tensor::zeros(&[units]),
        };
        LstmParams {
            input_gate: zg(),
            forget_gate: zg(),
            output_gate: zg(),
            candidate: zg(),
            cell_activation: Activation::Relu,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        // Gates settle at 0.5, the candidate at 0, so the cell never moves.
        let p = zero_params(2, 3);
        let seq = Tensor::new(&[1, 5, 2], vec![0.7; 10]).unwrap();
        let (h, cache) = lstm_forward(&seq, &p).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(cache.cs[5].data().iter().all(|&v| v == 0.0));
        assert!(cache.steps[0].i.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn saturated_forget_with_closed_input_keeps_cell_at_zero() {
        let mut p = zero_params(1, 2);
        // Large forget bias, very negative input-gate bias.
        p.forget_gate.b = Tensor::from_vec(vec![40.0, 40.0]);
        p.input_gate.b = Tensor::from_vec(vec![-40.0, -40.0]);
        let seq = Tensor::new(&[1, 6, 1], vec![1.0; 6]).unwrap();
        let (h, cache) = lstm_forward(&seq, &p).unwrap();
        for &c in cache.cs[6].data() {
            assert!(c.abs() < 1e-12);
        }
        assert!(h.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn forward_matches_per_timestep_scalar_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        for _ in 0..10 {
            let (batch, steps, din, units) = (
                rng.gen_range(1..=3),
                rng.gen_range(1..=5),
                rng.gen_range(1..=3),
                rng.gen_range(1..=4),
            );
            let p = LstmParams::init(din, units, Activation::Relu, &mut rng);
            let seq = random_seq(&mut rng, batch, steps, din);
            let (h, _) = lstm_forward(&seq, &p).unwrap();

            let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
            for row in 0..batch {
                let mut hm = vec![0.0; units];
                let mut cm = vec![0.0; units];
                for t in 0..steps {
                    let mut hn = vec![0.0; units];
                    let mut cn = vec![0.0; units];
                    for u in 0..units {
                        let affine = |g: &GateParams| {
                            let mut z = g.b.data()[u];
                            for ch in 0..din {
                                z += seq.at3(row, t, ch) * g.wx.at2(ch, u);
                            }
                            for v in 0..units {
                                z += hm[v] * g.wh.at2(v, u);
                            }
                            z
                        };
                        let i = sig(affine(&p.input_gate));
                        let f = sig(affine(&p.forget_gate));
                        let o = sig(affine(&p.output_gate));
                        let g = affine(&p.candidate).max(0.0);
                        cn[u] = f * cm[u] + i * g;
                        hn[u] = o * cn[u].max(0.0);
                    }
                    hm = hn;
                    cm = cn;
                }
                for u in 0..units {
                    assert!((h.at2(row, u) - hm[u]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn scalar_single_step_hand_derived_chain_rule() {
        // units = 1, T = 1, batch = 1: every quantity is a scalar, so the
        // whole chain rule can be written out longhand. Tanh keeps every
        // branch differentiable.
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for _ in 0..25 {
            let mut p = LstmParams::init(1, 1, Activation::Tanh, &mut rng);
            for gate in [
                &mut p.input_gate,
                &mut p.forget_gate,
                &mut p.output_gate,
                &mut p.candidate,
            ] {
                gate.b = Tensor::from_vec(vec![rng.gen_range(-0.5..0.5)]);
            }
            let x = rng.gen_range(-1.0..1.0f64);
            let seq = Tensor::new(&[1, 1, 1], vec![x]).unwrap();
            let (_, cache) = lstm_forward(&seq, &p).unwrap();
            let dh = Tensor::new(&[1, 1], vec![1.0]).unwrap();
            let g = lstm_backward(&dh, &p, &cache).unwrap();

            let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
            let zi = x * p.input_gate.wx.data()[0] + p.input_gate.b.data()[0];
            let zf = x * p.forget_gate.wx.data()[0] + p.forget_gate.b.data()[0];
            let zo = x * p.output_gate.wx.data()[0] + p.output_gate.b.data()[0];
            let zg = x * p.candidate.wx.data()[0] + p.candidate.b.data()[0];
            let (i, f, o, gv) = (sig(zi), sig(zf), sig(zo), zg.tanh());
            let c = i * gv; // c_prev = 0
            let _ = f;
            // h = o * tanh(c)
            let dh_dzo = c.tanh() * o * (1.0 - o);
            let dc = o * (1.0 - c.tanh() * c.tanh());
            let dh_dzi = dc * gv * i * (1.0 - i);
            let dh_dzg = dc * i * (1.0 - gv * gv);

            // d/db is the pre-activation gradient itself; d/dwx scales by x.
            assert!((g.gates[0].db.data()[0] - dh_dzi).abs() < 1e-10);
            assert!((g.gates[2].db.data()[0] - dh_dzo).abs() < 1e-10);
            assert!((g.gates[3].db.data()[0] - dh_dzg).abs() < 1e-10);
            assert!((g.gates[0].dwx.data()[0] - x * dh_dzi).abs() < 1e-10);
            assert!((g.gates[2].dwx.data()[0] - x * dh_dzo).abs() < 1e-10);
            assert!((g.gates[3].dwx.data()[0] - x * dh_dzg).abs() < 1e-10);
            // Forget gate sees c_prev = 0, so its gradient vanishes.
            assert!(g.gates[1].db.data()[0].abs() < 1e-15);
            // dseq collects all four gate paths.
            let dx = dh_dzi * p.input_gate.wx.data()[0]
                + dh_dzo * p.output_gate.wx.data()[0]
                + dh_dzg * p.candidate.wx.data()[0]
                + dc * 0.0 * p.forget_gate.wx.data()[0];
            assert!((g.dseq.data()[0] - dx).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let p = LstmParams::init(2, 3, Activation::Relu, &mut rng);
        let seq = random_seq(&mut rng, 2, 4, 2);
        let (h, cache) = lstm_forward(&seq, &p).unwrap();
        let g = lstm_backward(&h.map(|_| 0.0), &p, &cache).unwrap();
        assert!(g.dseq.data().iter().all(|&v| v == 0.0));
        for gate in &g.gates {
            assert!(gate.dwx.data().iter().all(|&v| v == 0.0));
            assert!(gate.dwh.data().iter().all(|&v| v == 0.0));
            assert!(gate.db.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_linear_in_upstream() {
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        let p = LstmParams::init(2, 3, Activation::Relu, &mut rng);
        let seq = random_seq(&mut rng, 2, 5, 2);
        let (h, cache) = lstm_forward(&seq, &p).unwrap();
        let dh = h.map(|_| rng.gen_range(-1.0..1.0));
        let g1 = lstm_backward(&dh, &p, &cache).unwrap();
        let g2 = lstm_backward(&dh.scale(4.0), &p, &cache).unwrap();
        for k in 0..4 {
            for (a, b) in g1.gates[k].dwx.data().iter().zip(g2.gates[k].dwx.data()) {
                assert!((4.0 * a - b).abs() <= 1e-12);
            }
        }
    }
}
