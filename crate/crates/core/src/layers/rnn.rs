use crate::error::{Error, Result};
use crate::layers::{glorot_uniform_balanced, orthogonal, Activation};
use crate::tensor::Tensor;
use rand_chacha::ChaCha20Rng;

/// Simple recurrent layer: `h_t = act(x_t Wx + h_{t-1} Wh + b)`, many-to-one.
#[derive(Debug, Clone)]
pub struct RecurrentParams {
    /// Input weights, `[in, units]`.
    pub wx: Tensor,
    /// Recurrent weights, `[units, units]`.
    pub wh: Tensor,
    /// Bias, `[units]`.
    pub b: Tensor,
    pub activation: Activation,
}

impl RecurrentParams {
    pub fn new(wx: Tensor, wh: Tensor, b: Tensor, activation: Activation) -> Result<Self> {
        let units = wx.shape().get(1).copied().unwrap_or(0);
        if wx.rank() != 2
            || wh.rank() != 2
            || b.rank() != 1
            || wh.shape() != [units, units]
            || b.shape() != [units]
            || units == 0
        {
            return Err(Error::Shape(format!(
                "recurrent params: wx {:?}, wh {:?}, b {:?}",
                wx.shape(),
                wh.shape(),
                b.shape()
            )));
        }
        Ok(RecurrentParams {
            wx,
            wh,
            b,
            activation,
        })
    }

    pub fn init(in_dim: usize, units: usize, activation: Activation, rng: &mut ChaCha20Rng) -> Self {
        RecurrentParams {
            wx: glorot_uniform_balanced(rng, [in_dim, units], in_dim, units),
            wh: orthogonal(rng, units),
            b: Tensor::zeros(&[units]),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.wx.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.wx.shape()[1]
    }
}

/// Per-timestep values saved for backpropagation through time.
#[derive(Debug, Clone)]
pub struct RnnCache {
    /// Input sequence, `[batch, T, in]`.
    seq: Tensor,
    /// Pre-activations per step, each `[batch, units]`.
    zs: Vec<Tensor>,
    /// Hidden states `h_0..h_T`, each `[batch, units]`; `hs[0]` is zero.
    hs: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct RnnGrads {
    pub dseq: Tensor,
    pub dwx: Tensor,
    pub dwh: Tensor,
    pub db: Tensor,
}

/// Runs the recurrence over the whole sequence and returns the final hidden
/// state `h_T` with `h_0 = 0`.
pub fn rnn_forward(seq: &Tensor, p: &RecurrentParams) -> Result<(Tensor, RnnCache)> {
    if seq.rank() != 3 || seq.shape()[2] != p.in_dim() {
        return Err(Error::Shape(format!(
            "rnn_forward: sequence {:?} vs wx {:?}",
            seq.shape(),
            p.wx.shape()
        )));
    }
    let (batch, steps) = (seq.shape()[0], seq.shape()[1]);
    if steps == 0 {
        return Err(Error::Domain("rnn_forward: empty sequence".into()));
    }
    let mut hs = Vec::with_capacity(steps + 1);
    let mut zs = Vec::with_capacity(steps);
    hs.push(Tensor::zeros(&[batch, p.units()]));
    for t in 0..steps {
        let x_t = seq.time_slice(t)?;
        let z = x_t
            .matmul(&p.wx)?
            .add(&hs[t].matmul(&p.wh)?)?
            .add_row(&p.b)?;
        let h = z.map(|v| p.activation.apply(v));
        zs.push(z);
        hs.push(h);
    }
    let h_final = hs[steps].clone();
    h_final.ensure_finite("rnn_forward output")?;
    Ok((
        h_final,
        RnnCache {
            seq: seq.clone(),
            zs,
            hs,
        },
    ))
}

/// BPTT over the cached recurrence. `dh` is the gradient with respect to the
/// final hidden state only.
pub fn rnn_backward(dh: &Tensor, p: &RecurrentParams, cache: &RnnCache) -> Result<RnnGrads> {
    let steps = cache.zs.len();
    if steps == 0 || cache.seq.shape()[2] != p.in_dim() || cache.hs.len() != steps + 1 {
        return Err(Error::Contract(
            "rnn_backward: cache does not match parameters".into(),
        ));
    }
    if dh.shape() != cache.hs[steps].shape() {
        return Err(Error::Contract(format!(
            "rnn_backward: upstream gradient {:?} vs final state {:?}",
            dh.shape(),
            cache.hs[steps].shape()
        )));
    }
    let mut dseq = Tensor::zeros(cache.seq.shape());
    let mut dwx = Tensor::zeros(p.wx.shape());
    let mut dwh = Tensor::zeros(p.wh.shape());
    let mut db = Tensor::zeros(p.b.shape());
    let wx_t = p.wx.transpose()?;
    let wh_t = p.wh.transpose()?;

    let mut dh_cur = dh.clone();
    for t in (0..steps).rev() {
        let dz = dh_cur.zip(&cache.zs[t], |g, z| g * p.activation.grad(z))?;
        let x_t = cache.seq.time_slice(t)?;
        dwx = dwx.add(&x_t.transpose()?.matmul(&dz)?)?;
        dwh = dwh.add(&cache.hs[t].transpose()?.matmul(&dz)?)?;
        db = db.add(&dz.col_sum()?)?;
        let dx_t = dz.matmul(&wx_t)?;
        let (batch, in_dim) = (dx_t.shape()[0], dx_t.shape()[1]);
        for i in 0..batch {
            for c in 0..in_dim {
                dseq.set3(i, t, c, dx_t.at2(i, c));
            }
        }
        dh_cur = dz.matmul(&wh_t)?;
    }
    Ok(RnnGrads {
        dseq,
        dwx,
        dwh,
        db,
    })
}
