use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Activation, Graph, NodeId};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

/// Affine map `W·x + b` with `W` stored as `[out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.register_xavier(
            format!("{name}.weight"),
            &[out_dim, in_dim],
            in_dim,
            out_dim,
            rng,
        )?;
        let bias = if with_bias {
            Some(store.register_zeros(format!("{name}.bias"), &[out_dim])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.affine(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Two affine layers with a hidden activation and an optional output activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
    pub hidden: Activation,
    pub output: Option<Activation>,
}

impl Mlp2 {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        hidden: Activation,
        output: Option<Activation>,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            first: Linear::new(store, &format!("{name}.0"), in_dim, hidden_dim, true, rng)?,
            second: Linear::new(store, &format!("{name}.1"), hidden_dim, out_dim, true, rng)?,
            hidden,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let h = self.first.forward(g, x)?;
        let h = g.activation(h, self.hidden)?;
        let y = self.second.forward(g, h)?;
        match self.output {
            Some(act) => g.activation(y, act),
            None => Ok(y),
        }
    }

    /// Applies the network to every row of `[n, in]` and returns the `[n]`
    /// vector of scalar outputs. Requires `out_dim == 1`.
    pub fn score_rows(&self, g: &mut Graph<'_>, rows: NodeId) -> Result<NodeId> {
        let y = self.forward(g, rows)?;
        let n = g.value(y).outer_len();
        g.reshape(y, vec![n])
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.first.params();
        p.extend(self.second.params());
        p
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub input_update: Linear,
    pub hidden_update: Linear,
    pub input_reset: Linear,
    pub hidden_reset: Linear,
    pub input_candidate: Linear,
    pub hidden_candidate: Linear,
    pub dim: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut lin = |suffix: &str, inp: usize, bias: bool| {
            Linear::new(store, &format!("{name}.{suffix}"), inp, dim, bias, rng)
        };
        Ok(Self {
            input_update: lin("w_z", input_dim, true)?,
            hidden_update: lin("u_z", dim, false)?,
            input_reset: lin("w_r", input_dim, true)?,
            hidden_reset: lin("u_r", dim, false)?,
            input_candidate: lin("w_n", input_dim, true)?,
            hidden_candidate: lin("u_n", dim, false)?,
            dim,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId, h: NodeId) -> Result<NodeId> {
        let zx = self.input_update.forward(g, x)?;
        let zh = self.hidden_update.forward(g, h)?;
        let z = g.add(zx, zh)?;
        let z = g.sigmoid(z)?;

        let rx = self.input_reset.forward(g, x)?;
        let rh = self.hidden_reset.forward(g, h)?;
        let r = g.add(rx, rh)?;
        let r = g.sigmoid(r)?;

        let gated = g.mul(r, h)?;
        let nx = self.input_candidate.forward(g, x)?;
        let nh = self.hidden_candidate.forward(g, gated)?;
        let n = g.add(nx, nh)?;
        let n = g.tanh(n)?;

        // n + z ⊙ (h − n)
        let diff = g.sub(h, n)?;
        let keep = g.mul(z, diff)?;
        g.add(n, keep)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [
            &self.input_update,
            &self.hidden_update,
            &self.input_reset,
            &self.hidden_reset,
            &self.input_candidate,
            &self.hidden_candidate,
        ]
        .iter()
        .flat_map(|l| l.params())
        .collect()
    }
}

/// Single-channel "same" convolution of `sequence` (`[T]`) with `kernels`
/// (`[F, K]`) and `bias` (`[F]`), returning `[F, T]`.
pub fn conv1d_single_channel(
    g: &mut Graph<'_>,
    sequence: NodeId,
    kernels: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    let t_len = g.value(sequence).len();
    let ks = g.value(kernels).shape().to_vec();
    if ks.len() != 2 {
        return Err(crate::Error::dim("conv1d_single_channel", &ks, &[0, 0]));
    }
    let column = g.reshape(sequence, vec![t_len, 1])?;
    let k3 = g.reshape(kernels, vec![1, ks[0], ks[1]])?;
    let b2 = g.reshape(bias, vec![1, ks[0]])?;
    let out = g.conv_per_channel(column, k3, b2)?;
    g.reshape(out, vec![ks[0], t_len])
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::Tensor;

    fn conv_values(seq: &[f64], kernel: &[f64], bias: f64) -> Vec<f64> {
        let mut g = Graph::detached();
        let s = g.constant(Tensor::vector(seq));
        let k = g.constant(Tensor::matrix(1, kernel.len(), kernel).unwrap());
        let b = g.constant(Tensor::vector(&[bias]));
        let y = conv1d_single_channel(&mut g, s, k, b).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn conv_examples() {
        assert_eq!(conv_values(&[4.0, 7.0, 9.0], &[0.0, 1.0, 0.0], 0.0), vec![4.0, 7.0, 9.0]);
        assert_eq!(conv_values(&[1.0, 0.0, 1.0], &[1.0, 1.0, 1.0], 0.0), vec![1.0, 2.0, 1.0]);
        assert_eq!(conv_values(&[3.0, -2.0, 8.0], &[0.0; 3], 5.0), vec![5.0, 5.0, 5.0]);
        assert_eq!(conv_values(&[2.0], &[0.3, 1.0, 0.7], 0.0), vec![2.0]);
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let mut g = Graph::detached();
        let s = g.constant(Tensor::vector(&[1.0, 2.0]));
        let k = g.constant(Tensor::matrix(1, 2, &[1.0, 1.0]).unwrap());
        let b = g.constant(Tensor::vector(&[0.0]));
        assert!(conv1d_single_channel(&mut g, s, k, b).is_err());
    }

    fn zero_gru(dim: usize) -> (ParamStore, GruCell) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GruCell::new(&mut store, "gru", dim, dim, &mut rng).unwrap();
        for id in cell.params() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        (store, cell)
    }

    #[test]
    fn zero_gru_examples() {
        let (store, cell) = zero_gru(3);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(&[0.3, -1.0, 2.0]));
        let h0 = g.constant(Tensor::zeros(&[3]));
        let y = cell.forward(&mut g, x, h0).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
        let h = g.constant(Tensor::vector(&[1.0, -4.0, 0.5]));
        let y = cell.forward(&mut g, x, h).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -2.0, 0.25]);
    }

    #[test]
    fn mlp_output_activation() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp2::new(
            &mut store,
            "m",
            4,
            3,
            1,
            Activation::Relu,
            Some(Activation::Sigmoid),
            &mut rng,
        )
        .unwrap();
        for id in mlp.params() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(&[1.0, 2.0, 3.0, 4.0]));
        let y = mlp.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5]);
    }
}
