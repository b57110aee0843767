use rand::Rng;

use super::error::NnError;
use super::graph::{Graph, Var};
use super::param::{Init, ParamId, ParamStore};

/// Affine layer `W x + b` with `W` of shape `(fan_out, fan_in)`.
#[derive(Clone, Debug)]
pub struct Dense {
    name: String,
    weight: ParamId,
    bias: ParamId,
    fan_in: usize,
    fan_out: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_matrix(format!("{name}.weight"), fan_out, fan_in, init, rng);
        let bias = store.add(format!("{name}.bias"), vec![fan_out], vec![0.0; fan_out]);
        Self {
            name: name.to_string(),
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        self.apply(g, store, x, true)
    }

    /// Like [`Dense::forward`], but the layer's parameters receive no gradient.
    pub fn forward_frozen(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        self.apply(g, store, x, false)
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, train: bool) -> Result<Var, NnError> {
        let found = g.value(x).len();
        if found != self.fan_in {
            return Err(NnError::Dimension {
                context: format!("layer `{}`", self.name),
                expected: self.fan_in,
                found,
            });
        }
        let (w, b) = if train {
            (g.param(store, self.weight), g.param(store, self.bias))
        } else {
            (g.frozen_param(store, self.weight), g.frozen_param(store, self.bias))
        };
        let wx = g.matvec(w, x)?;
        g.add(wx, b)
    }
}

/// Multilayer perceptron: `tanh` on hidden layers, linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// `widths` lists every layer width including input and output,
    /// e.g. `[3, 4, 2]` is a 3→4→2 network.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{name}.{i}"), w[0], w[1], init, rng))
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        self.apply(g, store, x, true)
    }

    pub fn forward_frozen(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        self.apply(g, store, x, false)
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, train: bool) -> Result<Var, NnError> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(g, store, h, train)?;
            if i < last {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }
}

/// Elman recurrent cell: `h' = tanh(W_in x + W_rec h + b)`.
#[derive(Clone, Debug)]
pub struct RnnCell {
    name: String,
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
    input_size: usize,
    hidden_size: usize,
}

impl RnnCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let input = store.add_matrix(format!("{name}.input"), hidden_size, input_size, init, rng);
        let recurrent =
            store.add_matrix(format!("{name}.recurrent"), hidden_size, hidden_size, init, rng);
        let bias = store.add(format!("{name}.bias"), vec![hidden_size], vec![0.0; hidden_size]);
        Self {
            name: name.to_string(),
            input,
            recurrent,
            bias,
            input_size,
            hidden_size,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, input: Var, hidden: Var) -> Result<Var, NnError> {
        let (xi, hi) = (g.value(input).len(), g.value(hidden).len());
        if xi != self.input_size {
            return Err(NnError::Dimension {
                context: format!("rnn `{}` input", self.name),
                expected: self.input_size,
                found: xi,
            });
        }
        if hi != self.hidden_size {
            return Err(NnError::Dimension {
                context: format!("rnn `{}` hidden", self.name),
                expected: self.hidden_size,
                found: hi,
            });
        }
        let w_in = g.param(store, self.input);
        let w_rec = g.param(store, self.recurrent);
        let b = g.param(store, self.bias);
        let a = g.matvec(w_in, input)?;
        let r = g.matvec(w_rec, hidden)?;
        let pre = g.add(a, r)?;
        let pre = g.add(pre, b)?;
        Ok(g.tanh(pre))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_mlp_gives_zero() {
        let mut s = ParamStore::new();
        let mlp = Mlp::new(&mut s, "m", &[3, 5, 2], Init::Zeros, &mut rng());
        let mut g = Graph::new();
        let x = g.constant(vec![1.0, -2.0, 0.5]);
        let y = mlp.forward(&mut g, &s, x).unwrap();
        assert_eq!(g.value(y), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut s = ParamStore::new();
        let d = Dense::new(&mut s, "id", 3, 3, Init::Zeros, &mut rng());
        let w = s.get_mut(d.weight()).values_mut();
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let mlp_out = {
            let mut g = Graph::new();
            let x = g.constant(vec![0.25, -4.0, 9.5]);
            let y = d.forward(&mut g, &s, x).unwrap();
            g.value(y).to_vec()
        };
        assert_eq!(mlp_out, vec![0.25, -4.0, 9.5]);
    }

    #[test]
    fn dimension_error_names_layer() {
        let mut s = ParamStore::new();
        let mlp = Mlp::new(&mut s, "enc", &[4, 3, 2], Init::Glorot, &mut rng());
        let mut g = Graph::new();
        let x = g.constant(vec![1.0; 5]);
        let err = mlp.forward(&mut g, &s, x).unwrap_err();
        assert!(err.to_string().contains("enc.0"), "{err}");
    }

    #[test]
    fn zero_rnn_maps_to_tanh_zero() {
        let mut s = ParamStore::new();
        let cell = RnnCell::new(&mut s, "rnn", 4, 6, Init::Zeros, &mut rng());
        let mut g = Graph::new();
        let x = g.constant(vec![1.0, 2.0, 3.0, 4.0]);
        let h = g.constant(vec![0.3; 6]);
        let h2 = cell.step(&mut g, &s, x, h).unwrap();
        assert!(g.value(h2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rnn_is_deterministic_and_checks_hidden_width() {
        let mut s = ParamStore::new();
        let cell = RnnCell::new(&mut s, "rnn", 3, 5, Init::Glorot, &mut rng());
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(vec![0.1, -0.2, 0.3]);
            let h = g.constant(vec![0.5, 0.0, -0.5, 0.25, 1.0]);
            let h2 = cell.step(&mut g, &s, x, h).unwrap();
            g.value(h2).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());

        let mut g = Graph::new();
        let x = g.constant(vec![0.1, -0.2, 0.3]);
        let h = g.constant(vec![0.0; 4]);
        assert!(cell.step(&mut g, &s, x, h).is_err());
    }
}
