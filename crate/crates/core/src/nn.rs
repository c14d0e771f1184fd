//! Dense building blocks shared by the encoders, message passing and decoders.

use autodiff::{Bound, Graph, ParamId, ParamRegistry, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Registers parameters with seeded `uniform(−1/√fan_in, 1/√fan_in)` init.
pub struct ParamInit<'a> {
    reg: &'a mut ParamRegistry,
    rng: ChaCha8Rng,
}

impl<'a> ParamInit<'a> {
    pub fn new(reg: &'a mut ParamRegistry, seed: u64) -> Self {
        Self {
            reg,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.reg.add(name, Tensor::new(shape, data).expect("shape matches"))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.reg.add(name, Tensor::full(shape.to_vec(), value))
    }
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(init: &mut ParamInit, name: &str, inputs: usize, outputs: usize) -> Self {
        let bound = fan_in_bound(inputs);
        Self {
            w: init.uniform(&format!("{name}.w"), &[inputs, outputs], bound),
            b: init.uniform(&format!("{name}.b"), &[outputs], bound),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        Ok(g.add(y, p[self.b])?)
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(init: &mut ParamInit, name: &str, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(init, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, p, x)?;
            if i < last {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }
}

/// Single-layer gated recurrent unit.
///
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
#[derive(Clone, Debug)]
pub struct Gru {
    /// Input projection to `[z | r | h̃]`, carrying all three biases.
    pub input: Linear,
    pub u_zr: ParamId,
    pub u_h: ParamId,
    pub hidden: usize,
}

impl Gru {
    pub fn new(init: &mut ParamInit, name: &str, inputs: usize, hidden: usize) -> Self {
        let bound = fan_in_bound(hidden);
        Self {
            input: Linear::new(init, &format!("{name}.input"), inputs, 3 * hidden),
            u_zr: init.uniform(&format!("{name}.u_zr"), &[hidden, 2 * hidden], bound),
            u_h: init.uniform(&format!("{name}.u_h"), &[hidden, hidden], bound),
            hidden,
        }
    }

    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let gx = self.input.forward(g, p, x)?;
        let gh = g.matmul(h, p[self.u_zr])?;
        let xz = g.slice(gx, 0, hd)?;
        let hz = g.slice(gh, 0, hd)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let xr = g.slice(gx, hd, 2 * hd)?;
        let hr = g.slice(gh, hd, 2 * hd)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let uh = g.matmul(rh, p[self.u_h])?;
        let xh = g.slice(gx, 2 * hd, 3 * hd)?;
        let cand = g.add(xh, uh)?;
        let cand = g.tanh(cand);
        // h + z ⊙ (h̃ − h)
        let diff = g.sub(cand, h)?;
        let upd = g.mul(z, diff)?;
        Ok(g.add(h, upd)?)
    }

    /// Runs the sequence from a zero state and returns the final state.
    pub fn run(&self, g: &mut Graph, p: &Bound, inputs: &[Var], batch: usize) -> Result<Var> {
        let mut h = g.constant(Tensor::zeros([batch, self.hidden]));
        for &x in inputs {
            h = self.step(g, p, x, h)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::{grad_check, DEFAULT_STEP};

    fn gru_with(fill: Option<f64>) -> (ParamRegistry, Gru) {
        let mut reg = ParamRegistry::new();
        let gru = {
            let mut init = ParamInit::new(&mut reg, 3);
            Gru::new(&mut init, "gru", 3, 4)
        };
        if let Some(v) = fill {
            for id in reg.ids().collect::<Vec<_>>() {
                reg.value_mut(id).data_mut().fill(v);
            }
        }
        (reg, gru)
    }

    fn step_once(reg: &ParamRegistry, gru: &Gru, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let p = reg.bind(&mut g, false);
        let xv = g.constant(Tensor::new([1, x.len()], x.to_vec()).unwrap());
        let hv = g.constant(Tensor::new([1, h.len()], h.to_vec()).unwrap());
        let out = gru.step(&mut g, &p, xv, hv).unwrap();
        g.value(out).data().to_vec()
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let (reg, gru) = gru_with(Some(0.0));
        let h = [0.8, -0.4, 2.0, 0.1];
        let out = step_once(&reg, &gru, &[1.0, -2.0, 3.0], &h);
        for (o, v) in out.iter().zip(h) {
            assert_eq!(*o, v / 2.0);
        }
    }

    #[test]
    fn saturated_update_gate_carries_state() {
        let (mut reg, gru) = gru_with(None);
        let b = reg.value_mut(gru.input.b).data_mut();
        b[..4].fill(-60.0);
        let h = [0.3, -0.7, 0.5, 0.9];
        let out = step_once(&reg, &gru, &[0.2, 0.1, -0.5], &h);
        for (o, v) in out.iter().zip(h) {
            assert!((o - v).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let (reg, gru) = gru_with(None);
        let x0 = Tensor::new([2, 3], vec![0.3, -0.2, 0.9, -1.1, 0.4, 0.05]).unwrap();
        // gradient w.r.t. the input sequence, weights fixed
        let err = grad_check::<_, crate::Error>(
            |g, x| {
                let p = reg.bind(g, false);
                let h = gru.run(g, &p, &[x, x], 2)?;
                let sq = g.mul(h, h)?;
                Ok(g.sum_all(sq))
            },
            &x0,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err:e}");
        // gradient w.r.t. the recurrent weights
        let u = reg.value(gru.u_zr).clone();
        let err = grad_check::<_, crate::Error>(
            |g, uv| {
                let p = reg.bind(g, false).replaced(gru.u_zr, uv);
                let x = g.constant(x0.clone());
                let h = gru.run(g, &p, &[x, x, x], 2)?;
                Ok(g.sum_all(h))
            },
            &u,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err:e}");
    }

}

