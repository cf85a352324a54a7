//! Unidirectional LSTM layer with an explicit backward pass.
//!
//! Gate layout in the stacked weight matrices is `[input, forget, cell, output]`,
//! each block `hidden` rows tall.

use crate::linalg::{axpy, dot, sigmoid};
use crate::rng::Rng;

use super::params::{Gradients, ParameterSet, Tensor};

pub const INIT_BOUND: f64 = 0.08;

/// Parameter names of one LSTM layer under `prefix`.
#[derive(Debug, Clone)]
pub struct LstmNames {
    pub wx: String,
    pub wh: String,
    pub b: String,
}

impl LstmNames {
    pub fn new(prefix: &str) -> Self {
        LstmNames {
            wx: format!("{prefix}.wx"),
            wh: format!("{prefix}.wh"),
            b: format!("{prefix}.b"),
        }
    }
}

/// Registers a fresh layer: weights uniform(-0.08, 0.08), biases zero.
pub fn init_lstm(params: &mut ParameterSet, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) {
    let names = LstmNames::new(prefix);
    params.insert(names.wx, Tensor::uniform(&[4 * hidden, input], INIT_BOUND, rng));
    params.insert(names.wh, Tensor::uniform(&[4 * hidden, hidden], INIT_BOUND, rng));
    params.insert(names.b, Tensor::zeros(&[4 * hidden]));
}

/// Borrowed view of one layer's weights.
#[derive(Clone, Copy)]
pub struct Lstm<'a> {
    wx: &'a [f64],
    wh: &'a [f64],
    b: &'a [f64],
    input: usize,
    hidden: usize,
}

/// Everything the backward pass needs from a forward run.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    inputs: Vec<Vec<f64>>,
    /// Post-activation gates, `4 * hidden` per step.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    cell_tanh: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn hidden_states(&self) -> &[Vec<f64>] {
        &self.hiddens
    }

    pub fn last_hidden(&self) -> &[f64] {
        self.hiddens.last().expect("forward ran over at least one step")
    }
}

impl<'a> Lstm<'a> {
    pub fn from_params(params: &'a ParameterSet, prefix: &str) -> Self {
        let names = LstmNames::new(prefix);
        let wx = params.get(&names.wx).expect("lstm weights registered");
        let hidden = wx.shape[0] / 4;
        Lstm {
            wx: &wx.data,
            wh: params.data(&names.wh),
            b: params.data(&names.b),
            input: wx.shape[1],
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    /// Runs the recurrence from zero initial state. `inputs` must be non-empty.
    pub fn forward(&self, inputs: Vec<Vec<f64>>) -> LstmTrace {
        let h = self.hidden;
        let steps = inputs.len();
        let mut trace = LstmTrace {
            gates: Vec::with_capacity(steps),
            cells: Vec::with_capacity(steps),
            cell_tanh: Vec::with_capacity(steps),
            hiddens: Vec::with_capacity(steps),
            inputs,
        };
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for x in &trace.inputs {
            debug_assert_eq!(x.len(), self.input);
            let mut z = self.b.to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                *zr += dot(&self.wx[r * self.input..(r + 1) * self.input], x)
                    + dot(&self.wh[r * h..(r + 1) * h], &h_prev);
            }
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = if (2 * h..3 * h).contains(&r) {
                    zr.tanh()
                } else {
                    sigmoid(*zr)
                };
            }
            let mut c = vec![0.0; h];
            let mut ct = vec![0.0; h];
            let mut hn = vec![0.0; h];
            for j in 0..h {
                let (i_g, f_g, g_g, o_g) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
                c[j] = f_g * c_prev[j] + i_g * g_g;
                ct[j] = c[j].tanh();
                hn[j] = o_g * ct[j];
            }
            h_prev.clone_from(&hn);
            c_prev.clone_from(&c);
            trace.gates.push(z);
            trace.cells.push(c);
            trace.cell_tanh.push(ct);
            trace.hiddens.push(hn);
        }
        trace
    }

    /// Back-propagates `dh_out[t]` (the loss gradient w.r.t. the hidden state
    /// emitted at step `t`) and accumulates weight gradients into `grads`
    /// under `prefix`. Returns the gradient w.r.t. each input vector.
    pub fn backward(
        &self,
        trace: &LstmTrace,
        dh_out: &[Vec<f64>],
        grads: &mut Gradients,
        prefix: &str,
        want_inputs: bool,
    ) -> Vec<Vec<f64>> {
        let names = LstmNames::new(prefix);
        let [dwx, dwh, db] = grads.get_many_mut([&names.wx, &names.wh, &names.b]);
        let h = self.hidden;
        let steps = trace.len();
        let mut d_inputs = if want_inputs {
            vec![vec![0.0; self.input]; steps]
        } else {
            Vec::new()
        };
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let zeros = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];

        for t in (0..steps).rev() {
            let gates = &trace.gates[t];
            let c_prev = if t > 0 { &trace.cells[t - 1] } else { &zeros };
            let h_prev = if t > 0 { &trace.hiddens[t - 1] } else { &zeros };
            let ct = &trace.cell_tanh[t];
            for j in 0..h {
                let dh = dh_out[t][j] + dh_next[j];
                let (i_g, f_g, g_g, o_g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let d_o = dh * ct[j];
                let dc = dc_next[j] + dh * o_g * (1.0 - ct[j] * ct[j]);
                let d_i = dc * g_g;
                let d_g = dc * i_g;
                let d_f = dc * c_prev[j];
                dc_next[j] = dc * f_g;
                dz[j] = d_i * i_g * (1.0 - i_g);
                dz[h + j] = d_f * f_g * (1.0 - f_g);
                dz[2 * h + j] = d_g * (1.0 - g_g * g_g);
                dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
            }
            let x = &trace.inputs[t];
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &g) in dz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                db[r] += g;
                axpy(g, x, &mut dwx[r * self.input..(r + 1) * self.input]);
                axpy(g, h_prev, &mut dwh[r * h..(r + 1) * h]);
                axpy(g, &self.wh[r * h..(r + 1) * h], &mut dh_next);
                if want_inputs {
                    axpy(g, &self.wx[r * self.input..(r + 1) * self.input], &mut d_inputs[t]);
                }
            }
        }
        d_inputs
    }
}

/// Bidirectional wrapper: the output is the forward pass's last hidden state
/// concatenated with the backward pass's last hidden state (which has read the
/// sequence right to left).
#[derive(Debug, Clone)]
pub struct BiTrace {
    pub forward: LstmTrace,
    pub backward: LstmTrace,
}

pub fn bi_forward(params: &ParameterSet, prefix: &str, inputs: Vec<Vec<f64>>) -> (Vec<f64>, BiTrace) {
    let fwd = Lstm::from_params(params, &format!("{prefix}.fwd"));
    let bwd = Lstm::from_params(params, &format!("{prefix}.bwd"));
    let reversed: Vec<Vec<f64>> = inputs.iter().rev().cloned().collect();
    let tf = fwd.forward(inputs);
    let tb = bwd.forward(reversed);
    let mut out = tf.last_hidden().to_vec();
    out.extend_from_slice(tb.last_hidden());
    (
        out,
        BiTrace {
            forward: tf,
            backward: tb,
        },
    )
}

/// Backward through [`bi_forward`] given the gradient of its concatenated
/// output. Returns per-input gradients in original order when requested.
pub fn bi_backward(
    params: &ParameterSet,
    prefix: &str,
    trace: &BiTrace,
    d_out: &[f64],
    grads: &mut Gradients,
    want_inputs: bool,
) -> Vec<Vec<f64>> {
    let fwd_prefix = format!("{prefix}.fwd");
    let bwd_prefix = format!("{prefix}.bwd");
    let fwd = Lstm::from_params(params, &fwd_prefix);
    let bwd = Lstm::from_params(params, &bwd_prefix);
    let h = fwd.hidden();
    let steps = trace.forward.len();

    let last_only = |d: &[f64]| {
        let mut v = vec![vec![0.0; h]; steps];
        v[steps - 1].copy_from_slice(d);
        v
    };
    let mut d_in = fwd.backward(&trace.forward, &last_only(&d_out[..h]), grads, &fwd_prefix, want_inputs);
    let d_rev = bwd.backward(&trace.backward, &last_only(&d_out[h..]), grads, &bwd_prefix, want_inputs);
    if want_inputs {
        for (t, d) in d_rev.iter().enumerate() {
            axpy(1.0, d, &mut d_in[steps - 1 - t]);
        }
    }
    d_in
}

pub fn init_bilstm(params: &mut ParameterSet, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) {
    init_lstm(params, &format!("{prefix}.fwd"), input, hidden, rng);
    init_lstm(params, &format!("{prefix}.bwd"), input, hidden, rng);
}
