//! Recurrent cell parameter blocks and single-step kernels.
//!
//! The multi-channel GRU cell computes, per timestep `t` and layer `l`:
//!
//! ```text
//! r_t = σ(W_xr·x_t + W_hr·h_{t−1} + b_r)
//! z_t = σ(W_xz·x_t + W_hz·h_{t−1} + b_z)
//! S   = W_sh·stiffness + W_mh·mass + b_s          (constant over time)
//! h̃_t = tanh(W_xh·x_t + W_hh·(r_t ⊙ h_{t−1}) + S + b_h)
//! h_t = (1 − z_t) ⊙ h_{t−1} + z_t ⊙ h̃_t
//! ```
//!
//! A plain GRU is the same cell without the structural projection (`S` is
//! absent, which is arithmetically the zero vector). The LSTM baseline is
//! the standard input/forget/output-gate formulation.

use serde::{Deserialize, Serialize};

use crate::linalg::{sigmoid, Mat};

/// Structural projection of one MC-GRU layer: maps the normalized
/// (stiffness, mass) scalars into the candidate-state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructProj {
    pub w_sh: Vec<f64>,
    pub w_mh: Vec<f64>,
    pub b_s: Vec<f64>,
}

impl StructProj {
    pub fn zeros(hidden: usize) -> Self {
        StructProj {
            w_sh: vec![0.0; hidden],
            w_mh: vec![0.0; hidden],
            b_s: vec![0.0; hidden],
        }
    }
}

/// `S = W_sh·stiffness + W_mh·mass + b_s`, evaluated once per
/// (sample, layer) and broadcast over time.
pub fn structural_embedding(stiffness_norm: f64, mass_norm: f64, proj: &StructProj) -> Vec<f64> {
    proj.w_sh
        .iter()
        .zip(&proj.w_mh)
        .zip(&proj.b_s)
        .map(|((ws, wm), b)| ws * stiffness_norm + wm * mass_norm + b)
        .collect()
}

/// Weights of one (MC-)GRU layer. `struct_proj` is present for the
/// multi-channel variant and absent for the plain GRU baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub w_xr: Mat,
    pub w_xz: Mat,
    pub w_xh: Mat,
    pub w_hr: Mat,
    pub w_hz: Mat,
    pub w_hh: Mat,
    pub b_r: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_h: Vec<f64>,
    pub struct_proj: Option<StructProj>,
}

impl GruLayer {
    pub fn zeros(input: usize, hidden: usize, multi_channel: bool) -> Self {
        GruLayer {
            w_xr: Mat::zeros(hidden, input),
            w_xz: Mat::zeros(hidden, input),
            w_xh: Mat::zeros(hidden, input),
            w_hr: Mat::zeros(hidden, hidden),
            w_hz: Mat::zeros(hidden, hidden),
            w_hh: Mat::zeros(hidden, hidden),
            b_r: vec![0.0; hidden],
            b_z: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
            struct_proj: multi_channel.then(|| StructProj::zeros(hidden)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_r.len()
    }

    pub fn input(&self) -> usize {
        self.w_xr.cols()
    }

    /// One step, writing gate activations and the new hidden state into the
    /// caller's buffers. `s` is the structural embedding (`None` for the
    /// plain GRU). `scratch` must hold `hidden` elements.
    #[allow(clippy::too_many_arguments)]
    pub fn step_into(
        &self,
        x: &[f64],
        h_prev: &[f64],
        s: Option<&[f64]>,
        r: &mut [f64],
        z: &mut [f64],
        h_tilde: &mut [f64],
        h: &mut [f64],
        scratch: &mut [f64],
    ) {
        let hidden = self.hidden();
        debug_assert_eq!(x.len(), self.input());
        debug_assert_eq!(h_prev.len(), hidden);

        r.copy_from_slice(&self.b_r);
        self.w_xr.matvec_add(x, r);
        self.w_hr.matvec_add(h_prev, r);
        for v in r.iter_mut() {
            *v = sigmoid(*v);
        }

        z.copy_from_slice(&self.b_z);
        self.w_xz.matvec_add(x, z);
        self.w_hz.matvec_add(h_prev, z);
        for v in z.iter_mut() {
            *v = sigmoid(*v);
        }

        for i in 0..hidden {
            scratch[i] = r[i] * h_prev[i];
        }
        h_tilde.copy_from_slice(&self.b_h);
        if let Some(s) = s {
            for (v, si) in h_tilde.iter_mut().zip(s) {
                *v += si;
            }
        }
        self.w_xh.matvec_add(x, h_tilde);
        self.w_hh.matvec_add(scratch, h_tilde);
        for v in h_tilde.iter_mut() {
            *v = v.tanh();
        }

        for i in 0..hidden {
            h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * h_tilde[i];
        }
    }
}

/// Gate activations of one GRU step, retained for backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct GruStepCache {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub h_tilde: Vec<f64>,
}

/// Single MC-GRU step with an explicit structural embedding `s`.
pub fn mcgru_cell_step(
    layer: &GruLayer,
    x: &[f64],
    h_prev: &[f64],
    s: &[f64],
) -> (Vec<f64>, GruStepCache) {
    let hidden = layer.hidden();
    let mut r = vec![0.0; hidden];
    let mut z = vec![0.0; hidden];
    let mut h_tilde = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    let mut scratch = vec![0.0; hidden];
    layer.step_into(
        x,
        h_prev,
        Some(s),
        &mut r,
        &mut z,
        &mut h_tilde,
        &mut h,
        &mut scratch,
    );
    (h, GruStepCache { r, z, h_tilde })
}

/// Plain GRU step: identical arithmetic with no structural term.
pub fn gru_cell_step(layer: &GruLayer, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GruStepCache) {
    let hidden = layer.hidden();
    let mut r = vec![0.0; hidden];
    let mut z = vec![0.0; hidden];
    let mut h_tilde = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    let mut scratch = vec![0.0; hidden];
    layer.step_into(
        x,
        h_prev,
        None,
        &mut r,
        &mut z,
        &mut h_tilde,
        &mut h,
        &mut scratch,
    );
    (h, GruStepCache { r, z, h_tilde })
}

/// Weights of one LSTM layer (input/forget/output gates and candidate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub w_xi: Mat,
    pub w_xf: Mat,
    pub w_xo: Mat,
    pub w_xg: Mat,
    pub w_hi: Mat,
    pub w_hf: Mat,
    pub w_ho: Mat,
    pub w_hg: Mat,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_g: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_xi: Mat::zeros(hidden, input),
            w_xf: Mat::zeros(hidden, input),
            w_xo: Mat::zeros(hidden, input),
            w_xg: Mat::zeros(hidden, input),
            w_hi: Mat::zeros(hidden, hidden),
            w_hf: Mat::zeros(hidden, hidden),
            w_ho: Mat::zeros(hidden, hidden),
            w_hg: Mat::zeros(hidden, hidden),
            b_i: vec![0.0; hidden],
            b_f: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
            b_g: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_i.len()
    }

    pub fn input(&self) -> usize {
        self.w_xi.cols()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step_into(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        gi: &mut [f64],
        gf: &mut [f64],
        go: &mut [f64],
        gg: &mut [f64],
        c: &mut [f64],
        h: &mut [f64],
    ) {
        let hidden = self.hidden();
        debug_assert_eq!(x.len(), self.input());

        let gate = |w_x: &Mat, w_h: &Mat, b: &[f64], out: &mut [f64]| {
            out.copy_from_slice(b);
            w_x.matvec_add(x, out);
            w_h.matvec_add(h_prev, out);
        };
        gate(&self.w_xi, &self.w_hi, &self.b_i, gi);
        gate(&self.w_xf, &self.w_hf, &self.b_f, gf);
        gate(&self.w_xo, &self.w_ho, &self.b_o, go);
        gate(&self.w_xg, &self.w_hg, &self.b_g, gg);
        for v in gi.iter_mut() {
            *v = sigmoid(*v);
        }
        for v in gf.iter_mut() {
            *v = sigmoid(*v);
        }
        for v in go.iter_mut() {
            *v = sigmoid(*v);
        }
        for v in gg.iter_mut() {
            *v = v.tanh();
        }
        for k in 0..hidden {
            c[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
            h[k] = go[k] * c[k].tanh();
        }
    }
}

/// Gate activations of one LSTM step.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStepCache {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
}

/// Single LSTM step; returns the new hidden state, new cell state, and the
/// gate cache.
pub fn lstm_cell_step(
    layer: &LstmLayer,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>, LstmStepCache) {
    let hidden = layer.hidden();
    let mut gi = vec![0.0; hidden];
    let mut gf = vec![0.0; hidden];
    let mut go = vec![0.0; hidden];
    let mut gg = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    layer.step_into(
        x, h_prev, c_prev, &mut gi, &mut gf, &mut go, &mut gg, &mut c, &mut h,
    );
    (
        h,
        c.clone(),
        LstmStepCache {
            i: gi,
            f: gf,
            o: go,
            g: gg,
            c,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gru(input: usize, hidden: usize, mc: bool, seed: u64) -> GruLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = GruLayer::zeros(input, hidden, mc);
        let mut fill = |s: &mut [f64]| {
            for v in s {
                *v = rng.gen_range(-0.9..0.9);
            }
        };
        fill(layer.w_xr.as_mut_slice());
        fill(layer.w_xz.as_mut_slice());
        fill(layer.w_xh.as_mut_slice());
        fill(layer.w_hr.as_mut_slice());
        fill(layer.w_hz.as_mut_slice());
        fill(layer.w_hh.as_mut_slice());
        fill(&mut layer.b_r);
        fill(&mut layer.b_z);
        fill(&mut layer.b_h);
        if let Some(p) = layer.struct_proj.as_mut() {
            fill(&mut p.w_sh);
            fill(&mut p.w_mh);
            fill(&mut p.b_s);
        }
        layer
    }

    #[test]
    fn structural_embedding_zero_and_basis_cases() {
        let proj = StructProj::zeros(3);
        assert_eq!(structural_embedding(0.7, -0.2, &proj), vec![0.0; 3]);

        let proj = StructProj {
            w_sh: vec![1.0, 2.0, 3.0],
            w_mh: vec![10.0, 20.0, 30.0],
            b_s: vec![0.0; 3],
        };
        // stiffness = 1, mass = 0 probes the W_sh column.
        assert_eq!(structural_embedding(1.0, 0.0, &proj), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn structural_embedding_matches_scalar_recomputation() {
        let proj = StructProj {
            w_sh: vec![0.3, -0.1, 0.8],
            w_mh: vec![-0.5, 0.2, 0.05],
            b_s: vec![0.01, -0.02, 0.3],
        };
        let (k, m) = (0.5, -0.25);
        let s = structural_embedding(k, m, &proj);
        for i in 0..3 {
            let expected = proj.w_sh[i] * k + proj.w_mh[i] * m + proj.b_s[i];
            assert!((s[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_parameter_step_halves_hidden_state() {
        // All weights/biases zero: r = z = 0.5, h̃ = 0, h = 0.5·h_prev.
        let layer = GruLayer::zeros(1, 4, true);
        let h_prev = vec![0.8, -0.4, 0.1, 1.0];
        let s = vec![0.0; 4];
        let (h, cache) = mcgru_cell_step(&layer, &[0.3], &h_prev, &s);
        for i in 0..4 {
            assert_eq!(cache.r[i], 0.5);
            assert_eq!(cache.z[i], 0.5);
            assert_eq!(cache.h_tilde[i], 0.0);
            assert!((h[i] - 0.5 * h_prev[i]).abs() < 1e-16);
        }
    }

    #[test]
    fn step_from_zero_hidden_reduces_to_gated_candidate() {
        let layer = random_gru(2, 5, true, 1);
        let s = structural_embedding(0.4, -0.6, layer.struct_proj.as_ref().unwrap());
        let x = [0.9, -1.3];
        let (h, cache) = mcgru_cell_step(&layer, &x, &vec![0.0; 5], &s);
        for i in 0..5 {
            // h_t = z ⊙ h̃ with h̃ = tanh(W_xh·x + S + b_h)
            let mut a = layer.b_h[i] + s[i];
            for (j, xj) in x.iter().enumerate() {
                a += layer.w_xh.get(i, j) * xj;
            }
            let expected = cache.z[i] * a.tanh();
            assert!((h[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn mcgru_step_matches_elementwise_recomputation() {
        let layer = random_gru(2, 2, true, 9);
        let s = structural_embedding(0.5, -0.25, layer.struct_proj.as_ref().unwrap());
        let x = [1.1, -0.4];
        let h_prev = [0.3, -0.7];
        let (h, cache) = mcgru_cell_step(&layer, &x, &h_prev, &s);

        for i in 0..2 {
            let lin = |m: &Mat, v: &[f64]| (0..v.len()).map(|j| m.get(i, j) * v[j]).sum::<f64>();
            let r = crate::linalg::sigmoid(lin(&layer.w_xr, &x) + lin(&layer.w_hr, &h_prev) + layer.b_r[i]);
            let z = crate::linalg::sigmoid(lin(&layer.w_xz, &x) + lin(&layer.w_hz, &h_prev) + layer.b_z[i]);
            let rh: Vec<f64> = (0..2).map(|j| cache.r[j] * h_prev[j]).collect();
            let ht = (lin(&layer.w_xh, &x) + lin(&layer.w_hh, &rh) + s[i] + layer.b_h[i]).tanh();
            let hi = (1.0 - z) * h_prev[i] + z * ht;
            assert!((cache.r[i] - r).abs() < 1e-14);
            assert!((cache.z[i] - z).abs() < 1e-14);
            assert!((cache.h_tilde[i] - ht).abs() < 1e-14);
            assert!((h[i] - hi).abs() < 1e-14);
        }
    }

    #[test]
    fn gru_equals_mcgru_with_zeroed_projection() {
        let mut mc = random_gru(3, 6, true, 4);
        mc.struct_proj = Some(StructProj::zeros(6));
        let mut plain = mc.clone();
        plain.struct_proj = None;

        let x = [0.2, -0.8, 1.4];
        let h_prev = [0.1, -0.2, 0.3, -0.4, 0.5, -0.6];
        let s = structural_embedding(0.9, -0.3, mc.struct_proj.as_ref().unwrap());
        let (h_mc, c_mc) = mcgru_cell_step(&mc, &x, &h_prev, &s);
        let (h_gru, c_gru) = gru_cell_step(&plain, &x, &h_prev);
        assert_eq!(h_mc, h_gru);
        assert_eq!(c_mc, c_gru);
    }

    #[test]
    fn gate_ranges_hold_and_state_stays_bounded() {
        let layer = random_gru(1, 8, true, 12);
        let s = structural_embedding(0.7, 0.7, layer.struct_proj.as_ref().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut h = vec![0.0; 8];
        for _ in 0..200 {
            let x = [rng.gen_range(-3.0..3.0)];
            let (hn, cache) = mcgru_cell_step(&layer, &x, &h, &s);
            for i in 0..8 {
                assert!(cache.r[i] > 0.0 && cache.r[i] < 1.0);
                assert!(cache.z[i] > 0.0 && cache.z[i] < 1.0);
                assert!(cache.h_tilde[i] > -1.0 && cache.h_tilde[i] < 1.0);
                assert!(hn[i] > -1.0 && hn[i] < 1.0);
            }
            h = hn;
        }
    }

    #[test]
    fn lstm_zero_parameter_step_is_zero() {
        let layer = LstmLayer::zeros(1, 4);
        let (h, c, _) = lstm_cell_step(&layer, &[0.5], &vec![0.0; 4], &vec![0.0; 4]);
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_step_matches_elementwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut layer = LstmLayer::zeros(2, 2);
        let mut fill = |s: &mut [f64]| {
            for v in s {
                *v = rng.gen_range(-0.9..0.9);
            }
        };
        fill(layer.w_xi.as_mut_slice());
        fill(layer.w_xf.as_mut_slice());
        fill(layer.w_xo.as_mut_slice());
        fill(layer.w_xg.as_mut_slice());
        fill(layer.w_hi.as_mut_slice());
        fill(layer.w_hf.as_mut_slice());
        fill(layer.w_ho.as_mut_slice());
        fill(layer.w_hg.as_mut_slice());
        fill(&mut layer.b_i);
        fill(&mut layer.b_f);
        fill(&mut layer.b_o);
        fill(&mut layer.b_g);

        let x = [0.4, -1.2];
        let h_prev = [0.2, -0.5];
        let c_prev = [-0.1, 0.6];
        let (h, c, cache) = lstm_cell_step(&layer, &x, &h_prev, &c_prev);
        for i in 0..2 {
            let lin = |mx: &Mat, mh: &Mat, b: &[f64]| {
                (0..2).map(|j| mx.get(i, j) * x[j]).sum::<f64>()
                    + (0..2).map(|j| mh.get(i, j) * h_prev[j]).sum::<f64>()
                    + b[i]
            };
            let gi = crate::linalg::sigmoid(lin(&layer.w_xi, &layer.w_hi, &layer.b_i));
            let gf = crate::linalg::sigmoid(lin(&layer.w_xf, &layer.w_hf, &layer.b_f));
            let go = crate::linalg::sigmoid(lin(&layer.w_xo, &layer.w_ho, &layer.b_o));
            let gg = lin(&layer.w_xg, &layer.w_hg, &layer.b_g).tanh();
            let ci = gf * c_prev[i] + gi * gg;
            let hi = go * ci.tanh();
            assert!((cache.i[i] - gi).abs() < 1e-14);
            assert!((cache.f[i] - gf).abs() < 1e-14);
            assert!((cache.o[i] - go).abs() < 1e-14);
            assert!((cache.g[i] - gg).abs() < 1e-14);
            assert!((c[i] - ci).abs() < 1e-14);
            assert!((h[i] - hi).abs() < 1e-14);
        }
    }
}
