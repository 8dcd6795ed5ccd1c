//! Recurrent surrogate models: the multi-channel GRU and the GRU/LSTM
//! baselines, with forward evaluation and exact backpropagation through
//! time.
//!
//! A model is a stack of recurrent layers plus a time-distributed linear
//! output head. Layer 1 consumes the ground-motion sequence; layer `l > 1`
//! consumes the hidden states of layer `l − 1`. In the multi-channel
//! variant every layer owns its structural projection and receives its own
//! embedding `S` of the normalized (stiffness, mass) pair; the baselines
//! ignore the structural channel entirely. All hidden states start at zero.

mod cells;

pub use cells::{
    gru_cell_step, lstm_cell_step, mcgru_cell_step, structural_embedding, GruLayer, GruStepCache,
    LstmLayer, LstmStepCache, StructProj,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError};
use crate::linalg::Mat;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache does not match the model: {0}")]
    CacheMismatch(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Which recurrent cell the model stacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    McGru,
    Gru,
    Lstm,
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellKind::McGru => write!(f, "mc_gru"),
            CellKind::Gru => write!(f, "gru"),
            CellKind::Lstm => write!(f, "lstm"),
        }
    }
}

/// Network architecture description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub cell: CellKind,
    pub num_layers: usize,
    pub hidden_size: usize,
    /// Ground-motion channel width.
    pub input_size1: usize,
    /// Structure channel width (stiffness, mass).
    pub input_size2: usize,
    pub output_size: usize,
}

impl ModelArch {
    pub fn new(cell: CellKind, num_layers: usize, hidden_size: usize) -> Self {
        ModelArch {
            cell,
            num_layers,
            hidden_size,
            input_size1: 1,
            input_size2: 2,
            output_size: 1,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.num_layers == 0 || self.hidden_size == 0 {
            return Err(NetworkError::ShapeMismatch(
                "num_layers and hidden_size must be >= 1".into(),
            ));
        }
        if self.input_size1 == 0 || self.output_size == 0 {
            return Err(NetworkError::ShapeMismatch(
                "input_size1 and output_size must be >= 1".into(),
            ));
        }
        if self.cell == CellKind::McGru && self.input_size2 == 0 {
            return Err(NetworkError::ShapeMismatch(
                "the multi-channel cell requires input_size2 >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One recurrent layer of either family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Gru(GruLayer),
    Lstm(LstmLayer),
}

/// Time-distributed linear readout applied at every timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputHead {
    pub w_out: Mat,
    pub b_out: Vec<f64>,
}

/// Full model: architecture, layer stack, output head. The same structure
/// doubles as the gradient container returned by [`Model::backward`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub arch: ModelArch,
    pub layers: Vec<Layer>,
    pub head: OutputHead,
}

/// Initializes a model with input/recurrent/head weights drawn uniformly in
/// `[−1/√hidden, 1/√hidden]` and zero biases; deterministic per seed.
pub fn init_params(arch: ModelArch, seed: u64) -> Model {
    arch.validate().expect("invalid architecture");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (arch.hidden_size as f64).sqrt();
    let mut model = Model::zeros(arch);
    for (name, tensor) in model.named_tensors_mut() {
        let is_bias = name.rsplit('.').next().map(|t| t.starts_with('b')).unwrap_or(false);
        if is_bias {
            continue;
        }
        for v in tensor {
            *v = rng.gen_range(-bound..=bound);
        }
    }
    model
}

impl Model {
    /// All-zero model of the given architecture (also the gradient layout).
    pub fn zeros(arch: ModelArch) -> Model {
        let h = arch.hidden_size;
        let layers = (0..arch.num_layers)
            .map(|l| {
                let input = if l == 0 { arch.input_size1 } else { h };
                match arch.cell {
                    CellKind::McGru => Layer::Gru(GruLayer::zeros(input, h, true)),
                    CellKind::Gru => Layer::Gru(GruLayer::zeros(input, h, false)),
                    CellKind::Lstm => Layer::Lstm(LstmLayer::zeros(input, h)),
                }
            })
            .collect();
        Model {
            arch,
            layers,
            head: OutputHead {
                w_out: Mat::zeros(arch.output_size, h),
                b_out: vec![0.0; arch.output_size],
            },
        }
    }

    pub fn zeros_like(&self) -> Model {
        Model::zeros(self.arch)
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Canonical (name, tensor) listing; the order defines the flat layout.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let p = |field: &str| format!("layer{l}.{field}");
            match layer {
                Layer::Gru(g) => {
                    out.push((p("w_xr"), g.w_xr.as_slice()));
                    out.push((p("w_xz"), g.w_xz.as_slice()));
                    out.push((p("w_xh"), g.w_xh.as_slice()));
                    out.push((p("w_hr"), g.w_hr.as_slice()));
                    out.push((p("w_hz"), g.w_hz.as_slice()));
                    out.push((p("w_hh"), g.w_hh.as_slice()));
                    if let Some(sp) = &g.struct_proj {
                        out.push((p("w_sh"), &sp.w_sh));
                        out.push((p("w_mh"), &sp.w_mh));
                        out.push((p("b_s"), &sp.b_s));
                    }
                    out.push((p("b_r"), &g.b_r));
                    out.push((p("b_z"), &g.b_z));
                    out.push((p("b_h"), &g.b_h));
                }
                Layer::Lstm(m) => {
                    out.push((p("w_xi"), m.w_xi.as_slice()));
                    out.push((p("w_xf"), m.w_xf.as_slice()));
                    out.push((p("w_xo"), m.w_xo.as_slice()));
                    out.push((p("w_xg"), m.w_xg.as_slice()));
                    out.push((p("w_hi"), m.w_hi.as_slice()));
                    out.push((p("w_hf"), m.w_hf.as_slice()));
                    out.push((p("w_ho"), m.w_ho.as_slice()));
                    out.push((p("w_hg"), m.w_hg.as_slice()));
                    out.push((p("b_i"), &m.b_i));
                    out.push((p("b_f"), &m.b_f));
                    out.push((p("b_o"), &m.b_o));
                    out.push((p("b_g"), &m.b_g));
                }
            }
        }
        out.push(("head.w_out".into(), self.head.w_out.as_slice()));
        out.push(("head.b_out".into(), &self.head.b_out));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let p = |field: &str| format!("layer{l}.{field}");
            match layer {
                Layer::Gru(g) => {
                    out.push((p("w_xr"), g.w_xr.as_mut_slice()));
                    out.push((p("w_xz"), g.w_xz.as_mut_slice()));
                    out.push((p("w_xh"), g.w_xh.as_mut_slice()));
                    out.push((p("w_hr"), g.w_hr.as_mut_slice()));
                    out.push((p("w_hz"), g.w_hz.as_mut_slice()));
                    out.push((p("w_hh"), g.w_hh.as_mut_slice()));
                    if let Some(sp) = &mut g.struct_proj {
                        out.push((p("w_sh"), sp.w_sh.as_mut_slice()));
                        out.push((p("w_mh"), sp.w_mh.as_mut_slice()));
                        out.push((p("b_s"), sp.b_s.as_mut_slice()));
                    }
                    out.push((p("b_r"), g.b_r.as_mut_slice()));
                    out.push((p("b_z"), g.b_z.as_mut_slice()));
                    out.push((p("b_h"), g.b_h.as_mut_slice()));
                }
                Layer::Lstm(m) => {
                    out.push((p("w_xi"), m.w_xi.as_mut_slice()));
                    out.push((p("w_xf"), m.w_xf.as_mut_slice()));
                    out.push((p("w_xo"), m.w_xo.as_mut_slice()));
                    out.push((p("w_xg"), m.w_xg.as_mut_slice()));
                    out.push((p("w_hi"), m.w_hi.as_mut_slice()));
                    out.push((p("w_hf"), m.w_hf.as_mut_slice()));
                    out.push((p("w_ho"), m.w_ho.as_mut_slice()));
                    out.push((p("w_hg"), m.w_hg.as_mut_slice()));
                    out.push((p("b_i"), m.b_i.as_mut_slice()));
                    out.push((p("b_f"), m.b_f.as_mut_slice()));
                    out.push((p("b_o"), m.b_o.as_mut_slice()));
                    out.push((p("b_g"), m.b_g.as_mut_slice()));
                }
            }
        }
        out.push(("head.w_out".into(), self.head.w_out.as_mut_slice()));
        out.push(("head.b_out".into(), self.head.b_out.as_mut_slice()));
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for (_, t) in self.named_tensors() {
            flat.extend_from_slice(t);
        }
        flat
    }

    pub fn copy_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for (_, t) in self.named_tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// Forward evaluation of one sample. `gm_seq` holds `T × input_size1`
    /// values; `struct_feats` is the normalized (stiffness, mass) pair.
    /// Returns the `T × output_size` predictions and the cache required for
    /// [`Model::backward`].
    pub fn forward(&self, gm_seq: &[f64], struct_feats: [f64; 2]) -> (Vec<f64>, ForwardCache) {
        let in1 = self.arch.input_size1;
        assert_eq!(
            gm_seq.len() % in1,
            0,
            "input length {} is not a multiple of input_size1 {}",
            gm_seq.len(),
            in1
        );
        let t_len = gm_seq.len() / in1;
        let hidden = self.arch.hidden_size;

        let mut layer_caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        let mut scratch = vec![0.0; hidden];
        let zero_h = vec![0.0; hidden];

        for (l, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Gru(g) => {
                    let s = g
                        .struct_proj
                        .as_ref()
                        .map(|p| structural_embedding(struct_feats[0], struct_feats[1], p));
                    let mut r = vec![0.0; t_len * hidden];
                    let mut z = vec![0.0; t_len * hidden];
                    let mut h_tilde = vec![0.0; t_len * hidden];
                    let mut h = vec![0.0; t_len * hidden];
                    for t in 0..t_len {
                        let x_t: &[f64] = if l == 0 {
                            &gm_seq[t * in1..(t + 1) * in1]
                        } else {
                            match &layer_caches[l - 1] {
                                LayerCache::Gru(c) => &c.h[t * hidden..(t + 1) * hidden],
                                LayerCache::Lstm(c) => &c.h[t * hidden..(t + 1) * hidden],
                            }
                        };
                        let (h_prev_buf, h_t_buf) = if t == 0 {
                            let (cur, _) = h.split_at_mut(hidden);
                            (zero_h.as_slice(), cur)
                        } else {
                            let (prev, cur) = h.split_at_mut(t * hidden);
                            (&prev[(t - 1) * hidden..], &mut cur[..hidden])
                        };
                        g.step_into(
                            x_t,
                            h_prev_buf,
                            s.as_deref(),
                            &mut r[t * hidden..(t + 1) * hidden],
                            &mut z[t * hidden..(t + 1) * hidden],
                            &mut h_tilde[t * hidden..(t + 1) * hidden],
                            h_t_buf,
                            &mut scratch,
                        );
                    }
                    layer_caches.push(LayerCache::Gru(GruLayerCache {
                        s,
                        r,
                        z,
                        h_tilde,
                        h,
                    }));
                }
                Layer::Lstm(m) => {
                    let mut gi = vec![0.0; t_len * hidden];
                    let mut gf = vec![0.0; t_len * hidden];
                    let mut go = vec![0.0; t_len * hidden];
                    let mut gg = vec![0.0; t_len * hidden];
                    let mut c = vec![0.0; t_len * hidden];
                    let mut h = vec![0.0; t_len * hidden];
                    for t in 0..t_len {
                        let x_t: &[f64] = if l == 0 {
                            &gm_seq[t * in1..(t + 1) * in1]
                        } else {
                            match &layer_caches[l - 1] {
                                LayerCache::Gru(cc) => &cc.h[t * hidden..(t + 1) * hidden],
                                LayerCache::Lstm(cc) => &cc.h[t * hidden..(t + 1) * hidden],
                            }
                        };
                        let (h_prev_buf, h_t_buf) = if t == 0 {
                            let (cur, _) = h.split_at_mut(hidden);
                            (zero_h.as_slice(), cur)
                        } else {
                            let (prev, cur) = h.split_at_mut(t * hidden);
                            (&prev[(t - 1) * hidden..], &mut cur[..hidden])
                        };
                        let (c_prev_buf, c_t_buf) = if t == 0 {
                            let (cur, _) = c.split_at_mut(hidden);
                            (zero_h.as_slice(), cur)
                        } else {
                            let (prev, cur) = c.split_at_mut(t * hidden);
                            (&prev[(t - 1) * hidden..], &mut cur[..hidden])
                        };
                        m.step_into(
                            x_t,
                            h_prev_buf,
                            c_prev_buf,
                            &mut gi[t * hidden..(t + 1) * hidden],
                            &mut gf[t * hidden..(t + 1) * hidden],
                            &mut go[t * hidden..(t + 1) * hidden],
                            &mut gg[t * hidden..(t + 1) * hidden],
                            c_t_buf,
                            h_t_buf,
                        );
                    }
                    layer_caches.push(LayerCache::Lstm(LstmLayerCache {
                        i: gi,
                        f: gf,
                        o: go,
                        g: gg,
                        c,
                        h,
                    }));
                }
            }
        }

        let top_h = match layer_caches.last().expect("at least one layer") {
            LayerCache::Gru(c) => &c.h,
            LayerCache::Lstm(c) => &c.h,
        };
        let out_size = self.arch.output_size;
        let mut pred = vec![0.0; t_len * out_size];
        for t in 0..t_len {
            let y = &mut pred[t * out_size..(t + 1) * out_size];
            y.copy_from_slice(&self.head.b_out);
            self.head
                .w_out
                .matvec_add(&top_h[t * hidden..(t + 1) * hidden], y);
        }

        let cache = ForwardCache {
            seq_len: t_len,
            input: gm_seq.to_vec(),
            struct_feats,
            layers: layer_caches,
        };
        (pred, cache)
    }

    /// Exact reverse-mode BPTT. `dpred` is `∂L/∂pred` with the layout of
    /// the forward output. Returns gradients in a model-shaped container.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dpred: &[f64],
    ) -> Result<Model, NetworkError> {
        let hidden = self.arch.hidden_size;
        let out_size = self.arch.output_size;
        let in1 = self.arch.input_size1;
        let t_len = cache.seq_len;
        if cache.layers.len() != self.layers.len() {
            return Err(NetworkError::CacheMismatch(format!(
                "cache has {} layers, model has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        if dpred.len() != t_len * out_size {
            return Err(NetworkError::CacheMismatch(format!(
                "dpred length {} != T×output {}",
                dpred.len(),
                t_len * out_size
            )));
        }
        for (l, lc) in cache.layers.iter().enumerate() {
            let (got, want) = match (lc, &self.layers[l]) {
                (LayerCache::Gru(c), Layer::Gru(_)) => (c.h.len(), t_len * hidden),
                (LayerCache::Lstm(c), Layer::Lstm(_)) => (c.h.len(), t_len * hidden),
                _ => {
                    return Err(NetworkError::CacheMismatch(format!(
                        "cache/model cell kind differs at layer {l}"
                    )))
                }
            };
            if got != want {
                return Err(NetworkError::CacheMismatch(format!(
                    "layer {l} cache length {got} != {want}"
                )));
            }
        }
        if cache.input.len() != t_len * in1 {
            return Err(NetworkError::CacheMismatch(
                "cached input length differs from seq_len × input_size1".into(),
            ));
        }

        let mut grads = self.zeros_like();

        // Head: dh on the top layer plus head weight gradients.
        let top_h = match cache.layers.last().unwrap() {
            LayerCache::Gru(c) => &c.h,
            LayerCache::Lstm(c) => &c.h,
        };
        let mut dh_seq = vec![0.0; t_len * hidden];
        for t in 0..t_len {
            let dy = &dpred[t * out_size..(t + 1) * out_size];
            let h_t = &top_h[t * hidden..(t + 1) * hidden];
            grads.head.w_out.add_outer(dy, h_t);
            for (gb, d) in grads.head.b_out.iter_mut().zip(dy) {
                *gb += d;
            }
            self.head
                .w_out
                .matvec_t_add(dy, &mut dh_seq[t * hidden..(t + 1) * hidden]);
        }

        // Layers, top to bottom.
        for l in (0..self.layers.len()).rev() {
            let dx_width = if l == 0 { in1 } else { hidden };
            let mut dx_seq = vec![0.0; t_len * dx_width];
            let x_of = |t: usize| -> &[f64] {
                if l == 0 {
                    &cache.input[t * in1..(t + 1) * in1]
                } else {
                    match &cache.layers[l - 1] {
                        LayerCache::Gru(c) => &c.h[t * hidden..(t + 1) * hidden],
                        LayerCache::Lstm(c) => &c.h[t * hidden..(t + 1) * hidden],
                    }
                }
            };
            let zero_h = vec![0.0; hidden];

            match (&self.layers[l], &cache.layers[l], &mut grads.layers[l]) {
                (Layer::Gru(g), LayerCache::Gru(c), Layer::Gru(gg)) => {
                    let mut carry = vec![0.0; hidden];
                    let mut dh_t = vec![0.0; hidden];
                    let mut da_h = vec![0.0; hidden];
                    let mut da_z = vec![0.0; hidden];
                    let mut da_r = vec![0.0; hidden];
                    let mut drh = vec![0.0; hidden];
                    let mut rh = vec![0.0; hidden];
                    let mut ds_total = vec![0.0; hidden];

                    for t in (0..t_len).rev() {
                        let r = &c.r[t * hidden..(t + 1) * hidden];
                        let z = &c.z[t * hidden..(t + 1) * hidden];
                        let h_tilde = &c.h_tilde[t * hidden..(t + 1) * hidden];
                        let h_prev: &[f64] = if t == 0 {
                            &zero_h
                        } else {
                            &c.h[(t - 1) * hidden..t * hidden]
                        };
                        for i in 0..hidden {
                            dh_t[i] = dh_seq[t * hidden + i] + carry[i];
                        }
                        // h_t = (1−z)·h_prev + z·h̃
                        for i in 0..hidden {
                            let d = dh_t[i];
                            carry[i] = d * (1.0 - z[i]);
                            da_h[i] = d * z[i] * (1.0 - h_tilde[i] * h_tilde[i]);
                            da_z[i] = d * (h_tilde[i] - h_prev[i]) * z[i] * (1.0 - z[i]);
                            rh[i] = r[i] * h_prev[i];
                        }
                        let x_t = x_of(t);
                        gg.w_xh.add_outer(&da_h, x_t);
                        gg.w_hh.add_outer(&da_h, &rh);
                        for i in 0..hidden {
                            gg.b_h[i] += da_h[i];
                            ds_total[i] += da_h[i];
                        }
                        drh.iter_mut().for_each(|v| *v = 0.0);
                        g.w_hh.matvec_t_add(&da_h, &mut drh);
                        for i in 0..hidden {
                            carry[i] += drh[i] * r[i];
                            da_r[i] = drh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
                        }
                        gg.w_xz.add_outer(&da_z, x_t);
                        gg.w_hz.add_outer(&da_z, h_prev);
                        gg.w_xr.add_outer(&da_r, x_t);
                        gg.w_hr.add_outer(&da_r, h_prev);
                        for i in 0..hidden {
                            gg.b_z[i] += da_z[i];
                            gg.b_r[i] += da_r[i];
                        }
                        g.w_hz.matvec_t_add(&da_z, &mut carry);
                        g.w_hr.matvec_t_add(&da_r, &mut carry);

                        let dx = &mut dx_seq[t * dx_width..(t + 1) * dx_width];
                        g.w_xr.matvec_t_add(&da_r, dx);
                        g.w_xz.matvec_t_add(&da_z, dx);
                        g.w_xh.matvec_t_add(&da_h, dx);
                    }

                    if let (Some(_), Some(gsp)) = (&g.struct_proj, gg.struct_proj.as_mut()) {
                        let [k_norm, m_norm] = cache.struct_feats;
                        for i in 0..hidden {
                            gsp.w_sh[i] += ds_total[i] * k_norm;
                            gsp.w_mh[i] += ds_total[i] * m_norm;
                            gsp.b_s[i] += ds_total[i];
                        }
                    }
                }
                (Layer::Lstm(m), LayerCache::Lstm(c), Layer::Lstm(gm)) => {
                    let mut carry_h = vec![0.0; hidden];
                    let mut carry_c = vec![0.0; hidden];
                    let mut dh_t = vec![0.0; hidden];
                    let mut dc_t = vec![0.0; hidden];
                    let mut da_i = vec![0.0; hidden];
                    let mut da_f = vec![0.0; hidden];
                    let mut da_o = vec![0.0; hidden];
                    let mut da_g = vec![0.0; hidden];

                    for t in (0..t_len).rev() {
                        let gi = &c.i[t * hidden..(t + 1) * hidden];
                        let gf = &c.f[t * hidden..(t + 1) * hidden];
                        let go = &c.o[t * hidden..(t + 1) * hidden];
                        let gc = &c.g[t * hidden..(t + 1) * hidden];
                        let cc = &c.c[t * hidden..(t + 1) * hidden];
                        let (h_prev, c_prev): (&[f64], &[f64]) = if t == 0 {
                            (&zero_h, &zero_h)
                        } else {
                            (
                                &c.h[(t - 1) * hidden..t * hidden],
                                &c.c[(t - 1) * hidden..t * hidden],
                            )
                        };
                        for i in 0..hidden {
                            dh_t[i] = dh_seq[t * hidden + i] + carry_h[i];
                            let tc = cc[i].tanh();
                            let d_o = dh_t[i] * tc;
                            dc_t[i] = dh_t[i] * go[i] * (1.0 - tc * tc) + carry_c[i];
                            da_o[i] = d_o * go[i] * (1.0 - go[i]);
                            da_f[i] = dc_t[i] * c_prev[i] * gf[i] * (1.0 - gf[i]);
                            da_i[i] = dc_t[i] * gc[i] * gi[i] * (1.0 - gi[i]);
                            da_g[i] = dc_t[i] * gi[i] * (1.0 - gc[i] * gc[i]);
                            carry_c[i] = dc_t[i] * gf[i];
                        }
                        let x_t = x_of(t);
                        gm.w_xi.add_outer(&da_i, x_t);
                        gm.w_xf.add_outer(&da_f, x_t);
                        gm.w_xo.add_outer(&da_o, x_t);
                        gm.w_xg.add_outer(&da_g, x_t);
                        gm.w_hi.add_outer(&da_i, h_prev);
                        gm.w_hf.add_outer(&da_f, h_prev);
                        gm.w_ho.add_outer(&da_o, h_prev);
                        gm.w_hg.add_outer(&da_g, h_prev);
                        for i in 0..hidden {
                            gm.b_i[i] += da_i[i];
                            gm.b_f[i] += da_f[i];
                            gm.b_o[i] += da_o[i];
                            gm.b_g[i] += da_g[i];
                        }
                        carry_h.iter_mut().for_each(|v| *v = 0.0);
                        m.w_hi.matvec_t_add(&da_i, &mut carry_h);
                        m.w_hf.matvec_t_add(&da_f, &mut carry_h);
                        m.w_ho.matvec_t_add(&da_o, &mut carry_h);
                        m.w_hg.matvec_t_add(&da_g, &mut carry_h);

                        let dx = &mut dx_seq[t * dx_width..(t + 1) * dx_width];
                        m.w_xi.matvec_t_add(&da_i, dx);
                        m.w_xf.matvec_t_add(&da_f, dx);
                        m.w_xo.matvec_t_add(&da_o, dx);
                        m.w_xg.matvec_t_add(&da_g, dx);
                    }
                }
                _ => unreachable!("cache kinds validated above"),
            }

            if l > 0 {
                dh_seq = dx_seq;
            }
        }

        Ok(grads)
    }
}

/// Per-layer activations retained by the forward pass. Buffers are flat
/// `T × hidden` slabs; `h` row `t` is the state after consuming input `t`
/// (the initial state is the zero vector and is not stored).
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub seq_len: usize,
    pub input: Vec<f64>,
    pub struct_feats: [f64; 2],
    pub layers: Vec<LayerCache>,
}

#[derive(Clone, Debug)]
pub enum LayerCache {
    Gru(GruLayerCache),
    Lstm(LstmLayerCache),
}

#[derive(Clone, Debug)]
pub struct GruLayerCache {
    pub s: Option<Vec<f64>>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LstmLayerCache {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

fn mse_and_grad(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}

/// Central finite difference of the MSE loss along one flat coordinate.
pub fn fd_gradient(
    model: &Model,
    gm_seq: &[f64],
    struct_feats: [f64; 2],
    target: &[f64],
    eps: f64,
    flat_index: usize,
) -> f64 {
    let mut flat = model.to_flat();
    let original = flat[flat_index];
    let mut work = model.clone();

    flat[flat_index] = original + eps;
    work.copy_from_flat(&flat);
    let (pred, _) = work.forward(gm_seq, struct_feats);
    let (lp, _) = mse_and_grad(&pred, target);

    flat[flat_index] = original - eps;
    work.copy_from_flat(&flat);
    let (pred, _) = work.forward(gm_seq, struct_feats);
    let (lm, _) = mse_and_grad(&pred, target);

    (lp - lm) / (2.0 * eps)
}

/// Builds a deterministic random instance for gradient checking: a model,
/// a ground-motion sequence, structural features, and a target.
pub fn random_check_case(
    arch: ModelArch,
    seed: u64,
    seq_len: usize,
) -> (Model, Vec<f64>, [f64; 2], Vec<f64>) {
    let model = init_params(arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let gm: Vec<f64> = (0..seq_len * arch.input_size1)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let feats = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let target: Vec<f64> = (0..seq_len * arch.output_size)
        .map(|_| rng.gen_range(-0.5..0.5))
        .collect();
    (model, gm, feats, target)
}

/// Result of a full finite-difference sweep.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub n_params: usize,
}

/// Checks the analytic BPTT gradient of the MSE loss against central finite
/// differences, coordinate by coordinate. Differences below 1e-10 absolute
/// are treated as round-off and contribute zero relative error.
pub fn gradient_check(
    model: &Model,
    gm_seq: &[f64],
    struct_feats: [f64; 2],
    target: &[f64],
    eps: f64,
) -> GradCheckReport {
    let (pred, cache) = model.forward(gm_seq, struct_feats);
    let (_, dpred) = mse_and_grad(&pred, target);
    let grads = model
        .backward(&cache, &dpred)
        .expect("cache from matching forward");
    let analytic = grads.to_flat();

    let names: Vec<(String, usize)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.len()))
        .collect();
    let name_of = |idx: usize| -> (String, usize) {
        let mut off = 0;
        for (n, len) in &names {
            if idx < off + len {
                return (n.clone(), idx - off);
            }
            off += len;
        }
        ("?".into(), idx)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        n_params: analytic.len(),
    };
    for i in 0..analytic.len() {
        let numeric = fd_gradient(model, gm_seq, struct_feats, target, eps, i);
        let err = (numeric - analytic[i]).abs();
        if err <= 1e-10 {
            continue;
        }
        let rel = err / numeric.abs().max(analytic[i].abs()).max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            let (tensor, local) = name_of(i);
            report.worst_tensor = tensor;
            report.worst_index = local;
        }
    }
    report
}

/// Saves a checkpoint: JSON header carrying the architecture and
/// caller-supplied metadata, plus one checksummed array per tensor.
pub fn save_checkpoint(
    model: &Model,
    extra_meta: &serde_json::Value,
    path: impl AsRef<std::path::Path>,
) -> Result<(), NetworkError> {
    let meta = serde_json::json!({
        "arch": model.arch,
        "extra": extra_meta,
    });
    let arrays: Vec<(String, Vec<f64>)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.to_vec()))
        .collect();
    let container = Container::new("checkpoint", &meta, arrays)?;
    container.save(path)?;
    Ok(())
}

/// Loads a checkpoint written by [`save_checkpoint`]; returns the model and
/// the caller metadata.
pub fn load_checkpoint(
    path: impl AsRef<std::path::Path>,
) -> Result<(Model, serde_json::Value), NetworkError> {
    let mut container = Container::load(path, "checkpoint")?;
    let arch: ModelArch = serde_json::from_value(
        container
            .meta
            .get("arch")
            .cloned()
            .ok_or_else(|| ContainerError::Malformed("checkpoint missing arch".into()))?,
    )
    .map_err(ContainerError::from)?;
    arch.validate()?;
    let extra = container
        .meta
        .get("extra")
        .cloned()
        .unwrap_or(serde_json::Value::Null);
    let mut model = Model::zeros(arch);
    for (name, tensor) in model.named_tensors_mut() {
        let data = container.take_array(&name)?;
        if data.len() != tensor.len() {
            return Err(NetworkError::ShapeMismatch(format!(
                "tensor '{name}' has {} values, expected {}",
                data.len(),
                tensor.len()
            )));
        }
        tensor.copy_from_slice(&data);
    }
    Ok((model, extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sequence(seed: u64, t: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gm: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..t).map(|_| rng.gen_range(-0.5..0.5)).collect();
        (gm, target)
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_correct_shapes() {
        let arch = ModelArch::new(CellKind::McGru, 2, 64);
        let a = init_params(arch, 5);
        let b = init_params(arch, 5);
        assert_eq!(a, b);
        let c = init_params(arch, 6);
        assert_ne!(a, c);

        match &a.layers[0] {
            Layer::Gru(g) => {
                assert_eq!((g.w_xr.rows(), g.w_xr.cols()), (64, 1));
                assert_eq!((g.w_hr.rows(), g.w_hr.cols()), (64, 64));
                assert!(g.b_r.iter().all(|&v| v == 0.0));
                assert!(g.b_z.iter().all(|&v| v == 0.0));
                assert!(g.b_h.iter().all(|&v| v == 0.0));
                let sp = g.struct_proj.as_ref().unwrap();
                assert!(sp.b_s.iter().all(|&v| v == 0.0));
                let bound = 1.0 / 8.0;
                assert!(g.w_hr.as_slice().iter().all(|v| v.abs() <= bound));
            }
            _ => panic!("expected GRU layer"),
        }
        match &a.layers[1] {
            Layer::Gru(g) => assert_eq!((g.w_xr.rows(), g.w_xr.cols()), (64, 64)),
            _ => panic!("expected GRU layer"),
        }
    }

    #[test]
    fn zero_input_zero_bias_forward_is_zero() {
        let arch = ModelArch::new(CellKind::McGru, 2, 8);
        let mut model = init_params(arch, 3);
        // Zero the structural projections so S = 0; biases are already zero.
        for layer in &mut model.layers {
            if let Layer::Gru(g) = layer {
                g.struct_proj = Some(StructProj::zeros(8));
            }
        }
        let gm = vec![0.0; 50];
        let (pred, _) = model.forward(&gm, [0.3, -0.4]);
        assert!(pred.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn output_length_tracks_input_length() {
        let arch = ModelArch::new(CellKind::McGru, 2, 4);
        let model = init_params(arch, 1);
        let gm = vec![0.1; 1500];
        let (pred, cache) = model.forward(&gm, [0.0, 0.0]);
        assert_eq!(pred.len(), 1500);
        assert_eq!(cache.seq_len, 1500);
    }

    #[test]
    fn forward_is_sensitive_to_structure_iff_projection_nonzero() {
        let arch = ModelArch::new(CellKind::McGru, 2, 6);
        let model = init_params(arch, 11);
        let (gm, _) = random_sequence(2, 40);
        let (p1, _) = model.forward(&gm, [-0.5, 0.2]);
        let (p2, _) = model.forward(&gm, [0.8, -0.9]);
        let max_diff = p1
            .iter()
            .zip(&p2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 0.0, "nonzero projections must react to structure");

        let mut frozen = model.clone();
        for layer in &mut frozen.layers {
            if let Layer::Gru(g) = layer {
                let sp = g.struct_proj.as_mut().unwrap();
                sp.w_sh.iter_mut().for_each(|v| *v = 0.0);
                sp.w_mh.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (p1, _) = frozen.forward(&gm, [-0.5, 0.2]);
        let (p2, _) = frozen.forward(&gm, [0.8, -0.9]);
        assert_eq!(p1, p2, "zero projections must ignore structure");
    }

    #[test]
    fn mcgru_with_zero_projection_equals_gru_on_shared_weights() {
        let arch = ModelArch::new(CellKind::McGru, 2, 5);
        let mut mc = init_params(arch, 21);
        for layer in &mut mc.layers {
            if let Layer::Gru(g) = layer {
                g.struct_proj = Some(StructProj::zeros(5));
            }
        }
        let mut gru = mc.clone();
        gru.arch.cell = CellKind::Gru;
        for layer in &mut gru.layers {
            if let Layer::Gru(g) = layer {
                g.struct_proj = None;
            }
        }
        let (gm, _) = random_sequence(4, 60);
        let (pm, _) = mc.forward(&gm, [0.7, -0.1]);
        let (pg, _) = gru.forward(&gm, [0.7, -0.1]);
        assert_eq!(pm, pg);
    }

    #[test]
    fn forward_backward_are_bit_reproducible() {
        let arch = ModelArch::new(CellKind::McGru, 2, 7);
        let model = init_params(arch, 9);
        let (gm, target) = random_sequence(8, 30);
        let (p1, c1) = model.forward(&gm, [0.2, 0.3]);
        let (p2, c2) = model.forward(&gm, [0.2, 0.3]);
        assert_eq!(p1, p2);
        let (_, d1) = mse_and_grad(&p1, &target);
        let (_, d2) = mse_and_grad(&p2, &target);
        let g1 = model.backward(&c1, &d1).unwrap();
        let g2 = model.backward(&c2, &d2).unwrap();
        assert_eq!(g1.to_flat(), g2.to_flat());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let arch = ModelArch::new(CellKind::McGru, 2, 4);
        let model = init_params(arch, 13);
        let (gm, _) = random_sequence(3, 25);
        let (_, cache) = model.forward(&gm, [0.1, 0.9]);
        let grads = model.backward(&cache, &vec![0.0; 25]).unwrap();
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_timestep_gradients_match_hand_chain_rule() {
        // T = 1, h_prev = 0: h = z ⊙ h̃, y = W_out·h + b_out.
        // For the squared error L = (y − y*)², the head and candidate-path
        // gradients follow from a short chain rule with no recurrence.
        let arch = ModelArch {
            cell: CellKind::McGru,
            num_layers: 1,
            hidden_size: 2,
            input_size1: 1,
            input_size2: 2,
            output_size: 1,
        };
        let model = init_params(arch, 33);
        let x = 0.8;
        let feats = [0.5, -0.25];
        let target = [0.3];
        let (pred, cache) = model.forward(&[x], feats);
        let (_, dpred) = mse_and_grad(&pred, &target);
        let grads = model.backward(&cache, &dpred).unwrap();

        let (g, c, gg) = match (&model.layers[0], &cache.layers[0], &grads.layers[0]) {
            (Layer::Gru(g), LayerCache::Gru(c), Layer::Gru(gg)) => (g, c, gg),
            _ => unreachable!(),
        };
        let dy = dpred[0];
        // Head gradients.
        for i in 0..2 {
            assert!((grads.head.w_out.get(0, i) - dy * c.h[i]).abs() < 1e-15);
        }
        assert!((grads.head.b_out[0] - dy).abs() < 1e-15);
        // dh = W_outᵀ·dy; with h_prev = 0: dz = dh·h̃·z(1−z), da_h = dh·z·(1−h̃²).
        for i in 0..2 {
            let dh = model.head.w_out.get(0, i) * dy;
            let da_z = dh * c.h_tilde[i] * c.z[i] * (1.0 - c.z[i]);
            let da_h = dh * c.z[i] * (1.0 - c.h_tilde[i] * c.h_tilde[i]);
            assert!((gg.w_xz.get(i, 0) - da_z * x).abs() < 1e-15);
            assert!((gg.w_xh.get(i, 0) - da_h * x).abs() < 1e-15);
            assert!((gg.b_z[i] - da_z).abs() < 1e-15);
            assert!((gg.b_h[i] - da_h).abs() < 1e-15);
            // W_hr/W_hz/W_hh gradients vanish (h_prev = 0, and the reset
            // path is multiplied by h_prev).
            for j in 0..2 {
                assert_eq!(gg.w_hz.get(i, j), 0.0);
                assert_eq!(gg.w_hh.get(i, j), 0.0);
                assert_eq!(gg.w_hr.get(i, j), 0.0);
            }
            assert_eq!(gg.b_r[i], 0.0);
            // Structural projection gradient: dS = da_h.
            let sp = gg.struct_proj.as_ref().unwrap();
            assert!((sp.w_sh[i] - da_h * feats[0]).abs() < 1e-15);
            assert!((sp.w_mh[i] - da_h * feats[1]).abs() < 1e-15);
            assert!((sp.b_s[i] - da_h).abs() < 1e-15);
        }
        let _ = g;
    }

    #[test]
    fn bptt_matches_finite_differences_mcgru() {
        let arch = ModelArch::new(CellKind::McGru, 2, 4);
        let model = init_params(arch, 17);
        let (gm, target) = random_sequence(6, 5);
        let report = gradient_check(&model, &gm, [0.3, -0.7], &target, 1e-6);
        assert!(
            report.max_rel_error < 1e-5,
            "worst {} [{}] rel error {:.3e}",
            report.worst_tensor,
            report.worst_index,
            report.max_rel_error
        );
    }

    #[test]
    fn bptt_matches_finite_differences_gru_and_lstm() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            let arch = ModelArch::new(cell, 2, 3);
            let model = init_params(arch, 19);
            let (gm, target) = random_sequence(7, 6);
            let report = gradient_check(&model, &gm, [0.0, 0.0], &target, 1e-6);
            assert!(
                report.max_rel_error < 1e-5,
                "{cell:?}: worst {} rel error {:.3e}",
                report.worst_tensor,
                report.max_rel_error
            );
        }
    }

    #[test]
    fn head_only_model_checks_to_roundoff() {
        // The loss is exactly quadratic in the head parameters, so the
        // central difference is exact for any step; a larger eps avoids
        // cancellation noise entirely.
        let arch = ModelArch::new(CellKind::Gru, 1, 3);
        let model = init_params(arch, 23);
        let (gm, target) = random_sequence(10, 8);
        let (pred, cache) = model.forward(&gm, [0.0, 0.0]);
        let (_, dpred) = mse_and_grad(&pred, &target);
        let grads = model.backward(&cache, &dpred).unwrap();
        let flat = grads.to_flat();
        let head_offset = flat.len() - 4; // w_out (1×3) + b_out (1)
        for i in head_offset..flat.len() {
            let fd = fd_gradient(&model, &gm, [0.0, 0.0], &target, 1e-4, i);
            let rel = (fd - flat[i]).abs() / fd.abs().max(flat[i].abs()).max(1e-8);
            assert!(rel < 1e-9, "head coordinate {i} rel error {rel:.3e}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let arch = ModelArch::new(CellKind::McGru, 1, 3);
        let model = init_params(arch, 29);
        let (gm, target) = random_sequence(12, 6);
        let (pred, cache) = model.forward(&gm, [0.4, 0.4]);
        let (_, dpred) = mse_and_grad(&pred, &target);
        let grads = model.backward(&cache, &dpred).unwrap();
        let mut flat = grads.to_flat();

        // Locate W_hh inside the flat layout and corrupt one coordinate.
        let mut offset = 0;
        let mut whh_range = None;
        for (name, t) in model.named_tensors() {
            if name == "layer0.w_hh" {
                whh_range = Some(offset..offset + t.len());
                break;
            }
            offset += t.len();
        }
        let whh_range = whh_range.unwrap();
        let victim = whh_range.start + 2;
        flat[victim] = flat[victim] * 3.0 + 0.05;

        let fd = fd_gradient(&model, &gm, [0.4, 0.4], &target, 1e-6, victim);
        let rel = (fd - flat[victim]).abs() / fd.abs().max(flat[victim].abs()).max(1e-8);
        assert!(rel > 1e-2, "corruption must be visible, rel = {rel:.3e}");
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let arch = ModelArch::new(CellKind::McGru, 2, 4);
        let model = init_params(arch, 31);
        let other = init_params(ModelArch::new(CellKind::McGru, 1, 4), 31);
        let (gm, _) = random_sequence(14, 10);
        let (_, cache) = other.forward(&gm, [0.0, 0.0]);
        assert!(matches!(
            model.backward(&cache, &vec![0.0; 10]),
            Err(NetworkError::CacheMismatch(_))
        ));
        let (pred, cache) = model.forward(&gm, [0.0, 0.0]);
        assert!(matches!(
            model.backward(&cache, &pred[..5].to_vec()),
            Err(NetworkError::CacheMismatch(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let arch = ModelArch::new(CellKind::McGru, 2, 6);
        let model = init_params(arch, 41);
        let meta = serde_json::json!({"seed": 41, "note": "round trip"});
        save_checkpoint(&model, &meta, &path).unwrap();
        let (back, extra) = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(extra["seed"], 41);
    }

    #[test]
    fn lstm_state_count_and_zero_step() {
        let arch = ModelArch::new(CellKind::Lstm, 2, 4);
        let model = init_params(arch, 43);
        let gm = vec![0.0; 20];
        let (pred, _) = model.forward(&gm, [0.1, 0.2]);
        // Zero input and zero biases keep the LSTM at the origin.
        assert!(pred.iter().all(|&y| y == 0.0));
    }
}
