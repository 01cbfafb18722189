//! Minimal building blocks shared by the waveform and acoustic models:
//! named parameter tensors, Adam, and 1-D convolution / dense kernels with
//! hand-written backward passes. All activations are time-major
//! (`[T × channels]`, row-major).

use indexmap::IndexMap;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Uniform in `±bound`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = if bound > 0.0 {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        } else {
            vec![0.0; n]
        };
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered name → tensor map. Iteration order is insertion order, which is
/// also the order tensors are serialized in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Data of a tensor that is known to exist.
    pub fn data(&self, name: &str) -> &[f64] {
        &self
            .tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
            .data
    }

    pub fn data_mut(&mut self, name: &str) -> &mut [f64] {
        &mut self
            .tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
            .data
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(&t.shape)))
                .collect(),
        }
    }

    /// All values concatenated in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_values());
        let mut offset = 0;
        for t in self.tensors.values_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// Adds `other` element-wise; both stores must have identical layout.
    pub fn add_assign(&mut self, other: &ParamStore) {
        for (name, t) in self.tensors.iter_mut() {
            let o = other.data(name);
            t.data.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Model weights together with Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: ParamStore,
    pub step: u64,
    pub adam_m: ParamStore,
    pub adam_v: ParamStore,
}

impl ModelParams {
    pub fn new(tensors: ParamStore) -> Self {
        Self {
            adam_m: tensors.zeros_like(),
            adam_v: tensors.zeros_like(),
            tensors,
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update; increments the step counter.
    pub fn step(&self, params: &mut ModelParams, grads: &ParamStore) {
        params.step += 1;
        let t = params.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ModelParams {
            tensors,
            adam_m,
            adam_v,
            ..
        } = params;
        for (name, p) in tensors.iter_mut() {
            let g = grads.data(name);
            let m = adam_m.data_mut(name);
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = adam_v.data_mut(name);
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            if self.learning_rate == 0.0 {
                continue;
            }
            let (m, v) = (adam_m.data(name), adam_v.data(name));
            for ((w, mi), vi) in p.data.iter_mut().zip(m).zip(v) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Optimizer and schedule settings shared by both trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Directory for per-epoch checkpoints.
    pub checkpoint_dir: Option<std::path::PathBuf>,
}

impl TrainConfig {
    /// Adam at 1e-4, batch 5, 20 epochs.
    pub fn nsf_default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 5,
            max_epochs: 20,
            max_steps: None,
            seed: 0,
            checkpoint_dir: None,
        }
    }

    /// Adam at 1e-4, batch 4.
    pub fn am_default() -> Self {
        Self {
            batch_size: 4,
            ..Self::nsf_default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!(
                "learning rate {} must be finite and nonnegative",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("Adam betas must lie in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return Err("batch size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean batch loss before each update.
    pub history: Vec<f64>,
}

/// Tap offsets of a causal dilated kernel: tap `k` reads `t − k·dilation`.
pub fn causal_offsets(kernel: usize, dilation: usize) -> Vec<isize> {
    (0..kernel).map(|k| -((k * dilation) as isize)).collect()
}

/// Tap offsets of a centered ("same") kernel of odd size.
pub fn centered_offsets(kernel: usize) -> Vec<isize> {
    let half = (kernel / 2) as isize;
    (0..kernel as isize).map(|k| k - half).collect()
}

/// `y[t, o] = b[o] + Σ_k Σ_i w[o, i, k] · x[t + offsets[k], i]`, with zeros
/// outside `0..t_len`. Weights have shape `[cout, cin, kernel]`.
pub fn conv1d_forward(
    x: &[f64],
    t_len: usize,
    cin: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
    offsets: &[isize],
) -> Vec<f64> {
    let kernel = offsets.len();
    debug_assert_eq!(w.len(), cout * cin * kernel);
    // regroup weights as [k][o][i] for contiguous inner loops
    let mut wk = vec![0.0; w.len()];
    for o in 0..cout {
        for i in 0..cin {
            for k in 0..kernel {
                wk[(k * cout + o) * cin + i] = w[(o * cin + i) * kernel + k];
            }
        }
    }
    let mut y = vec![0.0; t_len * cout];
    for t in 0..t_len {
        let yt = &mut y[t * cout..(t + 1) * cout];
        yt.copy_from_slice(b);
        for (k, &off) in offsets.iter().enumerate() {
            let src = t as isize + off;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let xs = &x[src as usize * cin..(src as usize + 1) * cin];
            let wkk = &wk[k * cout * cin..(k + 1) * cout * cin];
            for (o, yo) in yt.iter_mut().enumerate() {
                let row = &wkk[o * cin..(o + 1) * cin];
                *yo += row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    y
}

/// Backward of [`conv1d_forward`]: accumulates into `dx`, `dw`, `db`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &[f64],
    t_len: usize,
    cin: usize,
    w: &[f64],
    cout: usize,
    offsets: &[isize],
    dy: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    let kernel = offsets.len();
    let mut wk = vec![0.0; w.len()];
    for o in 0..cout {
        for i in 0..cin {
            for k in 0..kernel {
                wk[(k * cout + o) * cin + i] = w[(o * cin + i) * kernel + k];
            }
        }
    }
    let mut dwk = vec![0.0; w.len()];
    for t in 0..t_len {
        let dyt = &dy[t * cout..(t + 1) * cout];
        for (o, g) in dyt.iter().enumerate() {
            db[o] += g;
        }
        for (k, &off) in offsets.iter().enumerate() {
            let src = t as isize + off;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let s = src as usize;
            let xs = &x[s * cin..(s + 1) * cin];
            let dxs = &mut dx[s * cin..(s + 1) * cin];
            let base = k * cout * cin;
            for (o, &g) in dyt.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = base + o * cin;
                for i in 0..cin {
                    dwk[row + i] += g * xs[i];
                    dxs[i] += g * wk[row + i];
                }
            }
        }
    }
    for o in 0..cout {
        for i in 0..cin {
            for k in 0..kernel {
                dw[(o * cin + i) * kernel + k] += dwk[(k * cout + o) * cin + i];
            }
        }
    }
}

/// `y = W x + b` for one vector; `W` is `[out, in]`.
pub fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| {
            bo + w[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(x)
                .map(|(a, c)| a * c)
                .sum::<f64>()
        })
        .collect()
}

/// Backward of [`dense`]: accumulates `dW`, `db` and `dx`.
pub fn dense_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let n_in = x.len();
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
}
