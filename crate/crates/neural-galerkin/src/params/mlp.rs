//! Feed-forward sinusoidal networks with an optional exactly periodic input
//! embedding.
//!
//! The forward pass propagates spatial tangents (first and second order)
//! analytically through every layer; parameter gradients of the value and of
//! first spatial derivatives come from reverse sweeps over the same cached
//! pass. No finite differences anywhere.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    Activation, Architecture, BasisJet, Jet, JetRequest, LayerLayout, ParamLayout, ParamVector,
    Parametrization, ParamsError, Separable,
};

#[derive(Debug, Clone, Copy)]
struct LayerSpec {
    rows: usize,
    cols: usize,
    bias: bool,
    act: Activation,
}

/// Sinusoidal multilayer perceptron `u(θ, x)`.
///
/// Layer stack: optional periodic embedding `γ(x) = (sin(2πx_j/L_j),
/// cos(2πx_j/L_j))_j` followed by a trainable affine map and `sin`, then the
/// hidden layers, then a linear output layer (bias optional). With a periodic
/// layer the network is exactly `L_j`-periodic along every axis for every θ.
#[derive(Debug, Clone)]
pub struct MlpNet {
    arch: Architecture,
    specs: Vec<LayerSpec>,
    layout: ParamLayout,
    /// Flat indices of all parameters below the output layer (separable α).
    alpha_idx: Vec<usize>,
    /// Flat indices of the output weights in basis-major order (separable β).
    beta_idx: Vec<usize>,
}

impl MlpNet {
    pub fn new(arch: Architecture) -> Result<Self, ParamsError> {
        arch.validate()?;
        let mut specs = Vec::new();
        let mut width = match &arch.periodic {
            Some(p) => {
                // The embedding γ doubles the coordinate count (sin and cos
                // per axis); the trainable part of the periodic layer is an
                // affine map followed by sin.
                specs.push(LayerSpec {
                    rows: p.width,
                    cols: 2 * arch.input_dim,
                    bias: true,
                    act: Activation::Sin,
                });
                p.width
            }
            None => arch.input_dim,
        };
        for &h in &arch.hidden {
            specs.push(LayerSpec { rows: h, cols: width, bias: true, act: arch.activation });
            width = h;
        }
        specs.push(LayerSpec {
            rows: arch.output_dim,
            cols: width,
            bias: arch.output_bias,
            act: Activation::Identity,
        });

        let mut layers = Vec::with_capacity(specs.len());
        let mut offset = 0;
        for s in &specs {
            let weight_offset = offset;
            offset += s.rows * s.cols;
            let bias_offset = s.bias.then_some(offset);
            if s.bias {
                offset += s.rows;
            }
            layers.push(LayerLayout { weight_offset, rows: s.rows, cols: s.cols, bias_offset });
        }
        let layout = ParamLayout { layers, total: offset };

        let out = *layout.layers.last().expect("at least the output layer");
        let (alpha_idx, beta_idx) = if arch.output_bias {
            (Vec::new(), Vec::new())
        } else {
            let m = arch.output_dim;
            let n_basis = out.cols;
            let mut beta = Vec::with_capacity(n_basis * m);
            for i in 0..n_basis {
                for r in 0..m {
                    beta.push(out.weight_index(r, i));
                }
            }
            ((0..out.weight_offset).collect(), beta)
        };

        Ok(MlpNet { arch, specs, layout, alpha_idx, beta_idx })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Seeded initialization: per layer, weights (row-major) then bias, each
    /// uniform on `[-1/√fan_in, 1/√fan_in]`.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut theta = DVector::zeros(self.layout.total);
        for (spec, lay) in self.specs.iter().zip(&self.layout.layers) {
            let bound = 1.0 / (spec.cols as f64).sqrt();
            for r in 0..spec.rows {
                for c in 0..spec.cols {
                    theta[lay.weight_index(r, c)] = rng.gen_range(-bound..=bound);
                }
            }
            if let Some(b0) = lay.bias_offset {
                for r in 0..spec.rows {
                    theta[b0 + r] = rng.gen_range(-bound..=bound);
                }
            }
        }
        theta
    }

    fn embedding(&self, x: &[f64], need_d: bool, need_d2: bool) -> Stage {
        let d = self.arch.input_dim;
        match &self.arch.periodic {
            None => {
                let a = DVector::from_column_slice(x);
                let da = need_d
                    .then(|| (0..d).map(|j| DVector::from_fn(d, |k, _| f64::from(k == j))).collect())
                    .unwrap_or_default();
                let d2a = need_d2
                    .then(|| vec![DVector::zeros(d); d * (d + 1) / 2])
                    .unwrap_or_default();
                Stage { a, da, d2a }
            }
            Some(p) => {
                let mut a = DVector::zeros(2 * d);
                for j in 0..d {
                    let w = std::f64::consts::TAU / p.periods[j];
                    a[j] = (w * x[j]).sin();
                    a[j + d] = (w * x[j]).cos();
                }
                let da = need_d
                    .then(|| {
                        (0..d)
                            .map(|j| {
                                let w = std::f64::consts::TAU / p.periods[j];
                                let mut v = DVector::zeros(2 * d);
                                v[j] = w * (w * x[j]).cos();
                                v[j + d] = -w * (w * x[j]).sin();
                                v
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                let d2a = need_d2
                    .then(|| {
                        pair_indices(d)
                            .map(|(j, k)| {
                                let mut v = DVector::zeros(2 * d);
                                if j == k {
                                    let w = std::f64::consts::TAU / p.periods[j];
                                    v[j] = -w * w * (w * x[j]).sin();
                                    v[j + d] = -w * w * (w * x[j]).cos();
                                }
                                v
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                Stage { a, da, d2a }
            }
        }
    }

    /// Forward pass through the first `n_layers` trainable layers.
    fn forward(
        &self,
        theta: &ParamVector,
        x: &[f64],
        n_layers: usize,
        need_d: bool,
        need_d2: bool,
        keep_caches: bool,
    ) -> (Stage, Vec<Cache>) {
        let th = theta.as_slice();
        let mut stage = self.embedding(x, need_d, need_d2);
        let mut caches = Vec::with_capacity(if keep_caches { n_layers } else { 0 });
        for (spec, lay) in self.specs.iter().zip(&self.layout.layers).take(n_layers) {
            let w = &th[lay.weight_offset..lay.weight_offset + spec.rows * spec.cols];
            let b = lay.bias_offset.map(|o| &th[o..o + spec.rows]);

            let z = affine(w, spec.rows, spec.cols, b, &stage.a);
            let dz: Vec<DVector<f64>> =
                stage.da.iter().map(|v| affine(w, spec.rows, spec.cols, None, v)).collect();
            let d2z: Vec<DVector<f64>> =
                stage.d2a.iter().map(|v| affine(w, spec.rows, spec.cols, None, v)).collect();

            let next = match spec.act {
                Activation::Sin => {
                    let sin_z = z.map(f64::sin);
                    let cos_z = z.map(f64::cos);
                    let da = (0..dz.len())
                        .map(|j| cos_z.component_mul(&dz[j]))
                        .collect::<Vec<_>>();
                    let d2a = pair_indices_for(d2z.len(), stage.da.len())
                        .map(|(idx, j, k)| {
                            let mut v = cos_z.component_mul(&d2z[idx]);
                            for r in 0..v.len() {
                                v[r] -= sin_z[r] * dz[j][r] * dz[k][r];
                            }
                            v
                        })
                        .collect::<Vec<_>>();
                    if keep_caches {
                        caches.push(Cache {
                            input: std::mem::take(&mut stage.a),
                            dinput: std::mem::take(&mut stage.da),
                            act: Activation::Sin,
                            sin_z: Some(sin_z.clone()),
                            cos_z: Some(cos_z),
                            dz,
                        });
                    }
                    Stage { a: sin_z, da, d2a }
                }
                Activation::Identity => {
                    if keep_caches {
                        caches.push(Cache {
                            input: std::mem::take(&mut stage.a),
                            dinput: std::mem::take(&mut stage.da),
                            act: Activation::Identity,
                            sin_z: None,
                            cos_z: None,
                            dz: Vec::new(),
                        });
                    }
                    Stage { a: z, da: dz, d2a: d2z }
                }
            };
            stage = next;
        }
        (stage, caches)
    }

    /// Reverse sweep for row `i` of `∇_θ u` (`grad` is `m × p`).
    fn value_grad_into(&self, theta: &ParamVector, caches: &[Cache], i: usize, grad: &mut DMatrix<f64>) {
        let th = theta.as_slice();
        let m = self.arch.output_dim;
        let mut abar = DVector::from_fn(m, |r, _| f64::from(r == i));
        for (ell, cache) in caches.iter().enumerate().rev() {
            let spec = &self.specs[ell];
            let lay = &self.layout.layers[ell];
            let zbar = match cache.act {
                Activation::Sin => cache.cos_z.as_ref().expect("sin cache").component_mul(&abar),
                Activation::Identity => abar,
            };
            for r in 0..spec.rows {
                let zr = zbar[r];
                let row = lay.weight_offset + r * spec.cols;
                for c in 0..spec.cols {
                    grad[(i, row + c)] = zr * cache.input[c];
                }
                if let Some(b0) = lay.bias_offset {
                    grad[(i, b0 + r)] = zr;
                }
            }
            let w = &th[lay.weight_offset..lay.weight_offset + spec.rows * spec.cols];
            abar = affine_t(w, spec.rows, spec.cols, &zbar);
        }
    }

    /// Reverse sweep for row `i` of `∇_θ (∂u/∂x_j)` (`grad` is `m × p`).
    fn du_grad_into(
        &self,
        theta: &ParamVector,
        caches: &[Cache],
        i: usize,
        j: usize,
        grad: &mut DMatrix<f64>,
    ) {
        let th = theta.as_slice();
        let m = self.arch.output_dim;
        let mut abar = DVector::zeros(m);
        let mut dbar = DVector::from_fn(m, |r, _| f64::from(r == i));
        for (ell, cache) in caches.iter().enumerate().rev() {
            let spec = &self.specs[ell];
            let lay = &self.layout.layers[ell];
            let (zbar, tbar) = match cache.act {
                Activation::Sin => {
                    let cos_z = cache.cos_z.as_ref().expect("sin cache");
                    let sin_z = cache.sin_z.as_ref().expect("sin cache");
                    let dzj = &cache.dz[j];
                    let mut zbar = cos_z.component_mul(&abar);
                    for r in 0..zbar.len() {
                        zbar[r] -= sin_z[r] * dzj[r] * dbar[r];
                    }
                    (zbar, cos_z.component_mul(&dbar))
                }
                Activation::Identity => (abar, dbar),
            };
            for r in 0..spec.rows {
                let row = lay.weight_offset + r * spec.cols;
                for c in 0..spec.cols {
                    grad[(i, row + c)] = zbar[r] * cache.input[c] + tbar[r] * cache.dinput[j][c];
                }
                if let Some(b0) = lay.bias_offset {
                    grad[(i, b0 + r)] = zbar[r];
                }
            }
            let w = &th[lay.weight_offset..lay.weight_offset + spec.rows * spec.cols];
            abar = affine_t(w, spec.rows, spec.cols, &zbar);
            dbar = affine_t(w, spec.rows, spec.cols, &tbar);
        }
    }
}

impl Parametrization for MlpNet {
    fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    fn param_count(&self) -> usize {
        self.layout.total
    }

    fn eval_jet(
        &self,
        theta: &ParamVector,
        x: &[f64],
        request: JetRequest,
    ) -> Result<Jet, ParamsError> {
        request.validate()?;
        self.check_args(theta, x)?;
        let d = self.arch.input_dim;
        let m = self.arch.output_dim;
        let p = self.layout.total;
        let need_d = request.order >= 1 || request.param_grad_du;
        let need_d2 = request.order >= 2;
        let keep = request.param_grad || request.param_grad_du;

        let (top, caches) = self.forward(theta, x, self.specs.len(), need_d, need_d2, keep);

        let du = (request.order >= 1).then(|| {
            DMatrix::from_fn(m, d, |i, j| top.da[j][i])
        });
        let d2u = need_d2.then(|| {
            (0..m)
                .map(|i| {
                    let mut h = DMatrix::zeros(d, d);
                    for (idx, j, k) in pair_indices_for(d * (d + 1) / 2, d) {
                        h[(j, k)] = top.d2a[idx][i];
                        h[(k, j)] = top.d2a[idx][i];
                    }
                    h
                })
                .collect()
        });
        let grad_theta = request.param_grad.then(|| {
            let mut g = DMatrix::zeros(m, p);
            for i in 0..m {
                self.value_grad_into(theta, &caches, i, &mut g);
            }
            g
        });
        let grad_theta_du = request.param_grad_du.then(|| {
            (0..d)
                .map(|j| {
                    let mut g = DMatrix::zeros(m, p);
                    for i in 0..m {
                        self.du_grad_into(theta, &caches, i, j, &mut g);
                    }
                    g
                })
                .collect()
        });

        Ok(Jet { value: top.a, du, d2u, grad_theta, grad_theta_du })
    }

    fn separable(&self) -> Option<&dyn Separable> {
        (!self.arch.output_bias).then_some(self as &dyn Separable)
    }
}

impl Separable for MlpNet {
    fn n_basis(&self) -> usize {
        self.layout.layers.last().expect("output layer").cols
    }

    fn alpha_indices(&self) -> &[usize] {
        &self.alpha_idx
    }

    fn beta_indices(&self) -> &[usize] {
        &self.beta_idx
    }

    fn basis_jet(
        &self,
        theta: &ParamVector,
        x: &[f64],
        order: u8,
    ) -> Result<BasisJet, ParamsError> {
        self.check_args(theta, x)?;
        let (top, _) = self.forward(theta, x, self.specs.len() - 1, order >= 1, false, false);
        let n = top.a.len();
        let dphi = (order >= 1).then(|| {
            DMatrix::from_fn(n, self.arch.input_dim, |i, j| top.da[j][i])
        });
        Ok(BasisJet { phi: top.a, dphi })
    }
}

/// Activations and their spatial tangents flowing through the network.
struct Stage {
    a: DVector<f64>,
    /// First-order tangents, one per spatial axis.
    da: Vec<DVector<f64>>,
    /// Second-order tangents for axis pairs `(j, k)`, `j ≤ k`.
    d2a: Vec<DVector<f64>>,
}

/// Per-layer state kept for the reverse sweeps.
struct Cache {
    input: DVector<f64>,
    dinput: Vec<DVector<f64>>,
    act: Activation,
    sin_z: Option<DVector<f64>>,
    cos_z: Option<DVector<f64>>,
    dz: Vec<DVector<f64>>,
}

/// Upper-triangular axis pairs `(j, k)`, `j ≤ k`, in storage order.
fn pair_indices(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |j| (j..d).map(move |k| (j, k)))
}

fn pair_indices_for(
    n_pairs: usize,
    d: usize,
) -> impl Iterator<Item = (usize, usize, usize)> {
    pair_indices(d).take(n_pairs).enumerate().map(|(idx, (j, k))| (idx, j, k))
}

/// `W v (+ b)` with `W` a row-major `rows × cols` slice.
fn affine(w: &[f64], rows: usize, cols: usize, b: Option<&[f64]>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * v[c];
        }
        out[r] = acc + b.map_or(0.0, |b| b[r]);
    }
    out
}

/// `Wᵀ v` with `W` a row-major `rows × cols` slice.
fn affine_t(w: &[f64], rows: usize, cols: usize, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let vr = v[r];
        for c in 0..cols {
            out[c] += row[c] * vr;
        }
    }
    out
}
