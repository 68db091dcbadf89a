use alloc::vec;
use alloc::vec::Vec;

use super::{apply_layer, Dataset, LayerKind, LossKind, Model, Target};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradient of one layer's parameters; both vectors empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ParamGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| ParamGrad { weight: vec![0.0; l.weight.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.layers {
            g.weight.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= k);
        }
    }

    pub fn clear(&mut self) {
        self.scale(0.0);
    }
}

/// Which layers need parameter gradients. Backpropagation stops below the
/// lowest one.
#[derive(Debug, Clone, PartialEq)]
pub struct GradScope {
    needed: Vec<bool>,
}

impl GradScope {
    pub fn all(model: &Model) -> Self {
        GradScope { needed: model.layers.iter().map(|l| l.kind.has_params()).collect() }
    }

    pub fn layers(model: &Model, layers: &[usize]) -> Self {
        let mut needed = vec![false; model.layers.len()];
        for &l in layers {
            if l < needed.len() && model.layers[l].kind.has_params() {
                needed[l] = true;
            }
        }
        GradScope { needed }
    }

    fn lowest(&self) -> Option<usize> {
        self.needed.iter().position(|&n| n)
    }
}

/// Forward one sample, backpropagate, and add its parameter gradients into
/// `grads`. Returns the sample loss.
pub fn loss_and_grads(
    model: &Model,
    input: &Tensor,
    target: &Target,
    loss: LossKind,
    scope: &GradScope,
    grads: &mut Gradients,
) -> Result<f64> {
    let n = model.layers.len();
    let mut shapes = Vec::with_capacity(n + 1);
    let mut acts = Vec::with_capacity(n + 1);
    shapes.push(input.shape().to_vec());
    acts.push(input.data().to_vec());
    for (i, layer) in model.layers.iter().enumerate() {
        let out_shape = layer.output_shape(i, &shapes[i])?;
        let out = apply_layer(layer, &shapes[i], &out_shape, &acts[i]);
        shapes.push(out_shape);
        acts.push(out);
    }
    let y = &acts[n];

    let fused = n > 0
        && model.layers[n - 1].kind == LayerKind::Softmax
        && loss == LossKind::CrossEntropy
        && matches!(target, Target::Class(_));
    let (value, mut g, mut top) = if fused {
        let Target::Class(c) = *target else { unreachable!() };
        if c >= y.len() {
            return Err(Error::ClassOutOfRange { class: c, classes: y.len() });
        }
        let z = &acts[n - 1];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + libm::log(z.iter().map(|v| libm::exp(v - m)).sum::<f64>());
        let mut g = y.clone();
        g[c] -= 1.0;
        (lse - z[c], g, n - 1)
    } else {
        let out = Tensor::new(&shapes[n], y.clone())?;
        let value = super::loss_eval(&out, target, loss)?;
        let g = match (loss, target) {
            (LossKind::CrossEntropy, Target::Class(c)) => {
                let mut g = vec![0.0; y.len()];
                g[*c] = -1.0 / y[*c];
                g
            }
            (LossKind::Mse, Target::Values(t)) => {
                let k = 2.0 / y.len() as f64;
                y.iter().zip(t.data()).map(|(a, b)| k * (a - b)).collect()
            }
            (LossKind::Mse, Target::Class(c)) => {
                let k = 2.0 / y.len() as f64;
                y.iter().enumerate().map(|(i, a)| k * (a - if i == *c { 1.0 } else { 0.0 })).collect()
            }
            _ => unreachable!("loss_eval rejects the remaining pairs"),
        };
        (value, g, n)
    };
    if !value.is_finite() {
        return Err(Error::NonFinite { context: "loss", index: 0 });
    }

    let Some(lowest) = scope.lowest() else { return Ok(value) };
    while top > lowest {
        let i = top - 1;
        let layer = &model.layers[i];
        let x = &acts[i];
        let need_input_grad = i > lowest;
        g = match layer.kind {
            LayerKind::Dense => {
                let n_in = x.len();
                let w = layer.weight.data();
                if scope.needed[i] {
                    let pg = &mut grads.layers[i];
                    for (o, &go) in g.iter().enumerate() {
                        pg.bias[o] += go;
                        let row = &mut pg.weight[o * n_in..(o + 1) * n_in];
                        row.iter_mut().zip(x).for_each(|(r, xi)| *r += go * xi);
                    }
                }
                if need_input_grad {
                    let mut dx = vec![0.0; n_in];
                    for (o, &go) in g.iter().enumerate() {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        dx.iter_mut().zip(row).for_each(|(d, wv)| *d += go * wv);
                    }
                    dx
                } else {
                    Vec::new()
                }
            }
            LayerKind::Conv2d => conv_backward(
                layer,
                &shapes[i],
                &shapes[i + 1],
                x,
                &g,
                scope.needed[i].then(|| &mut grads.layers[i]),
                need_input_grad,
            ),
            LayerKind::Relu => g.iter().zip(x).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect(),
            LayerKind::Flatten => g,
            LayerKind::Softmax => {
                let s = &acts[i + 1];
                let dot: f64 = g.iter().zip(s).map(|(a, b)| a * b).sum();
                s.iter().zip(&g).map(|(si, gi)| si * (gi - dot)).collect()
            }
        };
        top = i;
    }
    Ok(value)
}

fn conv_backward(
    layer: &super::Layer,
    in_shape: &[usize],
    out_shape: &[usize],
    x: &[f64],
    g: &[f64],
    mut pg: Option<&mut ParamGrad>,
    need_input_grad: bool,
) -> Vec<f64> {
    let ws = layer.weight.shape();
    let (cin, kh, kw) = (ws[1], ws[2], ws[3]);
    let (h, w) = (in_shape[1], in_shape[2]);
    let (cout, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (s, p) = (layer.stride as isize, layer.padding as isize);
    let wt = layer.weight.data();
    let mut dx = if need_input_grad { vec![0.0; x.len()] } else { Vec::new() };
    for o in 0..cout {
        let go = &g[o * oh * ow..(o + 1) * oh * ow];
        if let Some(pg) = pg.as_deref_mut() {
            pg.bias[o] += go.iter().sum::<f64>();
        }
        for c in 0..cin {
            let xin = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let widx = ((o * cin + c) * kh + ky) * kw + kx;
                    let wv = wt[widx];
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * w;
                        for ox in 0..ow {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                let gv = go[oy * ow + ox];
                                acc += gv * xin[base + ix as usize];
                                if need_input_grad {
                                    dx[c * h * w + base + ix as usize] += gv * wv;
                                }
                            }
                        }
                    }
                    if let Some(pg) = pg.as_deref_mut() {
                        pg.weight[widx] += acc;
                    }
                }
            }
        }
    }
    dx
}

/// Mean-loss gradients of every weight and bias over `batch`.
pub fn grad_weights(model: &Model, batch: &Dataset, loss: LossKind) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(crate::error::domain("gradient batch is empty"));
    }
    let scope = GradScope::all(model);
    let mut grads = Gradients::zeros_like(model);
    for (i, (x, t)) in batch.inputs.iter().zip(&batch.targets).enumerate() {
        loss_and_grads(model, x, t, loss, &scope, &mut grads).map_err(|e| match e {
            Error::NonFinite { context, .. } => Error::NonFinite { context, index: i },
            other => other,
        })?;
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, LayerSpec, Task};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mean_loss(model: &Model, data: &Dataset, loss: LossKind) -> f64 {
        data.inputs
            .iter()
            .zip(&data.targets)
            .map(|(x, t)| super::super::loss_eval(&model.forward(x).unwrap(), t, loss).unwrap())
            .sum::<f64>()
            / data.len() as f64
    }

    /// Central finite differences against the analytic gradient for every parameter.
    fn check_fd(model: &Model, data: &Dataset, loss: LossKind) {
        let g = grad_weights(model, data, loss).unwrap();
        let h = 1e-5;
        for (li, layer) in model.layers.iter().enumerate() {
            for which in 0..2 {
                let n = if which == 0 { layer.weight.len() } else { layer.bias.len() };
                for j in 0..n {
                    let mut plus = model.clone();
                    let mut minus = model.clone();
                    let (p, m) = if which == 0 {
                        (&mut plus.layers[li].weight, &mut minus.layers[li].weight)
                    } else {
                        (&mut plus.layers[li].bias, &mut minus.layers[li].bias)
                    };
                    p.data_mut()[j] += h;
                    m.data_mut()[j] -= h;
                    let fd = (mean_loss(&plus, data, loss) - mean_loss(&minus, data, loss)) / (2.0 * h);
                    let an = if which == 0 { g.layers[li].weight[j] } else { g.layers[li].bias[j] };
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                    assert!(rel <= 1e-4, "layer {li} param {which}/{j}: analytic {an} vs fd {fd}");
                }
            }
        }
    }

    fn random_data(rng: &mut ChaCha8Rng, shape: &[usize], n: usize, classes: usize) -> Dataset {
        let len: usize = shape.iter().product();
        let inputs = (0..n)
            .map(|_| Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let targets = (0..n).map(|_| Target::Class(rng.random_range(0..classes))).collect();
        Dataset::new(inputs, targets).unwrap()
    }

    #[test]
    fn single_dense_closed_form() {
        let (w, x, t) = (0.7, 1.5, 2.0);
        let dense = Layer::dense(Tensor::new(&[1, 1], vec![w]).unwrap(), Tensor::zeros(&[1])).unwrap();
        let m = Model::new(vec![dense], vec![], Task::Regression).unwrap();
        let data = Dataset::new(
            vec![Tensor::from_vec(vec![x])],
            vec![Target::Values(Tensor::from_vec(vec![t]))],
        )
        .unwrap();
        let g = grad_weights(&m, &data, LossKind::Mse).unwrap();
        assert!((g.layers[0].weight[0] - 2.0 * (w * x - t) * x).abs() < 1e-15);
    }

    #[test]
    fn zero_input_gives_zero_dense_weight_grad() {
        let m = Model::init(&[LayerSpec::Dense { out: 3 }, LayerSpec::Softmax], &[4], Task::Classification, 9).unwrap();
        let data = Dataset::new(vec![Tensor::zeros(&[4])], vec![Target::Class(1)]).unwrap();
        let g = grad_weights(&m, &data, LossKind::CrossEntropy).unwrap();
        assert!(g.layers[0].weight.iter().all(|&v| v == 0.0));
        assert!(g.layers[0].bias.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn finite_differences_conv_stack_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = [
            LayerSpec::Conv { out: 3, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv { out: 2, kernel: 2, stride: 2, padding: 0 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 4 },
            LayerSpec::Softmax,
        ];
        let mut m = Model::init(&spec, &[2, 5, 5], Task::Classification, 5).unwrap();
        for l in &mut m.layers {
            l.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let data = random_data(&mut rng, &[2, 5, 5], 3, 4);
        check_fd(&m, &data, LossKind::CrossEntropy);
    }

    #[test]
    fn finite_differences_mse_and_unfused_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = [LayerSpec::Conv { out: 2, kernel: 2, stride: 1, padding: 0 }, LayerSpec::Flatten, LayerSpec::Dense { out: 3 }, LayerSpec::Softmax];
        let m = Model::init(&spec, &[1, 3, 3], Task::Classification, 6).unwrap();
        let data = random_data(&mut rng, &[1, 3, 3], 4, 3);
        check_fd(&m, &data, LossKind::Mse);
        let spec = [LayerSpec::Dense { out: 3 }, LayerSpec::Relu, LayerSpec::Dense { out: 2 }];
        let m = Model::init(&spec, &[4], Task::Regression, 7).unwrap();
        let inputs = (0..3).map(|_| Tensor::new(&[4], (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()).collect();
        let targets = (0..3).map(|_| Target::Values(Tensor::new(&[2], (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())).collect();
        check_fd(&m, &Dataset::new(inputs, targets).unwrap(), LossKind::Mse);
    }

    #[test]
    fn scoped_grads_match_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = Model::desk_reference(2);
        let data = random_data(&mut rng, &[1, 8, 8], 2, 10);
        let full = grad_weights(&m, &data, LossKind::CrossEntropy).unwrap();
        let scope = GradScope::layers(&m, &[2]);
        let mut part = Gradients::zeros_like(&m);
        for (x, t) in data.inputs.iter().zip(&data.targets) {
            loss_and_grads(&m, x, t, LossKind::CrossEntropy, &scope, &mut part).unwrap();
        }
        part.scale(0.5);
        assert_eq!(part.layers[2], full.layers[2]);
        assert!(part.layers[0].weight.iter().all(|&v| v == 0.0));
    }
}
