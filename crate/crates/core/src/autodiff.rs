//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each op appends a node
//! holding its value, its parents and a backward closure. Gradients are
//! only propagated along paths that reach a leaf marked as trainable.

use crate::element::Element;
use crate::error::{shape_err, KnError, Result};
use crate::norm::affine::{self, BatchStats};
use crate::norm::config::KernelNormConfig;
use crate::norm::kernel;
use crate::ops::{activation, conv, linear as lin, loss, pool};
use crate::tensor::{Shape4, Tensor4};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

/// Inputs to a backward closure.
pub struct BackwardCtx<'a, T: Element> {
    pub cot: &'a Tensor4<T>,
    pub parents: Vec<&'a Tensor4<T>>,
    pub out: &'a Tensor4<T>,
    pub needs: Vec<bool>,
}

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor4<T>>>>>;

struct Node<T: Element> {
    value: Tensor4<T>,
    parents: Vec<usize>,
    op: &'static str,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Tape { nodes: Vec::new() }
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor4<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor4<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn scalar_shape() -> Shape4 {
    Shape4::new(1, 1, 1, 1)
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor4<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor4<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor4<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), op: "leaf", requires_grad, backward: None });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor4<T>, parents: &[Var], op: &'static str, backward: BackwardFn<T>) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            op,
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Var(self.nodes.len() - 1)
    }

    /// Every parent must precede its child.
    pub fn check_acyclic(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.parents.iter().any(|&p| p >= i) {
                return Err(KnError::Cycle(i));
            }
        }
        Ok(())
    }

    /// Backpropagate from a scalar.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let v = self.value(root);
        if v.numel() != 1 {
            return Err(shape_err("backward", format!("root must be a scalar, got {}", v.shape())));
        }
        self.backward_with(root, Tensor4::full(v.shape(), T::ONE)?)
    }

    /// Backpropagate an arbitrary cotangent seeded at `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor4<T>) -> Result<Gradients<T>> {
        self.check_acyclic()?;
        if seed.shape() != self.value(root).shape() {
            return Err(shape_err("backward", format!("seed {} vs root {}", seed.shape(), self.value(root).shape())));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(cot) = grads[i].take() else { continue };
            let ctx = BackwardCtx {
                cot: &cot,
                parents: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                out: &node.value,
                needs: node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect(),
            };
            let pgrads = bw(&ctx)?;
            if pgrads.len() != node.parents.len() {
                return Err(shape_err(node.op, "backward returned wrong number of gradients"));
            }
            for ((&p, g), &need) in node.parents.iter().zip(pgrads).zip(&ctx.needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                let want = self.nodes[p].value.shape();
                if g.shape() != want {
                    return Err(shape_err(node.op, format!("gradient {} for parent {}", g.shape(), want)));
                }
                match grads[p].as_mut() {
                    Some(acc) => acc.add_assign(&g)?,
                    None => grads[p] = Some(g),
                }
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.backward.is_some() || !n.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, &[a, b], "add", Box::new(|c| Ok(vec![Some(c.cot.clone()), Some(c.cot.clone())]))))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, &[a, b], "sub", Box::new(|c| Ok(vec![Some(c.cot.clone()), Some(c.cot.scale(T::from_f64(-1.0)))]))))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(
            v,
            &[a, b],
            "mul",
            Box::new(|c| {
                Ok(vec![c.needs[0].then(|| c.cot.mul(c.parents[1])).transpose()?, c.needs[1].then(|| c.cot.mul(c.parents[0])).transpose()?])
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(T::from_f64(s));
        self.push(v, &[a], "scale", Box::new(move |c| Ok(vec![Some(c.cot.scale(T::from_f64(s)))])))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor4::from_parts(scalar_shape(), vec![T::from_f64(self.value(a).sum_f64())]);
        self.push(v, &[a], "sum", Box::new(|c| Ok(vec![Some(Tensor4::full(c.parents[0].shape(), c.cot.data()[0])?)])))
    }

    /// `sum(a * weights)` for a constant `weights`.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor4<T>) -> Result<Var> {
        self.value(a).expect_same_shape(&weights, "weighted_sum")?;
        let s: f64 = self.value(a).data().iter().zip(weights.data()).map(|(x, w)| x.to_f64() * w.to_f64()).sum();
        let v = Tensor4::from_parts(scalar_shape(), vec![T::from_f64(s)]);
        Ok(self.push(v, &[a], "weighted_sum", Box::new(move |c| Ok(vec![Some(weights.scale(c.cot.data()[0]))]))))
    }

    /// Channels `start..start + len`.
    pub fn channel_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.value(a).shape();
        if len == 0 || start + len > s.c {
            return Err(shape_err("channel_slice", format!("channels {start}..{} of {s}", start + len)));
        }
        let plane = s.plane();
        let x = self.value(a);
        let data = (0..s.n)
            .flat_map(|n| {
                let base = n * s.sample_len() + start * plane;
                x.data()[base..base + len * plane].iter().copied()
            })
            .collect();
        let v = Tensor4::from_parts(Shape4::new(s.n, len, s.h, s.w), data);
        Ok(self.push(
            v,
            &[a],
            "channel_slice",
            Box::new(move |c| {
                let mut g = vec![T::ZERO; s.numel()];
                for n in 0..s.n {
                    let base = n * s.sample_len() + start * plane;
                    let src = &c.cot.data()[n * len * plane..(n + 1) * len * plane];
                    g[base..base + len * plane].copy_from_slice(src);
                }
                Ok(vec![Some(Tensor4::from_parts(s, g))])
            }),
        ))
    }

    /// `(n, c, h, w)` to `(n, c*h*w, 1, 1)`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).shape();
        let v = self.value(a).clone().reshape([s.n, s.sample_len(), 1, 1])?;
        Ok(self.push(v, &[a], "flatten", Box::new(move |c| Ok(vec![Some(c.cot.clone().reshape(s)?)]))))
    }

    // ---- activations -------------------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        let v = activation::relu(self.value(a));
        self.push(v, &[a], "relu", Box::new(|c| Ok(vec![Some(activation::relu_backward(c.parents[0], c.cot))])))
    }

    pub fn mish(&mut self, a: Var) -> Var {
        let v = activation::mish(self.value(a));
        self.push(v, &[a], "mish", Box::new(|c| Ok(vec![Some(activation::mish_backward(c.parents[0], c.cot))])))
    }

    // ---- convolution, pooling, linear --------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let v = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, padding)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(
            v,
            &parents,
            "conv2d",
            Box::new(move |c| {
                let has_b = c.parents.len() == 3;
                let g =
                    conv::conv2d_backward(c.parents[0], c.parents[1], c.cot, stride, padding, c.needs[0], c.needs[1], has_b && c.needs[2])?;
                let mut out = vec![g.dx, g.dw];
                if has_b {
                    out.push(g.db.map(|d| d.reshape(c.parents[2].shape())).transpose()?);
                }
                Ok(out)
            }),
        ))
    }

    pub fn max_pool(&mut self, x: Var, kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let (v, argmax) = pool::max_pool2d(self.value(x), kernel, stride, padding)?;
        let shape = self.value(x).shape();
        Ok(self.push(v, &[x], "max_pool", Box::new(move |c| Ok(vec![Some(pool::max_pool2d_backward(shape, &argmax, c.cot))]))))
    }

    pub fn avg_pool(&mut self, x: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let v = pool::avg_pool2d(self.value(x), kernel, stride)?;
        let shape = self.value(x).shape();
        Ok(self.push(v, &[x], "avg_pool", Box::new(move |c| Ok(vec![Some(pool::avg_pool2d_backward(shape, c.cot, kernel, stride))]))))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let v = pool::adaptive_avg_pool2d(self.value(x), out_h, out_w)?;
        let shape = self.value(x).shape();
        Ok(self.push(v, &[x], "adaptive_avg_pool", Box::new(move |c| Ok(vec![Some(pool::adaptive_avg_pool2d_backward(shape, c.cot))]))))
    }

    /// Fully connected layer on the flattened input.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let v = lin::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(
            v,
            &parents,
            "linear",
            Box::new(|c| {
                let (dx, dw, db) = lin::linear_backward(c.parents[0], c.parents[1], c.cot);
                let mut out = vec![Some(dx), Some(dw)];
                if c.parents.len() == 3 {
                    out.push(Some(db.reshape(c.parents[2].shape())?));
                }
                Ok(out)
            }),
        ))
    }

    /// Mean softmax cross-entropy against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (l, probs) = loss::softmax_cross_entropy(self.value(logits), labels)?;
        let labels = labels.to_vec();
        let v = Tensor4::from_parts(scalar_shape(), vec![T::from_f64(l)]);
        Ok(self.push(
            v,
            &[logits],
            "softmax_cross_entropy",
            Box::new(move |c| {
                let s = c.parents[0].shape();
                let k = s.sample_len();
                let scale = c.cot.data()[0].to_f64() / s.n as f64;
                let mut g: Vec<f64> = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    g[i * k + y] -= 1.0;
                }
                Ok(vec![Some(Tensor4::from_parts(s, g.into_iter().map(|v| T::from_f64(v * scale)).collect()))])
            }),
        ))
    }

    // ---- normalization -----------------------------------------------

    /// KernelNorm (per-window route) with a fixed dropout mask.
    pub fn kernel_norm(&mut self, x: Var, cfg: &KernelNormConfig, mask: Option<Tensor4<T>>) -> Result<Var> {
        let stats = kernel::direct_stats(self.value(x), cfg, mask.as_ref())?;
        let v = kernel::kernel_norm_apply(self.value(x), cfg, &stats);
        let cfg = *cfg;
        Ok(self.push(
            v,
            &[x],
            "kernel_norm",
            Box::new(move |c| Ok(vec![Some(kernel::kernel_norm_backward(c.parents[0], &cfg, mask.as_ref(), &stats, c.cot))])),
        ))
    }

    /// Window mean and variance (window-sum route), returned as `(mu, var)`.
    pub fn kn_mean_var(&mut self, x: Var, cfg: &KernelNormConfig, mask: Option<Tensor4<T>>) -> Result<(Var, Var)> {
        let n = self.value(x).shape().n;
        let stats = kernel::window_sum_stats(self.value(x), cfg, mask.as_ref())?;
        let (gh, gw) = stats.grid;
        let per = gh * gw;
        let mut data = Vec::with_capacity(2 * n * per);
        for s in 0..n {
            data.extend(stats.mu[s * per..(s + 1) * per].iter().map(|&m| T::from_f64(m)));
            data.extend((s * per..(s + 1) * per).map(|i| T::from_f64(stats.var(i))));
        }
        let v = Tensor4::from_parts(Shape4::new(n, 2, gh, gw), data);
        let cfg = *cfg;
        let both = self.push(
            v,
            &[x],
            "kn_mean_var",
            Box::new(move |c| {
                let (mut dmu, mut dvar) = (Vec::with_capacity(n * per), Vec::with_capacity(n * per));
                for s in 0..n {
                    let base = s * 2 * per;
                    dmu.extend_from_slice(&c.cot.data()[base..base + per]);
                    dvar.extend_from_slice(&c.cot.data()[base + per..base + 2 * per]);
                }
                Ok(vec![Some(kernel::window_sum_stats_backward(c.parents[0], &cfg, mask.as_ref(), &stats, &dmu, &dvar))])
            }),
        );
        Ok((self.channel_slice(both, 0, 1)?, self.channel_slice(both, 1, 1)?))
    }

    /// `(conv - mu * sum(W_f)) / sqrt(var + eps) + b_f`.
    ///
    /// `conv` is `(n, f, nh, nw)`; `mu` and `var` are `(n, 1, nh, nw)`; `w` is
    /// the `(f, c, kh, kw)` filter bank that produced `conv`.
    pub fn kn_adjust(&mut self, conv: Var, mu: Var, var: Var, w: Var, b: Option<Var>, eps: f64) -> Result<Var> {
        let cs = self.value(conv).shape();
        let stat_shape = Shape4::new(cs.n, 1, cs.h, cs.w);
        for (name, v) in [("mu", mu), ("var", var)] {
            if self.value(v).shape() != stat_shape {
                return Err(shape_err("kn_adjust", format!("{name} {} vs expected {stat_shape}", self.value(v).shape())));
            }
        }
        let ws = self.value(w).shape();
        if ws.n != cs.c {
            return Err(shape_err("kn_adjust", format!("{} filters for {} output channels", ws.n, cs.c)));
        }
        if let Some(b) = b {
            if self.value(b).numel() != cs.c {
                return Err(shape_err("kn_adjust", format!("bias has {} entries for {} filters", self.value(b).numel(), cs.c)));
            }
        }
        let wsum = filter_sums(self.value(w));
        let plane = cs.plane();
        let (cv, mv, vv) = (self.value(conv), self.value(mu), self.value(var));
        let bias: Vec<f64> = match b {
            Some(b) => self.value(b).data().iter().map(|v| v.to_f64()).collect(),
            None => vec![0.0; cs.c],
        };
        let mut out = vec![T::ZERO; cs.numel()];
        for n in 0..cs.n {
            for f in 0..cs.c {
                for p in 0..plane {
                    let k = (n * cs.c + f) * plane + p;
                    let m = mv.data()[n * plane + p].to_f64();
                    let inv = 1.0 / (vv.data()[n * plane + p].to_f64() + eps).sqrt();
                    out[k] = T::from_f64((cv.data()[k].to_f64() - m * wsum[f]) * inv + bias[f]);
                }
            }
        }
        let mut parents = vec![conv, mu, var, w];
        parents.extend(b);
        Ok(self.push(
            Tensor4::from_parts(cs, out),
            &parents,
            "kn_adjust",
            Box::new(move |c| {
                let (cv, mv, vv, wv) = (c.parents[0], c.parents[1], c.parents[2], c.parents[3]);
                let wsum = filter_sums(wv);
                let mut dconv = vec![T::ZERO; cs.numel()];
                let mut dmu = vec![0.0f64; stat_shape.numel()];
                let mut dvar = vec![0.0f64; stat_shape.numel()];
                let mut dws = vec![0.0f64; cs.c];
                let mut db = vec![0.0f64; cs.c];
                for n in 0..cs.n {
                    for f in 0..cs.c {
                        for p in 0..plane {
                            let k = (n * cs.c + f) * plane + p;
                            let s = n * plane + p;
                            let g = c.cot.data()[k].to_f64();
                            let m = mv.data()[s].to_f64();
                            let inv = 1.0 / (vv.data()[s].to_f64() + eps).sqrt();
                            let centered = cv.data()[k].to_f64() - m * wsum[f];
                            dconv[k] = T::from_f64(g * inv);
                            dmu[s] -= g * wsum[f] * inv;
                            dvar[s] -= 0.5 * g * centered * inv * inv * inv;
                            dws[f] -= g * m * inv;
                            db[f] += g;
                        }
                    }
                }
                let to_t = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect::<Vec<T>>();
                let per_filter = ws.sample_len();
                let dw = (0..ws.numel()).map(|i| T::from_f64(dws[i / per_filter])).collect();
                let mut grads = vec![
                    Some(Tensor4::from_parts(cs, dconv)),
                    Some(Tensor4::from_parts(stat_shape, to_t(dmu))),
                    Some(Tensor4::from_parts(stat_shape, to_t(dvar))),
                    Some(Tensor4::from_parts(ws, dw)),
                ];
                if c.parents.len() == 5 {
                    grads.push(Some(Tensor4::from_parts(c.parents[4].shape(), to_t(db))));
                }
                Ok(grads)
            }),
        ))
    }

    /// Group normalization; layer and instance norm are the 1-group and
    /// c-group cases.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (v, cache) = affine::group_norm_cached(self.value(x), groups, self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(v, &[x, gamma, beta], "group_norm", affine_backward(cache)))
    }

    /// Batch normalization with batch statistics; returns them for the
    /// running averages.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (v, cache, st) = affine::batch_norm_train_cached(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok((self.push(v, &[x, gamma, beta], "batch_norm", affine_backward(cache)), st))
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &Tensor4<T>, var: &Tensor4<T>, eps: f64) -> Result<Var> {
        let v = affine::batch_norm_eval(self.value(x), self.value(gamma), self.value(beta), mean, var, eps)?;
        let inv: Vec<f64> = var.data().iter().map(|v| 1.0 / (v.to_f64() + eps).sqrt()).collect();
        let mean: Vec<f64> = mean.data().iter().map(|v| v.to_f64()).collect();
        Ok(self.push(
            v,
            &[x, gamma, beta],
            "batch_norm_eval",
            Box::new(move |c| {
                let s = c.parents[0].shape();
                let plane = s.plane();
                let mut dx = vec![T::ZERO; s.numel()];
                let mut dg = vec![0.0; s.c];
                let mut db = vec![0.0; s.c];
                for (k, g) in c.cot.data().iter().enumerate() {
                    let ch = (k / plane) % s.c;
                    let g = g.to_f64();
                    let xhat = (c.parents[0].data()[k].to_f64() - mean[ch]) * inv[ch];
                    dx[k] = T::from_f64(g * c.parents[1].data()[ch].to_f64() * inv[ch]);
                    dg[ch] += g * xhat;
                    db[ch] += g;
                }
                let shp = c.parents[1].shape();
                let t = |v: Vec<f64>| Tensor4::from_parts(shp, v.into_iter().map(T::from_f64).collect());
                Ok(vec![Some(Tensor4::from_parts(s, dx)), Some(t(dg)), Some(t(db))])
            }),
        ))
    }
}

fn affine_backward<T: Element>(cache: affine::NormCache) -> BackwardFn<T> {
    Box::new(move |c| {
        let (dx, dg, db) = affine::normalize_backward(&cache, c.parents[1], c.cot);
        Ok(vec![Some(dx), Some(dg.reshape(c.parents[1].shape())?), Some(db.reshape(c.parents[2].shape())?)])
    })
}

/// Sum of every weight in each filter.
pub(crate) fn filter_sums<T: Element>(w: &Tensor4<T>) -> Vec<f64> {
    (0..w.shape().n).map(|f| w.sample(f).iter().map(|v| v.to_f64()).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn product_rule_and_accumulation() {
        let mut t = Tape::<f64>::new();
        let a = t.param(Tensor4::vector(vec![2.0, 3.0]).unwrap());
        let b = t.param(Tensor4::vector(vec![5.0, 7.0]).unwrap());
        let ab = t.mul(a, b).unwrap();
        let aa = t.mul(a, a).unwrap();
        let s = t.add(ab, aa).unwrap();
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[5.0 + 4.0, 7.0 + 6.0]);
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor4::vector(vec![1.0]).unwrap());
        let b = t.param(Tensor4::vector(vec![2.0]).unwrap());
        let p = t.mul(a, b).unwrap();
        let l = t.sum(p);
        let g = t.backward(l).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap().data(), &[1.0]);
        assert!(g.get(p).is_none());
    }

    #[test]
    fn backward_needs_scalar_root() {
        let mut t = Tape::<f64>::new();
        let a = t.param(Tensor4::vector(vec![1.0, 2.0]).unwrap());
        let r = t.relu(a);
        assert!(t.backward(r).is_err());
    }

    #[test]
    fn channel_slice_routes_gradient() {
        let mut rng = Rng::new(1, 0);
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor4::randn([2, 3, 2, 2], 1.0, &mut rng).unwrap());
        let s = t.channel_slice(x, 1, 2).unwrap();
        assert_eq!(t.value(s).shape(), Shape4::new(2, 2, 2, 2));
        assert_eq!(t.value(s).at(1, 0, 1, 1), t.value(x).at(1, 1, 1, 1));
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        let gx = g.get(x).unwrap();
        assert_eq!(gx.at(0, 0, 0, 0), 0.0);
        assert_eq!(gx.at(1, 2, 1, 0), 1.0);
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero() {
        let mut rng = Rng::new(2, 0);
        let mut t = Tape::<f64>::new();
        let z = t.param(Tensor4::randn([4, 5, 1, 1], 1.0, &mut rng).unwrap());
        let l = t.softmax_cross_entropy(z, &[0, 1, 4, 2]).unwrap();
        let g = t.backward(l).unwrap();
        for row in g.get(z).unwrap().data().chunks(5) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
