//! Reverse-mode differentiation over a fixed operator set.
//!
//! A [`Tape`] records one forward pass over `[channels, rows, cols]` real
//! activations. Parameters are read from a [`ParameterStore`]; gradients land
//! in a [`Gradients`] map with the same layout. Complex parameters receive
//! `dL/dRe + j dL/dIm`, so `p -= lr * g` is steepest descent.

pub(crate) mod ops;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::params::{Gradients, ParamId, ParameterStore};
use crate::spectral::{cross_axis_forward, cross_axis_vjp, single_axis_forward, single_axis_vjp};
use crate::tensor::{ComplexArray, RealArray};

/// Node handle on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Spectral integral realized on the real feature stream: the input is
/// embedded as complex, transformed, and the real part is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralOp {
    /// `Re S_h(S_v(x))`.
    CrossAxis,
    /// `Re (S_v(x) + S_h(x))`.
    SingleAxis,
}

enum Op {
    Leaf,
    Conv { x: usize, w: ParamId, b: ParamId, k: usize },
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    Sigmoid(usize),
    Norm { x: usize, gamma: ParamId, beta: ParamId, xhat: Vec<f64>, inv_std: Vec<f64> },
    Spectral { x: usize, op: SpectralOp, wv: ParamId, wh: ParamId },
    Concat(Vec<usize>),
}

struct Node {
    value: RealArray,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParameterStore,
    nodes: Vec<Node>,
}

fn dims3(a: &RealArray) -> Result<[usize; 3]> {
    match a.shape() {
        &[c, m, n] => Ok([c, m, n]),
        s => Err(Error::ShapeMismatch(format!("expected [channels, rows, cols], got {s:?}"))),
    }
}

fn to_complex4(a: &RealArray) -> Result<ComplexArray> {
    let [c, m, n] = dims3(a)?;
    a.to_complex().reshape(&[1, c, m, n])
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: RealArray, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &RealArray {
        &self.nodes[v.0].value
    }

    /// Constant input `[channels, rows, cols]`.
    pub fn input(&mut self, value: RealArray) -> Result<Var> {
        dims3(&value)?;
        Ok(self.push(value, Op::Leaf))
    }

    /// Same-size convolution with weight `[co, ci, k, k]` and bias `[co]`.
    pub fn conv(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let [ci, m, n] = dims3(self.value(x))?;
        let wa = self.store.real(w);
        let &[co, wci, k, k2] = wa.shape() else {
            return Err(Error::ShapeMismatch(format!("conv weight shape {:?}", wa.shape())));
        };
        if wci != ci || k != k2 || k % 2 == 0 || self.store.real(b).shape() != [co] {
            return Err(Error::ShapeMismatch(format!(
                "conv weight {:?} does not fit {ci} input channels",
                wa.shape()
            )));
        }
        let y = ops::conv_forward(
            self.value(x).data(),
            ci,
            m,
            n,
            wa.data(),
            self.store.real(b).data(),
            co,
            k,
        );
        let value = RealArray::from_vec(&[co, m, n], y)?;
        Ok(self.push(value, Op::Conv { x: x.0, w, b, k }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        vb.ensure_shape(va.shape(), "elementwise product")?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let v = RealArray::from_vec(va.shape(), data)?;
        Ok(self.push(v, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a.0, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|&x| ops::gelu(x));
        self.push(v, Op::Gelu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|&x| ops::sigmoid(x));
        self.push(v, Op::Sigmoid(a.0))
    }

    /// Per-channel normalization over the plane, then `gamma * xhat + beta`.
    pub fn channel_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, eps: f64) -> Result<Var> {
        let [c, m, n] = dims3(self.value(x))?;
        let (g, b) = (self.store.real(gamma), self.store.real(beta));
        if g.shape() != [c] || b.shape() != [c] {
            return Err(Error::ShapeMismatch(format!("norm affine does not fit {c} channels")));
        }
        let (y, xhat, inv_std) =
            ops::norm_forward(self.value(x).data(), c, m * n, g.data(), b.data(), eps);
        let v = RealArray::from_vec(&[c, m, n], y)?;
        Ok(self.push(
            v,
            Op::Norm {
                x: x.0,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Spectral integral with complex kernels `wv` (vertical) and `wh`
    /// (horizontal), each `[groups, modes, in/groups, out/groups]`.
    pub fn spectral(&mut self, x: Var, op: SpectralOp, wv: ParamId, wh: ParamId) -> Result<Var> {
        let xc = to_complex4(self.value(x))?;
        let (kv, kh) = (self.store.complex(wv), self.store.complex(wh));
        let y = match op {
            SpectralOp::CrossAxis => cross_axis_forward(kv, kh, &xc)?,
            SpectralOp::SingleAxis => single_axis_forward(kv, kh, &xc)?,
        };
        let [_, c, m, n] = y.dims4()?;
        let v = RealArray::from_vec(&[c, m, n], y.data().iter().map(|z| z.re).collect())?;
        Ok(self.push(v, Op::Spectral { x: x.0, op, wv, wh }))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("nothing to concatenate".into()))?;
        let [_, m, n] = dims3(self.value(*first))?;
        let mut data = Vec::new();
        let mut c = 0;
        for p in parts {
            let [pc, pm, pn] = dims3(self.value(*p))?;
            if (pm, pn) != (m, n) {
                return Err(Error::ShapeMismatch("concatenated planes differ".into()));
            }
            c += pc;
            data.extend_from_slice(self.value(*p).data());
        }
        let v = RealArray::from_vec(&[c, m, n], data)?;
        Ok(self.push(v, Op::Concat(parts.iter().map(|p| p.0).collect())))
    }

    /// Propagates the seeded output gradients back to every parameter the
    /// tape touched, accumulating into `grads`.
    pub fn backward(&self, seeds: &[(Var, RealArray)], grads: &mut Gradients) -> Result<()> {
        if !grads.same_layout(&self.store.zeros_like()) {
            return Err(Error::ShapeMismatch("gradient map does not match the store".into()));
        }
        let mut adj: Vec<Option<RealArray>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            g.ensure_shape(self.value(*v).shape(), "output gradient")?;
            accumulate(&mut adj[v.0], g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Conv { x, w, b, k } => {
                    let xv = &self.nodes[*x].value;
                    let [ci, m, n] = dims3(xv)?;
                    let co = node.value.shape()[0];
                    let mut gx = vec![0.0; xv.len()];
                    let wdata = self.store.real(*w).data();
                    let mut gw = vec![0.0; wdata.len()];
                    let mut gb = vec![0.0; co];
                    ops::conv_backward(
                        xv.data(),
                        ci,
                        m,
                        n,
                        wdata,
                        co,
                        *k,
                        g.data(),
                        &mut gx,
                        &mut gw,
                        &mut gb,
                    );
                    add_into(grads.real_mut(*w).data_mut(), &gw);
                    add_into(grads.real_mut(*b).data_mut(), &gb);
                    accumulate(&mut adj[*x], RealArray::from_vec(xv.shape(), gx)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[*b], g.clone());
                    accumulate(&mut adj[*a], g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let ga = zip_map(&g, vb, |g, y| g * y)?;
                    let gb = zip_map(&g, va, |g, x| g * x)?;
                    accumulate(&mut adj[*a], ga);
                    accumulate(&mut adj[*b], gb);
                }
                Op::Scale(a, s) => accumulate(&mut adj[*a], g.map(|v| v * s)),
                Op::Gelu(a) => {
                    let ga = zip_map(&g, &self.nodes[*a].value, |g, x| g * ops::gelu_grad(x))?;
                    accumulate(&mut adj[*a], ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |g, s| g * s * (1.0 - s))?;
                    accumulate(&mut adj[*a], ga);
                }
                Op::Norm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let [c, m, n] = dims3(&node.value)?;
                    let mut gx = vec![0.0; g.len()];
                    let mut gg = vec![0.0; c];
                    let mut gbt = vec![0.0; c];
                    ops::norm_backward(
                        xhat,
                        inv_std,
                        c,
                        m * n,
                        self.store.real(*gamma).data(),
                        g.data(),
                        &mut gx,
                        &mut gg,
                        &mut gbt,
                    );
                    add_into(grads.real_mut(*gamma).data_mut(), &gg);
                    add_into(grads.real_mut(*beta).data_mut(), &gbt);
                    accumulate(&mut adj[*x], RealArray::from_vec(&[c, m, n], gx)?);
                }
                Op::Spectral { x, op, wv, wh } => {
                    let xv = &self.nodes[*x].value;
                    let xc = to_complex4(xv)?;
                    let gc = to_complex4(&g)?;
                    let (kv, kh) = (self.store.complex(*wv), self.store.complex(*wh));
                    let (gx, gwv, gwh) = match op {
                        SpectralOp::CrossAxis => cross_axis_vjp(kv, kh, &xc, &gc)?,
                        SpectralOp::SingleAxis => single_axis_vjp(kv, kh, &xc, &gc)?,
                    };
                    grads.complex_mut(*wv).add_assign(&gwv);
                    grads.complex_mut(*wh).add_assign(&gwh);
                    let gr = RealArray::from_vec(xv.shape(), gx.data().iter().map(|z: &Complex64| z.re).collect())?;
                    accumulate(&mut adj[*x], gr);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pv = &self.nodes[*p].value;
                        let part = RealArray::from_vec(
                            pv.shape(),
                            g.data()[off..off + pv.len()].to_vec(),
                        )?;
                        off += pv.len();
                        accumulate(&mut adj[*p], part);
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate(slot: &mut Option<RealArray>, g: RealArray) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn zip_map(a: &RealArray, b: &RealArray, f: impl Fn(f64, f64) -> f64) -> Result<RealArray> {
    RealArray::from_vec(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Param;

    fn store_with(entries: Vec<(&str, Param)>) -> ParameterStore {
        let mut s = ParameterStore::new();
        for (k, v) in entries {
            s.insert(k, v).unwrap();
        }
        s
    }

    fn arr(shape: &[usize], f: impl Fn(usize) -> f64) -> RealArray {
        RealArray::from_fn(shape, f)
    }

    /// Loss `sum(out * probe)` through a small graph touching every op.
    fn probe_loss(store: &ParameterStore, x: &RealArray) -> (f64, Gradients) {
        let mut t = Tape::new(store);
        let xi = t.input(x.clone()).unwrap();
        let n = t
            .channel_norm(xi, store.id("g").unwrap(), store.id("b").unwrap(), 1e-5)
            .unwrap();
        let c = t.conv(n, store.id("w").unwrap(), store.id("wb").unwrap()).unwrap();
        let a = t.gelu(c);
        let s = t
            .spectral(a, SpectralOp::CrossAxis, store.id("kv").unwrap(), store.id("kh").unwrap())
            .unwrap();
        let s2 = t
            .spectral(a, SpectralOp::SingleAxis, store.id("kv").unwrap(), store.id("kh").unwrap())
            .unwrap();
        let gate = t.sigmoid(a);
        let m = t.mul(s, gate).unwrap();
        let sum = t.add(m, s2).unwrap();
        let sc = t.scale(sum, 0.7);
        let cat = t.concat(&[sc, xi]).unwrap();
        let probe = arr(t.value(cat).shape(), |k| ((k * 7 % 11) as f64 - 5.0) / 5.0);
        let loss: f64 = t.value(cat).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let mut grads = store.zeros_like();
        t.backward(&[(cat, probe)], &mut grads).unwrap();
        (loss, grads)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let (c, m, n) = (2, 4, 6);
        let store = store_with(vec![
            ("g", Param::Real(arr(&[c], |k| 1.0 + 0.3 * k as f64))),
            ("b", Param::Real(arr(&[c], |k| 0.1 * k as f64))),
            ("w", Param::Real(arr(&[c, c, 3, 3], |k| ((k as f64) * 0.77).sin() * 0.4))),
            ("wb", Param::Real(arr(&[c], |k| 0.05 * k as f64))),
            (
                "kv",
                Param::Complex(ComplexArray::from_fn(&[1, 3, c, c], |k| {
                    Complex64::new((k as f64 * 0.3).cos(), (k as f64 * 0.5).sin())
                })),
            ),
            (
                "kh",
                Param::Complex(ComplexArray::from_fn(&[1, 4, c, c], |k| {
                    Complex64::new((k as f64 * 0.9).sin(), (k as f64 * 0.2).cos())
                })),
            ),
        ]);
        let x = arr(&[c, m, n], |k| ((k as f64) * 1.3).sin());
        let (_, grads) = probe_loss(&store, &x);
        let h = 1e-6;
        for id in store.ids() {
            for k in 0..store.get(id).real_count() {
                let mut sp = store.clone();
                let v = sp.get(id).real_at(k);
                sp.get_mut(id).set_real_at(k, v + h);
                let lp = probe_loss(&sp, &x).0;
                sp.get_mut(id).set_real_at(k, v - h);
                let lm = probe_loss(&sp, &x).0;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.get(id).real_at(k);
                assert!(
                    (fd - an).abs() <= 1e-6 * fd.abs().max(1.0),
                    "{}[{k}]: fd {fd} vs analytic {an}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn untouched_parameter_gets_exact_zero() {
        let store = store_with(vec![
            ("used", Param::Real(arr(&[1], |_| 2.0))),
            ("bias", Param::Real(arr(&[1], |_| 0.0))),
            ("w", Param::Real(arr(&[1, 1, 1, 1], |_| 1.5))),
            ("idle", Param::Real(arr(&[4], |_| 3.0))),
        ]);
        let mut t = Tape::new(&store);
        let x = t.input(arr(&[1, 2, 2], |k| k as f64)).unwrap();
        let y = t.conv(x, store.id("w").unwrap(), store.id("bias").unwrap()).unwrap();
        let mut g = store.zeros_like();
        t.backward(&[(y, arr(&[1, 2, 2], |_| 1.0))], &mut g).unwrap();
        assert!(g.by_name("idle").unwrap().to_reals().iter().all(|&v| v == 0.0));
        assert_eq!(g.by_name("w").unwrap().to_reals(), vec![6.0]);
    }

    #[test]
    fn quadratic_probe_gradient() {
        // f(w) = |w - c|^2 through a 1x1 conv on a unit input: gradient 2(w - c)
        let (w, c) = (0.8, -0.3);
        let store = store_with(vec![
            ("w", Param::Real(arr(&[1, 1, 1, 1], |_| w))),
            ("b", Param::Real(arr(&[1], |_| 0.0))),
        ]);
        let mut t = Tape::new(&store);
        let x = t.input(arr(&[1, 1, 1], |_| 1.0)).unwrap();
        let y = t.conv(x, store.id("w").unwrap(), store.id("b").unwrap()).unwrap();
        let seed = arr(&[1, 1, 1], |_| 2.0 * (w - c));
        let mut g = store.zeros_like();
        t.backward(&[(y, seed)], &mut g).unwrap();
        assert!((g.by_name("w").unwrap().real_at(0) - 2.0 * (w - c)).abs() < 1e-15);
    }
}
