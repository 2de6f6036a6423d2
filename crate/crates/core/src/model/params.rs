use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ComplexArray, RealArray};

/// One trainable array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Param {
    Real(RealArray),
    Complex(ComplexArray),
}

impl Param {
    pub fn shape(&self) -> &[usize] {
        match self {
            Param::Real(a) => a.shape(),
            Param::Complex(a) => a.shape(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Param::Real(a) => a.len(),
            Param::Complex(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Param::Complex(_))
    }

    /// Real degrees of freedom (complex entries count twice).
    pub fn real_count(&self) -> usize {
        match self {
            Param::Real(a) => a.len(),
            Param::Complex(a) => 2 * a.len(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Param::Real(a) => Param::Real(RealArray::zeros(a.shape())),
            Param::Complex(a) => Param::Complex(ComplexArray::zeros(a.shape())),
        }
    }

    /// Flattened real view: `[re0, im0, re1, im1, ...]` for complex arrays.
    pub fn to_reals(&self) -> Vec<f64> {
        match self {
            Param::Real(a) => a.data().to_vec(),
            Param::Complex(a) => a.data().iter().flat_map(|z| [z.re, z.im]).collect(),
        }
    }

    /// Real component `k` of the flattened view.
    pub fn real_at(&self, k: usize) -> f64 {
        match self {
            Param::Real(a) => a.data()[k],
            Param::Complex(a) => {
                let z = a.data()[k / 2];
                if k % 2 == 0 {
                    z.re
                } else {
                    z.im
                }
            }
        }
    }

    pub fn set_real_at(&mut self, k: usize, v: f64) {
        match self {
            Param::Real(a) => a.data_mut()[k] = v,
            Param::Complex(a) => {
                let z = &mut a.data_mut()[k / 2];
                if k % 2 == 0 {
                    z.re = v
                } else {
                    z.im = v
                }
            }
        }
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.is_complex() == other.is_complex() && self.shape() == other.shape()
    }

    fn zip_mut(&mut self, other: &Self, mut f: impl FnMut(&mut f64, f64)) {
        match (self, other) {
            (Param::Real(a), Param::Real(b)) => {
                for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                    f(x, y);
                }
            }
            (Param::Complex(a), Param::Complex(b)) => {
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    f(&mut x.re, y.re);
                    f(&mut x.im, y.im);
                }
            }
            _ => unreachable!("layouts checked by caller"),
        }
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        match self {
            Param::Real(a) => a.data_mut().iter_mut().for_each(f),
            Param::Complex(a) => a.data_mut().iter_mut().for_each(|z| {
                f(&mut z.re);
                f(&mut z.im);
            }),
        }
    }

    pub fn as_real(&self) -> Option<&RealArray> {
        match self {
            Param::Real(a) => Some(a),
            Param::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&ComplexArray> {
        match self {
            Param::Complex(a) => Some(a),
            Param::Real(_) => None,
        }
    }
}

/// Handle to an entry of a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered name -> array map. Gradients and optimizer moments reuse the same
/// layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    entries: IndexMap<String, Param>,
}

/// Gradient map with the layout of the store it was derived from. Complex
/// entries hold `dL/dRe + j dL/dIm`.
pub type Gradients = ParameterStore;

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("parameter {name} registered twice")));
        }
        let id = self.entries.len();
        self.entries.insert(name, param);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.entries
            .get_index_of(name)
            .map(ParamId)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid id")
    }

    /// Real array behind `id`; panics on a complex entry.
    pub(crate) fn real(&self, id: ParamId) -> &RealArray {
        self.get(id).as_real().expect("real parameter")
    }

    pub(crate) fn complex(&self, id: ParamId) -> &ComplexArray {
        self.get(id).as_complex().expect("complex parameter")
    }

    pub(crate) fn real_mut(&mut self, id: ParamId) -> &mut RealArray {
        match self.get_mut(id) {
            Param::Real(a) => a,
            Param::Complex(_) => panic!("real parameter expected"),
        }
    }

    pub(crate) fn complex_mut(&mut self, id: ParamId) -> &mut ComplexArray {
        match self.get_mut(id) {
            Param::Complex(a) => a,
            Param::Real(_) => panic!("complex parameter expected"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total real degrees of freedom.
    pub fn real_count(&self) -> usize {
        self.entries.values().map(Param::real_count).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.zeros_like()))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, a), (kb, b))| ka == kb && a.same_layout(b))
    }

    fn ensure_layout(&self, other: &Self) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::ShapeMismatch("parameter maps differ in layout".into()));
        }
        Ok(())
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        self.ensure_layout(other)?;
        for (a, b) in self.entries.values_mut().zip(other.entries.values()) {
            a.zip_mut(b, |x, y| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for p in self.entries.values_mut() {
            p.for_each_mut(|x| *x *= s);
        }
    }

    /// Sum of squares over all real components.
    pub fn sum_sqr(&self) -> f64 {
        self.entries
            .values()
            .map(|p| match p {
                Param::Real(a) => a.sum_sqr(),
                Param::Complex(a) => a.sum_sqr(),
            })
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|p| match p {
            Param::Real(a) => a.is_finite(),
            Param::Complex(a) => a.is_finite(),
        })
    }

    /// Applies `f(entry, param, grad, m, v)` to every real component of four
    /// maps sharing one layout.
    pub(crate) fn update_with(
        &mut self,
        grads: &Self,
        m: &mut Self,
        v: &mut Self,
        mut f: impl FnMut(usize, &mut f64, f64, &mut f64, &mut f64),
    ) -> Result<()> {
        self.ensure_layout(grads)?;
        self.ensure_layout(m)?;
        self.ensure_layout(v)?;
        for (e, (((p, g), mm), vv)) in self
            .entries
            .values_mut()
            .zip(grads.entries.values())
            .zip(m.entries.values_mut())
            .zip(v.entries.values_mut())
            .enumerate()
        {
            match (p, g, mm, vv) {
                (Param::Real(p), Param::Real(g), Param::Real(mm), Param::Real(vv)) => {
                    for k in 0..p.len() {
                        f(
                            e,
                            &mut p.data_mut()[k],
                            g.data()[k],
                            &mut mm.data_mut()[k],
                            &mut vv.data_mut()[k],
                        );
                    }
                }
                (Param::Complex(p), Param::Complex(g), Param::Complex(mm), Param::Complex(vv)) => {
                    for k in 0..p.len() {
                        let (pz, gz) = (&mut p.data_mut()[k], g.data()[k]);
                        let (mz, vz) = (&mut mm.data_mut()[k], &mut vv.data_mut()[k]);
                        f(e, &mut pz.re, gz.re, &mut mz.re, &mut vz.re);
                        f(e, &mut pz.im, gz.im, &mut mz.im, &mut vz.im);
                    }
                }
                _ => unreachable!("layouts checked above"),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParameterStore::new();
        let a = s.insert("a", Param::Real(RealArray::zeros(&[3]))).unwrap();
        s.insert("b", Param::Complex(ComplexArray::zeros(&[2, 2]))).unwrap();
        assert!(s.insert("a", Param::Real(RealArray::zeros(&[1]))).is_err());
        assert_eq!(s.id("a").unwrap(), a);
        assert_eq!(s.real_count(), 3 + 8);
        assert_eq!(s.name(a), "a");
    }

    #[test]
    fn flattened_view_round_trips() {
        let mut p = Param::Complex(ComplexArray::zeros(&[2]));
        p.set_real_at(3, 1.5);
        p.set_real_at(0, -2.0);
        assert_eq!(p.to_reals(), vec![-2.0, 0.0, 0.0, 1.5]);
        assert_eq!(p.real_at(3), 1.5);
    }

    #[test]
    fn accumulate_requires_layout() {
        let mut a = ParameterStore::new();
        a.insert("w", Param::Real(RealArray::from_vec(&[2], vec![1.0, 2.0]).unwrap()))
            .unwrap();
        let b = a.clone();
        a.accumulate(&b).unwrap();
        assert_eq!(a.by_name("w").unwrap().to_reals(), vec![2.0, 4.0]);
        let mut c = ParameterStore::new();
        c.insert("w", Param::Complex(ComplexArray::zeros(&[2]))).unwrap();
        assert!(a.accumulate(&c).is_err());
    }
}
