//! Adam with per-parameter-group state and row-level lifecycle operations
//! (zeroing on embedding transfer, growth on densify, deletion on prune).

use crate::scalar::{cast, Real};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// First/second moment buffers for one parameter group, `width` scalars per
/// model row.
#[derive(Debug, Clone)]
pub struct ParamGroup<T: Real> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub width: usize,
}

impl<T: Real> ParamGroup<T> {
    pub fn new(rows: usize, width: usize) -> Self {
        Self {
            m: vec![T::zero(); rows * width],
            v: vec![T::zero(); rows * width],
            step: 0,
            width,
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.width
    }

    pub fn zero_row(&mut self, row: usize) {
        for c in 0..self.width {
            self.m[row * self.width + c] = T::zero();
            self.v[row * self.width + c] = T::zero();
        }
    }

    pub fn zero_all(&mut self) {
        self.m.iter_mut().for_each(|x| *x = T::zero());
        self.v.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn push_zero_rows(&mut self, count: usize) {
        self.m.extend(std::iter::repeat_n(T::zero(), count * self.width));
        self.v.extend(std::iter::repeat_n(T::zero(), count * self.width));
    }

    pub fn retain_rows(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.rows());
        let width = self.width;
        let filter = |buf: &mut Vec<T>| {
            let mut write = 0usize;
            for (row, &k) in keep.iter().enumerate() {
                if k {
                    for c in 0..width {
                        buf[write * width + c] = buf[row * width + c];
                    }
                    write += 1;
                }
            }
            buf.truncate(write * width);
        };
        filter(&mut self.m);
        filter(&mut self.v);
    }

    /// One Adam update over the flattened parameters of this group.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let beta1 = cast::<T>(BETA1);
        let beta2 = cast::<T>(BETA2);
        let eps = cast::<T>(EPSILON);
        let bias1 = T::one() - cast::<T>(BETA1.powi(self.step as i32));
        let bias2 = T::one() - cast::<T>(BETA2.powi(self.step as i32));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (T::one() - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (T::one() - beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// All optimizer state, keyed by parameter group.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Real> {
    /// (du, dv, dd) per embedding.
    pub embedding: ParamGroup<T>,
    pub rotation: ParamGroup<T>,
    pub scale: ParamGroup<T>,
    pub opacity: ParamGroup<T>,
    pub color: ParamGroup<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(rows: usize) -> Self {
        Self {
            embedding: ParamGroup::new(rows, 3),
            rotation: ParamGroup::new(rows, 4),
            scale: ParamGroup::new(rows, 3),
            opacity: ParamGroup::new(rows, 1),
            color: ParamGroup::new(rows, 3),
        }
    }

    /// Every parameter row has exactly one state row.
    pub fn lockstep(&self, rows: usize) -> bool {
        self.embedding.rows() == rows
            && self.rotation.rows() == rows
            && self.scale.rows() == rows
            && self.opacity.rows() == rows
            && self.color.rows() == rows
    }

    pub fn retain_rows(&mut self, keep: &[bool]) {
        self.embedding.retain_rows(keep);
        self.rotation.retain_rows(keep);
        self.scale.retain_rows(keep);
        self.opacity.retain_rows(keep);
        self.color.retain_rows(keep);
    }

    pub fn push_zero_rows(&mut self, count: usize) {
        self.embedding.push_zero_rows(count);
        self.rotation.push_zero_rows(count);
        self.scale.push_zero_rows(count);
        self.opacity.push_zero_rows(count);
        self.color.push_zero_rows(count);
    }
}
