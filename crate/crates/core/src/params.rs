//! Named parameter tensors and traversal.
//!
//! Every layer exposes its tensors through [`Parameterized`], which walks
//! them in a fixed order with dotted names (`decoder.msab.0.up4.weight`).
//! Optimizers, checkpoints and gradient checks all rely on that order being
//! stable for a given configuration.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// A learnable tensor or a non-learnable buffer (batch-norm running stats).
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    /// Accumulated gradient. Empty until the first backward pass touches it.
    pub grad: Vec<f64>,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: &[usize], value: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "param value does not match its shape"
        );
        Self {
            value,
            grad: Vec::new(),
            shape: shape.to_vec(),
            trainable: true,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn buffer(shape: &[usize], fill: f64) -> Self {
        Self {
            trainable: false,
            ..Self::new(shape, vec![fill; shape.iter().product()])
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.value.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        let mut s = String::with_capacity(prefix.len() + name.len() + 1);
        s.push_str(prefix);
        s.push('.');
        s.push_str(name);
        s
    }
}

pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    /// Number of trainable scalars.
    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.len()
            }
        });
        n
    }

    /// Reads one scalar of the named tensor.
    fn scalar(&self, name: &str, index: usize) -> Option<f64> {
        let mut out = None;
        self.visit("", &mut |n, p| {
            if n == name {
                out = p.value.get(index).copied();
            }
        });
        out
    }

    /// Overwrites one scalar of the named tensor; false when absent.
    fn set_scalar(&mut self, name: &str, index: usize, value: f64) -> bool {
        let mut hit = false;
        self.visit_mut("", &mut |n, p| {
            if n == name {
                if let Some(slot) = p.value.get_mut(index) {
                    *slot = value;
                    hit = true;
                }
            }
        });
        hit
    }

    /// `(name, shape)` for every tensor, buffers included.
    fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| {
            out.push((String::from(name), p.shape.clone()))
        });
        out
    }
}

impl Parameterized for Param {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(prefix, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(prefix, self)
    }
}

impl<T: Parameterized> Parameterized for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(inner) = self {
            inner.visit(prefix, f)
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(inner) = self {
            inner.visit_mut(prefix, f)
        }
    }
}

impl<T: Parameterized> Parameterized for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, item) in self.iter().enumerate() {
            item.visit(&join(prefix, &alloc::format!("{i}")), f)
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, item) in self.iter_mut().enumerate() {
            item.visit_mut(&join(prefix, &alloc::format!("{i}")), f)
        }
    }
}

/// Implements [`Parameterized`] by visiting the listed fields in order.
macro_rules! impl_parameterized {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::params::Parameterized for $ty {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &$crate::params::Param)) {
                $( $crate::params::Parameterized::visit(&self.$field, &$crate::params::join(prefix, stringify!($field)), f); )*
            }

            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut $crate::params::Param)) {
                $( $crate::params::Parameterized::visit_mut(&mut self.$field, &$crate::params::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use impl_parameterized;
