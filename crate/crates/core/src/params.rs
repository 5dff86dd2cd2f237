//! Named access to trainable tensors.

use crate::error::Result;
use crate::tensor::{Conv2d, Tensor};

/// A structure owning trainable tensors under stable names.
///
/// Gradients are stored in a second instance of the same type (see each
/// implementor's `zeros_like`), so optimizers walk both in lockstep.
pub trait Parameters<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>);

    /// Structural validity checked after every optimizer step.
    fn validate(&self) -> Result<()> {
        Ok(())
    }

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        self.collect("", &mut v);
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = Vec::new();
        self.collect_mut("", &mut v);
        v
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.data().len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T> Parameters<T> for Conv2d<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}
