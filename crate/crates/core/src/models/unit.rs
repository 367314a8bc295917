use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, leaky_relu_backward, param_name, relu, relu_backward, tanh, tanh_backward,
    BatchNorm2d, BnStats, Conv2d, Mode, Module, Param,
};
use crate::tensor::{Batch, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Identity,
    Relu,
    Leaky,
    Tanh,
}

impl Act {
    pub fn apply<T: Scalar>(self, x: &mut [T]) {
        match self {
            Act::Identity => {}
            Act::Relu => relu(x),
            Act::Leaky => leaky_relu(x),
            Act::Tanh => tanh(x),
        }
    }

    /// `y` is the activation output.
    pub fn backward<T: Scalar>(self, y: &[T], dy: &mut [T]) {
        match self {
            Act::Identity => {}
            Act::Relu => relu_backward(y, dy),
            Act::Leaky => leaky_relu_backward(y, dy),
            Act::Tanh => tanh_backward(y, dy),
        }
    }
}

/// Convolution, optional batch norm, activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvUnit<T> {
    pub conv: Conv2d<T>,
    pub bn: Option<BatchNorm2d<T>>,
    pub act: Act,
}

pub struct UnitTrace<T> {
    pub x: Batch<T>,
    conv_out: Batch<T>,
    stats: Option<BnStats<T>>,
    pub y: Batch<T>,
}

impl<T: Scalar> ConvUnit<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: (usize, usize),
        norm: bool,
        act: Act,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            conv: Conv2d::new(in_c, out_c, kernel, stride, rng),
            bn: norm.then(|| BatchNorm2d::new(out_c)),
            act,
        }
    }

    pub fn forward(&self, x: Batch<T>, mode: Mode) -> Result<UnitTrace<T>> {
        let conv_out = self.conv.forward(&x)?;
        let (mut y, stats) = match &self.bn {
            Some(bn) => {
                let (y, s) = bn.forward(&conv_out, mode)?;
                (y, Some(s))
            }
            None => (conv_out.clone(), None),
        };
        self.act.apply(&mut y.data);
        Ok(UnitTrace { x, conv_out, stats, y })
    }

    pub fn backward(&mut self, trace: &UnitTrace<T>, mut dy: Batch<T>) -> Batch<T> {
        self.act.backward(&trace.y.data, &mut dy.data);
        if let (Some(bn), Some(stats)) = (&mut self.bn, &trace.stats) {
            dy = bn.backward(&trace.conv_out, stats, &dy);
        }
        self.conv.backward(&trace.x, &dy)
    }

    pub fn commit(&mut self, trace: &UnitTrace<T>) {
        if let (Some(bn), Some(stats)) = (&mut self.bn, &trace.stats) {
            bn.commit(stats);
        }
    }
}

impl<T: Scalar> Module<T> for ConvUnit<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(&param_name(prefix, "conv"), f);
        if let Some(bn) = &self.bn {
            bn.visit(&param_name(prefix, "bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(&param_name(prefix, "conv"), f);
        if let Some(bn) = &mut self.bn {
            bn.visit_mut(&param_name(prefix, "bn"), f);
        }
    }
}

/// Like [`check_finite`], but also looks before the activation, since ReLU maps NaN to 0.
pub fn check_unit<T: Scalar>(t: &UnitTrace<T>, stage: &str) -> Result<()> {
    check_finite(&t.conv_out, stage)?;
    check_finite(&t.y, stage)
}

/// Fail with a numeric error naming `stage` if `x` has a non-finite value.
pub fn check_finite<T: Scalar>(x: &Batch<T>, stage: &str) -> Result<()> {
    if x.all_finite() {
        Ok(())
    } else {
        Err(Error::numeric(stage, "non-finite activation"))
    }
}
