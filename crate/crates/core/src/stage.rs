//! Differentiable stages: a forward map paired with its vector-Jacobian
//! product.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps an output cotangent to the input cotangent for one recorded forward pass.
pub struct Pullback(Box<dyn Fn(&Tensor) -> Result<Tensor> + Send + Sync>);

impl Pullback {
    pub fn new(f: impl Fn(&Tensor) -> Result<Tensor> + Send + Sync + 'static) -> Self {
        Self(Box::new(f))
    }

    pub fn identity() -> Self {
        Self::new(|g| Ok(g.clone()))
    }

    pub fn apply(&self, cotangent: &Tensor) -> Result<Tensor> {
        (self.0)(cotangent)
    }

    /// `self` after `next`: pulls back through `next` first.
    pub fn then(next: Pullback, first: Pullback) -> Pullback {
        Pullback::new(move |g| first.apply(&next.apply(g)?))
    }
}

pub trait Stage: Send + Sync {
    fn name(&self) -> &str;

    /// Output together with the pullback of this evaluation.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)>;

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        self.forward(x)?.1.apply(cotangent)
    }
}

/// Composition of stages, applied in order.
pub struct Chain {
    name: String,
    stages: Vec<Box<dyn Stage>>,
}

impl Chain {
    pub fn new(name: impl Into<String>, stages: Vec<Box<dyn Stage>>) -> Self {
        Self {
            name: name.into(),
            stages,
        }
    }

    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name()).collect()
    }
}

impl Stage for Chain {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        let mut cur = x.clone();
        let mut pb = Pullback::identity();
        for s in &self.stages {
            let (y, p) = s.forward(&cur)?;
            pb = Pullback::then(p, pb);
            cur = y;
        }
        Ok((cur, pb))
    }
}

/// Checks that a cotangent matches the output it pulls back.
pub(crate) fn check_cotangent(dims: &[usize], g: &Tensor) -> Result<()> {
    if g.dims() != dims {
        return Err(Error::shape(format!("cotangent {:?} for output {:?}", g.dims(), dims)));
    }
    Ok(())
}

/// Runs `build` on a fresh tape with `x` as the only leaf; the pullback
/// replays the recorded tape against each cotangent.
pub fn taped_forward(
    x: &Tensor,
    build: impl FnOnce(&mut crate::autodiff::Tape, crate::autodiff::Var) -> Result<crate::autodiff::Var>,
) -> Result<(Tensor, Pullback)> {
    let mut tape = crate::autodiff::Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = build(&mut tape, leaf)?;
    let y = tape.value(out)?.clone();
    let dims = y.dims().to_vec();
    let pb = Pullback::new(move |g| {
        check_cotangent(&dims, g)?;
        tape.backward(out, g)?.wrt(leaf)
    });
    Ok((y, pb))
}
