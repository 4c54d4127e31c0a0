//! Small differentiable classifiers with hand-derived gradients and
//! Hessian-vector products.

mod dataset;
mod net;
mod spec;

pub use dataset::{Dataset, DatasetMeta, Example, GaussianMixtureSpec};
pub use net::{
    batch_hvp, evaluate_all, forward_eval, grad_output_f, hvp, loss_grad, output_grads,
    per_example_grads, risk, risk_gradient, risk_hessian, risk_hvp, ForwardEval, OutputGrad,
    PROB_CLAMP,
};
pub use spec::{Checkpoint, ModelKind, ModelSpec};
