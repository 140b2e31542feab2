//! Dense networks with hand-written reverse mode, the Gaussian terms of the
//! evidence lower bound, and the AdamW optimizer.

mod adamw;
mod loss;
mod mlp;

pub use adamw::{AdamW, AdamWConfig};
pub use loss::{
    clamp_log_var, gaussian_kl, gaussian_kl_grad, gaussian_loglik, gaussian_nll_grad,
    reparameterize, sigmoid, softplus, LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use mlp::{ForwardCache, Gradients, LayerView, MlpWeights};
