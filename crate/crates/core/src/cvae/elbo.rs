use super::CvaeModel;
use crate::error::{Error, Result};
use crate::nn::{
    clamp_log_var, gaussian_kl, gaussian_kl_grad, gaussian_loglik, gaussian_nll_grad,
    ForwardCache, LOG_VAR_MAX, LOG_VAR_MIN,
};
use crate::num::Real;

/// Scratch buffers reused across samples.
#[derive(Debug, Clone, Default)]
pub struct ElboWorkspace<T> {
    enc_cache: ForwardCache<T>,
    dec_cache: ForwardCache<T>,
    enc_in: Vec<T>,
    dec_in: Vec<T>,
    d_enc_out: Vec<T>,
    d_dec_out: Vec<T>,
    grad_in: Vec<T>,
}

fn check_shapes<T: Real>(model: &CvaeModel<T>, x: &[T], c: &[T], eps_z: &[T]) -> Result<()> {
    if x.len() != model.kind.p_out() {
        return Err(Error::Shape { what: "target", expected: model.kind.p_out(), got: x.len() });
    }
    if c.len() != model.kind.p_in() {
        return Err(Error::Shape { what: "condition", expected: model.kind.p_in(), got: c.len() });
    }
    if eps_z.len() != model.arch.latent {
        return Err(Error::Shape { what: "latent noise", expected: model.arch.latent, got: eps_z.len() });
    }
    Ok(())
}

fn forward<T: Real>(
    model: &CvaeModel<T>,
    x: &[T],
    c: &[T],
    eps_z: &[T],
    ws: &mut ElboWorkspace<T>,
) -> Result<f64> {
    check_shapes(model, x, c, eps_z)?;
    let encoder = model
        .encoder
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{}: model has no encoder", model.kind)))?;
    ws.enc_in.clear();
    ws.enc_in.extend_from_slice(x);
    ws.enc_in.extend_from_slice(c);
    encoder.forward_cached(&ws.enc_in, &mut ws.enc_cache)?;
    let (mu_z, lv_z) = ws.enc_cache.split_output();
    let half = T::lit(0.5);
    ws.dec_in.clear();
    ws.dec_in.extend(
        mu_z.iter()
            .zip(lv_z)
            .zip(eps_z)
            .map(|((&m, &lv), &e)| m + (half * clamp_log_var(lv)).exp() * e),
    );
    ws.dec_in.extend_from_slice(c);
    model.decoder.forward_cached(&ws.dec_in, &mut ws.dec_cache)?;
    let (mu_x, lv_x) = ws.dec_cache.split_output();
    Ok(gaussian_kl(mu_z, lv_z) - gaussian_loglik(x, mu_x, lv_x))
}

/// Single-sample negative ELBO `KL(q(z|x,c) || N(0,I)) - log p(x|z,c)` with
/// `z = mu + sigma * eps_z`.
pub fn elbo_loss<T: Real>(model: &CvaeModel<T>, x: &[T], c: &[T], eps_z: &[T]) -> Result<f64> {
    forward(model, x, c, eps_z, &mut ElboWorkspace::default())
}

/// [`elbo_loss`] plus its gradient. Parameter gradients times `scale` are
/// accumulated into `enc_grad` and `dec_grad`.
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss_and_grad<T: Real>(
    model: &CvaeModel<T>,
    x: &[T],
    c: &[T],
    eps_z: &[T],
    scale: T,
    ws: &mut ElboWorkspace<T>,
    enc_grad: &mut [T],
    dec_grad: &mut [T],
) -> Result<f64> {
    weighted_elbo_grad(model, x, c, eps_z, scale, T::one(), ws, enc_grad, dec_grad)
}

/// As [`elbo_loss_and_grad`], but the gradient of the KL term is multiplied
/// by `kl_weight`. The returned loss is the unweighted negative ELBO.
#[allow(clippy::too_many_arguments)]
pub fn weighted_elbo_grad<T: Real>(
    model: &CvaeModel<T>,
    x: &[T],
    c: &[T],
    eps_z: &[T],
    scale: T,
    kl_weight: T,
    ws: &mut ElboWorkspace<T>,
    enc_grad: &mut [T],
    dec_grad: &mut [T],
) -> Result<f64> {
    let loss = forward(model, x, c, eps_z, ws)?;
    let p_out = model.kind.p_out();
    let l = model.arch.latent;

    ws.d_dec_out.clear();
    ws.d_dec_out.resize(2 * p_out, T::zero());
    {
        let (mu_x, lv_x) = ws.dec_cache.split_output();
        let (d_mu, d_lv) = ws.d_dec_out.split_at_mut(p_out);
        gaussian_nll_grad(x, mu_x, lv_x, scale, d_mu, d_lv);
    }
    model
        .decoder
        .backward_cached(&ws.dec_cache, &ws.d_dec_out, dec_grad, &mut ws.grad_in)?;

    ws.d_enc_out.clear();
    ws.d_enc_out.resize(2 * l, T::zero());
    {
        let (mu_z, lv_z) = ws.enc_cache.split_output();
        let (d_mu, d_lv) = ws.d_enc_out.split_at_mut(l);
        gaussian_kl_grad(mu_z, lv_z, scale * kl_weight, d_mu, d_lv);
        let half = T::lit(0.5);
        let (lo, hi) = (T::lit(LOG_VAR_MIN), T::lit(LOG_VAR_MAX));
        for i in 0..l {
            // grad_in already carries `scale` from the decoder upstream.
            let dz = ws.grad_in[i];
            d_mu[i] += dz;
            if lv_z[i] > lo && lv_z[i] < hi {
                d_lv[i] += dz * eps_z[i] * half * (half * lv_z[i]).exp();
            }
        }
    }
    let encoder = model.encoder.as_ref().expect("checked in forward");
    encoder.backward_cached(&ws.enc_cache, &ws.d_enc_out, enc_grad, &mut ws.grad_in)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::{Architecture, ModelKind, Normalization};
    use crate::rng::{fill_normal, stream, Domain};

    fn toy(kind: ModelKind, arch: Architecture, seed: u64) -> CvaeModel<f64> {
        let mut rng = stream(seed, Domain::Init, 0);
        let mut m = CvaeModel::new(kind, arch, Normalization::default(), 0.3, &mut rng).unwrap();
        // perturb the log-variance biases away from a shared value
        for p in m.decoder.params_mut() {
            *p += 0.05 * crate::rng::normal::<f64, _>(&mut rng);
        }
        m
    }

    fn check_grad(kind: ModelKind, arch: Architecture) {
        let m = toy(kind, arch, 3);
        let mut rng = stream(9, Domain::Audit, 0);
        let mut x = vec![0.0; kind.p_out()];
        let mut c = vec![0.0; kind.p_in()];
        let mut e = vec![0.0; arch.latent];
        fill_normal(&mut rng, &mut x);
        fill_normal(&mut rng, &mut c);
        fill_normal(&mut rng, &mut e);
        let n_enc = m.encoder.as_ref().unwrap().params().len();
        let n_dec = m.decoder.params().len();
        let (mut ge, mut gd) = (vec![0.0; n_enc], vec![0.0; n_dec]);
        let mut ws = ElboWorkspace::default();
        let loss = elbo_loss_and_grad(&m, &x, &c, &e, 1.0, &mut ws, &mut ge, &mut gd).unwrap();
        assert!((loss - elbo_loss(&m, &x, &c, &e).unwrap()).abs() < 1e-12);

        let h = 1e-6;
        let mut worst = 0.0f64;
        for (net, grads) in [(0usize, &ge), (1, &gd)] {
            let n = grads.len();
            for i in (0..n).step_by(1 + n / 60) {
                let mut mp = m.clone();
                let mut mm = m.clone();
                if net == 0 {
                    mp.encoder.as_mut().unwrap().params_mut()[i] += h;
                    mm.encoder.as_mut().unwrap().params_mut()[i] -= h;
                } else {
                    mp.decoder.params_mut()[i] += h;
                    mm.decoder.params_mut()[i] -= h;
                }
                let fd = (elbo_loss(&mp, &x, &c, &e).unwrap() - elbo_loss(&mm, &x, &c, &e).unwrap()) / (2.0 * h);
                let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "{kind}: worst relative gradient error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for kind in ModelKind::ALL {
            check_grad(kind, kind.default_arch());
        }
        check_grad(ModelKind::LengthGen, Architecture { depth: 1, width: 4, latent: 6 });
        check_grad(ModelKind::PathGen, Architecture { depth: 3, width: 12, latent: 9 });
    }

    #[test]
    fn scale_and_accumulation() {
        let kind = ModelKind::PathGen;
        let m = toy(kind, kind.default_arch(), 5);
        let (x, c, e) = ([0.1, 0.2, -0.3], [0.4, 0.5, 0.6], [0.0, 0.1, 0.2, 0.3, 0.4]);
        let n_enc = m.encoder.as_ref().unwrap().params().len();
        let n_dec = m.decoder.params().len();
        let mut ws = ElboWorkspace::default();
        let (mut g1, mut d1) = (vec![0.0; n_enc], vec![0.0; n_dec]);
        elbo_loss_and_grad(&m, &x, &c, &e, 1.0, &mut ws, &mut g1, &mut d1).unwrap();
        let (mut g2, mut d2) = (vec![0.0; n_enc], vec![0.0; n_dec]);
        elbo_loss_and_grad(&m, &x, &c, &e, 0.25, &mut ws, &mut g2, &mut d2).unwrap();
        elbo_loss_and_grad(&m, &x, &c, &e, 0.25, &mut ws, &mut g2, &mut d2).unwrap();
        for (a, b) in g1.iter().zip(&g2).chain(d1.iter().zip(&d2)) {
            assert!((0.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_weight_interpolates_linearly() {
        let kind = ModelKind::EventGen;
        let m = toy(kind, kind.default_arch(), 6);
        let x = [0.1, -0.2, 0.3, 0.0, 0.6, -0.8];
        let c = [0.5, 0.2, 0.9, 0.1, -0.3, 0.4, 0.7];
        let e = [0.3, -0.1, 0.8, 0.0, -1.2];
        let n = (m.encoder.as_ref().unwrap().params().len(), m.decoder.params().len());
        let grads = |w: f64| {
            let (mut g, mut d) = (vec![0.0; n.0], vec![0.0; n.1]);
            let l = weighted_elbo_grad(&m, &x, &c, &e, 1.0, w, &mut ElboWorkspace::default(), &mut g, &mut d).unwrap();
            (l, g, d)
        };
        let ((l0, g0, d0), (l1, g1, d1), (lh, gh, dh)) = (grads(0.0), grads(1.0), grads(0.5));
        assert_eq!(l0, l1);
        assert_eq!(lh, l1);
        for ((a, b), h) in g0.iter().zip(&g1).zip(&gh).chain(d0.iter().zip(&d1).zip(&dh)) {
            assert!((0.5 * (a + b) - h).abs() < 1e-12);
        }
        // the decoder never sees the KL term
        assert_eq!(d0, d1);
        let (mut g, mut d) = (vec![0.0; n.0], vec![0.0; n.1]);
        elbo_loss_and_grad(&m, &x, &c, &e, 1.0, &mut ElboWorkspace::default(), &mut g, &mut d).unwrap();
        assert_eq!((g, d), (g1, d1));
    }

    #[test]
    fn missing_encoder_is_an_error() {
        let m = toy(ModelKind::LengthGen, ModelKind::LengthGen.default_arch(), 1).without_encoder();
        assert!(matches!(elbo_loss(&m, &[0.0], &[0.0, 0.0], &[0.0, 0.0]), Err(Error::Config(_))));
        let m = toy(ModelKind::LengthGen, ModelKind::LengthGen.default_arch(), 1);
        assert!(elbo_loss(&m, &[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }
}
