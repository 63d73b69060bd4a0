//! Central-difference verification of tape gradients.

use std::collections::{BTreeMap, HashMap};

use super::tensor::Tensor;
use super::AutodiffError;

/// Compare analytic gradients against central differences
/// `(f(x+eps) - f(x-eps)) / (2 eps)` per coordinate and return the maximum
/// relative error, using `max(|analytic|, |numeric|, 1e-8)` as denominator.
///
/// `loss` must be a pure function of the supplied parameters; `analytic`
/// holds the tape gradients evaluated at the same point.
pub fn grad_check<F>(
    params: &BTreeMap<String, Tensor>,
    analytic: &HashMap<String, Tensor>,
    eps: f64,
    mut loss: F,
) -> Result<f64, AutodiffError>
where
    F: FnMut(&BTreeMap<String, Tensor>) -> Result<f64, AutodiffError>,
{
    if eps <= 0.0 {
        return Err(AutodiffError::InvalidArgument("grad_check: eps must be positive".into()));
    }
    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    let names: Vec<String> = params.keys().cloned().collect();
    for name in names {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| AutodiffError::MissingGradient(name.clone()))?;
        let n = params[&name].numel();
        for idx in 0..n {
            let original = work[&name].data()[idx];
            work.get_mut(&name).unwrap().data_mut()[idx] = original + eps;
            let up = loss(&work)?;
            work.get_mut(&name).unwrap().data_mut()[idx] = original - eps;
            let down = loss(&work)?;
            work.get_mut(&name).unwrap().data_mut()[idx] = original;
            if !up.is_finite() || !down.is_finite() {
                return Err(AutodiffError::NonFinite(format!(
                    "grad_check objective at {name}[{idx}]"
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            let exact = grad.data()[idx];
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((numeric - exact).abs() / denom);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        // loss = sum(w^2) in 3 variables; finite differences are exact for
        // quadratics up to floating-point noise
        let w = Tensor::new(vec![3], vec![0.3, -1.2, 2.5]).unwrap();
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), w);

        let eval = |p: &BTreeMap<String, Tensor>| -> Result<(f64, HashMap<String, Tensor>), AutodiffError> {
            let mut tape = Tape::new();
            let w = tape.leaf("w", p["w"].clone());
            let zero = tape.constant(Tensor::zeros(&[3]));
            let loss = tape.mse_loss(w, zero)?;
            let value = tape.value(loss).item()?;
            let grads = tape.backward(loss)?;
            Ok((value, grads))
        };

        let (_, analytic) = eval(&params).unwrap();
        let err = grad_check(&params, &analytic, 1e-5, |p| eval(p).map(|(v, _)| v)).unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn softmax_cross_entropy_head() {
        let logits = Tensor::new(vec![2, 4], vec![0.1, -0.4, 0.9, 0.3, -1.0, 0.2, 0.5, 0.0])
            .unwrap();
        let mut params = BTreeMap::new();
        params.insert("logits".to_string(), logits);
        let labels = [Some(2), Some(0)];

        let eval = |p: &BTreeMap<String, Tensor>| -> Result<(f64, HashMap<String, Tensor>), AutodiffError> {
            let mut tape = Tape::new();
            let logits = tape.leaf("logits", p["logits"].clone());
            let loss = tape.masked_cross_entropy(logits, &labels)?;
            let value = tape.value(loss).item()?;
            let grads = tape.backward(loss)?;
            Ok((value, grads))
        };

        let (_, analytic) = eval(&params).unwrap();
        let err = grad_check(&params, &analytic, 1e-5, |p| eval(p).map(|(v, _)| v)).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn two_layer_mlp_against_finite_differences() {
        // finite-difference oracle over a small randomly-initialized MLP
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut rand_tensor = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            Tensor::new(shape.to_vec(), data).unwrap()
        };
        let mut params = BTreeMap::new();
        params.insert("w1".to_string(), rand_tensor(&[3, 4]));
        params.insert("b1".to_string(), rand_tensor(&[4]));
        params.insert("w2".to_string(), rand_tensor(&[4, 2]));
        params.insert("b2".to_string(), rand_tensor(&[2]));
        let input = rand_tensor(&[2, 3]);
        let target = rand_tensor(&[2, 2]);

        let eval = |p: &BTreeMap<String, Tensor>| -> Result<(f64, HashMap<String, Tensor>), AutodiffError> {
            let mut tape = Tape::new();
            let x = tape.constant(input.clone());
            let w1 = tape.leaf("w1", p["w1"].clone());
            let b1 = tape.leaf("b1", p["b1"].clone());
            let w2 = tape.leaf("w2", p["w2"].clone());
            let b2 = tape.leaf("b2", p["b2"].clone());
            let h = tape.matmul(x, w1)?;
            let h = tape.bias_add(h, b1)?;
            let h = tape.gelu(h)?;
            let out = tape.matmul(h, w2)?;
            let out = tape.bias_add(out, b2)?;
            let t = tape.constant(target.clone());
            let loss = tape.mse_loss(out, t)?;
            let value = tape.value(loss).item()?;
            let grads = tape.backward(loss)?;
            Ok((value, grads))
        };

        let (_, analytic) = eval(&params).unwrap();
        let err = grad_check(&params, &analytic, 1e-5, |p| eval(p).map(|(v, _)| v)).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}
