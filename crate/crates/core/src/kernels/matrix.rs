use nalgebra::DMatrix;

use super::families::{check_pair, eval_leaf};
use super::spec::KernelSpec;
use crate::error::{invalid, Result};

fn check_param_len(spec: &KernelSpec, params: &[f64]) -> Result<()> {
    let expected = spec.param_count();
    if params.len() != expected {
        return invalid(format!("kernel expects {expected} parameters, got {}", params.len()));
    }
    if params.iter().any(|v| !v.is_finite()) {
        return invalid("kernel parameter is not finite");
    }
    Ok(())
}

/// Evaluates a composite kernel at one pair of inputs.
pub fn eval_composite(spec: &KernelSpec, x: &[f64], x2: &[f64], params: &[f64]) -> Result<f64> {
    let d = spec.input_dim()?;
    check_param_len(spec, params)?;
    check_pair(x, x2, d)?;
    eval_node(spec, x, x2, params, None)
}

/// Value and gradient with respect to every log-domain parameter.
pub fn eval_composite_with_grad(spec: &KernelSpec, x: &[f64], x2: &[f64], params: &[f64]) -> Result<(f64, Vec<f64>)> {
    let d = spec.input_dim()?;
    check_param_len(spec, params)?;
    check_pair(x, x2, d)?;
    let mut grad = vec![0.0; params.len()];
    let v = eval_node(spec, x, x2, params, Some(&mut grad))?;
    Ok((v, grad))
}

fn eval_node(spec: &KernelSpec, x: &[f64], x2: &[f64], params: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
    match spec {
        KernelSpec::Leaf { family, .. } => eval_leaf(*family, x, x2, params, grad),
        KernelSpec::Sum(children) => {
            let mut offset = 0;
            let mut total = 0.0;
            match grad {
                None => {
                    for c in children {
                        let n = c.param_count();
                        total += eval_node(c, x, x2, &params[offset..offset + n], None)?;
                        offset += n;
                    }
                }
                Some(g) => {
                    for c in children {
                        let n = c.param_count();
                        total += eval_node(c, x, x2, &params[offset..offset + n], Some(&mut g[offset..offset + n]))?;
                        offset += n;
                    }
                }
            }
            Ok(total)
        }
        KernelSpec::Product(children) => {
            let mut values = Vec::with_capacity(children.len());
            let mut offset = 0;
            let mut ranges = Vec::with_capacity(children.len());
            match grad {
                None => {
                    for c in children {
                        let n = c.param_count();
                        values.push(eval_node(c, x, x2, &params[offset..offset + n], None)?);
                        offset += n;
                    }
                    Ok(values.iter().product())
                }
                Some(g) => {
                    for c in children {
                        let n = c.param_count();
                        let r = offset..offset + n;
                        values.push(eval_node(c, x, x2, &params[r.clone()], Some(&mut g[r.clone()]))?);
                        ranges.push(r);
                        offset += n;
                    }
                    // d(Π v)/dθ for a child's parameter = (product of the other children) · dv_c/dθ.
                    let m = values.len();
                    let mut prefix = vec![1.0; m + 1];
                    for i in 0..m {
                        prefix[i + 1] = prefix[i] * values[i];
                    }
                    let mut suffix = 1.0;
                    for i in (0..m).rev() {
                        let others = prefix[i] * suffix;
                        for gj in &mut g[ranges[i].clone()] {
                            *gj *= others;
                        }
                        suffix *= values[i];
                    }
                    Ok(prefix[m])
                }
            }
        }
    }
}

fn check_inputs(spec: &KernelSpec, params: &[f64], x: &DMatrix<f64>) -> Result<usize> {
    let d = spec.input_dim()?;
    check_param_len(spec, params)?;
    if x.ncols() != d {
        return invalid(format!("input matrix has {} columns, kernel expects {d}", x.ncols()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("input matrix contains a non-finite value");
    }
    Ok(d)
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Cross-covariance matrix `K(X, X2)` (n × m).
pub fn kernel_matrix(spec: &KernelSpec, params: &[f64], x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_inputs(spec, params, x)?;
    check_inputs(spec, params, x2)?;
    let (a, b) = (rows(x), rows(x2));
    let mut k = DMatrix::zeros(a.len(), b.len());
    for (i, xi) in a.iter().enumerate() {
        for (j, xj) in b.iter().enumerate() {
            k[(i, j)] = eval_node(spec, xi, xj, params, None)?;
        }
    }
    Ok(k)
}

/// Symmetric Gram matrix `K(X, X)`; the lower triangle mirrors the upper one.
pub fn gram_matrix(spec: &KernelSpec, params: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_inputs(spec, params, x)?;
    let a = rows(x);
    let n = a.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = eval_node(spec, &a[i], &a[j], params, None)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `∂K(X, X)/∂θ_i` for every log-domain kernel parameter.
pub fn kernel_matrix_grad(spec: &KernelSpec, params: &[f64], x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    Ok(gram_with_grad(spec, params, x)?.1)
}

/// Gram matrix together with its parameter derivatives, in one pass.
pub(crate) fn gram_with_grad(
    spec: &KernelSpec,
    params: &[f64],
    x: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    check_inputs(spec, params, x)?;
    let a = rows(x);
    let n = a.len();
    let p = params.len();
    let mut k = DMatrix::zeros(n, n);
    let mut grads = vec![DMatrix::zeros(n, n); p];
    let mut g = vec![0.0; p];
    for i in 0..n {
        for j in i..n {
            let v = eval_node(spec, &a[i], &a[j], params, Some(&mut g))?;
            k[(i, j)] = v;
            k[(j, i)] = v;
            for (m, gv) in grads.iter_mut().zip(&g) {
                m[(i, j)] = *gv;
                m[(j, i)] = *gv;
            }
        }
    }
    Ok((k, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sum_of_ard_leaves_at_zero_distance() {
        let spec = KernelSpec::sum(vec![KernelSpec::ard_se(2), KernelSpec::ard_se(2)]);
        let params = [1.5f64.ln(), 0.2, 0.1, 0.25f64.ln(), -1.0, 3.0];
        let v = eval_composite(&spec, &[0.4, 0.1], &[0.4, 0.1], &params).unwrap();
        assert_relative_eq!(v, 1.75, max_relative = 1e-15);
    }

    #[test]
    fn periodic_plus_se_hand_value() {
        let spec = KernelSpec::sum(vec![KernelSpec::periodic(1), KernelSpec::ard_se(1)]);
        let v = eval_composite(&spec, &[0.0], &[0.5], &[0.0; 5]).unwrap();
        // exp(-2) + exp(-0.25)
        assert_relative_eq!(v, 0.135335283 + 0.778800783, epsilon = 1e-9);
    }

    #[test]
    fn product_node_multiplies_children() {
        let a = KernelSpec::ard_se(2);
        let b = KernelSpec::neural_net(2);
        let spec = KernelSpec::product(vec![a.clone(), b.clone()]);
        let pa = [0.3, -0.4, 0.8];
        let pb = [-0.1, 0.2, -0.7];
        let params: Vec<f64> = pa.iter().chain(&pb).copied().collect();
        let (x, y) = ([0.2, -1.3], [0.9, 0.4]);
        let va = eval_composite(&a, &x, &y, &pa).unwrap();
        let vb = eval_composite(&b, &x, &y, &pb).unwrap();
        assert_relative_eq!(eval_composite(&spec, &x, &y, &params).unwrap(), va * vb, max_relative = 1e-15);
    }

    #[test]
    fn param_length_mismatch_is_rejected() {
        let spec = KernelSpec::sum(vec![KernelSpec::periodic(1), KernelSpec::ard_se(1)]);
        assert!(eval_composite(&spec, &[0.0], &[1.0], &[0.0; 4]).is_err());
        assert!(kernel_matrix(&spec, &[0.0; 5], &DMatrix::zeros(2, 2), &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn single_entry_matrix_is_scalar_eval() {
        let spec = KernelSpec::ard_se(2);
        let p = [0.1, 0.2, 0.3];
        let x = DMatrix::from_row_slice(1, 2, &[0.5, -0.5]);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let k = kernel_matrix(&spec, &p, &x, &y).unwrap();
        assert_eq!(k.shape(), (1, 1));
        assert_eq!(k[(0, 0)], eval_composite(&spec, &[0.5, -0.5], &[1.0, 2.0], &p).unwrap());
    }

    #[test]
    fn log_signal_variance_gradient_equals_gram() {
        let spec = KernelSpec::ard_se(2);
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.5, -0.2, 2.0, 0.3]);
        let p = [0.4, -0.3, 0.9];
        let k = gram_matrix(&spec, &p, &x).unwrap();
        let g = kernel_matrix_grad(&spec, &p, &x).unwrap();
        assert_eq!(g.len(), 3);
        assert_relative_eq!(g[0], k, max_relative = 1e-15);
    }
}
