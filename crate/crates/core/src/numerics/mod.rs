//! Dense tensors, a sparse constant operand, reverse-mode gradients,
//! parameter storage and optimizers.

mod gradcheck;
mod optim;
mod params;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradCheckReport, ParamCheck, FD_EPSILON, REL_FLOOR};
pub use optim::{Adam, Optimizer, Sgd};
pub use params::{ParamStore, Slot};
pub use sparse::CsrMatrix;
pub use tape::{sigmoid, softmax, softplus, Tape, Var};
pub use tensor::{dot, Tensor};

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    fn det_tensor(rows: usize, cols: usize, seed: f64) -> Tensor {
        let data = (0..rows * cols)
            .map(|i| ((i as f64 + 1.0) * seed).sin() * 0.8)
            .collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    /// Every primitive on one composite scalar, checked against central
    /// differences.
    #[test]
    fn composite_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        store.insert("a", det_tensor(4, 3, 0.7), true);
        store.insert("b", det_tensor(3, 3, 1.3), true);
        store.insert("bias", det_tensor(1, 3, 2.1), true);
        store.insert("q", det_tensor(3, 1, 0.4), true);
        store.insert("logits", det_tensor(4, 5, 0.9), true);
        let sp = Arc::new(CsrMatrix::from_dense(
            &Tensor::from_rows(&[
                vec![0.5, 0.5, 0.0, 0.0],
                vec![0.5, 0.25, 0.25, 0.0],
                vec![0.0, 0.25, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ])
            .unwrap(),
        ));
        let perm: Arc<[usize]> = Arc::from(vec![2, 0, 3, 1]);
        let labels: Arc<[usize]> = Arc::from(vec![0, 4, 2, 2]);
        let forward = |t: &mut Tape, s: &ParamStore| -> crate::Result<Var> {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let bias = t.param(s, "bias")?;
            let q = t.param(s, "q")?;
            let h = t.sp_matmul(&sp, a)?;
            let hb = t.matmul(h, b)?;
            let hb = t.add_bias(hb, bias)?;
            let z = t.tanh(hb)?;
            let r = t.relu(hb)?;
            let zr = t.hadamard(z, r)?;
            let zr = t.add(zr, h)?;
            let score = t.matmul(zr, q)?;
            let score = t.sigmoid(score)?;
            let a1 = t.mean_all(score)?;
            let sh = t.gather_rows(zr, Arc::clone(&perm))?;
            let rd = t.row_dot(zr, sh)?;
            let sp_neg = t.scale(rd, -1.0)?;
            let sp_neg = t.softplus(sp_neg)?;
            let a2 = t.mean_all(sp_neg)?;
            let m = t.mean_rows(zr)?;
            let m = t.sigmoid(m)?;
            let mt = t.transpose(m)?;
            let hm = t.matmul(zr, mt)?;
            let a3 = t.sum_all(hm)?;
            let v = t.concat_scalars(&[a1, a2, a3])?;
            let w = t.softmax_vec(v)?;
            let w1 = t.element(w, 1)?;
            let scaled = t.mul_scalar(h, w1)?;
            let a4 = t.sum_all(scaled)?;
            let lg = t.param(s, "logits")?;
            let ce = t.softmax_cross_entropy(lg, Arc::clone(&labels))?;
            let s1 = t.add(a4, ce)?;
            t.add(s1, a2)
        };
        let report = check_gradients(&store, forward, 1e-6).unwrap();
        assert!(report.passed(), "{report}");
        assert!(!check_gradients(&store, forward, 0.0).unwrap().passed());
    }
}
