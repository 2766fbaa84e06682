//! Plain loops over row-major buffers. Accumulation order is fixed so
//! results are reproducible bit for bit.

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · bᵀ` where `b` is stored as `n×k`.
pub fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k×n] += aᵀ · b` where `a` is `m×k` and `b` is `m×n`.
pub fn matmul_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `out[m] += a[m×k] · x[k]`
pub fn matvec_acc(a: &[f64], x: &[f64], out: &mut [f64], m: usize, k: usize) {
    for i in 0..m {
        out[i] += dot(&a[i * k..(i + 1) * k], x);
    }
}

/// `out[k] += aᵀ · y` where `a` is `m×k`.
pub fn matvec_t_acc(a: &[f64], y: &[f64], out: &mut [f64], m: usize, k: usize) {
    for i in 0..m {
        let yi = y[i];
        if yi == 0.0 {
            continue;
        }
        for (o, &av) in out.iter_mut().zip(&a[i * k..(i + 1) * k]) {
            *o += yi * av;
        }
    }
}

/// `out[m×k] += y[m] ⊗ x[k]`
pub fn outer_acc(y: &[f64], x: &[f64], out: &mut [f64]) {
    let k = x.len();
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        for (o, &xv) in out[i * k..(i + 1) * k].iter_mut().zip(x) {
            *o += yi * xv;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
