//! Raw slice kernels shared by the forward and backward passes.

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            axpy(av, &b[kk * n..(kk + 1) * n], crow);
        }
    }
    c
}

/// `da[m×k] += dc[m×n] · bᵀ`
pub fn matmul_grad_left(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for kk in 0..k {
            da[i * k + kk] += dot(dcrow, &b[kk * n..(kk + 1) * n]);
        }
    }
}

/// `db[k×n] += aᵀ · dc[m×n]`
pub fn matmul_grad_right(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            axpy(av, dcrow, &mut db[kk * n..(kk + 1) * n]);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let o = c * 4;
        acc[0] += a[o] * b[o];
        acc[1] += a[o + 1] * b[o + 1];
        acc[2] += a[o + 2] * b[o + 2];
        acc[3] += a[o + 3] * b[o + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for o in chunks * 4..a.len() {
        s += a[o] * b[o];
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// In-place numerically stable softmax over one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
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

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}
