//! Differentiable ops. Each op is a free function returning a new [`Var`]
//! plus a private struct carrying its backward rule.

use crate::tensor::gemm;
use crate::var::Backward;
use crate::{Scalar, Tensor, Var};

fn t<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

// ---------------------------------------------------------------- linear

struct LinearOp<T: Scalar> {
    x: Var<T>,
    w: Var<T>,
    b: Option<Var<T>>,
}

/// `x @ w + b` over the last axis of `x`; `w` is `[in, out]`.
pub fn linear<T: Scalar>(x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Var<T> {
    let xv = x.value();
    let wv = w.value();
    assert_eq!(wv.shape().len(), 2, "linear weight must be 2-D");
    let (k, n) = (wv.shape()[0], wv.shape()[1]);
    assert_eq!(xv.last_dim(), k, "linear: input width {} vs weight rows {k}", xv.last_dim());
    let rows = xv.rows();
    let mut out = match b {
        Some(b) => {
            assert_eq!(b.value().len(), n, "linear bias width");
            let bias = b.value().data();
            let mut o = Vec::with_capacity(rows * n);
            for _ in 0..rows {
                o.extend_from_slice(bias);
            }
            o
        }
        None => vec![T::zero(); rows * n],
    };
    let beta = if b.is_some() { T::one() } else { T::zero() };
    gemm(rows, k, n, T::one(), xv.data(), k, 1, wv.data(), n, 1, beta, &mut out, n, 1);
    let mut shape = xv.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Var::from_op(Tensor::new(shape, out), LinearOp { x: x.clone(), w: w.clone(), b: b.cloned() })
}

impl<T: Scalar> Backward<T> for LinearOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        let mut p = vec![&self.x, &self.w];
        if let Some(b) = &self.b {
            p.push(b);
        }
        p
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        let xv = self.x.value();
        let wv = self.w.value();
        let (k, n) = (wv.shape()[0], wv.shape()[1]);
        let rows = xv.rows();
        if self.x.requires_grad() {
            let mut dx = vec![T::zero(); rows * k];
            gemm(rows, n, k, T::one(), g.data(), n, 1, wv.data(), 1, n, T::zero(), &mut dx, k, 1);
            self.x.accumulate_grad(Tensor::new(xv.shape().to_vec(), dx));
        }
        if self.w.requires_grad() {
            let mut dw = vec![T::zero(); k * n];
            gemm(k, rows, n, T::one(), xv.data(), 1, k, g.data(), n, 1, T::zero(), &mut dw, n, 1);
            self.w.accumulate_grad(Tensor::new(vec![k, n], dw));
        }
        if let Some(b) = &self.b {
            if b.requires_grad() {
                let mut db = vec![T::zero(); n];
                for r in 0..rows {
                    for (acc, &v) in db.iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                        *acc = *acc + v;
                    }
                }
                b.accumulate_grad(Tensor::new(b.shape().to_vec(), db));
            }
        }
    }
}

// ------------------------------------------------------------ elementwise

struct AddOp<T: Scalar> {
    a: Var<T>,
    b: Var<T>,
    b_sign: T,
}

pub fn add<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let out = a.value().zip_map(b.value(), |x, y| x + y);
    Var::from_op(out, AddOp { a: a.clone(), b: b.clone(), b_sign: T::one() })
}

pub fn sub<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let out = a.value().zip_map(b.value(), |x, y| x - y);
    Var::from_op(out, AddOp { a: a.clone(), b: b.clone(), b_sign: -T::one() })
}

impl<T: Scalar> Backward<T> for AddOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        self.a.accumulate_grad(g.clone());
        if self.b.requires_grad() {
            let gb = if self.b_sign == T::one() { g.clone() } else { g.scale(self.b_sign) };
            self.b.accumulate_grad(gb);
        }
    }
}

struct MulOp<T: Scalar> {
    a: Var<T>,
    b: Var<T>,
}

/// Elementwise product.
pub fn mul<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let out = a.value().zip_map(b.value(), |x, y| x * y);
    Var::from_op(out, MulOp { a: a.clone(), b: b.clone() })
}

impl<T: Scalar> Backward<T> for MulOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        if self.a.requires_grad() {
            self.a.accumulate_grad(g.zip_map(self.b.value(), |g, b| g * b));
        }
        if self.b.requires_grad() {
            self.b.accumulate_grad(g.zip_map(self.a.value(), |g, a| g * a));
        }
    }
}

struct ScaleOp<T: Scalar> {
    x: Var<T>,
    c: T,
}

pub fn scale<T: Scalar>(x: &Var<T>, c: T) -> Var<T> {
    Var::from_op(x.value().scale(c), ScaleOp { x: x.clone(), c })
}

impl<T: Scalar> Backward<T> for ScaleOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        self.x.accumulate_grad(g.scale(self.c));
    }
}

struct ReshapeOp<T: Scalar> {
    x: Var<T>,
}

pub fn reshape<T: Scalar>(x: &Var<T>, shape: impl Into<Vec<usize>>) -> Var<T> {
    Var::from_op(x.value().reshape(shape), ReshapeOp { x: x.clone() })
}

impl<T: Scalar> Backward<T> for ReshapeOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        self.x.accumulate_grad(g.reshape(self.x.shape().to_vec()));
    }
}

struct AddTiledOp<T: Scalar> {
    x: Var<T>,
    y: Var<T>,
}

/// `x + y` where `y` is repeated to cover `x` (e.g. `[L, d]` onto `[B, L, d]`).
pub fn add_tiled<T: Scalar>(x: &Var<T>, y: &Var<T>) -> Var<T> {
    let (xv, yv) = (x.value(), y.value());
    let n = yv.len();
    assert!(n > 0 && xv.len() % n == 0, "add_tiled: {:?} does not tile {:?}", yv.shape(), xv.shape());
    let mut out = xv.data().to_vec();
    for chunk in out.chunks_mut(n) {
        for (o, &b) in chunk.iter_mut().zip(yv.data()) {
            *o = *o + b;
        }
    }
    Var::from_op(Tensor::new(xv.shape().to_vec(), out), AddTiledOp { x: x.clone(), y: y.clone() })
}

impl<T: Scalar> Backward<T> for AddTiledOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.x, &self.y]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        self.x.accumulate_grad(g.clone());
        if self.y.requires_grad() {
            let n = self.y.value().len();
            let mut gy = vec![T::zero(); n];
            for chunk in g.data().chunks(n) {
                for (acc, &v) in gy.iter_mut().zip(chunk) {
                    *acc = *acc + v;
                }
            }
            self.y.accumulate_grad(Tensor::new(self.y.shape().to_vec(), gy));
        }
    }
}

struct AddGroupedOp<T: Scalar> {
    x: Var<T>,
    y: Var<T>,
    group: usize,
}

/// Row `r` of `y` (`[G, d]`) is added to rows `r*group .. (r+1)*group` of `x`.
pub fn add_grouped<T: Scalar>(x: &Var<T>, y: &Var<T>, group: usize) -> Var<T> {
    let (xv, yv) = (x.value(), y.value());
    let d = yv.last_dim();
    assert_eq!(xv.last_dim(), d, "add_grouped width");
    assert_eq!(xv.rows(), yv.rows() * group, "add_grouped: rows {} vs {} groups of {group}", xv.rows(), yv.rows());
    let mut out = xv.data().to_vec();
    for (r, chunk) in out.chunks_mut(d).enumerate() {
        for (o, &b) in chunk.iter_mut().zip(yv.row(r / group)) {
            *o = *o + b;
        }
    }
    Var::from_op(Tensor::new(xv.shape().to_vec(), out), AddGroupedOp { x: x.clone(), y: y.clone(), group })
}

impl<T: Scalar> Backward<T> for AddGroupedOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.x, &self.y]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        self.x.accumulate_grad(g.clone());
        if self.y.requires_grad() {
            let d = self.y.value().last_dim();
            let mut gy = vec![T::zero(); self.y.value().len()];
            for (r, chunk) in g.data().chunks(d).enumerate() {
                let base = (r / self.group) * d;
                for (acc, &v) in gy[base..base + d].iter_mut().zip(chunk) {
                    *acc = *acc + v;
                }
            }
            self.y.accumulate_grad(Tensor::new(self.y.shape().to_vec(), gy));
        }
    }
}

struct ConcatOp<T: Scalar> {
    a: Var<T>,
    b: Var<T>,
}

/// Concatenate along the last axis.
pub fn concat_last<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let (av, bv) = (a.value(), b.value());
    assert_eq!(av.rows(), bv.rows(), "concat_last row mismatch");
    let (da, db) = (av.last_dim(), bv.last_dim());
    let mut out = Vec::with_capacity(av.len() + bv.len());
    for r in 0..av.rows() {
        out.extend_from_slice(av.row(r));
        out.extend_from_slice(bv.row(r));
    }
    let mut shape = av.shape().to_vec();
    *shape.last_mut().unwrap() = da + db;
    Var::from_op(Tensor::new(shape, out), ConcatOp { a: a.clone(), b: b.clone() })
}

impl<T: Scalar> Backward<T> for ConcatOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        let (da, db) = (self.a.value().last_dim(), self.b.value().last_dim());
        let split = |off: usize, w: usize| -> Vec<T> {
            g.data().chunks(da + db).flat_map(|row| row[off..off + w].iter().copied()).collect()
        };
        if self.a.requires_grad() {
            self.a.accumulate_grad(Tensor::new(self.a.shape().to_vec(), split(0, da)));
        }
        if self.b.requires_grad() {
            self.b.accumulate_grad(Tensor::new(self.b.shape().to_vec(), split(da, db)));
        }
    }
}

// ------------------------------------------------------------ activations

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

struct GeluOp<T: Scalar> {
    x: Var<T>,
}

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: &Var<T>) -> Var<T> {
    let (c, k, half) = (t::<T>(GELU_C), t::<T>(0.044715), t::<T>(0.5));
    let out = x.value().map(|v| half * v * (T::one() + (c * (v + k * v * v * v)).tanh()));
    Var::from_op(out, GeluOp { x: x.clone() })
}

impl<T: Scalar> Backward<T> for GeluOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        let (c, k, half, three) = (t::<T>(GELU_C), t::<T>(0.044715), t::<T>(0.5), t::<T>(3.0));
        let dx = self.x.value().zip_map(g, |v, g| {
            let th = (c * (v + k * v * v * v)).tanh();
            let d = half * (T::one() + th) + half * v * (T::one() - th * th) * c * (T::one() + three * k * v * v);
            g * d
        });
        self.x.accumulate_grad(dx);
    }
}

// ------------------------------------------------------------ layer norm

struct LayerNormOp<T: Scalar> {
    x: Var<T>,
    gamma: Var<T>,
    beta: Var<T>,
    xhat: Vec<T>,
    rstd: Vec<T>,
}

/// Normalize each row over the last axis, then apply `gamma`, `beta`.
pub fn layer_norm<T: Scalar>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Var<T> {
    let xv = x.value();
    let d = xv.last_dim();
    assert_eq!(gamma.value().len(), d, "layer_norm gamma width");
    let rows = xv.rows();
    let inv_d = T::one() / t::<T>(d as f64);
    let eps = t::<T>(eps);
    let mut xhat = vec![T::zero(); xv.len()];
    let mut rstd = vec![T::zero(); rows];
    let mut out = vec![T::zero(); xv.len()];
    let (gm, bt) = (gamma.value().data(), beta.value().data());
    for r in 0..rows {
        let row = xv.row(r);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gm[j] + bt[j];
        }
    }
    let op = LayerNormOp { x: x.clone(), gamma: gamma.clone(), beta: beta.clone(), xhat, rstd };
    Var::from_op(Tensor::new(xv.shape().to_vec(), out), op)
}

impl<T: Scalar> Backward<T> for LayerNormOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.x, &self.gamma, &self.beta]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        let d = self.gamma.value().len();
        let rows = self.rstd.len();
        let gm = self.gamma.value().data();
        let gd = g.data();
        if self.gamma.requires_grad() || self.beta.requires_grad() {
            let mut dg = vec![T::zero(); d];
            let mut db = vec![T::zero(); d];
            for r in 0..rows {
                for j in 0..d {
                    dg[j] = dg[j] + gd[r * d + j] * self.xhat[r * d + j];
                    db[j] = db[j] + gd[r * d + j];
                }
            }
            self.gamma.accumulate_grad(Tensor::new(self.gamma.shape().to_vec(), dg));
            self.beta.accumulate_grad(Tensor::new(self.beta.shape().to_vec(), db));
        }
        if self.x.requires_grad() {
            let inv_d = T::one() / t::<T>(d as f64);
            let mut dx = vec![T::zero(); rows * d];
            for r in 0..rows {
                let xh = &self.xhat[r * d..(r + 1) * d];
                let gr = &gd[r * d..(r + 1) * d];
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for j in 0..d {
                    let dh = gr[j] * gm[j];
                    m1 = m1 + dh;
                    m2 = m2 + dh * xh[j];
                }
                m1 = m1 * inv_d;
                m2 = m2 * inv_d;
                for j in 0..d {
                    let dh = gr[j] * gm[j];
                    dx[r * d + j] = self.rstd[r] * (dh - m1 - xh[j] * m2);
                }
            }
            self.x.accumulate_grad(Tensor::new(self.x.shape().to_vec(), dx));
        }
    }
}

// ------------------------------------------------------------ embedding

struct EmbeddingOp<T: Scalar> {
    table: Var<T>,
    ids: Vec<usize>,
}

/// Gather rows of `table` (`[V, d]`); output is `[ids.len(), d]`.
pub fn embedding<T: Scalar>(table: &Var<T>, ids: &[usize]) -> Var<T> {
    let tv = table.value();
    let (v, d) = (tv.shape()[0], tv.last_dim());
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        assert!(id < v, "embedding id {id} out of range {v}");
        out.extend_from_slice(tv.row(id));
    }
    Var::from_op(Tensor::new(vec![ids.len(), d], out), EmbeddingOp { table: table.clone(), ids: ids.to_vec() })
}

impl<T: Scalar> Backward<T> for EmbeddingOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.table]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        let d = self.table.value().last_dim();
        let mut gt = vec![T::zero(); self.table.value().len()];
        for (i, &id) in self.ids.iter().enumerate() {
            for (acc, &v) in gt[id * d..(id + 1) * d].iter_mut().zip(g.row(i)) {
                *acc = *acc + v;
            }
        }
        self.table.accumulate_grad(Tensor::new(self.table.shape().to_vec(), gt));
    }
}

struct EmbeddingBagOp<T: Scalar> {
    table: Var<T>,
    bags: Vec<Vec<usize>>,
}

/// Row `i` of the output is the sum of the table rows listed in `bags[i]`.
pub fn embedding_bag<T: Scalar>(table: &Var<T>, bags: &[Vec<usize>]) -> Var<T> {
    let tv = table.value();
    let (v, d) = (tv.shape()[0], tv.last_dim());
    let mut out = vec![T::zero(); bags.len() * d];
    for (i, bag) in bags.iter().enumerate() {
        for &id in bag {
            assert!(id < v, "embedding_bag id {id} out of range {v}");
            for (o, &x) in out[i * d..(i + 1) * d].iter_mut().zip(tv.row(id)) {
                *o = *o + x;
            }
        }
    }
    Var::from_op(Tensor::new(vec![bags.len(), d], out), EmbeddingBagOp { table: table.clone(), bags: bags.to_vec() })
}

impl<T: Scalar> Backward<T> for EmbeddingBagOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.table]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        let d = self.table.value().last_dim();
        let mut gt = vec![T::zero(); self.table.value().len()];
        for (i, bag) in self.bags.iter().enumerate() {
            for &id in bag {
                for (acc, &v) in gt[id * d..(id + 1) * d].iter_mut().zip(g.row(i)) {
                    *acc = *acc + v;
                }
            }
        }
        self.table.accumulate_grad(Tensor::new(self.table.shape().to_vec(), gt));
    }
}

// ------------------------------------------------------------ attention

struct AttentionOp<T: Scalar> {
    q: Var<T>,
    k: Var<T>,
    v: Var<T>,
    heads: usize,
    probs: Vec<T>,
}

/// Multi-head scaled dot-product attention on already-projected inputs.
///
/// `q` is `[B, Lq, D]`, `k` and `v` are `[B, Lk, D]`; heads split `D`.
/// With `causal`, position `i` only attends to keys `j <= i`.
pub fn attention<T: Scalar>(q: &Var<T>, k: &Var<T>, v: &Var<T>, heads: usize, causal: bool) -> Var<T> {
    let (qv, kv, vv) = (q.value(), k.value(), v.value());
    assert_eq!(qv.shape().len(), 3, "attention expects [B, L, D] queries");
    let (b, lq, dm) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
    let lk = kv.shape()[1];
    assert_eq!(kv.shape(), &[b, lk, dm], "attention key shape");
    assert_eq!(vv.shape(), &[b, lk, dm], "attention value shape");
    assert!(heads > 0 && dm % heads == 0, "width {dm} not divisible by {heads} heads");
    assert!(!causal || lq == lk, "causal attention needs square scores");
    let dk = dm / heads;
    let scale = T::one() / t::<T>(dk as f64).sqrt();
    let mut probs = vec![T::zero(); b * heads * lq * lk];
    let mut out = vec![T::zero(); b * lq * dm];
    for bi in 0..b {
        let qb = &qv.data()[bi * lq * dm..];
        let kb = &kv.data()[bi * lk * dm..];
        let vb = &vv.data()[bi * lk * dm..];
        for h in 0..heads {
            let p = &mut probs[(bi * heads + h) * lq * lk..(bi * heads + h + 1) * lq * lk];
            gemm(lq, dk, lk, scale, &qb[h * dk..], dm, 1, &kb[h * dk..], 1, dm, T::zero(), p, lk, 1);
            for i in 0..lq {
                let row = &mut p[i * lk..(i + 1) * lk];
                let valid = if causal { i + 1 } else { lk };
                let mx = row[..valid].iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for x in row[..valid].iter_mut() {
                    *x = (*x - mx).exp();
                    sum = sum + *x;
                }
                for x in row[..valid].iter_mut() {
                    *x = *x / sum;
                }
                for x in row[valid..].iter_mut() {
                    *x = T::zero();
                }
            }
            let ob = &mut out[bi * lq * dm + h * dk..];
            gemm(lq, lk, dk, T::one(), p, lk, 1, &vb[h * dk..], dm, 1, T::zero(), ob, dm, 1);
        }
    }
    let op = AttentionOp { q: q.clone(), k: k.clone(), v: v.clone(), heads, probs };
    Var::from_op(Tensor::new(vec![b, lq, dm], out), op)
}

impl<T: Scalar> Backward<T> for AttentionOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.q, &self.k, &self.v]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        let (qv, kv, vv) = (self.q.value(), self.k.value(), self.v.value());
        let (b, lq, dm) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
        let lk = kv.shape()[1];
        let heads = self.heads;
        let dk = dm / heads;
        let scale = T::one() / t::<T>(dk as f64).sqrt();
        let mut dq = vec![T::zero(); qv.len()];
        let mut dkk = vec![T::zero(); kv.len()];
        let mut dv = vec![T::zero(); vv.len()];
        let mut ds = vec![T::zero(); lq * lk];
        for bi in 0..b {
            let qo = bi * lq * dm;
            let ko = bi * lk * dm;
            for h in 0..heads {
                let p = &self.probs[(bi * heads + h) * lq * lk..(bi * heads + h + 1) * lq * lk];
                let go = &g.data()[qo + h * dk..];
                if self.v.requires_grad() {
                    gemm(lk, lq, dk, T::one(), p, 1, lk, go, dm, 1, T::one(), &mut dv[ko + h * dk..], dm, 1);
                }
                if !(self.q.requires_grad() || self.k.requires_grad()) {
                    continue;
                }
                // dP = dO V^T, then softmax backward in place.
                gemm(lq, dk, lk, T::one(), go, dm, 1, &vv.data()[ko + h * dk..], 1, dm, T::zero(), &mut ds, lk, 1);
                for i in 0..lq {
                    let pr = &p[i * lk..(i + 1) * lk];
                    let dr = &mut ds[i * lk..(i + 1) * lk];
                    let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                    for (d, &pp) in dr.iter_mut().zip(pr) {
                        *d = pp * (*d - dot);
                    }
                }
                if self.q.requires_grad() {
                    gemm(lq, lk, dk, scale, &ds, lk, 1, &kv.data()[ko + h * dk..], dm, 1, T::one(), &mut dq[qo + h * dk..], dm, 1);
                }
                if self.k.requires_grad() {
                    gemm(lk, lq, dk, scale, &ds, 1, lk, &qv.data()[qo + h * dk..], dm, 1, T::one(), &mut dkk[ko + h * dk..], dm, 1);
                }
            }
        }
        self.q.accumulate_grad(Tensor::new(qv.shape().to_vec(), dq));
        self.k.accumulate_grad(Tensor::new(kv.shape().to_vec(), dkk));
        self.v.accumulate_grad(Tensor::new(vv.shape().to_vec(), dv));
    }
}

// ------------------------------------------------------------ losses

struct CrossEntropyOp<T: Scalar> {
    logits: Var<T>,
    targets: Vec<Option<usize>>,
    probs: Vec<T>,
    count: usize,
}

/// Mean token negative log-likelihood over rows whose target is `Some`.
pub fn cross_entropy<T: Scalar>(logits: &Var<T>, targets: &[Option<usize>]) -> Var<T> {
    let lv = logits.value();
    let v = lv.last_dim();
    assert_eq!(lv.rows(), targets.len(), "cross_entropy: {} rows vs {} targets", lv.rows(), targets.len());
    let mut probs = vec![T::zero(); lv.len()];
    let mut total = T::zero();
    let mut count = 0;
    for (r, tgt) in targets.iter().enumerate() {
        let row = lv.row(r);
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (p, &x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
            *p = (x - mx).exp();
            sum = sum + *p;
        }
        for p in probs[r * v..(r + 1) * v].iter_mut() {
            *p = *p / sum;
        }
        if let Some(id) = *tgt {
            assert!(id < v, "target {id} outside vocabulary {v}");
            total = total + (mx + sum.ln() - row[id]);
            count += 1;
        }
    }
    let mean = if count > 0 { total / t::<T>(count as f64) } else { T::zero() };
    let op = CrossEntropyOp { logits: logits.clone(), targets: targets.to_vec(), probs, count };
    Var::from_op(Tensor::scalar(mean), op)
}

impl<T: Scalar> Backward<T> for CrossEntropyOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.logits]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        if self.count == 0 {
            return;
        }
        let v = self.logits.value().last_dim();
        let w = g.item() / t::<T>(self.count as f64);
        let mut dl = vec![T::zero(); self.probs.len()];
        for (r, tgt) in self.targets.iter().enumerate() {
            let Some(id) = *tgt else { continue };
            for j in 0..v {
                dl[r * v + j] = self.probs[r * v + j] * w;
            }
            dl[r * v + id] = dl[r * v + id] - w;
        }
        self.logits.accumulate_grad(Tensor::new(self.logits.shape().to_vec(), dl));
    }
}

struct MseOp<T: Scalar> {
    a: Var<T>,
    b: Var<T>,
}

/// Mean of squared differences over all elements.
pub fn mse<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    assert_eq!(a.shape(), b.shape(), "mse shape mismatch");
    let n = t::<T>(a.value().len() as f64);
    let s: T = a.value().data().iter().zip(b.value().data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Var::from_op(Tensor::scalar(s / n), MseOp { a: a.clone(), b: b.clone() })
}

impl<T: Scalar> Backward<T> for MseOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        let c = t::<T>(2.0) * g.item() / t::<T>(self.a.value().len() as f64);
        let diff = self.a.value().zip_map(self.b.value(), |x, y| (x - y) * c);
        if self.b.requires_grad() {
            self.b.accumulate_grad(diff.scale(-T::one()));
        }
        self.a.accumulate_grad(diff);
    }
}

struct SumOp<T: Scalar> {
    x: Var<T>,
}

pub fn sum<T: Scalar>(x: &Var<T>) -> Var<T> {
    Var::from_op(Tensor::scalar(x.value().sum()), SumOp { x: x.clone() })
}

impl<T: Scalar> Backward<T> for SumOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        self.x.accumulate_grad(Tensor::full(self.x.shape().to_vec(), g.item()));
    }
}

// ------------------------------------------------------------ standardize

struct StandardizeOp<T: Scalar> {
    x: Var<T>,
    inv_scale: Vec<T>,
    zero_rows: Vec<bool>,
}

/// `(x - mean) * inv_scale` per column, with rows flagged in `zero_rows`
/// replaced by exact zeros. Statistics are constants.
pub fn standardize_rows<T: Scalar>(x: &Var<T>, mean: &[T], inv_scale: &[T], zero_rows: &[bool]) -> Var<T> {
    let xv = x.value();
    let d = xv.last_dim();
    assert_eq!(mean.len(), d, "standardize mean width");
    assert_eq!(inv_scale.len(), d, "standardize scale width");
    assert_eq!(zero_rows.len(), xv.rows(), "standardize mask length");
    let mut out = vec![T::zero(); xv.len()];
    for (r, &z) in zero_rows.iter().enumerate() {
        if z {
            continue;
        }
        for (j, (o, &v)) in out[r * d..(r + 1) * d].iter_mut().zip(xv.row(r)).enumerate() {
            *o = (v - mean[j]) * inv_scale[j];
        }
    }
    let op = StandardizeOp { x: x.clone(), inv_scale: inv_scale.to_vec(), zero_rows: zero_rows.to_vec() };
    Var::from_op(Tensor::new(xv.shape().to_vec(), out), op)
}

impl<T: Scalar> Backward<T> for StandardizeOp<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &Tensor<T>, g: &Tensor<T>) {
        let d = self.inv_scale.len();
        let mut dx = vec![T::zero(); g.len()];
        for (r, &z) in self.zero_rows.iter().enumerate() {
            if z {
                continue;
            }
            for j in 0..d {
                dx[r * d + j] = g.data()[r * d + j] * self.inv_scale[j];
            }
        }
        self.x.accumulate_grad(Tensor::new(self.x.shape().to_vec(), dx));
    }
}
