use super::{NdError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// The closed primitive set. Anything richer is composed from these.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// out = a + b (same shape)
    Add { a: usize, b: usize },
    /// out = a ⊙ b (same shape)
    Mul { a: usize, b: usize },
    /// out = a @ b, a: n×k, b: k×m
    MatMul { a: usize, b: usize },
    /// out = x @ w + bias (bias broadcast over rows), x: n×k, w: k×m, bias: 1×m
    Affine { x: usize, w: usize, bias: usize },
    /// out = tanh(a)
    Tanh { a: usize },
    /// out = sum of all elements (scalar, shape [1])
    SumAll { a: usize },
    /// out[i] = mask[i] != 0 ? a[i] : b[i]; mask is a recorded constant
    Where { mask: Tensor, a: usize, b: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::MatMul { .. } => "matmul",
            Op::Affine { .. } => "affine",
            Op::Tanh { .. } => "tanh",
            Op::SumAll { .. } => "sum_all",
            Op::Where { .. } => "where",
        }
    }
}

/// Wengert tape: records primitive ops eagerly during the forward pass,
/// then walks them in strict reverse order to accumulate adjoints.
///
/// A tape is confined to one logical thread; parallelism happens across
/// independent tapes.
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { ops: Vec::new(), values: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Gradient of the last `backward*` call with respect to `v`, if any
    /// adjoint reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::from_vec(self.values[v.0].shape().to_vec(), g.clone())
                .expect("adjoint matches value shape")
        })
    }

    /// Gradient of the last `backward*` call, zero-filled when no adjoint
    /// reached `v`.
    pub fn grad_or_zero(&self, v: Var) -> Tensor {
        self.grad(v).unwrap_or_else(|| Tensor::zeros(self.values[v.0].shape().to_vec()))
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var, NdError> {
        if !value.all_finite() {
            return Err(NdError::NonFinite { op: op.name(), index: self.ops.len() });
        }
        let id = self.ops.len();
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(None);
        Ok(Var(id))
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<Var, NdError> {
        self.push(Op::Leaf, value)
    }

    /// Leaf holding a constant; same recording, named for intent at call sites.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, NdError> {
        self.push(Op::Leaf, value)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NdError> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(NdError::Shape(format!(
                "{}: shape {:?} vs {:?}",
                what,
                self.values[a.0].shape(),
                self.values[b.0].shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.values[a.0].shape().to_vec(), out)?;
        self.push(Op::Add { a: a.0, b: b.0 }, t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.same_shape(a, b, "mul")?;
        let out: Vec<f64> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.values[a.0].shape().to_vec(), out)?;
        self.push(Op::Mul { a: a.0, b: b.0 }, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (n, k) = self.values[a.0].dims2()?;
        let (k2, m) = self.values[b.0].dims2()?;
        if k != k2 {
            return Err(NdError::Shape(format!("matmul: {}x{} @ {}x{}", n, k, k2, m)));
        }
        let out = matmul_raw(self.values[a.0].data(), self.values[b.0].data(), n, k, m);
        let t = Tensor::from_vec(vec![n, m], out)?;
        self.push(Op::MatMul { a: a.0, b: b.0 }, t)
    }

    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var, NdError> {
        let (n, k) = self.values[x.0].dims2()?;
        let (k2, m) = self.values[w.0].dims2()?;
        let (br, bm) = self.values[bias.0].dims2()?;
        if k != k2 || br != 1 || bm != m {
            return Err(NdError::Shape(format!(
                "affine: x {}x{}, w {}x{}, bias {}x{}",
                n, k, k2, m, br, bm
            )));
        }
        let mut out = matmul_raw(self.values[x.0].data(), self.values[w.0].data(), n, k, m);
        let bias_row = self.values[bias.0].data();
        for row in out.chunks_mut(m) {
            for (o, b) in row.iter_mut().zip(bias_row) {
                *o += b;
            }
        }
        let t = Tensor::from_vec(vec![n, m], out)?;
        self.push(Op::Affine { x: x.0, w: w.0, bias: bias.0 }, t)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NdError> {
        let out: Vec<f64> = self.values[a.0].data().iter().map(|x| x.tanh()).collect();
        let t = Tensor::from_vec(self.values[a.0].shape().to_vec(), out)?;
        self.push(Op::Tanh { a: a.0 }, t)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NdError> {
        let s: f64 = self.values[a.0].data().iter().sum();
        self.push(Op::SumAll { a: a.0 }, Tensor::scalar(s))
    }

    /// Elementwise select by a constant mask: `mask != 0 ? a : b`.
    pub fn where_mask(&mut self, mask: &Tensor, a: Var, b: Var) -> Result<Var, NdError> {
        self.same_shape(a, b, "where")?;
        if mask.shape() != self.values[a.0].shape() {
            return Err(NdError::Shape(format!(
                "where: mask {:?} vs operand {:?}",
                mask.shape(),
                self.values[a.0].shape()
            )));
        }
        let out: Vec<f64> = mask
            .data()
            .iter()
            .zip(self.values[a.0].data().iter().zip(self.values[b.0].data()))
            .map(|(m, (x, y))| if *m != 0.0 { *x } else { *y })
            .collect();
        let t = Tensor::from_vec(mask.shape().to_vec(), out)?;
        self.push(Op::Where { mask: mask.clone(), a: a.0, b: b.0 }, t)
    }

    // -- composites ------------------------------------------------------

    /// a * k for a constant scalar k.
    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, NdError> {
        let c = self.constant(Tensor::full(self.values[a.0].shape().to_vec(), k))?;
        self.mul(a, c)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    // -- reverse pass ----------------------------------------------------

    /// Backward from a scalar output, seeding with 1.
    pub fn backward(&mut self, out: Var) -> Result<(), NdError> {
        if self.values[out.0].len() != 1 {
            return Err(NdError::Shape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.values[out.0].shape()
            )));
        }
        let seed = Tensor::scalar(1.0);
        self.backward_seeded(out, &seed)
    }

    /// Backward from any output with an explicit cotangent of the same shape.
    pub fn backward_seeded(&mut self, out: Var, cotangent: &Tensor) -> Result<(), NdError> {
        if cotangent.shape() != self.values[out.0].shape() {
            return Err(NdError::Shape(format!(
                "cotangent shape {:?} vs output {:?}",
                cotangent.shape(),
                self.values[out.0].shape()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[out.0] = Some(cotangent.data().to_vec());

        for i in (0..self.ops.len()).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NdError::NonFinite { op: self.ops[i].name(), index: i });
            }
            match self.ops[i].clone() {
                Op::Leaf => {
                    self.grads[i] = Some(g);
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                    self.grads[i] = Some(g);
                }
                Op::Mul { a, b } => {
                    let ga: Vec<f64> =
                        g.iter().zip(self.values[b].data()).map(|(g, y)| g * y).collect();
                    let gb: Vec<f64> =
                        g.iter().zip(self.values[a].data()).map(|(g, x)| g * x).collect();
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                    self.grads[i] = Some(g);
                }
                Op::MatMul { a, b } => {
                    self.backprop_matmul(a, b, &g);
                    self.grads[i] = Some(g);
                }
                Op::Affine { x, w, bias } => {
                    self.backprop_matmul(x, w, &g);
                    let (_, m) = self.values[i].dims2().expect("affine output is rank 2");
                    let mut gb = vec![0.0; m];
                    for row in g.chunks(m) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(bias, &gb);
                    self.grads[i] = Some(g);
                }
                Op::Tanh { a } => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.values[i].data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    self.accumulate(a, &ga);
                    self.grads[i] = Some(g);
                }
                Op::SumAll { a } => {
                    let ga = vec![g[0]; self.values[a].len()];
                    self.accumulate(a, &ga);
                    self.grads[i] = Some(g);
                }
                Op::Where { mask, a, b } => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(mask.data())
                        .map(|(g, m)| if *m != 0.0 { *g } else { 0.0 })
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(mask.data())
                        .map(|(g, m)| if *m != 0.0 { 0.0 } else { *g })
                        .collect();
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                    self.grads[i] = Some(g);
                }
            }
        }
        Ok(())
    }

    /// da = g @ wᵀ, dw = xᵀ @ g for out = x @ w (+ bias).
    fn backprop_matmul(&mut self, x: usize, w: usize, g: &[f64]) {
        let (n, k) = self.values[x].dims2().expect("matmul input is rank 2");
        let (_, m) = self.values[w].dims2().expect("matmul weight is rank 2");
        let wv = self.values[w].data();
        let xv = self.values[x].data();

        let mut gx = vec![0.0; n * k];
        for i in 0..n {
            let grow = &g[i * m..(i + 1) * m];
            let gxrow = &mut gx[i * k..(i + 1) * k];
            for (kk, gxv) in gxrow.iter_mut().enumerate() {
                let wrow = &wv[kk * m..(kk + 1) * m];
                let mut acc = 0.0;
                for j in 0..m {
                    acc += grow[j] * wrow[j];
                }
                *gxv = acc;
            }
        }

        let mut gw = vec![0.0; k * m];
        for i in 0..n {
            let grow = &g[i * m..(i + 1) * m];
            let xrow = &xv[i * k..(i + 1) * k];
            for (kk, xval) in xrow.iter().enumerate() {
                let gwrow = &mut gw[kk * m..(kk + 1) * m];
                for j in 0..m {
                    gwrow[j] += xval * grow[j];
                }
            }
        }

        self.accumulate(x, &gx);
        self.accumulate(w, &gw);
    }

    fn accumulate(&mut self, target: usize, g: &[f64]) {
        match &mut self.grads[target] {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => self.grads[target] = Some(g.to_vec()),
        }
    }

    /// Recompute every node value from the leaves, in recording order.
    /// Used to check that replay reproduces the recorded values bit-exactly.
    pub fn replay_forward(&self) -> Vec<Tensor> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.values.len());
        for (i, op) in self.ops.iter().enumerate() {
            let v = match op {
                Op::Leaf => self.values[i].clone(),
                Op::Add { a, b } => {
                    let out: Vec<f64> =
                        vals[*a].data().iter().zip(vals[*b].data()).map(|(x, y)| x + y).collect();
                    Tensor::from_vec(vals[*a].shape().to_vec(), out).expect("replay add")
                }
                Op::Mul { a, b } => {
                    let out: Vec<f64> =
                        vals[*a].data().iter().zip(vals[*b].data()).map(|(x, y)| x * y).collect();
                    Tensor::from_vec(vals[*a].shape().to_vec(), out).expect("replay mul")
                }
                Op::MatMul { a, b } => {
                    let (n, k) = vals[*a].dims2().expect("replay matmul");
                    let (_, m) = vals[*b].dims2().expect("replay matmul");
                    let out = matmul_raw(vals[*a].data(), vals[*b].data(), n, k, m);
                    Tensor::from_vec(vec![n, m], out).expect("replay matmul")
                }
                Op::Affine { x, w, bias } => {
                    let (n, k) = vals[*x].dims2().expect("replay affine");
                    let (_, m) = vals[*w].dims2().expect("replay affine");
                    let mut out = matmul_raw(vals[*x].data(), vals[*w].data(), n, k, m);
                    for row in out.chunks_mut(m) {
                        for (o, b) in row.iter_mut().zip(vals[*bias].data()) {
                            *o += b;
                        }
                    }
                    Tensor::from_vec(vec![n, m], out).expect("replay affine")
                }
                Op::Tanh { a } => {
                    let out: Vec<f64> = vals[*a].data().iter().map(|x| x.tanh()).collect();
                    Tensor::from_vec(vals[*a].shape().to_vec(), out).expect("replay tanh")
                }
                Op::SumAll { a } => Tensor::scalar(vals[*a].data().iter().sum()),
                Op::Where { mask, a, b } => {
                    let out: Vec<f64> = mask
                        .data()
                        .iter()
                        .zip(vals[*a].data().iter().zip(vals[*b].data()))
                        .map(|(m, (x, y))| if *m != 0.0 { *x } else { *y })
                        .collect();
                    Tensor::from_vec(mask.shape().to_vec(), out).expect("replay where")
                }
            };
            vals.push(v);
        }
        vals
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (kk, av) in arow.iter().enumerate() {
            let brow = &b[kk * m..(kk + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}
